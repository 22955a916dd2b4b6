//! Deep LSTM sequence generation: next-step prediction with a softmax or
//! mixture-density head, text-conditioned handwriting synthesis through a
//! soft Gaussian attention window, training with hand-derived full BPTT,
//! sampling, evaluation, and SVG rendering. All arithmetic is f64 and every
//! analytic gradient is covered by finite-difference oracles in the test
//! suites.

pub mod data;
pub mod error;
pub mod lstm;
pub mod mdn;
pub mod model;
pub mod numkit;
pub mod render;
pub mod sample;
pub mod softmax;
pub mod train;
pub mod window;

pub use data::{Alphabet, NormStats, StrokeSeq};
pub use error::{Error, Result};
pub use lstm::{Architecture, LayerState, ParamStore};
pub use mdn::MixtureOut;
pub use model::{Head, Model};
pub use numkit::Rng;
pub use sample::{SampleConfig, StopMode};
pub use softmax::Vocab;
pub use train::{TrainConfig, TrainData};
pub use window::CharSeq;
