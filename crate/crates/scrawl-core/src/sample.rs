//! Generation loops: free-running text and handwriting sampling, conditioned
//! synthesis with the φ(t, U+1) stop heuristic, and primed variants that
//! clamp the inputs to a real sequence before free-running.
//!
//! Every run owns a private state copy and draws from its own seeded RNG;
//! the checkpoint is never mutated. Stroke outputs are de-normalized through
//! the model's stored offset statistics; the values fed back into the
//! network stay in normalized space.

use crate::data::{NormStats, StrokeSeq};
use crate::error::{Error, Result};
use crate::lstm::{fresh_states, lstm_cell_step, output_forward, CellInputs, LayerState};
use crate::mdn;
use crate::model::{Head, Model};
use crate::numkit::{softmax_stable, Rng};
use crate::softmax::Token;
use crate::window::{fresh_synth_state, stop_check, synth_step};

/// How a synthesis run decides it is finished.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopMode {
    /// Stop when the window weight past the last character exceeds every
    /// in-text weight.
    Heuristic,
    /// Ignore the window and run to `max_steps`.
    FixedLength,
}

#[derive(Clone, Debug)]
pub struct SampleConfig {
    /// Hard cap on generated steps; a heuristic run that hits it is flagged
    /// truncated rather than silently cut.
    pub max_steps: usize,
    pub bias: f64,
    pub seed: u64,
    pub stop_mode: StopMode,
}

impl SampleConfig {
    /// Default cap for a text of U characters: generous multiple of the
    /// expected steps-per-character plus slack.
    pub fn default_max_steps(u_len: usize) -> usize {
        60 * u_len + 300
    }

    pub fn new(seed: u64) -> SampleConfig {
        SampleConfig {
            max_steps: 700,
            bias: 0.0,
            seed,
            stop_mode: StopMode::Heuristic,
        }
    }
}

fn one_hot(size: usize, idx: Option<usize>) -> Vec<f64> {
    let mut v = vec![0.0; size];
    if let Some(i) = idx {
        v[i] = 1.0;
    }
    v
}

/// One prediction-stack step without caching, for generation.
fn stack_step(model: &Model, x: &[f64], states: &mut [LayerState]) -> Result<Vec<f64>> {
    let n_layers = model.arch.num_layers();
    let mut hs: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
    for n in 0..n_layers {
        let below = if n == 0 { None } else { Some(hs[n - 1].clone()) };
        let cache = lstm_cell_step(
            &model.params,
            n,
            CellInputs {
                x,
                below: below.as_deref(),
                window: None,
            },
            &mut states[n],
        )?;
        hs.push(cache.h);
    }
    let refs: Vec<&[f64]> = hs.iter().map(|h| &h[..]).collect();
    Ok(output_forward(&model.params, &refs))
}

/// Generates exactly `length` symbols, optionally primed with clamped text.
/// `greedy` takes the argmax at each step instead of sampling.
pub fn sample_text(
    model: &Model,
    length: usize,
    seed: u64,
    prime_text: Option<&str>,
    greedy: bool,
) -> Result<Vec<usize>> {
    let vocab = match &model.head {
        Head::Softmax { vocab } => vocab,
        Head::Mdn { .. } => {
            return Err(Error::InvalidArgument(
                "text sampling needs a softmax checkpoint".into(),
            ))
        }
    };
    let k = vocab.size();
    let mut rng = Rng::seed_from(seed);
    let mut states = fresh_states(&model.arch);

    // x₁ is the null vector; every later input is the previous symbol
    let mut yhat = stack_step(model, &one_hot(k, None), &mut states)?;

    if let Some(text) = prime_text {
        for idx in encode_prime(vocab, text)? {
            yhat = stack_step(model, &one_hot(k, Some(idx)), &mut states)?;
        }
    }

    let mut out = Vec::with_capacity(length);
    for _ in 0..length {
        let idx = if greedy {
            argmax(&yhat)
        } else {
            rng.sample_categorical(&softmax_stable(&yhat))?
        };
        out.push(idx);
        if out.len() == length {
            break;
        }
        yhat = stack_step(model, &one_hot(k, Some(idx)), &mut states)?;
    }
    Ok(out)
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Encodes prime text at the vocabulary's own granularity.
fn encode_prime(vocab: &crate::softmax::Vocab, text: &str) -> Result<Vec<usize>> {
    let tokens: Vec<Token> = match vocab.symbols().first() {
        Some(Token::Byte(_)) => text.bytes().map(Token::Byte).collect(),
        Some(Token::Char(_)) => text.chars().map(Token::Char).collect(),
        Some(Token::Word(_)) => text.split_whitespace().map(|w| Token::Word(w.into())).collect(),
        None => return Err(Error::InvalidArgument("empty vocabulary".into())),
    };
    tokens
        .iter()
        .map(|t| {
            vocab.lookup(t).ok_or_else(|| {
                Error::InvalidArgument(format!("prime symbol {:?} not in vocabulary", t))
            })
        })
        .collect()
}

fn mdn_setup(model: &Model) -> Result<(usize, NormStats)> {
    match &model.head {
        Head::Mdn {
            components, norm, ..
        } => Ok((
            *components,
            norm.clone().unwrap_or(NormStats {
                mean: [0.0, 0.0],
                std: [1.0, 1.0],
            }),
        )),
        Head::Softmax { .. } => Err(Error::InvalidArgument(
            "stroke sampling needs a mixture-density checkpoint".into(),
        )),
    }
}

/// Free-running handwriting generation for a fixed number of steps. Offsets
/// are de-normalized in the output; the fed-back inputs stay normalized.
pub fn sample_handwriting(model: &Model, steps: usize, seed: u64, bias: f64) -> Result<StrokeSeq> {
    let (components, norm) = mdn_setup(model)?;
    let mut rng = Rng::seed_from(seed);
    let mut states = fresh_states(&model.arch);
    let mut x = vec![0.0; 3];
    let mut points = Vec::with_capacity(steps);
    for _ in 0..steps {
        let yhat = stack_step(model, &x, &mut states)?;
        let mix = mdn::apply_bias(&yhat, components, bias)?;
        let sample = mdn::mdn_sample(&mix, &mut rng)?;
        points.push(norm.denormalize_point(sample));
        x = sample.to_vec();
    }
    Ok(StrokeSeq { points, text: None })
}

/// A synthesis run: the generated strokes, the full φ trace (one row per
/// network step, U+1 columns), and whether the run hit the step cap instead
/// of stopping on its own.
pub struct SynthOutput {
    pub strokes: StrokeSeq,
    pub phi: Vec<Vec<f64>>,
    pub truncated: bool,
}

/// Text-conditioned generation with the stop heuristic.
pub fn synth_sample(model: &Model, text: &str, cfg: &SampleConfig) -> Result<SynthOutput> {
    primed_sample(model, None, text, cfg)
}

/// Priming: the character sequence becomes prime_text + synth_text and the
/// network inputs are clamped to the prime strokes (in raw offset space) for
/// their duration, predictions during priming discarded; free-running with
/// the stop heuristic follows.
pub fn primed_sample(
    model: &Model,
    prime: Option<(&StrokeSeq, &str)>,
    synth_text: &str,
    cfg: &SampleConfig,
) -> Result<SynthOutput> {
    let (components, norm) = mdn_setup(model)?;
    let alphabet = match &model.head {
        Head::Mdn {
            alphabet: Some(a), ..
        } => a,
        _ => {
            return Err(Error::InvalidArgument(
                "synthesis sampling needs a checkpoint with a transcript alphabet".into(),
            ))
        }
    };
    if cfg.bias < 0.0 {
        return Err(Error::InvalidArgument("bias must be >= 0".into()));
    }

    let chars = match prime {
        Some((_, prime_text)) => alphabet
            .encode(prime_text)?
            .concat(&alphabet.encode(synth_text)?)?,
        None => alphabet.encode(synth_text)?,
    };

    let mut rng = Rng::seed_from(cfg.seed);
    let mut state = fresh_synth_state(&model.params);
    let mut phi_trace = Vec::new();
    let mut points = Vec::new();
    let mut truncated = true;

    // clamped inputs first (normalized), then the free-running feed
    let clamped: Vec<Vec<f64>> = prime
        .map(|(seq, _)| {
            seq.points
                .iter()
                .map(|p| norm.normalize_point(*p).to_vec())
                .collect()
        })
        .unwrap_or_default();

    let mut x = vec![0.0; 3];
    let mut fed = 0usize; // clamped inputs consumed
    for _ in 0..cfg.max_steps + clamped.len() {
        let (yhat, cache) = synth_step(&model.params, &x, &chars, &mut state)?;
        phi_trace.push(cache.win.phi.clone());

        if fed < clamped.len() {
            // priming: advance state on the real sequence, discard prediction
            x = clamped[fed].clone();
            fed += 1;
            continue;
        }

        if cfg.stop_mode == StopMode::Heuristic && stop_check(&cache.win.phi) {
            truncated = false;
            break;
        }

        let mix = mdn::apply_bias(&yhat, components, cfg.bias)?;
        let sample = mdn::mdn_sample(&mix, &mut rng)?;
        points.push(norm.denormalize_point(sample));
        x = sample.to_vec();
    }

    Ok(SynthOutput {
        strokes: StrokeSeq {
            points,
            text: Some(synth_text.to_string()),
        },
        phi: phi_trace,
        truncated,
    })
}

/// Dense φ-trace container written by the sampler and consumed by the
/// window heatmap: row-major, one row per timestep, U+1 columns.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct PhiTrace {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl PhiTrace {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<PhiTrace> {
        let cols = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidArgument("ragged phi trace".into()));
        }
        Ok(PhiTrace {
            rows: rows.len(),
            cols,
            values: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn to_rows(&self) -> Result<Vec<Vec<f64>>> {
        if self.values.len() != self.rows * self.cols {
            return Err(Error::InvalidArgument(format!(
                "phi trace claims {}x{} but holds {} values",
                self.rows,
                self.cols,
                self.values.len()
            )));
        }
        Ok(self.values.chunks(self.cols).map(|c| c.to_vec()).collect())
    }
}
