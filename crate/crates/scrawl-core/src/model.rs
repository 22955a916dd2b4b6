//! Model container (architecture + output head + parameters) and the
//! versioned JSON checkpoint format.
//!
//! Checkpoint layout (format version 1): a single JSON object with
//! `version`, the `arch` block, the `head` block (softmax vocabulary, or
//! mixture count plus normalization stats and transcript alphabet), the
//! flat parameter vector as base64 of little-endian f64 bytes, and the
//! optional optimizer state in the same encoding. Base64-of-bytes makes the
//! parameter round trip bit-exact by construction.

use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::data::{Alphabet, NormStats};
use crate::error::{Error, Result};
use crate::lstm::{Architecture, ParamStore};
use crate::mdn;
use crate::softmax::Vocab;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Output-distribution head attached to the stack.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Head {
    /// Categorical next-symbol distribution over a vocabulary.
    Softmax { vocab: Vocab },
    /// Bivariate Gaussian mixture + Bernoulli end-of-stroke. Synthesis
    /// models also carry the transcript alphabet.
    Mdn {
        components: usize,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        norm: Option<NormStats>,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        alphabet: Option<Alphabet>,
    },
}

impl Head {
    pub fn output_len(&self) -> usize {
        match self {
            Head::Softmax { vocab } => vocab.size(),
            Head::Mdn { components, .. } => mdn::output_len(*components),
        }
    }

    pub fn input_len(&self) -> usize {
        match self {
            Head::Softmax { vocab } => vocab.size(),
            Head::Mdn { .. } => 3,
        }
    }
}

/// A complete sequence model: wiring, head, and the flat parameter vector.
#[derive(Clone, Debug)]
pub struct Model {
    pub arch: Architecture,
    pub head: Head,
    pub params: ParamStore,
}

impl Model {
    /// Random initialisation; validates that the architecture's input and
    /// output widths agree with the head.
    pub fn init(arch: Architecture, head: Head, seed: u64, scale: f64) -> Result<Model> {
        check_compat(&arch, &head)?;
        let params = ParamStore::init(arch.clone(), seed, scale)?;
        Ok(Model { arch, head, params })
    }

    pub fn from_params(head: Head, params: ParamStore) -> Result<Model> {
        check_compat(params.arch(), &head)?;
        Ok(Model {
            arch: params.arch().clone(),
            head,
            params,
        })
    }
}

fn check_compat(arch: &Architecture, head: &Head) -> Result<()> {
    if arch.output_size != head.output_len() {
        return Err(Error::InvalidArgument(format!(
            "architecture outputs {} values but the head needs {}",
            arch.output_size,
            head.output_len()
        )));
    }
    if arch.input_size != head.input_len() {
        return Err(Error::InvalidArgument(format!(
            "architecture reads {} inputs but the head implies {}",
            arch.input_size,
            head.input_len()
        )));
    }
    if let Head::Mdn {
        alphabet: Some(a), ..
    } = head
    {
        match &arch.window {
            Some(w) if w.alphabet_size == a.size() => {}
            Some(w) => {
                return Err(Error::InvalidArgument(format!(
                    "window alphabet {} does not match head alphabet {}",
                    w.alphabet_size,
                    a.size()
                )))
            }
            None => {
                return Err(Error::InvalidArgument(
                    "head carries an alphabet but the architecture has no window".into(),
                ))
            }
        }
    }
    Ok(())
}

/// Serialized optimizer state, kind-tagged; vectors use the same base64
/// encoding as the parameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerStateSer {
    Rmsprop { n: String, g: String, delta: String },
    Momentum { velocity: String },
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    arch: Architecture,
    head: Head,
    params_le_f64_b64: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    optimizer: Option<OptimizerStateSer>,
}

pub fn encode_f64s(values: &[f64]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    B64.encode(bytes)
}

pub fn decode_f64s(text: &str) -> Result<Vec<f64>> {
    let bytes = B64
        .decode(text)
        .map_err(|e| Error::Checkpoint(format!("bad base64: {}", e)))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Checkpoint(format!(
            "parameter payload of {} bytes is not a multiple of 8",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn save_checkpoint(
    path: &Path,
    model: &Model,
    optimizer: Option<&OptimizerStateSer>,
) -> Result<()> {
    let file = CheckpointFile {
        version: CHECKPOINT_VERSION,
        arch: model.arch.clone(),
        head: model.head.clone(),
        params_le_f64_b64: encode_f64s(model.params.values()),
        optimizer: optimizer.cloned(),
    };
    let json = serde_json::to_string(&file)?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, Option<OptimizerStateSer>)> {
    let text = std::fs::read_to_string(path)?;
    let mut file: CheckpointFile = serde_json::from_str(&text)?;
    if file.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {} (expected {})",
            file.version, CHECKPOINT_VERSION
        )));
    }
    if let Head::Softmax { vocab } = &mut file.head {
        vocab.rebuild_index();
    }
    let values = decode_f64s(&file.params_le_f64_b64)?;
    let mut params = ParamStore::zeros(file.arch.clone())?;
    if values.len() != params.len() {
        return Err(Error::Checkpoint(format!(
            "{} parameters in file, architecture needs {}",
            values.len(),
            params.len()
        )));
    }
    params.set_values(&values)?;
    let model = Model::from_params(file.head, params)?;
    Ok((model, file.optimizer))
}
