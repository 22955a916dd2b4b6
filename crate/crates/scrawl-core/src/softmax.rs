//! Categorical output head for text: loss and gradient of the softmax
//! next-symbol distribution, plus the language-model metrics reported on it.
//! Losses accumulate in nats; conversion to bits happens only at reporting.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{logsumexp, softmax_stable};

/// A text symbol at one of the three supported granularities.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Token {
    Byte(u8),
    Char(char),
    Word(String),
}

impl Token {
    pub fn render(&self) -> String {
        match self {
            Token::Byte(b) => String::from_utf8_lossy(&[*b]).into_owned(),
            Token::Char(c) => c.to_string(),
            Token::Word(w) => w.clone(),
        }
    }
}

/// Ordered symbol inventory with its reverse map. Indices and symbols are in
/// bijection except for the optional unknown bucket, which absorbs every
/// out-of-vocabulary word.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Vocab {
    symbols: Vec<Token>,
    #[serde(skip)]
    index: HashMap<Token, usize>,
    unknown: Option<usize>,
}

impl Vocab {
    pub fn new(symbols: Vec<Token>, unknown: Option<usize>) -> Result<Vocab> {
        if symbols.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "vocabulary needs at least 2 symbols, got {}",
                symbols.len()
            )));
        }
        if let Some(u) = unknown {
            if u >= symbols.len() {
                return Err(Error::InvalidArgument(format!(
                    "unknown index {} out of range {}",
                    u,
                    symbols.len()
                )));
            }
        }
        let mut index = HashMap::with_capacity(symbols.len());
        for (i, s) in symbols.iter().enumerate() {
            if index.insert(s.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "duplicate symbol at index {}",
                    i
                )));
            }
        }
        Ok(Vocab {
            symbols,
            index,
            unknown,
        })
    }

    /// Rebuilds the reverse map after deserialisation.
    pub fn rebuild_index(&mut self) {
        self.index = self
            .symbols
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
    }

    pub fn size(&self) -> usize {
        self.symbols.len()
    }

    pub fn unknown(&self) -> Option<usize> {
        self.unknown
    }

    pub fn symbols(&self) -> &[Token] {
        &self.symbols
    }

    pub fn token(&self, idx: usize) -> &Token {
        &self.symbols[idx]
    }

    /// Index of a token; out-of-vocabulary tokens land in the unknown bucket
    /// when one exists.
    pub fn lookup(&self, token: &Token) -> Option<usize> {
        self.index.get(token).copied().or(self.unknown)
    }

    pub fn decode_bytes(&self, indices: &[usize]) -> Vec<u8> {
        let mut out = Vec::new();
        for &i in indices {
            match &self.symbols[i] {
                Token::Byte(b) => out.push(*b),
                Token::Char(c) => {
                    let mut buf = [0u8; 4];
                    out.extend_from_slice(c.encode_utf8(&mut buf).as_bytes());
                }
                Token::Word(w) => {
                    if !out.is_empty() {
                        out.push(b' ');
                    }
                    out.extend_from_slice(w.as_bytes());
                }
            }
        }
        out
    }

    pub fn decode_string(&self, indices: &[usize]) -> String {
        String::from_utf8_lossy(&self.decode_bytes(indices)).into_owned()
    }
}

/// Cross-entropy of one prediction step, in nats, together with the exact
/// output-derivative softmax(ŷ) − onehot(target).
pub fn text_step_loss(yhat: &[f64], target: usize) -> (f64, Vec<f64>) {
    debug_assert!(target < yhat.len());
    let loss = logsumexp(yhat) - yhat[target];
    let mut dyhat = softmax_stable(yhat);
    dyhat[target] -= 1.0;
    (loss, dyhat)
}

/// Log-probability lookup without the gradient, for evaluation passes.
pub fn text_step_nll(yhat: &[f64], target: usize) -> f64 {
    logsumexp(yhat) - yhat[target]
}

/// Mean −log₂ probability per symbol.
pub fn bpc(total_loss_nats: f64, n_symbols: usize) -> f64 {
    assert!(n_symbols > 0, "bpc over zero symbols");
    total_loss_nats / (n_symbols as f64 * std::f64::consts::LN_2)
}

/// Word-level perplexity implied by a bits-per-character figure:
/// 2^(avg_word_len · bpc).
pub fn bpc_to_perplexity(bpc: f64, avg_word_len: f64) -> f64 {
    (avg_word_len * bpc).exp2()
}

/// Fraction of steps (as a percentage) where argmax(ŷ) misses the target.
/// Ties resolve to the lowest index.
pub fn classification_error(yhat_seq: &[Vec<f64>], targets: &[usize]) -> f64 {
    assert_eq!(yhat_seq.len(), targets.len());
    if targets.is_empty() {
        return 0.0;
    }
    let mut wrong = 0usize;
    for (yhat, &target) in yhat_seq.iter().zip(targets.iter()) {
        let mut best = 0;
        for (k, &v) in yhat.iter().enumerate() {
            if v > yhat[best] {
                best = k;
            }
        }
        if best != target {
            wrong += 1;
        }
    }
    100.0 * wrong as f64 / targets.len() as f64
}
