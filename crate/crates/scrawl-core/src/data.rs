//! Corpus and stroke-data ingestion: vocabulary construction, text encoding,
//! the JSON-lines stroke format, offset normalization, transcript alphabets,
//! and the deterministic toy glyph corpus used as a desk-scale stand-in for
//! a real handwriting database.
//!
//! Stroke files are JSON lines, one sequence per line:
//! `{"text": "...", "strokes": [[dx, dy, eos], ...]}` with eos ∈ {0, 1}.
//! Absolute-coordinate recordings add `"absolute": true` and are differenced
//! on load. Oversized steps (recording glitches) are repaired by linear
//! interpolation between their neighbours when a threshold is configured.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::Rng;
use crate::softmax::{Token, Vocab};
use crate::window::CharSeq;

/// One pen trajectory: (Δx, Δy, end-of-stroke) triples plus an optional
/// transcript.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrokeSeq {
    pub points: Vec<[f64; 3]>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub text: Option<String>,
}

impl StrokeSeq {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Offset mean/std over a training split; eos is never touched.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: [f64; 2],
    pub std: [f64; 2],
}

const STD_FLOOR: f64 = 1e-6;

impl NormStats {
    /// Stats over the training split only; callers apply them to every split
    /// so nothing leaks out of validation or test data.
    pub fn compute(train: &[StrokeSeq]) -> Result<NormStats> {
        let mut n = 0usize;
        let mut sum = [0.0f64; 2];
        for seq in train {
            for p in &seq.points {
                sum[0] += p[0];
                sum[1] += p[1];
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::InvalidArgument("empty dataset for normalization".into()));
        }
        let mean = [sum[0] / n as f64, sum[1] / n as f64];
        let mut var = [0.0f64; 2];
        for seq in train {
            for p in &seq.points {
                var[0] += (p[0] - mean[0]) * (p[0] - mean[0]);
                var[1] += (p[1] - mean[1]) * (p[1] - mean[1]);
            }
        }
        let std = [
            (var[0] / n as f64).sqrt().max(STD_FLOOR),
            (var[1] / n as f64).sqrt().max(STD_FLOOR),
        ];
        Ok(NormStats { mean, std })
    }

    pub fn normalize_point(&self, p: [f64; 3]) -> [f64; 3] {
        [
            (p[0] - self.mean[0]) / self.std[0],
            (p[1] - self.mean[1]) / self.std[1],
            p[2],
        ]
    }

    pub fn denormalize_point(&self, p: [f64; 3]) -> [f64; 3] {
        [
            p[0] * self.std[0] + self.mean[0],
            p[1] * self.std[1] + self.mean[1],
            p[2],
        ]
    }

    pub fn apply(&self, seqs: &mut [StrokeSeq]) {
        for seq in seqs {
            for p in seq.points.iter_mut() {
                *p = self.normalize_point(*p);
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Byte,
    Char,
    Word,
}

impl std::str::FromStr for Granularity {
    type Err = Error;
    fn from_str(s: &str) -> Result<Granularity> {
        match s {
            "byte" => Ok(Granularity::Byte),
            "char" => Ok(Granularity::Char),
            "word" => Ok(Granularity::Word),
            other => Err(Error::Config(format!("unknown granularity '{}'", other))),
        }
    }
}

/// Index lists into a dataset, one split per field. Written and read as
/// plain text manifests, one index per line.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SplitManifest {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

impl SplitManifest {
    /// Deterministic tail split: the last ceil(n·val_fraction) items go to
    /// validation.
    pub fn tail_fraction(n: usize, val_fraction: f64) -> SplitManifest {
        let n_val = ((n as f64 * val_fraction).ceil() as usize).min(n);
        SplitManifest {
            train: (0..n - n_val).collect(),
            val: (n - n_val..n).collect(),
        }
    }

    pub fn read_indices(path: &Path) -> Result<Vec<usize>> {
        let text = fs::read_to_string(path)?;
        let mut out = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            out.push(line.parse::<usize>().map_err(|_| Error::Format {
                path: path.display().to_string(),
                line: lineno + 1,
                msg: format!("not an index: '{}'", line),
            })?);
        }
        Ok(out)
    }

    pub fn write_indices(path: &Path, indices: &[usize]) -> Result<()> {
        let mut text = String::new();
        for i in indices {
            text.push_str(&i.to_string());
            text.push('\n');
        }
        fs::write(path, text)?;
        Ok(())
    }
}

/// A tokenised text corpus: the continuous index stream chunked into
/// training sequences, its vocabulary, and the train/validation split.
#[derive(Clone, Debug)]
pub struct TextCorpus {
    pub sequences: Vec<Vec<usize>>,
    pub vocab: Vocab,
    pub splits: SplitManifest,
}

impl TextCorpus {
    pub fn train_sequences(&self) -> Vec<Vec<usize>> {
        self.splits.train.iter().map(|&i| self.sequences[i].clone()).collect()
    }

    pub fn val_sequences(&self) -> Vec<Vec<usize>> {
        self.splits.val.iter().map(|&i| self.sequences[i].clone()).collect()
    }
}

fn tokenize(raw: &[u8], granularity: Granularity, path: &str) -> Result<Vec<Token>> {
    match granularity {
        Granularity::Byte => Ok(raw.iter().map(|&b| Token::Byte(b)).collect()),
        Granularity::Char => {
            let text = std::str::from_utf8(raw).map_err(|e| Error::Format {
                path: path.to_string(),
                line: 0,
                msg: format!("char-mode input is not valid UTF-8: {}", e),
            })?;
            Ok(text.chars().map(Token::Char).collect())
        }
        Granularity::Word => {
            let text = std::str::from_utf8(raw).map_err(|e| Error::Format {
                path: path.to_string(),
                line: 0,
                msg: format!("word-mode input is not valid UTF-8: {}", e),
            })?;
            Ok(text
                .split_whitespace()
                .map(|w| Token::Word(w.to_string()))
                .collect())
        }
    }
}

/// Deterministic vocabulary over a token stream, ordered by frequency
/// (descending) then first appearance. Word mode caps the vocabulary at
/// `limit` and maps the overflow to an unknown token.
pub fn build_vocab(tokens: &[Token], limit: Option<usize>) -> Result<Vocab> {
    let mut counts: HashMap<&Token, (usize, usize)> = HashMap::new();
    for (pos, tok) in tokens.iter().enumerate() {
        let e = counts.entry(tok).or_insert((0, pos));
        e.0 += 1;
    }
    let mut ordered: Vec<(&Token, usize, usize)> =
        counts.into_iter().map(|(t, (c, first))| (t, c, first)).collect();
    ordered.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));

    let truncated = limit.map(|l| ordered.len() > l).unwrap_or(false);
    if let Some(l) = limit {
        ordered.truncate(l);
    }
    let mut symbols: Vec<Token> = ordered.into_iter().map(|(t, _, _)| t.clone()).collect();
    let unknown = if truncated {
        symbols.push(Token::Word("<unk>".into()));
        Some(symbols.len() - 1)
    } else {
        None
    };
    Vocab::new(symbols, unknown)
}

/// Loads a plain text corpus, tokenises it at the requested granularity,
/// builds the vocabulary, chunks the index stream into sequences of
/// `seq_len`, and splits off a validation tail.
pub fn load_text_corpus(
    path: &Path,
    granularity: Granularity,
    vocab_limit: Option<usize>,
    seq_len: usize,
    val_fraction: f64,
) -> Result<TextCorpus> {
    let raw = fs::read(path)?;
    if raw.is_empty() {
        return Err(Error::Format {
            path: path.display().to_string(),
            line: 0,
            msg: "empty corpus".into(),
        });
    }
    let tokens = tokenize(&raw, granularity, &path.display().to_string())?;
    corpus_from_tokens(&tokens, vocab_limit, seq_len, val_fraction)
}

pub fn corpus_from_tokens(
    tokens: &[Token],
    vocab_limit: Option<usize>,
    seq_len: usize,
    val_fraction: f64,
) -> Result<TextCorpus> {
    if tokens.is_empty() {
        return Err(Error::InvalidArgument("empty token stream".into()));
    }
    if seq_len == 0 {
        return Err(Error::InvalidArgument("seq_len must be >= 1".into()));
    }
    let vocab = build_vocab(tokens, vocab_limit)?;
    let indices: Vec<usize> = tokens
        .iter()
        .map(|t| vocab.lookup(t).expect("token built into vocab"))
        .collect();
    let sequences: Vec<Vec<usize>> = indices.chunks(seq_len).map(|c| c.to_vec()).collect();
    let splits = SplitManifest::tail_fraction(sequences.len(), val_fraction);
    Ok(TextCorpus {
        sequences,
        vocab,
        splits,
    })
}

#[derive(Deserialize)]
struct StrokeLine {
    #[serde(default)]
    text: Option<String>,
    strokes: Vec<[f64; 3]>,
    #[serde(default)]
    absolute: bool,
}

/// Loads the JSON-lines stroke format. `step_threshold`, when set, repairs
/// offsets whose length exceeds it by interpolating between neighbours.
pub fn load_strokes(path: &Path, step_threshold: Option<f64>) -> Result<Vec<StrokeSeq>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parsed: StrokeLine = serde_json::from_str(line).map_err(|e| Error::Format {
            path: path.display().to_string(),
            line: lineno + 1,
            msg: e.to_string(),
        })?;
        let seq = stroke_line_to_seq(parsed, step_threshold).map_err(|msg| Error::Format {
            path: path.display().to_string(),
            line: lineno + 1,
            msg,
        })?;
        out.push(seq);
    }
    if out.is_empty() {
        return Err(Error::Format {
            path: path.display().to_string(),
            line: 0,
            msg: "no stroke sequences".into(),
        });
    }
    Ok(out)
}

fn stroke_line_to_seq(
    parsed: StrokeLine,
    step_threshold: Option<f64>,
) -> std::result::Result<StrokeSeq, String> {
    for (i, p) in parsed.strokes.iter().enumerate() {
        if !(p[0].is_finite() && p[1].is_finite()) {
            return Err(format!("non-finite offset at point {}", i));
        }
        if p[2] != 0.0 && p[2] != 1.0 {
            return Err(format!("eos at point {} is {}, must be 0 or 1", i, p[2]));
        }
    }
    let mut points = if parsed.absolute {
        if parsed.strokes.len() < 2 {
            return Err("absolute sequences need at least 2 points".into());
        }
        parsed
            .strokes
            .windows(2)
            .map(|w| [w[1][0] - w[0][0], w[1][1] - w[0][1], w[1][2]])
            .collect()
    } else {
        parsed.strokes
    };
    if points.is_empty() {
        return Err("empty stroke sequence".into());
    }
    if let Some(threshold) = step_threshold {
        repair_oversized_steps(&mut points, threshold);
    }
    Ok(StrokeSeq {
        points,
        text: parsed.text,
    })
}

/// Recording-glitch repair: any offset longer than `threshold` is replaced
/// by the average of its in-range neighbours (or the single neighbour at a
/// boundary). eos flags are preserved.
pub fn repair_oversized_steps(points: &mut [[f64; 3]], threshold: f64) {
    let oversized: Vec<bool> = points
        .iter()
        .map(|p| (p[0] * p[0] + p[1] * p[1]).sqrt() > threshold)
        .collect();
    let originals: Vec<[f64; 3]> = points.to_vec();
    for i in 0..points.len() {
        if !oversized[i] {
            continue;
        }
        let prev = (0..i).rev().find(|&j| !oversized[j]).map(|j| originals[j]);
        let next = (i + 1..points.len()).find(|&j| !oversized[j]).map(|j| originals[j]);
        let repaired = match (prev, next) {
            (Some(a), Some(b)) => [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0],
            (Some(a), None) => [a[0], a[1]],
            (None, Some(b)) => [b[0], b[1]],
            (None, None) => [0.0, 0.0],
        };
        points[i][0] = repaired[0];
        points[i][1] = repaired[1];
    }
}

/// One sequence as a line of the JSON-lines stroke format.
pub fn stroke_line_json(seq: &StrokeSeq) -> Result<String> {
    #[derive(Serialize)]
    struct Line<'a> {
        #[serde(skip_serializing_if = "Option::is_none")]
        text: &'a Option<String>,
        strokes: &'a Vec<[f64; 3]>,
    }
    Ok(serde_json::to_string(&Line {
        text: &seq.text,
        strokes: &seq.points,
    })?)
}

pub fn write_strokes(path: &Path, seqs: &[StrokeSeq]) -> Result<()> {
    let mut text = String::new();
    for seq in seqs {
        text.push_str(&stroke_line_json(seq)?);
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

/// Character alphabet for synthesis transcripts. Index 0 is always the
/// generic non-letter label; every character outside the kept set encodes
/// to it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alphabet {
    keep: Vec<char>,
}

impl Alphabet {
    pub fn new(chars: impl IntoIterator<Item = char>) -> Alphabet {
        let mut keep = Vec::new();
        for c in chars {
            if !keep.contains(&c) {
                keep.push(c);
            }
        }
        Alphabet { keep }
    }

    /// Alphabet of every alphabetic character and space seen in the
    /// transcripts, in code-point order; digits and punctuation collapse to
    /// the non-letter label.
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Alphabet {
        let mut set: Vec<char> = Vec::new();
        for t in texts {
            for c in t.chars() {
                if (c.is_alphabetic() || c == ' ') && !set.contains(&c) {
                    set.push(c);
                }
            }
        }
        set.sort_unstable();
        Alphabet { keep: set }
    }

    /// Alphabet width including the non-letter slot.
    pub fn size(&self) -> usize {
        self.keep.len() + 1
    }

    pub fn index_of(&self, c: char) -> usize {
        self.keep.iter().position(|&k| k == c).map(|i| i + 1).unwrap_or(0)
    }

    pub fn char_at(&self, idx: usize) -> Option<char> {
        if idx == 0 {
            None
        } else {
            self.keep.get(idx - 1).copied()
        }
    }

    /// One-hot encoding of a transcript; rejects empty text (the window
    /// needs U ≥ 1).
    pub fn encode(&self, text: &str) -> Result<CharSeq> {
        CharSeq::new(text.chars().map(|c| self.index_of(c)).collect(), self.size())
    }
}

/// The deterministic toy glyph corpus: each symbol has a fixed stroke motif
/// of `motif_len` points ending in a pen lift; sequences are concatenated
/// motifs plus Gaussian jitter on the offsets.
pub struct ToyGlyphCorpus {
    pub sequences: Vec<StrokeSeq>,
    pub alphabet: Alphabet,
    pub symbols: Vec<char>,
    pub motifs: Vec<Vec<[f64; 3]>>,
    pub motif_len: usize,
}

pub fn make_toy_glyph_corpus(
    n_symbols: usize,
    motif_len: usize,
    n_sequences: usize,
    noise_std: f64,
    seed: u64,
) -> Result<ToyGlyphCorpus> {
    if !(2..=26).contains(&n_symbols) {
        return Err(Error::InvalidArgument(format!(
            "toy corpus needs 2..=26 symbols, got {}",
            n_symbols
        )));
    }
    if motif_len == 0 {
        return Err(Error::InvalidArgument("motif_len must be >= 1".into()));
    }
    let symbols: Vec<char> = (0..n_symbols).map(|i| (b'a' + i as u8) as char).collect();
    let mut rng = Rng::seed_from(seed);

    let motifs: Vec<Vec<[f64; 3]>> = (0..n_symbols)
        .map(|_| {
            (0..motif_len)
                .map(|i| {
                    let eos = if i + 1 == motif_len { 1.0 } else { 0.0 };
                    [rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), eos]
                })
                .collect()
        })
        .collect();

    let mut sequences = Vec::with_capacity(n_sequences);
    for _ in 0..n_sequences {
        let len = 3 + (rng.next_f64() * 6.0) as usize; // transcripts of 3..=8 symbols
        let mut text = String::with_capacity(len);
        let mut points = Vec::with_capacity(len * motif_len);
        for _ in 0..len {
            let s = (rng.next_f64() * n_symbols as f64) as usize;
            text.push(symbols[s]);
            for p in &motifs[s] {
                points.push([
                    p[0] + noise_std * rng.standard_normal(),
                    p[1] + noise_std * rng.standard_normal(),
                    p[2],
                ]);
            }
        }
        sequences.push(StrokeSeq {
            points,
            text: Some(text),
        });
    }

    Ok(ToyGlyphCorpus {
        sequences,
        alphabet: Alphabet::new(symbols.iter().copied()),
        symbols,
        motifs,
        motif_len,
    })
}
