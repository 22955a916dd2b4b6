//! Optimizers, regularization, and the training/evaluation loops.
//!
//! Training is one stochastic update per sequence. Hidden and cell states
//! carry across consecutive text sequences and are reset every
//! `reset_period` sequences; gradient flow always truncates at sequence
//! boundaries. Output derivatives are clipped first (at the head), then the
//! LSTM pre-activation derivatives inside BPTT. Weight noise, when enabled,
//! perturbs the weights for each sequence's gradient computation and is
//! removed before the update touches the clean weights. A non-finite loss
//! aborts training loudly, keeping the best checkpoint so far.
//!
//! Stroke and synthesis sequences are independent lines; their states never
//! carry across sequences regardless of `reset_period`.

use std::path::PathBuf;

use serde::Serialize;

use crate::data::{Granularity, StrokeSeq};
use crate::error::{Error, Result};
use crate::lstm::{
    fresh_states, stack_backward, stack_forward, LayerState, ParamStore, StackForward,
};
use crate::mdn;
use crate::model::{Head, Model, OptimizerStateSer};
use crate::numkit::Rng;
use crate::softmax::{bpc, text_step_loss, text_step_nll};
use crate::window::{synth_backward, synth_forward, CharSeq};

/// The rmsprop constants.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RmspropHyper {
    /// Decay of the running first/second gradient moments.
    pub avg_decay: f64,
    /// Momentum on the update buffer.
    pub momentum: f64,
    pub lr: f64,
    /// Radicand regularizer keeping the divisor away from zero.
    pub eps: f64,
}

impl Default for RmspropHyper {
    fn default() -> Self {
        RmspropHyper {
            avg_decay: 0.95,
            momentum: 0.9,
            lr: 1e-4,
            eps: 1e-4,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RmspropState {
    pub n: Vec<f64>,
    pub g: Vec<f64>,
    pub delta: Vec<f64>,
}

impl RmspropState {
    pub fn zeros(len: usize) -> RmspropState {
        RmspropState {
            n: vec![0.0; len],
            g: vec![0.0; len],
            delta: vec![0.0; len],
        }
    }
}

/// One rmsprop update. Per weight, in exactly this order: the running
/// second and first moments decay towards ε² and ε, the momentum buffer
/// takes a step of −lr·ε/√(n − g² + eps), and the weight adds the buffer.
/// Dividing by the centred second moment normalizes each step by the
/// recent gradient magnitude.
pub fn rmsprop_step(
    params: &mut ParamStore,
    grads: &[f64],
    state: &mut RmspropState,
    h: &RmspropHyper,
) -> Result<()> {
    if grads.len() != params.len() || state.n.len() != params.len() {
        return Err(Error::shape(
            "rmsprop_step",
            format!("{} grads / {} state for {} params", grads.len(), state.n.len(), params.len()),
        ));
    }
    let w = params.values_mut();
    for i in 0..grads.len() {
        let eps = grads[i];
        state.n[i] = h.avg_decay * state.n[i] + (1.0 - h.avg_decay) * eps * eps;
        state.g[i] = h.avg_decay * state.g[i] + (1.0 - h.avg_decay) * eps;
        let radicand = state.n[i] - state.g[i] * state.g[i] + h.eps;
        if radicand <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "rmsprop radicand {} at weight {} (n={}, g={})",
                radicand, i, state.n[i], state.g[i]
            )));
        }
        state.delta[i] = h.momentum * state.delta[i] - h.lr * eps / radicand.sqrt();
        w[i] += state.delta[i];
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct MomentumState {
    pub velocity: Vec<f64>,
}

impl MomentumState {
    pub fn zeros(len: usize) -> MomentumState {
        MomentumState {
            velocity: vec![0.0; len],
        }
    }
}

/// v ← momentum·v − lr·ε; w ← w + v.
pub fn sgd_momentum_step(
    params: &mut ParamStore,
    grads: &[f64],
    state: &mut MomentumState,
    lr: f64,
    momentum: f64,
) -> Result<()> {
    if grads.len() != params.len() || state.velocity.len() != params.len() {
        return Err(Error::shape(
            "sgd_momentum_step",
            format!("{} grads for {} params", grads.len(), params.len()),
        ));
    }
    let w = params.values_mut();
    for i in 0..grads.len() {
        state.velocity[i] = momentum * state.velocity[i] - lr * grads[i];
        w[i] += state.velocity[i];
    }
    Ok(())
}

pub fn clip_elementwise(v: &mut [f64], lo: f64, hi: f64) {
    debug_assert!(lo <= hi);
    for x in v.iter_mut() {
        *x = x.clamp(lo, hi);
    }
}

/// Gaussian weight noise with an exact restore handle. The clean weights are
/// copied out before perturbation; `restore` puts them back bit for bit.
pub struct NoiseGuard {
    clean: Vec<f64>,
}

pub fn perturb_weights(params: &mut ParamStore, std: f64, rng: &mut Rng) -> NoiseGuard {
    let clean = params.values().to_vec();
    if std > 0.0 {
        for v in params.values_mut() {
            *v += std * rng.standard_normal();
        }
    }
    NoiseGuard { clean }
}

impl NoiseGuard {
    pub fn restore(self, params: &mut ParamStore) {
        params.values_mut().copy_from_slice(&self.clean);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum OptimizerKind {
    Rmsprop(RmspropHyper),
    Momentum { lr: f64, momentum: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Rmsprop(RmspropHyper::default())
    }
}

#[derive(Clone, Debug)]
pub enum Optimizer {
    Rmsprop {
        hyper: RmspropHyper,
        state: RmspropState,
    },
    Momentum {
        lr: f64,
        momentum: f64,
        state: MomentumState,
    },
}

impl Optimizer {
    pub fn new(kind: &OptimizerKind, len: usize) -> Optimizer {
        match kind {
            OptimizerKind::Rmsprop(h) => Optimizer::Rmsprop {
                hyper: *h,
                state: RmspropState::zeros(len),
            },
            OptimizerKind::Momentum { lr, momentum } => Optimizer::Momentum {
                lr: *lr,
                momentum: *momentum,
                state: MomentumState::zeros(len),
            },
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &[f64]) -> Result<()> {
        match self {
            Optimizer::Rmsprop { hyper, state } => rmsprop_step(params, grads, state, hyper),
            Optimizer::Momentum {
                lr,
                momentum,
                state,
            } => sgd_momentum_step(params, grads, state, *lr, *momentum),
        }
    }

    pub fn to_ser(&self) -> OptimizerStateSer {
        match self {
            Optimizer::Rmsprop { state, .. } => OptimizerStateSer::Rmsprop {
                n: crate::model::encode_f64s(&state.n),
                g: crate::model::encode_f64s(&state.g),
                delta: crate::model::encode_f64s(&state.delta),
            },
            Optimizer::Momentum { state, .. } => OptimizerStateSer::Momentum {
                velocity: crate::model::encode_f64s(&state.velocity),
            },
        }
    }
}

/// Training knobs. Clip values are half-widths: `lstm_clip: Some(10.0)`
/// clips pre-activation derivatives to [−10, 10].
#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub lstm_clip: Option<f64>,
    pub output_clip: Option<f64>,
    pub weight_noise_std: f64,
    /// Sequences between state resets; None carries state forever.
    pub reset_period: Option<usize>,
    pub shuffle: bool,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub max_seqs_per_epoch: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: OptimizerKind::default(),
            lstm_clip: Some(10.0),
            output_clip: Some(100.0),
            weight_noise_std: 0.0,
            reset_period: Some(100),
            shuffle: false,
            epochs: 5,
            patience: 3,
            seed: 42,
            max_seqs_per_epoch: None,
        }
    }
}

impl TrainConfig {
    pub fn lstm_clip_range(&self) -> Option<(f64, f64)> {
        self.lstm_clip.map(|c| (-c, c))
    }
}

/// Prepared training data, one variant per task.
pub enum TrainData {
    /// Chunked index stream; state and the previous symbol carry across
    /// consecutive chunks.
    Text {
        train: Vec<Vec<usize>>,
        val: Vec<Vec<usize>>,
    },
    /// Independent normalized pen trajectories.
    Strokes {
        train: Vec<StrokeSeq>,
        val: Vec<StrokeSeq>,
    },
    /// Independent (trajectory, transcript) pairs for the synthesis network.
    Synthesis {
        train: Vec<(StrokeSeq, CharSeq)>,
        val: Vec<(StrokeSeq, CharSeq)>,
    },
}

impl TrainData {
    fn train_len(&self) -> usize {
        match self {
            TrainData::Text { train, .. } => train.len(),
            TrainData::Strokes { train, .. } => train.len(),
            TrainData::Synthesis { train, .. } => train.len(),
        }
    }
}

/// Carried context between consecutive text sequences.
#[derive(Clone, Debug)]
pub struct TextCarry {
    pub states: Vec<LayerState>,
    pub prev: Option<usize>,
}

impl TextCarry {
    pub fn fresh(params: &ParamStore) -> TextCarry {
        TextCarry {
            states: fresh_states(params.arch()),
            prev: None,
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

/// Model inputs for one text chunk: the previous symbol at each position,
/// with the carried symbol (or the null vector at a fresh start) first.
pub fn text_inputs(vocab_size: usize, tokens: &[usize], prev: Option<usize>) -> Vec<Vec<f64>> {
    let mut inputs = Vec::with_capacity(tokens.len());
    for (t, _) in tokens.iter().enumerate() {
        let src = if t == 0 { prev } else { Some(tokens[t - 1]) };
        inputs.push(one_hot(vocab_size, src));
    }
    inputs
}

/// Model inputs for a stroke sequence: the null triple, then every point
/// but the last. An empty sequence has no prediction steps at all.
pub fn stroke_inputs(points: &[[f64; 3]]) -> Vec<Vec<f64>> {
    if points.is_empty() {
        return Vec::new();
    }
    let mut inputs = Vec::with_capacity(points.len());
    inputs.push(vec![0.0; 3]);
    for p in &points[..points.len() - 1] {
        inputs.push(p.to_vec());
    }
    inputs
}

/// Forward + loss of one text chunk. Returns the forward record (for
/// backward), total nats, and the per-step output derivatives.
pub fn text_sequence_loss(
    params: &ParamStore,
    tokens: &[usize],
    carry: &TextCarry,
) -> Result<(StackForward, f64, Vec<Vec<f64>>)> {
    let vocab_size = params.arch().input_size;
    let inputs = text_inputs(vocab_size, tokens, carry.prev);
    let fwd = stack_forward(params, &inputs, &carry.states, None)?;
    let mut nats = 0.0;
    let mut dyhat = Vec::with_capacity(tokens.len());
    for (t, &target) in tokens.iter().enumerate() {
        let (loss, d) = text_step_loss(&fwd.yhat[t], target);
        nats += loss;
        dyhat.push(d);
    }
    Ok((fwd, nats, dyhat))
}

/// Forward + loss of one stroke sequence through the MDN head.
pub fn stroke_sequence_loss(
    params: &ParamStore,
    components: usize,
    points: &[[f64; 3]],
) -> Result<(StackForward, f64, Vec<Vec<f64>>)> {
    let inputs = stroke_inputs(points);
    let init = fresh_states(params.arch());
    let fwd = stack_forward(params, &inputs, &init, None)?;
    let mut nats = 0.0;
    let mut dyhat = Vec::with_capacity(points.len());
    for (t, p) in points.iter().enumerate() {
        let mix = mdn::split_outputs(&fwd.yhat[t], components)?;
        let (loss, cache) = mdn::mdn_step_loss(&mix, *p);
        nats += loss;
        dyhat.push(mdn::mdn_backward(&mix, &cache, *p));
    }
    Ok((fwd, nats, dyhat))
}

/// Forward + loss of one synthesis pair.
pub fn synth_sequence_loss(
    params: &ParamStore,
    components: usize,
    points: &[[f64; 3]],
    chars: &CharSeq,
) -> Result<(crate::window::SynthForward, f64, Vec<Vec<f64>>)> {
    let inputs = stroke_inputs(points);
    let fwd = synth_forward(params, &inputs, chars)?;
    let mut nats = 0.0;
    let mut dyhat = Vec::with_capacity(points.len());
    for (t, p) in points.iter().enumerate() {
        let mix = mdn::split_outputs(&fwd.yhat[t], components)?;
        let (loss, cache) = mdn::mdn_step_loss(&mix, *p);
        nats += loss;
        dyhat.push(mdn::mdn_backward(&mix, &cache, *p));
    }
    Ok((fwd, nats, dyhat))
}

fn clip_dyhat(dyhat: &mut [Vec<f64>], clip: Option<f64>) {
    if let Some(c) = clip {
        for d in dyhat.iter_mut() {
            clip_elementwise(d, -c, c);
        }
    }
}

/// Per-epoch training record, emitted as one JSON object per epoch.
#[derive(Clone, Debug, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean training loss per predicted unit (symbol or point), nats.
    pub train_loss: f64,
    /// Mean validation loss per predicted unit, nats.
    pub val_loss: f64,
    /// Mean validation loss per sequence, nats (the per-line figure for
    /// stroke tasks).
    pub val_loss_per_seq: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_bpc: Option<f64>,
    pub train_seqs: usize,
    /// Wall-clock seconds; never serialized so that emitted metric traces
    /// are bit-reproducible under a fixed seed.
    #[serde(skip)]
    pub elapsed_s: f64,
}

pub struct TrainOutcome {
    pub metrics: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
    /// Set when a non-finite loss aborted training. The model keeps the best
    /// weights observed before the abort.
    pub aborted: Option<String>,
}

/// Trains in place: one optimizer update per sequence, validation after each
/// epoch, early stopping on the validation loss. On return the model holds
/// the best-validation weights. `on_epoch` fires after every epoch with the
/// current (end-of-epoch) weights.
pub fn train_loop(
    model: &mut Model,
    data: &TrainData,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&Model, &Optimizer, &EpochMetrics) -> Result<()>,
) -> Result<TrainOutcome> {
    let components = match &model.head {
        Head::Mdn { components, .. } => *components,
        Head::Softmax { .. } => 0,
    };
    match (&model.head, data) {
        (Head::Softmax { .. }, TrainData::Text { .. }) => {}
        (Head::Mdn { .. }, TrainData::Strokes { .. }) => {}
        (Head::Mdn { .. }, TrainData::Synthesis { .. }) => {}
        _ => {
            return Err(Error::InvalidArgument(
                "model head does not match the training data kind".into(),
            ))
        }
    }

    let mut optimizer = Optimizer::new(&cfg.optimizer, model.params.len());
    let mut rng = Rng::seed_from(cfg.seed);
    let mut metrics = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut best_params = model.params.values().to_vec();
    let mut bad_epochs = 0usize;
    let mut stopped_early = false;
    let mut aborted = None;

    'epochs: for epoch in 1..=cfg.epochs {
        let started = std::time::Instant::now();
        let mut order: Vec<usize> = (0..data.train_len()).collect();
        if cfg.shuffle {
            // Fisher–Yates with the run RNG so the trace stays seeded
            for i in (1..order.len()).rev() {
                let j = (rng.next_f64() * (i + 1) as f64) as usize;
                order.swap(i, j);
            }
        }
        if let Some(cap) = cfg.max_seqs_per_epoch {
            order.truncate(cap);
        }

        let mut carry = TextCarry::fresh(&model.params);
        let mut since_reset = 0usize;
        let mut train_nats = 0.0;
        let mut train_units = 0usize;

        for (seq_no, &idx) in order.iter().enumerate() {
            if let Some(period) = cfg.reset_period {
                if since_reset == period {
                    carry = TextCarry::fresh(&model.params);
                    since_reset = 0;
                }
            }

            let guard = perturb_weights(&mut model.params, cfg.weight_noise_std, &mut rng);
            let result = run_train_sequence(model, data, idx, components, &mut carry, cfg);
            guard.restore(&mut model.params);

            let (nats, units, grads) = match result {
                Ok(v) => v,
                Err(e) => {
                    aborted = Some(format!("sequence {} of epoch {}: {}", seq_no, epoch, e));
                    break 'epochs;
                }
            };
            if !nats.is_finite() {
                aborted = Some(format!(
                    "non-finite loss on sequence {} of epoch {}",
                    seq_no, epoch
                ));
                break 'epochs;
            }
            train_nats += nats;
            train_units += units;
            optimizer.step(&mut model.params, grads.values())?;
            since_reset += 1;
        }

        let (val_nats, val_units, val_seqs) = match evaluate(model, data) {
            Ok(v) => v,
            Err(e) => {
                aborted = Some(format!("validation after epoch {}: {}", epoch, e));
                break 'epochs;
            }
        };
        if !val_nats.is_finite() {
            aborted = Some(format!("non-finite validation loss after epoch {}", epoch));
            break 'epochs;
        }
        let val_loss = val_nats / val_units.max(1) as f64;
        let val_bpc = match &model.head {
            Head::Softmax { .. } => Some(bpc(val_nats, val_units.max(1))),
            Head::Mdn { .. } => None,
        };
        let em = EpochMetrics {
            epoch,
            train_loss: train_nats / train_units.max(1) as f64,
            val_loss,
            val_loss_per_seq: val_nats / val_seqs.max(1) as f64,
            val_bpc,
            train_seqs: order.len(),
            elapsed_s: started.elapsed().as_secs_f64(),
        };
        on_epoch(model, &optimizer, &em)?;
        metrics.push(em);

        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            best_params = model.params.values().to_vec();
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs >= cfg.patience {
                stopped_early = true;
                break;
            }
        }
    }

    model.params.set_values(&best_params)?;
    Ok(TrainOutcome {
        metrics,
        best_epoch,
        best_val_loss: best_val,
        stopped_early,
        aborted,
    })
}

fn run_train_sequence(
    model: &Model,
    data: &TrainData,
    idx: usize,
    components: usize,
    carry: &mut TextCarry,
    cfg: &TrainConfig,
) -> Result<(f64, usize, ParamStore)> {
    match data {
        TrainData::Text { train, .. } => {
            let tokens = &train[idx];
            let (fwd, nats, mut dyhat) = text_sequence_loss(&model.params, tokens, carry)?;
            clip_dyhat(&mut dyhat, cfg.output_clip);
            let back = stack_backward(&model.params, &fwd.cache, &dyhat, cfg.lstm_clip_range())?;
            carry.states = fwd.final_states;
            carry.prev = tokens.last().copied();
            Ok((nats, tokens.len(), back.grads))
        }
        TrainData::Strokes { train, .. } => {
            let points = &train[idx].points;
            let (fwd, nats, mut dyhat) =
                stroke_sequence_loss(&model.params, components, points)?;
            clip_dyhat(&mut dyhat, cfg.output_clip);
            let back = stack_backward(&model.params, &fwd.cache, &dyhat, cfg.lstm_clip_range())?;
            Ok((nats, points.len(), back.grads))
        }
        TrainData::Synthesis { train, .. } => {
            let (seq, chars) = &train[idx];
            let (fwd, nats, mut dyhat) =
                synth_sequence_loss(&model.params, components, &seq.points, chars)?;
            clip_dyhat(&mut dyhat, cfg.output_clip);
            let back = synth_backward(&model.params, &fwd, chars, &dyhat, cfg.lstm_clip_range())?;
            Ok((nats, seq.points.len(), back.grads))
        }
    }
}

/// Frozen-weight validation loss: (total nats, predicted units, sequences).
/// Text chunks carry state across the whole validation stream.
pub fn evaluate(model: &Model, data: &TrainData) -> Result<(f64, usize, usize)> {
    match data {
        TrainData::Text { val, .. } => {
            let (nats, units) = eval_text(&model.params, val)?;
            Ok((nats, units, val.len()))
        }
        TrainData::Strokes { val, .. } => {
            let components = mdn_components(model)?;
            let mut nats = 0.0;
            let mut units = 0usize;
            for seq in val {
                let (_, n, _) = stroke_sequence_loss(&model.params, components, &seq.points)?;
                nats += n;
                units += seq.points.len();
            }
            Ok((nats, units, val.len()))
        }
        TrainData::Synthesis { val, .. } => {
            let components = mdn_components(model)?;
            let mut nats = 0.0;
            let mut units = 0usize;
            for (seq, chars) in val {
                let (_, n, _) =
                    synth_sequence_loss(&model.params, components, &seq.points, chars)?;
                nats += n;
                units += seq.points.len();
            }
            Ok((nats, units, val.len()))
        }
    }
}

fn mdn_components(model: &Model) -> Result<usize> {
    match &model.head {
        Head::Mdn { components, .. } => Ok(*components),
        Head::Softmax { .. } => Err(Error::InvalidArgument(
            "expected a mixture-density model".into(),
        )),
    }
}

/// Frozen-weight pass over consecutive text chunks with carried state and
/// carried previous symbol, so chunking does not change the total loss.
pub fn eval_text(params: &ParamStore, seqs: &[Vec<usize>]) -> Result<(f64, usize)> {
    let mut carry = TextCarry::fresh(params);
    let mut nats = 0.0;
    let mut units = 0usize;
    for tokens in seqs {
        let inputs = text_inputs(params.arch().input_size, tokens, carry.prev);
        let fwd = stack_forward(params, &inputs, &carry.states, None)?;
        // per-sequence subtotal, so the sum order matches the training and
        // dynamic-evaluation passes exactly
        let mut seq_nats = 0.0;
        for (t, &target) in tokens.iter().enumerate() {
            seq_nats += text_step_nll(&fwd.yhat[t], target);
        }
        nats += seq_nats;
        units += tokens.len();
        carry.states = fwd.final_states;
        carry.prev = tokens.last().copied();
    }
    Ok((nats, units))
}

pub struct DynamicEval {
    pub static_bpc: f64,
    pub dynamic_bpc: f64,
}

/// Static versus dynamic evaluation on a text stream. The dynamic pass
/// scores each sequence with the current weights, then takes one optimizer
/// step on it before moving on, so every symbol is scored before any update
/// that saw it. Both passes run on a clone; the snapshot is untouched.
pub fn dynamic_evaluate(
    model: &Model,
    seqs: &[Vec<usize>],
    optimizer: &OptimizerKind,
    cfg: &TrainConfig,
) -> Result<DynamicEval> {
    let (static_nats, units) = eval_text(&model.params, seqs)?;

    let mut dyn_model = model.clone();
    let mut opt = Optimizer::new(optimizer, dyn_model.params.len());
    let mut carry = TextCarry::fresh(&dyn_model.params);
    let mut dynamic_nats = 0.0;
    for tokens in seqs {
        let (fwd, nats, mut dyhat) = text_sequence_loss(&dyn_model.params, tokens, &carry)?;
        dynamic_nats += nats;
        clip_dyhat(&mut dyhat, cfg.output_clip);
        let back =
            stack_backward(&dyn_model.params, &fwd.cache, &dyhat, cfg.lstm_clip_range())?;
        opt.step(&mut dyn_model.params, back.grads.values())?;
        carry.states = fwd.final_states;
        carry.prev = tokens.last().copied();
    }

    Ok(DynamicEval {
        static_bpc: bpc(static_nats, units.max(1)),
        dynamic_bpc: bpc(dynamic_nats, units.max(1)),
    })
}

/// Which end-to-end task a run config describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Text,
    Handwriting,
    Synthesis,
}

impl std::str::FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Task> {
        match s {
            "text" => Ok(Task::Text),
            "handwriting" => Ok(Task::Handwriting),
            "synthesis" => Ok(Task::Synthesis),
            other => Err(Error::Config(format!("unknown task '{}'", other))),
        }
    }
}

/// Full run description parsed from a flat key=value config file. Documented
/// keys and defaults live in the README.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub task: Task,
    pub data: PathBuf,
    pub out_dir: PathBuf,
    pub granularity: Granularity,
    pub vocab_limit: Option<usize>,
    pub seq_len: usize,
    pub val_fraction: f64,
    pub val_manifest: Option<PathBuf>,
    pub layers: Vec<usize>,
    pub mixtures: usize,
    pub window_mixtures: usize,
    pub step_threshold: Option<f64>,
    pub init_scale: f64,
    /// Initial value of the window's κ̂ bias slots (synthesis only); 0 keeps
    /// the plain zero-bias initialisation.
    pub window_offset_bias: f64,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn from_file(path: &std::path::Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        parse_run_config(&text)
    }
}

pub fn parse_run_config(text: &str) -> Result<RunConfig> {
    let mut task = None;
    let mut data = None;
    let mut out_dir = PathBuf::from("runs/out");
    let mut granularity = Granularity::Char;
    let mut vocab_limit = None;
    let mut seq_len = 100usize;
    let mut val_fraction = 0.05f64;
    let mut val_manifest = None;
    let mut layers = vec![128usize];
    let mut mixtures = 20usize;
    let mut window_mixtures = 10usize;
    let mut step_threshold = None;
    let mut init_scale = 0.1f64;
    let mut window_offset_bias = 0.0f64;
    let mut train = TrainConfig::default();
    let mut opt_name = String::from("rmsprop");
    let mut lr: Option<f64> = None;
    let mut momentum = 0.99f64;
    let mut rms = RmspropHyper::default();

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected key=value, got '{}'", lineno + 1, line))
        })?;
        let key = key.trim();
        let value = value.trim();
        let bad = |what: &str| Error::Config(format!("line {}: bad {} '{}'", lineno + 1, what, value));

        match key {
            "task" => task = Some(value.parse::<Task>()?),
            "data" => data = Some(PathBuf::from(value)),
            "out_dir" => out_dir = PathBuf::from(value),
            "granularity" => granularity = value.parse()?,
            "vocab_limit" => {
                vocab_limit = match value {
                    "none" => None,
                    v => Some(v.parse().map_err(|_| bad("vocab_limit"))?),
                }
            }
            "seq_len" => seq_len = value.parse().map_err(|_| bad("seq_len"))?,
            "val_fraction" => val_fraction = value.parse().map_err(|_| bad("val_fraction"))?,
            "val_manifest" => val_manifest = Some(PathBuf::from(value)),
            "layers" => {
                layers = value
                    .split(',')
                    .map(|s| s.trim().parse::<usize>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad("layers"))?;
            }
            "mixtures" => mixtures = value.parse().map_err(|_| bad("mixtures"))?,
            "window_mixtures" => {
                window_mixtures = value.parse().map_err(|_| bad("window_mixtures"))?
            }
            "step_threshold" => {
                step_threshold = match value {
                    "none" => None,
                    v => Some(v.parse().map_err(|_| bad("step_threshold"))?),
                }
            }
            "init_scale" => init_scale = value.parse().map_err(|_| bad("init_scale"))?,
            "window_offset_bias" => {
                window_offset_bias = value.parse().map_err(|_| bad("window_offset_bias"))?
            }
            "optimizer" => opt_name = value.to_string(),
            "learning_rate" => lr = Some(value.parse().map_err(|_| bad("learning_rate"))?),
            "momentum" => momentum = value.parse().map_err(|_| bad("momentum"))?,
            "rms_decay" => rms.avg_decay = value.parse().map_err(|_| bad("rms_decay"))?,
            "rms_momentum" => rms.momentum = value.parse().map_err(|_| bad("rms_momentum"))?,
            "rms_eps" => rms.eps = value.parse().map_err(|_| bad("rms_eps"))?,
            "lstm_clip" => {
                train.lstm_clip = match value {
                    "none" => None,
                    v => Some(v.parse().map_err(|_| bad("lstm_clip"))?),
                }
            }
            "output_clip" => {
                train.output_clip = match value {
                    "none" => None,
                    v => Some(v.parse().map_err(|_| bad("output_clip"))?),
                }
            }
            "weight_noise_std" => {
                train.weight_noise_std = value.parse().map_err(|_| bad("weight_noise_std"))?
            }
            "reset_period" => {
                train.reset_period = match value {
                    "none" => None,
                    v => Some(v.parse().map_err(|_| bad("reset_period"))?),
                }
            }
            "shuffle" => train.shuffle = value.parse().map_err(|_| bad("shuffle"))?,
            "epochs" => train.epochs = value.parse().map_err(|_| bad("epochs"))?,
            "patience" => train.patience = value.parse().map_err(|_| bad("patience"))?,
            "seed" => train.seed = value.parse().map_err(|_| bad("seed"))?,
            "max_seqs_per_epoch" => {
                train.max_seqs_per_epoch = match value {
                    "none" => None,
                    v => Some(v.parse().map_err(|_| bad("max_seqs_per_epoch"))?),
                }
            }
            other => {
                return Err(Error::Config(format!(
                    "line {}: unknown key '{}'",
                    lineno + 1,
                    other
                )))
            }
        }
    }

    if let Some(noise) = Some(train.weight_noise_std) {
        if noise < 0.0 {
            return Err(Error::Config("weight_noise_std must be >= 0".into()));
        }
    }
    if let Some(p) = train.reset_period {
        if p == 0 {
            return Err(Error::Config("reset_period must be >= 1 or none".into()));
        }
    }

    train.optimizer = match opt_name.as_str() {
        "rmsprop" => {
            if let Some(l) = lr {
                rms.lr = l;
            }
            OptimizerKind::Rmsprop(rms)
        }
        "sgd" => OptimizerKind::Momentum {
            lr: lr.unwrap_or(1e-4),
            momentum,
        },
        other => return Err(Error::Config(format!("unknown optimizer '{}'", other))),
    };

    Ok(RunConfig {
        task: task.ok_or_else(|| Error::Config("missing required key 'task'".into()))?,
        data: data.ok_or_else(|| Error::Config("missing required key 'data'".into()))?,
        out_dir,
        granularity,
        vocab_limit,
        seq_len,
        val_fraction,
        val_manifest,
        layers,
        mixtures,
        window_mixtures,
        step_threshold,
        init_scale,
        window_offset_bias,
        train,
    })
}
