//! Peephole LSTM cell and the deep skip-connected prediction stack.
//!
//! Every hidden layer receives the raw input (skip connections in), and the
//! output sums contributions from every hidden layer (skip connections out).
//! Within a layer, cell-to-gate peephole weights are diagonal and the output
//! gate peephole reads the *current* cell value. Gradients are hand-derived
//! full BPTT; the derivative with respect to each gate/cell pre-activation
//! may be clipped elementwise before it propagates any further.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{matvec_acc, matvec_t_acc, outer_acc, sigmoid, Rng};

/// Attention-window wiring of the synthesis network: number of Gaussian
/// mixture components K and the one-hot alphabet width of the character
/// sequence. When present, every hidden layer has weights from the window
/// vector (the first layer sees it with a one-step delay).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub mixtures: usize,
    pub alphabet_size: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_size: usize,
    pub layer_widths: Vec<usize>,
    pub output_size: usize,
    pub window: Option<WindowConfig>,
}

impl Architecture {
    pub fn new(input_size: usize, layer_widths: Vec<usize>, output_size: usize) -> Self {
        Architecture {
            input_size,
            layer_widths,
            output_size,
            window: None,
        }
    }

    pub fn with_window(mut self, mixtures: usize, alphabet_size: usize) -> Self {
        self.window = Some(WindowConfig {
            mixtures,
            alphabet_size,
        });
        self
    }

    pub fn num_layers(&self) -> usize {
        self.layer_widths.len()
    }

    pub fn has_window(&self) -> bool {
        self.window.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.is_empty() {
            return Err(Error::InvalidArgument("need at least one hidden layer".into()));
        }
        if self.input_size == 0 || self.output_size == 0 {
            return Err(Error::InvalidArgument("zero-sized input or output layer".into()));
        }
        if self.layer_widths.contains(&0) {
            return Err(Error::InvalidArgument("zero-width hidden layer".into()));
        }
        if let Some(w) = &self.window {
            if w.mixtures == 0 || w.alphabet_size == 0 {
                return Err(Error::InvalidArgument("window needs mixtures and alphabet".into()));
            }
        }
        Ok(())
    }

    /// Total number of parameters, in closed form. Must agree with the sum of
    /// the layout's named view lengths.
    pub fn param_count(&self) -> usize {
        let win = self.window.as_ref().map(|w| w.alphabet_size).unwrap_or(0);
        let mut n = 0;
        for (l, &width) in self.layer_widths.iter().enumerate() {
            let below = if l == 0 { 0 } else { self.layer_widths[l - 1] };
            // four gates, each with input, below, window and recurrent weights
            n += 4 * width * (self.input_size + below + win + width);
            // diagonal peepholes on input/forget/output gates
            n += 3 * width;
            // biases
            n += 4 * width;
        }
        // hidden-to-output skip connections and output bias
        n += self.output_size * self.layer_widths.iter().sum::<usize>() + self.output_size;
        if let Some(w) = &self.window {
            // window parameter projection from the first hidden layer
            n += 3 * w.mixtures * self.layer_widths[0] + 3 * w.mixtures;
        }
        n
    }
}

pub const GATE_INPUT: usize = 0;
pub const GATE_FORGET: usize = 1;
pub const GATE_CELL: usize = 2;
pub const GATE_OUTPUT: usize = 3;

const GATE_NAMES: [&str; 4] = ["i", "f", "c", "o"];

/// Sub-views of one gate's parameters inside the flat vector.
#[derive(Clone, Debug)]
pub struct GateRanges {
    pub from_input: Range<usize>,
    pub from_below: Option<Range<usize>>,
    pub from_window: Option<Range<usize>>,
    pub recurrent: Range<usize>,
    /// Diagonal cell-to-gate weights, stored as a length-`width` vector.
    /// Absent on the cell-input gate.
    pub peephole: Option<Range<usize>>,
    pub bias: Range<usize>,
}

#[derive(Clone, Debug)]
pub struct LayerRanges {
    pub width: usize,
    pub below_width: usize,
    pub gates: [GateRanges; 4],
}

/// Byte map of the flat parameter vector. All views alias disjoint slices of
/// the same storage.
#[derive(Clone, Debug)]
pub struct Layout {
    pub layers: Vec<LayerRanges>,
    pub output_from: Vec<Range<usize>>,
    pub output_bias: Range<usize>,
    /// W_{h¹p}: (3K × width₀) projection of the first hidden layer onto the
    /// window parameters, plus its bias.
    pub window_proj: Option<Range<usize>>,
    pub window_bias: Option<Range<usize>>,
    pub len: usize,
}

impl Layout {
    pub fn build(arch: &Architecture) -> Layout {
        let win_size = arch.window.as_ref().map(|w| w.alphabet_size);
        let mut cursor = 0usize;
        let mut take = |n: usize| {
            let r = cursor..cursor + n;
            cursor += n;
            r
        };

        let mut layers = Vec::with_capacity(arch.num_layers());
        for (l, &width) in arch.layer_widths.iter().enumerate() {
            let below = if l == 0 { 0 } else { arch.layer_widths[l - 1] };
            let gates = std::array::from_fn(|g| GateRanges {
                from_input: take(width * arch.input_size),
                from_below: (below > 0).then(|| take(width * below)),
                from_window: win_size.map(|a| take(width * a)),
                recurrent: take(width * width),
                peephole: (g != GATE_CELL).then(|| take(width)),
                bias: take(width),
            });
            layers.push(LayerRanges {
                width,
                below_width: below,
                gates,
            });
        }

        let output_from = arch
            .layer_widths
            .iter()
            .map(|&w| take(arch.output_size * w))
            .collect();
        let output_bias = take(arch.output_size);

        let (window_proj, window_bias) = match &arch.window {
            Some(w) => (
                Some(take(3 * w.mixtures * arch.layer_widths[0])),
                Some(take(3 * w.mixtures)),
            ),
            None => (None, None),
        };

        Layout {
            layers,
            output_from,
            output_bias,
            window_proj,
            window_bias,
            len: cursor,
        }
    }

    /// Every named view with its range, in storage order. Weight views are
    /// those initialised randomly; peepholes and biases start at zero.
    pub fn named_views(&self) -> Vec<(String, Range<usize>, ViewKind)> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            for (g, gate) in layer.gates.iter().enumerate() {
                let gn = GATE_NAMES[g];
                out.push((format!("l{l}.{gn}.wx"), gate.from_input.clone(), ViewKind::Weight));
                if let Some(r) = &gate.from_below {
                    out.push((format!("l{l}.{gn}.wbelow"), r.clone(), ViewKind::Weight));
                }
                if let Some(r) = &gate.from_window {
                    out.push((format!("l{l}.{gn}.wwin"), r.clone(), ViewKind::Weight));
                }
                out.push((format!("l{l}.{gn}.wh"), gate.recurrent.clone(), ViewKind::Weight));
                if let Some(r) = &gate.peephole {
                    out.push((format!("l{l}.{gn}.peep"), r.clone(), ViewKind::Peephole));
                }
                out.push((format!("l{l}.{gn}.b"), gate.bias.clone(), ViewKind::Bias));
            }
        }
        for (l, r) in self.output_from.iter().enumerate() {
            out.push((format!("out.wy{l}"), r.clone(), ViewKind::Weight));
        }
        out.push(("out.by".into(), self.output_bias.clone(), ViewKind::Bias));
        if let Some(r) = &self.window_proj {
            out.push(("win.wp".into(), r.clone(), ViewKind::Weight));
        }
        if let Some(r) = &self.window_bias {
            out.push(("win.bp".into(), r.clone(), ViewKind::Bias));
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ViewKind {
    Weight,
    Peephole,
    Bias,
}

/// Flat parameter vector plus the layout describing its named sub-views.
#[derive(Clone, Debug)]
pub struct ParamStore {
    arch: Architecture,
    layout: Layout,
    data: Vec<f64>,
}

impl ParamStore {
    pub fn zeros(arch: Architecture) -> Result<ParamStore> {
        arch.validate()?;
        let layout = Layout::build(&arch);
        let data = vec![0.0; layout.len];
        Ok(ParamStore { arch, layout, data })
    }

    /// Random initialisation: weights uniform(−scale, scale), peepholes and
    /// biases zero. Deterministic per seed.
    pub fn init(arch: Architecture, seed: u64, scale: f64) -> Result<ParamStore> {
        if scale <= 0.0 {
            return Err(Error::InvalidArgument("init scale must be positive".into()));
        }
        let mut store = ParamStore::zeros(arch)?;
        let mut rng = Rng::seed_from(seed);
        for (_, range, kind) in store.layout.named_views() {
            if kind == ViewKind::Weight {
                for v in &mut store.data[range] {
                    *v = rng.uniform(-scale, scale);
                }
            }
        }
        Ok(store)
    }

    pub fn zeros_like(&self) -> ParamStore {
        ParamStore {
            arch: self.arch.clone(),
            layout: self.layout.clone(),
            data: vec![0.0; self.data.len()],
        }
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn view(&self, range: &Range<usize>) -> &[f64] {
        &self.data[range.clone()]
    }

    pub fn view_mut(&mut self, range: &Range<usize>) -> &mut [f64] {
        &mut self.data[range.clone()]
    }

    /// Replace the flat vector wholesale; the length must match the layout.
    pub fn set_values(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.data.len() {
            return Err(Error::shape(
                "ParamStore::set_values",
                format!("expected {} values, got {}", self.data.len(), values.len()),
            ));
        }
        self.data.copy_from_slice(values);
        Ok(())
    }

    /// Sets the κ̂ slots of the window-parameter bias, so a fresh synthesis
    /// network starts sliding its window at exp(bias) characters per step
    /// instead of one. Starting near the true characters-per-step rate gives
    /// the alignment a usable gradient from the first update.
    pub fn set_window_offset_bias(&mut self, bias: f64) -> Result<()> {
        let range = self
            .layout
            .window_bias
            .clone()
            .ok_or_else(|| Error::InvalidArgument("architecture has no window".into()))?;
        let k = range.len() / 3;
        for v in &mut self.data[range.start + 2 * k..range.end] {
            *v = bias;
        }
        Ok(())
    }
}

/// Per-layer hidden and cell activations carried across timesteps (and, for
/// stateful training, across sequences).
#[derive(Clone, Debug, PartialEq)]
pub struct LayerState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LayerState {
    pub fn zeros(width: usize) -> LayerState {
        LayerState {
            h: vec![0.0; width],
            c: vec![0.0; width],
        }
    }
}

pub fn fresh_states(arch: &Architecture) -> Vec<LayerState> {
    arch.layer_widths.iter().map(|&w| LayerState::zeros(w)).collect()
}

/// Everything a cell consumes at one timestep besides its own recurrent
/// state: the raw input (skip connection), the layer below, and the window
/// vector when the architecture has one.
#[derive(Clone, Copy, Debug)]
pub struct CellInputs<'a> {
    pub x: &'a [f64],
    pub below: Option<&'a [f64]>,
    pub window: Option<&'a [f64]>,
}

/// Activations recorded by one cell at one timestep. The forward pass is
/// exactly reproducible from these; sigmoid/tanh derivatives are recomputed
/// from the stored activations instead of caching pre-images.
#[derive(Clone, Debug)]
pub struct StepLayerCache {
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub o: Vec<f64>,
    pub c: Vec<f64>,
    pub h: Vec<f64>,
}

fn gate_preactivation(
    params: &ParamStore,
    gate: &GateRanges,
    width: usize,
    inputs: CellInputs<'_>,
    h_prev: &[f64],
    peephole_cell: Option<&[f64]>,
) -> Vec<f64> {
    let mut pre = params.view(&gate.bias).to_vec();
    matvec_acc(params.view(&gate.from_input), width, inputs.x.len(), inputs.x, &mut pre);
    if let (Some(r), Some(below)) = (&gate.from_below, inputs.below) {
        matvec_acc(params.view(r), width, below.len(), below, &mut pre);
    }
    if let (Some(r), Some(win)) = (&gate.from_window, inputs.window) {
        matvec_acc(params.view(r), width, win.len(), win, &mut pre);
    }
    matvec_acc(params.view(&gate.recurrent), width, width, h_prev, &mut pre);
    if let (Some(r), Some(cell)) = (&gate.peephole, peephole_cell) {
        let peep = params.view(r);
        for ((p, w), c) in pre.iter_mut().zip(peep.iter()).zip(cell.iter()) {
            *p += w * c;
        }
    }
    pre
}

/// One LSTM cell update. `state` is advanced in place to (h_t, c_t); the
/// returned cache holds the activations needed to run the step backwards.
pub fn lstm_cell_step(
    params: &ParamStore,
    layer_idx: usize,
    inputs: CellInputs<'_>,
    state: &mut LayerState,
) -> Result<StepLayerCache> {
    let layer = &params.layout().layers[layer_idx];
    let width = layer.width;
    if inputs.x.len() != params.arch().input_size {
        return Err(Error::shape(
            "lstm_cell_step",
            format!("input has length {}, expected {}", inputs.x.len(), params.arch().input_size),
        ));
    }

    let c_prev = state.c.clone();
    let h_prev = state.h.clone();

    let mut i = gate_preactivation(params, &layer.gates[GATE_INPUT], width, inputs, &h_prev, Some(&c_prev));
    let mut f = gate_preactivation(params, &layer.gates[GATE_FORGET], width, inputs, &h_prev, Some(&c_prev));
    let mut g = gate_preactivation(params, &layer.gates[GATE_CELL], width, inputs, &h_prev, None);
    for v in i.iter_mut() {
        *v = sigmoid(*v);
    }
    for v in f.iter_mut() {
        *v = sigmoid(*v);
    }
    for v in g.iter_mut() {
        *v = v.tanh();
    }

    let mut c = vec![0.0; width];
    for k in 0..width {
        c[k] = f[k] * c_prev[k] + i[k] * g[k];
    }

    let mut o = gate_preactivation(params, &layer.gates[GATE_OUTPUT], width, inputs, &h_prev, Some(&c));
    for v in o.iter_mut() {
        *v = sigmoid(*v);
    }

    let mut h = vec![0.0; width];
    for k in 0..width {
        h[k] = o[k] * c[k].tanh();
    }

    state.h.copy_from_slice(&h);
    state.c.copy_from_slice(&c);

    Ok(StepLayerCache { i, f, g, o, c, h })
}

#[inline]
fn clip_slice(v: &mut [f64], clip: Option<(f64, f64)>) {
    if let Some((lo, hi)) = clip {
        for x in v.iter_mut() {
            *x = x.clamp(lo, hi);
        }
    }
}

/// Gradients a cell hands back to its surroundings.
#[derive(Clone, Debug)]
pub struct CellBackward {
    pub dx: Vec<f64>,
    pub dbelow: Option<Vec<f64>>,
    pub dwindow: Option<Vec<f64>>,
    pub dh_prev: Vec<f64>,
    pub dc_prev: Vec<f64>,
}

/// Backward pass of one cell step. `dh` is the total loss derivative
/// arriving at h_t, `dc_carry` the derivative arriving at c_t from the
/// future. Pre-activation derivatives are clipped to `clip` the moment they
/// are formed, before any further propagation.
#[allow(clippy::too_many_arguments)]
pub fn lstm_cell_backward(
    params: &ParamStore,
    grads: &mut ParamStore,
    layer_idx: usize,
    cache: &StepLayerCache,
    inputs: CellInputs<'_>,
    h_prev: &[f64],
    c_prev: &[f64],
    dh: &[f64],
    dc_carry: &[f64],
    clip: Option<(f64, f64)>,
) -> CellBackward {
    let layer = &params.layout().layers[layer_idx];
    let width = layer.width;
    debug_assert_eq!(dh.len(), width);
    debug_assert_eq!(dc_carry.len(), width);

    let gates = &layer.gates;

    // output gate first: its pre-activation derivative feeds the cell via
    // the current-cell peephole
    let mut d_pre_o = vec![0.0; width];
    for k in 0..width {
        let tanh_c = cache.c[k].tanh();
        d_pre_o[k] = dh[k] * tanh_c * cache.o[k] * (1.0 - cache.o[k]);
    }
    clip_slice(&mut d_pre_o, clip);

    let peep_o = params.view(gates[GATE_OUTPUT].peephole.as_ref().unwrap());
    let mut dc = vec![0.0; width];
    for k in 0..width {
        let tanh_c = cache.c[k].tanh();
        dc[k] = dh[k] * cache.o[k] * (1.0 - tanh_c * tanh_c) + dc_carry[k] + d_pre_o[k] * peep_o[k];
    }

    let mut d_pre_i = vec![0.0; width];
    let mut d_pre_f = vec![0.0; width];
    let mut d_pre_g = vec![0.0; width];
    for k in 0..width {
        d_pre_i[k] = dc[k] * cache.g[k] * cache.i[k] * (1.0 - cache.i[k]);
        d_pre_f[k] = dc[k] * c_prev[k] * cache.f[k] * (1.0 - cache.f[k]);
        d_pre_g[k] = dc[k] * cache.i[k] * (1.0 - cache.g[k] * cache.g[k]);
    }
    clip_slice(&mut d_pre_i, clip);
    clip_slice(&mut d_pre_f, clip);
    clip_slice(&mut d_pre_g, clip);

    let peep_i = params.view(gates[GATE_INPUT].peephole.as_ref().unwrap());
    let peep_f = params.view(gates[GATE_FORGET].peephole.as_ref().unwrap());
    let mut dc_prev = vec![0.0; width];
    for k in 0..width {
        dc_prev[k] = dc[k] * cache.f[k] + d_pre_i[k] * peep_i[k] + d_pre_f[k] * peep_f[k];
    }

    let mut dx = vec![0.0; inputs.x.len()];
    let mut dbelow = inputs.below.map(|b| vec![0.0; b.len()]);
    let mut dwindow = inputs.window.map(|w| vec![0.0; w.len()]);
    let mut dh_prev = vec![0.0; width];

    let d_pres = [&d_pre_i, &d_pre_f, &d_pre_g, &d_pre_o];
    for (g, d_pre) in d_pres.iter().enumerate() {
        let gate = &gates[g];
        outer_acc(grads.view_mut(&gate.from_input), width, inputs.x.len(), d_pre, inputs.x);
        matvec_t_acc(params.view(&gate.from_input), width, inputs.x.len(), d_pre, &mut dx);
        if let (Some(r), Some(below)) = (&gate.from_below, inputs.below) {
            outer_acc(grads.view_mut(r), width, below.len(), d_pre, below);
            matvec_t_acc(params.view(r), width, below.len(), d_pre, dbelow.as_mut().unwrap());
        }
        if let (Some(r), Some(win)) = (&gate.from_window, inputs.window) {
            outer_acc(grads.view_mut(r), width, win.len(), d_pre, win);
            matvec_t_acc(params.view(r), width, win.len(), d_pre, dwindow.as_mut().unwrap());
        }
        outer_acc(grads.view_mut(&gate.recurrent), width, width, d_pre, h_prev);
        matvec_t_acc(params.view(&gate.recurrent), width, width, d_pre, &mut dh_prev);
        let gbias = grads.view_mut(&gate.bias);
        for k in 0..width {
            gbias[k] += d_pre[k];
        }
    }

    // peephole gradients: input/forget gates read c_{t-1}, output gate reads c_t
    {
        let gp = grads.view_mut(gates[GATE_INPUT].peephole.as_ref().unwrap());
        for k in 0..width {
            gp[k] += d_pre_i[k] * c_prev[k];
        }
    }
    {
        let gp = grads.view_mut(gates[GATE_FORGET].peephole.as_ref().unwrap());
        for k in 0..width {
            gp[k] += d_pre_f[k] * c_prev[k];
        }
    }
    {
        let gp = grads.view_mut(gates[GATE_OUTPUT].peephole.as_ref().unwrap());
        for k in 0..width {
            gp[k] += d_pre_o[k] * cache.c[k];
        }
    }

    CellBackward {
        dx,
        dbelow,
        dwindow,
        dh_prev,
        dc_prev,
    }
}

/// ŷ = b_y + Σₙ W_{hⁿy} hⁿ, the skip-connected output sum.
pub fn output_forward(params: &ParamStore, hs: &[&[f64]]) -> Vec<f64> {
    let out_size = params.arch().output_size;
    let mut yhat = params.view(&params.layout().output_bias).to_vec();
    for (n, h) in hs.iter().enumerate() {
        matvec_acc(
            params.view(&params.layout().output_from[n]),
            out_size,
            h.len(),
            h,
            &mut yhat,
        );
    }
    yhat
}

/// Accumulates output-layer gradients and adds Wᵀ·dŷ into each layer's dh.
pub fn output_backward(
    params: &ParamStore,
    grads: &mut ParamStore,
    hs: &[&[f64]],
    dyhat: &[f64],
    dh: &mut [Vec<f64>],
) {
    let out_size = params.arch().output_size;
    let layout = params.layout().clone();
    for (n, h) in hs.iter().enumerate() {
        outer_acc(grads.view_mut(&layout.output_from[n]), out_size, h.len(), dyhat, h);
        matvec_t_acc(params.view(&layout.output_from[n]), out_size, h.len(), dyhat, &mut dh[n]);
    }
    let gb = grads.view_mut(&layout.output_bias);
    for (g, d) in gb.iter_mut().zip(dyhat.iter()) {
        *g += d;
    }
}

/// p̂ = W_{h¹p}·h¹ + b_p, the window-parameter projection.
pub fn window_proj_forward(params: &ParamStore, h1: &[f64]) -> Vec<f64> {
    let proj = params.layout().window_proj.as_ref().expect("architecture has no window");
    let bias = params.layout().window_bias.as_ref().unwrap();
    let rows = bias.len();
    let mut p_hat = params.view(bias).to_vec();
    matvec_acc(params.view(proj), rows, h1.len(), h1, &mut p_hat);
    p_hat
}

/// Adjoint of `window_proj_forward`; adds the h¹ contribution into `dh1`.
pub fn window_proj_backward(
    params: &ParamStore,
    grads: &mut ParamStore,
    h1: &[f64],
    d_p_hat: &[f64],
    dh1: &mut [f64],
) {
    let layout = params.layout().clone();
    let proj = layout.window_proj.as_ref().expect("architecture has no window");
    let bias = layout.window_bias.as_ref().unwrap();
    let rows = bias.len();
    outer_acc(grads.view_mut(proj), rows, h1.len(), d_p_hat, h1);
    matvec_t_acc(params.view(proj), rows, h1.len(), d_p_hat, dh1);
    let gb = grads.view_mut(bias);
    for (g, d) in gb.iter_mut().zip(d_p_hat.iter()) {
        *g += d;
    }
}

/// Externally supplied window vectors for running the stack with the window
/// treated as data: `w0` is fed to the first layer at t=0, `w[t]` to layers
/// n≥2 at time t and to the first layer at time t+1.
#[derive(Clone, Debug)]
pub struct WindowSeq {
    pub w0: Vec<f64>,
    pub w: Vec<Vec<f64>>,
}

/// Replay record of a full forward pass; owns copies of everything the
/// backward pass reads so the two cannot drift apart.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    pub steps: Vec<Vec<StepLayerCache>>,
    pub inputs: Vec<Vec<f64>>,
    pub init: Vec<LayerState>,
    pub win: Option<WindowSeq>,
}

impl ForwardCache {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// (h, c) of `layer` entering timestep `t`.
    fn state_before(&self, t: usize, layer: usize) -> (&[f64], &[f64]) {
        if t == 0 {
            (&self.init[layer].h, &self.init[layer].c)
        } else {
            let prev = &self.steps[t - 1][layer];
            (&prev.h, &prev.c)
        }
    }

    fn window_for(&self, t: usize, layer: usize) -> Option<&[f64]> {
        let win = self.win.as_ref()?;
        if layer == 0 {
            Some(if t == 0 { &win.w0 } else { &win.w[t - 1] })
        } else {
            Some(&win.w[t])
        }
    }
}

pub struct StackForward {
    pub yhat: Vec<Vec<f64>>,
    pub final_states: Vec<LayerState>,
    pub cache: ForwardCache,
}

/// Runs the full stack over a sequence. States are carried in from `init`
/// and the sequence-end states are returned for stateful training. An empty
/// sequence produces empty outputs and leaves the states untouched.
pub fn stack_forward(
    params: &ParamStore,
    x_seq: &[Vec<f64>],
    init: &[LayerState],
    win: Option<&WindowSeq>,
) -> Result<StackForward> {
    let arch = params.arch();
    let n_layers = arch.num_layers();
    if init.len() != n_layers {
        return Err(Error::shape(
            "stack_forward",
            format!("{} initial states for {} layers", init.len(), n_layers),
        ));
    }
    if arch.has_window() != win.is_some() {
        return Err(Error::shape(
            "stack_forward",
            "window inputs must be supplied iff the architecture has a window".to_string(),
        ));
    }
    if let Some(w) = win {
        if w.w.len() != x_seq.len() {
            return Err(Error::shape(
                "stack_forward",
                format!("{} window vectors for {} timesteps", w.w.len(), x_seq.len()),
            ));
        }
    }

    let mut states: Vec<LayerState> = init.to_vec();
    let mut yhat = Vec::with_capacity(x_seq.len());
    let mut steps = Vec::with_capacity(x_seq.len());

    for (t, x) in x_seq.iter().enumerate() {
        if x.len() != arch.input_size {
            return Err(Error::shape(
                "stack_forward",
                format!("input at t={} has length {}, expected {}", t, x.len(), arch.input_size),
            ));
        }
        let mut layer_caches: Vec<StepLayerCache> = Vec::with_capacity(n_layers);
        for n in 0..n_layers {
            let below = if n == 0 {
                None
            } else {
                Some(layer_caches[n - 1].h.clone())
            };
            let window = win.map(|w| {
                if n == 0 {
                    if t == 0 {
                        &w.w0[..]
                    } else {
                        &w.w[t - 1][..]
                    }
                } else {
                    &w.w[t][..]
                }
            });
            let cache = lstm_cell_step(
                params,
                n,
                CellInputs {
                    x,
                    below: below.as_deref(),
                    window,
                },
                &mut states[n],
            )?;
            if cache.h.iter().any(|v| !v.is_finite()) || cache.c.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    what: format!("layer {} activations", n),
                    timestep: t,
                });
            }
            layer_caches.push(cache);
        }
        let hs: Vec<&[f64]> = layer_caches.iter().map(|c| &c.h[..]).collect();
        let y = output_forward(params, &hs);
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "output activations".into(),
                timestep: t,
            });
        }
        yhat.push(y);
        steps.push(layer_caches);
    }

    Ok(StackForward {
        yhat,
        final_states: states,
        cache: ForwardCache {
            steps,
            inputs: x_seq.to_vec(),
            init: init.to_vec(),
            win: win.cloned(),
        },
    })
}

pub struct StackBackward {
    pub grads: ParamStore,
    /// Loss derivative with respect to the initial (h, c) of each layer;
    /// dropped by truncated-BPTT training, returned for completeness.
    pub dinit: Vec<LayerState>,
    /// Present when the forward pass consumed window vectors: derivative
    /// with respect to w0 and each w_t.
    pub dwindow: Option<WindowSeq>,
}

/// Full-gradient BPTT over a cached forward pass. `dyhat_seq` holds ∂L/∂ŷ_t;
/// `clip` bounds the pre-activation derivatives inside every cell.
pub fn stack_backward(
    params: &ParamStore,
    cache: &ForwardCache,
    dyhat_seq: &[Vec<f64>],
    clip: Option<(f64, f64)>,
) -> Result<StackBackward> {
    let arch = params.arch();
    let n_layers = arch.num_layers();
    if dyhat_seq.len() != cache.len() {
        return Err(Error::shape(
            "stack_backward",
            format!("{} output derivatives for {} cached steps", dyhat_seq.len(), cache.len()),
        ));
    }

    let mut grads = params.zeros_like();
    let mut dh_carry: Vec<Vec<f64>> =
        arch.layer_widths.iter().map(|&w| vec![0.0; w]).collect();
    let mut dc_carry: Vec<Vec<f64>> =
        arch.layer_widths.iter().map(|&w| vec![0.0; w]).collect();
    let mut dwindow = cache.win.as_ref().map(|w| WindowSeq {
        w0: vec![0.0; w.w0.len()],
        w: w.w.iter().map(|v| vec![0.0; v.len()]).collect(),
    });

    for t in (0..cache.len()).rev() {
        let layer_caches = &cache.steps[t];
        let hs: Vec<&[f64]> = layer_caches.iter().map(|c| &c.h[..]).collect();

        let mut dh: Vec<Vec<f64>> = std::mem::take(&mut dh_carry);
        output_backward(params, &mut grads, &hs, &dyhat_seq[t], &mut dh);

        let mut next_dh: Vec<Vec<f64>> =
            arch.layer_widths.iter().map(|&w| vec![0.0; w]).collect();
        let mut next_dc: Vec<Vec<f64>> =
            arch.layer_widths.iter().map(|&w| vec![0.0; w]).collect();

        for n in (0..n_layers).rev() {
            let (h_prev, c_prev) = cache.state_before(t, n);
            let below = if n == 0 {
                None
            } else {
                Some(&layer_caches[n - 1].h[..])
            };
            let out = lstm_cell_backward(
                params,
                &mut grads,
                n,
                &layer_caches[n],
                CellInputs {
                    x: &cache.inputs[t],
                    below,
                    window: cache.window_for(t, n),
                },
                h_prev,
                c_prev,
                &dh[n],
                &dc_carry[n],
                clip,
            );
            if n > 0 {
                let d = out.dbelow.unwrap();
                for (a, b) in dh[n - 1].iter_mut().zip(d.iter()) {
                    *a += b;
                }
            }
            if let (Some(dwin_all), Some(dwin)) = (dwindow.as_mut(), out.dwindow) {
                let target = if n == 0 {
                    if t == 0 {
                        &mut dwin_all.w0
                    } else {
                        &mut dwin_all.w[t - 1]
                    }
                } else {
                    &mut dwin_all.w[t]
                };
                for (a, b) in target.iter_mut().zip(dwin.iter()) {
                    *a += b;
                }
            }
            next_dh[n] = out.dh_prev;
            next_dc[n] = out.dc_prev;
        }
        dh_carry = next_dh;
        dc_carry = next_dc;
    }

    let dinit = dh_carry
        .into_iter()
        .zip(dc_carry)
        .map(|(h, c)| LayerState { h, c })
        .collect();

    Ok(StackBackward {
        grads,
        dinit,
        dwindow,
    })
}
