//! Soft Gaussian attention window over a character string, and the synthesis
//! network that wires it into the LSTM stack.
//!
//! The window is an *unnormalised* mixture of K Gaussians over character
//! positions u = 1..U: φ(t,u) = Σₖ αₖ·exp(−βₖ(κₖ−u)²), with the location κ
//! advancing monotonically by exp(κ̂) each step. φ(t, U+1) is evaluated
//! alongside at negligible cost; sampling stops once it exceeds every
//! in-text weight. The window vector w_t feeds layers n ≥ 2 at time t and
//! the first layer at time t+1 (avoiding a cycle), with κ₀ = 0 and w₀ = 0 at
//! sequence start.

use crate::error::{Error, Result};
use crate::lstm::{
    lstm_cell_backward, lstm_cell_step, output_backward, output_forward, window_proj_backward,
    window_proj_forward, CellInputs, LayerState, ParamStore, StepLayerCache,
};

/// A runaway κ̂ is a divergence symptom, not a valid state; exp() is clamped
/// here and a warning logged.
const KAPPA_HAT_LIMIT: f64 = 50.0;

/// One-hot character sequence, stored as alphabet indices so each column is
/// exactly one-hot by construction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CharSeq {
    indices: Vec<usize>,
    alphabet_size: usize,
}

impl CharSeq {
    pub fn new(indices: Vec<usize>, alphabet_size: usize) -> Result<CharSeq> {
        if indices.is_empty() {
            return Err(Error::InvalidArgument(
                "character sequence must have U >= 1".into(),
            ));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= alphabet_size) {
            return Err(Error::InvalidArgument(format!(
                "character index {} outside alphabet of size {}",
                bad, alphabet_size
            )));
        }
        Ok(CharSeq {
            indices,
            alphabet_size,
        })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet_size
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// Concatenation, used by primed sampling (prime text + synthesis text).
    pub fn concat(&self, other: &CharSeq) -> Result<CharSeq> {
        if self.alphabet_size != other.alphabet_size {
            return Err(Error::InvalidArgument(
                "cannot concatenate character sequences over different alphabets".into(),
            ));
        }
        let mut indices = self.indices.clone();
        indices.extend_from_slice(&other.indices);
        CharSeq::new(indices, self.alphabet_size)
    }
}

/// Window state at one timestep: mixture parameters after squashing, the
/// weights φ(t, 1..U+1), and the blended character vector w_t. Doubles as
/// the backward-pass cache.
#[derive(Clone, Debug)]
pub struct WindowStep {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub kappa: Vec<f64>,
    /// exp(κ̂) after the overflow clamp; the κ offset actually applied.
    pub kappa_offset: Vec<f64>,
    /// φ(t, u) for u = 1..U+1; the final entry exists only for `stop_check`.
    pub phi: Vec<f64>,
    pub w: Vec<f64>,
}

/// Forward window evaluation. `p_hat` is the raw (α̂|β̂|κ̂) vector of length
/// 3K from the first hidden layer; `kappa_prev` the K locations carried from
/// the previous step.
pub fn window_step(p_hat: &[f64], kappa_prev: &[f64], chars: &CharSeq) -> Result<WindowStep> {
    let k = kappa_prev.len();
    if p_hat.len() != 3 * k {
        return Err(Error::shape(
            "window_step",
            format!("parameter vector has length {}, expected 3K = {}", p_hat.len(), 3 * k),
        ));
    }
    let u_len = chars.len();

    let mut alpha = Vec::with_capacity(k);
    let mut beta = Vec::with_capacity(k);
    let mut kappa = Vec::with_capacity(k);
    let mut kappa_offset = Vec::with_capacity(k);
    for j in 0..k {
        let a = p_hat[j].exp();
        let b = p_hat[k + j].exp();
        let mut k_hat = p_hat[2 * k + j];
        if k_hat > KAPPA_HAT_LIMIT {
            log::warn!(
                "window component {}: kappa offset exp({:.1}) clamped to exp({})",
                j,
                k_hat,
                KAPPA_HAT_LIMIT
            );
            k_hat = KAPPA_HAT_LIMIT;
        }
        let offset = k_hat.exp();
        if !a.is_finite() {
            return Err(Error::NonFinite {
                what: format!("window alpha[{}] (exp overflow)", j),
                timestep: 0,
            });
        }
        if !b.is_finite() {
            return Err(Error::NonFinite {
                what: format!("window beta[{}] (exp overflow)", j),
                timestep: 0,
            });
        }
        alpha.push(a);
        beta.push(b);
        kappa.push(kappa_prev[j] + offset);
        kappa_offset.push(offset);
    }

    // u is 1-indexed in the weights; phi[i] holds φ(t, i+1), the final entry
    // being the past-the-text weight φ(t, U+1)
    let mut phi = vec![0.0; u_len + 1];
    for (i, slot) in phi.iter_mut().enumerate() {
        let u = (i + 1) as f64;
        let mut acc = 0.0;
        for j in 0..k {
            let d = kappa[j] - u;
            acc += alpha[j] * (-beta[j] * d * d).exp();
        }
        *slot = acc;
    }

    let mut w = vec![0.0; chars.alphabet_size()];
    for (i, &sym) in chars.indices().iter().enumerate() {
        w[sym] += phi[i];
    }

    Ok(WindowStep {
        alpha,
        beta,
        kappa,
        kappa_offset,
        phi,
        w,
    })
}

/// Gradients of one window step.
#[derive(Clone, Debug)]
pub struct WindowBackward {
    /// (dα̂ | dβ̂ | dκ̂), ready to feed the window-projection adjoint.
    pub d_p_hat: Vec<f64>,
    /// ∂L/∂κ_t, to be handed to the previous timestep as its dκ_{t+1}.
    pub dkappa: Vec<f64>,
}

/// Backward window evaluation: given ∂L/∂w_t and the κ recursion term
/// ∂L/∂κ_{t+1}, produces the raw parameter gradients. Gradients never
/// propagate into the one-hot characters; they are data.
pub fn window_backward(
    step: &WindowStep,
    chars: &CharSeq,
    dw: &[f64],
    dkappa_next: &[f64],
) -> Result<WindowBackward> {
    let k = step.kappa.len();
    if dw.len() != chars.alphabet_size() {
        return Err(Error::shape(
            "window_backward",
            format!("dw has length {}, expected {}", dw.len(), chars.alphabet_size()),
        ));
    }
    if dkappa_next.len() != k {
        return Err(Error::shape(
            "window_backward",
            format!("dkappa has length {}, expected {}", dkappa_next.len(), k),
        ));
    }

    let mut d_alpha_hat = vec![0.0; k];
    let mut d_beta_hat = vec![0.0; k];
    let mut dkappa = dkappa_next.to_vec();

    for (i, &sym) in chars.indices().iter().enumerate() {
        let s = dw[sym];
        if s == 0.0 {
            continue;
        }
        let u = (i + 1) as f64;
        for j in 0..k {
            let d = step.kappa[j] - u;
            let eps = step.alpha[j] * (-step.beta[j] * d * d).exp() * s;
            d_alpha_hat[j] += eps;
            d_beta_hat[j] -= step.beta[j] * eps * d * d;
            dkappa[j] += 2.0 * step.beta[j] * eps * (u - step.kappa[j]);
        }
    }

    let mut d_p_hat = vec![0.0; 3 * k];
    for j in 0..k {
        d_p_hat[j] = d_alpha_hat[j];
        d_p_hat[k + j] = d_beta_hat[j];
        d_p_hat[2 * k + j] = step.kappa_offset[j] * dkappa[j];
    }

    Ok(WindowBackward { d_p_hat, dkappa })
}

/// Stop heuristic: the window has slid past the text once φ(t, U+1) strictly
/// exceeds every in-text weight.
pub fn stop_check(phi: &[f64]) -> bool {
    let (last, text) = phi.split_last().expect("phi must include u = U+1");
    text.iter().all(|&p| *last > p)
}

/// Running state of a synthesis network between timesteps.
#[derive(Clone, Debug)]
pub struct SynthState {
    pub layers: Vec<LayerState>,
    pub kappa: Vec<f64>,
    pub w_prev: Vec<f64>,
}

pub fn fresh_synth_state(params: &ParamStore) -> SynthState {
    let arch = params.arch();
    let win = arch.window.as_ref().expect("architecture has no window");
    SynthState {
        layers: crate::lstm::fresh_states(arch),
        kappa: vec![0.0; win.mixtures],
        w_prev: vec![0.0; win.alphabet_size],
    }
}

/// Cache of one synthesis timestep.
#[derive(Clone, Debug)]
pub struct SynthStepCache {
    pub layers: Vec<StepLayerCache>,
    pub win: WindowStep,
}

/// Advance the synthesis network one timestep: first hidden layer (fed the
/// *previous* window vector), window parameters from h¹, fresh window, then
/// the remaining layers and the output sum.
pub fn synth_step(
    params: &ParamStore,
    x: &[f64],
    chars: &CharSeq,
    state: &mut SynthState,
) -> Result<(Vec<f64>, SynthStepCache)> {
    let arch = params.arch();
    let n_layers = arch.num_layers();

    let first = lstm_cell_step(
        params,
        0,
        CellInputs {
            x,
            below: None,
            window: Some(&state.w_prev),
        },
        &mut state.layers[0],
    )?;

    let p_hat = window_proj_forward(params, &first.h);
    let win = window_step(&p_hat, &state.kappa, chars)?;

    let mut layer_caches = vec![first];
    for n in 1..n_layers {
        let below = layer_caches[n - 1].h.clone();
        let cache = lstm_cell_step(
            params,
            n,
            CellInputs {
                x,
                below: Some(&below),
                window: Some(&win.w),
            },
            &mut state.layers[n],
        )?;
        layer_caches.push(cache);
    }

    let hs: Vec<&[f64]> = layer_caches.iter().map(|c| &c.h[..]).collect();
    let yhat = output_forward(params, &hs);

    state.kappa.copy_from_slice(&win.kappa);
    state.w_prev.copy_from_slice(&win.w);

    Ok((
        yhat,
        SynthStepCache {
            layers: layer_caches,
            win,
        },
    ))
}

/// Replay record of a synthesis forward pass over a whole sequence
/// (fresh-start: κ₀ = 0, w₀ = 0, zero hidden states).
pub struct SynthForward {
    pub yhat: Vec<Vec<f64>>,
    pub steps: Vec<SynthStepCache>,
    pub inputs: Vec<Vec<f64>>,
    pub final_state: SynthState,
}

impl SynthForward {
    /// The φ trace as a dense T×(U+1) row-major matrix.
    pub fn phi_trace(&self) -> Vec<Vec<f64>> {
        self.steps.iter().map(|s| s.win.phi.clone()).collect()
    }
}

pub fn synth_forward(
    params: &ParamStore,
    x_seq: &[Vec<f64>],
    chars: &CharSeq,
) -> Result<SynthForward> {
    let arch = params.arch();
    if !arch.has_window() {
        return Err(Error::InvalidArgument(
            "synth_forward requires a window architecture".into(),
        ));
    }
    if arch.window.as_ref().unwrap().alphabet_size != chars.alphabet_size() {
        return Err(Error::shape(
            "synth_forward",
            format!(
                "alphabet {} does not match architecture alphabet {}",
                chars.alphabet_size(),
                arch.window.as_ref().unwrap().alphabet_size
            ),
        ));
    }

    let mut state = fresh_synth_state(params);
    let mut yhat = Vec::with_capacity(x_seq.len());
    let mut steps = Vec::with_capacity(x_seq.len());
    for (t, x) in x_seq.iter().enumerate() {
        let (y, cache) = synth_step(params, x, chars, &mut state).map_err(|e| match e {
            Error::NonFinite { what, .. } => Error::NonFinite { what, timestep: t },
            other => other,
        })?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "output activations".into(),
                timestep: t,
            });
        }
        yhat.push(y);
        steps.push(cache);
    }

    Ok(SynthForward {
        yhat,
        steps,
        inputs: x_seq.to_vec(),
        final_state: state,
    })
}

pub struct SynthBackward {
    pub grads: ParamStore,
}

/// Full BPTT through the synthesis graph: LSTM stack, window projection,
/// window weights, and the κ recursion across time.
pub fn synth_backward(
    params: &ParamStore,
    fwd: &SynthForward,
    chars: &CharSeq,
    dyhat_seq: &[Vec<f64>],
    clip: Option<(f64, f64)>,
) -> Result<SynthBackward> {
    let arch = params.arch();
    let n_layers = arch.num_layers();
    let win_cfg = arch.window.as_ref().expect("architecture has no window");
    let t_len = fwd.steps.len();
    if dyhat_seq.len() != t_len {
        return Err(Error::shape(
            "synth_backward",
            format!("{} output derivatives for {} cached steps", dyhat_seq.len(), t_len),
        ));
    }

    let mut grads = params.zeros_like();
    let mut dh_carry: Vec<Vec<f64>> = arch.layer_widths.iter().map(|&w| vec![0.0; w]).collect();
    let mut dc_carry: Vec<Vec<f64>> = arch.layer_widths.iter().map(|&w| vec![0.0; w]).collect();
    // dL/dw_t contribution from the first layer at t+1 (delayed connection)
    let mut dw_pending = vec![0.0; win_cfg.alphabet_size];
    // dL/dκ_{t+1} for the location recursion
    let mut dkappa_next = vec![0.0; win_cfg.mixtures];

    // (h, c) entering timestep t for a layer
    let state_before = |t: usize, layer: usize| -> (&[f64], &[f64]) {
        if t == 0 {
            // fresh start: zero states; borrow zeros from a static-ish buffer
            (&[], &[])
        } else {
            let prev = &fwd.steps[t - 1].layers[layer];
            (&prev.h, &prev.c)
        }
    };
    let zero_states: Vec<LayerState> = crate::lstm::fresh_states(arch);

    for t in (0..t_len).rev() {
        let step = &fwd.steps[t];
        let hs: Vec<&[f64]> = step.layers.iter().map(|c| &c.h[..]).collect();

        let mut dh: Vec<Vec<f64>> = std::mem::take(&mut dh_carry);
        output_backward(params, &mut grads, &hs, &dyhat_seq[t], &mut dh);

        let mut next_dh: Vec<Vec<f64>> = arch.layer_widths.iter().map(|&w| vec![0.0; w]).collect();
        let mut next_dc: Vec<Vec<f64>> = arch.layer_widths.iter().map(|&w| vec![0.0; w]).collect();

        // upper layers consume w_t directly
        let mut dw_t = std::mem::replace(&mut dw_pending, vec![0.0; win_cfg.alphabet_size]);
        for n in (1..n_layers).rev() {
            let (h_prev, c_prev) = {
                let (h, c) = state_before(t, n);
                if h.is_empty() {
                    (&zero_states[n].h[..], &zero_states[n].c[..])
                } else {
                    (h, c)
                }
            };
            let out = lstm_cell_backward(
                params,
                &mut grads,
                n,
                &step.layers[n],
                CellInputs {
                    x: &fwd.inputs[t],
                    below: Some(&step.layers[n - 1].h),
                    window: Some(&step.win.w),
                },
                h_prev,
                c_prev,
                &dh[n],
                &dc_carry[n],
                clip,
            );
            for (a, b) in dh[n - 1].iter_mut().zip(out.dbelow.unwrap().iter()) {
                *a += b;
            }
            for (a, b) in dw_t.iter_mut().zip(out.dwindow.unwrap().iter()) {
                *a += b;
            }
            next_dh[n] = out.dh_prev;
            next_dc[n] = out.dc_prev;
        }

        // window weights, then the parameter projection back into h¹
        let wb = window_backward(&step.win, chars, &dw_t, &dkappa_next)?;
        dkappa_next = wb.dkappa;
        window_proj_backward(params, &mut grads, &step.layers[0].h, &wb.d_p_hat, &mut dh[0]);

        // first layer consumed w_{t-1}
        let w_prev_owned;
        let w_prev: &[f64] = if t == 0 {
            w_prev_owned = vec![0.0; win_cfg.alphabet_size];
            &w_prev_owned
        } else {
            &fwd.steps[t - 1].win.w
        };
        let (h_prev, c_prev) = {
            let (h, c) = state_before(t, 0);
            if h.is_empty() {
                (&zero_states[0].h[..], &zero_states[0].c[..])
            } else {
                (h, c)
            }
        };
        let out = lstm_cell_backward(
            params,
            &mut grads,
            0,
            &step.layers[0],
            CellInputs {
                x: &fwd.inputs[t],
                below: None,
                window: Some(w_prev),
            },
            h_prev,
            c_prev,
            &dh[0],
            &dc_carry[0],
            clip,
        );
        if t > 0 {
            dw_pending = out.dwindow.unwrap();
        }
        next_dh[0] = out.dh_prev;
        next_dc[0] = out.dc_prev;

        dh_carry = next_dh;
        dc_carry = next_dc;
    }

    Ok(SynthBackward { grads })
}
