//! Shared oracle machinery for the integration suites: central finite
//! differences over the flat parameter vector, independent of every analytic
//! gradient path they are used to check.

#![allow(dead_code)]

use scrawl_core::lstm::ParamStore;

pub const FD_STEP: f64 = 1e-5;

/// Relative error with denominator max(|a|, |b|, 1e-8).
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Central finite differences of `loss` over every entry of the flat
/// parameter vector. `params` is restored exactly before returning.
#[allow(clippy::needless_range_loop)]
pub fn fd_gradient(params: &mut ParamStore, loss: &mut dyn FnMut(&ParamStore) -> f64) -> Vec<f64> {
    let n = params.len();
    let mut grad = vec![0.0; n];
    for idx in 0..n {
        let orig = params.values()[idx];
        params.values_mut()[idx] = orig + FD_STEP;
        let up = loss(params);
        params.values_mut()[idx] = orig - FD_STEP;
        let down = loss(params);
        params.values_mut()[idx] = orig;
        grad[idx] = (up - down) / (2.0 * FD_STEP);
    }
    grad
}

/// Largest relative error between analytic and numeric gradients, along with
/// the offending index.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> (f64, usize) {
    assert_eq!(analytic.len(), numeric.len());
    let mut worst = (0.0, 0);
    for (i, (&a, &n)) in analytic.iter().zip(numeric.iter()).enumerate() {
        let e = rel_err(a, n);
        if e > worst.0 {
            worst = (e, i);
        }
    }
    worst
}

/// Names the layout view containing a flat index, for failure messages.
pub fn view_of(params: &ParamStore, idx: usize) -> String {
    for (name, range, _) in params.layout().named_views() {
        if range.contains(&idx) {
            return format!("{} [{}]", name, idx - range.start);
        }
    }
    format!("<unmapped {}>", idx)
}
