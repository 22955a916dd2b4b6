//! Mixture-density output head for pen offsets: a mixture of M bivariate
//! Gaussians for (Δx, Δy) plus a Bernoulli end-of-stroke probability.
//!
//! The raw network output ŷ has length 6M+1, laid out as
//! `[ê | π̂₁..π̂_M | μ̂x₁..μ̂x_M | μ̂y₁..μ̂y_M | σ̂x₁..σ̂x_M | σ̂y₁..σ̂y_M | ρ̂₁..ρ̂_M]`.
//! The end-of-stroke squashing is e = 1/(1+exp(ê)) — larger ê means *smaller*
//! e — and the analytic gradients below are consistent with that convention
//! rather than "corrected". Densities and responsibilities are evaluated in
//! log space throughout; the direct product form underflows too easily.

use crate::error::{Error, Result};
use crate::numkit::{logsumexp, softmax_stable, softplus, Rng};

/// Correlations are pulled just inside ±1 after the tanh squashing so the
/// 1/(1−ρ²) factors in the density and gradients stay finite.
const RHO_LIMIT: f64 = 1.0 - 1e-6;

/// One timestep's predictive distribution after squashing.
#[derive(Clone, Debug)]
pub struct MixtureOut {
    /// End-of-stroke probability, in (0,1).
    pub eos: f64,
    /// Component weights π, positive and summing to 1.
    pub weights: Vec<f64>,
    /// Component means μ.
    pub means: Vec<[f64; 2]>,
    /// Component standard deviations σ, strictly positive.
    pub devs: Vec<[f64; 2]>,
    /// Component correlations ρ, in (−1, 1).
    pub corrs: Vec<f64>,
}

impl MixtureOut {
    pub fn components(&self) -> usize {
        self.weights.len()
    }
}

/// Intermediates kept from the loss for the backward pass: component
/// responsibilities γ, the quadratic form Z and C = 1/(1−ρ²).
#[derive(Clone, Debug)]
pub struct MdnBackCache {
    pub resp: Vec<f64>,
    pub z: Vec<f64>,
    pub cinv: Vec<f64>,
}

/// Network output width needed for M mixture components.
pub fn output_len(components: usize) -> usize {
    6 * components + 1
}

fn check_len(yhat: &[f64], components: usize, op: &'static str) -> Result<()> {
    if yhat.len() != output_len(components) {
        return Err(Error::shape(
            op,
            format!(
                "output has length {}, expected 6*{}+1 = {}",
                yhat.len(),
                components,
                output_len(components)
            ),
        ));
    }
    Ok(())
}

fn split_with_bias(yhat: &[f64], components: usize, bias: f64) -> MixtureOut {
    let m = components;
    let e_hat = yhat[0];
    let pi_hat = &yhat[1..1 + m];
    let mu_x = &yhat[1 + m..1 + 2 * m];
    let mu_y = &yhat[1 + 2 * m..1 + 3 * m];
    let sig_x = &yhat[1 + 3 * m..1 + 4 * m];
    let sig_y = &yhat[1 + 4 * m..1 + 5 * m];
    let rho_hat = &yhat[1 + 5 * m..1 + 6 * m];

    let scaled: Vec<f64> = pi_hat.iter().map(|p| p * (1.0 + bias)).collect();
    let weights = softmax_stable(&scaled);
    MixtureOut {
        eos: 1.0 / (1.0 + e_hat.exp()),
        weights,
        means: (0..m).map(|j| [mu_x[j], mu_y[j]]).collect(),
        devs: (0..m)
            .map(|j| [(sig_x[j] - bias).exp(), (sig_y[j] - bias).exp()])
            .collect(),
        corrs: rho_hat
            .iter()
            .map(|r| r.tanh().clamp(-RHO_LIMIT, RHO_LIMIT))
            .collect(),
    }
}

/// Squash the raw output vector into a valid mixture.
pub fn split_outputs(yhat: &[f64], components: usize) -> Result<MixtureOut> {
    check_len(yhat, components, "split_outputs")?;
    Ok(split_with_bias(yhat, components, 0.0))
}

/// The probability-bias transform used at sampling time: σ = exp(σ̂ − b) and
/// π = softmax(π̂·(1+b)); e, μ, ρ are untouched. b = 0 recovers
/// `split_outputs` exactly; large b concentrates all weight on the most
/// probable component and shrinks its spread towards zero.
pub fn apply_bias(yhat: &[f64], components: usize, bias: f64) -> Result<MixtureOut> {
    check_len(yhat, components, "apply_bias")?;
    if bias < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "probability bias must be >= 0, got {}",
            bias
        )));
    }
    Ok(split_with_bias(yhat, components, bias))
}

/// Log of the bivariate Gaussian density, evaluated directly in log space:
/// −log(2π σ₁σ₂ √(1−ρ²)) − Z / (2(1−ρ²)). Also returns Z and C = 1/(1−ρ²).
pub fn bivariate_logdensity_parts(
    x: [f64; 2],
    mu: [f64; 2],
    sigma: [f64; 2],
    rho: f64,
) -> (f64, f64, f64) {
    debug_assert!(sigma[0] > 0.0 && sigma[1] > 0.0);
    debug_assert!(rho.abs() < 1.0);
    let dx = (x[0] - mu[0]) / sigma[0];
    let dy = (x[1] - mu[1]) / sigma[1];
    let z = dx * dx + dy * dy - 2.0 * rho * dx * dy;
    let one_minus_rho2 = 1.0 - rho * rho;
    let c = 1.0 / one_minus_rho2;
    let log_norm = -(2.0 * std::f64::consts::PI * sigma[0] * sigma[1] * one_minus_rho2.sqrt()).ln();
    (log_norm - z * c / 2.0, z, c)
}

pub fn bivariate_logdensity(x: [f64; 2], mu: [f64; 2], sigma: [f64; 2], rho: f64) -> f64 {
    bivariate_logdensity_parts(x, mu, sigma, rho).0
}

/// Negative log-likelihood of the observed next point under the mixture,
/// in nats, plus the cache for `mdn_backward`.
///
/// loss = −log Σ_j π_j N_j(Δx, Δy) − [eos=1] log e − [eos=0] log(1−e)
pub fn mdn_step_loss(mix: &MixtureOut, x_next: [f64; 3]) -> (f64, MdnBackCache) {
    let m = mix.components();
    debug_assert!(x_next[2] == 0.0 || x_next[2] == 1.0, "eos must be binary");

    let mut log_terms = Vec::with_capacity(m);
    let mut zs = Vec::with_capacity(m);
    let mut cs = Vec::with_capacity(m);
    for j in 0..m {
        let (logn, z, c) = bivariate_logdensity_parts(
            [x_next[0], x_next[1]],
            mix.means[j],
            mix.devs[j],
            mix.corrs[j],
        );
        log_terms.push(mix.weights[j].ln() + logn);
        zs.push(z);
        cs.push(c);
    }
    let log_mix = logsumexp(&log_terms);
    let resp = softmax_stable(&log_terms);

    // log e = -softplus(ê) under e = 1/(1+exp(ê)); expressed through e itself
    // the stable forms are ln(e) and ln(1-e) with e already squashed
    let bern = if x_next[2] == 1.0 {
        -mix.eos.ln()
    } else {
        -(1.0 - mix.eos).ln()
    };

    (-log_mix + bern, MdnBackCache { resp, z: zs, cinv: cs })
}

/// Evaluation-only density of one step (no cache), in nats.
pub fn mdn_step_nll(mix: &MixtureOut, x_next: [f64; 3]) -> f64 {
    mdn_step_loss(mix, x_next).0
}

/// Analytic loss derivatives with respect to every raw output slot.
///
/// ê-slot: x₃ − e; π̂-slots: π − γ; the μ̂/σ̂/ρ̂ slots are −γ times the
/// log-density derivatives, with the squashing chain rules folded in.
pub fn mdn_backward(mix: &MixtureOut, cache: &MdnBackCache, x_next: [f64; 3]) -> Vec<f64> {
    let m = mix.components();
    let mut dyhat = vec![0.0; output_len(m)];

    dyhat[0] = x_next[2] - mix.eos;

    for j in 0..m {
        let gamma = cache.resp[j];
        let pi = mix.weights[j];
        let [mu_x, mu_y] = mix.means[j];
        let [sx, sy] = mix.devs[j];
        let rho = mix.corrs[j];
        let c = cache.cinv[j];
        let z = cache.z[j];
        let dx = (x_next[0] - mu_x) / sx;
        let dy = (x_next[1] - mu_y) / sy;

        dyhat[1 + j] = pi - gamma;
        dyhat[1 + m + j] = -gamma * (c / sx) * (dx - rho * dy);
        dyhat[1 + 2 * m + j] = -gamma * (c / sy) * (dy - rho * dx);
        dyhat[1 + 3 * m + j] = -gamma * (c * dx * (dx - rho * dy) - 1.0);
        dyhat[1 + 4 * m + j] = -gamma * (c * dy * (dy - rho * dx) - 1.0);
        dyhat[1 + 5 * m + j] = -gamma * (dx * dy + rho * (1.0 - c * z));
    }
    dyhat
}

/// Draw (Δx, Δy, eos): component by its weight, offsets from that bivariate
/// Gaussian, end-of-stroke as a Bernoulli.
pub fn mdn_sample(mix: &MixtureOut, rng: &mut Rng) -> Result<[f64; 3]> {
    let j = rng.sample_categorical(&mix.weights)?;
    let [x, y] = rng.sample_bivariate_gaussian(mix.means[j], mix.devs[j], mix.corrs[j])?;
    let eos = if rng.bernoulli(mix.eos) { 1.0 } else { 0.0 };
    Ok([x, y, eos])
}

/// Stable log of the Bernoulli factor on its own; used by tests to pin the
/// ê convention.
pub fn log_eos_prob(e_hat: f64, eos: bool) -> f64 {
    if eos {
        -softplus(e_hat)
    } else {
        -softplus(-e_hat)
    }
}
