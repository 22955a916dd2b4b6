//! Minimal dense linear algebra, numerically stable reductions, and seedable
//! random sampling. Everything is f64; log-space math elsewhere relies on the
//! reductions here staying exact under large-magnitude inputs.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Logistic sigmoid.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// log(1 + e^x) without overflow for large |x|.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Dense row-major matrix of f64.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Matrix::from_vec",
                format!("{}x{} needs {} entries, got {}", rows, cols, rows * cols, data.len()),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }

    /// Dense product W·x.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::shape(
                "matvec",
                format!("matrix is {}x{}, vector has length {}", self.rows, self.cols, x.len()),
            ));
        }
        let mut out = vec![0.0; self.rows];
        matvec_acc(&self.data, self.rows, self.cols, x, &mut out);
        Ok(out)
    }
}

/// out += W·x where `w` is the row-major rows×cols storage of W.
pub fn matvec_acc(w: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    debug_assert_eq!(out.len(), rows);
    for i in 0..rows {
        let row = &w[i * cols..(i + 1) * cols];
        let mut acc = 0.0;
        for (wij, xj) in row.iter().zip(x.iter()) {
            acc += wij * xj;
        }
        out[i] += acc;
    }
}

/// out += Wᵀ·d, the adjoint of `matvec_acc` used when backpropagating.
pub fn matvec_t_acc(w: &[f64], rows: usize, cols: usize, d: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(d.len(), rows);
    debug_assert_eq!(out.len(), cols);
    for i in 0..rows {
        let row = &w[i * cols..(i + 1) * cols];
        let di = d[i];
        for (oj, wij) in out.iter_mut().zip(row.iter()) {
            *oj += di * wij;
        }
    }
}

/// Gw += d·xᵀ, the weight-gradient accumulation for a rows×cols matrix.
pub fn outer_acc(gw: &mut [f64], rows: usize, cols: usize, d: &[f64], x: &[f64]) {
    debug_assert_eq!(gw.len(), rows * cols);
    debug_assert_eq!(d.len(), rows);
    debug_assert_eq!(x.len(), cols);
    for i in 0..rows {
        let grow = &mut gw[i * cols..(i + 1) * cols];
        let di = d[i];
        for (gij, xj) in grow.iter_mut().zip(x.iter()) {
            *gij += di * xj;
        }
    }
}

/// Max-subtracted softmax. Output entries are positive and sum to 1 within
/// 1e-12 for any finite input, including entries of magnitude 1e3.
pub fn softmax_stable(v: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    softmax_stable_inplace(&mut out);
    out
}

pub fn softmax_stable_inplace(v: &mut [f64]) {
    if v.is_empty() {
        return;
    }
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// log Σ exp(vᵢ) via max subtraction. Empty input yields -inf (log of an
/// empty sum).
pub fn logsumexp(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NEG_INFINITY;
    }
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = v.iter().map(|x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Seedable pseudorandom generator. The stream is a fixed function of the
/// seed and does not depend on the platform; one `Rng` per thread of
/// execution.
#[derive(Clone, Debug)]
pub struct Rng {
    inner: ChaCha8Rng,
    spare_normal: Option<f64>,
}

impl Rng {
    pub fn seed_from(seed: u64) -> Self {
        Rng {
            inner: ChaCha8Rng::seed_from_u64(seed),
            spare_normal: None,
        }
    }

    /// Uniform draw in [0, 1).
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        // 53 mantissa bits of a u64; identical on every platform.
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Standard normal via Box–Muller; the second variate of each pair is
    /// cached so draws stay cheap.
    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = 1.0 - self.next_f64(); // (0, 1], keeps ln finite
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Index drawn from the categorical distribution `p`. Requires entries
    /// ≥ 0 summing to 1 within 1e-9.
    pub fn sample_categorical(&mut self, p: &[f64]) -> Result<usize> {
        if p.is_empty() {
            return Err(Error::InvalidDistribution("empty probability vector".into()));
        }
        let mut sum = 0.0;
        for (i, &pi) in p.iter().enumerate() {
            if pi.is_nan() || pi < 0.0 {
                return Err(Error::InvalidDistribution(format!(
                    "entry {} is {} (negative or NaN)",
                    i, pi
                )));
            }
            sum += pi;
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidDistribution(format!("entries sum to {}", sum)));
        }
        let r = self.next_f64() * sum;
        let mut cum = 0.0;
        let mut last_nonzero = 0;
        for (i, &pi) in p.iter().enumerate() {
            if pi > 0.0 {
                last_nonzero = i;
            }
            cum += pi;
            if cum > r {
                return Ok(i);
            }
        }
        Ok(last_nonzero)
    }

    /// Correlated bivariate Gaussian draw:
    /// x₁ = μ₁ + σ₁z₁, x₂ = μ₂ + σ₂(ρz₁ + √(1−ρ²)z₂),
    /// which realises covariance [[σ₁², ρσ₁σ₂], [ρσ₁σ₂, σ₂²]].
    pub fn sample_bivariate_gaussian(
        &mut self,
        mu: [f64; 2],
        sigma: [f64; 2],
        rho: f64,
    ) -> Result<[f64; 2]> {
        if !(rho > -1.0 && rho < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "correlation must lie in (-1, 1), got {}",
                rho
            )));
        }
        if !(sigma[0] > 0.0 && sigma[1] > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "standard deviations must be positive, got ({}, {})",
                sigma[0], sigma[1]
            )));
        }
        let z1 = self.standard_normal();
        let z2 = self.standard_normal();
        let x1 = mu[0] + sigma[0] * z1;
        let x2 = mu[1] + sigma[1] * (rho * z1 + (1.0 - rho * rho).sqrt() * z2);
        Ok([x1, x2])
    }
}
