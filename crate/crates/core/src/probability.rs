//! Gaussian divergences, reparameterized samplers and the MMD estimator.
//!
//! All KL divergences carry the usual ½ factor. The Monte Carlo oracle at
//! the bottom of the module is what the closed forms are checked against.

use crate::error::{Error, Result};
use crate::rng::Substream;
use crate::tensor::Tensor;

/// Encoder log-variances are clamped into this range before exponentiation.
pub const LOG_VAR_MIN: f64 = -30.0;
pub const LOG_VAR_MAX: f64 = 20.0;

/// Diagonal Gaussian `N(mean, diag(exp(log_var)))`, one per row when the
/// tensors are `[m, k]`.
#[derive(Debug, Clone)]
pub struct DiagGaussian {
    pub mean: Tensor,
    pub log_var: Tensor,
}

impl DiagGaussian {
    /// Clamps `log_var` into `[LOG_VAR_MIN, LOG_VAR_MAX]`.
    pub fn new(mean: Tensor, log_var: Tensor) -> Result<Self> {
        if mean.shape() != log_var.shape() {
            return Err(Error::dim(format!(
                "mean {:?} and log_var {:?} differ in shape",
                mean.shape(),
                log_var.shape()
            )));
        }
        let log_var = log_var.clamp(LOG_VAR_MIN, LOG_VAR_MAX)?;
        Ok(Self { mean, log_var })
    }

    pub fn from_vecs(mean: &[f64], variance: &[f64]) -> Result<Self> {
        let k = mean.len();
        if variance.iter().any(|&v| v <= 0.0) {
            return Err(Error::Domain("variances must be positive".into()));
        }
        Self::new(
            Tensor::new(mean.to_vec(), &[k])?,
            Tensor::new(variance.iter().map(|v| v.ln()).collect(), &[k])?,
        )
    }

    pub fn dim(&self) -> usize {
        *self.mean.shape().last().unwrap_or(&1)
    }

    pub fn std_dev(&self) -> Result<Tensor> {
        self.log_var.scale(0.5)?.exp()
    }

    /// Log density of a single-row Gaussian at `x`.
    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        let (mu, lv) = (self.mean.data(), self.log_var.data());
        -0.5 * x
            .iter()
            .zip(mu)
            .zip(lv)
            .map(|((x, m), l)| (x - m).powi(2) / l.exp() + l + (2.0 * std::f64::consts::PI).ln())
            .sum::<f64>()
    }
}

/// Gaussian with full covariance; construction checks the covariance
/// factorizes.
#[derive(Debug, Clone)]
pub struct FullGaussian {
    pub mean: Tensor,
    pub cov: Tensor,
}

impl FullGaussian {
    pub fn new(mean: Tensor, cov: Tensor) -> Result<Self> {
        let k = mean.numel();
        if mean.rank() != 1 || cov.shape() != [k, k] {
            return Err(Error::dim(format!(
                "mean {:?} and covariance {:?} are incompatible",
                mean.shape(),
                cov.shape()
            )));
        }
        cov.detach().cholesky()?;
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.numel()
    }
}

/// `KL(N(μ, diag σ²) ‖ N(0, I)) = ½ Σⱼ (μⱼ² + σⱼ² − 1 − log σⱼ²)`.
///
/// For `[m, k]` parameters this returns the `m` per-row divergences.
pub fn kl_diag_to_std(q: &DiagGaussian) -> Result<Tensor> {
    let terms = q
        .mean
        .square()?
        .add(&q.log_var.exp()?)?
        .sub(&q.log_var)?
        .add_scalar(-1.0)?;
    let summed = if terms.rank() <= 1 {
        terms.sum()?
    } else {
        terms.sum_axis(terms.rank() - 1)?
    };
    summed.scale(0.5)
}

/// `½ (tr Σ − k − log|Σ|)` for a `k×k` SPD matrix.
fn trace_logdet_bracket(sigma: &Tensor) -> Result<Tensor> {
    let k = sigma.shape().first().copied().unwrap_or(0) as f64;
    sigma
        .trace()?
        .sub(&sigma.logdet_spd()?)?
        .add_scalar(-k)?
        .scale(0.5)
}

/// `KL(N(β, Σ) ‖ N(0, I)) = ½ (tr Σ + βᵀβ − k − log|Σ|)`.
pub fn kl_full_to_std(q: &FullGaussian) -> Result<Tensor> {
    let beta_sq = q.mean.square()?.sum()?.scale(0.5)?;
    trace_logdet_bracket(&q.cov)?.add(&beta_sq)
}

/// `KL(N(μ, s Σ) ‖ N(μ, s I)) = ½ (tr Σ − k − log|Σ|)` for any shared mean
/// `μ` and scale `s > 0`; neither enters the result, so neither is taken.
pub fn kl_conditional_hebae(sigma: &Tensor) -> Result<Tensor> {
    trace_logdet_bracket(sigma)
}

/// `z = μ + σ ⊙ ε` with `σ = exp(½ log_var)`. `noise` has the shape of the
/// mean and is treated as a constant.
pub fn reparam_diag(q: &DiagGaussian, noise: &Tensor) -> Result<Tensor> {
    if noise.shape() != q.mean.shape() {
        return Err(Error::dim("noise shape must match the mean"));
    }
    q.mean.add(&q.std_dev()?.mul(noise)?)
}

/// Draws the noise for [`reparam_diag`] from `rng`.
pub fn sample_diag(q: &DiagGaussian, rng: &mut Substream) -> Result<Tensor> {
    let noise = Tensor::new(rng.normals(q.mean.numel()), q.mean.shape())?;
    reparam_diag(q, &noise)
}

/// `z = μ + σ ⊙ (R ε)` row by row, for `μ, σ, ε` of shape `[k]` or `[m, k]`
/// and lower-triangular `R` of shape `[k, k]`.
///
/// With σ constant across coordinates the covariance of `z` is `σ² R Rᵀ`;
/// in general it is `diag(σ) R Rᵀ diag(σ)`.
pub fn reparam_full(mu: &Tensor, sigma: &Tensor, r: &Tensor, noise: &Tensor) -> Result<Tensor> {
    let k = *mu.shape().last().unwrap_or(&0);
    if sigma.shape() != mu.shape() || noise.shape() != mu.shape() || r.shape() != [k, k] {
        return Err(Error::dim(format!(
            "reparam_full: mu {:?}, sigma {:?}, R {:?}, noise {:?}",
            mu.shape(),
            sigma.shape(),
            r.shape(),
            noise.shape()
        )));
    }
    for i in 0..k {
        if r.at(i, i) <= 0.0 || (i + 1..k).any(|j| r.at(i, j) != 0.0) {
            return Err(Error::Domain(
                "R must be lower triangular with a positive diagonal".into(),
            ));
        }
    }
    let rows = if mu.rank() == 1 { 1 } else { mu.shape()[0] };
    // each row εᵢ maps to (R εᵢ)ᵀ = εᵢᵀ Rᵀ
    let correlated = noise
        .reshape(&[rows, k])?
        .matmul(&r.transpose()?)?
        .reshape(mu.shape())?;
    mu.add(&sigma.mul(&correlated)?)
}

/// Inverse multiquadric kernel `C / (C + ‖a − b‖²)`.
pub fn imq_kernel(a: &[f64], b: &[f64], c: f64) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    c / (c + d)
}

/// Kernel constant `C = 2 k s²` for latent dimension `k` and scale `s`.
pub fn imq_constant(k: usize, kernel_scale: f64) -> f64 {
    2.0 * k as f64 * kernel_scale * kernel_scale
}

/// Unbiased (U-statistic) squared MMD between the rows of `x[n×k]` and
/// `y[m×k]` under the inverse multiquadric kernel.
pub fn mmd_unbiased(x: &Tensor, y: &Tensor, kernel_scale: f64) -> Result<Tensor> {
    let (n, m) = (x.shape().first().copied(), y.shape().first().copied());
    let (Some(n), Some(m)) = (n, m) else {
        return Err(Error::dim("mmd needs matrices"));
    };
    if n < 2 || m < 2 {
        return Err(Error::contract(format!(
            "unbiased MMD needs at least two samples per side, got {n} and {m}"
        )));
    }
    if !(kernel_scale > 0.0) {
        return Err(Error::contract("kernel scale must be positive"));
    }
    let k = x.shape()[1];
    let c = imq_constant(k, kernel_scale);
    let c_t = Tensor::scalar(c)?;
    let kernel = |a: &Tensor, b: &Tensor| -> Result<Tensor> {
        c_t.div(&a.pairwise_sq_dist(b)?.add_scalar(c)?)
    };
    let (nf, mf) = (n as f64, m as f64);
    // diagonal kernel entries are exactly 1 and drop out of the U-statistic
    let within_x = kernel(x, x)?.sum()?.add_scalar(-nf)?.scale(1.0 / (nf * (nf - 1.0)))?;
    let within_y = kernel(y, y)?.sum()?.add_scalar(-mf)?.scale(1.0 / (mf * (mf - 1.0)))?;
    let cross = kernel(x, y)?.sum()?.scale(2.0 / (nf * mf))?;
    within_x.add(&within_y)?.sub(&cross)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
}

impl McEstimate {
    /// Whether `value` lies within `z` standard errors of the estimate.
    pub fn agrees_with(&self, value: f64, z: f64) -> bool {
        (self.estimate - value).abs() <= z * self.std_error
    }
}

/// Monte Carlo estimate of `KL(p ‖ q) = E_p[log p − log q]` from `n` draws
/// of `sample_p`, with its standard error.
pub fn mc_kl_oracle(
    mut sample_p: impl FnMut(&mut Substream) -> Vec<f64>,
    log_p: impl Fn(&[f64]) -> f64,
    log_q: impl Fn(&[f64]) -> f64,
    n: usize,
    rng: &mut Substream,
) -> Result<McEstimate> {
    if n < 100 {
        return Err(Error::contract(format!(
            "Monte Carlo KL needs at least 100 draws, got {n}"
        )));
    }
    // Welford
    let (mut mean, mut m2) = (0.0, 0.0);
    for i in 0..n {
        let x = sample_p(rng);
        let v = log_p(&x) - log_q(&x);
        let delta = v - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (v - mean);
    }
    let var = m2 / (n - 1) as f64;
    Ok(McEstimate {
        estimate: mean,
        std_error: (var / n as f64).sqrt(),
    })
}
