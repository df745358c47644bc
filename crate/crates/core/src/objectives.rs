//! Training losses: reconstruction plus a λ-weighted regularizer, minimized
//! as the negated evidence lower bound.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::models::{BatchPosteriorStats, ForwardResult};
use crate::probability::{kl_diag_to_std, mmd_unbiased, DiagGaussian};
use crate::tensor::Tensor;

/// Probabilities are clamped to `[ε, 1 − ε]` inside the cross-entropy.
pub const BCE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReconKind {
    #[default]
    SquaredError,
    BernoulliCe,
}

impl ReconKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ReconKind::SquaredError => "se",
            ReconKind::BernoulliCe => "bce",
        }
    }
}

impl fmt::Display for ReconKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ReconKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "se" | "squared_error" => Ok(ReconKind::SquaredError),
            "bce" | "bernoulli_ce" => Ok(ReconKind::BernoulliCe),
            other => Err(Error::Config(format!(
                "unknown reconstruction loss `{other}` (expected se or bce)"
            ))),
        }
    }
}

/// Per-term diagnostics reported next to the loss.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    /// `tr Σ̂` of the jittered batch covariance (HEBAE).
    pub trace_sigma: Option<f64>,
    /// `log|Σ̂|` of the jittered batch covariance (HEBAE).
    pub logdet_sigma: Option<f64>,
    /// `‖β̂‖²` (HEBAE).
    pub beta_sq: Option<f64>,
    /// Mean of `exp(log_var)` over batch and coordinates; 0 for WAE.
    pub mean_sigma2: f64,
}

#[derive(Debug, Clone)]
pub struct LossBreakdown {
    /// `recon + lambda · regularizer`, on the graph.
    pub total: Tensor,
    pub recon: Tensor,
    pub regularizer: Tensor,
    pub lambda: f64,
    pub terms: LossTerms,
}

impl LossBreakdown {
    pub fn total_value(&self) -> f64 {
        self.total.data()[0]
    }

    pub fn recon_value(&self) -> f64 {
        self.recon.data()[0]
    }

    pub fn regularizer_value(&self) -> f64 {
        self.regularizer.data()[0]
    }

    /// The loss negated, i.e. the evidence lower bound estimate.
    pub fn elbo(&self) -> f64 {
        -self.total_value()
    }
}

/// Reconstruction error summed over pixels and averaged over the batch.
pub fn recon_loss(x: &Tensor, x_prime: &Tensor, kind: ReconKind) -> Result<Tensor> {
    if x.shape() != x_prime.shape() || x.rank() != 2 {
        return Err(Error::dim(format!(
            "reconstruction shapes differ or are not matrices: {:?} vs {:?}",
            x.shape(),
            x_prime.shape()
        )));
    }
    let m = x.shape()[0];
    if m == 0 {
        return Err(Error::contract("empty batch"));
    }
    let per_batch = match kind {
        ReconKind::SquaredError => x.sub(x_prime)?.square()?.sum()?,
        ReconKind::BernoulliCe => {
            if x_prime.data().iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::Domain("cross-entropy needs reconstructions in [0, 1]".into()));
            }
            let p = x_prime.clamp(BCE_EPS, 1.0 - BCE_EPS)?;
            let q = p.neg()?.add_scalar(1.0)?;
            let one_minus_x = x.neg()?.add_scalar(1.0)?;
            x.mul(&p.log()?)?.add(&one_minus_x.mul(&q.log()?)?)?.sum()?.neg()?
        }
    };
    per_batch.scale(1.0 / m as f64)
}

/// Reconstruction term averaged over the Monte Carlo samples of `fwd`.
fn mc_recon(batch: &Tensor, fwd: &ForwardResult, kind: ReconKind) -> Result<Tensor> {
    let mut acc: Option<Tensor> = None;
    for xr in &fwd.reconstructions {
        let term = recon_loss(batch, xr, kind)?;
        acc = Some(match acc {
            Some(a) => a.add(&term)?,
            None => term,
        });
    }
    let total = acc.ok_or_else(|| Error::contract("forward result holds no reconstructions"))?;
    total.scale(1.0 / fwd.reconstructions.len() as f64)
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda >= 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::contract(format!("lambda must be finite and nonnegative, got {lambda}")))
    }
}

fn assemble(recon: Tensor, regularizer: Tensor, lambda: f64, terms: LossTerms) -> Result<LossBreakdown> {
    let total = recon.add(&regularizer.scale(lambda)?)?;
    Ok(LossBreakdown {
        total,
        recon,
        regularizer,
        lambda,
        terms,
    })
}

/// Reconstruction plus λ times the batch mean of the per-sample
/// `KL(q(z|x) ‖ N(0, I))`.
pub fn vae_loss(batch: &Tensor, fwd: &ForwardResult, lambda: f64, kind: ReconKind) -> Result<LossBreakdown> {
    check_lambda(lambda)?;
    let log_var = fwd
        .encoded
        .log_var
        .clone()
        .ok_or_else(|| Error::contract("VAE loss needs encoder log-variances"))?;
    let q = DiagGaussian {
        mean: fwd.encoded.mu.clone(),
        log_var,
    };
    let regularizer = kl_diag_to_std(&q)?.mean()?;
    let terms = LossTerms {
        mean_sigma2: fwd.encoded.mean_variance(),
        ..LossTerms::default()
    };
    assemble(mc_recon(batch, fwd, kind)?, regularizer, lambda, terms)
}

/// `½ (tr Σ + ‖β‖² − k − log|Σ|)` for `Σ = R Rᵀ`, evaluated from the factor:
/// `tr Σ = ‖R‖²_F` and `log|Σ| = 2 Σᵢ log Rᵢᵢ`.
pub fn hebae_regularizer(stats: &BatchPosteriorStats) -> Result<(Tensor, LossTerms)> {
    let k = stats.beta_hat.numel() as f64;
    let trace = stats.r.square()?.sum()?;
    let logdet = stats.r.diag()?.log()?.sum()?.scale(2.0)?;
    let beta_sq = stats.beta_hat.square()?.sum()?;
    let reg = trace.add(&beta_sq)?.sub(&logdet)?.add_scalar(-k)?.scale(0.5)?;
    let terms = LossTerms {
        trace_sigma: Some(trace.data()[0]),
        logdet_sigma: Some(logdet.data()[0]),
        beta_sq: Some(beta_sq.data()[0]),
        mean_sigma2: 0.0,
    };
    Ok((reg, terms))
}

/// Reconstruction plus λ times `KL(N(β̂, Σ̂) ‖ N(0, I))` of the batch
/// statistics. The per-sample variances only reach the loss through the
/// reconstruction.
pub fn hebae_loss(
    batch: &Tensor,
    fwd: &ForwardResult,
    stats: &BatchPosteriorStats,
    lambda: f64,
    kind: ReconKind,
) -> Result<LossBreakdown> {
    check_lambda(lambda)?;
    let (regularizer, mut terms) = hebae_regularizer(stats)?;
    terms.mean_sigma2 = fwd.encoded.mean_variance();
    assemble(mc_recon(batch, fwd, kind)?, regularizer, lambda, terms)
}

/// Reconstruction plus λ times the unbiased MMD between the latent batch and
/// a fresh prior sample of the same size.
pub fn wae_loss(
    batch: &Tensor,
    fwd: &ForwardResult,
    prior_sample: &Tensor,
    lambda: f64,
    kernel_scale: f64,
    kind: ReconKind,
) -> Result<LossBreakdown> {
    check_lambda(lambda)?;
    let regularizer = mmd_unbiased(fwd.z(), prior_sample, kernel_scale)?;
    assemble(mc_recon(batch, fwd, kind)?, regularizer, lambda, LossTerms::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{estimate_batch_stats, EncoderOutput};
    use crate::probability::reparam_full;
    use crate::rng::{Purpose, RngStream};
    use crate::testing::{finite_diff, rel_err, uniform_vec};

    fn t(data: &[f64], shape: &[usize]) -> Tensor {
        Tensor::new(data.to_vec(), shape).unwrap()
    }

    fn fwd_from(mu: Tensor, log_var: Option<Tensor>, z: Tensor, recon: Tensor) -> ForwardResult {
        ForwardResult {
            latents: vec![z],
            reconstructions: vec![recon],
            encoded: EncoderOutput { mu, log_var },
            stats: None,
        }
    }

    #[test]
    fn recon_examples() {
        let x = t(&[0.2, 0.9, 0.4, 0.0], &[2, 2]);
        assert_eq!(recon_loss(&x, &x, ReconKind::SquaredError).unwrap().item().unwrap(), 0.0);
        let one = t(&[1.0], &[1, 1]);
        let half = t(&[0.5], &[1, 1]);
        assert_eq!(recon_loss(&one, &half, ReconKind::SquaredError).unwrap().item().unwrap(), 0.25);
        let bce = recon_loss(&one, &half, ReconKind::BernoulliCe).unwrap().item().unwrap();
        assert!((bce - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn recon_averages_over_batch() {
        let x = t(&[1.0, 1.0], &[2, 1]);
        let xp = t(&[0.5, 0.0], &[2, 1]);
        let v = recon_loss(&x, &xp, ReconKind::SquaredError).unwrap().item().unwrap();
        assert!((v - (0.25 + 1.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn recon_errors() {
        let x = t(&[1.0, 0.0], &[1, 2]);
        assert!(matches!(recon_loss(&x, &t(&[1.0], &[1, 1]), ReconKind::SquaredError), Err(Error::Dimension(_))));
        assert!(matches!(recon_loss(&x, &t(&[1.5, 0.0], &[1, 2]), ReconKind::BernoulliCe), Err(Error::Domain(_))));
    }

    #[test]
    fn bce_is_finite_at_saturation() {
        let x = t(&[1.0, 0.0], &[1, 2]);
        let xp = t(&[0.0, 1.0], &[1, 2]);
        let v = recon_loss(&x, &xp, ReconKind::BernoulliCe).unwrap().item().unwrap();
        assert!(v.is_finite() && v > 50.0);
    }

    #[test]
    fn vae_examples() {
        let x = t(&[0.3, 0.6], &[1, 2]);
        let xp = t(&[0.5, 0.5], &[1, 2]);
        let one_sample = |mu: f64, lv: f64, lambda: f64| {
            let f = fwd_from(t(&[mu], &[1, 1]), Some(t(&[lv], &[1, 1])), t(&[mu], &[1, 1]), xp.clone());
            vae_loss(&x, &f, lambda, ReconKind::SquaredError).unwrap()
        };
        let l0 = one_sample(1.0, 0.0, 0.0);
        assert_eq!(l0.total_value(), l0.recon_value());
        assert_eq!(one_sample(0.0, 0.0, 1.0).regularizer_value(), 0.0);
        assert!((one_sample(1.0, 0.0, 1.0).regularizer_value() - 0.5).abs() < 1e-15);
        assert!(matches!(
            vae_loss(&x, &fwd_from(t(&[0.0], &[1, 1]), Some(t(&[0.0], &[1, 1])), t(&[0.0], &[1, 1]), xp.clone()), -1.0, ReconKind::SquaredError),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn vae_regularizer_is_mean_of_per_sample_kl() {
        let mu = t(&uniform_vec(1, 12, -2.0, 2.0), &[4, 3]);
        let lv = t(&uniform_vec(2, 12, -1.0, 1.0), &[4, 3]);
        let x = t(&uniform_vec(3, 8, 0.0, 1.0), &[4, 2]);
        let f = fwd_from(mu.clone(), Some(lv.clone()), mu.clone(), x.clone());
        let reg = vae_loss(&x, &f, 1.0, ReconKind::SquaredError).unwrap().regularizer_value();
        let per = (0..4)
            .map(|i| {
                let q = DiagGaussian::from_vecs(&mu.data()[i * 3..i * 3 + 3], &lv.data()[i * 3..i * 3 + 3].iter().map(|v| v.exp()).collect::<Vec<_>>()).unwrap();
                kl_diag_to_std(&q).unwrap().item().unwrap()
            })
            .sum::<f64>()
            / 4.0;
        assert!((reg - per).abs() < 1e-12);
    }

    fn stats_for(beta: &[f64], sigma: &[f64]) -> BatchPosteriorStats {
        let k = beta.len();
        let r = t(sigma, &[k, k]).cholesky().unwrap();
        BatchPosteriorStats {
            beta_hat: t(beta, &[k]),
            sigma_hat: t(sigma, &[k, k]),
            r,
            jitter_used: 0.0,
        }
    }

    fn dummy_fwd() -> (Tensor, ForwardResult) {
        let x = t(&[0.1, 0.7, 0.2, 0.4], &[2, 2]);
        let xp = t(&[0.3, 0.5, 0.5, 0.5], &[2, 2]);
        let mu = t(&[0.0, 0.0, 1.0, 1.0], &[2, 2]);
        (x, fwd_from(mu.clone(), Some(Tensor::zeros(&[2, 2])), mu, xp))
    }

    #[test]
    fn hebae_examples() {
        let (x, f) = dummy_fwd();
        let at_prior = hebae_loss(&x, &f, &stats_for(&[0.0, 0.0], &[1.0, 0.0, 0.0, 1.0]), 3.0, ReconKind::SquaredError).unwrap();
        assert!(at_prior.regularizer_value().abs() < 1e-15);
        assert_eq!(at_prior.total_value(), at_prior.recon_value());

        let s = stats_for(&[0.0, 0.0], &[2.0, 0.0, 0.0, 2.0]);
        let l1 = hebae_loss(&x, &f, &s, 1.0, ReconKind::SquaredError).unwrap();
        assert!((l1.regularizer_value() - 0.306853).abs() < 1e-6);
        assert!((l1.terms.trace_sigma.unwrap() - 4.0).abs() < 1e-12);
        assert!((l1.terms.logdet_sigma.unwrap() - 4.0f64.ln()).abs() < 1e-12);

        let l2 = hebae_loss(&x, &f, &s, 2.0, ReconKind::SquaredError).unwrap();
        assert_eq!(l2.total_value() - l2.recon_value(), 2.0 * (l1.total_value() - l1.recon_value()));
    }

    #[test]
    fn hebae_regularizer_matches_full_kl() {
        use crate::probability::{kl_full_to_std, FullGaussian};
        use crate::testing::random_spd;
        for seed in 0..5 {
            let sigma = random_spd(seed, 3);
            let beta = uniform_vec(seed + 10, 3, -1.0, 1.0);
            let (reg, _) = hebae_regularizer(&stats_for(&beta, &sigma)).unwrap();
            let kl = kl_full_to_std(&FullGaussian::new(t(&beta, &[3]), t(&sigma, &[3, 3])).unwrap()).unwrap();
            assert!((reg.item().unwrap() - kl.item().unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn hebae_regularizer_ignores_log_var() {
        let mu = t(&uniform_vec(4, 10, -1.0, 1.0), &[5, 2]);
        let stats = estimate_batch_stats(&mu, 1e-5).unwrap();
        let x = t(&uniform_vec(5, 15, 0.0, 1.0), &[5, 3]);
        let w = t(&uniform_vec(6, 6, -1.0, 1.0), &[2, 3]);
        let eps = t(&uniform_vec(7, 10, -1.0, 1.0), &[5, 2]);
        let run = |lv: Vec<f64>| {
            let lv = t(&lv, &[5, 2]);
            let sigma = lv.scale(0.5).unwrap().exp().unwrap();
            let z = reparam_full(&mu, &sigma, &stats.r, &eps).unwrap();
            let xr = z.matmul(&w).unwrap().sigmoid().unwrap();
            let f = fwd_from(mu.clone(), Some(lv), z, xr);
            hebae_loss(&x, &f, &stats, 1.0, ReconKind::SquaredError).unwrap()
        };
        let a = run(vec![-1.0; 10]);
        let b = run(uniform_vec(8, 10, -3.0, 1.0));
        assert_eq!(a.regularizer_value().to_bits(), b.regularizer_value().to_bits());
        assert_ne!(a.recon_value(), b.recon_value());
    }

    /// The whole HEBAE objective on a 3-sample, k=2 batch: encoder output
    /// through β̂, Σ̂, the Cholesky factor and the correlated noise.
    #[test]
    fn hebae_loss_gradient_end_to_end() {
        let x = t(&uniform_vec(20, 9, 0.0, 1.0), &[3, 3]);
        let w = t(&uniform_vec(21, 6, -1.0, 1.0), &[2, 3]);
        let eps = t(&uniform_vec(22, 6, -1.5, 1.5), &[3, 2]);
        let loss = |enc: &Tensor| {
            let mu = enc.narrow(1, 0, 2).unwrap();
            let lv = enc.narrow(1, 2, 2).unwrap();
            let stats = estimate_batch_stats(&mu, 1e-5).unwrap();
            let sigma = lv.scale(0.5).unwrap().exp().unwrap();
            let z = reparam_full(&mu, &sigma, &stats.r, &eps).unwrap();
            let xr = z.matmul(&w).unwrap().sigmoid().unwrap();
            let f = fwd_from(mu.clone(), Some(lv), z, xr);
            hebae_loss(&x, &f, &stats, 1.3, ReconKind::SquaredError).unwrap().total
        };
        let enc0 = uniform_vec(23, 12, -1.0, 1.0);
        let leaf = Tensor::parameter(enc0.clone(), &[3, 4]).unwrap();
        loss(&leaf).backward().unwrap();
        let fd = finite_diff(|v| loss(&t(v, &[3, 4])).item().unwrap(), &enc0, 1e-5);
        let err = rel_err(&leaf.grad().unwrap(), &fd);
        assert!(err < 1e-4, "rel err {err:e}");
    }

    #[test]
    fn wae_examples_and_contracts() {
        let mut s = RngStream::new(3).substream(Purpose::Test, 0, 0);
        let z = t(&s.normals(20), &[10, 2]);
        let prior = t(&s.normals(20), &[10, 2]);
        let x = t(&uniform_vec(1, 30, 0.0, 1.0), &[10, 3]);
        let xp = t(&uniform_vec(2, 30, 0.0, 1.0), &[10, 3]);
        let f = fwd_from(z.clone(), None, z.clone(), xp.clone());
        let l0 = wae_loss(&x, &f, &prior, 0.0, 1.0, ReconKind::SquaredError).unwrap();
        assert_eq!(l0.total_value(), l0.recon_value());
        let l10 = wae_loss(&x, &f, &prior, 10.0, 1.0, ReconKind::SquaredError).unwrap();
        assert!((l10.total_value() - l10.recon_value() - 10.0 * l10.regularizer_value()).abs() < 1e-12);

        let z1 = t(&[0.0, 0.0], &[1, 2]);
        let f1 = fwd_from(z1.clone(), None, z1, t(&[0.5, 0.5, 0.5], &[1, 3]));
        let r = wae_loss(&t(&[0.1, 0.2, 0.3], &[1, 3]), &f1, &t(&[0.0, 0.0], &[1, 2]), 10.0, 1.0, ReconKind::SquaredError);
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    #[test]
    fn wae_regularizer_is_unbiased_when_distributions_match() {
        let reps = 300;
        let vals: Vec<f64> = (0..reps)
            .map(|rep| {
                let mut s = RngStream::new(41).substream(Purpose::Test, rep, 0);
                let z = t(&s.normals(64), &[32, 2]);
                let prior = t(&s.normals(64), &[32, 2]);
                let f = fwd_from(z.clone(), None, z, Tensor::zeros(&[32, 1]));
                wae_loss(&Tensor::zeros(&[32, 1]), &f, &prior, 10.0, 1.0, ReconKind::SquaredError)
                    .unwrap()
                    .regularizer_value()
            })
            .collect();
        let mean = vals.iter().sum::<f64>() / reps as f64;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt();
        assert!(mean.abs() < 4.0 * sd / (reps as f64).sqrt(), "mean {mean} sd {sd}");
    }

    /// Linear-Gaussian model with k = 1: `z ~ N(0,1)`, `x | z ~ N(w z + b, ½ I)`.
    /// Squared error is then `−log p(x|z)` up to `(d/2) log π`, so the negated
    /// VAE loss plus that constant must not exceed the analytic `log p(x)`.
    #[test]
    fn negated_vae_loss_lower_bounds_linear_gaussian_evidence() {
        use nalgebra::{DMatrix, DVector};
        let d = 3;
        let samples = 4000;
        for trial in 0..50u64 {
            let p = uniform_vec(100 + trial, 2 * d + 3, -1.5, 1.5);
            let (w, b) = (&p[..d], &p[d..2 * d]);
            let (mu, lv) = (p[2 * d], p[2 * d + 1]);
            let x: Vec<f64> = uniform_vec(500 + trial, d, -1.0, 1.0);

            let mut s = RngStream::new(trial).substream(Purpose::Test, 0, 0);
            let sd = (0.5 * lv).exp();
            let latents: Vec<Tensor> = (0..samples).map(|_| t(&[mu + sd * s.standard_normal()], &[1, 1])).collect();
            let recons: Vec<Tensor> = latents
                .iter()
                .map(|z| {
                    let zv = z.data()[0];
                    t(&(0..d).map(|j| w[j] * zv + b[j]).collect::<Vec<_>>(), &[1, d])
                })
                .collect();
            let xt = t(&x, &[1, d]);
            let per_sample: Vec<f64> = recons
                .iter()
                .map(|r| recon_loss(&xt, r, ReconKind::SquaredError).unwrap().item().unwrap())
                .collect();
            let f = ForwardResult {
                latents,
                reconstructions: recons,
                encoded: EncoderOutput {
                    mu: t(&[mu], &[1, 1]),
                    log_var: Some(t(&[lv], &[1, 1])),
                },
                stats: None,
            };
            let loss = vae_loss(&xt, &f, 1.0, ReconKind::SquaredError).unwrap();
            let n = samples as f64;
            let mean = per_sample.iter().sum::<f64>() / n;
            let se = (per_sample.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
            let elbo = -loss.total_value() - 0.5 * d as f64 * std::f64::consts::PI.ln();

            let wv = DVector::from_column_slice(w);
            let cov = &wv * wv.transpose() + DMatrix::identity(d, d) * 0.5;
            let diff = DVector::from_column_slice(&x) - DVector::from_column_slice(b);
            let chol = cov.clone().cholesky().unwrap();
            let quad = diff.dot(&chol.solve(&diff));
            let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            let log_evidence = -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + quad);
            assert!(elbo <= log_evidence + 4.0 * se, "trial {trial}: elbo {elbo} > log p(x) {log_evidence}");
        }
    }

    #[test]
    fn losses_finite_on_random_networks() {
        use crate::models::{Autoencoder, ForwardOptions, ModelKind, Noise};
        let x = t(&uniform_vec(9, 8 * 784, 0.0, 1.0), &[8, 784]);
        for trial in 0..100u64 {
            let kind = ModelKind::ALL[trial as usize % 3];
            let model = Autoencoder::new_mnist(kind, 2, &RngStream::new(trial)).unwrap().bind_frozen().unwrap();
            let mut s = RngStream::new(trial).substream(Purpose::Noise, 0, 0);
            let f = model.forward(&x, &mut Noise::Draw(&mut s), &ForwardOptions::default()).unwrap();
            let loss = match kind {
                ModelKind::Vae => vae_loss(&x, &f, 1.0, ReconKind::BernoulliCe).unwrap(),
                ModelKind::Hebae => hebae_loss(&x, &f, f.stats.as_ref().unwrap(), 1.0, ReconKind::SquaredError).unwrap(),
                ModelKind::Wae => {
                    let prior = t(&s.normals(16), &[8, 2]);
                    wae_loss(&x, &f, &prior, 10.0, 1.0, ReconKind::SquaredError).unwrap()
                }
            };
            assert!(loss.total_value().is_finite());
        }
    }

    #[test]
    fn recon_kind_parse() {
        assert_eq!("se".parse::<ReconKind>().unwrap(), ReconKind::SquaredError);
        assert_eq!("bce".parse::<ReconKind>().unwrap(), ReconKind::BernoulliCe);
        assert!("l1".parse::<ReconKind>().is_err());
    }
}
