//! Dense encoder/decoder networks, the three model heads, and the
//! empirical-Bayes batch estimator of the hierarchical prior.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::probability::{reparam_diag, reparam_full, DiagGaussian};
use crate::rng::{Purpose, RngStream, Substream};
use crate::tensor::Tensor;

pub const IMAGE_DIM: usize = 784;
/// Hidden widths of the MNIST encoder and decoder.
pub const ENCODER_HIDDEN: [usize; 2] = [784, 800];
pub const DECODER_HIDDEN: [usize; 2] = [800, 800];
pub const DEFAULT_JITTER_SCALE: f64 = 1e-5;
/// Mean latent variance below which a batch counts as collapsed to a point;
/// the jitter is then scaled against unit variance instead.
pub const DEGENERATE_VARIANCE: f64 = 1e-12;
/// Extra attempts, each doubling the jitter, before a factorization failure
/// is reported.
pub const JITTER_RETRIES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Hebae,
    Vae,
    Wae,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Hebae, ModelKind::Vae, ModelKind::Wae];

    /// Encoder outputs per latent coordinate: a mean, plus a log-variance
    /// for the stochastic encoders.
    pub fn head_multiplier(self) -> usize {
        match self {
            ModelKind::Hebae | ModelKind::Vae => 2,
            ModelKind::Wae => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Hebae => "hebae",
            ModelKind::Vae => "vae",
            ModelKind::Wae => "wae",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            ModelKind::Hebae => 0,
            ModelKind::Vae => 1,
            ModelKind::Wae => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(ModelKind::Hebae),
            1 => Some(ModelKind::Vae),
            2 => Some(ModelKind::Wae),
            _ => None,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hebae" => Ok(ModelKind::Hebae),
            "vae" => Ok(ModelKind::Vae),
            "wae" => Ok(ModelKind::Wae),
            other => Err(Error::Config(format!(
                "unknown model `{other}` (expected hebae, vae or wae)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `[in_dim, out_dim]`, applied as `x · W + b`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

/// A stack of fully connected layers. Parameters are registered as
/// `weight, bias` per layer, in layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMlp {
    pub name: String,
    pub layers: Vec<DenseLayer>,
}

/// Parameters of a [`DenseMlp`] lifted onto the differentiation graph.
pub struct BoundMlp {
    params: Vec<(Tensor, Tensor)>,
    activations: Vec<Activation>,
}

impl DenseMlp {
    /// Builds `dims[0] → … → dims[last]` with ReLU after every layer but the
    /// last. Weights are uniform in `±√(6 / (fan_in + fan_out))`, biases 0.
    pub fn new(name: &str, dims: &[usize], rng: &RngStream, stream: u64) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::contract(format!("invalid layer widths {dims:?}")));
        }
        let n_layers = dims.len() - 1;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let mut s = rng.substream(Purpose::Init, stream, i as u64);
                DenseLayer {
                    in_dim: fan_in,
                    out_dim: fan_out,
                    weight: (0..fan_in * fan_out).map(|_| s.uniform(-bound, bound)).collect(),
                    bias: vec![0.0; fan_out],
                    activation: if i + 1 == n_layers {
                        Activation::Identity
                    } else {
                        Activation::Relu
                    },
                }
            })
            .collect();
        Ok(Self {
            name: name.to_string(),
            layers,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// `(name, shape)` of every registered parameter, in registration order.
    pub fn param_specs(&self) -> Vec<(String, Vec<usize>)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                [
                    (format!("{}.{i}.weight", self.name), vec![l.in_dim, l.out_dim]),
                    (format!("{}.{i}.bias", self.name), vec![l.out_dim]),
                ]
            })
            .collect()
    }

    pub fn params(&self) -> Vec<&Vec<f64>> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    fn bind_with(&self, track: bool) -> Result<BoundMlp> {
        let lift = |v: &Vec<f64>, shape: &[usize]| {
            if track {
                Tensor::parameter(v.clone(), shape)
            } else {
                Tensor::new(v.clone(), shape)
            }
        };
        let params = self
            .layers
            .iter()
            .map(|l| Ok((lift(&l.weight, &[l.in_dim, l.out_dim])?, lift(&l.bias, &[l.out_dim])?)))
            .collect::<Result<_>>()?;
        Ok(BoundMlp {
            params,
            activations: self.layers.iter().map(|l| l.activation).collect(),
        })
    }

    /// Parameters as gradient-tracking leaves.
    pub fn bind(&self) -> Result<BoundMlp> {
        self.bind_with(true)
    }

    /// Parameters as constants, for evaluation.
    pub fn bind_frozen(&self) -> Result<BoundMlp> {
        self.bind_with(false)
    }
}

impl BoundMlp {
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for ((w, b), act) in self.params.iter().zip(&self.activations) {
            h = h.matmul(w)?.add(b)?;
            if *act == Activation::Relu {
                h = h.relu()?;
            }
        }
        Ok(h)
    }

    /// Accumulated gradients in registration order (zeros where a parameter
    /// received none).
    pub fn take_grads(&self) -> Vec<Vec<f64>> {
        self.params
            .iter()
            .flat_map(|(w, b)| [w, b])
            .map(|p| p.take_grad().unwrap_or_else(|| vec![0.0; p.numel()]))
            .collect()
    }
}

/// `784 → 784 → 800 → k·p`, `p = 2` for HEBAE/VAE and 1 for WAE.
pub fn build_mnist_encoder(k: usize, kind: ModelKind, rng: &RngStream) -> Result<DenseMlp> {
    if k < 1 {
        return Err(Error::contract("latent dimension must be at least 1"));
    }
    let dims = [IMAGE_DIM, ENCODER_HIDDEN[0], ENCODER_HIDDEN[1], k * kind.head_multiplier()];
    DenseMlp::new("encoder", &dims, rng, 0)
}

/// `k → 800 → 800 → 784`; the output is a logit, squashed by a sigmoid
/// when reconstructing.
pub fn build_mnist_decoder(k: usize, rng: &RngStream) -> Result<DenseMlp> {
    if k < 1 {
        return Err(Error::contract("latent dimension must be at least 1"));
    }
    let dims = [k, DECODER_HIDDEN[0], DECODER_HIDDEN[1], IMAGE_DIM];
    DenseMlp::new("decoder", &dims, rng, 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder {
    pub kind: ModelKind,
    pub latent_dim: usize,
    pub encoder: DenseMlp,
    pub decoder: DenseMlp,
}

impl Autoencoder {
    pub fn new_mnist(kind: ModelKind, k: usize, rng: &RngStream) -> Result<Self> {
        Ok(Self {
            kind,
            latent_dim: k,
            encoder: build_mnist_encoder(k, kind, rng)?,
            decoder: build_mnist_decoder(k, rng)?,
        })
    }

    pub fn param_specs(&self) -> Vec<(String, Vec<usize>)> {
        let mut specs = self.encoder.param_specs();
        specs.extend(self.decoder.param_specs());
        specs
    }

    pub fn params(&self) -> Vec<&Vec<f64>> {
        let mut p = self.encoder.params();
        p.extend(self.decoder.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut p = self.encoder.params_mut();
        p.extend(self.decoder.params_mut());
        p
    }

    pub fn bind(&self) -> Result<BoundAutoencoder> {
        Ok(BoundAutoencoder {
            kind: self.kind,
            latent_dim: self.latent_dim,
            encoder: self.encoder.bind()?,
            decoder: self.decoder.bind()?,
        })
    }

    pub fn bind_frozen(&self) -> Result<BoundAutoencoder> {
        Ok(BoundAutoencoder {
            kind: self.kind,
            latent_dim: self.latent_dim,
            encoder: self.encoder.bind_frozen()?,
            decoder: self.decoder.bind_frozen()?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct EncoderOutput {
    pub mu: Tensor,
    /// Clamped log-variances; absent for the deterministic WAE encoder.
    pub log_var: Option<Tensor>,
}

impl EncoderOutput {
    /// Batch-and-coordinate mean of `exp(log_var)`, 0 for WAE.
    pub fn mean_variance(&self) -> f64 {
        match &self.log_var {
            Some(lv) => lv.data().iter().map(|v| v.exp()).sum::<f64>() / lv.numel() as f64,
            None => 0.0,
        }
    }
}

/// Empirical prior parameters of one batch of encoder means.
#[derive(Debug, Clone)]
pub struct BatchPosteriorStats {
    pub beta_hat: Tensor,
    pub sigma_hat: Tensor,
    /// Cholesky factor of `sigma_hat + jitter_used · I`.
    pub r: Tensor,
    pub jitter_used: f64,
}

/// Column mean and unbiased covariance of `mu[m×k]`, plus the Cholesky factor
/// of the jittered covariance, all on the differentiation graph.
///
/// The jitter is `jitter_scale` times the mean diagonal of the covariance
/// (or times 1 when that diagonal is numerically zero); a failed factorization is
/// retried with the jitter doubled, up to [`JITTER_RETRIES`] times.
pub fn estimate_batch_stats(mu: &Tensor, jitter_scale: f64) -> Result<BatchPosteriorStats> {
    let &[m, k] = mu.shape() else {
        return Err(Error::dim(format!("expected a [m, k] matrix, got {:?}", mu.shape())));
    };
    if m < 2 {
        return Err(Error::contract(format!(
            "batch statistics need at least two samples, got {m}"
        )));
    }
    if !(jitter_scale >= 0.0) {
        return Err(Error::contract("jitter scale must be nonnegative"));
    }
    let beta_hat = mu.mean_axis(0)?;
    let centered = mu.sub(&beta_hat)?;
    let raw = centered.transpose()?.matmul(&centered)?.scale(1.0 / (m - 1) as f64)?;
    let sigma_hat = raw.add(&raw.transpose()?)?.scale(0.5)?;

    // the jitter follows the mean diagonal on the graph, so gradients see it
    let mean_diag = sigma_hat.trace()?.scale(1.0 / k as f64)?;
    let base = if mean_diag.item()? > DEGENERATE_VARIANCE { mean_diag } else { Tensor::scalar(1.0)? };
    let mut jitter = jitter_scale * base.item()?;
    let mut factor = jitter_scale;
    let mut attempt = 0;
    loop {
        let jittered = if jitter > 0.0 {
            sigma_hat.add(&Tensor::eye(k).mul(&base.scale(factor)?)?)?
        } else {
            sigma_hat.clone()
        };
        match jittered.cholesky() {
            Ok(r) => {
                return Ok(BatchPosteriorStats {
                    beta_hat,
                    sigma_hat,
                    r,
                    jitter_used: jitter,
                })
            }
            Err(e @ Error::NotPositiveDefinite { .. }) => {
                if attempt == JITTER_RETRIES || jitter == 0.0 {
                    return Err(e);
                }
                attempt += 1;
                jitter *= 2.0;
                factor *= 2.0;
            }
            Err(e) => return Err(e),
        }
    }
}

/// Source of the reparameterization noise.
pub enum Noise<'a> {
    Draw(&'a mut Substream),
    /// ε = 0: every stochastic encoder returns its mean.
    Zero,
}

impl Noise<'_> {
    fn tensor(&mut self, shape: &[usize]) -> Result<Tensor> {
        match self {
            Noise::Draw(rng) => Tensor::new(rng.normals(shape.iter().product()), shape),
            Noise::Zero => Ok(Tensor::zeros(shape)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardOptions {
    pub jitter_scale: f64,
    /// Monte Carlo samples per datum.
    pub mc_samples: usize,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        Self {
            jitter_scale: DEFAULT_JITTER_SCALE,
            mc_samples: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ForwardResult {
    /// One latent batch `[m, k]` per Monte Carlo sample.
    pub latents: Vec<Tensor>,
    /// Matching reconstructions `[m, 784]`, after the sigmoid.
    pub reconstructions: Vec<Tensor>,
    pub encoded: EncoderOutput,
    /// Present for HEBAE only.
    pub stats: Option<BatchPosteriorStats>,
}

impl ForwardResult {
    pub fn z(&self) -> &Tensor {
        &self.latents[0]
    }

    pub fn reconstruction(&self) -> &Tensor {
        &self.reconstructions[0]
    }
}

pub struct BoundAutoencoder {
    pub kind: ModelKind,
    pub latent_dim: usize,
    pub encoder: BoundMlp,
    pub decoder: BoundMlp,
}

impl BoundAutoencoder {
    /// Encoder means and (clamped) log-variances.
    pub fn encode(&self, x: &Tensor) -> Result<EncoderOutput> {
        let k = self.latent_dim;
        let out = self.encoder.forward(x)?;
        Ok(match self.kind {
            ModelKind::Wae => EncoderOutput {
                mu: out,
                log_var: None,
            },
            ModelKind::Hebae | ModelKind::Vae => {
                let q = DiagGaussian::new(out.narrow(1, 0, k)?, out.narrow(1, k, k)?)?;
                EncoderOutput {
                    mu: q.mean,
                    log_var: Some(q.log_var),
                }
            }
        })
    }

    /// Decoded images in `(0, 1)`.
    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        self.decoder.forward(z)?.sigmoid()
    }

    /// Encodes, samples latents per the model's posterior and decodes.
    pub fn forward(&self, batch: &Tensor, noise: &mut Noise<'_>, opts: &ForwardOptions) -> Result<ForwardResult> {
        let &[m, d] = batch.shape() else {
            return Err(Error::dim("batch must be a [m, 784] matrix"));
        };
        if m == 0 || d != self.encoder_input_dim() {
            return Err(Error::dim(format!("batch shape {:?} is not [m>0, {}]", batch.shape(), self.encoder_input_dim())));
        }
        if opts.mc_samples == 0 {
            return Err(Error::contract("at least one Monte Carlo sample is required"));
        }
        let encoded = self.encode(batch)?;
        let shape = [m, self.latent_dim];
        let (stats, latents) = match self.kind {
            ModelKind::Wae => (None, vec![encoded.mu.clone()]),
            ModelKind::Vae => {
                let q = DiagGaussian {
                    mean: encoded.mu.clone(),
                    log_var: encoded.log_var.clone().expect("stochastic head"),
                };
                let zs = (0..opts.mc_samples)
                    .map(|_| reparam_diag(&q, &noise.tensor(&shape)?))
                    .collect::<Result<_>>()?;
                (None, zs)
            }
            ModelKind::Hebae => {
                let stats = estimate_batch_stats(&encoded.mu, opts.jitter_scale)?;
                let sigma = encoded.log_var.as_ref().expect("stochastic head").scale(0.5)?.exp()?;
                let zs = (0..opts.mc_samples)
                    .map(|_| reparam_full(&encoded.mu, &sigma, &stats.r, &noise.tensor(&shape)?))
                    .collect::<Result<_>>()?;
                (Some(stats), zs)
            }
        };
        let reconstructions = latents.iter().map(|z| self.decode(z)).collect::<Result<_>>()?;
        Ok(ForwardResult {
            latents,
            reconstructions,
            encoded,
            stats,
        })
    }

    fn encoder_input_dim(&self) -> usize {
        self.encoder.params.first().map_or(0, |(w, _)| w.shape()[0])
    }

    pub fn take_grads(&self) -> Vec<Vec<f64>> {
        let mut g = self.encoder.take_grads();
        g.extend(self.decoder.take_grads());
        g
    }
}
