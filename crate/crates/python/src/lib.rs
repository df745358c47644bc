//! Python bindings: closed-form divergences, MMD, MI, IDX parsing, model
//! loading/encoding/decoding and training.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use hebae_core::checkpoint::Checkpoint;
use hebae_core::commands::{cmd_train, decode_latents};
use hebae_core::config::TrainingConfig;
use hebae_core::data::PIXELS;
use hebae_core::diagnostics::binned_mi as core_binned_mi;
use hebae_core::models::ModelKind;
use hebae_core::probability::{self, DiagGaussian, FullGaussian};
use hebae_core::{Error, ErrorClass, RngStream, Tensor};

fn to_py(e: Error) -> PyErr {
    match (&e, e.class()) {
        (Error::Io { .. }, _) => PyIOError::new_err(e.to_string()),
        (_, ErrorClass::Config) => PyValueError::new_err(e.to_string()),
        (Error::Dimension(_) | Error::Domain(_) | Error::NotPositiveDefinite { .. }, _) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

type Matrix = Vec<Vec<f64>>;

fn matrix(rows: &Matrix) -> PyResult<Tensor> {
    Tensor::from_rows(rows).map_err(to_py)
}

fn rows_of(t: &Tensor) -> Matrix {
    let cols = t.shape().last().copied().unwrap_or(1).max(1);
    t.data().chunks(cols).map(<[f64]>::to_vec).collect()
}

/// KL(N(mean, diag(variance)) || N(0, I)).
#[pyfunction]
fn kl_diag_to_std(mean: Vec<f64>, variance: Vec<f64>) -> PyResult<f64> {
    let q = DiagGaussian::from_vecs(&mean, &variance).map_err(to_py)?;
    probability::kl_diag_to_std(&q).and_then(|t| t.item()).map_err(to_py)
}

/// KL(N(mean, cov) || N(0, I)).
#[pyfunction]
fn kl_full_to_std(mean: Vec<f64>, cov: Matrix) -> PyResult<f64> {
    let k = mean.len();
    let q = FullGaussian::new(Tensor::new(mean, &[k]).map_err(to_py)?, matrix(&cov)?).map_err(to_py)?;
    probability::kl_full_to_std(&q).and_then(|t| t.item()).map_err(to_py)
}

/// ½ (tr Σ − k − log|Σ|).
#[pyfunction]
fn kl_conditional_hebae(cov: Matrix) -> PyResult<f64> {
    probability::kl_conditional_hebae(&matrix(&cov)?).and_then(|t| t.item()).map_err(to_py)
}

/// Unbiased squared MMD under the inverse multiquadric kernel.
#[pyfunction]
#[pyo3(signature = (x, y, kernel_scale = 1.0))]
fn mmd_unbiased(x: Matrix, y: Matrix, kernel_scale: f64) -> PyResult<f64> {
    probability::mmd_unbiased(&matrix(&x)?, &matrix(&y)?, kernel_scale)
        .and_then(|t| t.item())
        .map_err(to_py)
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
#[pyfunction]
fn cholesky(s: Matrix) -> PyResult<Matrix> {
    Ok(rows_of(&matrix(&s)?.cholesky().map_err(to_py)?))
}

/// Plug-in mutual information (nats) after equal-frequency binning.
#[pyfunction]
#[pyo3(signature = (x, y, bins = 16))]
fn binned_mi(x: Vec<f64>, y: Vec<f64>, bins: usize) -> PyResult<f64> {
    core_binned_mi(&x, &y, bins).map_err(to_py)
}

/// `(count, rows, cols, pixel bytes)` of an IDX image file.
#[pyfunction]
fn parse_idx_images(data: &[u8]) -> PyResult<(usize, usize, usize, Vec<u8>)> {
    let imgs = hebae_core::data::parse_idx_images(data).map_err(to_py)?;
    Ok((imgs.count, imgs.rows, imgs.cols, imgs.pixels))
}

#[pyfunction]
fn parse_idx_labels(data: &[u8]) -> PyResult<Vec<u8>> {
    hebae_core::data::parse_idx_labels(data).map_err(to_py)
}

/// A trained or freshly initialized MNIST autoencoder.
#[pyclass(name = "Model")]
struct PyModel {
    inner: Checkpoint,
}

#[pymethods]
impl PyModel {
    /// Fresh weights for `kind` ("hebae", "vae" or "wae") with `k` latents.
    #[new]
    #[pyo3(signature = (kind, k, seed = 0))]
    fn new(kind: &str, k: usize, seed: u64) -> PyResult<Self> {
        let kind: ModelKind = kind.parse().map_err(to_py)?;
        let model = hebae_core::Autoencoder::new_mnist(kind, k, &RngStream::new(seed)).map_err(to_py)?;
        let config = TrainingConfig {
            model: kind,
            k,
            seed,
            lambda: hebae_core::config::default_lambda(kind),
            ..TrainingConfig::default()
        };
        Ok(Self {
            inner: Checkpoint {
                model,
                adam: None,
                config,
                epoch: 0,
            },
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: Checkpoint::load(&path).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(to_py)
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.model.kind.as_str()
    }

    #[getter]
    fn latent_dim(&self) -> usize {
        self.inner.model.latent_dim
    }

    #[getter]
    fn epoch(&self) -> usize {
        self.inner.epoch
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.model.params().iter().map(|p| p.len()).sum()
    }

    /// Encoder means and log-variances (None for WAE) of 784-pixel rows.
    fn encode(&self, images: Matrix) -> PyResult<(Matrix, Option<Matrix>)> {
        if images.iter().any(|r| r.len() != PIXELS) {
            return Err(PyValueError::new_err("every image needs 784 pixels"));
        }
        let enc = self
            .inner
            .model
            .bind_frozen()
            .and_then(|b| b.encode(&Tensor::from_rows(&images)?))
            .map_err(to_py)?;
        Ok((rows_of(&enc.mu), enc.log_var.as_ref().map(rows_of)))
    }

    /// Images in (0, 1) decoded from latent rows.
    fn decode(&self, z: Matrix) -> PyResult<Matrix> {
        let k = self.inner.model.latent_dim;
        if z.is_empty() || z.iter().any(|r| r.len() != k) {
            return Err(PyValueError::new_err(format!("latent rows must have {k} entries")));
        }
        decode_latents(&self.inner.model, &z.concat()).map_err(to_py)
    }
}

/// Training configuration in `key = value` form.
#[pyclass(name = "TrainingConfig")]
struct PyConfig {
    inner: TrainingConfig,
}

#[pymethods]
impl PyConfig {
    /// Defaults overridden by `key = value` text.
    #[new]
    #[pyo3(signature = (text = ""))]
    fn new(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: TrainingConfig::parse(text).map_err(to_py)?,
        })
    }

    fn to_text(&self) -> String {
        self.inner.serialize()
    }

    #[getter]
    fn model(&self) -> &'static str {
        self.inner.model.as_str()
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k
    }

    #[getter]
    fn lambda_(&self) -> f64 {
        self.inner.lambda
    }

    #[getter]
    fn epochs(&self) -> usize {
        self.inner.epochs
    }

    fn __repr__(&self) -> String {
        format!("TrainingConfig(model={}, k={}, lambda={})", self.inner.model, self.inner.k, self.inner.lambda)
    }
}

/// Runs a full training job; returns the per-epoch ELBO values and the
/// trained model. Outputs are also written to the configured directory.
#[pyfunction]
fn train(py: Python<'_>, config: &PyConfig) -> PyResult<(Vec<f64>, PyModel)> {
    let cfg = config.inner.clone();
    let run = py.detach(|| cmd_train(&cfg, &mut |_| {})).map_err(to_py)?;
    let elbos = run.log.records.iter().map(|r| r.elbo).collect();
    Ok((elbos, PyModel { inner: run.checkpoint }))
}

#[pymodule]
pub fn hebae(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(kl_diag_to_std, m)?)?;
    m.add_function(wrap_pyfunction!(kl_full_to_std, m)?)?;
    m.add_function(wrap_pyfunction!(kl_conditional_hebae, m)?)?;
    m.add_function(wrap_pyfunction!(mmd_unbiased, m)?)?;
    m.add_function(wrap_pyfunction!(cholesky, m)?)?;
    m.add_function(wrap_pyfunction!(binned_mi, m)?)?;
    m.add_function(wrap_pyfunction!(parse_idx_images, m)?)?;
    m.add_function(wrap_pyfunction!(parse_idx_labels, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyConfig>()?;
    Ok(())
}
