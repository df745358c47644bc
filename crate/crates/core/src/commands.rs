//! End-to-end operations behind the command-line tool: training, λ sweeps,
//! image generation and latent diagnostics.

use std::path::{Path, PathBuf};

use crate::checkpoint::Checkpoint;
use crate::config::TrainingConfig;
use crate::data::{load_mnist, resolve_data_dir, Dataset, Split, IMAGE_SIDE, PIXELS};
use crate::diagnostics::{
    analyze_dump, export_artifacts, sensitivity_csv, DumpAnalysis, EpochRecord, LatentDump, SensitivityRow,
    TrainingLog, DEFAULT_COLLAPSE_THRESHOLD, DEFAULT_MI_BINS,
};
use crate::error::{Error, Result};
use crate::image::{tile, GrayImage};
use crate::models::Autoencoder;
use crate::rng::{Purpose, RngStream};
use crate::tensor::Tensor;
use crate::train::{encode_dataset, train};

pub const CONFIG_FILE: &str = "config.txt";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LOG_FILE: &str = "elbo_curve.csv";
pub const DUMP_FILE: &str = "latents.bin";
pub const SENSITIVITY_FILE: &str = "sensitivity.csv";

/// Training and evaluation data for a configuration.
pub struct RunData {
    pub train: Dataset,
    pub eval: Dataset,
}

/// Loads the training split (restricted to the configured subset) and the
/// evaluation prefix of the shuffled test split.
pub fn load_run_data(cfg: &TrainingConfig) -> Result<RunData> {
    let dir = resolve_data_dir(cfg.data_dir.as_deref())?;
    let rng = RngStream::new(cfg.seed);
    let full = load_mnist(&dir, Split::Train)?;
    let train = match cfg.subset {
        Some(n) => full.subset(n, &rng)?,
        None => full,
    };
    Ok(RunData {
        train,
        eval: evaluation_set(&load_mnist(&dir, Split::Test)?, cfg.n_eval)?,
    })
}

/// The first `n` test images after a shuffle with a fixed seed, so every
/// model is evaluated on the same images in the same order.
pub fn evaluation_set(test: &Dataset, n: usize) -> Result<Dataset> {
    test.shuffled_prefix(n, &RngStream::new(0), Purpose::Evaluation)
}

pub struct TrainRun {
    pub config: TrainingConfig,
    pub checkpoint: Checkpoint,
    pub log: TrainingLog,
    pub dump: LatentDump,
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Trains on already loaded data and writes the config, checkpoint, log and
/// evaluation dump into `cfg.out`.
pub fn train_with_data(cfg: &TrainingConfig, data: &RunData, on_epoch: &mut dyn FnMut(&EpochRecord)) -> Result<TrainRun> {
    cfg.validate()?;
    create_dir(&cfg.out)?;
    write_file(&cfg.out.join(CONFIG_FILE), cfg.serialize().as_bytes())?;
    let outcome = train(cfg, &data.train, on_epoch)?;
    let checkpoint = Checkpoint {
        model: outcome.model,
        adam: Some(outcome.adam),
        config: cfg.clone(),
        epoch: cfg.epochs,
    };
    checkpoint.save(&cfg.out.join(CHECKPOINT_FILE))?;
    write_file(&cfg.out.join(LOG_FILE), outcome.log.to_csv().as_bytes())?;
    let dump = encode_dataset(&checkpoint.model, &data.eval, cfg.epochs)?;
    dump.save(&cfg.out.join(DUMP_FILE))?;
    Ok(TrainRun {
        config: cfg.clone(),
        checkpoint,
        log: outcome.log,
        dump,
    })
}

pub fn cmd_train(cfg: &TrainingConfig, on_epoch: &mut dyn FnMut(&EpochRecord)) -> Result<TrainRun> {
    cfg.validate()?;
    let data = load_run_data(cfg)?;
    train_with_data(cfg, &data, on_epoch)
}

/// Output directory of one λ in a sweep.
pub fn sweep_dir(out: &Path, lambda: f64) -> PathBuf {
    out.join(format!("lambda_{lambda}"))
}

pub fn sensitivity_row(run: &TrainRun) -> Result<SensitivityRow> {
    let last = run.log.last().ok_or_else(|| Error::State("empty training log".into()))?;
    Ok(SensitivityRow {
        model: run.config.model,
        lambda: run.config.lambda,
        seed: run.config.seed,
        final_elbo: last.elbo,
        final_recon: last.recon,
        final_reg: last.reg,
        mean_sigma2: last.mean_sigma2,
    })
}

/// Sorted, duplicate-free λ list.
pub fn normalize_lambdas(lambdas: &[f64]) -> Result<Vec<f64>> {
    if lambdas.is_empty() {
        return Err(Error::contract("the λ list is empty"));
    }
    let mut sorted = lambdas.to_vec();
    if sorted.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
        return Err(Error::Config("every λ must be finite and nonnegative".into()));
    }
    sorted.sort_by(f64::total_cmp);
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Config("the λ list has duplicates".into()));
    }
    Ok(sorted)
}

/// Trains once per λ (ascending) on shared data, each run in its own
/// subdirectory, and writes `sensitivity.csv` into `cfg.out`.
pub fn sweep_with_data(
    cfg: &TrainingConfig,
    lambdas: &[f64],
    data: &RunData,
    on_epoch: &mut dyn FnMut(f64, &EpochRecord),
) -> Result<Vec<TrainRun>> {
    let lambdas = normalize_lambdas(lambdas)?;
    let mut runs = Vec::with_capacity(lambdas.len());
    for &lambda in &lambdas {
        let run_cfg = TrainingConfig {
            lambda,
            out: sweep_dir(&cfg.out, lambda),
            ..cfg.clone()
        };
        runs.push(train_with_data(&run_cfg, data, &mut |r| on_epoch(lambda, r))?);
    }
    let rows = runs.iter().map(sensitivity_row).collect::<Result<Vec<_>>>()?;
    write_file(&cfg.out.join(SENSITIVITY_FILE), sensitivity_csv(&rows).as_bytes())?;
    Ok(runs)
}

pub fn cmd_sweep_lambda(
    cfg: &TrainingConfig,
    lambdas: &[f64],
    on_epoch: &mut dyn FnMut(f64, &EpochRecord),
) -> Result<Vec<TrainRun>> {
    normalize_lambdas(lambdas)?;
    cfg.validate()?;
    create_dir(&cfg.out)?;
    let data = load_run_data(cfg)?;
    sweep_with_data(cfg, lambdas, &data, on_epoch)
}

/// Decoded images (values in `(0, 1)`) for the rows of `z[n×k]`.
pub fn decode_latents(model: &Autoencoder, z: &[f64]) -> Result<Vec<Vec<f64>>> {
    let k = model.latent_dim;
    if z.is_empty() || !z.len().is_multiple_of(k) {
        return Err(Error::dim(format!("{} values are not rows of {k} latents", z.len())));
    }
    let out = model.bind_frozen()?.decode(&Tensor::new(z.to_vec(), &[z.len() / k, k])?)?;
    Ok(out.data().chunks_exact(PIXELS).map(<[f64]>::to_vec).collect())
}

/// Encoder means of `images[m×784]`.
pub fn encode_means(model: &Autoencoder, images: &Tensor) -> Result<Vec<f64>> {
    Ok(model.bind_frozen()?.encode(images)?.mu.to_vec())
}

/// Decodes `cols · rows` standard-normal latents into a grid of digits.
pub fn cmd_generate(model: &Autoencoder, n: usize, cols: usize, rows: usize, seed: u64) -> Result<GrayImage> {
    if n == 0 || n != cols * rows {
        return Err(Error::contract(format!("{n} samples do not fill a {cols}×{rows} grid")));
    }
    let z = RngStream::new(seed).substream(Purpose::Generate, 0, 0).normals(n * model.latent_dim);
    tile(&decode_latents(model, &z)?, cols, rows, IMAGE_SIDE)
}

/// Originals and their reconstructions from the encoder means, in
/// alternating rows of `cols` images.
pub fn cmd_reconstruct(model: &Autoencoder, images: &Tensor, cols: usize) -> Result<GrayImage> {
    let m = images.shape().first().copied().unwrap_or(0);
    if m == 0 || images.shape() != [m, PIXELS] {
        return Err(Error::contract("reconstruction needs a non-empty [m, 784] batch"));
    }
    if cols == 0 || m % cols != 0 {
        return Err(Error::contract(format!("{m} images do not fill rows of {cols}")));
    }
    let recon = decode_latents(model, &encode_means(model, images)?)?;
    let originals: Vec<Vec<f64>> = images.data().chunks_exact(PIXELS).map(<[f64]>::to_vec).collect();
    let mut cells = Vec::with_capacity(2 * m);
    for (orig, rec) in originals.chunks(cols).zip(recon.chunks(cols)) {
        cells.extend_from_slice(orig);
        cells.extend_from_slice(rec);
    }
    tile(&cells, cols, 2 * m / cols, IMAGE_SIDE)
}

/// Latents on the segment between the encoder means of `x_a` and `x_b`,
/// endpoints included.
pub fn interpolation_latents(model: &Autoencoder, x_a: &[f64], x_b: &[f64], steps: usize) -> Result<Vec<f64>> {
    if steps < 2 {
        return Err(Error::contract("interpolation needs at least two steps"));
    }
    let mut pair = x_a.to_vec();
    pair.extend_from_slice(x_b);
    let mu = encode_means(model, &Tensor::new(pair, &[2, PIXELS])?)?;
    let k = model.latent_dim;
    let (za, zb) = mu.split_at(k);
    let mut z = Vec::with_capacity(steps * k);
    for s in 0..steps {
        let t = s as f64 / (steps - 1) as f64;
        z.extend(za.iter().zip(zb).map(|(a, b)| (1.0 - t) * a + t * b));
    }
    Ok(z)
}

/// One strip of `steps` decoded images from `x_a` to `x_b`.
pub fn cmd_interpolate(model: &Autoencoder, x_a: &[f64], x_b: &[f64], steps: usize) -> Result<GrayImage> {
    let z = interpolation_latents(model, x_a, x_b, steps)?;
    tile(&decode_latents(model, &z)?, steps, 1, IMAGE_SIDE)
}

pub struct DiagnoseOptions {
    pub threshold: f64,
    pub bins: usize,
    pub jitter: f64,
    pub seed: u64,
}

impl Default for DiagnoseOptions {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_COLLAPSE_THRESHOLD,
            bins: DEFAULT_MI_BINS,
            jitter: crate::models::DEFAULT_JITTER_SCALE,
            seed: 0,
        }
    }
}

/// Analyzes a latent dump and writes the diagnostic tables and heatmaps.
/// A training log and sweep table found next to the dump are carried over.
pub fn cmd_diagnose(dump: &LatentDump, run_dir: Option<&Path>, out_dir: &Path, opts: &DiagnoseOptions) -> Result<DumpAnalysis> {
    let mut rng = RngStream::new(opts.seed).substream(Purpose::Evaluation, 0, 0);
    let analysis = analyze_dump(dump, opts.threshold, opts.jitter, opts.bins, &mut rng)?;
    let log = match run_dir.map(|d| d.join(LOG_FILE)).filter(|p| p.is_file()) {
        Some(path) => Some(TrainingLog::from_csv(&std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?)?),
        None => None,
    };
    export_artifacts(log.as_ref(), &[], &analysis, out_dir)?;
    Ok(analysis)
}
