//! `hebae`: train, sweep, sample from and diagnose MNIST autoencoders.
//!
//! Exit status: 0 on success, 2 for configuration errors, 3 for data
//! errors, 4 for numerical failures.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hebae_core::checkpoint::Checkpoint;
use hebae_core::commands::{
    cmd_diagnose, cmd_generate, cmd_interpolate, cmd_reconstruct, cmd_sweep_lambda, cmd_train, evaluation_set,
    DiagnoseOptions, CHECKPOINT_FILE, DUMP_FILE, LOG_FILE, SENSITIVITY_FILE,
};
use hebae_core::config::TrainingConfig;
use hebae_core::data::{load_mnist, resolve_data_dir, Dataset, Split, PIXELS};
use hebae_core::diagnostics::{EpochRecord, LatentDump};
use hebae_core::train::encode_dataset;
use hebae_core::{Error, ErrorClass, Result};

#[derive(Parser)]
#[command(name = "hebae", version, about = "Hierarchical empirical Bayes autoencoders on MNIST")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write its checkpoint, log and latent dump.
    Train(TrainArgs),
    /// Train once per λ and tabulate the final ELBO of each run.
    SweepLambda {
        #[command(flatten)]
        train: TrainArgs,
        /// Comma-separated λ values.
        #[arg(long, value_delimiter = ',', required = true)]
        lambdas: Vec<f64>,
    },
    /// Decode standard-normal latents into a grid of samples.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 64)]
        n: usize,
        /// Grid size as COLSxROWS.
        #[arg(long, default_value = "8x8")]
        grid: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Show test images above their reconstructions.
    Reconstruct {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 16)]
        n: usize,
        #[arg(long, default_value_t = 8)]
        cols: usize,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode a straight line between the latent means of two test images.
    Interpolate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0)]
        index_a: usize,
        #[arg(long, default_value_t = 1)]
        index_b: usize,
        #[arg(long, default_value_t = 10)]
        steps: usize,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Covariance, correlation, collapse and mutual-information reports.
    Diagnose {
        /// Checkpoint to encode the evaluation set with.
        #[arg(long, conflicts_with = "dump", required_unless_present = "dump")]
        checkpoint: Option<PathBuf>,
        /// Previously written latent dump.
        #[arg(long)]
        dump: Option<PathBuf>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long, default_value_t = hebae_core::diagnostics::DEFAULT_COLLAPSE_THRESHOLD)]
        threshold: f64,
        #[arg(long, default_value_t = hebae_core::diagnostics::DEFAULT_MI_BINS)]
        bins: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Training options. Anything given here overrides `--config`, which
/// overrides the built-in defaults.
#[derive(Args)]
struct TrainArgs {
    /// key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    subset: Option<usize>,
    #[arg(long)]
    n_eval: Option<usize>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Reconstruction loss: se or bce.
    #[arg(long)]
    recon: Option<String>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    decay: Option<f64>,
    /// exponential or staircase.
    #[arg(long)]
    schedule: Option<String>,
    #[arg(long)]
    jitter: Option<f64>,
    #[arg(long)]
    mmd_scale: Option<f64>,
    #[arg(long)]
    mc_samples: Option<usize>,
    /// Record wall-clock seconds in the training log.
    #[arg(long)]
    record_time: bool,
}

impl TrainArgs {
    fn overrides(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                m.insert(k.to_string(), v);
            }
        };
        put("model", self.model.clone());
        put("k", self.k.map(|v| v.to_string()));
        put("lambda", self.lambda.map(|v| v.to_string()));
        put("epochs", self.epochs.map(|v| v.to_string()));
        put("batch", self.batch.map(|v| v.to_string()));
        put("seed", self.seed.map(|v| v.to_string()));
        put("subset", self.subset.map(|v| v.to_string()));
        put("n_eval", self.n_eval.map(|v| v.to_string()));
        put("data_dir", self.data_dir.as_ref().map(|p| p.display().to_string()));
        put("out", self.out.as_ref().map(|p| p.display().to_string()));
        put("recon", self.recon.clone());
        put("lr", self.lr.map(|v| v.to_string()));
        put("decay", self.decay.map(|v| v.to_string()));
        put("schedule", self.schedule.clone());
        put("jitter", self.jitter.map(|v| v.to_string()));
        put("mmd_scale", self.mmd_scale.map(|v| v.to_string()));
        put("mc_samples", self.mc_samples.map(|v| v.to_string()));
        put("record_time", self.record_time.then(|| "true".to_string()));
        m
    }

    fn resolve(&self) -> Result<TrainingConfig> {
        TrainingConfig::layered(self.config.as_deref(), &self.overrides())
    }
}

fn progress(r: &EpochRecord) {
    eprintln!(
        "epoch {:>3}  elbo {:>12.4}  recon {:>10.4}  reg {:>9.4}  mean σ² {:.4}",
        r.epoch, r.elbo, r.recon, r.reg, r.mean_sigma2
    );
}

fn parse_grid(grid: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("grid `{grid}` is not COLSxROWS"));
    let (c, r) = grid.split_once('x').ok_or_else(bad)?;
    Ok((c.parse().map_err(|_| bad())?, r.parse().map_err(|_| bad())?))
}

fn test_split(explicit: Option<&Path>, ckpt: &Checkpoint) -> Result<Dataset> {
    let dir = resolve_data_dir(explicit.or(ckpt.config.data_dir.as_deref()))?;
    load_mnist(&dir, Split::Test)
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => std::fs::create_dir_all(p).map_err(|e| Error::io(p, e)),
        _ => Ok(()),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => {
            let cfg = args.resolve()?;
            let run = cmd_train(&cfg, &mut progress)?;
            println!(
                "trained {} (k={}, λ={}) for {} epochs: final ELBO {:.4}; wrote {}, {} and {} to {}",
                cfg.model,
                cfg.k,
                cfg.lambda,
                cfg.epochs,
                run.log.final_elbo().unwrap_or(f64::NAN),
                CHECKPOINT_FILE,
                LOG_FILE,
                DUMP_FILE,
                cfg.out.display()
            );
        }
        Command::SweepLambda { train, lambdas } => {
            let cfg = train.resolve()?;
            let runs = cmd_sweep_lambda(&cfg, &lambdas, &mut |lambda, r| {
                eprint!("λ={lambda:<6} ");
                progress(r);
            })?;
            for r in &runs {
                println!("λ={}: final ELBO {:.4}", r.config.lambda, r.log.final_elbo().unwrap_or(f64::NAN));
            }
            println!("wrote {}", cfg.out.join(SENSITIVITY_FILE).display());
        }
        Command::Generate { checkpoint, n, grid, seed, out } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let (cols, rows) = parse_grid(&grid)?;
            let img = cmd_generate(&ckpt.model, n, cols, rows, seed)?;
            ensure_parent(&out)?;
            img.write_pgm(&out)?;
            println!("wrote {}×{} grid to {}", img.width, img.height, out.display());
        }
        Command::Reconstruct { checkpoint, n, cols, data_dir, out } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let test = test_split(data_dir.as_deref(), &ckpt)?;
            if n == 0 || n > test.len() {
                return Err(Error::Config(format!("n must be in 1..={}", test.len())));
            }
            let images = test.batch(&(0..n).collect::<Vec<_>>())?;
            let img = cmd_reconstruct(&ckpt.model, &images, cols)?;
            ensure_parent(&out)?;
            img.write_pgm(&out)?;
            println!("wrote {}×{} grid to {}", img.width, img.height, out.display());
        }
        Command::Interpolate { checkpoint, index_a, index_b, steps, data_dir, out } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let test = test_split(data_dir.as_deref(), &ckpt)?;
            let pair = test.batch(&[index_a, index_b]).map_err(|e| Error::Config(e.to_string()))?;
            let (a, b) = pair.data().split_at(PIXELS);
            let img = cmd_interpolate(&ckpt.model, a, b, steps)?;
            ensure_parent(&out)?;
            img.write_pgm(&out)?;
            println!("wrote {}-step strip to {}", steps, out.display());
        }
        Command::Diagnose { checkpoint, dump, data_dir, threshold, bins, seed, out } => {
            let (latents, run_dir, jitter) = match (checkpoint, dump) {
                (Some(path), _) => {
                    let ckpt = Checkpoint::load(&path)?;
                    let eval = evaluation_set(&test_split(data_dir.as_deref(), &ckpt)?, ckpt.config.n_eval)?;
                    let d = encode_dataset(&ckpt.model, &eval, ckpt.epoch)?;
                    (d, path.parent().map(Path::to_path_buf), ckpt.config.jitter)
                }
                (None, Some(path)) => (
                    LatentDump::load(&path)?,
                    path.parent().map(Path::to_path_buf),
                    hebae_core::models::DEFAULT_JITTER_SCALE,
                ),
                (None, None) => return Err(Error::Config("give --checkpoint or --dump".into())),
            };
            let opts = DiagnoseOptions { threshold, bins, jitter, seed };
            let a = cmd_diagnose(&latents, run_dir.as_deref(), &out, &opts)?;
            println!(
                "n={} k={}  mean |off-diagonal corr| {:.4}  collapsed {:?}  mean MI {:.4} nats",
                latents.n, latents.k, a.cov_corr.mean_abs_offdiag, a.collapsed, a.mean_mi
            );
            println!("wrote diagnostics to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Config => 2,
                ErrorClass::Data => 3,
                ErrorClass::Numeric => 4,
            })
        }
    }
}
