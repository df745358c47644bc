//! Training configuration as flat `key = value` text.
//!
//! Values are layered: built-in defaults, then a config file, then
//! command-line overrides, each later layer replacing keys of the earlier
//! ones. The merged map is validated once, when it becomes a
//! [`TrainingConfig`].

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::models::{ModelKind, DEFAULT_JITTER_SCALE};
use crate::objectives::ReconKind;
use crate::optim::LrSchedule;

pub const DEFAULT_K: usize = 20;
pub const DEFAULT_EPOCHS: usize = 100;
pub const DEFAULT_LR: f64 = 0.001;
pub const DEFAULT_DECAY: f64 = 0.995;
pub const DEFAULT_N_EVAL: usize = 10_000;

/// Every recognized key, in serialization order.
pub const KEYS: [&str; 18] = [
    "model",
    "k",
    "lambda",
    "recon",
    "batch",
    "epochs",
    "seed",
    "lr",
    "decay",
    "schedule",
    "subset",
    "n_eval",
    "data_dir",
    "out",
    "jitter",
    "mmd_scale",
    "mc_samples",
    "record_time",
];

/// KL/MMD weight used when none is configured.
pub fn default_lambda(model: ModelKind) -> f64 {
    match model {
        ModelKind::Hebae | ModelKind::Vae => 1.0,
        ModelKind::Wae => 10.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScheduleKind {
    #[default]
    Exponential,
    Staircase,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub model: ModelKind,
    pub k: usize,
    pub lambda: f64,
    pub recon: ReconKind,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub lr: f64,
    pub decay: f64,
    pub schedule: ScheduleKind,
    /// Train on this many images of a seeded shuffle; all when `None`.
    pub subset: Option<usize>,
    /// Held-out test images encoded for the latent dump.
    pub n_eval: usize,
    pub data_dir: Option<PathBuf>,
    pub out: PathBuf,
    pub jitter: f64,
    pub mmd_scale: f64,
    pub mc_samples: usize,
    /// Write wall-clock seconds into the training log. Off by default so
    /// that logs of identical runs are byte-identical.
    pub record_time: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Hebae,
            k: DEFAULT_K,
            lambda: default_lambda(ModelKind::Hebae),
            recon: ReconKind::SquaredError,
            batch: crate::data::DEFAULT_BATCH,
            epochs: DEFAULT_EPOCHS,
            seed: 0,
            lr: DEFAULT_LR,
            decay: DEFAULT_DECAY,
            schedule: ScheduleKind::Exponential,
            subset: None,
            n_eval: DEFAULT_N_EVAL,
            data_dir: None,
            out: PathBuf::from("runs/default"),
            jitter: DEFAULT_JITTER_SCALE,
            mmd_scale: 1.0,
            mc_samples: 1,
            record_time: false,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

/// Parses `key = value` lines. Blank lines and `#` comments are skipped;
/// unknown or repeated keys are errors.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
        let key = key.trim().to_string();
        if !KEYS.contains(&key.as_str()) {
            return Err(Error::Config(format!("line {}: unknown key `{key}`", lineno + 1)));
        }
        if map.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(Error::Config(format!("line {}: `{key}` given twice", lineno + 1)));
        }
    }
    Ok(map)
}

impl TrainingConfig {
    /// Defaults overlaid with `values`; `lambda` falls back to the model's
    /// default when absent.
    pub fn from_map(values: &BTreeMap<String, String>) -> Result<Self> {
        let mut c = Self::default();
        for (key, value) in values {
            let v = value.as_str();
            match key.as_str() {
                "model" => c.model = v.parse()?,
                "k" => c.k = parse_value(key, v)?,
                "lambda" => {}
                "recon" => c.recon = v.parse()?,
                "batch" => c.batch = parse_value(key, v)?,
                "epochs" => c.epochs = parse_value(key, v)?,
                "seed" => c.seed = parse_value(key, v)?,
                "lr" => c.lr = parse_value(key, v)?,
                "decay" => c.decay = parse_value(key, v)?,
                "schedule" => {
                    c.schedule = match v {
                        "exponential" => ScheduleKind::Exponential,
                        "staircase" => ScheduleKind::Staircase,
                        _ => return Err(Error::Config(format!("unknown schedule `{v}`"))),
                    }
                }
                "subset" => c.subset = if v == "all" { None } else { Some(parse_value(key, v)?) },
                "n_eval" => c.n_eval = parse_value(key, v)?,
                "data_dir" => c.data_dir = if v.is_empty() { None } else { Some(PathBuf::from(v)) },
                "out" => c.out = PathBuf::from(v),
                "jitter" => c.jitter = parse_value(key, v)?,
                "mmd_scale" => c.mmd_scale = parse_value(key, v)?,
                "mc_samples" => c.mc_samples = parse_value(key, v)?,
                "record_time" => c.record_time = parse_value(key, v)?,
                other => return Err(Error::Config(format!("unknown key `{other}`"))),
            }
        }
        c.lambda = match values.get("lambda") {
            Some(v) => parse_value("lambda", v)?,
            None => default_lambda(c.model),
        };
        c.validate()?;
        Ok(c)
    }

    /// Defaults, then the file at `file` (if any), then `overrides`.
    pub fn layered(file: Option<&Path>, overrides: &BTreeMap<String, String>) -> Result<Self> {
        let mut map = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                parse_key_values(&text)?
            }
            None => BTreeMap::new(),
        };
        for (k, v) in overrides {
            if !KEYS.contains(&k.as_str()) {
                return Err(Error::Config(format!("unknown key `{k}`")));
            }
            map.insert(k.clone(), v.clone());
        }
        Self::from_map(&map)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_map(&parse_key_values(text)?)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.k < 1 {
            return fail("k must be at least 1".into());
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return fail(format!("lambda must be finite and nonnegative, got {}", self.lambda));
        }
        if self.batch < 2 {
            return fail(format!("batch must be at least 2, got {}", self.batch));
        }
        if self.epochs < 1 {
            return fail("epochs must be at least 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.decay > 0.0 && self.decay.is_finite()) {
            return fail(format!("decay must be positive, got {}", self.decay));
        }
        if matches!(self.subset, Some(n) if n < 2) {
            return fail("subset must hold at least 2 images".into());
        }
        if self.n_eval < 2 {
            return fail("n_eval must be at least 2".into());
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return fail(format!("jitter must be nonnegative, got {}", self.jitter));
        }
        if !(self.mmd_scale > 0.0 && self.mmd_scale.is_finite()) {
            return fail(format!("mmd_scale must be positive, got {}", self.mmd_scale));
        }
        if self.mc_samples < 1 {
            return fail("mc_samples must be at least 1".into());
        }
        Ok(())
    }

    pub fn lr_schedule(&self) -> LrSchedule {
        match self.schedule {
            ScheduleKind::Exponential => LrSchedule::Exponential {
                base: self.lr,
                decay: self.decay,
            },
            ScheduleKind::Staircase => LrSchedule::Staircase { base: self.lr },
        }
    }

    /// All keys, one per line, in [`KEYS`] order.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("model", self.model.to_string());
        put("k", self.k.to_string());
        put("lambda", self.lambda.to_string());
        put("recon", self.recon.to_string());
        put("batch", self.batch.to_string());
        put("epochs", self.epochs.to_string());
        put("seed", self.seed.to_string());
        put("lr", self.lr.to_string());
        put("decay", self.decay.to_string());
        put(
            "schedule",
            match self.schedule {
                ScheduleKind::Exponential => "exponential",
                ScheduleKind::Staircase => "staircase",
            }
            .into(),
        );
        put("subset", self.subset.map_or_else(|| "all".into(), |n| n.to_string()));
        put("n_eval", self.n_eval.to_string());
        put("data_dir", self.data_dir.as_ref().map_or_else(String::new, |p| p.display().to_string()));
        put("out", self.out.display().to_string());
        put("jitter", self.jitter.to_string());
        put("mmd_scale", self.mmd_scale.to_string());
        put("mc_samples", self.mc_samples.to_string());
        put("record_time", self.record_time.to_string());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn map(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn defaults_follow_model() {
        let c = TrainingConfig::from_map(&map(&[("model", "wae")])).unwrap();
        assert_eq!(c.lambda, 10.0);
        assert_eq!(c.batch, 128);
        assert_eq!((c.lr, c.decay), (0.001, 0.995));
        assert_eq!(c.k, 20);
        assert_eq!(c.epochs, 100);
        let c = TrainingConfig::from_map(&map(&[("model", "vae"), ("lambda", "4")])).unwrap();
        assert_eq!(c.lambda, 4.0);
    }

    #[test]
    fn parse_errors_are_config_errors() {
        for bad in ["k = 0", "model = gan", "lambda = -1", "batch = 1", "nonsense = 3", "k = 3\nk = 4", "just words", "lr = abc"] {
            assert!(matches!(TrainingConfig::parse(bad), Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn comments_and_blank_lines() {
        let c = TrainingConfig::parse("# experiment\n\nmodel = vae\n  k=5  \n").unwrap();
        assert_eq!((c.model, c.k), (ModelKind::Vae, 5));
    }

    #[test]
    fn layering_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.cfg");
        std::fs::write(&file, "k = 5\nepochs = 3\nseed = 9\n").unwrap();
        let c = TrainingConfig::layered(Some(&file), &map(&[("epochs", "7")])).unwrap();
        assert_eq!((c.k, c.epochs, c.seed, c.batch), (5, 7, 9, 128));
        assert!(matches!(TrainingConfig::layered(Some(&dir.path().join("missing")), &BTreeMap::new()), Err(Error::Io { .. })));
    }

    proptest! {
        #[test]
        fn serialize_parse_round_trip(
            k in 1usize..64,
            lambda in 0.0f64..100.0,
            seed in any::<u64>(),
            lr in 1e-6f64..1.0,
            subset in prop::option::of(2usize..60000),
            model in 0u8..3,
            bce in any::<bool>(),
            stair in any::<bool>(),
        ) {
            let c = TrainingConfig {
                model: ModelKind::from_code(model).unwrap(),
                k,
                lambda,
                seed,
                lr,
                subset,
                recon: if bce { ReconKind::BernoulliCe } else { ReconKind::SquaredError },
                schedule: if stair { ScheduleKind::Staircase } else { ScheduleKind::Exponential },
                data_dir: Some(PathBuf::from("/data/mnist")),
                ..TrainingConfig::default()
            };
            let text = c.serialize();
            let back = TrainingConfig::parse(&text).unwrap();
            prop_assert_eq!(&back, &c);
            prop_assert_eq!(back.serialize(), text);
        }
    }
}
