//! Training logs, latent dumps, and the analyses run on them: aggregated
//! posterior covariance and correlation, collapse detection and binned
//! mutual information.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::heatmap;
use crate::models::ModelKind;
use crate::rng::Substream;
use crate::tensor::cholesky_factor;

pub const ELBO_HEADER: &str = "epoch,lambda,total,recon,reg,elbo,mean_sigma2,seconds";
pub const SENSITIVITY_HEADER: &str = "model,lambda,seed,final_elbo,final_recon,final_reg,U_sigma2_proxy";
pub const MI_HEADER: &str = "dimension,mi,variance,collapsed";
pub const DEFAULT_COLLAPSE_THRESHOLD: f64 = 0.01;
pub const DEFAULT_MI_BINS: usize = 16;
/// Minimum expected occupancy per joint histogram cell.
pub const MI_MIN_OCCUPANCY: usize = 5;
/// Files written by [`export_artifacts`].
pub const ARTIFACT_FILES: [&str; 7] = [
    "elbo_curve.csv",
    "sensitivity.csv",
    "cov.csv",
    "corr.csv",
    "mi.csv",
    "cov.pgm",
    "corr.pgm",
];
const HEATMAP_CELL: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lambda: f64,
    pub total: f64,
    pub recon: f64,
    pub reg: f64,
    pub elbo: f64,
    pub mean_sigma2: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingLog {
    pub records: Vec<EpochRecord>,
}

impl TrainingLog {
    /// Appends a record; epochs must increase and every field be finite.
    pub fn push(&mut self, r: EpochRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if r.epoch <= last.epoch {
                return Err(Error::contract(format!("epoch {} does not follow {}", r.epoch, last.epoch)));
            }
        }
        let fields = [r.lambda, r.total, r.recon, r.reg, r.elbo, r.mean_sigma2, r.seconds];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("training log entry for epoch {}", r.epoch)));
        }
        self.records.push(r);
        Ok(())
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    pub fn final_elbo(&self) -> Option<f64> {
        self.last().map(|r| r.elbo)
    }

    /// First epoch whose ELBO reaches `target`.
    pub fn first_epoch_reaching(&self, target: f64) -> Option<usize> {
        self.records.iter().find(|r| r.elbo >= target).map(|r| r.epoch)
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{ELBO_HEADER}\n");
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.epoch, r.lambda, r.total, r.recon, r.reg, r.elbo, r.mean_sigma2, r.seconds
            );
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(ELBO_HEADER) {
            return Err(Error::format(0, "missing training log header"));
        }
        let mut log = TrainingLog::default();
        for (i, line) in lines.enumerate() {
            let bad = || Error::format(i + 1, format!("malformed training log line {}", i + 2));
            let v: Vec<&str> = line.split(',').collect();
            if v.len() != 8 {
                return Err(bad());
            }
            let f = |j: usize| v[j].parse::<f64>().map_err(|_| bad());
            log.push(EpochRecord {
                epoch: v[0].parse().map_err(|_| bad())?,
                lambda: f(1)?,
                total: f(2)?,
                recon: f(3)?,
                reg: f(4)?,
                elbo: f(5)?,
                mean_sigma2: f(6)?,
                seconds: f(7)?,
            })?;
        }
        Ok(log)
    }
}

/// One row of a λ sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensitivityRow {
    pub model: ModelKind,
    pub lambda: f64,
    pub seed: u64,
    pub final_elbo: f64,
    pub final_recon: f64,
    pub final_reg: f64,
    /// Mean posterior variance at the last epoch.
    pub mean_sigma2: f64,
}

/// Rows sorted by model, then λ ascending.
pub fn sensitivity_csv(rows: &[SensitivityRow]) -> String {
    let mut sorted = rows.to_vec();
    sorted.sort_by(|a, b| {
        (a.model.code(), a.seed)
            .cmp(&(b.model.code(), b.seed))
            .then(a.lambda.total_cmp(&b.lambda))
    });
    let mut s = format!("{SENSITIVITY_HEADER}\n");
    for r in sorted {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.model, r.lambda, r.seed, r.final_elbo, r.final_recon, r.final_reg, r.mean_sigma2
        );
    }
    s
}

/// Encoder outputs over an evaluation set.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentDump {
    pub kind: ModelKind,
    pub epoch: usize,
    pub n: usize,
    pub k: usize,
    /// Row-major `[n, k]` encoder means.
    pub mu: Vec<f64>,
    /// Row-major `[n, k]` log-variances, for the stochastic encoders.
    pub log_var: Option<Vec<f64>>,
}

const DUMP_MAGIC: &[u8; 8] = b"HEBAELAT";
const DUMP_VERSION: u32 = 1;

impl LatentDump {
    pub fn new(kind: ModelKind, epoch: usize, k: usize, mu: Vec<f64>, log_var: Option<Vec<f64>>) -> Result<Self> {
        if k == 0 || !mu.len().is_multiple_of(k) {
            return Err(Error::dim(format!("{} values do not form rows of {k}", mu.len())));
        }
        if log_var.as_ref().is_some_and(|lv| lv.len() != mu.len()) {
            return Err(Error::dim("log-variances and means differ in size"));
        }
        if mu.iter().chain(log_var.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("latent dump".into()));
        }
        Ok(Self {
            kind,
            epoch,
            n: mu.len() / k,
            k,
            mu,
            log_var,
        })
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.mu[i * self.k + j]).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(40 + 16 * self.mu.len());
        out.extend_from_slice(DUMP_MAGIC);
        out.extend_from_slice(&DUMP_VERSION.to_le_bytes());
        out.push(self.kind.code());
        out.push(u8::from(self.log_var.is_some()));
        for v in [self.epoch as u64, self.n as u64, self.k as u64] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in self.mu.iter().chain(self.log_var.iter().flatten()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 38 || &bytes[..8] != DUMP_MAGIC {
            return Err(Error::format(0, "not a latent dump"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != DUMP_VERSION {
            return Err(Error::format(8, format!("unsupported dump version {version}")));
        }
        let kind = ModelKind::from_code(bytes[12]).ok_or_else(|| Error::format(12, "unknown model kind"))?;
        let has_lv = bytes[13] == 1;
        let u = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes")) as usize;
        let (epoch, n, k) = (u(14), u(22), u(30));
        let count = n * k * if has_lv { 2 } else { 1 };
        let payload = &bytes[38..];
        if payload.len() != count * 8 {
            return Err(Error::format(38, "latent dump payload has the wrong size"));
        }
        let values: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let (mu, lv) = values.split_at(n * k);
        Self::new(kind, epoch, k, mu.to_vec(), has_lv.then(|| lv.to_vec()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovCorr {
    pub k: usize,
    /// Unbiased covariance, row-major `k × k`.
    pub cov: Vec<f64>,
    /// Correlation; rows and columns of zero-variance dimensions are NaN.
    pub corr: Vec<f64>,
    /// Dimensions whose correlation is undefined.
    pub undefined: Vec<usize>,
    /// Mean `|corr|` over defined off-diagonal pairs (0 when none).
    pub mean_abs_offdiag: f64,
}

/// Covariance and correlation of the latent means.
pub fn aggregated_cov_corr(dump: &LatentDump) -> Result<CovCorr> {
    let (n, k) = (dump.n, dump.k);
    if n < 2 {
        return Err(Error::contract("covariance needs at least two rows"));
    }
    let mut mean = vec![0.0; k];
    for row in dump.mu.chunks_exact(k) {
        mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = vec![0.0; k * k];
    for row in dump.mu.chunks_exact(k) {
        for i in 0..k {
            let di = row[i] - mean[i];
            for j in i..k {
                cov[i * k + j] += di * (row[j] - mean[j]);
            }
        }
    }
    for i in 0..k {
        for j in i..k {
            cov[i * k + j] /= (n - 1) as f64;
            cov[j * k + i] = cov[i * k + j];
        }
    }
    let undefined: Vec<usize> = (0..k)
        .filter(|&j| cov[j * k + j].sqrt() <= 1e-12 * mean[j].abs().max(1.0))
        .collect();
    let mut corr = vec![f64::NAN; k * k];
    let (mut acc, mut pairs) = (0.0, 0usize);
    for i in 0..k {
        for j in 0..k {
            if undefined.contains(&i) || undefined.contains(&j) {
                continue;
            }
            let c = if i == j {
                1.0
            } else {
                (cov[i * k + j] / (cov[i * k + i] * cov[j * k + j]).sqrt()).clamp(-1.0, 1.0)
            };
            corr[i * k + j] = c;
            if i != j {
                acc += c.abs();
                pairs += 1;
            }
        }
    }
    Ok(CovCorr {
        k,
        cov,
        corr,
        undefined,
        mean_abs_offdiag: if pairs == 0 { 0.0 } else { acc / pairs as f64 },
    })
}

/// Dimensions whose mean has variance strictly below `threshold`.
pub fn collapse_report(dump: &LatentDump, threshold: f64) -> Vec<usize> {
    column_variances(dump)
        .into_iter()
        .enumerate()
        .filter(|&(_, v)| v < threshold)
        .map(|(j, _)| j)
        .collect()
}

fn column_variances(dump: &LatentDump) -> Vec<f64> {
    (0..dump.k)
        .map(|j| {
            let col = dump.column(j);
            let m = col.iter().sum::<f64>() / col.len() as f64;
            col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (col.len().max(2) - 1) as f64
        })
        .collect()
}

/// Rank-based bin of every value: `bins` cells of (nearly) equal count.
fn equal_frequency_bins(values: &[f64], bins: usize) -> Vec<usize> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut out = vec![0; n];
    for (rank, &i) in order.iter().enumerate() {
        out[i] = rank * bins / n;
    }
    out
}

/// Plug-in mutual information (nats) of the joint histogram after
/// equal-frequency binning of both variables.
pub fn binned_mi(x: &[f64], y: &[f64], bins: usize) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::dim("binned_mi inputs differ in length"));
    }
    if bins < 2 {
        return Err(Error::contract("need at least two bins"));
    }
    let n = x.len();
    if n < bins * bins * MI_MIN_OCCUPANCY {
        return Err(Error::contract(format!(
            "{n} samples are too few for {bins} bins (need {}); use fewer bins",
            bins * bins * MI_MIN_OCCUPANCY
        )));
    }
    let (bx, by) = (equal_frequency_bins(x, bins), equal_frequency_bins(y, bins));
    let mut joint = vec![0usize; bins * bins];
    let (mut px, mut py) = (vec![0usize; bins], vec![0usize; bins]);
    for (&a, &b) in bx.iter().zip(&by) {
        joint[a * bins + b] += 1;
        px[a] += 1;
        py[b] += 1;
    }
    let nf = n as f64;
    let mut terms: Vec<f64> = (0..bins * bins)
        .filter(|&cell| joint[cell] > 0)
        .map(|cell| {
            let c = joint[cell] as f64;
            c / nf * (c * nf / (px[cell / bins] as f64 * py[cell % bins] as f64)).ln()
        })
        .collect();
    // summing in sorted order makes the result exactly symmetric in (x, y)
    terms.sort_by(f64::total_cmp);
    let mi: f64 = terms.iter().sum();
    Ok(mi.clamp(0.0, (bins as f64).ln()))
}

/// Draws one latent code per dump row from the model's posterior: the mean
/// itself for WAE, `μ + σ ⊙ ε` for VAE, and `μ + σ ⊙ (R ε)` for HEBAE with
/// `R` the Cholesky factor of the (jittered) aggregated covariance.
pub fn sample_codes(dump: &LatentDump, jitter_scale: f64, rng: &mut Substream) -> Result<Vec<f64>> {
    let (n, k) = (dump.n, dump.k);
    let Some(lv) = &dump.log_var else {
        return Ok(dump.mu.clone());
    };
    let r = match dump.kind {
        ModelKind::Hebae => {
            let cc = aggregated_cov_corr(dump)?;
            let mean_diag = (0..k).map(|i| cc.cov[i * k + i]).sum::<f64>() / k as f64;
            let mut s = cc.cov;
            let jitter = jitter_scale * if mean_diag > crate::models::DEGENERATE_VARIANCE { mean_diag } else { 1.0 };
            (0..k).for_each(|i| s[i * k + i] += jitter);
            Some(cholesky_factor(&s, k)?)
        }
        _ => None,
    };
    let mut z = dump.mu.clone();
    for i in 0..n {
        let eps = rng.normals(k);
        for j in 0..k {
            let e = match &r {
                Some(r) => (0..=j).map(|p| r[j * k + p] * eps[p]).sum(),
                None => eps[j],
            };
            z[i * k + j] += (0.5 * lv[i * k + j]).exp() * e;
        }
    }
    Ok(z)
}

/// Per-dimension mutual information between each datum's encoder mean
/// (its identity, ranked) and a latent code sampled for it.
pub fn index_code_mi(dump: &LatentDump, jitter_scale: f64, bins: usize, rng: &mut Substream) -> Result<Vec<f64>> {
    let z = sample_codes(dump, jitter_scale, rng)?;
    (0..dump.k)
        .map(|j| {
            let zj: Vec<f64> = (0..dump.n).map(|i| z[i * dump.k + j]).collect();
            binned_mi(&dump.column(j), &zj, bins)
        })
        .collect()
}

fn matrix_csv(values: &[f64], k: usize) -> String {
    let mut s = (0..k).map(|j| format!("d{j}")).collect::<Vec<_>>().join(",");
    s.push('\n');
    for i in 0..k {
        let row: Vec<String> = (0..k)
            .map(|j| {
                let v = values[i * k + j];
                if v.is_nan() {
                    "undefined".into()
                } else {
                    v.to_string()
                }
            })
            .collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

/// Per-dimension mutual information and variance, then their mean.
pub fn mi_csv(mi: &[f64], variances: &[f64], collapsed: &[usize]) -> String {
    let mut s = format!("{MI_HEADER}\n");
    for (j, (m, v)) in mi.iter().zip(variances).enumerate() {
        let _ = writeln!(s, "{j},{m},{v},{}", collapsed.contains(&j));
    }
    let mean = |xs: &[f64]| if xs.is_empty() { 0.0 } else { xs.iter().sum::<f64>() / xs.len() as f64 };
    let _ = writeln!(s, "mean,{},{},{}", mean(mi), mean(variances), collapsed.len());
    s
}

/// Everything computed from one dump.
#[derive(Debug, Clone, PartialEq)]
pub struct DumpAnalysis {
    pub cov_corr: CovCorr,
    pub variances: Vec<f64>,
    pub collapsed: Vec<usize>,
    pub mi: Vec<f64>,
    pub mean_mi: f64,
}

pub fn analyze_dump(dump: &LatentDump, threshold: f64, jitter_scale: f64, bins: usize, rng: &mut Substream) -> Result<DumpAnalysis> {
    let mi = index_code_mi(dump, jitter_scale, bins, rng)?;
    let mean_mi = mi.iter().sum::<f64>() / mi.len() as f64;
    Ok(DumpAnalysis {
        cov_corr: aggregated_cov_corr(dump)?,
        variances: column_variances(dump),
        collapsed: collapse_report(dump, threshold),
        mi,
        mean_mi,
    })
}

/// Writes the CSV tables and the `|cov|` and `corr` heatmaps into `out_dir`.
pub fn export_artifacts(
    log: Option<&TrainingLog>,
    sensitivity: &[SensitivityRow],
    analysis: &DumpAnalysis,
    out_dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let write = |name: &str, bytes: &[u8]| {
        let path = out_dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| Error::io(path, e))
    };
    let k = analysis.cov_corr.k;
    write("elbo_curve.csv", log.cloned().unwrap_or_default().to_csv().as_bytes())?;
    write("sensitivity.csv", sensitivity_csv(sensitivity).as_bytes())?;
    write("cov.csv", matrix_csv(&analysis.cov_corr.cov, k).as_bytes())?;
    write("corr.csv", matrix_csv(&analysis.cov_corr.corr, k).as_bytes())?;
    write("mi.csv", mi_csv(&analysis.mi, &analysis.variances, &analysis.collapsed).as_bytes())?;
    let abs_cov: Vec<f64> = analysis.cov_corr.cov.iter().map(|v| v.abs()).collect();
    let max = abs_cov.iter().copied().fold(0.0, f64::max);
    write("cov.pgm", &heatmap(&abs_cov, k, max, HEATMAP_CELL).to_pgm())?;
    let abs_corr: Vec<f64> = analysis.cov_corr.corr.iter().map(|v| v.abs()).collect();
    write("corr.pgm", &heatmap(&abs_corr, k, 1.0, HEATMAP_CELL).to_pgm())?;
    Ok(())
}
