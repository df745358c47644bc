//! The training loop and evaluation-set encoding.

use std::time::Instant;

use crate::config::TrainingConfig;
use crate::data::{BatchIterator, Dataset};
use crate::diagnostics::{EpochRecord, LatentDump, TrainingLog};
use crate::error::{Error, Result};
use crate::models::{Autoencoder, BoundAutoencoder, ForwardOptions, ModelKind, Noise};
use crate::objectives::{hebae_loss, vae_loss, wae_loss, LossBreakdown};
use crate::optim::{adam_step, AdamState};
use crate::rng::{Purpose, RngStream};
use crate::tensor::Tensor;

/// Encoder batches used when encoding an evaluation set.
const ENCODE_CHUNK: usize = 500;

pub struct TrainOutcome {
    pub model: Autoencoder,
    pub adam: AdamState,
    pub log: TrainingLog,
}

pub fn forward_options(cfg: &TrainingConfig) -> ForwardOptions {
    ForwardOptions {
        jitter_scale: cfg.jitter,
        mc_samples: cfg.mc_samples,
    }
}

/// Loss of one batch. Noise and prior draws come from the `(epoch, batch)`
/// cells of the run's stream.
pub fn batch_loss(
    model: &BoundAutoencoder,
    images: &Tensor,
    cfg: &TrainingConfig,
    rng: &RngStream,
    epoch: u64,
    batch: u64,
) -> Result<LossBreakdown> {
    let mut noise = rng.substream(Purpose::Noise, epoch, batch);
    let fwd = model.forward(images, &mut Noise::Draw(&mut noise), &forward_options(cfg))?;
    match model.kind {
        ModelKind::Vae => vae_loss(images, &fwd, cfg.lambda, cfg.recon),
        ModelKind::Hebae => {
            let stats = fwd.stats.as_ref().expect("HEBAE forward computes batch statistics");
            hebae_loss(images, &fwd, stats, cfg.lambda, cfg.recon)
        }
        ModelKind::Wae => {
            let shape = fwd.z().shape().to_vec();
            let mut prior = rng.substream(Purpose::Prior, epoch, batch);
            let sample = Tensor::new(prior.normals(shape.iter().product()), &shape)?;
            wae_loss(images, &fwd, &sample, cfg.lambda, cfg.mmd_scale, cfg.recon)
        }
    }
}

/// One optimizer step on one batch; returns the batch loss.
pub fn train_step(
    model: &mut Autoencoder,
    adam: &mut AdamState,
    names: &[String],
    images: &Tensor,
    cfg: &TrainingConfig,
    rng: &RngStream,
    epoch: u64,
    batch: u64,
    lr: f64,
) -> Result<LossBreakdown> {
    let bound = model.bind()?;
    let loss = batch_loss(&bound, images, cfg, rng, epoch, batch)?;
    loss.total.backward()?;
    let grads = bound.take_grads();
    adam_step(&mut model.params_mut(), &grads, names, adam, lr)?;
    Ok(loss)
}

/// Trains a fresh model on `data` for `cfg.epochs` epochs, calling
/// `on_epoch` after each one.
pub fn train(cfg: &TrainingConfig, data: &Dataset, on_epoch: &mut dyn FnMut(&EpochRecord)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let rng = RngStream::new(cfg.seed);
    let model = Autoencoder::new_mnist(cfg.model, cfg.k, &rng)?;
    let adam = AdamState::for_params(&model.params());
    resume(cfg, data, model, adam, TrainingLog::default(), on_epoch)
}

/// Continues training from the given state until `cfg.epochs` epochs are
/// complete in total.
pub fn resume(
    cfg: &TrainingConfig,
    data: &Dataset,
    mut model: Autoencoder,
    mut adam: AdamState,
    mut log: TrainingLog,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    if data.len() < 2 {
        return Err(Error::Config("training needs at least two images".into()));
    }
    let rng = RngStream::new(cfg.seed);
    let names: Vec<String> = model.param_specs().into_iter().map(|(n, _)| n).collect();
    let schedule = cfg.lr_schedule();
    let start = log.last().map_or(0, |r| r.epoch);
    for epoch in start..cfg.epochs {
        let clock = Instant::now();
        let lr = schedule.rate(epoch as i64)?;
        let (mut total, mut recon, mut reg, mut sigma2, mut seen) = (0.0, 0.0, 0.0, 0.0, 0usize);
        for (b, batch) in BatchIterator::new(data, cfg.batch, &rng, epoch as u64)?.enumerate() {
            let batch = batch?;
            let m = batch.indices.len();
            let loss = train_step(&mut model, &mut adam, &names, &batch.images, cfg, &rng, epoch as u64, b as u64, lr)?;
            let w = m as f64;
            total += w * loss.total_value();
            recon += w * loss.recon_value();
            reg += w * loss.regularizer_value();
            sigma2 += w * loss.terms.mean_sigma2;
            seen += m;
        }
        let n = seen as f64;
        let record = EpochRecord {
            epoch: epoch + 1,
            lambda: cfg.lambda,
            total: total / n,
            recon: recon / n,
            reg: reg / n,
            elbo: -total / n,
            mean_sigma2: sigma2 / n,
            seconds: if cfg.record_time { clock.elapsed().as_secs_f64() } else { 0.0 },
        };
        log.push(record)?;
        on_epoch(&record);
    }
    Ok(TrainOutcome { model, adam, log })
}

/// Encoder means (and log-variances) of every image in `data`.
pub fn encode_dataset(model: &Autoencoder, data: &Dataset, epoch: usize) -> Result<LatentDump> {
    let bound = model.bind_frozen()?;
    let k = model.latent_dim;
    let mut mu = Vec::with_capacity(data.len() * k);
    let mut lv = Vec::new();
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(ENCODE_CHUNK) {
        let enc = bound.encode(&data.batch(chunk)?)?;
        mu.extend_from_slice(enc.mu.data());
        if let Some(l) = &enc.log_var {
            lv.extend_from_slice(l.data());
        }
    }
    let log_var = (model.kind != ModelKind::Wae).then_some(lv);
    LatentDump::new(model.kind, epoch, k, mu, log_var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Split, PIXELS};

    /// Blurry random strokes: enough structure for the loss to fall.
    fn toy_data(n: usize, seed: u64) -> Dataset {
        let mut s = RngStream::new(seed).substream(Purpose::Test, 0, 0);
        let mut pixels = Vec::with_capacity(n * PIXELS);
        for _ in 0..n {
            let (cx, cy) = (s.uniform(8.0, 20.0), s.uniform(8.0, 20.0));
            for y in 0..28 {
                for x in 0..28 {
                    let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                    pixels.push((255.0 * (-d2 / 18.0).exp()).round() as u8);
                }
            }
        }
        Dataset::new(pixels, vec![0; n], Split::Train).unwrap()
    }

    fn cfg(model: ModelKind) -> TrainingConfig {
        TrainingConfig {
            model,
            k: 2,
            lambda: crate::config::default_lambda(model),
            batch: 16,
            epochs: 3,
            seed: 11,
            lr: 0.001,
            ..TrainingConfig::default()
        }
    }

    #[test]
    fn loss_decreases_for_every_model() {
        let data = toy_data(64, 1);
        for kind in ModelKind::ALL {
            let mut epochs = Vec::new();
            let out = train(&cfg(kind), &data, &mut |r| epochs.push(r.epoch)).unwrap();
            assert_eq!(epochs, vec![1, 2, 3]);
            let recs = &out.log.records;
            assert!(recs[2].total < recs[0].total, "{kind}: {:?}", recs.iter().map(|r| r.total).collect::<Vec<_>>());
            assert_eq!(out.adam.t, 12);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let data = toy_data(40, 2);
        let a = train(&cfg(ModelKind::Hebae), &data, &mut |_| {}).unwrap();
        let b = train(&cfg(ModelKind::Hebae), &data, &mut |_| {}).unwrap();
        assert_eq!(a.log.to_csv(), b.log.to_csv());
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let data = toy_data(40, 3);
        let full = train(&cfg(ModelKind::Vae), &data, &mut |_| {}).unwrap();
        let mut short = cfg(ModelKind::Vae);
        short.epochs = 1;
        let first = train(&short, &data, &mut |_| {}).unwrap();
        let rest = resume(&cfg(ModelKind::Vae), &data, first.model, first.adam, first.log, &mut |_| {}).unwrap();
        assert_eq!(rest.log, full.log);
        assert_eq!(rest.model, full.model);
    }

    #[test]
    fn dump_shapes() {
        let data = toy_data(12, 4);
        let model = Autoencoder::new_mnist(ModelKind::Hebae, 3, &RngStream::new(0)).unwrap();
        let d = encode_dataset(&model, &data, 0).unwrap();
        assert_eq!((d.n, d.k), (12, 3));
        assert_eq!(d.log_var.as_ref().unwrap().len(), 36);
        let w = Autoencoder::new_mnist(ModelKind::Wae, 3, &RngStream::new(0)).unwrap();
        assert!(encode_dataset(&w, &data, 0).unwrap().log_var.is_none());
    }
}
