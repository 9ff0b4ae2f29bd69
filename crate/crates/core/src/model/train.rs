use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Batch, LpmModel, StepOptions};
use crate::autodiff::{AdamConfig, AdamState, Real, Tape, Tensor2};
use crate::distances::DistanceKind;
use crate::pointcloud::Dataset;
use crate::{Error, Result};

/// Labels that drive the part pool during training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoolLabels {
    #[default]
    GroundTruth,
    /// Predictions of the segmentation head kept at its initial weights.
    FrozenHead,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub metric: DistanceKind,
    /// Weight of the cross-entropy term.
    pub seg_weight: f64,
    pub adam: AdamConfig,
    pub seed: u64,
    pub pool_labels: PoolLabels,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 32,
            metric: DistanceKind::Chamfer,
            seg_weight: 1.0,
            adam: AdamConfig::default(),
            seed: 0,
            pool_labels: PoolLabels::GroundTruth,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be at least 1".into()));
        }
        if !(self.adam.lr >= 0.0) || !self.seg_weight.is_finite() {
            return Err(Error::Config(format!(
                "invalid learning rate {} or segmentation weight {}",
                self.adam.lr, self.seg_weight
            )));
        }
        if self.metric == DistanceKind::EmdExact {
            return Err(Error::Config("training metric must be cd or emd".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean per-sample reconstruction loss.
    pub recon: f64,
    /// Mean cross-entropy (0 when the head is not trained).
    pub seg: f64,
    /// Mean KL term (0 without a VAE head).
    #[serde(default)]
    pub kl: f64,
    /// Training point accuracy of the segmentation head.
    pub seg_accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

impl TrainHistory {
    pub fn first(&self) -> Option<&EpochStats> {
        self.epochs.first()
    }

    pub fn last(&self) -> Option<&EpochStats> {
        self.epochs.last()
    }
}

/// Trains `model` on every sample of `data`. The history has one entry per
/// epoch, in order.
pub fn train<T: Real>(model: &mut LpmModel<T>, data: &Dataset, cfg: &TrainConfig) -> Result<TrainHistory> {
    train_with(model, data, cfg, |_| {})
}

/// As [`train`], calling `on_epoch` after every epoch.
pub fn train_with<T: Real>(
    model: &mut LpmModel<T>,
    data: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainHistory> {
    cfg.validate()?;
    if data.parts != model.parts() {
        return Err(Error::Config(format!(
            "dataset has {} parts, model expects {}",
            data.parts,
            model.parts()
        )));
    }
    if data.is_empty() {
        return Err(Error::Empty("training set".into()));
    }
    let frozen_head = cfg.pool_labels == PoolLabels::FrozenHead;
    if frozen_head && model.seg.is_none() {
        return Err(Error::HeadMissing("segmentation".into()));
    }
    let opts = StepOptions {
        metric: cfg.metric,
        seg_weight: cfg.seg_weight,
        pool_labels: cfg.pool_labels,
        train_seg: !frozen_head,
        vae_noise: true,
    };
    let mut trainable = model.encoder.param_ids();
    trainable.extend(model.decoder.param_ids());
    if let Some(vae) = &model.vae {
        trainable.extend(vae.param_ids());
    }
    if let (Some(seg), false) = (&model.seg, frozen_head) {
        trainable.extend(seg.param_ids());
    }
    let weights: Vec<usize> = model
        .store
        .weight_ids()
        .into_iter()
        .filter(|id| trainable.contains(id))
        .collect();
    let mut adam = AdamState::new(cfg.adam, model.store.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // separate stream so the batch order does not depend on the VAE head
    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_a11c);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = TrainHistory::default();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut kl, mut recon, mut seg, mut correct, mut counted) = (0.0, 0.0, 0.0, 0usize, 0usize);
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let clouds: Vec<_> = chunk.iter().map(|&i| &data.samples[i]).collect();
            let batch = Batch::<T>::from_refs(&clouds);
            let (grads, stats) = {
                let mut tape = Tape::new();
                let fw = model.forward_train(&mut tape, &batch, &opts, &mut noise_rng)?;
                let loss = tape.value(fw.loss).data()[0];
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch, batch: bi });
                }
                recon += fw.recon * chunk.len() as f64;
                seg += fw.seg * chunk.len() as f64;
                kl += fw.kl * chunk.len() as f64;
                correct += fw.correct;
                counted += fw.counted;
                let g = tape.backward(fw.loss, T::one())?;
                let grads: Vec<(usize, Tensor2<T>)> = weights
                    .iter()
                    .filter_map(|&id| g.param(id).map(|t| (id, t)))
                    .collect();
                (grads, (fw.encoder_stats, fw.seg_stats))
            };
            adam.step(&mut model.store, &grads)?;
            model.encoder.update_running_stats(&mut model.store, &stats.0);
            if let Some(seg) = &model.seg {
                seg.update_running_stats(&mut model.store, &stats.1);
            }
        }
        let n = data.len() as f64;
        let stats = EpochStats {
            epoch,
            recon: recon / n,
            seg: seg / n,
            kl: kl / n,
            seg_accuracy: if counted > 0 { correct as f64 / counted as f64 } else { 0.0 },
        };
        log::info!(
            "epoch {epoch}: recon {:.6} seg {:.6} acc {:.4}",
            stats.recon,
            stats.seg,
            stats.seg_accuracy
        );
        on_epoch(&stats);
        history.epochs.push(stats);
    }
    Ok(history)
}
