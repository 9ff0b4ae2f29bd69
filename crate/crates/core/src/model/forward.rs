//! Graph construction shared by inference, training and the generative heads.

use std::borrow::Cow;

use rand::Rng;

use super::{losses, masked_argmax, LpmModel, PoolLabels};
use crate::autodiff::{Binding, MlpForward, Real, Tape, Tensor2, Var};
use crate::generative::normal_tensor;
use crate::distances::DistanceKind;
use crate::pointcloud::{LabeledCloud, Point};
use crate::{Error, Result};

/// Several clouds stacked row-wise.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    pub x: Tensor2<T>,
    pub labels: Vec<usize>,
    /// Sample `b` occupies rows `offsets[b]..offsets[b + 1]`.
    pub offsets: Vec<usize>,
    /// Non-padding points of each sample.
    pub targets: Vec<Vec<Point>>,
}

impl<T: Real> Batch<T> {
    pub fn new(clouds: &[LabeledCloud]) -> Self {
        Self::from_refs(&clouds.iter().collect::<Vec<_>>())
    }

    pub fn from_refs(clouds: &[&LabeledCloud]) -> Self {
        let total: usize = clouds.iter().map(|c| c.len()).sum();
        let mut data = Vec::with_capacity(total * 3);
        let mut labels = Vec::with_capacity(total);
        let mut offsets = vec![0];
        for c in clouds {
            data.extend(c.points.iter().flatten().map(|&v| T::from_f64(v)));
            labels.extend(&c.labels);
            offsets.push(labels.len());
        }
        Batch {
            x: Tensor2::from_vec(total, 3, data).expect("row-major points"),
            labels,
            offsets,
            targets: clouds.iter().map(|c| c.real_points()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Sample index of every row.
    pub fn row_samples(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.labels.len());
        for b in 0..self.len() {
            out.extend(std::iter::repeat_n(b, self.offsets[b + 1] - self.offsets[b]));
        }
        out
    }
}

#[derive(Clone, Copy, Debug)]
pub struct StepOptions {
    pub metric: DistanceKind,
    pub seg_weight: f64,
    pub pool_labels: PoolLabels,
    /// Whether the segmentation head is trained (and its loss counted).
    pub train_seg: bool,
    /// Sample part latents through the VAE head (when present) instead of
    /// using its mean.
    pub vae_noise: bool,
}

impl StepOptions {
    pub fn new(metric: DistanceKind) -> Self {
        StepOptions {
            metric,
            seg_weight: 1.0,
            pool_labels: PoolLabels::GroundTruth,
            train_seg: true,
            vae_noise: true,
        }
    }
}

/// Nodes and statistics of one training forward pass.
pub struct TrainForward<T> {
    pub loss: Var,
    pub recon: f64,
    pub seg: f64,
    /// KL term of the VAE head (0 without one).
    pub kl: f64,
    pub correct: usize,
    pub counted: usize,
    pub parts: Var,
    pub present: Vec<bool>,
    pub encoder_stats: Vec<Option<(Vec<T>, Vec<T>)>>,
    pub seg_stats: Vec<Option<(Vec<T>, Vec<T>)>>,
}

impl<T: Real> LpmModel<T> {
    pub fn point_features_graph<'a>(
        &'a self,
        tape: &mut Tape<'a, T>,
        x: Var,
        train: bool,
        binding: Binding,
    ) -> Result<MlpForward<T>> {
        if tape.value(x).rows() == 0 {
            return Err(Error::Empty("no input points".into()));
        }
        self.encoder.forward(&self.store, tape, x, train, binding)
    }

    /// Pools point features per (sample, label). Output row `b·k + p − 1`
    /// is part `p` of sample `b`.
    pub fn part_pool_graph(
        &self,
        tape: &mut Tape<'_, T>,
        fx: Var,
        labels: &[usize],
        offsets: &[usize],
    ) -> Result<(Var, Vec<bool>)> {
        let k = self.config.parts;
        let mut groups = Vec::with_capacity(labels.len());
        for b in 0..offsets.len() - 1 {
            for &lab in &labels[offsets[b]..offsets[b + 1]] {
                if lab > k {
                    return Err(Error::InvalidLabel { label: lab, parts: k });
                }
                groups.push((lab != 0).then(|| b * k + lab - 1));
            }
        }
        let n_groups = (offsets.len() - 1) * k;
        tape.group_pool(fx, &groups, n_groups, self.config.pooling)
    }

    /// Pools present part rows of each sample into its global feature.
    pub fn fuse_graph(&self, tape: &mut Tape<'_, T>, parts: Var, present: &[bool], batch: usize) -> Result<Var> {
        let k = self.config.parts;
        for b in 0..batch {
            if !present[b * k..(b + 1) * k].iter().any(|&p| p) {
                return Err(Error::Empty(format!("sample {b} has no present part")));
            }
        }
        let groups: Vec<Option<usize>> = present
            .iter()
            .enumerate()
            .map(|(r, &p)| p.then_some(r / k))
            .collect();
        Ok(tape.group_pool(parts, &groups, batch, self.config.pooling)?.0)
    }

    /// Pools all non-padding rows of each sample directly.
    pub fn direct_global_graph(
        &self,
        tape: &mut Tape<'_, T>,
        fx: Var,
        labels: &[usize],
        offsets: &[usize],
    ) -> Result<Var> {
        let mut groups = Vec::with_capacity(labels.len());
        for b in 0..offsets.len() - 1 {
            groups.extend(labels[offsets[b]..offsets[b + 1]].iter().map(|&l| (l != 0).then_some(b)));
        }
        Ok(tape.group_pool(fx, &groups, offsets.len() - 1, self.config.pooling)?.0)
    }

    /// Segmentation logits; `rows[i]` selects the global row paired with
    /// point `i`.
    pub fn segment_graph<'a>(
        &'a self,
        tape: &mut Tape<'a, T>,
        fx: Var,
        global: Var,
        rows: Vec<usize>,
        train: bool,
        binding: Binding,
    ) -> Result<MlpForward<T>> {
        let head = self.seg.as_ref().ok_or_else(|| Error::HeadMissing("segmentation".into()))?;
        let input = match self.config.segmentation {
            super::SegHead::Joint => {
                let g = tape.gather_rows(global, rows)?;
                tape.concat_cols(fx, g)?
            }
            _ => fx,
        };
        head.forward(&self.store, tape, input, train, binding)
    }

    /// Logits for a batch whose labels are unknown beyond the padding mask.
    pub fn predict_logits_graph<'a>(
        &'a self,
        tape: &mut Tape<'a, T>,
        fx: Var,
        batch: &Batch<T>,
        train: bool,
        binding: Binding,
    ) -> Result<Var> {
        let global = self.direct_global_graph(tape, fx, &batch.labels, &batch.offsets)?;
        Ok(self
            .segment_graph(tape, fx, global, batch.row_samples(), train, binding)?
            .output)
    }

    pub fn decode_graph<'a>(&'a self, tape: &mut Tape<'a, T>, global: Var, binding: Binding) -> Result<MlpForward<T>> {
        self.decoder.forward(&self.store, tape, global, true, binding)
    }

    /// Full training forward pass: reconstruction loss plus weighted
    /// cross-entropy, plus the weighted KL term when the model carries a
    /// VAE head. `rng` supplies the reparameterization noise.
    pub fn forward_train<'a, R: Rng + ?Sized>(
        &'a self,
        tape: &mut Tape<'a, T>,
        batch: &'a Batch<T>,
        opts: &StepOptions,
        rng: &mut R,
    ) -> Result<TrainForward<T>> {
        let x = tape.input_ref(&batch.x);
        let enc = self.point_features_graph(tape, x, true, Binding::default())?;
        let fx = enc.output;
        let pool_labels: Cow<[usize]> = match opts.pool_labels {
            PoolLabels::GroundTruth => Cow::Borrowed(&batch.labels),
            PoolLabels::FrozenHead => {
                let logits = self.predict_logits_graph(tape, fx, batch, false, Binding::Frozen)?;
                Cow::Owned(masked_argmax(tape.value(logits), &batch.labels))
            }
        };
        let (parts, present) = self.part_pool_graph(tape, fx, &pool_labels, &batch.offsets)?;
        let mut extra = Vec::new();
        let mut kl = 0.0;
        let fused_in = match &self.vae {
            Some(vae) => {
                let eps = opts
                    .vae_noise
                    .then(|| normal_tensor(rng, present.len(), self.config.feature_size));
                let g = vae.graph(&self.store, tape, parts, &present, eps, Binding::default())?;
                extra.push((g.kl, T::from_f64(vae.config.beta)));
                kl = g.kl_value;
                g.z
            }
            None => parts,
        };
        let global = self.fuse_graph(tape, fused_in, &present, batch.len())?;
        let dec = self.decode_graph(tape, global, Binding::default())?.output;
        let (recon_var, recon) = losses::recon_loss(tape, dec, &batch.targets, opts.metric)?;
        let mut terms = vec![(recon_var, T::one())];
        let (mut seg, mut correct, mut counted, mut seg_stats) = (0.0, 0, 0, Vec::new());
        if opts.train_seg && self.seg.is_some() {
            let g = self.direct_global_graph(tape, fx, &batch.labels, &batch.offsets)?;
            let out = self.segment_graph(tape, fx, g, batch.row_samples(), true, Binding::default())?;
            let ce = losses::cross_entropy(tape, out.output, &batch.labels)?;
            terms.push((ce.node, T::from_f64(opts.seg_weight)));
            seg = ce.value;
            correct = ce.correct;
            counted = ce.counted;
            seg_stats = out.batch_stats;
        }
        terms.extend(extra);
        let loss = tape.weighted_sum(terms)?;
        Ok(TrainForward {
            loss,
            recon,
            seg,
            kl,
            correct,
            counted,
            parts,
            present,
            encoder_stats: enc.batch_stats,
            seg_stats,
        })
    }
}
