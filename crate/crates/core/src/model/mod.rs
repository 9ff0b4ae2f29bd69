//! The part-aware autoencoder.
//!
//! A shared point MLP maps every point to an `l`-dimensional feature. Point
//! features are pooled per part label into a `k×l` part matrix, and present
//! part rows are pooled again into the global feature. A segmentation head
//! predicts per-point labels from point feature ⊕ global feature, and a
//! fully connected decoder maps the global feature to `n` points.

mod forward;
mod losses;
mod train;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::checkpoint::Checkpoint;
use crate::autodiff::{
    grad_check, group_pool_forward, Activation, GradCheckReport, Binding, GroupPoolKind, LayerSpec, Mlp, ParamStore, Real, Tape,
    Tensor2,
};
use crate::distances::nearest_neighbors;
use crate::generative::{normal_tensor, VaeConfig, VaeHead};
use crate::pointcloud::{write_atomic, LabeledCloud, Point};
use crate::{Error, Result};

pub use forward::{Batch, StepOptions, TrainForward};
pub use losses::{cross_entropy, recon_loss, softmax_rows, CrossEntropy};
pub use train::{train, train_with, EpochStats, PoolLabels, TrainConfig, TrainHistory};

/// Where the segmentation head sits, if anywhere.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SegHead {
    /// Input is point feature ⊕ global feature.
    #[default]
    Joint,
    /// Input is the point feature alone.
    PointOnly,
    /// No head; labels must always be supplied.
    Absent,
}

/// Origin of the labels that drive the part pool at inference.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    #[default]
    Given,
    Predicted,
}

impl std::str::FromStr for LabelSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "given" => Ok(LabelSource::Given),
            "predicted" => Ok(LabelSource::Predicted),
            other => Err(Error::Config(format!("unknown label source `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// `l`
    pub feature_size: usize,
    /// `k`
    pub parts: usize,
    /// `n`, points produced by the decoder.
    pub points: usize,
    pub pooling: GroupPoolKind,
    pub batch_norm: bool,
    pub segmentation: SegHead,
    pub label_source: LabelSource,
    pub encoder_hidden: Vec<usize>,
    pub seg_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    /// Variational head between the part pool and fusion.
    #[serde(default)]
    pub vae: Option<VaeConfig>,
}

impl ModelConfig {
    /// Desk-scale defaults: n = 256, l = 64.
    pub fn desk(parts: usize) -> Self {
        ModelConfig {
            feature_size: 64,
            parts,
            points: 256,
            pooling: GroupPoolKind::Max,
            batch_norm: true,
            segmentation: SegHead::Joint,
            label_source: LabelSource::Given,
            encoder_hidden: vec![64, 128],
            seg_hidden: vec![64, 32, 16],
            decoder_hidden: vec![1024, 2048],
            vae: None,
        }
    }

    /// Full-size base model: n = 2048, l = 128.
    pub fn full(parts: usize) -> Self {
        ModelConfig {
            feature_size: 128,
            points: 2048,
            ..ModelConfig::desk(parts)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_size == 0 || self.parts == 0 || self.points == 0 {
            return Err(Error::Config(format!(
                "feature size, part count and point count must be positive (got l={}, k={}, n={})",
                self.feature_size, self.parts, self.points
            )));
        }
        let widths = self.encoder_hidden.iter().chain(&self.seg_hidden).chain(&self.decoder_hidden);
        if widths.into_iter().any(|&w| w == 0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        Ok(())
    }

    pub fn encoder_specs(&self) -> Vec<LayerSpec> {
        let mut dims = vec![3];
        dims.extend(&self.encoder_hidden);
        dims.push(self.feature_size);
        LayerSpec::chain(&dims, Activation::Relu, self.batch_norm, Activation::Relu, self.batch_norm)
    }

    pub fn seg_specs(&self) -> Option<Vec<LayerSpec>> {
        let input = match self.segmentation {
            SegHead::Joint => 2 * self.feature_size,
            SegHead::PointOnly => self.feature_size,
            SegHead::Absent => return None,
        };
        let mut dims = vec![input];
        dims.extend(&self.seg_hidden);
        dims.push(self.parts + 1);
        Some(LayerSpec::chain(&dims, Activation::Relu, self.batch_norm, Activation::None, false))
    }

    pub fn decoder_specs(&self) -> Vec<LayerSpec> {
        let mut dims = vec![self.feature_size];
        dims.extend(&self.decoder_hidden);
        dims.push(3 * self.points);
        LayerSpec::chain(&dims, Activation::Relu, false, Activation::None, false)
    }
}

/// `k×l` part features plus the presence mask. Part ids are 1-based; row
/// `p − 1` holds part `p`. Absent rows are zero and never enter fusion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartFeatureSet<T = f32> {
    pub features: Tensor2<T>,
    pub present: Vec<bool>,
}

impl<T: Real> PartFeatureSet<T> {
    pub fn new(features: Tensor2<T>, present: Vec<bool>) -> Result<Self> {
        if features.rows() != present.len() {
            return Err(Error::Shape(format!(
                "{} part rows with {} presence flags",
                features.rows(),
                present.len()
            )));
        }
        Ok(PartFeatureSet { features, present })
    }

    pub fn parts(&self) -> usize {
        self.present.len()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Row index of part `part`, or an error naming the valid range.
    pub fn index(&self, part: usize) -> Result<usize> {
        if part == 0 || part > self.parts() {
            return Err(Error::InvalidPart {
                part,
                parts: self.parts(),
            });
        }
        Ok(part - 1)
    }

    pub fn row(&self, part: usize) -> Result<&[T]> {
        Ok(self.features.row(self.index(part)?))
    }

    pub fn is_present(&self, part: usize) -> Result<bool> {
        Ok(self.present[self.index(part)?])
    }

    pub fn any_present(&self) -> bool {
        self.present.iter().any(|&p| p)
    }

    /// Pools present rows (the second stage of the encoder).
    pub fn fuse(&self, kind: GroupPoolKind) -> Result<GlobalFeature<T>> {
        if !self.any_present() {
            return Err(Error::Empty("no present part to fuse".into()));
        }
        let groups: Vec<Option<usize>> = self.present.iter().map(|&p| p.then_some(0)).collect();
        let (out, _, _) = group_pool_forward(&self.features, &groups, 1, kind)?;
        Ok(GlobalFeature(out.into_data()))
    }

    pub fn cast<U: Real>(&self) -> PartFeatureSet<U> {
        PartFeatureSet {
            features: self.features.cast(),
            present: self.present.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalFeature<T = f32>(pub Vec<T>);

impl<T: Real> GlobalFeature<T> {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncodeResult<T = f32> {
    pub point_features: Tensor2<T>,
    pub parts: PartFeatureSet<T>,
    pub global: GlobalFeature<T>,
    /// Labels that drove the part pool.
    pub labels: Vec<usize>,
}

/// Output of the segmentation head.
#[derive(Clone, Debug, PartialEq)]
pub struct Segmentation<T = f32> {
    /// `n×(k+1)` class probabilities; class 0 is padding.
    pub probs: Tensor2<T>,
    /// Row-wise argmax over all `k+1` classes.
    pub labels: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct LpmModel<T = f32> {
    config: ModelConfig,
    store: ParamStore<T>,
    encoder: Mlp,
    seg: Option<Mlp>,
    decoder: Mlp,
    vae: Option<VaeHead>,
}

pub const CHECKPOINT_KIND: &str = "model";

impl<T: Real> LpmModel<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = Mlp::new(&mut store, "encoder", &config.encoder_specs(), &mut rng)?;
        let seg = match config.seg_specs() {
            Some(specs) => Some(Mlp::new(&mut store, "segmentation", &specs, &mut rng)?),
            None => None,
        };
        let decoder = Mlp::new(&mut store, "decoder", &config.decoder_specs(), &mut rng)?;
        let vae = match config.vae {
            Some(vc) => Some(VaeHead::attach(&mut store, config.feature_size, vc, &mut rng)?),
            None => None,
        };
        Ok(LpmModel {
            config,
            store,
            encoder,
            seg,
            decoder,
            vae,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn encoder(&self) -> &Mlp {
        &self.encoder
    }

    pub fn seg_head(&self) -> Option<&Mlp> {
        self.seg.as_ref()
    }

    pub fn decoder(&self) -> &Mlp {
        &self.decoder
    }

    pub fn vae(&self) -> Option<&VaeHead> {
        self.vae.as_ref()
    }

    /// Adds a VAE head to a model that has none, e.g. a trained
    /// autoencoder about to be fine-tuned.
    ///
    /// With an empty `fit` the mean layer starts as the identity. Otherwise
    /// it starts as a per-column standardization of the present part rows
    /// of `fit`, and the decoder's first layer absorbs the inverse affine.
    /// Both pooling kinds commute with a positive per-column affine, so
    /// decoded shapes are unchanged (up to rounding) while the means begin
    /// on the prior's scale.
    pub fn attach_vae(&mut self, config: VaeConfig, fit: &[LabeledCloud]) -> Result<()> {
        if self.vae.is_some() {
            return Err(Error::Config("model already has a VAE head".into()));
        }
        let stats = if fit.is_empty() { None } else { Some(self.part_column_stats(fit)?) };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let l = self.config.feature_size;
        let head = VaeHead::attach(&mut self.store, l, config, &mut rng)?;
        if let Some((mean, sd)) = stats {
            let (w, b) = head.mu.layer_params(0);
            let mut wt = Tensor2::zeros(l, l);
            let mut bt = Tensor2::zeros(1, l);
            for j in 0..l {
                wt.set(j, j, T::from_f64(1.0 / sd[j]));
                bt.set(0, j, T::from_f64(-mean[j] / sd[j]));
            }
            *self.store.get_mut(w) = wt;
            *self.store.get_mut(b) = bt;

            let (w, b) = self.decoder.layer_params(0);
            let w1: Tensor2<T> = self.store.get(w).clone();
            let mut shift: Vec<f64> = self.store.get(b).data().iter().map(|v| v.as_f64()).collect();
            let mut scaled = w1.clone();
            for j in 0..l {
                for (o, sh) in shift.iter_mut().enumerate() {
                    *sh += mean[j] * w1.get(j, o).as_f64();
                    scaled.set(j, o, T::from_f64(w1.get(j, o).as_f64() * sd[j]));
                }
            }
            *self.store.get_mut(w) = scaled;
            *self.store.get_mut(b) = Tensor2::from_vec(1, shift.len(), shift.into_iter().map(T::from_f64).collect())?;
        }
        self.vae = Some(head);
        self.config.vae = Some(config);
        Ok(())
    }

    /// Mean and standard deviation of each latent column over the present
    /// part rows of `clouds`. Near-constant columns get a unit deviation.
    fn part_column_stats(&self, clouds: &[LabeledCloud]) -> Result<(Vec<f64>, Vec<f64>)> {
        let l = self.config.feature_size;
        let (mut sum, mut sum_sq, mut count) = (vec![0.0; l], vec![0.0; l], 0usize);
        for chunk in clouds.chunks(64) {
            for e in self.encode_batch(chunk)? {
                for (r, _) in e.parts.present.iter().enumerate().filter(|(_, &p)| p) {
                    for (j, v) in e.parts.features.row(r).iter().enumerate() {
                        let v = v.as_f64();
                        sum[j] += v;
                        sum_sq[j] += v * v;
                    }
                    count += 1;
                }
            }
        }
        if count == 0 {
            return Err(Error::Empty("no present part rows to fit the VAE head".into()));
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let sd = sum_sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let sd = (q / n - m * m).max(0.0).sqrt();
                if sd > 1e-6 { sd } else { 1.0 }
            })
            .collect();
        Ok((mean, sd))
    }

    /// `count` part sets drawn from the VAE prior, all parts present.
    pub fn sample_prior(&self, count: usize, seed: u64) -> Result<Vec<PartFeatureSet<T>>> {
        if self.vae.is_none() {
            return Err(Error::HeadMissing("vae".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (k, l) = (self.config.parts, self.config.feature_size);
        (0..count)
            .map(|_| PartFeatureSet::new(normal_tensor(&mut rng, k, l), vec![true; k]))
            .collect()
    }

    pub fn parts(&self) -> usize {
        self.config.parts
    }

    pub fn feature_size(&self) -> usize {
        self.config.feature_size
    }

    pub fn cast<U: Real>(&self) -> LpmModel<U> {
        LpmModel {
            config: self.config.clone(),
            store: self.store.cast(),
            encoder: self.encoder.clone(),
            seg: self.seg.clone(),
            decoder: self.decoder.clone(),
            vae: self.vae.clone(),
        }
    }

    fn check_cloud(&self, cloud: &LabeledCloud) -> Result<()> {
        cloud.validate()?;
        if cloud.parts != self.config.parts {
            return Err(Error::Config(format!(
                "cloud has {} parts, model expects {}",
                cloud.parts, self.config.parts
            )));
        }
        if cloud.real_count() == 0 {
            return Err(Error::Empty("cloud has only padding points".into()));
        }
        Ok(())
    }

    /// Encodes with the cloud's own labels driving the part pool.
    pub fn encode(&self, cloud: &LabeledCloud) -> Result<EncodeResult<T>> {
        Ok(self.encode_batch(std::slice::from_ref(cloud))?.remove(0))
    }

    pub fn encode_batch(&self, clouds: &[LabeledCloud]) -> Result<Vec<EncodeResult<T>>> {
        for c in clouds {
            self.check_cloud(c)?;
        }
        if clouds.is_empty() {
            return Ok(Vec::new());
        }
        let batch = Batch::new(clouds);
        self.encode_batch_with(&batch, &batch.labels)
    }

    fn encode_batch_with(&self, batch: &Batch<T>, labels: &[usize]) -> Result<Vec<EncodeResult<T>>> {
        let mut tape = Tape::new();
        let x = tape.input_ref(&batch.x);
        let fx = self.point_features_graph(&mut tape, x, false, Binding::Frozen)?.output;
        let (mut parts, present) = self.part_pool_graph(&mut tape, fx, labels, &batch.offsets)?;
        if let Some(vae) = &self.vae {
            parts = vae.mean_graph(&self.store, &mut tape, parts, &present, Binding::Frozen)?;
        }
        let global = self.fuse_graph(&mut tape, parts, &present, batch.len())?;
        let (k, l) = (self.config.parts, self.config.feature_size);
        let (fxv, pv, gv) = (tape.value(fx), tape.value(parts), tape.value(global));
        (0..batch.len())
            .map(|b| {
                let (lo, hi) = (batch.offsets[b], batch.offsets[b + 1]);
                Ok(EncodeResult {
                    point_features: Tensor2::from_vec(hi - lo, l, fxv.data()[lo * l..hi * l].to_vec())?,
                    parts: PartFeatureSet::new(
                        Tensor2::from_vec(k, l, pv.data()[b * k * l..(b + 1) * k * l].to_vec())?,
                        present[b * k..(b + 1) * k].to_vec(),
                    )?,
                    global: GlobalFeature(gv.row(b).to_vec()),
                    labels: labels[lo..hi].to_vec(),
                })
            })
            .collect()
    }

    /// Encodes with labels predicted by the segmentation head. Rows labeled
    /// 0 in `cloud` are treated as padding; every other row receives the
    /// most likely non-padding class.
    pub fn encode_predicted(&self, cloud: &LabeledCloud) -> Result<EncodeResult<T>> {
        self.check_cloud(cloud)?;
        let batch = Batch::new(std::slice::from_ref(cloud));
        let labels = self.predict_batch_labels(&batch)?;
        Ok(self.encode_batch_with(&batch, &labels)?.remove(0))
    }

    pub fn predict_labels(&self, cloud: &LabeledCloud) -> Result<Vec<usize>> {
        self.check_cloud(cloud)?;
        self.predict_batch_labels(&Batch::new(std::slice::from_ref(cloud)))
    }

    pub(crate) fn predict_batch_labels(&self, batch: &Batch<T>) -> Result<Vec<usize>> {
        let mut tape = Tape::new();
        let x = tape.input_ref(&batch.x);
        let fx = self.point_features_graph(&mut tape, x, false, Binding::Frozen)?.output;
        let logits = self.predict_logits_graph(&mut tape, fx, batch, false, Binding::Frozen)?;
        Ok(masked_argmax(tape.value(logits), &batch.labels))
    }

    /// Runs the head on given point features and global feature.
    pub fn segment(&self, point_features: &Tensor2<T>, global: &GlobalFeature<T>) -> Result<Segmentation<T>> {
        let l = self.config.feature_size;
        if point_features.cols() != l || global.len() != l {
            return Err(Error::Shape(format!(
                "segmentation expects feature size {l}, got {} and {}",
                point_features.cols(),
                global.len()
            )));
        }
        let mut tape = Tape::new();
        let fx = tape.input_ref(point_features);
        let g = tape.input(Tensor2::from_vec(1, l, global.0.clone())?);
        let rows = vec![0; point_features.rows()];
        let logits = self.segment_graph(&mut tape, fx, g, rows, false, Binding::Frozen)?.output;
        let probs = softmax_rows(tape.value(logits));
        let labels = (0..probs.rows()).map(|r| argmax(probs.row(r))).collect();
        Ok(Segmentation { probs, labels })
    }

    pub fn decode(&self, global: &GlobalFeature<T>) -> Result<Vec<Point>> {
        Ok(self.decode_batch(std::slice::from_ref(global))?.remove(0))
    }

    pub fn decode_batch(&self, globals: &[GlobalFeature<T>]) -> Result<Vec<Vec<Point>>> {
        let l = self.config.feature_size;
        if let Some(g) = globals.iter().find(|g| g.len() != l) {
            return Err(Error::Shape(format!("global feature of length {}, expected {l}", g.len())));
        }
        if globals.is_empty() {
            return Ok(Vec::new());
        }
        let data: Vec<T> = globals.iter().flat_map(|g| g.0.iter().copied()).collect();
        let mut tape = Tape::new();
        let g = tape.input(Tensor2::from_vec(globals.len(), l, data)?);
        let out = self.decode_graph(&mut tape, g, Binding::Frozen)?.output;
        let v = tape.value(out);
        Ok((0..v.rows()).map(|r| row_to_points(v.row(r))).collect())
    }

    /// Fuses part rows with the model's pooling kind.
    pub fn fuse(&self, parts: &PartFeatureSet<T>) -> Result<GlobalFeature<T>> {
        self.check_parts(parts)?;
        parts.fuse(self.config.pooling)
    }

    pub fn check_parts(&self, parts: &PartFeatureSet<T>) -> Result<()> {
        if parts.parts() != self.config.parts || parts.dim() != self.config.feature_size {
            return Err(Error::Shape(format!(
                "part features are {}×{}, model expects {}×{}",
                parts.parts(),
                parts.dim(),
                self.config.parts,
                self.config.feature_size
            )));
        }
        Ok(())
    }

    /// Labels for decoded points: the segmentation head's prediction, or
    /// the label of the nearest point of `reference` when the model has no
    /// head.
    pub fn label_points(&self, points: &[Point], reference: Option<&LabeledCloud>) -> Result<Vec<usize>> {
        let cloud = LabeledCloud::new(points.to_vec(), vec![1; points.len()], self.config.parts)?;
        if self.seg.is_some() {
            return self.predict_labels(&cloud);
        }
        let Some(reference) = reference else {
            return Err(Error::HeadMissing("segmentation".into()));
        };
        let real: Vec<(Point, usize)> = reference
            .points
            .iter()
            .zip(&reference.labels)
            .filter(|(_, &l)| l != 0)
            .map(|(p, &l)| (*p, l))
            .collect();
        let targets: Vec<Point> = real.iter().map(|r| r.0).collect();
        Ok(nearest_neighbors(points, &targets)
            .into_iter()
            .map(|(j, _)| real[j].1)
            .collect())
    }

    /// Encodes and decodes `cloud`. With [`LabelSource::Given`] the cloud's
    /// labels drive the part pool; with [`LabelSource::Predicted`] only its
    /// padding mask is used. Returned labels are predicted on the output.
    pub fn reconstruct(&self, cloud: &LabeledCloud, source: LabelSource) -> Result<LabeledCloud> {
        let enc = match source {
            LabelSource::Given => self.encode(cloud)?,
            LabelSource::Predicted => self.encode_predicted(cloud)?,
        };
        let points = self.decode(&enc.global)?;
        let labels = self.label_points(&points, Some(cloud))?;
        LabeledCloud::new(points, labels, self.config.parts)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut layers = vec![("encoder".to_string(), self.encoder.specs())];
        if let Some(seg) = &self.seg {
            layers.push(("segmentation".to_string(), seg.specs()));
        }
        layers.push(("decoder".to_string(), self.decoder.specs()));
        if let Some(vae) = &self.vae {
            layers.push(("vae.mu".to_string(), vae.mu.specs()));
            layers.push(("vae.logvar".to_string(), vae.logvar.specs()));
        }
        Ok(Checkpoint {
            kind: CHECKPOINT_KIND.into(),
            meta: serde_json::to_value(&self.config)?,
            layers,
            store: self.store.cast(),
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.kind != CHECKPOINT_KIND {
            return Err(Error::Checkpoint(format!(
                "expected a `{CHECKPOINT_KIND}` checkpoint, found `{}`",
                ckpt.kind
            )));
        }
        let config: ModelConfig = serde_json::from_value(ckpt.meta.clone())?;
        let mut model = LpmModel::new(config, 0)?;
        if ckpt.layer_specs("encoder")? != model.encoder.specs().as_slice()
            || ckpt.layer_specs("decoder")? != model.decoder.specs().as_slice()
        {
            return Err(Error::Checkpoint("layer specs disagree with the model header".into()));
        }
        if ckpt.store.len() != model.store.len() {
            return Err(Error::Checkpoint(format!(
                "{} tensors stored, model has {}",
                ckpt.store.len(),
                model.store.len()
            )));
        }
        for (dst, src) in model.store.iter_mut().zip(ckpt.store.iter()) {
            if dst.name != src.name || dst.value.shape() != src.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}` {:?} does not match `{}` {:?}",
                    src.name,
                    src.value.shape(),
                    dst.name,
                    dst.value.shape()
                )));
            }
            dst.value = src.value.cast();
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_checkpoint()?.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint(&Checkpoint::from_bytes(&bytes)?)
    }
}

impl LpmModel<f64> {
    /// Compares the analytic gradient of one training step on `clouds`
    /// against central differences, for every trainable parameter.
    pub fn check_gradients(
        &self,
        clouds: &[LabeledCloud],
        opts: &StepOptions,
        step: f64,
        max_entries: usize,
    ) -> Result<GradCheckReport> {
        let batch = Batch::new(clouds);
        let ids = self.store.weight_ids();
        let analytic: Vec<(usize, Tensor2<f64>)> = {
            let mut tape = Tape::new();
            let fw = self.forward_train(&mut tape, &batch, opts, &mut ChaCha8Rng::seed_from_u64(0))?;
            let g = tape.backward(fw.loss, 1.0)?;
            ids.iter().filter_map(|&id| g.param(id).map(|t| (id, t))).collect()
        };
        let mut probe = self.clone();
        grad_check(&self.store, &analytic, step, max_entries, |store| {
            probe.store = store.clone();
            let mut tape = Tape::new();
            let fw = probe.forward_train(&mut tape, &batch, opts, &mut ChaCha8Rng::seed_from_u64(0))?;
            Ok(tape.value(fw.loss).data()[0])
        })
    }
}

pub(crate) fn row_to_points<T: Real>(row: &[T]) -> Vec<Point> {
    row.chunks_exact(3)
        .map(|c| [c[0].as_f64(), c[1].as_f64(), c[2].as_f64()])
        .collect()
}

fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Per-row argmax over classes `1..`, keeping rows labeled 0 as padding.
pub(crate) fn masked_argmax<T: Real>(logits: &Tensor2<T>, mask_labels: &[usize]) -> Vec<usize> {
    (0..logits.rows())
        .map(|r| {
            if mask_labels[r] == 0 {
                0
            } else {
                1 + argmax(&logits.row(r)[1..])
            }
        })
        .collect()
}
