//! Labeled point clouds, datasets and their on-disk formats.
//!
//! Part ids are 1-based; label 0 marks padding rows, which are always
//! exactly `(0, 0, 0)` and never contribute to pooling or losses.

mod io;
mod synth;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use io::{
    load_labeled_cloud, load_manifest, parse_labels, parse_points, read_cloud, read_cloud_json,
    write_atomic, write_cloud_json, write_manifest, write_pts_seg, LabelMap, LoadOptions, Manifest,
    ManifestEntry,
};
pub use synth::{BoxRange, PartSpec, SurfaceSampling, SynthSpec};

pub type Point = [f64; 3];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledCloud {
    pub points: Vec<Point>,
    pub labels: Vec<usize>,
    pub parts: usize,
}

impl LabeledCloud {
    pub fn new(points: Vec<Point>, labels: Vec<usize>, parts: usize) -> Result<Self> {
        let c = LabeledCloud {
            points,
            labels,
            parts,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.len() != self.labels.len() {
            return Err(Error::CountMismatch {
                points: self.points.len(),
                labels: self.labels.len(),
            });
        }
        if self.points.is_empty() {
            return Err(Error::Empty("cloud has no points".into()));
        }
        if self.parts == 0 {
            return Err(Error::Config("part count must be at least 1".into()));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l > self.parts) {
            return Err(Error::InvalidLabel {
                label: bad,
                parts: self.parts,
            });
        }
        if self.points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("point coordinates".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Points whose label is not padding.
    pub fn real_points(&self) -> Vec<Point> {
        self.points
            .iter()
            .zip(&self.labels)
            .filter(|(_, &l)| l != 0)
            .map(|(p, _)| *p)
            .collect()
    }

    pub fn real_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != 0).count()
    }

    /// Distinct non-padding labels present, ascending.
    pub fn present_labels(&self) -> Vec<usize> {
        let mut seen = vec![false; self.parts + 1];
        for &l in &self.labels {
            seen[l] = true;
        }
        (1..=self.parts).filter(|&p| seen[p]).collect()
    }

    /// Reorders points and labels by `perm` (`out[i] = self[perm[i]]`).
    pub fn permuted(&self, perm: &[usize]) -> LabeledCloud {
        LabeledCloud {
            points: perm.iter().map(|&i| self.points[i]).collect(),
            labels: perm.iter().map(|&i| self.labels[i]).collect(),
            parts: self.parts,
        }
    }
}

/// Downsamples without replacement or zero-pads with label-0 rows to
/// exactly `n_target` points. Kept rows preserve their original order.
pub fn resample(cloud: &LabeledCloud, n_target: usize, seed: u64) -> LabeledCloud {
    let n = cloud.len();
    let mut out = cloud.clone();
    if n > n_target {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut keep = rand::seq::index::sample(&mut rng, n, n_target).into_vec();
        keep.sort_unstable();
        out = cloud.permuted(&keep);
    } else if n < n_target {
        out.points.resize(n_target, [0.0; 3]);
        out.labels.resize(n_target, 0);
    }
    out
}

/// Centers non-padding points on their centroid and scales them so the
/// farthest lies on the unit sphere. Returns the cloud and whether the
/// degenerate (zero-extent) fallback of scale 1 was used.
pub fn normalize(cloud: &LabeledCloud) -> Result<(LabeledCloud, bool)> {
    let real = cloud.real_count();
    if real == 0 {
        return Err(Error::Empty("cannot normalize a cloud of padding only".into()));
    }
    let mut centroid = [0.0f64; 3];
    for (p, &l) in cloud.points.iter().zip(&cloud.labels) {
        if l != 0 {
            for d in 0..3 {
                centroid[d] += p[d];
            }
        }
    }
    centroid.iter_mut().for_each(|c| *c /= real as f64);
    let mut radius = 0.0f64;
    for (p, &l) in cloud.points.iter().zip(&cloud.labels) {
        if l != 0 {
            let r = (0..3).map(|d| (p[d] - centroid[d]).powi(2)).sum::<f64>().sqrt();
            radius = radius.max(r);
        }
    }
    let degenerate = radius <= f64::EPSILON;
    if degenerate {
        log::warn!("degenerate cloud (all points coincide); using scale 1");
    }
    let scale = if degenerate { 1.0 } else { radius };
    let mut out = cloud.clone();
    for (p, &l) in out.points.iter_mut().zip(&cloud.labels) {
        if l != 0 {
            for d in 0..3 {
                p[d] = (p[d] - centroid[d]) / scale;
            }
        }
    }
    Ok((out, degenerate))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub category: String,
    pub parts: usize,
    pub samples: Vec<LabeledCloud>,
    /// One tag per sample.
    pub splits: Vec<Split>,
}

impl Dataset {
    pub fn new(category: impl Into<String>, parts: usize, samples: Vec<LabeledCloud>, split: Split) -> Result<Self> {
        let d = Dataset {
            category: category.into(),
            parts,
            splits: vec![split; samples.len()],
            samples,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.splits.len() != self.samples.len() {
            return Err(Error::Config("one split tag per sample required".into()));
        }
        for (i, s) in self.samples.iter().enumerate() {
            if s.parts != self.parts {
                return Err(Error::Config(format!(
                    "sample {i} has {} parts, dataset declares {}",
                    s.parts, self.parts
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Samples tagged with `split`.
    pub fn subset(&self, split: Split) -> Dataset {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| self.splits[i] == split).collect();
        Dataset {
            category: self.category.clone(),
            parts: self.parts,
            samples: idx.iter().map(|&i| self.samples[i].clone()).collect(),
            splits: vec![split; idx.len()],
        }
    }
}

/// Shuffled train/val/test partition with sizes `round(ratio · len)` for
/// train and val; test takes the remainder.
pub fn split_dataset(dataset: &Dataset, ratios: [f64; 3], seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    if ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
        return Err(Error::Ratios(format!("{ratios:?} must be non-negative")));
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Ratios(format!("{ratios:?} sum to {sum}, expected 1")));
    }
    let n = dataset.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((ratios[0] * n as f64).round() as usize).min(n);
    let n_val = ((ratios[1] * n as f64).round() as usize).min(n - n_train);
    let pick = |idx: &[usize], split: Split| {
        let mut idx = idx.to_vec();
        idx.sort_unstable();
        Dataset {
            category: dataset.category.clone(),
            parts: dataset.parts,
            samples: idx.iter().map(|&i| dataset.samples[i].clone()).collect(),
            splits: vec![split; idx.len()],
        }
    };
    Ok((
        pick(&order[..n_train], Split::Train),
        pick(&order[n_train..n_train + n_val], Split::Val),
        pick(&order[n_train + n_val..], Split::Test),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(points: &[Point], labels: &[usize], k: usize) -> LabeledCloud {
        LabeledCloud::new(points.to_vec(), labels.to_vec(), k).unwrap()
    }

    #[test]
    fn resample_identity_and_padding() {
        let c = cloud(
            &[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0], [7.0, 8.0, 9.0], [0.1, 0.2, 0.3], [1.0, 1.0, 1.0]],
            &[1, 1, 2, 2, 1],
            2,
        );
        assert_eq!(resample(&c, 5, 3), c);
        let short = cloud(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0], [7.0, 8.0, 9.0]], &[1, 2, 2], 2);
        let padded = resample(&short, 5, 0);
        assert_eq!(padded.len(), 5);
        assert_eq!(&padded.points[3..], &[[0.0; 3], [0.0; 3]]);
        assert_eq!(&padded.labels[3..], &[0, 0]);
    }

    #[test]
    fn downsample_keeps_original_rows_deterministically() {
        let pts: Vec<Point> = (0..2048).map(|i| [i as f64, (i * 2) as f64, 0.5]).collect();
        let labels: Vec<usize> = (0..2048).map(|i| 1 + i % 3).collect();
        let c = cloud(&pts, &labels, 3);
        let a = resample(&c, 1024, 42);
        let b = resample(&c, 1024, 42);
        assert_eq!(a, b);
        for (p, &l) in a.points.iter().zip(&a.labels) {
            let i = p[0] as usize;
            assert_eq!(c.points[i], *p);
            assert_eq!(c.labels[i], l);
        }
    }

    #[test]
    fn normalize_examples() {
        let c = cloud(&[[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]], &[1, 1], 1);
        let (n, degenerate) = normalize(&c).unwrap();
        assert!(!degenerate);
        assert_eq!(n.points, vec![[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);

        let single = cloud(&[[3.0, -1.0, 2.0]], &[1], 1);
        let (n, degenerate) = normalize(&single).unwrap();
        assert!(degenerate);
        assert_eq!(n.points, vec![[0.0; 3]]);
    }

    #[test]
    fn normalize_leaves_padding_at_origin() {
        let c = cloud(&[[2.0, 2.0, 2.0], [4.0, 2.0, 2.0], [0.0, 0.0, 0.0]], &[1, 2, 0], 2);
        let (n, _) = normalize(&c).unwrap();
        assert_eq!(n.points[2], [0.0; 3]);
        assert_eq!(n.points[0], [-1.0, 0.0, 0.0]);
    }

    #[test]
    fn split_sizes_follow_ratios() {
        let samples: Vec<LabeledCloud> = (0..100)
            .map(|i| cloud(&[[i as f64, 0.0, 0.0]], &[1], 1))
            .collect();
        let ds = Dataset::new("toy", 1, samples, Split::Train).unwrap();
        let (tr, va, te) = split_dataset(&ds, [0.7, 0.1, 0.2], 1).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (70, 10, 20));
        let (tr2, _, _) = split_dataset(&ds, [0.7, 0.1, 0.2], 1).unwrap();
        assert_eq!(tr, tr2);
        let (all, v0, t0) = split_dataset(&ds, [1.0, 0.0, 0.0], 9).unwrap();
        assert_eq!((all.len(), v0.len(), t0.len()), (100, 0, 0));
        assert!(matches!(
            split_dataset(&ds, [0.5, 0.1, 0.2], 1),
            Err(Error::Ratios(_))
        ));
    }

    #[test]
    fn label_out_of_range_rejected() {
        assert!(matches!(
            LabeledCloud::new(vec![[0.0; 3]], vec![3], 2),
            Err(Error::InvalidLabel { label: 3, parts: 2 })
        ));
    }
}
