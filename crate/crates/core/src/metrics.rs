//! Set-level evaluation of generated clouds.
//!
//! MMD walks the reference set (each reference cloud's nearest sample);
//! coverage walks the sample set (each sample's nearest reference cloud).

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distances::{chamfer, distance, DistanceKind};
use crate::pointcloud::Point;
use crate::{Error, Result};

pub const DEFAULT_GRID: usize = 28;
/// Generated set size relative to the reference set.
pub const SAMPLE_FACTOR: usize = 3;
pub const TMD_VARIANTS: usize = 10;

fn non_empty(name: &str, set: &[Vec<Point>]) -> Result<()> {
    if set.is_empty() {
        return Err(Error::Empty(format!("{name} set")));
    }
    Ok(())
}

/// `m[i][j] = d(rows[i], cols[j])`, computed in parallel.
pub fn distance_matrix(rows: &[Vec<Point>], cols: &[Vec<Point>], metric: DistanceKind) -> Result<Vec<Vec<f64>>> {
    rows.par_iter()
        .map(|a| cols.iter().map(|b| distance(metric, a, b)).collect())
        .collect()
}

fn argmin(row: &[f64]) -> (usize, f64) {
    row.iter()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (i, &v)| if v < best.1 { (i, v) } else { best })
}

/// Minimum matching distance from a reference-by-sample distance matrix.
pub fn mmd_from_matrix(ref_by_sample: &[Vec<f64>]) -> f64 {
    let sum: f64 = ref_by_sample.iter().map(|r| argmin(r).1).sum();
    sum / ref_by_sample.len() as f64
}

/// Coverage in percent from a reference-by-sample distance matrix.
pub fn coverage_from_matrix(ref_by_sample: &[Vec<f64>]) -> f64 {
    let refs = ref_by_sample.len();
    let samples = ref_by_sample.first().map_or(0, Vec::len);
    let mut hit = vec![false; refs];
    for s in 0..samples {
        let mut best = (0, f64::INFINITY);
        for (r, row) in ref_by_sample.iter().enumerate() {
            if row[s] < best.1 {
                best = (r, row[s]);
            }
        }
        hit[best.0] = true;
    }
    100.0 * hit.iter().filter(|&&h| h).count() as f64 / refs as f64
}

/// Mean over reference clouds of the distance to the nearest sample.
pub fn mmd(samples: &[Vec<Point>], reference: &[Vec<Point>], metric: DistanceKind) -> Result<f64> {
    non_empty("sample", samples)?;
    non_empty("reference", reference)?;
    Ok(mmd_from_matrix(&distance_matrix(reference, samples, metric)?))
}

/// Percentage of reference clouds that are the nearest neighbor of at
/// least one sample.
pub fn coverage(samples: &[Vec<Point>], reference: &[Vec<Point>], metric: DistanceKind) -> Result<f64> {
    non_empty("sample", samples)?;
    non_empty("reference", reference)?;
    Ok(coverage_from_matrix(&distance_matrix(reference, samples, metric)?))
}

/// Normalized occupancy histogram over `[−1, 1]³`.
#[derive(Clone, Debug, PartialEq)]
pub struct Occupancy {
    pub resolution: usize,
    pub mass: Vec<f64>,
    /// Points that fell outside the cube and were clamped to a boundary bin.
    pub clamped: usize,
}

pub fn occupancy(clouds: &[Vec<Point>], resolution: usize) -> Result<Occupancy> {
    if resolution == 0 {
        return Err(Error::Config("grid resolution must be positive".into()));
    }
    let mut counts = vec![0usize; resolution.pow(3)];
    let (mut total, mut clamped) = (0usize, 0usize);
    let r = resolution as f64;
    for p in clouds.iter().flatten() {
        let mut idx = 0;
        let mut out = false;
        for &c in p {
            if !c.is_finite() {
                return Err(Error::NonFinite(format!("coordinate {c}")));
            }
            let cell = ((c + 1.0) / 2.0 * r).floor();
            if !(0.0..r).contains(&cell) && !(c == 1.0) {
                out = true;
            }
            idx = idx * resolution + (cell.max(0.0) as usize).min(resolution - 1);
        }
        clamped += out as usize;
        counts[idx] += 1;
        total += 1;
    }
    if total == 0 {
        return Err(Error::Empty("no points to bin".into()));
    }
    Ok(Occupancy {
        resolution,
        mass: counts.iter().map(|&c| c as f64 / total as f64).collect(),
        clamped,
    })
}

/// Jensen–Shannon divergence (natural log) of two distributions.
pub fn jsd_distributions(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::SizeMismatch(p.len(), q.len()));
    }
    let kl_to_mix = |a: f64, m: f64| if a > 0.0 { a * (a / m).ln() } else { 0.0 };
    let mut s = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let m = 0.5 * (a + b);
        s += kl_to_mix(a, m) + kl_to_mix(b, m);
    }
    Ok((0.5 * s).clamp(0.0, std::f64::consts::LN_2))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JsdResult {
    pub value: f64,
    pub clamped_points: usize,
}

/// JSD between the occupancy distributions of two cloud sets.
pub fn jsd(samples: &[Vec<Point>], reference: &[Vec<Point>], resolution: usize) -> Result<JsdResult> {
    non_empty("sample", samples)?;
    non_empty("reference", reference)?;
    let (a, b) = (occupancy(samples, resolution)?, occupancy(reference, resolution)?);
    Ok(JsdResult {
        value: jsd_distributions(&a.mass, &b.mass)?,
        clamped_points: a.clamped + b.clamped,
    })
}

/// Mean over inputs of the mean pairwise Chamfer distance among that
/// input's variants.
pub fn tmd(variant_sets: &[Vec<Vec<Point>>]) -> Result<f64> {
    if variant_sets.is_empty() {
        return Err(Error::Empty("variant sets".into()));
    }
    if let Some(v) = variant_sets.iter().find(|v| v.len() < 2) {
        return Err(Error::Config(format!("TMD needs at least 2 variants per input, got {}", v.len())));
    }
    let per_input: Vec<f64> = variant_sets
        .par_iter()
        .map(|vs| {
            let mut sum = 0.0;
            let mut pairs = 0usize;
            for i in 0..vs.len() {
                for j in i + 1..vs.len() {
                    sum += chamfer(&vs[i], &vs[j])?;
                    pairs += 1;
                }
            }
            Ok(sum / pairs as f64)
        })
        .collect::<Result<_>>()?;
    Ok(per_input.iter().sum::<f64>() / per_input.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mmd_cd: f64,
    pub mmd_emd: f64,
    pub cov_cd: f64,
    pub cov_emd: f64,
    pub jsd: f64,
    pub grid_resolution: usize,
    pub clamped_points: usize,
    pub emd_kind: DistanceKind,
    pub reference_size: usize,
    pub sample_size: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tmd: Option<f64>,
}

impl MetricReport {
    /// All set metrics of `samples` against `reference`. EMD uses
    /// `emd_kind` (exact or approximate).
    pub fn compute(
        samples: &[Vec<Point>],
        reference: &[Vec<Point>],
        emd_kind: DistanceKind,
        resolution: usize,
    ) -> Result<MetricReport> {
        non_empty("sample", samples)?;
        non_empty("reference", reference)?;
        if !emd_kind.is_emd() {
            return Err(Error::Config("emd kind must be emd-exact or emd-approx".into()));
        }
        let cd = distance_matrix(reference, samples, DistanceKind::Chamfer)?;
        let emd = distance_matrix(reference, samples, emd_kind)?;
        let j = jsd(samples, reference, resolution)?;
        let report = MetricReport {
            mmd_cd: mmd_from_matrix(&cd),
            mmd_emd: mmd_from_matrix(&emd),
            cov_cd: coverage_from_matrix(&cd),
            cov_emd: coverage_from_matrix(&emd),
            jsd: j.value,
            grid_resolution: resolution,
            clamped_points: j.clamped_points,
            emd_kind,
            reference_size: reference.len(),
            sample_size: samples.len(),
            tmd: None,
        };
        let values = [report.mmd_cd, report.mmd_emd, report.cov_cd, report.cov_emd, report.jsd];
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("metric report".into()));
        }
        Ok(report)
    }
}

impl fmt::Display for MetricReport {
    /// Aligned table: one header row, one value row.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut heads = vec!["MMD-CD", "MMD-EMD", "Cov-CD(%)", "Cov-EMD(%)", "JSD"];
        let mut vals = vec![
            format!("{:.6}", self.mmd_cd),
            format!("{:.6}", self.mmd_emd),
            format!("{:.1}", self.cov_cd),
            format!("{:.1}", self.cov_emd),
            format!("{:.6}", self.jsd),
        ];
        if let Some(t) = self.tmd {
            heads.push("TMD");
            vals.push(format!("{t:.6}"));
        }
        let widths: Vec<usize> = heads.iter().zip(&vals).map(|(h, v)| h.len().max(v.len())).collect();
        for (h, w) in heads.iter().zip(&widths) {
            write!(f, "{h:>w$}  ")?;
        }
        writeln!(f)?;
        for (v, w) in vals.iter().zip(&widths) {
            write!(f, "{v:>w$}  ")?;
        }
        writeln!(
            f,
            "\n(reference {}, samples {}, grid {}³, {} clamped)",
            self.reference_size, self.sample_size, self.grid_resolution, self.clamped_points
        )
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn cloud(rng: &mut ChaCha8Rng, n: usize, shift: f64) -> Vec<Point> {
        (0..n)
            .map(|_| std::array::from_fn(|_| rng.random_range(-0.3..0.3) + shift))
            .collect()
    }

    #[test]
    fn identical_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let set: Vec<_> = (0..5).map(|i| cloud(&mut rng, 10, i as f64 * 0.1)).collect();
        assert_eq!(mmd(&set, &set, DistanceKind::Chamfer).unwrap(), 0.0);
        assert_eq!(coverage(&set, &set, DistanceKind::Chamfer).unwrap(), 100.0);
        assert_eq!(jsd(&set, &set, DEFAULT_GRID).unwrap().value, 0.0);
    }

    #[test]
    fn nearest_match_ignores_far_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = cloud(&mut rng, 8, 0.0);
        let far = cloud(&mut rng, 8, 5.0);
        assert_eq!(mmd(&[a.clone(), far], &[a], DistanceKind::Chamfer).unwrap(), 0.0);
    }

    #[test]
    fn matches_brute_force_on_toy_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s: Vec<_> = (0..5).map(|i| cloud(&mut rng, 6, 0.2 * i as f64 - 0.4)).collect();
        let r: Vec<_> = (0..5).map(|i| cloud(&mut rng, 6, 0.2 * i as f64 - 0.4)).collect();
        let mut want = 0.0;
        for x in &r {
            want += s.iter().map(|y| chamfer(x, y).unwrap()).fold(f64::INFINITY, f64::min);
        }
        want /= 5.0;
        assert!((mmd(&s, &r, DistanceKind::Chamfer).unwrap() - want).abs() <= 1e-9);
        let mut hit = std::collections::BTreeSet::new();
        for y in &s {
            let (best, _) = argmin(&r.iter().map(|x| chamfer(x, y).unwrap()).collect::<Vec<_>>());
            hit.insert(best);
        }
        let cov = coverage(&s, &r, DistanceKind::Chamfer).unwrap();
        assert_eq!(cov, 100.0 * hit.len() as f64 / 5.0);
    }

    #[test]
    fn all_samples_near_one_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let r: Vec<_> = (0..4).map(|i| cloud(&mut rng, 6, i as f64)).collect();
        let s: Vec<_> = (0..3).map(|_| cloud(&mut rng, 6, 0.0)).collect();
        assert_eq!(coverage(&s, &r, DistanceKind::Chamfer).unwrap(), 25.0);
    }

    #[test]
    fn directionality_is_respected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a: Vec<_> = (0..3).map(|i| cloud(&mut rng, 6, i as f64)).collect();
        let b = vec![cloud(&mut rng, 6, 0.0)];
        let m = (mmd(&b, &a, DistanceKind::Chamfer).unwrap(), mmd(&a, &b, DistanceKind::Chamfer).unwrap());
        let c = (coverage(&b, &a, DistanceKind::Chamfer).unwrap(), coverage(&a, &b, DistanceKind::Chamfer).unwrap());
        assert_ne!(m.0, m.1);
        assert_ne!(c.0, c.1);
    }

    #[test]
    fn jsd_examples() {
        let v = jsd_distributions(&[0.5, 0.5], &[1.0, 0.0]).unwrap();
        assert!((v - 0.2157).abs() <= 1e-3, "{v}");
        let a = vec![vec![[-0.9, -0.9, -0.9]]];
        let b = vec![vec![[0.9, 0.9, 0.9]]];
        assert!((jsd(&a, &b, 28).unwrap().value - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn jsd_is_symmetric_and_mass_sums_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a: Vec<_> = (0..4).map(|_| cloud(&mut rng, 50, 0.2)).collect();
        let b: Vec<_> = (0..4).map(|_| cloud(&mut rng, 50, -0.3)).collect();
        let (x, y) = (jsd(&a, &b, 28).unwrap().value, jsd(&b, &a, 28).unwrap().value);
        assert!((x - y).abs() <= 1e-12);
        assert!(x <= std::f64::consts::LN_2);
        assert!((occupancy(&a, 28).unwrap().mass.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn out_of_grid_points_are_clamped_and_counted() {
        let a = vec![vec![[1.5, 0.0, 0.0], [1.0, 1.0, -1.0], [0.0, 0.0, 0.0]]];
        let occ = occupancy(&a, 4).unwrap();
        assert_eq!(occ.clamped, 1);
        assert!((occ.mass.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tmd_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let same = cloud(&mut rng, 6, 0.0);
        assert_eq!(tmd(&[vec![same.clone(), same.clone()]]).unwrap(), 0.0);
        let sets: Vec<Vec<_>> = (0..3).map(|_| (0..10).map(|_| cloud(&mut rng, 6, 0.0)).collect()).collect();
        let mut want = 0.0;
        for vs in &sets {
            let mut s = 0.0;
            for i in 0..10 {
                for j in i + 1..10 {
                    s += chamfer(&vs[i], &vs[j]).unwrap();
                }
            }
            want += s / 45.0;
        }
        assert!((tmd(&sets).unwrap() - want / 3.0).abs() <= 1e-9);
        assert!(tmd(&[vec![same]]).is_err());
    }

    #[test]
    fn report_serializes_and_formats() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let r: Vec<_> = (0..3).map(|_| cloud(&mut rng, 8, 0.0)).collect();
        let s: Vec<_> = (0..9).map(|_| cloud(&mut rng, 8, 0.0)).collect();
        let rep = MetricReport::compute(&s, &r, DistanceKind::EmdExact, DEFAULT_GRID).unwrap();
        assert!((0.0..=100.0).contains(&rep.cov_emd));
        let back: MetricReport = serde_json::from_str(&serde_json::to_string(&rep).unwrap()).unwrap();
        assert_eq!(back, rep);
        assert!(rep.to_string().contains("MMD-CD"));
    }
}
