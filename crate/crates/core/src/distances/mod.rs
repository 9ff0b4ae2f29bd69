//! Set-to-set distances between point clouds.
//!
//! Chamfer distance is the symmetric *sum* of squared nearest-neighbor
//! distances. EMD is the minimum total (unsquared) L2 cost over bijections,
//! solved exactly with the Hungarian method or approximately with an
//! ε-scaling auction.

mod auction;
mod hungarian;
mod kdtree;

use serde::{Deserialize, Serialize};

use crate::pointcloud::Point;
use crate::{Error, Result};

pub use auction::{auction, AuctionConfig};
pub use hungarian::hungarian;

pub(crate) use kdtree::dist2;
use kdtree::KdTree;

/// Above this many target points nearest-neighbor queries use a k-d tree.
pub const KD_THRESHOLD: usize = 512;

/// Default size limit for [`emd_exact`].
pub const EXACT_LIMIT: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DistanceKind {
    #[serde(rename = "cd")]
    Chamfer,
    #[serde(rename = "emd-exact")]
    EmdExact,
    #[serde(rename = "emd-approx")]
    EmdApprox,
}

impl DistanceKind {
    pub fn is_emd(self) -> bool {
        !matches!(self, DistanceKind::Chamfer)
    }
}

impl std::str::FromStr for DistanceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cd" | "chamfer" => Ok(DistanceKind::Chamfer),
            "emd" | "emd-approx" => Ok(DistanceKind::EmdApprox),
            "emd-exact" => Ok(DistanceKind::EmdExact),
            other => Err(Error::Config(format!("unknown distance `{other}`"))),
        }
    }
}

/// Evaluates `kind` between two sets.
pub fn distance(kind: DistanceKind, a: &[Point], b: &[Point]) -> Result<f64> {
    match kind {
        DistanceKind::Chamfer => chamfer(a, b),
        DistanceKind::EmdExact => emd_exact(a, b),
        DistanceKind::EmdApprox => emd_approx(a, b),
    }
}

/// For every query point, the index of and squared distance to its nearest
/// target point.
pub fn nearest_neighbors(queries: &[Point], targets: &[Point]) -> Vec<(usize, f64)> {
    if targets.len() > KD_THRESHOLD {
        let tree = KdTree::build(targets);
        queries.iter().map(|q| tree.nearest(q)).collect()
    } else {
        queries
            .iter()
            .map(|q| {
                let mut best = (usize::MAX, f64::INFINITY);
                for (j, t) in targets.iter().enumerate() {
                    let d = dist2(q, t);
                    if d < best.1 {
                        best = (j, d);
                    }
                }
                best
            })
            .collect()
    }
}

fn check_nonempty(a: &[Point], b: &[Point]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty(format!(
            "distance between sets of {} and {} points",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

pub fn chamfer(a: &[Point], b: &[Point]) -> Result<f64> {
    check_nonempty(a, b)?;
    let fwd: f64 = nearest_neighbors(a, b).iter().map(|x| x.1).sum();
    let bwd: f64 = nearest_neighbors(b, a).iter().map(|x| x.1).sum();
    Ok(fwd + bwd)
}

/// Chamfer distance and its gradient with respect to the coordinates of
/// `a` (nearest-neighbor assignments held fixed).
pub fn chamfer_with_grad(a: &[Point], b: &[Point]) -> Result<(f64, Vec<Point>)> {
    check_nonempty(a, b)?;
    let mut grad = vec![[0.0; 3]; a.len()];
    let mut total = 0.0;
    for (i, (j, d)) in nearest_neighbors(a, b).into_iter().enumerate() {
        total += d;
        for k in 0..3 {
            grad[i][k] += 2.0 * (a[i][k] - b[j][k]);
        }
    }
    for (j, (i, d)) in nearest_neighbors(b, a).into_iter().enumerate() {
        total += d;
        for k in 0..3 {
            grad[i][k] += 2.0 * (a[i][k] - b[j][k]);
        }
    }
    Ok((total, grad))
}

fn pairwise_l2(a: &[Point], b: &[Point]) -> Vec<f64> {
    let mut cost = Vec::with_capacity(a.len() * b.len());
    for p in a {
        for q in b {
            cost.push(dist2(p, q).sqrt());
        }
    }
    cost
}

fn check_equal(a: &[Point], b: &[Point]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::SizeMismatch(a.len(), b.len()));
    }
    check_nonempty(a, b)
}

fn assignment_cost(cost: &[f64], n: usize, assignment: &[usize]) -> f64 {
    assignment.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum()
}

pub fn emd_exact(a: &[Point], b: &[Point]) -> Result<f64> {
    emd_exact_with_limit(a, b, EXACT_LIMIT)
}

pub fn emd_exact_with_limit(a: &[Point], b: &[Point], limit: usize) -> Result<f64> {
    check_equal(a, b)?;
    if a.len() > limit {
        return Err(Error::OverLimit {
            size: a.len(),
            limit,
        });
    }
    let n = a.len();
    let cost = pairwise_l2(a, b);
    Ok(assignment_cost(&cost, n, &hungarian(&cost, n)))
}

/// Approximate EMD with the default auction schedule.
pub fn emd_approx(a: &[Point], b: &[Point]) -> Result<f64> {
    Ok(emd_approx_matching(a, b, AuctionConfig::default())?.0)
}

/// Approximate EMD value and the matching `a[i] ↔ b[matching[i]]`.
pub fn emd_approx_matching(a: &[Point], b: &[Point], cfg: AuctionConfig) -> Result<(f64, Vec<usize>)> {
    check_equal(a, b)?;
    let n = a.len();
    let cost = pairwise_l2(a, b);
    let m = auction(&cost, n, cfg);
    Ok((assignment_cost(&cost, n, &m), m))
}

/// Approximate EMD and its gradient with respect to `a` under the frozen
/// matching: `d/da_i ‖a_i − b_φ(i)‖ = (a_i − b_φ(i)) / ‖a_i − b_φ(i)‖`.
pub fn emd_approx_with_grad(a: &[Point], b: &[Point]) -> Result<(f64, Vec<Point>)> {
    let (value, m) = emd_approx_matching(a, b, AuctionConfig::default())?;
    let grad = a
        .iter()
        .zip(&m)
        .map(|(p, &j)| {
            let q = &b[j];
            let d = dist2(p, q).sqrt();
            if d > 0.0 {
                std::array::from_fn(|k| (p[k] - q[k]) / d)
            } else {
                [0.0; 3]
            }
        })
        .collect();
    Ok((value, grad))
}
