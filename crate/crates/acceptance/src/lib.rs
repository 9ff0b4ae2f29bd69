//! Brute-force reference computations and fixtures for the acceptance
//! suite. Everything here is written directly from the metric
//! definitions, without calling into the library's implementations.

use rand::Rng;

use lpm_core::pointcloud::{LabeledCloud, Point};

pub fn sq(a: &Point, b: &Point) -> f64 {
    (0..3).map(|k| (a[k] - b[k]) * (a[k] - b[k])).sum()
}

/// Sum over both directions of squared nearest-neighbor distances.
pub fn chamfer(a: &[Point], b: &[Point]) -> f64 {
    let one_way = |x: &[Point], y: &[Point]| -> f64 {
        x.iter()
            .map(|p| y.iter().map(|q| sq(p, q)).fold(f64::INFINITY, f64::min))
            .sum()
    };
    one_way(a, b) + one_way(b, a)
}

/// All permutations of `0..n` (Heap's algorithm).
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn heap(k: usize, p: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(p.clone());
            return;
        }
        for i in 0..k {
            heap(k - 1, p, out);
            let j = if k % 2 == 0 { i } else { 0 };
            p.swap(j, k - 1);
        }
    }
    let mut out = Vec::new();
    heap(n, &mut (0..n).collect(), &mut out);
    out
}

/// Minimum over all bijections of the summed Euclidean distances.
pub fn emd(a: &[Point], b: &[Point]) -> f64 {
    assert_eq!(a.len(), b.len());
    permutations(a.len())
        .iter()
        .map(|perm| perm.iter().enumerate().map(|(i, &j)| sq(&a[i], &b[j]).sqrt()).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
}

/// Mean over reference clouds of the distance to the closest sample.
pub fn mmd(samples: &[Vec<Point>], reference: &[Vec<Point>], d: fn(&[Point], &[Point]) -> f64) -> f64 {
    let total: f64 = reference
        .iter()
        .map(|r| samples.iter().map(|s| d(s, r)).fold(f64::INFINITY, f64::min))
        .sum();
    total / reference.len() as f64
}

/// Percentage of reference clouds that are some sample's closest
/// reference (first index wins ties).
pub fn coverage(samples: &[Vec<Point>], reference: &[Vec<Point>], d: fn(&[Point], &[Point]) -> f64) -> f64 {
    let mut covered = vec![false; reference.len()];
    for s in samples {
        let mut best = 0;
        for (i, r) in reference.iter().enumerate() {
            if d(s, r) < d(s, &reference[best]) {
                best = i;
            }
        }
        covered[best] = true;
    }
    100.0 * covered.iter().filter(|&&c| c).count() as f64 / reference.len() as f64
}

/// Fraction of all points in each cell of a `res³` grid over `[−1, 1]³`.
/// Coordinates outside the cube land in the nearest boundary cell.
pub fn histogram(clouds: &[Vec<Point>], res: usize) -> Vec<f64> {
    let mut h = vec![0.0; res * res * res];
    let mut total = 0.0;
    for p in clouds.iter().flatten() {
        let cell = |c: f64| -> usize {
            let i = ((c + 1.0) * res as f64 / 2.0).floor();
            i.clamp(0.0, (res - 1) as f64) as usize
        };
        h[(cell(p[0]) * res + cell(p[1])) * res + cell(p[2])] += 1.0;
        total += 1.0;
    }
    h.iter().map(|v| v / total).collect()
}

pub fn jsd(p: &[f64], q: &[f64]) -> f64 {
    let mut kl_p = 0.0;
    let mut kl_q = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let m = (a + b) / 2.0;
        if a > 0.0 {
            kl_p += a * (a / m).ln();
        }
        if b > 0.0 {
            kl_q += b * (b / m).ln();
        }
    }
    (kl_p + kl_q) / 2.0
}

/// Mean over inputs of the average pairwise Chamfer distance of its
/// variants.
pub fn tmd(groups: &[Vec<Vec<Point>>]) -> f64 {
    let per: Vec<f64> = groups
        .iter()
        .map(|g| {
            let mut s = 0.0;
            let mut n = 0.0;
            for i in 0..g.len() {
                for j in 0..g.len() {
                    if i < j {
                        s += chamfer(&g[i], &g[j]);
                        n += 1.0;
                    }
                }
            }
            s / n
        })
        .collect();
    per.iter().sum::<f64>() / per.len() as f64
}

pub fn random_points<R: Rng>(rng: &mut R, n: usize) -> Vec<Point> {
    (0..n)
        .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
        .collect()
}

/// `n` rows, of which `padding` trailing rows are label-0 zeros; the rest
/// carry random labels in `1..=k`, each label used at least once when
/// `n − padding ≥ k`.
pub fn random_cloud<R: Rng>(rng: &mut R, n: usize, k: usize, padding: usize) -> LabeledCloud {
    let real = n - padding;
    let mut points = random_points(rng, real);
    let mut labels: Vec<usize> = (0..real)
        .map(|i| if i < k { i + 1 } else { rng.random_range(1..=k) })
        .collect();
    points.resize(n, [0.0; 3]);
    labels.resize(n, 0);
    LabeledCloud::new(points, labels, k).expect("valid random cloud")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permutation_count() {
        assert_eq!(permutations(4).len(), 24);
        let mut all = permutations(3);
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 6);
    }

    #[test]
    fn emd_of_shifted_pair() {
        let a = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        let b = vec![[1.0, 0.0, 1.0], [0.0, 0.0, 1.0]];
        assert!((emd(&a, &b) - 2.0).abs() < 1e-15);
        assert_eq!(chamfer(&a, &b), 4.0);
    }

    #[test]
    fn histogram_is_a_distribution() {
        let h = histogram(&[vec![[-1.0, -1.0, -1.0], [1.0, 1.0, 1.0], [5.0, -1.0, -1.0]]], 2);
        assert_eq!(h.iter().sum::<f64>(), 1.0);
        assert_eq!(h[0], 1.0 / 3.0);
        assert_eq!(h[7], 1.0 / 3.0);
        assert_eq!(h[4], 1.0 / 3.0);
    }
}
