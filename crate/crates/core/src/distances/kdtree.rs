use crate::pointcloud::Point;

#[inline]
pub(crate) fn dist2(a: &Point, b: &Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Static 3-d tree over a point slice for exact nearest-neighbor queries.
pub(crate) struct KdTree<'a> {
    points: &'a [Point],
    /// Point indices arranged so every subtree occupies a contiguous range
    /// with its splitting point in the middle.
    order: Vec<usize>,
    axes: Vec<u8>,
}

impl<'a> KdTree<'a> {
    pub fn build(points: &'a [Point]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut axes = vec![0u8; points.len()];
        build_rec(points, &mut order, &mut axes, 0);
        KdTree { points, order, axes }
    }

    /// Index and squared distance of the nearest point. Ties resolve to
    /// the lowest index.
    pub fn nearest(&self, q: &Point) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(0, self.order.len(), q, &mut best);
        best
    }

    fn search(&self, lo: usize, hi: usize, q: &Point, best: &mut (usize, f64)) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let idx = self.order[mid];
        let p = &self.points[idx];
        let d = dist2(p, q);
        if d < best.1 || (d == best.1 && idx < best.0) {
            *best = (idx, d);
        }
        let axis = self.axes[mid] as usize;
        let delta = q[axis] - p[axis];
        let (near, far) = if delta <= 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(near.0, near.1, q, best);
        if delta * delta <= best.1 {
            self.search(far.0, far.1, q, best);
        }
    }
}

fn build_rec(points: &[Point], order: &mut [usize], axes: &mut [u8], depth: usize) {
    if order.is_empty() {
        return;
    }
    // split on the axis of largest spread
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in order.iter() {
        for d in 0..3 {
            lo[d] = lo[d].min(points[i][d]);
            hi[d] = hi[d].max(points[i][d]);
        }
    }
    let axis = (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
        .unwrap_or(depth % 3);
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| points[a][axis].total_cmp(&points[b][axis]));
    axes[mid] = axis as u8;
    let (left, rest) = order.split_at_mut(mid);
    let (left_axes, rest_axes) = axes.split_at_mut(mid);
    build_rec(points, left, left_axes, depth + 1);
    build_rec(points, &mut rest[1..], &mut rest_axes[1..], depth + 1);
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn agrees_with_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts: Vec<Point> = (0..700)
            .map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0)))
            .collect();
        let tree = KdTree::build(&pts);
        for _ in 0..200 {
            let q: Point = std::array::from_fn(|_| rng.random_range(-1.2..1.2));
            let brute = pts
                .iter()
                .enumerate()
                .map(|(i, p)| (i, dist2(p, &q)))
                .fold((usize::MAX, f64::INFINITY), |b, c| if c.1 < b.1 { c } else { b });
            assert_eq!(tree.nearest(&q), brute);
        }
    }
}
