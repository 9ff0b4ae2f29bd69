use proptest::prelude::*;

use lpm_core::distances::{chamfer, emd_approx, emd_exact};
use lpm_core::metrics::jsd_distributions;
use lpm_core::pointcloud::{normalize, resample, LabeledCloud, Point};

fn point() -> impl Strategy<Value = Point> {
    [-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64]
}

fn cloud(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<Point>> {
    prop::collection::vec(point(), n)
}

fn pair(n: std::ops::Range<usize>) -> impl Strategy<Value = (Vec<Point>, Vec<Point>)> {
    n.prop_flat_map(|k| (prop::collection::vec(point(), k), prop::collection::vec(point(), k)))
}

fn labeled(max: usize) -> impl Strategy<Value = LabeledCloud> {
    prop::collection::vec((point(), 1..=4usize), 4..max)
        .prop_map(|rows| {
            let (points, labels): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
            LabeledCloud::new(points, labels, 4).unwrap()
        })
}

proptest! {
    #[test]
    fn chamfer_is_symmetric_and_zero_on_itself(a in cloud(1..20), b in cloud(1..20)) {
        let ab = chamfer(&a, &b).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - chamfer(&b, &a).unwrap()).abs() <= 1e-12 * ab.max(1.0));
        prop_assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn approximate_transport_never_beats_the_optimum((a, b) in pair(1..12)) {
        let exact = emd_exact(&a, &b).unwrap();
        let approx = emd_approx(&a, &b).unwrap();
        prop_assert!(approx >= exact - 1e-9);
        prop_assert!(approx <= exact * 1.01 + 1e-9);
    }

    #[test]
    fn transport_is_order_free((a, b) in pair(2..10), seed in any::<u64>()) {
        use rand::{seq::SliceRandom, SeedableRng};
        let mut shuffled = b.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let d = emd_exact(&a, &b).unwrap();
        prop_assert!((d - emd_exact(&a, &shuffled).unwrap()).abs() <= 1e-9);
    }

    #[test]
    fn resample_hits_the_target_size(c in labeled(40), n in 1..64usize, seed in any::<u64>()) {
        let r = resample(&c, n, seed);
        prop_assert_eq!(r.len(), n);
        prop_assert_eq!(r.real_count(), c.real_count().min(n));
        prop_assert_eq!(r, resample(&c, n, seed));
    }

    #[test]
    fn normalized_points_fit_the_unit_ball(c in labeled(40)) {
        let (n, _) = normalize(&c).unwrap();
        let far = n.real_points().iter().map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()).fold(0.0, f64::max);
        prop_assert!(far <= 1.0 + 1e-9);
        prop_assert_eq!(n.labels, c.labels);
    }

    #[test]
    fn jsd_is_bounded_and_symmetric(p in prop::collection::vec(0.0..1.0f64, 8), q in prop::collection::vec(0.0..1.0f64, 8)) {
        let norm = |v: Vec<f64>| { let s: f64 = v.iter().sum::<f64>() + 1e-9; v.iter().map(|x| (x + 1e-9 / 8.0) / s).collect::<Vec<_>>() };
        let (p, q) = (norm(p), norm(q));
        let d = jsd_distributions(&p, &q).unwrap();
        prop_assert!((-1e-12..=std::f64::consts::LN_2 + 1e-12).contains(&d));
        prop_assert!((d - jsd_distributions(&q, &p).unwrap()).abs() <= 1e-12);
    }
}
