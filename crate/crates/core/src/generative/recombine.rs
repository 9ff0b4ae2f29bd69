//! Generation by recombining encoded part features of existing shapes.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Real;
use crate::edit::exchange_part;
use crate::model::PartFeatureSet;
use crate::{Error, Result};

/// `count` variants of `base`, each with `parts_changed` part rows taken
/// from one randomly drawn donor of `pool`. Parts are drawn among those
/// present in the donor; a donor with fewer present parts donates all of
/// them.
pub fn exchange_variants<T: Real>(
    base: &PartFeatureSet<T>,
    pool: &[PartFeatureSet<T>],
    parts_changed: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<PartFeatureSet<T>>> {
    if pool.is_empty() {
        return Err(Error::Empty("exchange donor pool".into()));
    }
    if parts_changed == 0 || parts_changed > base.parts() {
        return Err(Error::InvalidPart {
            part: parts_changed,
            parts: base.parts(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let donor = pool.choose(&mut rng).expect("non-empty");
            let mut present: Vec<usize> = (1..=donor.parts()).filter(|&p| donor.present[p - 1]).collect();
            present.shuffle(&mut rng);
            let mut out = base.clone();
            for &p in present.iter().take(parts_changed) {
                out = exchange_part(&out, donor, p)?;
            }
            Ok(out)
        })
        .collect()
}

/// `count` shapes whose every part row comes from an independently drawn
/// member of `pool` that has the part. Parts no member has stay absent.
pub fn random_compositions<T: Real>(pool: &[PartFeatureSet<T>], count: usize, seed: u64) -> Result<Vec<PartFeatureSet<T>>> {
    let first = pool.first().ok_or_else(|| Error::Empty("composition pool".into()))?;
    let (k, l) = (first.parts(), first.dim());
    if pool.iter().any(|p| p.parts() != k || p.dim() != l) {
        return Err(Error::Shape("composition pool members differ in shape".into()));
    }
    let owners: Vec<Vec<usize>> = (0..k)
        .map(|r| (0..pool.len()).filter(|&i| pool[i].present[r]).collect())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let mut out = PartFeatureSet::new(crate::autodiff::Tensor2::zeros(k, l), vec![false; k])?;
            for (r, own) in owners.iter().enumerate() {
                if own.is_empty() {
                    continue;
                }
                let src = own[rng.random_range(0..own.len())];
                out.features.row_mut(r).copy_from_slice(pool[src].features.row(r));
                out.present[r] = true;
            }
            Ok(out)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor2;

    fn set(v: f32, present: &[bool]) -> PartFeatureSet<f32> {
        PartFeatureSet::new(Tensor2::filled(present.len(), 2, v), present.to_vec()).unwrap()
    }

    #[test]
    fn exchange_changes_exactly_the_requested_number_of_rows() {
        let base = set(0.0, &[true; 4]);
        let pool = vec![set(1.0, &[true; 4]), set(2.0, &[true, true, true, false])];
        for m in 1..=3 {
            for v in exchange_variants(&base, &pool, m, 20, 5).unwrap() {
                let changed = (0..4).filter(|&r| v.features.row(r)[0] != 0.0).count();
                assert_eq!(changed, m);
            }
        }
        assert_eq!(
            exchange_variants(&base, &pool, 2, 5, 9).unwrap(),
            exchange_variants(&base, &pool, 2, 5, 9).unwrap()
        );
        assert!(exchange_variants(&base, &pool, 5, 1, 0).is_err());
    }

    #[test]
    fn compositions_draw_rows_from_owners() {
        let pool = vec![set(1.0, &[true, false, false]), set(2.0, &[true, true, false])];
        for c in random_compositions(&pool, 10, 3).unwrap() {
            assert_eq!(c.present, vec![true, true, false]);
            assert_eq!(c.features.row(1), &[2.0, 2.0]);
        }
    }
}
