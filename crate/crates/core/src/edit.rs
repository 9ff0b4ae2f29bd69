//! Latent part editing. Every operation works on part feature rows only;
//! rows that an operation does not name are copied bit for bit.

use serde::{Deserialize, Serialize};

use crate::autodiff::{GroupPoolKind, Real, Tensor2};
use crate::generative::HeadKind;
use crate::model::{GlobalFeature, PartFeatureSet};
use crate::{Error, Result};

fn check_same_shape<T: Real>(a: &PartFeatureSet<T>, b: &PartFeatureSet<T>) -> Result<()> {
    if a.parts() != b.parts() || a.dim() != b.dim() {
        return Err(Error::Shape(format!(
            "part sets {}×{} and {}×{} differ",
            a.parts(),
            a.dim(),
            b.parts(),
            b.dim()
        )));
    }
    Ok(())
}

fn check_t(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::InterpolationRange(t))
    }
}

/// Weights `(1 − t, t)`. The smaller one is derived from the larger by an
/// exact subtraction, so passing `1 − t` instead swaps them bit for bit.
fn weights(t: f64) -> (f64, f64) {
    if t > 0.5 {
        (1.0 - t, t)
    } else {
        let wa = 1.0 - t;
        (wa, 1.0 - wa)
    }
}

/// `(1 − t)·a + t·b`, evaluated in 64-bit.
fn lerp<T: Real>(a: T, b: T, t: f64) -> T {
    let (wa, wb) = weights(t);
    T::from_f64(wa * a.as_f64() + wb * b.as_f64())
}

/// `a` with part `part` taken from `b`.
pub fn exchange_part<T: Real>(a: &PartFeatureSet<T>, b: &PartFeatureSet<T>, part: usize) -> Result<PartFeatureSet<T>> {
    check_same_shape(a, b)?;
    let idx = b.index(part)?;
    if !b.present[idx] {
        return Err(Error::AbsentPart(part));
    }
    let mut out = a.clone();
    out.features.row_mut(idx).copy_from_slice(b.features.row(idx));
    out.present[idx] = true;
    Ok(out)
}

/// `a` with row `part` replaced by `(1 − t)·a_p + t·b_p`. The part must be
/// present in both sets.
pub fn interpolate_part<T: Real>(
    a: &PartFeatureSet<T>,
    b: &PartFeatureSet<T>,
    t: f64,
    part: usize,
) -> Result<PartFeatureSet<T>> {
    check_t(t)?;
    check_same_shape(a, b)?;
    let idx = a.index(part)?;
    if !a.present[idx] || !b.present[idx] {
        return Err(Error::AbsentPart(part));
    }
    let mut out = a.clone();
    for (o, &v) in out.features.row_mut(idx).iter_mut().zip(b.features.row(idx)) {
        *o = lerp(*o, v, t);
    }
    Ok(out)
}

/// Interpolates every row present in both sets; rows present in only one
/// set are taken from `a` when `t < 0.5` and from `b` otherwise.
pub fn interpolate_all_parts<T: Real>(a: &PartFeatureSet<T>, b: &PartFeatureSet<T>, t: f64) -> Result<PartFeatureSet<T>> {
    check_t(t)?;
    check_same_shape(a, b)?;
    let mut out = a.clone();
    for i in 0..a.parts() {
        match (a.present[i], b.present[i]) {
            (true, true) => {
                for (o, &v) in out.features.row_mut(i).iter_mut().zip(b.features.row(i)) {
                    *o = lerp(*o, v, t);
                }
            }
            (false, true) | (true, false) if t >= 0.5 => {
                out.features.row_mut(i).copy_from_slice(b.features.row(i));
                out.present[i] = b.present[i];
            }
            _ => {}
        }
    }
    Ok(out)
}

pub fn interpolate_global<T: Real>(a: &GlobalFeature<T>, b: &GlobalFeature<T>, t: f64) -> Result<GlobalFeature<T>> {
    check_t(t)?;
    if a.len() != b.len() {
        return Err(Error::SizeMismatch(a.len(), b.len()));
    }
    Ok(GlobalFeature(a.0.iter().zip(&b.0).map(|(&x, &y)| lerp(x, y, t)).collect()))
}

/// Builds a set whose part `p` comes from the source paired with `p`.
/// Parts nobody supplies are absent.
pub fn compose<T: Real>(sources: &[(&PartFeatureSet<T>, usize)]) -> Result<PartFeatureSet<T>> {
    let Some((first, _)) = sources.first() else {
        return Err(Error::Empty("composition without sources".into()));
    };
    let (k, l) = (first.parts(), first.dim());
    let mut out = PartFeatureSet {
        features: Tensor2::zeros(k, l),
        present: vec![false; k],
    };
    for (src, part) in sources {
        check_same_shape(first, src)?;
        let idx = src.index(*part)?;
        if out.present[idx] {
            return Err(Error::DuplicatePart(*part));
        }
        if !src.present[idx] {
            return Err(Error::AbsentPart(*part));
        }
        out.features.row_mut(idx).copy_from_slice(src.features.row(idx));
        out.present[idx] = true;
    }
    Ok(out)
}

/// Column-wise max over present rows.
pub fn fuse_global<T: Real>(parts: &PartFeatureSet<T>) -> Result<GlobalFeature<T>> {
    parts.fuse(GroupPoolKind::Max)
}

/// Marks `part` absent and zeroes its row.
pub fn remove_part<T: Real>(a: &PartFeatureSet<T>, part: usize) -> Result<PartFeatureSet<T>> {
    let idx = a.index(part)?;
    let mut out = a.clone();
    out.features.row_mut(idx).iter_mut().for_each(|v| *v = T::zero());
    out.present[idx] = false;
    Ok(out)
}

/// `a` with row `part` replaced by `row` and marked present.
pub fn replace_part<T: Real>(a: &PartFeatureSet<T>, part: usize, row: &[T]) -> Result<PartFeatureSet<T>> {
    let idx = a.index(part)?;
    if row.len() != a.dim() {
        return Err(Error::SizeMismatch(row.len(), a.dim()));
    }
    let mut out = a.clone();
    out.features.row_mut(idx).copy_from_slice(row);
    out.present[idx] = true;
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InterpScope {
    /// Interpolate fused global features.
    Global,
    /// Interpolate one part row.
    Part(usize),
    /// Interpolate every part row, then fuse.
    AllParts,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComposeSource {
    pub source: String,
    pub part: usize,
}

/// Serializable edit description. Sources are opaque references resolved
/// by the caller (session ids in the service, file paths in the CLI).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case")]
pub enum EditOp {
    Exchange {
        a: String,
        b: String,
        part: usize,
    },
    Interpolate {
        a: String,
        b: String,
        t: f64,
        scope: InterpScope,
    },
    Compose {
        sources: Vec<ComposeSource>,
    },
    Remove {
        a: String,
        part: usize,
    },
    Regenerate {
        a: String,
        part: usize,
        head: HeadKind,
        #[serde(default)]
        seed: u64,
    },
}

/// Outcome of [`EditOp::apply`]. Global-scope interpolation produces no
/// part set.
#[derive(Clone, Debug, PartialEq)]
pub struct Edited<T = f32> {
    pub parts: Option<PartFeatureSet<T>>,
    pub global: GlobalFeature<T>,
}

fn check_part(part: usize, parts: usize) -> Result<()> {
    if part == 0 || part > parts {
        Err(Error::InvalidPart { part, parts })
    } else {
        Ok(())
    }
}

impl EditOp {
    /// Checks part ids and `t` against a model with `parts` parts.
    pub fn validate(&self, parts: usize) -> Result<()> {
        match self {
            EditOp::Exchange { part, .. } | EditOp::Remove { part, .. } | EditOp::Regenerate { part, .. } => {
                check_part(*part, parts)
            }
            EditOp::Interpolate { t, scope, .. } => {
                check_t(*t)?;
                if let InterpScope::Part(p) = scope {
                    check_part(*p, parts)?;
                }
                Ok(())
            }
            EditOp::Compose { sources } => {
                if sources.is_empty() {
                    return Err(Error::Empty("composition without sources".into()));
                }
                let mut seen = vec![false; parts + 1];
                for s in sources {
                    check_part(s.part, parts)?;
                    if std::mem::replace(&mut seen[s.part], true) {
                        return Err(Error::DuplicatePart(s.part));
                    }
                }
                Ok(())
            }
        }
    }

    /// Source references in order of appearance.
    pub fn sources(&self) -> Vec<&str> {
        match self {
            EditOp::Exchange { a, b, .. } | EditOp::Interpolate { a, b, .. } => vec![a, b],
            EditOp::Remove { a, .. } | EditOp::Regenerate { a, .. } => vec![a],
            EditOp::Compose { sources } => sources.iter().map(|s| s.source.as_str()).collect(),
        }
    }

    /// Applies the edit. `resolve` maps a source reference to its part
    /// set; `regenerate(part, head, seed)` draws a replacement row.
    pub fn apply<T: Real>(
        &self,
        pooling: GroupPoolKind,
        mut resolve: impl FnMut(&str) -> Result<PartFeatureSet<T>>,
        regenerate: impl FnOnce(usize, HeadKind, u64) -> Result<Vec<T>>,
    ) -> Result<Edited<T>> {
        let parts = match self {
            EditOp::Exchange { a, b, part } => exchange_part(&resolve(a)?, &resolve(b)?, *part)?,
            EditOp::Interpolate { a, b, t, scope } => {
                let (a, b) = (resolve(a)?, resolve(b)?);
                match scope {
                    InterpScope::Part(p) => interpolate_part(&a, &b, *t, *p)?,
                    InterpScope::AllParts => interpolate_all_parts(&a, &b, *t)?,
                    InterpScope::Global => {
                        let global = interpolate_global(&a.fuse(pooling)?, &b.fuse(pooling)?, *t)?;
                        return Ok(Edited { parts: None, global });
                    }
                }
            }
            EditOp::Compose { sources } => {
                let sets = sources
                    .iter()
                    .map(|s| resolve(&s.source))
                    .collect::<Result<Vec<_>>>()?;
                let pairs: Vec<_> = sets.iter().zip(sources).map(|(set, s)| (set, s.part)).collect();
                compose(&pairs)?
            }
            EditOp::Remove { a, part } => remove_part(&resolve(a)?, *part)?,
            EditOp::Regenerate { a, part, head, seed } => {
                let a = resolve(a)?;
                a.index(*part)?;
                replace_part(&a, *part, &regenerate(*part, *head, *seed)?)?
            }
        };
        let global = parts.fuse(pooling)?;
        Ok(Edited {
            parts: Some(parts),
            global,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(rows: &[[f32; 2]], present: &[bool]) -> PartFeatureSet<f32> {
        PartFeatureSet::new(
            Tensor2::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap(),
            present.to_vec(),
        )
        .unwrap()
    }

    #[test]
    fn exchange_replaces_only_named_row() {
        let a = set(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]], &[true, true, false]);
        let b = set(&[[7.0, 8.0], [9.0, 1.0], [2.0, 3.0]], &[true, false, true]);
        assert_eq!(exchange_part(&a, &a, 2).unwrap(), a);
        let e = exchange_part(&a, &b, 3).unwrap();
        assert_eq!(e.row(3).unwrap(), &[2.0, 3.0]);
        assert_eq!(e.present, vec![true, true, true]);
        assert_eq!(e.row(1).unwrap(), a.row(1).unwrap());
        assert!(matches!(exchange_part(&a, &b, 2), Err(Error::AbsentPart(2))));
        assert!(matches!(exchange_part(&a, &b, 4), Err(Error::InvalidPart { part: 4, parts: 3 })));
    }

    #[test]
    fn interpolation_endpoints_and_midpoint() {
        let a = set(&[[0.0, 2.0], [1.0, 1.0]], &[true, true]);
        let b = set(&[[2.0, 0.0], [5.0, 5.0]], &[true, true]);
        assert_eq!(interpolate_part(&a, &b, 0.0, 1).unwrap(), a);
        assert_eq!(interpolate_part(&a, &b, 1.0, 1).unwrap().row(1).unwrap(), b.row(1).unwrap());
        let mid = interpolate_part(&a, &b, 0.5, 1).unwrap();
        assert_eq!(mid.row(1).unwrap(), &[1.0, 1.0]);
        assert_eq!(mid.row(2).unwrap(), a.row(2).unwrap());
        assert!(matches!(interpolate_part(&a, &b, 1.5, 1), Err(Error::InterpolationRange(_))));
        let g = interpolate_global(&fuse_global(&a).unwrap(), &fuse_global(&b).unwrap(), 0.0).unwrap();
        assert_eq!(g, fuse_global(&a).unwrap());
    }

    #[test]
    fn swapped_interpolation_is_exact() {
        let a = set(&[[0.3, -2.7], [1.1, 9.0]], &[true, true]);
        let b = set(&[[2.9, 0.01], [-5.5, 5.0]], &[true, true]);
        for i in 0..=1000 {
            let t = i as f64 / 1000.0;
            let x = interpolate_all_parts(&a, &b, t).unwrap();
            assert_eq!(x, interpolate_all_parts(&b, &a, 1.0 - t).unwrap(), "t = {t}");
        }
    }

    #[test]
    fn compose_rules() {
        let a = set(&[[1.0, 0.0], [0.0, 1.0]], &[true, true]);
        let b = set(&[[3.0, 3.0], [4.0, 4.0]], &[true, true]);
        assert_eq!(compose(&[(&a, 1), (&a, 2)]).unwrap(), a);
        let c = compose(&[(&b, 2)]).unwrap();
        assert_eq!(c.present, vec![false, true]);
        assert!(matches!(compose(&[(&a, 1), (&b, 1)]), Err(Error::DuplicatePart(1))));
    }

    #[test]
    fn fuse_takes_present_rows_only() {
        let a = set(&[[-1.0, -2.0], [9.0, 9.0]], &[true, false]);
        assert_eq!(fuse_global(&a).unwrap().0, vec![-1.0, -2.0]);
        assert!(fuse_global(&remove_part(&a, 1).unwrap()).is_err());
    }

    #[test]
    fn edit_op_json_round_trip_and_validation() {
        let op: EditOp = serde_json::from_str(
            r#"{"op":"interpolate","a":"m1","b":"m2","t":0.25,"scope":{"part":3}}"#,
        )
        .unwrap();
        assert_eq!(
            op,
            EditOp::Interpolate {
                a: "m1".into(),
                b: "m2".into(),
                t: 0.25,
                scope: InterpScope::Part(3)
            }
        );
        let back: EditOp = serde_json::from_str(&serde_json::to_string(&op).unwrap()).unwrap();
        assert_eq!(back, op);
        assert!(matches!(op.validate(2), Err(Error::InvalidPart { part: 3, parts: 2 })));
        let global: EditOp =
            serde_json::from_str(r#"{"op":"interpolate","a":"x","b":"y","t":2,"scope":"global"}"#).unwrap();
        assert!(matches!(global.validate(4), Err(Error::InterpolationRange(_))));
    }
}
