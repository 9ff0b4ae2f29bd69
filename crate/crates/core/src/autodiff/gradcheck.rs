use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ParamStore, Tensor2};
use crate::Result;

/// Relative error `|a − n| / max(|a|, |n|, floor)`. The floor keeps
/// near-zero gradients from turning rounding noise into large ratios.
pub fn max_relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `name[index]` of the worst entry.
    pub worst: String,
    pub checked: usize,
}

/// Compares analytic gradients against central differences of `loss`.
///
/// Every parameter listed in `analytic` is checked; tensors with more than
/// `max_entries` elements are checked on a seeded random subset of entries.
pub fn grad_check<F>(
    store: &ParamStore<f64>,
    analytic: &[(usize, Tensor2<f64>)],
    step: f64,
    max_entries: usize,
    mut loss: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore<f64>) -> Result<f64>,
{
    const FLOOR: f64 = 1e-5;
    let mut work = store.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(0x9c);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: String::new(),
        checked: 0,
    };
    for (id, grad) in analytic {
        let len = grad.len();
        let entries: Vec<usize> = if len <= max_entries {
            (0..len).collect()
        } else {
            let mut v = sample(&mut rng, len, max_entries).into_vec();
            v.sort_unstable();
            v
        };
        for e in entries {
            let orig = work.get(*id).data()[e];
            work.get_mut(*id).data_mut()[e] = orig + step;
            let plus = loss(&work)?;
            work.get_mut(*id).data_mut()[e] = orig - step;
            let minus = loss(&work)?;
            work.get_mut(*id).data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let err = max_relative_error(grad.data()[e], numeric, FLOOR);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_empty() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = format!("{}[{e}]", store.name(*id));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::layers::ParamKind;
    use crate::autodiff::Tape;

    #[test]
    fn quadratic_loss_on_linear_layer_is_exact() {
        let mut store = ParamStore::new();
        let w = store.add(
            "w",
            ParamKind::Weight,
            Tensor2::from_rows(&[vec![0.3, -0.2], vec![0.7, 0.1], vec![-0.4, 0.5]]).unwrap(),
        );
        let x = Tensor2::from_rows(&[vec![1.0, 2.0, -1.0], vec![0.5, -0.3, 0.8]]).unwrap();
        let loss_and_grad = |s: &ParamStore<f64>| -> Result<(f64, Tensor2<f64>)> {
            let mut tape = Tape::new();
            let xi = tape.input(x.clone());
            let wi = tape.param(w, s.get(w));
            let y = tape.linear(xi, wi, None)?;
            let yv = tape.value(y).clone();
            let val = 0.5 * yv.data().iter().map(|v| v * v).sum::<f64>();
            let l = tape.fused(val, vec![(y, yv)])?;
            let g = tape.backward(l, 1.0)?;
            Ok((val, g.param(w).unwrap()))
        };
        let (_, g) = loss_and_grad(&store).unwrap();
        let rep = grad_check(&store, &[(w, g)], 1e-6, 100, |s| Ok(loss_and_grad(s)?.0)).unwrap();
        assert_eq!(rep.checked, 6);
        assert!(rep.max_rel_error <= 1e-8, "{rep:?}");
    }
}
