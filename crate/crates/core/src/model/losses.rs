use super::row_to_points;
use crate::autodiff::{Real, Tape, Tensor2, Var};
use crate::distances::{chamfer_with_grad, emd_approx_with_grad, DistanceKind};
use crate::pointcloud::Point;
use crate::{Error, Result};

/// Row-wise softmax.
pub fn softmax_rows<T: Real>(logits: &Tensor2<T>) -> Tensor2<T> {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        row.iter_mut().for_each(|v| *v /= z);
    }
    out
}

/// Mean over the batch of the reconstruction distance between each decoded
/// row (`3n` coordinates) and its target points. Returns the loss node and
/// its value.
pub fn recon_loss<T: Real>(
    tape: &mut Tape<'_, T>,
    decoded: Var,
    targets: &[Vec<Point>],
    metric: DistanceKind,
) -> Result<(Var, f64)> {
    let v = tape.value(decoded);
    let b = v.rows();
    if b != targets.len() {
        return Err(Error::SizeMismatch(b, targets.len()));
    }
    let mut grad = Tensor2::zeros(b, v.cols());
    let mut total = 0.0;
    for (r, target) in targets.iter().enumerate() {
        let pred = row_to_points(v.row(r));
        let (d, g) = match metric {
            DistanceKind::Chamfer => chamfer_with_grad(&pred, target)?,
            DistanceKind::EmdApprox => emd_approx_with_grad(&pred, target)?,
            DistanceKind::EmdExact => {
                return Err(Error::Config("exact EMD is an evaluation metric, not a training loss".into()))
            }
        };
        total += d;
        for (dst, src) in grad.row_mut(r).iter_mut().zip(g.iter().flatten()) {
            *dst = T::from_f64(src / b as f64);
        }
    }
    let value = total / b as f64;
    Ok((tape.fused(T::from_f64(value), vec![(decoded, grad)])?, value))
}

pub struct CrossEntropy {
    pub node: Var,
    pub value: f64,
    pub correct: usize,
    pub counted: usize,
}

/// Mean softmax cross-entropy over rows whose label is not padding.
pub fn cross_entropy<T: Real>(tape: &mut Tape<'_, T>, logits: Var, labels: &[usize]) -> Result<CrossEntropy> {
    let z = tape.value(logits);
    if z.rows() != labels.len() {
        return Err(Error::SizeMismatch(z.rows(), labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= z.cols()) {
        return Err(Error::InvalidLabel {
            label: bad,
            parts: z.cols() - 1,
        });
    }
    let counted = labels.iter().filter(|&&l| l != 0).count();
    let probs = softmax_rows(z);
    let mut grad = Tensor2::zeros(z.rows(), z.cols());
    let (mut total, mut correct) = (0.0, 0);
    let scale = T::one() / T::from_f64(counted.max(1) as f64);
    for (r, &lab) in labels.iter().enumerate() {
        if lab == 0 {
            continue;
        }
        let row = z.row(r);
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = m.as_f64() + row.iter().map(|&v| (v - m).as_f64().exp()).sum::<f64>().ln();
        total += lse - row[lab].as_f64();
        let p = probs.row(r);
        let best = (0..p.len()).fold(0, |b, i| if p[i] > p[b] { i } else { b });
        if best == lab {
            correct += 1;
        }
        for (j, g) in grad.row_mut(r).iter_mut().enumerate() {
            let target = if j == lab { T::one() } else { T::zero() };
            *g = (p[j] - target) * scale;
        }
    }
    let value = total / counted.max(1) as f64;
    let node = tape.fused(T::from_f64(value), vec![(logits, grad)])?;
    Ok(CrossEntropy {
        node,
        value,
        correct,
        counted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_rows_sum_to_one() {
        let z = Tensor2::from_rows(&[vec![1.0f64, 2.0, 3.0], vec![-5.0, 0.0, 900.0]]).unwrap();
        let p = softmax_rows(&z);
        for r in 0..2 {
            assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_skips_padding_and_matches_finite_differences() {
        let z = Tensor2::from_rows(&[vec![0.3f64, -0.2, 0.9], vec![1.0, 2.0, 0.0], vec![0.5, 0.1, -0.4]]).unwrap();
        let labels = [2, 0, 1];
        let eval = |z: &Tensor2<f64>| {
            let mut t = Tape::new();
            let v = t.input(z.clone());
            cross_entropy(&mut t, v, &labels).unwrap().value
        };
        let mut t = Tape::new();
        let v = t.input_with_grad(z.clone());
        let ce = cross_entropy(&mut t, v, &labels).unwrap();
        assert_eq!(ce.counted, 2);
        assert_eq!(ce.correct, 1);
        let g = t.backward(ce.node, 1.0).unwrap().wrt(v).unwrap().clone();
        assert!(g.row(1).iter().all(|&x| x == 0.0));
        let h = 1e-6;
        for i in 0..z.len() {
            let mut p = z.clone();
            p.data_mut()[i] += h;
            let mut m = z.clone();
            m.data_mut()[i] -= h;
            let num = (eval(&p) - eval(&m)) / (2.0 * h);
            assert!((num - g.data()[i]).abs() < 1e-8, "{num} vs {}", g.data()[i]);
        }
    }
}
