use serde::{Deserialize, Serialize};

use super::{ParamStore, Real, Tensor2};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Bias-corrected Adam moments for every slot of a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Option<Tensor2<T>>>,
    second: Vec<Option<Tensor2<T>>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: AdamConfig, slots: usize) -> Self {
        AdamState {
            config,
            step: 0,
            first: vec![None; slots],
            second: vec![None; slots],
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, id: usize) -> Option<&Tensor2<T>> {
        self.first.get(id).and_then(Option::as_ref)
    }

    pub fn second_moment(&self, id: usize) -> Option<&Tensor2<T>> {
        self.second.get(id).and_then(Option::as_ref)
    }

    /// Applies one update to every parameter in `grads`. All gradients are
    /// validated before any parameter is touched.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[(usize, Tensor2<T>)]) -> Result<()> {
        for (id, g) in grads {
            if *id >= store.len() || store.get(*id).shape() != g.shape() {
                return Err(Error::Shape(format!(
                    "gradient for slot {id} has shape {:?}",
                    g.shape()
                )));
            }
            if !g.is_finite() {
                return Err(Error::NonFiniteUpdate(store.name(*id).to_string()));
            }
        }
        if self.first.len() < store.len() {
            self.first.resize(store.len(), None);
            self.second.resize(store.len(), None);
        }
        self.step += 1;
        let c = &self.config;
        let (b1, b2) = (T::from_f64(c.beta1), T::from_f64(c.beta2));
        let bc1 = T::from_f64(1.0 - c.beta1.powi(self.step as i32));
        let bc2 = T::from_f64(1.0 - c.beta2.powi(self.step as i32));
        let (lr, eps) = (T::from_f64(c.lr), T::from_f64(c.epsilon));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);

        for (id, g) in grads {
            let (r, cc) = g.shape();
            let m = self.first[*id].get_or_insert_with(|| Tensor2::zeros(r, cc));
            let v = self.second[*id].get_or_insert_with(|| Tensor2::zeros(r, cc));
            let p = store.get_mut(*id);
            for (((pv, mv), vv), &gv) in p
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                *mv = b1 * *mv + one_b1 * gv;
                *vv = b2 * *vv + one_b2 * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::layers::ParamKind;

    fn store(vals: &[f64]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add(
            "p",
            ParamKind::Weight,
            Tensor2::from_vec(1, vals.len(), vals.to_vec()).unwrap(),
        );
        s
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = store(&[1.0, -2.0]);
        let mut st = AdamState::new(AdamConfig::default(), 1);
        st.step(&mut s, &[(0, Tensor2::zeros(1, 2))]).unwrap();
        assert_eq!(s.get(0).data(), &[1.0, -2.0]);
        assert_eq!(st.step_count(), 1);
        assert_eq!(st.first_moment(0).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        // m̂ = g, v̂ = g², update = lr·g/(|g|+ε) ≈ lr·sign(g)
        let mut s = store(&[0.0, 0.0]);
        let cfg = AdamConfig {
            lr: 1e-3,
            ..AdamConfig::default()
        };
        let mut st = AdamState::new(cfg, 1);
        st.step(&mut s, &[(0, Tensor2::from_vec(1, 2, vec![3.0, -0.5]).unwrap())])
            .unwrap();
        let expect = [-1e-3 * 3.0 / (3.0 + 1e-8), 1e-3 * 0.5 / (0.5 + 1e-8)];
        for (a, b) in s.get(0).data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
            assert!((a.abs() - 1e-3).abs() < 1e-10);
        }
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut s = store(&[0.0]);
        let mut st = AdamState::new(AdamConfig::default(), 1);
        let err = st
            .step(&mut s, &[(0, Tensor2::from_vec(1, 1, vec![f64::NAN]).unwrap())])
            .unwrap_err();
        assert!(matches!(err, Error::NonFiniteUpdate(ref n) if n == "p"));
        assert_eq!(st.step_count(), 0);
    }

    #[test]
    fn identical_gradient_sequences_give_identical_trajectories() {
        let run = || {
            let mut s = store(&[0.3, 0.1]);
            let mut st = AdamState::new(AdamConfig::default(), 1);
            for i in 0..20 {
                let g = Tensor2::from_vec(1, 2, vec![(i as f64).sin(), (i as f64 * 0.7).cos()]).unwrap();
                st.step(&mut s, &[(0, g)]).unwrap();
            }
            s.get(0).clone()
        };
        assert_eq!(run(), run());
    }
}
