use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, Binding, LayerSpec, Mlp, ParamStore, Real, Tape, Tensor2, Var};
use crate::model::PartFeatureSet;
use crate::{Error, Result};

/// Initial log-variance bias of a freshly attached head.
pub const LOGVAR_INIT: f64 = -4.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaeConfig {
    /// Weight of the KL term.
    pub beta: f64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        VaeConfig { beta: 0.1 }
    }
}

/// Per-part mean and log-variance layers (each `l → l`).
#[derive(Clone, Debug, PartialEq)]
pub struct VaeHead {
    pub config: VaeConfig,
    pub mu: Mlp,
    pub logvar: Mlp,
}

/// Nodes produced by [`VaeHead::graph`].
pub struct VaeGraph {
    pub mu: Var,
    pub logvar: Var,
    pub z: Var,
    pub kl: Var,
    pub kl_value: f64,
}

/// Result of [`vae_sample`].
#[derive(Clone, Debug, PartialEq)]
pub struct VaeSample<T = f32> {
    pub z: PartFeatureSet<T>,
    pub mu: Tensor2<T>,
    pub logvar: Tensor2<T>,
    pub kl: f64,
}

/// `½ Σ (μ² + σ² − 1 − log σ²) / dim`.
pub fn kl_divergence(mu: &[f64], logvar: &[f64]) -> Result<f64> {
    if mu.len() != logvar.len() {
        return Err(Error::SizeMismatch(mu.len(), logvar.len()));
    }
    if mu.is_empty() {
        return Ok(0.0);
    }
    if let Some(v) = logvar.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("log-variance {v}")));
    }
    let s: f64 = mu
        .iter()
        .zip(logvar)
        .map(|(&m, &lv)| m * m + lv.exp() - 1.0 - lv)
        .sum();
    Ok(0.5 * s / mu.len() as f64)
}

/// Minimized VAE objective.
pub fn vae_loss(recon: f64, kl: f64, beta: f64) -> f64 {
    recon + beta * kl
}

pub(crate) fn specs(l: usize) -> Vec<LayerSpec> {
    vec![LayerSpec::new(l, l, Activation::None, false)]
}

impl VaeHead {
    /// Registers the layers in `store`. The mean layer starts as the
    /// identity and the log-variance layer as the constant
    /// [`LOGVAR_INIT`], so an attached head initially passes part features
    /// through with small noise.
    pub fn attach<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        l: usize,
        config: VaeConfig,
        rng: &mut R,
    ) -> Result<VaeHead> {
        if !(config.beta >= 0.0) {
            return Err(Error::Config(format!("beta must be non-negative, got {}", config.beta)));
        }
        let mu = Mlp::new(store, "vae.mu", &specs(l), rng)?;
        let logvar = Mlp::new(store, "vae.logvar", &specs(l), rng)?;
        let (w, b) = mu.layer_params(0);
        *store.get_mut(w) = Tensor2::identity(l);
        *store.get_mut(b) = Tensor2::zeros(1, l);
        let (w, b) = logvar.layer_params(0);
        *store.get_mut(w) = Tensor2::zeros(l, l);
        *store.get_mut(b) = Tensor2::filled(1, l, T::from_f64(LOGVAR_INIT));
        Ok(VaeHead { config, mu, logvar })
    }

    pub fn param_ids(&self) -> Vec<usize> {
        let mut ids = self.mu.param_ids();
        ids.extend(self.logvar.param_ids());
        ids
    }

    /// Means of `parts` rows with absent rows zeroed.
    pub fn mean_graph<'a, T: Real>(
        &self,
        store: &'a ParamStore<T>,
        tape: &mut Tape<'a, T>,
        parts: Var,
        present: &[bool],
        binding: Binding,
    ) -> Result<Var> {
        let mu = self.mu.forward(store, tape, parts, false, binding)?.output;
        let mask = row_mask(present, tape.value(mu).cols());
        tape.mul_const(mu, mask)
    }

    /// Reparameterized sample `z = μ + exp(½ logvar) ⊙ ε` for every row,
    /// with the KL term over present rows. `eps` of `None` means zero
    /// noise.
    pub fn graph<'a, T: Real>(
        &self,
        store: &'a ParamStore<T>,
        tape: &mut Tape<'a, T>,
        parts: Var,
        present: &[bool],
        eps: Option<Tensor2<T>>,
        binding: Binding,
    ) -> Result<VaeGraph> {
        let mu = self.mu.forward(store, tape, parts, true, binding)?.output;
        let logvar = self.logvar.forward(store, tape, parts, true, binding)?.output;
        let (rows, l) = tape.value(mu).shape();
        let z = match eps {
            Some(eps) => {
                if eps.shape() != (rows, l) {
                    return Err(Error::Shape("noise shape".into()));
                }
                let half = tape.scale(logvar, T::from_f64(0.5));
                let std = tape.exp(half);
                let noise = tape.mul_const(std, eps)?;
                tape.add(mu, noise)?
            }
            None => mu,
        };
        let (muv, lvv) = (tape.value(mu), tape.value(logvar));
        if !lvv.is_finite() {
            return Err(Error::NonFinite("log-variance".into()));
        }
        let count = present.iter().filter(|&&p| p).count() * l;
        let mut total = 0.0;
        let mut gmu = Tensor2::zeros(rows, l);
        let mut glv = Tensor2::zeros(rows, l);
        if count > 0 {
            let inv = 1.0 / count as f64;
            for r in (0..rows).filter(|&r| present[r]) {
                for j in 0..l {
                    let (m, lv) = (muv.get(r, j).as_f64(), lvv.get(r, j).as_f64());
                    total += m * m + lv.exp() - 1.0 - lv;
                    gmu.set(r, j, T::from_f64(m * inv));
                    glv.set(r, j, T::from_f64(0.5 * (lv.exp() - 1.0) * inv));
                }
            }
            total *= 0.5 * inv;
        }
        let kl = tape.fused(T::from_f64(total), vec![(mu, gmu), (logvar, glv)])?;
        Ok(VaeGraph {
            mu,
            logvar,
            z,
            kl,
            kl_value: total,
        })
    }
}

fn row_mask<T: Real>(present: &[bool], cols: usize) -> Tensor2<T> {
    let mut m = Tensor2::zeros(present.len(), cols);
    for (r, &p) in present.iter().enumerate() {
        if p {
            m.row_mut(r).iter_mut().for_each(|v| *v = T::one());
        }
    }
    m
}

/// Standard normal `rows×cols` tensor.
pub fn normal_tensor<T: Real, R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Tensor2<T> {
    let data = (0..rows * cols)
        .map(|_| T::from_f64(rng.sample::<f64, _>(StandardNormal)))
        .collect();
    Tensor2::from_vec(rows, cols, data).expect("sized")
}

/// Draws `z` for the rows of `parts` through `head`. With `eps` of `None`
/// the noise is drawn from `rng`.
pub fn vae_sample<T: Real, R: Rng + ?Sized>(
    head: &VaeHead,
    store: &ParamStore<T>,
    parts: &PartFeatureSet<T>,
    eps: Option<Tensor2<T>>,
    rng: &mut R,
) -> Result<VaeSample<T>> {
    let l = head.mu.input_dim();
    if parts.dim() != l {
        return Err(Error::Shape(format!("part features of width {}, head expects {l}", parts.dim())));
    }
    let eps = eps.unwrap_or_else(|| normal_tensor(rng, parts.parts(), l));
    let mut tape = Tape::new();
    let x = tape.input_ref(&parts.features);
    let g = head.graph(store, &mut tape, x, &parts.present, Some(eps), Binding::Frozen)?;
    Ok(VaeSample {
        z: PartFeatureSet::new(tape.value(g.z).clone(), parts.present.clone())?,
        mu: tape.value(g.mu).clone(),
        logvar: tape.value(g.logvar).clone(),
        kl: g.kl_value,
    })
}
