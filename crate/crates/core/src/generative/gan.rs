use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::vae::normal_tensor;
use crate::autodiff::checkpoint::Checkpoint;
use crate::autodiff::{
    gemm_into, Activation, AdamConfig, AdamState, Binding, LayerSpec, Mlp, ParamStore, Real, Tape,
    Tensor2,
};
use crate::model::PartFeatureSet;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum GanObjective {
    /// Cross-entropy minimax game.
    Standard,
    /// Critic difference plus gradient penalty on interpolates.
    WassersteinGp { gp_weight: f64, critic_steps: usize },
}

impl GanObjective {
    pub fn wasserstein() -> Self {
        GanObjective::WassersteinGp {
            gp_weight: 10.0,
            critic_steps: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanConfig {
    pub parts: usize,
    pub feature_size: usize,
    pub noise_dim: usize,
    pub hidden: usize,
    pub objective: GanObjective,
    pub generator_adam: AdamConfig,
    pub critic_adam: AdamConfig,
    pub leaky_slope: f64,
}

impl GanConfig {
    pub fn new(parts: usize, feature_size: usize, objective: GanObjective) -> Self {
        let adam = |lr| AdamConfig {
            lr,
            beta1: 0.5,
            ..AdamConfig::default()
        };
        GanConfig {
            parts,
            feature_size,
            noise_dim: 128,
            hidden: 128,
            objective,
            generator_adam: adam(5e-4),
            critic_adam: adam(1e-4),
            leaky_slope: 0.2,
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.parts * self.feature_size
    }

    fn generator_specs(&self) -> Vec<LayerSpec> {
        LayerSpec::chain(
            &[self.noise_dim, self.hidden, self.feature_size, self.latent_dim()],
            Activation::Relu,
            false,
            Activation::None,
            false,
        )
    }

    fn critic_specs(&self) -> Vec<LayerSpec> {
        LayerSpec::chain(
            &[self.latent_dim(), self.feature_size, self.hidden, 1],
            Activation::LeakyRelu(self.leaky_slope),
            false,
            Activation::None,
            false,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanStepStats {
    pub step: usize,
    pub d_loss: f64,
    pub g_loss: f64,
}

/// Generator and discriminator over flattened `k×l` part latents.
#[derive(Clone, Debug)]
pub struct LatentGan<T = f32> {
    config: GanConfig,
    store: ParamStore<T>,
    generator: Mlp,
    critic: Mlp,
    g_opt: AdamState<T>,
    d_opt: AdamState<T>,
    rng: ChaCha8Rng,
    steps: usize,
    trained: bool,
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `(‖∇ₓD(x)‖ − 1)²` averaged over the rows of `x`, for an MLP critic of
/// piecewise-linear layers with a scalar output, together with its
/// gradient with respect to the critic weights. Biases receive no
/// gradient since the input gradient does not depend on them (away from
/// activation kinks).
pub fn gradient_penalty<T: Real>(
    critic: &Mlp,
    store: &ParamStore<T>,
    x: &Tensor2<T>,
) -> Result<(f64, Vec<(usize, Tensor2<T>)>)> {
    let depth = critic.depth();
    if critic.output_dim() != 1 {
        return Err(Error::Config("gradient penalty needs a scalar critic".into()));
    }
    let b = x.rows();
    if b == 0 {
        return Err(Error::Empty("gradient penalty batch".into()));
    }
    // forward, keeping the activation slopes of every hidden layer
    let mut masks: Vec<Tensor2<T>> = Vec::with_capacity(depth);
    let mut a = x.clone();
    for i in 0..depth {
        let spec = critic.layer_spec(i);
        if spec.batch_norm.is_some() {
            return Err(Error::Config("gradient penalty critic must not use batch norm".into()));
        }
        let (w, bias) = critic.layer_params(i);
        let mut h = Tensor2::zeros(b, spec.outputs);
        for r in 0..b {
            h.row_mut(r).copy_from_slice(store.get(bias).data());
        }
        gemm_into(&a, false, store.get(w), false, T::one(), &mut h);
        let slope = |v: T| match spec.activation {
            Activation::None => T::one(),
            Activation::Relu => if v > T::zero() { T::one() } else { T::zero() },
            Activation::LeakyRelu(s) => if v > T::zero() { T::one() } else { T::from_f64(s) },
        };
        let m = h.map(slope);
        for (hv, &mv) in h.data_mut().iter_mut().zip(m.data()) {
            *hv *= mv;
        }
        masks.push(m);
        a = h;
    }
    // q[i] = ∂D/∂(pre-activation of layer i), per row
    let mut q: Vec<Tensor2<T>> = vec![Tensor2::zeros(0, 0); depth];
    q[depth - 1] = masks[depth - 1].clone();
    for i in (1..depth).rev() {
        let (w, _) = critic.layer_params(i);
        let mut p = Tensor2::zeros(b, critic.layer_spec(i).inputs);
        gemm_into(&q[i], false, store.get(w), true, T::zero(), &mut p);
        for (pv, &mv) in p.data_mut().iter_mut().zip(masks[i - 1].data()) {
            *pv *= mv;
        }
        q[i - 1] = p;
    }
    let (w0, _) = critic.layer_params(0);
    let mut gx = Tensor2::zeros(b, x.cols());
    gemm_into(&q[0], false, store.get(w0), true, T::zero(), &mut gx);
    // penalty and its gradient with respect to gx
    let mut total = 0.0;
    let mut r = Tensor2::zeros(b, x.cols());
    for row in 0..b {
        let norm = gx.row(row).iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt();
        total += (norm - 1.0) * (norm - 1.0);
        if norm > 0.0 {
            let c = 2.0 * (norm - 1.0) / norm / b as f64;
            for (rv, &gv) in r.row_mut(row).iter_mut().zip(gx.row(row)) {
                *rv = T::from_f64(c * gv.as_f64());
            }
        }
    }
    let mut grads = Vec::with_capacity(depth);
    for i in 0..depth {
        let (w, _) = critic.layer_params(i);
        let mut dw = Tensor2::zeros(critic.layer_spec(i).inputs, critic.layer_spec(i).outputs);
        gemm_into(&r, true, &q[i], false, T::zero(), &mut dw);
        grads.push((w, dw));
        if i + 1 < depth {
            let mut next = Tensor2::zeros(b, critic.layer_spec(i).outputs);
            gemm_into(&r, false, store.get(w), false, T::zero(), &mut next);
            for (nv, &mv) in next.data_mut().iter_mut().zip(masks[i].data()) {
                *nv *= mv;
            }
            r = next;
        }
    }
    Ok((total / b as f64, grads))
}

fn stack_rows<T: Real>(a: &Tensor2<T>, b: &Tensor2<T>) -> Tensor2<T> {
    let mut data = a.data().to_vec();
    data.extend_from_slice(b.data());
    Tensor2::from_vec(a.rows() + b.rows(), a.cols(), data).expect("same width")
}

pub const GAN_KIND: &str = "gan";
pub const WGAN_KIND: &str = "wgan";

impl<T: Real> LatentGan<T> {
    pub fn new(config: GanConfig, seed: u64) -> Result<Self> {
        if config.parts == 0 || config.feature_size == 0 || config.noise_dim == 0 || config.hidden == 0 {
            return Err(Error::Config("GAN dimensions must be positive".into()));
        }
        if let GanObjective::WassersteinGp { gp_weight, critic_steps } = config.objective {
            if !(gp_weight >= 0.0) || critic_steps == 0 {
                return Err(Error::Config("gp weight must be ≥ 0 and critic steps ≥ 1".into()));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let generator = Mlp::new(&mut store, "generator", &config.generator_specs(), &mut rng)?;
        let critic = Mlp::new(&mut store, "discriminator", &config.critic_specs(), &mut rng)?;
        let slots = store.len();
        Ok(LatentGan {
            g_opt: AdamState::new(config.generator_adam, slots),
            d_opt: AdamState::new(config.critic_adam, slots),
            config,
            store,
            generator,
            critic,
            rng,
            steps: 0,
            trained: false,
        })
    }

    pub fn config(&self) -> &GanConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn critic(&self) -> &Mlp {
        &self.critic
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn kind(&self) -> &'static str {
        match self.config.objective {
            GanObjective::Standard => GAN_KIND,
            GanObjective::WassersteinGp { .. } => WGAN_KIND,
        }
    }

    /// Generator output for `noise` (rows of length `noise_dim`).
    pub fn generate(&self, noise: &Tensor2<T>) -> Result<Tensor2<T>> {
        let mut tape = Tape::new();
        let z = tape.input_ref(noise);
        let out = self.generator.forward(&self.store, &mut tape, z, false, Binding::Frozen)?.output;
        Ok(tape.value(out).clone())
    }

    /// Critic output, one value per row.
    pub fn critic_values(&self, x: &Tensor2<T>) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let v = tape.input_ref(x);
        let out = self.critic.forward(&self.store, &mut tape, v, false, Binding::Frozen)?.output;
        Ok(tape.value(out).data().iter().map(|v| v.as_f64()).collect())
    }

    fn noise(&mut self, rows: usize) -> Tensor2<T> {
        normal_tensor(&mut self.rng, rows, self.config.noise_dim)
    }

    /// One discriminator update on explicit real and fake batches. Returns
    /// the discriminator loss before the update.
    pub fn discriminator_step(&mut self, real: &Tensor2<T>, fake: &Tensor2<T>) -> Result<f64> {
        let d = self.config.latent_dim();
        if real.cols() != d || fake.cols() != d || real.rows() == 0 || fake.rows() == 0 {
            return Err(Error::Shape(format!("latent batches must be non-empty with {d} columns")));
        }
        let (nr, nf) = (real.rows(), fake.rows());
        let both = stack_rows(real, fake);
        let alpha: Vec<f64> = (0..nr.min(nf)).map(|_| self.rng.random::<f64>()).collect();
        let ids = self.critic.param_ids();
        let (loss, mut grads) = {
            let mut tape = Tape::new();
            let x = tape.input_ref(&both);
            let out = self.critic.forward(&self.store, &mut tape, x, true, Binding::default())?.output;
            let v: Vec<f64> = tape.value(out).data().iter().map(|v| v.as_f64()).collect();
            let mut g = Tensor2::zeros(nr + nf, 1);
            let mut loss = 0.0;
            match self.config.objective {
                GanObjective::Standard => {
                    for (i, &s) in v.iter().enumerate() {
                        if i < nr {
                            loss += softplus(-s) / nr as f64;
                            g.data_mut()[i] = T::from_f64((sigmoid(s) - 1.0) / nr as f64);
                        } else {
                            loss += softplus(s) / nf as f64;
                            g.data_mut()[i] = T::from_f64(sigmoid(s) / nf as f64);
                        }
                    }
                }
                GanObjective::WassersteinGp { .. } => {
                    for (i, &s) in v.iter().enumerate() {
                        let w = if i < nr { -1.0 / nr as f64 } else { 1.0 / nf as f64 };
                        loss += w * s;
                        g.data_mut()[i] = T::from_f64(w);
                    }
                }
            }
            let node = tape.fused(T::from_f64(loss), vec![(out, g)])?;
            let grads = tape.backward(node, T::one())?;
            let grads: Vec<(usize, Tensor2<T>)> = ids.iter().filter_map(|&id| grads.param(id).map(|t| (id, t))).collect();
            (loss, grads)
        };
        let mut total = loss;
        if let GanObjective::WassersteinGp { gp_weight, .. } = self.config.objective {
            if gp_weight > 0.0 {
                let m = alpha.len();
                let mut xhat = Tensor2::zeros(m, d);
                for (r, &a) in alpha.iter().enumerate() {
                    for ((o, &x), &y) in xhat.row_mut(r).iter_mut().zip(real.row(r)).zip(fake.row(r)) {
                        *o = T::from_f64(a * x.as_f64() + (1.0 - a) * y.as_f64());
                    }
                }
                let (gp, gp_grads) = gradient_penalty(&self.critic, &self.store, &xhat)?;
                total += gp_weight * gp;
                for (id, mut gg) in gp_grads {
                    gg.data_mut().iter_mut().for_each(|v| *v *= T::from_f64(gp_weight));
                    match grads.iter_mut().find(|(i, _)| *i == id) {
                        Some((_, acc)) => acc.add_assign(&gg),
                        None => grads.push((id, gg)),
                    }
                }
            }
        }
        if !total.is_finite() {
            return Err(Error::NonFinite(format!("discriminator loss at step {}", self.steps)));
        }
        self.d_opt.step(&mut self.store, &grads)?;
        Ok(total)
    }

    /// One generator update on a fresh noise batch. Returns the generator
    /// loss before the update.
    pub fn generator_step(&mut self, batch: usize) -> Result<f64> {
        let noise = self.noise(batch);
        let ids = self.generator.param_ids();
        let (loss, grads) = {
            let mut tape = Tape::new();
            let z = tape.input_ref(&noise);
            let fake = self.generator.forward(&self.store, &mut tape, z, true, Binding::default())?.output;
            let out = self.critic.forward(&self.store, &mut tape, fake, true, Binding::Frozen)?.output;
            let v: Vec<f64> = tape.value(out).data().iter().map(|v| v.as_f64()).collect();
            let n = v.len() as f64;
            let mut g = Tensor2::zeros(v.len(), 1);
            let mut loss = 0.0;
            for (i, &s) in v.iter().enumerate() {
                let (l, d) = match self.config.objective {
                    GanObjective::Standard => (softplus(-s), sigmoid(s) - 1.0),
                    GanObjective::WassersteinGp { .. } => (-s, -1.0),
                };
                loss += l / n;
                g.data_mut()[i] = T::from_f64(d / n);
            }
            let node = tape.fused(T::from_f64(loss), vec![(out, g)])?;
            let grads = tape.backward(node, T::one())?;
            let grads: Vec<(usize, Tensor2<T>)> = ids.iter().filter_map(|&id| grads.param(id).map(|t| (id, t))).collect();
            (loss, grads)
        };
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("generator loss at step {}", self.steps)));
        }
        self.g_opt.step(&mut self.store, &grads)?;
        Ok(loss)
    }

    /// Critic update(s) followed by one generator update. `real` holds
    /// flattened part latents, one sample per row.
    pub fn gan_step(&mut self, real: &Tensor2<T>) -> Result<GanStepStats> {
        let critic_steps = match self.config.objective {
            GanObjective::Standard => 1,
            GanObjective::WassersteinGp { critic_steps, .. } => critic_steps,
        };
        let mut d_loss = 0.0;
        for _ in 0..critic_steps {
            let noise = self.noise(real.rows());
            let fake = self.generate(&noise)?;
            d_loss = self.discriminator_step(real, &fake)?;
        }
        let g_loss = self.generator_step(real.rows())?;
        self.steps += 1;
        self.trained = true;
        Ok(GanStepStats {
            step: self.steps,
            d_loss,
            g_loss,
        })
    }

    /// `steps` GAN steps on random batches of `latents`.
    pub fn train(&mut self, latents: &[PartFeatureSet<T>], steps: usize, batch: usize) -> Result<Vec<GanStepStats>> {
        if latents.is_empty() {
            return Err(Error::Empty("GAN training latents".into()));
        }
        let flat = flatten(latents, self.config.parts, self.config.feature_size)?;
        let d = self.config.latent_dim();
        let batch = batch.clamp(1, latents.len());
        let mut history = Vec::with_capacity(steps);
        for _ in 0..steps {
            let pick = sample(&mut self.rng, latents.len(), batch).into_vec();
            let mut data = Vec::with_capacity(batch * d);
            for i in pick {
                data.extend_from_slice(flat.row(i));
            }
            history.push(self.gan_step(&Tensor2::from_vec(batch, d, data)?)?);
        }
        Ok(history)
    }

    /// `count` generated part sets, all parts present.
    pub fn sample(&self, count: usize, seed: u64) -> Result<Vec<PartFeatureSet<T>>> {
        if count == 0 {
            return Ok(Vec::new());
        }
        if !self.trained {
            return Err(Error::HeadMissing(format!("{} head is untrained", self.kind())));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = normal_tensor(&mut rng, count, self.config.noise_dim);
        let out = self.generate(&noise)?;
        let (k, l) = (self.config.parts, self.config.feature_size);
        (0..count)
            .map(|r| PartFeatureSet::new(Tensor2::from_vec(k, l, out.row(r).to_vec())?, vec![true; k]))
            .collect()
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint {
            kind: self.kind().into(),
            meta: serde_json::json!({ "config": self.config, "trained": self.trained, "steps": self.steps }),
            layers: vec![
                ("generator".into(), self.generator.specs()),
                ("discriminator".into(), self.critic.specs()),
            ],
            store: self.store.cast(),
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.kind != GAN_KIND && ckpt.kind != WGAN_KIND {
            return Err(Error::Checkpoint(format!("expected a GAN head, found `{}`", ckpt.kind)));
        }
        let config: GanConfig = serde_json::from_value(ckpt.meta["config"].clone())?;
        let mut gan = LatentGan::new(config, 0)?;
        if ckpt.store.len() != gan.store.len() {
            return Err(Error::Checkpoint("tensor count disagrees with the GAN header".into()));
        }
        for (dst, src) in gan.store.iter_mut().zip(ckpt.store.iter()) {
            if dst.name != src.name || dst.value.shape() != src.value.shape() {
                return Err(Error::Checkpoint(format!("tensor `{}` does not match `{}`", src.name, dst.name)));
            }
            dst.value = src.value.cast();
        }
        gan.trained = ckpt.meta["trained"].as_bool().unwrap_or(false);
        gan.steps = ckpt.meta["steps"].as_u64().unwrap_or(0) as usize;
        Ok(gan)
    }
}

/// Rows of `k×l` part sets flattened to `k·l` columns.
pub fn flatten<T: Real>(latents: &[PartFeatureSet<T>], parts: usize, dim: usize) -> Result<Tensor2<T>> {
    let mut data = Vec::with_capacity(latents.len() * parts * dim);
    for p in latents {
        if p.parts() != parts || p.dim() != dim {
            return Err(Error::Shape(format!(
                "latent {}×{} where {parts}×{dim} was expected",
                p.parts(),
                p.dim()
            )));
        }
        data.extend_from_slice(p.features.data());
    }
    Tensor2::from_vec(latents.len(), parts * dim, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, ParamKind};

    #[test]
    fn linear_critic_penalty_is_exact() {
        for d in [1usize, 4, 9] {
            let mut store = ParamStore::<f64>::new();
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let critic = Mlp::new(&mut store, "c", &[LayerSpec::new(d, 1, Activation::None, false)], &mut rng).unwrap();
            let (w, b) = critic.layer_params(0);
            *store.get_mut(w) = Tensor2::filled(d, 1, 1.0);
            *store.get_mut(b) = Tensor2::zeros(1, 1);
            let x = normal_tensor::<f64, _>(&mut rng, 3, d);
            let (gp, _) = gradient_penalty(&critic, &store, &x).unwrap();
            let expect = ((d as f64).sqrt() - 1.0).powi(2);
            assert_eq!(gp, expect);
        }
    }

    #[test]
    fn penalty_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::<f64>::new();
        let specs = LayerSpec::chain(&[5, 7, 6, 1], Activation::LeakyRelu(0.2), false, Activation::None, false);
        let critic = Mlp::new(&mut store, "c", &specs, &mut rng).unwrap();
        let x = normal_tensor::<f64, _>(&mut rng, 4, 5);
        let (_, grads) = gradient_penalty(&critic, &store, &x).unwrap();
        let report = grad_check(&store, &grads, 1e-6, 64, |s| Ok(gradient_penalty(&critic, s, &x)?.0)).unwrap();
        assert!(report.max_rel_error <= 1e-4, "{report:?}");
        for (id, _) in &grads {
            assert_eq!(store.kind(*id), ParamKind::Weight);
        }
    }

    #[test]
    fn wasserstein_without_penalty_is_critic_difference() {
        let mut gan = LatentGan::<f64>::new(GanConfig::new(1, 2, GanObjective::WassersteinGp { gp_weight: 0.0, critic_steps: 1 }), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let real = normal_tensor::<f64, _>(&mut rng, 6, 2);
        let fake = normal_tensor::<f64, _>(&mut rng, 6, 2);
        let (vr, vf) = (gan.critic_values(&real).unwrap(), gan.critic_values(&fake).unwrap());
        let expect = vf.iter().sum::<f64>() / 6.0 - vr.iter().sum::<f64>() / 6.0;
        let got = gan.discriminator_step(&real, &fake).unwrap();
        assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
    }

    #[test]
    fn discriminator_loss_approaches_log4_when_real_equals_fake() {
        let mut gan = LatentGan::<f64>::new(GanConfig::new(1, 1, GanObjective::Standard), 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut last = Vec::new();
        for step in 0..300 {
            let real = normal_tensor::<f64, _>(&mut rng, 64, 1);
            let fake = normal_tensor::<f64, _>(&mut rng, 64, 1);
            let l = gan.discriminator_step(&real, &fake).unwrap();
            if step >= 250 {
                last.push(l);
            }
        }
        let mean = last.iter().sum::<f64>() / last.len() as f64;
        assert!((mean - 4f64.ln()).abs() <= 0.15, "{mean}");
    }

    #[test]
    fn sampling_is_seeded_and_requires_training() {
        let mut gan = LatentGan::<f32>::new(GanConfig::new(2, 3, GanObjective::Standard), 1).unwrap();
        assert!(gan.sample(0, 1).unwrap().is_empty());
        assert!(matches!(gan.sample(2, 1), Err(Error::HeadMissing(_))));
        let latents: Vec<_> = (0..4)
            .map(|i| PartFeatureSet::new(Tensor2::filled(2, 3, i as f32), vec![true; 2]).unwrap())
            .collect();
        gan.train(&latents, 3, 2).unwrap();
        let a = gan.sample(3, 9).unwrap();
        assert_eq!(a, gan.sample(3, 9).unwrap());
        assert!(a.iter().all(|s| s.present.iter().all(|&p| p)));
        let back = LatentGan::<f32>::from_checkpoint(&Checkpoint::from_bytes(&gan.to_checkpoint().unwrap().to_bytes().unwrap()).unwrap()).unwrap();
        assert_eq!(back.sample(3, 9).unwrap(), a);
    }
}
