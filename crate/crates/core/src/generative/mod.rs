//! Generative heads over the latent part space.

mod gan;
mod recombine;
mod vae;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Real;
use crate::model::{LpmModel, PartFeatureSet};
use crate::Error;

pub use gan::{flatten, gradient_penalty, GanConfig, GanObjective, GanStepStats, LatentGan, GAN_KIND, WGAN_KIND};
pub use recombine::{exchange_variants, random_compositions};
pub use vae::{kl_divergence, normal_tensor, vae_loss, vae_sample, VaeConfig, VaeGraph, VaeHead, VaeSample, LOGVAR_INIT};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Vae,
    Gan,
    Wgan,
}

impl std::str::FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "vae" => Ok(HeadKind::Vae),
            "gan" => Ok(HeadKind::Gan),
            "wgan" => Ok(HeadKind::Wgan),
            other => Err(Error::Config(format!("unknown head `{other}` (expected vae, gan or wgan)"))),
        }
    }
}

/// Source of new part latents.
pub trait LatentSampler<T: Real> {
    /// `count` part sets, reproducible for a given seed.
    fn sample_latents(&self, count: usize, seed: u64) -> Result<Vec<PartFeatureSet<T>>, Error>;

    /// One replacement row for `part` (1-based).
    fn sample_part(&self, part: usize, seed: u64) -> Result<Vec<T>, Error> {
        let set = self.sample_latents(1, seed)?.remove(0);
        Ok(set.row(part)?.to_vec())
    }
}

impl<T: Real> LatentSampler<T> for LpmModel<T> {
    fn sample_latents(&self, count: usize, seed: u64) -> Result<Vec<PartFeatureSet<T>>, Error> {
        self.sample_prior(count, seed)
    }

    fn sample_part(&self, part: usize, seed: u64) -> Result<Vec<T>, Error> {
        if self.vae().is_none() {
            return Err(Error::HeadMissing("vae".into()));
        }
        if part == 0 || part > self.parts() {
            return Err(Error::InvalidPart { part, parts: self.parts() });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(normal_tensor::<T, _>(&mut rng, 1, self.feature_size()).into_data())
    }
}

impl<T: Real> LatentSampler<T> for LatentGan<T> {
    fn sample_latents(&self, count: usize, seed: u64) -> Result<Vec<PartFeatureSet<T>>, Error> {
        self.sample(count, seed)
    }
}
