use std::num::NonZeroUsize;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use lru::LruCache;
use sha2::{Digest, Sha256};

use lpm_core::autodiff::checkpoint::Checkpoint;
use lpm_core::edit::{EditOp, InterpScope};
use lpm_core::generative::{exchange_variants, random_compositions, HeadKind, LatentGan, LatentSampler};
use lpm_core::model::{GlobalFeature, LpmModel, PartFeatureSet};
use lpm_core::pointcloud::LabeledCloud;
use lpm_core::wire::{
    CheckpointInfo, DecodeRequest, DecodeResponse, EditResponse, EncodeRequest, EncodeResponse, GenMethod,
    GenerateRequest, GenerateResponse, ModelsResponse, ServerStamp, SessionSummary,
};
use lpm_core::Error;

use crate::ApiError;

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    pub seed: u64,
    pub cache_capacity: usize,
    /// Request body cap in bytes.
    pub body_limit: usize,
    /// Allowed browser origin; any origin when unset.
    pub cors_origin: Option<String>,
    /// Upper bound on `count` in `/generate`.
    pub max_generate: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            seed: 0,
            cache_capacity: 256,
            body_limit: 1 << 20,
            cors_origin: None,
            max_generate: 512,
        }
    }
}

/// Optional latent GAN heads.
#[derive(Default)]
pub struct Heads {
    pub gan: Option<LatentGan>,
    pub wgan: Option<LatentGan>,
}

/// One cached result. Immutable once inserted.
#[derive(Debug)]
pub struct Session {
    pub parts: Option<PartFeatureSet>,
    pub global: GlobalFeature,
    /// Cloud used to label decoded points when the model has no
    /// segmentation head.
    pub reference: Option<Arc<LabeledCloud>>,
    pub origin: String,
}

pub struct AppState {
    model: LpmModel,
    heads: Heads,
    config: ServiceConfig,
    sha256: String,
    sessions: Mutex<LruCache<String, Arc<Session>>>,
    next_id: AtomicU64,
}

fn sha256_hex(chunks: &[Vec<u8>]) -> String {
    let mut h = Sha256::new();
    for c in chunks {
        h.update(c);
    }
    hex::encode(h.finalize())
}

impl AppState {
    /// Wraps in-memory parameters. The stamp hash covers the serialized
    /// model checkpoint followed by any loaded heads, so with no heads it
    /// equals the checksum of the model file.
    pub fn new(model: LpmModel, heads: Heads, config: ServiceConfig) -> Result<Self, Error> {
        let mut bytes = vec![model.to_checkpoint()?.to_bytes()?];
        for g in [&heads.gan, &heads.wgan].into_iter().flatten() {
            bytes.push(g.to_checkpoint()?.to_bytes()?);
        }
        for (g, want) in [(&heads.gan, HeadKind::Gan), (&heads.wgan, HeadKind::Wgan)] {
            if let Some(g) = g {
                let kind: HeadKind = g.kind().parse()?;
                if kind != want {
                    return Err(Error::Checkpoint(format!("`{}` head loaded in the {want:?} slot", g.kind())));
                }
                if g.config().parts != model.parts() || g.config().feature_size != model.feature_size() {
                    return Err(Error::Checkpoint("GAN head latent shape differs from the model".into()));
                }
            }
        }
        let cap = NonZeroUsize::new(config.cache_capacity.max(1)).expect("positive");
        Ok(AppState {
            model,
            heads,
            sha256: sha256_hex(&bytes),
            sessions: Mutex::new(LruCache::new(cap)),
            next_id: AtomicU64::new(1),
            config,
        })
    }

    pub fn load(model: &Path, gan: Option<&Path>, wgan: Option<&Path>, config: ServiceConfig) -> Result<Self, Error> {
        let read = |p: &Path| -> Result<LatentGan, Error> {
            let bytes = std::fs::read(p).map_err(|e| Error::io(p, e))?;
            LatentGan::from_checkpoint(&Checkpoint::from_bytes(&bytes)?)
        };
        let heads = Heads {
            gan: gan.map(read).transpose()?,
            wgan: wgan.map(read).transpose()?,
        };
        AppState::new(LpmModel::load(model)?, heads, config)
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn model(&self) -> &LpmModel {
        &self.model
    }

    pub fn stamp(&self) -> ServerStamp {
        ServerStamp {
            seed: self.config.seed,
            checkpoint_sha256: self.sha256.clone(),
        }
    }

    fn insert(&self, session: Session) -> String {
        let id = format!("m{}", self.next_id.fetch_add(1, Ordering::Relaxed));
        self.sessions.lock().expect("session lock").put(id.clone(), Arc::new(session));
        id
    }

    pub fn session(&self, id: &str) -> Result<Arc<Session>, ApiError> {
        self.sessions
            .lock()
            .expect("session lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(id))
    }

    fn parts_of(&self, id: &str) -> Result<PartFeatureSet, ApiError> {
        self.session(id)?
            .parts
            .clone()
            .ok_or_else(|| ApiError::bad_request(format!("model `{id}` holds only a global feature")))
    }

    fn labeled(&self, global: &GlobalFeature, reference: Option<&LabeledCloud>) -> Result<LabeledCloud, ApiError> {
        let points = self.model.decode(global)?;
        let labels = self.model.label_points(&points, reference)?;
        Ok(LabeledCloud::new(points, labels, self.model.parts())?)
    }

    pub fn encode(&self, req: EncodeRequest) -> Result<EncodeResponse, ApiError> {
        let k = self.model.parts();
        let given = req.labels.is_some();
        let labels = req.labels.unwrap_or_else(|| vec![1; req.points.len()]);
        let cloud = LabeledCloud::new(req.points, labels, k)?;
        let enc = if given {
            self.model.encode(&cloud)?
        } else {
            self.model.encode_predicted(&cloud)?
        };
        let presence = enc.parts.present.clone();
        let id = self.insert(Session {
            parts: Some(enc.parts),
            global: enc.global,
            reference: Some(Arc::new(cloud)),
            origin: "encode".into(),
        });
        Ok(EncodeResponse {
            model_id: id,
            part_presence: presence,
            k,
            l: self.model.feature_size(),
            labels: enc.labels,
            stamp: self.stamp(),
        })
    }

    pub fn decode(&self, req: DecodeRequest) -> Result<DecodeResponse, ApiError> {
        let cloud = match (req.model_id, req.global_feature) {
            (Some(id), None) => {
                let s = self.session(&id)?;
                self.labeled(&s.global, s.reference.as_deref())?
            }
            (None, Some(g)) => self.labeled(&GlobalFeature(g), None)?,
            _ => return Err(ApiError::bad_request("give exactly one of `model_id` and `global_feature`")),
        };
        Ok(DecodeResponse {
            cloud,
            stamp: self.stamp(),
        })
    }

    fn regenerate_row(&self, part: usize, head: HeadKind, seed: u64) -> Result<Vec<f32>, Error> {
        match head {
            HeadKind::Vae => self.model.sample_part(part, seed),
            HeadKind::Gan => self.gan(HeadKind::Gan)?.sample_part(part, seed),
            HeadKind::Wgan => self.gan(HeadKind::Wgan)?.sample_part(part, seed),
        }
    }

    fn gan(&self, kind: HeadKind) -> Result<&LatentGan, Error> {
        let slot = match kind {
            HeadKind::Gan => &self.heads.gan,
            _ => &self.heads.wgan,
        };
        slot.as_ref()
            .ok_or_else(|| Error::HeadMissing(format!("no {kind:?} head loaded").to_lowercase()))
    }

    pub fn edit(&self, op: EditOp) -> Result<EditResponse, ApiError> {
        op.validate(self.model.parts())?;
        // resolve every source first so unknown ids are 404 regardless of op
        let mut sessions = Vec::new();
        for id in op.sources() {
            sessions.push((id.to_string(), self.session(id)?));
        }
        let resolve = |id: &str| -> Result<PartFeatureSet, Error> {
            let s = &sessions.iter().find(|(i, _)| i == id).expect("resolved above").1;
            s.parts
                .clone()
                .ok_or_else(|| Error::Config(format!("model `{id}` holds only a global feature")))
        };
        let edited = op.apply(self.model.config().pooling, resolve, |p, h, s| self.regenerate_row(p, h, s))?;
        let reference = sessions[0].1.reference.clone();
        let cloud = self.labeled(&edited.global, reference.as_deref())?;
        let presence = edited.parts.as_ref().map(|p| p.present.clone());
        let kind = match &op {
            EditOp::Exchange { .. } => "exchange",
            EditOp::Interpolate { scope: InterpScope::Global, .. } => "interpolate-global",
            EditOp::Interpolate { .. } => "interpolate",
            EditOp::Compose { .. } => "compose",
            EditOp::Remove { .. } => "remove",
            EditOp::Regenerate { .. } => "regenerate",
        };
        let id = self.insert(Session {
            parts: edited.parts,
            global: edited.global,
            reference,
            origin: format!("edit:{kind}"),
        });
        Ok(EditResponse {
            model_id: id,
            part_presence: presence,
            cloud,
            stamp: self.stamp(),
        })
    }

    pub fn generate(&self, req: GenerateRequest) -> Result<GenerateResponse, ApiError> {
        if req.count > self.config.max_generate {
            return Err(ApiError::bad_request(format!(
                "count {} exceeds the limit of {}",
                req.count, self.config.max_generate
            )));
        }
        let seed = req.seed.unwrap_or(self.config.seed);
        let sources = || -> Result<Vec<PartFeatureSet>, ApiError> {
            if req.sources.is_empty() {
                return Err(ApiError::bad_request("`sources` must list at least one model id"));
            }
            req.sources.iter().map(|id| self.parts_of(id)).collect()
        };
        let mut reference = None;
        let latents = match req.head {
            GenMethod::Vae => self.model.sample_latents(req.count, seed)?,
            GenMethod::Gan => self.gan(HeadKind::Gan)?.sample_latents(req.count, seed)?,
            GenMethod::Wgan => self.gan(HeadKind::Wgan)?.sample_latents(req.count, seed)?,
            GenMethod::Compose => random_compositions(&sources()?, req.count, seed)?,
            GenMethod::Exchange => {
                let base_id = req.base.as_deref().ok_or_else(|| ApiError::bad_request("exchange needs `base`"))?;
                let base = self.parts_of(base_id)?;
                reference = self.session(base_id)?.reference.clone();
                exchange_variants(&base, &sources()?, req.parts_changed.unwrap_or(1), req.count, seed)?
            }
        };
        let method = serde_json::to_value(req.head).ok().and_then(|v| v.as_str().map(String::from));
        let globals = latents.iter().map(|p| self.model.fuse(p)).collect::<Result<Vec<_>, _>>()?;
        let decoded = self.model.decode_batch(&globals)?;
        let mut clouds = Vec::with_capacity(decoded.len());
        let mut ids = Vec::with_capacity(decoded.len());
        for ((points, parts), global) in decoded.into_iter().zip(latents).zip(globals) {
            let labels = self.model.label_points(&points, reference.as_deref())?;
            clouds.push(LabeledCloud::new(points, labels, self.model.parts())?);
            ids.push(self.insert(Session {
                parts: Some(parts),
                global,
                reference: reference.clone(),
                origin: format!("generate:{}", method.as_deref().unwrap_or("?")),
            }));
        }
        Ok(GenerateResponse {
            model_ids: ids,
            clouds,
            seed,
            stamp: self.stamp(),
        })
    }

    pub fn models(&self) -> ModelsResponse {
        let sessions = self
            .sessions
            .lock()
            .expect("session lock")
            .iter()
            .map(|(id, s)| SessionSummary {
                model_id: id.clone(),
                origin: s.origin.clone(),
                part_presence: s.parts.as_ref().map(|p| p.present.clone()),
            })
            .collect();
        let mut heads = Vec::new();
        if self.model.vae().is_some() {
            heads.push(HeadKind::Vae);
        }
        if self.heads.gan.is_some() {
            heads.push(HeadKind::Gan);
        }
        if self.heads.wgan.is_some() {
            heads.push(HeadKind::Wgan);
        }
        let cfg = self.model.config();
        ModelsResponse {
            checkpoint: CheckpointInfo {
                k: cfg.parts,
                l: cfg.feature_size,
                n: cfg.points,
                heads,
                segmentation: self.model.seg_head().is_some(),
            },
            sessions,
            capacity: self.config.cache_capacity,
            stamp: self.stamp(),
        }
    }
}
