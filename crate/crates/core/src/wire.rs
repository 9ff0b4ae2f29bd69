//! Request and response bodies of the edit service, shared by the server
//! and its clients.

use serde::{Deserialize, Serialize};

use crate::edit::EditOp;
use crate::generative::HeadKind;
use crate::pointcloud::{LabeledCloud, Point};

/// Cloud as sent over the wire. Omitted labels mean "predict them".
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireCloud {
    pub points: Vec<Point>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<usize>>,
}

impl From<&LabeledCloud> for WireCloud {
    fn from(c: &LabeledCloud) -> Self {
        WireCloud {
            points: c.points.clone(),
            labels: Some(c.labels.clone()),
        }
    }
}

impl From<LabeledCloud> for WireCloud {
    fn from(c: LabeledCloud) -> Self {
        WireCloud {
            points: c.points,
            labels: Some(c.labels),
        }
    }
}

/// Reproducibility stamp carried by every response.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServerStamp {
    pub seed: u64,
    pub checkpoint_sha256: String,
}

pub type EncodeRequest = WireCloud;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodeResponse {
    pub model_id: String,
    pub part_presence: Vec<bool>,
    pub k: usize,
    pub l: usize,
    /// Labels that drove the part pool (given or predicted).
    pub labels: Vec<usize>,
    pub stamp: ServerStamp,
}

/// Exactly one of the two fields must be set.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DecodeRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub global_feature: Option<Vec<f32>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeResponse {
    pub cloud: LabeledCloud,
    pub stamp: ServerStamp,
}

/// Body of `/edit`: an [`EditOp`] whose sources are model ids.
pub type EditRequest = EditOp;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditResponse {
    pub model_id: String,
    /// Presence mask of the edited part set; absent for global-scope
    /// interpolation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub part_presence: Option<Vec<bool>>,
    pub cloud: LabeledCloud,
    pub stamp: ServerStamp,
}

/// How `/generate` produces new shapes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenMethod {
    /// Variants of `base` with parts swapped in from `sources`.
    Exchange,
    /// Every part drawn from a random member of `sources`.
    Compose,
    Vae,
    Gan,
    Wgan,
}

impl From<HeadKind> for GenMethod {
    fn from(h: HeadKind) -> Self {
        match h {
            HeadKind::Vae => GenMethod::Vae,
            HeadKind::Gan => GenMethod::Gan,
            HeadKind::Wgan => GenMethod::Wgan,
        }
    }
}

impl std::str::FromStr for GenMethod {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "exchange" => Ok(GenMethod::Exchange),
            "compose" => Ok(GenMethod::Compose),
            other => other.parse::<HeadKind>().map(Into::into),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub head: GenMethod,
    pub count: usize,
    /// Defaults to the server seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Model ids to recombine (exchange, compose).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sources: Vec<String>,
    /// Shape to vary (exchange).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<String>,
    /// Parts swapped per variant (exchange); default 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parts_changed: Option<usize>,
}

impl GenerateRequest {
    pub fn new(head: GenMethod, count: usize, seed: u64) -> Self {
        GenerateRequest {
            head,
            count,
            seed: Some(seed),
            sources: Vec::new(),
            base: None,
            parts_changed: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub model_ids: Vec<String>,
    pub clouds: Vec<LabeledCloud>,
    /// Seed actually used.
    pub seed: u64,
    pub stamp: ServerStamp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub model_id: String,
    /// `encode`, `edit:<op>` or `generate:<method>`.
    pub origin: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub part_presence: Option<Vec<bool>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointInfo {
    pub k: usize,
    pub l: usize,
    pub n: usize,
    pub heads: Vec<HeadKind>,
    pub segmentation: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelsResponse {
    pub checkpoint: CheckpointInfo,
    /// Most recently used first.
    pub sessions: Vec<SessionSummary>,
    pub capacity: usize,
    pub stamp: ServerStamp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub stamp: ServerStamp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub status: u16,
}
