//! Part-aware point-cloud autoencoder.
//!
//! Point features come from a shared point-wise MLP, are max-pooled per
//! semantic part and then pooled again across parts into a global feature.
//! The global feature is decoded back into a fixed-size cloud. Because the
//! global feature is a pure function of the part features, editing a part
//! row in latent space and re-fusing yields a new shape in a single network.

pub mod autodiff;
pub mod distances;
pub mod edit;
pub mod error;
pub mod generative;
pub mod metrics;
pub mod model;
pub mod pointcloud;
pub mod wire;

pub use error::{Error, Result};
