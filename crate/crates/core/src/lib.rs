//! Trajectory generation by conditional flow matching.
//!
//! The crate covers the whole pipeline: per-trajectory normalization and
//! keypoint harmonization ([`geo`], [`harmonize`]), a small reverse-mode
//! differentiation kernel ([`nn`]), the Wide&Deep condition encoder
//! ([`condition`]), the flow-matching vector field with Euler sampling and
//! classifier-free guidance ([`model`], [`flow`]), a DDPM/DDIM baseline
//! sharing the same backbone ([`diffusion`]), training and generation
//! ([`train`], [`generate`]), trajectory metrics ([`metrics`]) and a
//! deterministic synthetic world ([`synth`]).

pub mod checkpoint;
pub mod condition;
pub mod config;
pub mod diffusion;
pub mod error;
pub mod flow;
pub mod generate;
pub mod geo;
pub mod harmonize;
pub mod io;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod synth;
pub mod threads;
pub mod train;

pub use error::{Error, Result};
pub use geo::{GeoPoint, NormalizationFrame, NumericFeatures, Point2, TransportMode, Trajectory};
