//! Desk-scale research kit for image immunization against a toy dual-stream
//! image-to-video generator.
//!
//! The crate is organized around the experiment pipeline:
//!
//! - [`toyworld`]: deterministic synthetic scenes, captions, and manifests.
//! - [`i2v`]: the toy generator (causal 3-D video autoencoder, semantic
//!   encoders, DiT-style backbone with additive cross-attention, flow
//!   sampler, training).
//! - [`immunize`]: the joint spatial-temporal + semantic PGD attack and the
//!   baselines.
//! - [`diagnostics`]: per-slice deviation/gradient curves and trajectory
//!   divergence slopes.
//! - [`metrics`]: automated degradation metrics and the pairwise judge
//!   protocol.
//! - [`pipeline`]: configuration, artifact conventions, and the stage
//!   orchestration behind the CLI.

pub mod container;
pub mod diagnostics;
pub mod error;
pub mod i2v;
pub mod immunize;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod tape;
pub mod toyworld;

pub use error::{Error, Result};
