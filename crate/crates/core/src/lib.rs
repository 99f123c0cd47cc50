//! Core-set selection for identity-grouped embedding datasets.
//!
//! A dataset is a set of identities, each holding unit-normalized feature
//! vectors produced by an external embedding model. This crate selects a
//! subset of faces per identity (a core set) while preserving the feature
//! spread within each identity. The main strategy, Face-NMS, greedily keeps
//! the remaining face least similar to the identity's cluster center and
//! suppresses every face whose cosine similarity to it reaches a threshold.
//! Baseline samplers, sparsity metrics, threshold calibration, a synthetic
//! data generator, and a nearest-class-mean evaluation harness round out
//! the toolkit.
//!
//! All randomized operations derive per-identity ChaCha8 streams from a
//! single master seed, so results are reproducible and independent of the
//! parallel schedule.

pub mod error;
pub mod eval;
pub mod fnv;
pub mod metrics;
pub mod rng;
pub mod samplers;
pub mod store;
pub mod synth;
pub mod vecmath;

pub use error::{Error, Result};
pub use store::{Dataset, Format, IdentityGroup, SelectionManifest};
pub use vecmath::{ClusterCenter, FeatureVector};

/// Version string stamped into JSON outputs for provenance.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
