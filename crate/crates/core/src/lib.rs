//! Lossless recording, storage and processing of episodic
//! sequential-decision datasets.
//!
//! - [`model`]: tensors, schemas, steps, episodes, validation.
//! - [`store`]: the chunked `.rlds` record file format.
//! - [`env`]: environment interface, recording wrapper, toy environment.
//! - [`transforms`]: streaming operators over episodes and steps.
//! - [`catalog`]: named datasets with manifests, splits and checksums.

pub mod catalog;
pub mod doc;
pub mod env;
pub mod model;
pub mod store;
pub mod transforms;

pub use model::{
    validate_episode, Alignment, DType, DatasetSchema, EpisodeRecord, FeatureSpec, LeafSpec, StepRecord, Tensor,
    TensorData, TensorTree,
};
