//! The episodic data model: tensors, nested feature specs, dataset schemas,
//! steps, episodes and their validation.

mod json;
mod spec;
mod step;
mod tensor;
mod validate;

use thiserror::Error;

pub use json::{tensor_from_json, tensor_to_json, tree_from_json, tree_to_json};
pub use spec::{canonical_fill, undefined_fill, DatasetSchema, Dim, FeatureSpec, LeafSpec, StepField, MAX_DEPTH};
pub use step::{Alignment, EpisodeRecord, StepRecord};
pub use tensor::{DType, Tensor, TensorData, TensorTree, MAX_RANK};
pub use validate::{validate_episode, Rule, ValidationReport, Violation};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("tensor shape {shape:?} does not match {values} values")]
    ShapeDataMismatch { shape: Vec<usize>, values: usize },
    #[error("rank {0} exceeds the maximum of 8")]
    RankTooLarge(usize),
    #[error("invalid feature spec: {0}")]
    InvalidSpec(String),
    #[error("variable extent must be resolved before filling")]
    UnresolvedVariableExtent,
}

impl ModelError {
    pub fn code(&self) -> &'static str {
        match self {
            ModelError::ShapeDataMismatch { .. } => "SHAPE_DATA_MISMATCH",
            ModelError::RankTooLarge(_) => "RANK_TOO_LARGE",
            ModelError::InvalidSpec(_) => "INVALID_SCHEMA",
            ModelError::UnresolvedVariableExtent => "UNRESOLVED_VARIABLE_EXTENT",
        }
    }
}
