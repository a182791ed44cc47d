use std::io;
use std::path::{Path, PathBuf};

use epilogue::catalog::CatalogError;
use epilogue::env::EnvError;
use epilogue::model::ModelError;
use epilogue::store::StoreError;
use epilogue::transforms::TransformError;
use epilogue_collect::CollectError;
use thiserror::Error;

use crate::pipeline::Kind;

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_FORMAT: u8 = 2;
pub const EXIT_CORRUPTION: u8 = 3;
pub const EXIT_CONFIGURATION: u8 = 4;
pub const EXIT_PIPELINE_KIND: u8 = 5;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("stage {stage} ({op}) expects {expected} input but receives {got}")]
    KindMismatch {
        stage: usize,
        op: String,
        expected: Kind,
        got: Kind,
    },
    #[error("invalid pipeline: {0}")]
    Pipeline(String),
    #[error("{count} episode(s) fail validation")]
    InvalidEpisodes { count: u64 },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Collect(#[from] CollectError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl CliError {
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "USAGE",
            CliError::KindMismatch { .. } => "PIPELINE_KIND_MISMATCH",
            CliError::Pipeline(_) => "INVALID_PIPELINE",
            CliError::InvalidEpisodes { .. } => "INVALID_EPISODE",
            CliError::Store(e) => e.code(),
            CliError::Transform(e) => e.code(),
            CliError::Env(e) => e.code(),
            CliError::Catalog(e) => e.code(),
            CliError::Model(e) => e.code(),
            CliError::Collect(e) => e.code(),
            CliError::Io { .. } => "IO_FAILURE",
        }
    }

    /// Process exit status for this error.
    pub fn exit_code(&self) -> u8 {
        exit_code_for(self.code())
    }

    pub fn io(path: &Path, source: io::Error) -> CliError {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Maps an error code to the exit status contract: 1 usage, 2 format,
/// 3 corruption, 4 configuration, 5 pipeline kind mismatch.
pub fn exit_code_for(code: &str) -> u8 {
    match code {
        "USAGE" | "EPISODE_OUT_OF_RANGE" | "STEP_OUT_OF_RANGE" => EXIT_USAGE,
        "BAD_MAGIC" | "UNSUPPORTED_VERSION" | "INVALID_SCHEMA" | "INVALID_METADATA" | "INVALID_EPISODE"
        | "FLAG_SEQUENCE_VIOLATION" | "DANGLING_EPISODE" | "SHAPE_DATA_MISMATCH" | "RANK_TOO_LARGE"
        | "UNRESOLVED_VARIABLE_EXTENT" => EXIT_FORMAT,
        "CHUNK_CORRUPT" | "MISSING_FOOTER" | "CHECKSUM_MISMATCH" | "SCHEMA_DIGEST_MISMATCH" => EXIT_CORRUPTION,
        "PIPELINE_KIND_MISMATCH" => EXIT_PIPELINE_KIND,
        _ => EXIT_CONFIGURATION,
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
