//! The `.rlds` record file: a header carrying the schema, a stream of
//! CRC-protected (optionally deflated) chunks of step and episode-end
//! records, and a footer indexing every episode.
//!
//! ```text
//! "RLDS" | u32 version | u32 schema_len | schema | u32 dsmeta_len | dsmeta
//! chunk*
//! u32 entry_count | entry* | episode metadata blobs
//! u64 footer_offset | "SDLR"
//!
//! chunk = u8 compression | u32 record_count | u32 uncompressed_len
//!       | u32 payload_len | u32 crc32 | payload
//! entry = u64 episode | u64 chunk_offset | u32 record_ordinal
//!       | u64 num_steps | u64 metadata_offset
//! ```
//!
//! All integers are little-endian. A file whose footer is missing or
//! damaged can be rebuilt from the chunk stream with [`recover`].

pub(crate) mod codec;
mod format;
mod reader;
mod writer;

use std::io;

use thiserror::Error;

use crate::model::ModelError;

pub use codec::encoded_step_len;
pub use format::{Compression, DatasetMetadata, IndexEntry, FILE_EXTENSION, MAGIC, TRAILER_MAGIC, VERSION};
pub use reader::{recover, EpisodeIter, Reader, RecoveryReport, StepIter};
pub use writer::{open_writer, WriteSummary, Writer, WriterOptions, DEFAULT_TARGET_CHUNK_BYTES};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o failure: {0}")]
    Io(#[from] io::Error),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("invalid dataset metadata: {0}")]
    InvalidMetadata(String),
    #[error("record does not match schema: {0}")]
    SchemaMismatch(String),
    #[error("flag sequence violation: {0}")]
    FlagSequence(String),
    #[error("episode has no closing is_last step")]
    DanglingEpisode,
    #[error("writer already finalized")]
    WriterClosed,
    #[error("not a record file (bad magic)")]
    BadMagic,
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("corrupt chunk at offset {offset}: {reason}")]
    ChunkCorrupt { offset: u64, reason: String },
    #[error("footer missing or unreadable: {0}")]
    MissingFooter(String),
    #[error("episode {index} out of range (file holds {count})")]
    EpisodeOutOfRange { index: u64, count: u64 },
    #[error("step {step} out of range for episode {episode} with {len} steps")]
    StepOutOfRange { episode: u64, step: u64, len: u64 },
}

impl StoreError {
    pub fn code(&self) -> &'static str {
        match self {
            StoreError::Io(_) => "IO_FAILURE",
            StoreError::InvalidSchema(_) => "INVALID_SCHEMA",
            StoreError::InvalidMetadata(_) => "INVALID_METADATA",
            StoreError::SchemaMismatch(_) => "SCHEMA_MISMATCH",
            StoreError::FlagSequence(_) => "FLAG_SEQUENCE_VIOLATION",
            StoreError::DanglingEpisode => "DANGLING_EPISODE",
            StoreError::WriterClosed => "WRITER_CLOSED",
            StoreError::BadMagic => "BAD_MAGIC",
            StoreError::UnsupportedVersion(_) => "UNSUPPORTED_VERSION",
            StoreError::ChunkCorrupt { .. } => "CHUNK_CORRUPT",
            StoreError::MissingFooter(_) => "MISSING_FOOTER",
            StoreError::EpisodeOutOfRange { .. } => "EPISODE_OUT_OF_RANGE",
            StoreError::StepOutOfRange { .. } => "STEP_OUT_OF_RANGE",
        }
    }

    /// True for errors that indicate damaged file contents.
    pub fn is_corruption(&self) -> bool {
        matches!(self, StoreError::ChunkCorrupt { .. } | StoreError::MissingFooter(_))
    }
}

impl From<ModelError> for StoreError {
    fn from(e: ModelError) -> Self {
        StoreError::InvalidSchema(e.to_string())
    }
}

pub type Result<T, E = StoreError> = std::result::Result<T, E>;
