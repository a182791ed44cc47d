//! Human data collection: studies, interactive environment sessions driven
//! over a message channel, episode outcomes, tagging, replay and export.
//!
//! - [`session`]: the pure episode state machine.
//! - [`runtime`]: a live session owning its environment and recorder.
//! - [`store`]: studies, recorded episodes and tags on disk, plus export.
//! - [`protocol`]: the v1 message documents.
//! - [`hub`]: transport-independent connection handling.
//! - [`server`]: HTTP routes and the WebSocket endpoint.

pub mod clock;
pub mod frame;
pub mod hub;
pub mod protocol;
pub mod runtime;
pub mod server;
pub mod session;
pub mod store;
pub mod study;

use std::io;
use std::path::{Path, PathBuf};

use epilogue::env::EnvError;
use epilogue::model::ModelError;
use epilogue::store::StoreError;
use epilogue::transforms::TransformError;
use thiserror::Error;

pub use clock::{Clock, FakeClock, SystemClock};
pub use hub::{Connection, Hub};
pub use protocol::{ClientMessage, ServerMessage, PROTOCOL_VERSION};
pub use runtime::SessionRuntime;
pub use session::{Event, EventKind, IllegalEvent, Outcome, Phase};
pub use store::{EpisodeEntry, ExportFilter, ExportOptions, ExportSummary, StudyStore, TagScope, TagValue};
pub use study::{EnvConfig, Study, StudyDraft, StudyMode, StudyState};

#[derive(Debug, Error)]
pub enum CollectError {
    #[error(transparent)]
    IllegalEvent(#[from] IllegalEvent),
    #[error("invalid study: {0}")]
    InvalidStudy(String),
    #[error("study {0} is not active")]
    StudyNotActive(u64),
    #[error("study {0} is active and can only change state")]
    StudyImmutable(u64),
    #[error("unknown study {0}")]
    UnknownStudy(u64),
    #[error("unknown session {0}")]
    UnknownSession(u64),
    #[error("unknown episode {0}")]
    UnknownEpisode(u64),
    #[error("index {index} out of range for {len} items")]
    IndexOutOfRange { index: u64, len: u64 },
    #[error("no episodes match the export filter")]
    NoMatchingEpisodes,
    #[error("invalid tag: {0}")]
    InvalidTag(String),
    #[error("invalid action: {0}")]
    InvalidAction(String),
    #[error("bad message: {0}")]
    BadMessage(String),
    #[error("unsupported protocol version {0}")]
    UnsupportedVersion(u64),
    #[error("no session started on this connection")]
    NoSession,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl CollectError {
    pub fn code(&self) -> &'static str {
        match self {
            CollectError::IllegalEvent(_) => "ILLEGAL_EVENT",
            CollectError::InvalidStudy(_) => "INVALID_STUDY",
            CollectError::StudyNotActive(_) => "STUDY_NOT_ACTIVE",
            CollectError::StudyImmutable(_) => "STUDY_IMMUTABLE",
            CollectError::UnknownStudy(_) => "UNKNOWN_STUDY",
            CollectError::UnknownSession(_) => "UNKNOWN_SESSION",
            CollectError::UnknownEpisode(_) => "UNKNOWN_EPISODE",
            CollectError::IndexOutOfRange { .. } => "INDEX_OUT_OF_RANGE",
            CollectError::NoMatchingEpisodes => "NO_MATCHING_EPISODES",
            CollectError::InvalidTag(_) => "INVALID_TAG",
            CollectError::InvalidAction(_) => "INVALID_ACTION",
            CollectError::BadMessage(_) => "BAD_MESSAGE",
            CollectError::UnsupportedVersion(_) => "UNSUPPORTED_VERSION",
            CollectError::NoSession => "NO_SESSION",
            CollectError::InvalidArgument(_) => "INVALID_ARGUMENT",
            CollectError::Env(e) => e.code(),
            CollectError::Store(e) => e.code(),
            CollectError::Transform(e) => e.code(),
            CollectError::Model(e) => e.code(),
            CollectError::Io { .. } => "IO_FAILURE",
        }
    }

    pub(crate) fn io(path: &Path, source: io::Error) -> CollectError {
        CollectError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type Result<T, E = CollectError> = std::result::Result<T, E>;
