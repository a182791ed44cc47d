//! Lazy operators over episode and step streams.
//!
//! A dataset is an iterator of `Result<EpisodeRecord, TransformError>`;
//! step-level operators take any iterator of [`StepRecord`]s belonging to a
//! single episode. Everything is pull-based and single-pass.

mod absorbing;
mod alignment;
mod batch;
mod map;
mod pad;
mod sample;
mod stats;
mod truncate;

use thiserror::Error;

use crate::model::EpisodeRecord;
use crate::store::{Reader, StoreError};

pub use absorbing::{absorbing_episode, absorbing_episode_with, concat_if_terminal, to_absorbing};
pub use alignment::{shift_alignment, shift_steps, ShiftOutcome, ShiftSteps};
pub use batch::{batch_dataset, batch_steps, make_transitions, transitions, BatchSteps, Transition};
pub use map::{apply_episodes, flat_steps, flatten_observation, map_steps};
pub use pad::pad_steps;
pub use sample::{sample_episodes, SampleEpisodes, SplitMix64};
pub use stats::{episode_return, field_statistics, sum_field, FieldStats, StatsAccumulator};
pub use truncate::{truncate_after_condition, TruncateAfter};

#[derive(Debug, Error)]
pub enum TransformError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid episode: {0}")]
    InvalidEpisode(String),
    #[error("observation is not a flat numeric vector: {0}")]
    NonVectorObservation(String),
    #[error("unsupported dtype: {0}")]
    UnsupportedDtype(String),
    #[error("unknown field: {0}")]
    UnknownField(String),
    #[error("at episode {episode}, step {step}: {source}")]
    AtStep {
        episode: u64,
        step: u64,
        source: Box<TransformError>,
    },
    #[error("at episode {episode}: {source}")]
    AtEpisode {
        episode: u64,
        source: Box<TransformError>,
    },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{0}")]
    Custom(String),
}

impl TransformError {
    pub fn code(&self) -> &'static str {
        match self {
            TransformError::InvalidArgument(_) => "INVALID_ARGUMENT",
            TransformError::InvalidEpisode(_) => "INVALID_EPISODE",
            TransformError::NonVectorObservation(_) => "NON_VECTOR_OBSERVATION",
            TransformError::UnsupportedDtype(_) => "UNSUPPORTED_DTYPE",
            TransformError::UnknownField(_) => "UNKNOWN_FIELD",
            TransformError::AtStep { source, .. } | TransformError::AtEpisode { source, .. } => source.code(),
            TransformError::Store(e) => e.code(),
            TransformError::Custom(_) => "CUSTOM",
        }
    }

    /// `(episode, step)` coordinates attached by `map_steps`, if any.
    pub fn coordinates(&self) -> Option<(u64, u64)> {
        match self {
            TransformError::AtStep { episode, step, .. } => Some((*episode, *step)),
            _ => None,
        }
    }
}

pub type Result<T, E = TransformError> = std::result::Result<T, E>;

/// One element of a dataset stream.
pub type EpisodeResult = Result<EpisodeRecord>;

/// All episodes of a record file as a dataset stream.
pub fn episodes(reader: &Reader) -> impl Iterator<Item = EpisodeResult> + '_ {
    reader.iter_episodes().map(|r| r.map_err(TransformError::from))
}

/// Wraps already materialized episodes as a dataset stream.
pub fn from_episodes(episodes: impl IntoIterator<Item = EpisodeRecord>) -> impl Iterator<Item = EpisodeResult> {
    episodes.into_iter().map(Ok)
}
