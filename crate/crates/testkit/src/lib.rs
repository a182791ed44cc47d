//! Test support: seeded random schemas and datasets, plus naive reference
//! implementations of the transforms that the streaming versions are
//! checked against.
//!
//! The oracles deliberately share no code with `epilogue::transforms`:
//! they materialize everything and work by index arithmetic.

pub mod gen;
pub mod http;
pub mod oracle;

use std::path::Path;

use epilogue::model::{DatasetSchema, EpisodeRecord};
use epilogue::store::{DatasetMetadata, StoreError, WriteSummary, Writer, WriterOptions};

/// Writes `episodes` to a new record file.
pub fn write_dataset(
    path: &Path,
    schema: &DatasetSchema,
    metadata: &DatasetMetadata,
    episodes: &[EpisodeRecord],
    options: WriterOptions,
) -> Result<WriteSummary, StoreError> {
    let mut w = Writer::create(path, schema, metadata, options)?;
    for ep in episodes {
        for step in &ep.steps {
            w.append_step(step)?;
        }
        w.end_episode(&ep.metadata)?;
    }
    w.finalize()
}
