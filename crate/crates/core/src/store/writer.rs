use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::codec::{encode_episode_end, encode_step, encode_tree};
use super::format::{encode_chunk, encode_header, Compression, DatasetMetadata, IndexEntry, TRAILER_MAGIC};
use super::{Result, StoreError};
use crate::model::{canonical_fill, DatasetSchema, StepRecord, TensorTree};

pub const DEFAULT_TARGET_CHUNK_BYTES: usize = 262_144;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WriterOptions {
    pub compression: Compression,
    /// A chunk is flushed once its uncompressed records exceed this size.
    pub target_chunk_bytes: usize,
    /// Let [`Writer::finalize`] commit an open episode whose last step
    /// already has `is_last` set.
    pub auto_commit: bool,
}

impl Default for WriterOptions {
    fn default() -> Self {
        WriterOptions {
            compression: Compression::Deflate,
            target_chunk_bytes: DEFAULT_TARGET_CHUNK_BYTES,
            auto_commit: true,
        }
    }
}

impl WriterOptions {
    pub fn uncompressed() -> Self {
        WriterOptions {
            compression: Compression::None,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct WriteSummary {
    pub episodes: u64,
    pub steps: u64,
    pub bytes: u64,
}

/// State of the episode currently being appended.
struct OpenEpisode {
    chunk_offset: u64,
    record_ordinal: u32,
    num_steps: u64,
    last_is_last: bool,
}

/// Single-producer appender for one record file.
pub struct Writer {
    path: PathBuf,
    out: BufWriter<File>,
    schema: DatasetSchema,
    options: WriterOptions,
    /// Bytes written to the file so far; also the offset of the next chunk.
    offset: u64,
    chunk: Vec<u8>,
    chunk_records: u32,
    episode: Option<OpenEpisode>,
    index: Vec<IndexEntry>,
    metadata_blobs: Vec<u8>,
    steps: u64,
    chunks_flushed: u64,
    closed: bool,
}

impl fmt::Debug for Writer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Writer")
            .field("path", &self.path)
            .field("episodes", &self.index.len())
            .field("steps", &self.steps)
            .field("closed", &self.closed)
            .finish()
    }
}

pub fn open_writer(
    path: impl AsRef<Path>,
    schema: &DatasetSchema,
    metadata: &DatasetMetadata,
    options: WriterOptions,
) -> Result<Writer> {
    Writer::create(path, schema, metadata, options)
}

impl Writer {
    pub fn create(
        path: impl AsRef<Path>,
        schema: &DatasetSchema,
        metadata: &DatasetMetadata,
        options: WriterOptions,
    ) -> Result<Writer> {
        schema.check_valid()?;
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new().write(true).create(true).truncate(true).open(&path)?;
        let mut out = BufWriter::with_capacity(1 << 16, file);
        let header = encode_header(schema, metadata);
        out.write_all(&header)?;
        out.flush()?;
        Ok(Writer {
            path,
            out,
            schema: schema.clone(),
            options,
            offset: header.len() as u64,
            chunk: Vec::with_capacity(options.target_chunk_bytes.min(1 << 20) + 1024),
            chunk_records: 0,
            episode: None,
            index: Vec::new(),
            metadata_blobs: Vec::new(),
            steps: 0,
            chunks_flushed: 0,
            closed: false,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn schema(&self) -> &DatasetSchema {
        &self.schema
    }

    pub fn episodes_committed(&self) -> u64 {
        self.index.len() as u64
    }

    pub fn steps_written(&self) -> u64 {
        self.steps
    }

    pub fn chunks_flushed(&self) -> u64 {
        self.chunks_flushed
    }

    /// Whether an episode has steps that are not yet committed.
    pub fn has_open_episode(&self) -> bool {
        self.episode.is_some()
    }

    fn check_open(&self) -> Result<()> {
        if self.closed {
            Err(StoreError::WriterClosed)
        } else {
            Ok(())
        }
    }

    pub fn append_step(&mut self, step: &StepRecord) -> Result<()> {
        self.check_open()?;
        let checks = [
            ("observation", &self.schema.observation, &step.observation),
            ("action", &self.schema.action, &step.action),
            ("reward", &self.schema.reward, &step.reward),
            ("discount", &self.schema.discount, &step.discount),
            ("metadata", &self.schema.step_metadata, &step.metadata),
        ];
        for (name, spec, value) in checks {
            if let Some(m) = spec.mismatch(value) {
                return Err(StoreError::SchemaMismatch(format!("{name}{m}")));
            }
        }
        if step.is_terminal && !step.is_last {
            return Err(StoreError::FlagSequence("is_terminal set without is_last".into()));
        }
        match &self.episode {
            None if !step.is_first => {
                return Err(StoreError::FlagSequence("first step of an episode lacks is_first".into()));
            }
            Some(ep) if ep.last_is_last => {
                if !step.is_first {
                    return Err(StoreError::FlagSequence("step after is_last must start a new episode".into()));
                }
                if !self.options.auto_commit {
                    return Err(StoreError::DanglingEpisode);
                }
                let fill = canonical_fill(&self.schema.episode_metadata);
                self.end_episode(&fill)?;
            }
            Some(_) if step.is_first => {
                return Err(StoreError::FlagSequence("is_first inside an open episode".into()));
            }
            _ => {}
        }
        let episode = self.episode.get_or_insert(OpenEpisode {
            chunk_offset: self.offset,
            record_ordinal: self.chunk_records,
            num_steps: 0,
            last_is_last: false,
        });
        episode.num_steps += 1;
        episode.last_is_last = step.is_last;
        encode_step(&self.schema, step, &mut self.chunk);
        self.chunk_records += 1;
        self.steps += 1;
        self.maybe_flush()
    }

    /// Commits the open episode, whose last step must have `is_last` set.
    pub fn end_episode(&mut self, metadata: &TensorTree) -> Result<()> {
        self.check_open()?;
        match &self.episode {
            Some(ep) if ep.last_is_last => {}
            _ => return Err(StoreError::DanglingEpisode),
        }
        if let Some(m) = self.schema.episode_metadata.mismatch(metadata) {
            return Err(StoreError::SchemaMismatch(format!("episode_metadata{m}")));
        }
        let ep = self.episode.take().expect("checked above");
        let metadata_offset = self.metadata_blobs.len() as u64;
        encode_tree(&self.schema.episode_metadata, metadata, &mut self.metadata_blobs);
        self.index.push(IndexEntry {
            episode_number: self.index.len() as u64,
            chunk_offset: ep.chunk_offset,
            record_ordinal: ep.record_ordinal,
            num_steps: ep.num_steps,
            metadata_offset,
        });
        encode_episode_end(&self.schema, metadata, &mut self.chunk);
        self.chunk_records += 1;
        self.maybe_flush()
    }

    fn maybe_flush(&mut self) -> Result<()> {
        if self.chunk.len() > self.options.target_chunk_bytes {
            self.flush_chunk()?;
        }
        Ok(())
    }

    fn flush_chunk(&mut self) -> Result<()> {
        if self.chunk_records == 0 {
            return Ok(());
        }
        let bytes = encode_chunk(self.options.compression, self.chunk_records, &self.chunk)?;
        self.out.write_all(&bytes)?;
        self.offset += bytes.len() as u64;
        self.chunk.clear();
        self.chunk_records = 0;
        self.chunks_flushed += 1;
        Ok(())
    }

    /// Pushes buffered records to the OS without writing the footer.
    pub fn flush(&mut self) -> Result<()> {
        self.check_open()?;
        self.flush_chunk()?;
        self.out.flush()?;
        Ok(())
    }

    /// Writes the footer and trailer; the writer is unusable afterwards.
    pub fn finalize(&mut self) -> Result<WriteSummary> {
        self.check_open()?;
        if let Some(ep) = &self.episode {
            if !(ep.last_is_last && self.options.auto_commit) {
                return Err(StoreError::DanglingEpisode);
            }
            let fill = canonical_fill(&self.schema.episode_metadata);
            self.end_episode(&fill)?;
        }
        self.flush_chunk()?;
        let footer_offset = self.offset;
        let mut footer = Vec::with_capacity(4 + self.index.len() * 36 + self.metadata_blobs.len() + 12);
        footer.extend_from_slice(&(self.index.len() as u32).to_le_bytes());
        for e in &self.index {
            e.encode(&mut footer);
        }
        footer.extend_from_slice(&self.metadata_blobs);
        footer.extend_from_slice(&footer_offset.to_le_bytes());
        footer.extend_from_slice(&TRAILER_MAGIC);
        self.out.write_all(&footer)?;
        self.out.flush()?;
        self.out.get_ref().sync_all()?;
        self.offset += footer.len() as u64;
        self.closed = true;
        Ok(WriteSummary {
            episodes: self.index.len() as u64,
            steps: self.steps,
            bytes: self.offset,
        })
    }
}
