use std::fs::File;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use super::codec::{decode_record, decode_tree, encode_tree, Cursor, Record};
use super::format::{
    read_chunk, read_exact_at, read_header, read_trailer, ChunkFault, DatasetMetadata, IndexEntry, INDEX_ENTRY_LEN,
    TRAILER_LEN,
};
use super::{Result, StoreError};
use crate::model::{Alignment, DatasetSchema, EpisodeRecord, StepRecord, TensorTree};

/// Read-only view of a record file. Shareable across threads; every read
/// is positional so independent iterators do not interfere.
#[derive(Debug)]
pub struct Reader {
    file: File,
    path: PathBuf,
    schema: DatasetSchema,
    schema_bytes: Vec<u8>,
    metadata: DatasetMetadata,
    data_start: u64,
    /// End of the chunk stream (footer offset, or recovery point).
    data_end: u64,
    index: Vec<IndexEntry>,
    episode_metadata: Vec<TensorTree>,
    chunks_read: AtomicU64,
}

/// Outcome of [`recover`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecoveryReport {
    pub episodes_recovered: u64,
    /// Trailing bytes that did not form a valid chunk.
    pub bytes_discarded: u64,
    /// Steps of a trailing episode that never reached its end marker.
    pub steps_discarded: u64,
    /// Whether a readable footer was present.
    pub footer_intact: bool,
}

impl Reader {
    pub fn open(path: impl AsRef<Path>) -> Result<Reader> {
        let path = path.as_ref().to_path_buf();
        let file = File::open(&path)?;
        let file_len = file.metadata()?.len();
        let header = read_header(&file, file_len)?;
        let footer_offset = read_trailer(&file, header.data_start, file_len)?
            .ok_or_else(|| StoreError::MissingFooter("no trailer".into()))?;
        let (index, episode_metadata) =
            parse_footer(&file, &header.schema, header.data_start, footer_offset, file_len)?;
        Ok(Reader {
            file,
            path,
            schema: header.schema,
            schema_bytes: header.schema_bytes,
            metadata: header.metadata,
            data_start: header.data_start,
            data_end: footer_offset,
            index,
            episode_metadata,
            chunks_read: AtomicU64::new(0),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn schema(&self) -> &DatasetSchema {
        &self.schema
    }

    /// The schema document exactly as embedded in the header.
    pub fn schema_bytes(&self) -> &[u8] {
        &self.schema_bytes
    }

    pub fn dataset_metadata(&self) -> &DatasetMetadata {
        &self.metadata
    }

    pub fn alignment(&self) -> Alignment {
        self.metadata.alignment()
    }

    pub fn episode_count(&self) -> u64 {
        self.index.len() as u64
    }

    pub fn index(&self) -> &[IndexEntry] {
        &self.index
    }

    pub fn total_steps(&self) -> u64 {
        self.index.iter().map(|e| e.num_steps).sum()
    }

    pub fn episode_len(&self, i: u64) -> Result<u64> {
        Ok(self.entry(i)?.num_steps)
    }

    pub fn episode_metadata(&self, i: u64) -> Result<&TensorTree> {
        self.entry(i)?;
        Ok(&self.episode_metadata[i as usize])
    }

    /// Number of chunks decoded so far through this reader.
    pub fn chunks_read(&self) -> u64 {
        self.chunks_read.load(Ordering::Relaxed)
    }

    fn entry(&self, i: u64) -> Result<&IndexEntry> {
        self.index.get(i as usize).ok_or(StoreError::EpisodeOutOfRange {
            index: i,
            count: self.episode_count(),
        })
    }

    fn records_from(&self, chunk_offset: u64) -> RecordStream<'_> {
        RecordStream {
            reader: self,
            next_chunk: chunk_offset,
            payload: Vec::new(),
            pos: 0,
            remaining: 0,
            chunk_offset,
        }
    }

    /// Positions a record stream at the first step of episode `i`.
    fn episode_records(&self, i: u64) -> Result<(RecordStream<'_>, IndexEntry)> {
        let entry = *self.entry(i)?;
        let mut records = self.records_from(entry.chunk_offset);
        for _ in 0..entry.record_ordinal {
            records.next_record()?.ok_or_else(|| StoreError::ChunkCorrupt {
                offset: entry.chunk_offset,
                reason: "index points past the end of the chunk".into(),
            })?;
        }
        Ok((records, entry))
    }

    pub fn get_episode(&self, i: u64) -> Result<EpisodeRecord> {
        let (mut records, entry) = self.episode_records(i)?;
        let mut steps = Vec::with_capacity(entry.num_steps as usize);
        for _ in 0..entry.num_steps {
            steps.push(records.next_step()?);
        }
        Ok(EpisodeRecord::new(steps, self.episode_metadata[i as usize].clone()))
    }

    pub fn get_step(&self, i: u64, j: u64) -> Result<StepRecord> {
        let (mut records, entry) = self.episode_records(i)?;
        if j >= entry.num_steps {
            return Err(StoreError::StepOutOfRange {
                episode: i,
                step: j,
                len: entry.num_steps,
            });
        }
        for _ in 0..j {
            records.next_step()?;
        }
        records.next_step()
    }

    /// Sequential scan over all indexed episodes.
    pub fn iter_episodes(&self) -> EpisodeIter<'_> {
        EpisodeIter {
            records: self.records_from(self.data_start),
            remaining: self.episode_count(),
            next_index: 0,
            failed: false,
        }
    }

    /// Sequential scan over the steps of all indexed episodes.
    pub fn iter_steps(&self) -> StepIter<'_> {
        StepIter {
            records: self.records_from(self.data_start),
            remaining: self.total_steps(),
            failed: false,
        }
    }
}

fn parse_footer(
    file: &File,
    schema: &DatasetSchema,
    data_start: u64,
    footer_offset: u64,
    file_len: u64,
) -> Result<(Vec<IndexEntry>, Vec<TensorTree>)> {
    let len = (file_len - TRAILER_LEN - footer_offset) as usize;
    let mut footer = vec![0u8; len];
    read_exact_at(file, &mut footer, footer_offset)?;
    let bad = |why: String| StoreError::MissingFooter(why);
    let count = u32::from_le_bytes(footer[0..4].try_into().unwrap()) as usize;
    let entries_end = count
        .checked_mul(INDEX_ENTRY_LEN)
        .and_then(|n| n.checked_add(4))
        .filter(|&n| n <= len)
        .ok_or_else(|| bad(format!("{count} index entries do not fit in footer")))?;
    let blobs = &footer[entries_end..];
    let mut index = Vec::with_capacity(count);
    let mut metadata = Vec::with_capacity(count);
    for i in 0..count {
        let start = 4 + i * INDEX_ENTRY_LEN;
        let e = IndexEntry::decode(&footer[start..start + INDEX_ENTRY_LEN]);
        if e.episode_number != i as u64 || e.num_steps == 0 {
            return Err(bad(format!("malformed index entry {i}")));
        }
        if e.chunk_offset < data_start || e.chunk_offset >= footer_offset {
            return Err(bad(format!("entry {i} points outside the chunk stream")));
        }
        if e.metadata_offset as usize > blobs.len() {
            return Err(bad(format!("entry {i} metadata offset out of range")));
        }
        let md = decode_tree(
            &schema.episode_metadata,
            &mut Cursor::at(blobs, e.metadata_offset as usize),
        )
        .map_err(|e| bad(format!("episode {i} metadata: {}", e.0)))?;
        index.push(e);
        metadata.push(md);
    }
    Ok((index, metadata))
}

/// Record-at-a-time decoder walking consecutive chunks.
struct RecordStream<'r> {
    reader: &'r Reader,
    next_chunk: u64,
    payload: Vec<u8>,
    pos: usize,
    remaining: u32,
    chunk_offset: u64,
}

impl RecordStream<'_> {
    fn load_next_chunk(&mut self) -> Result<bool> {
        if self.next_chunk >= self.reader.data_end {
            return Ok(false);
        }
        let offset = self.next_chunk;
        let chunk = read_chunk(&self.reader.file, offset, self.reader.data_end)
            .map_err(|f| f.into_store_error(offset))?;
        self.reader.chunks_read.fetch_add(1, Ordering::Relaxed);
        self.chunk_offset = offset;
        self.next_chunk = chunk.end;
        self.payload = chunk.payload;
        self.pos = 0;
        self.remaining = chunk.record_count;
        Ok(true)
    }

    fn next_record(&mut self) -> Result<Option<Record>> {
        while self.remaining == 0 {
            if self.pos != self.payload.len() {
                return Err(self.corrupt("trailing bytes after last record"));
            }
            if !self.load_next_chunk()? {
                return Ok(None);
            }
        }
        let mut cur = Cursor::at(&self.payload, self.pos);
        let rec = decode_record(&self.reader.schema, &mut cur).map_err(|e| self.corrupt(&e.0))?;
        self.pos = cur.position();
        self.remaining -= 1;
        Ok(Some(rec))
    }

    fn next_step(&mut self) -> Result<StepRecord> {
        match self.next_record()? {
            Some(Record::Step(s)) => Ok(s),
            Some(Record::EpisodeEnd(_)) => Err(self.corrupt("episode ended before its indexed step count")),
            None => Err(self.corrupt("chunk stream ended inside an episode")),
        }
    }

    fn corrupt(&self, reason: &str) -> StoreError {
        StoreError::ChunkCorrupt {
            offset: self.chunk_offset,
            reason: reason.to_string(),
        }
    }
}

pub struct EpisodeIter<'r> {
    records: RecordStream<'r>,
    remaining: u64,
    next_index: u64,
    failed: bool,
}

impl EpisodeIter<'_> {
    fn read_episode(&mut self) -> Result<EpisodeRecord> {
        let mut steps = Vec::new();
        loop {
            match self.records.next_record()? {
                Some(Record::Step(s)) => steps.push(s),
                Some(Record::EpisodeEnd(metadata)) => return Ok(EpisodeRecord::new(steps, metadata)),
                None => return Err(self.records.corrupt("chunk stream ended inside an episode")),
            }
        }
    }
}

impl Iterator for EpisodeIter<'_> {
    type Item = Result<EpisodeRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed || self.remaining == 0 {
            return None;
        }
        let out = self.read_episode();
        match &out {
            Ok(ep) => {
                let expected = self.records.reader.index[self.next_index as usize].num_steps;
                if ep.steps.len() as u64 != expected {
                    self.failed = true;
                    return Some(Err(self.records.corrupt("episode length disagrees with index")));
                }
                self.remaining -= 1;
                self.next_index += 1;
            }
            Err(_) => self.failed = true,
        }
        Some(out)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        if self.failed {
            (0, Some(0))
        } else {
            (0, Some(self.remaining as usize))
        }
    }
}

pub struct StepIter<'r> {
    records: RecordStream<'r>,
    remaining: u64,
    failed: bool,
}

impl Iterator for StepIter<'_> {
    type Item = Result<StepRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed || self.remaining == 0 {
            return None;
        }
        loop {
            match self.records.next_record() {
                Ok(Some(Record::Step(s))) => {
                    self.remaining -= 1;
                    return Some(Ok(s));
                }
                Ok(Some(Record::EpisodeEnd(_))) => continue,
                Ok(None) => {
                    self.failed = true;
                    return Some(Err(self.records.corrupt("chunk stream ended early")));
                }
                Err(e) => {
                    self.failed = true;
                    return Some(Err(e));
                }
            }
        }
    }
}

/// Rebuilds the episode index by scanning chunks, stopping at the first
/// damaged or incomplete chunk and dropping any unterminated trailing
/// episode.
pub fn recover(path: impl AsRef<Path>) -> Result<(Reader, RecoveryReport)> {
    let path = path.as_ref().to_path_buf();
    let file = File::open(&path)?;
    let file_len = file.metadata()?.len();
    let header = read_header(&file, file_len)?;
    let schema = header.schema;

    let footer = match read_trailer(&file, header.data_start, file_len)? {
        Some(fo) => parse_footer(&file, &schema, header.data_start, fo, file_len)
            .ok()
            .map(|_| fo),
        None => None,
    };
    let limit = footer.unwrap_or(file_len);

    let mut index = Vec::new();
    let mut episode_metadata = Vec::new();
    let mut blob_len = 0u64;
    // (chunk_offset, ordinal, steps) of the episode being scanned.
    let mut open: Option<(u64, u32, u64)> = None;
    let mut offset = header.data_start;
    let mut good_end = offset;

    'chunks: while offset < limit {
        let chunk = match read_chunk(&file, offset, limit) {
            Ok(c) => c,
            Err(ChunkFault::Io(e)) => return Err(e.into()),
            Err(_) => break,
        };
        // Decode the whole chunk before accepting any of it.
        let mut cur = Cursor::new(&chunk.payload);
        let mut records = Vec::with_capacity(chunk.record_count as usize);
        for _ in 0..chunk.record_count {
            match decode_record(&schema, &mut cur) {
                Ok(r) => records.push(r),
                Err(_) => break 'chunks,
            }
        }
        if !cur.is_at_end() {
            break;
        }
        for (ordinal, rec) in records.into_iter().enumerate() {
            match rec {
                Record::Step(s) => {
                    if s.is_first || open.is_none() {
                        open = Some((offset, ordinal as u32, 0));
                    }
                    if let Some(o) = open.as_mut() {
                        o.2 += 1;
                    }
                }
                Record::EpisodeEnd(md) => {
                    if let Some((chunk_offset, record_ordinal, num_steps)) = open.take() {
                        let mut blob = Vec::new();
                        encode_tree(&schema.episode_metadata, &md, &mut blob);
                        index.push(IndexEntry {
                            episode_number: index.len() as u64,
                            chunk_offset,
                            record_ordinal,
                            num_steps,
                            metadata_offset: blob_len,
                        });
                        blob_len += blob.len() as u64;
                        episode_metadata.push(md);
                    }
                }
            }
        }
        offset = chunk.end;
        good_end = chunk.end;
    }

    let report = RecoveryReport {
        episodes_recovered: index.len() as u64,
        bytes_discarded: limit - good_end,
        steps_discarded: open.map_or(0, |o| o.2),
        footer_intact: footer.is_some(),
    };
    let reader = Reader {
        file,
        path,
        schema,
        schema_bytes: header.schema_bytes,
        metadata: header.metadata,
        data_start: header.data_start,
        data_end: good_end,
        index,
        episode_metadata,
        chunks_read: AtomicU64::new(0),
    };
    Ok((reader, report))
}
