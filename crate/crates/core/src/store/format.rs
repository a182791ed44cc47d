use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, Read, Write};

use flate2::read::DeflateDecoder;
use flate2::write::DeflateEncoder;
use serde_json::Value;

use super::{Result, StoreError};
use crate::model::{Alignment, DatasetSchema};

pub const MAGIC: [u8; 4] = *b"RLDS";
pub const TRAILER_MAGIC: [u8; 4] = *b"SDLR";
pub const VERSION: u32 = 1;
pub const FILE_EXTENSION: &str = "rlds";

pub(crate) const CHUNK_HEADER_LEN: u64 = 17;
pub(crate) const INDEX_ENTRY_LEN: usize = 36;
pub(crate) const TRAILER_LEN: u64 = 12;

const ALIGNMENT_KEY: &str = "alignment";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Compression {
    None,
    #[default]
    Deflate,
}

impl Compression {
    pub fn id(self) -> u8 {
        match self {
            Compression::None => 0,
            Compression::Deflate => 1,
        }
    }

    pub fn from_id(id: u8) -> Option<Compression> {
        match id {
            0 => Some(Compression::None),
            1 => Some(Compression::Deflate),
            _ => None,
        }
    }
}

/// Dataset-level document: string keys to scalar values.
///
/// The `alignment` key is reserved and records the step alignment of the
/// file (`sar` when absent).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetMetadata {
    entries: BTreeMap<String, Value>,
}

impl DatasetMetadata {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: impl Into<String>, value: impl Into<Value>) -> Result<()> {
        let key = key.into();
        let value = value.into();
        if matches!(value, Value::Array(_) | Value::Object(_)) {
            return Err(StoreError::InvalidMetadata(format!("{key}: value must be a scalar")));
        }
        if key == ALIGNMENT_KEY && value.as_str().and_then(|s| s.parse::<Alignment>().ok()).is_none() {
            return Err(StoreError::InvalidMetadata(format!("{key}: expected \"sar\" or \"rsa\"")));
        }
        self.entries.insert(key, value);
        Ok(())
    }

    pub fn with(mut self, key: impl Into<String>, value: impl Into<Value>) -> Result<Self> {
        self.insert(key, value)?;
        Ok(self)
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.entries.get(key)
    }

    pub fn entries(&self) -> &BTreeMap<String, Value> {
        &self.entries
    }

    pub fn alignment(&self) -> Alignment {
        self.entries
            .get(ALIGNMENT_KEY)
            .and_then(Value::as_str)
            .and_then(|s| s.parse().ok())
            .unwrap_or_default()
    }

    pub fn set_alignment(&mut self, alignment: Alignment) {
        self.entries.insert(ALIGNMENT_KEY.into(), Value::from(alignment.name()));
    }

    pub fn to_document(&self) -> Value {
        Value::Object(self.entries.iter().map(|(k, v)| (k.clone(), v.clone())).collect())
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        crate::doc::canonical_bytes(&self.to_document())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let doc: Value = serde_json::from_slice(bytes).map_err(|e| StoreError::InvalidMetadata(e.to_string()))?;
        let obj = doc
            .as_object()
            .ok_or_else(|| StoreError::InvalidMetadata("dataset metadata must be an object".into()))?;
        let mut md = DatasetMetadata::new();
        for (k, v) in obj {
            md.insert(k.clone(), v.clone())?;
        }
        Ok(md)
    }
}

/// Footer entry locating one episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct IndexEntry {
    pub episode_number: u64,
    /// File offset of the chunk holding the episode's first step.
    pub chunk_offset: u64,
    /// Ordinal of the first step among that chunk's records.
    pub record_ordinal: u32,
    pub num_steps: u64,
    /// Offset of the episode's metadata within the footer blob region.
    pub metadata_offset: u64,
}

impl IndexEntry {
    pub(crate) fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.episode_number.to_le_bytes());
        out.extend_from_slice(&self.chunk_offset.to_le_bytes());
        out.extend_from_slice(&self.record_ordinal.to_le_bytes());
        out.extend_from_slice(&self.num_steps.to_le_bytes());
        out.extend_from_slice(&self.metadata_offset.to_le_bytes());
    }

    pub(crate) fn decode(b: &[u8]) -> IndexEntry {
        let u64_at = |i: usize| u64::from_le_bytes(b[i..i + 8].try_into().unwrap());
        IndexEntry {
            episode_number: u64_at(0),
            chunk_offset: u64_at(8),
            record_ordinal: u32::from_le_bytes(b[16..20].try_into().unwrap()),
            num_steps: u64_at(20),
            metadata_offset: u64_at(28),
        }
    }
}

pub(crate) fn encode_header(schema: &DatasetSchema, metadata: &DatasetMetadata) -> Vec<u8> {
    let schema_bytes = schema.canonical_bytes();
    let md_bytes = metadata.canonical_bytes();
    let mut out = Vec::with_capacity(16 + schema_bytes.len() + md_bytes.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(schema_bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(&schema_bytes);
    out.extend_from_slice(&(md_bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(&md_bytes);
    out
}

pub(crate) struct Header {
    pub schema: DatasetSchema,
    pub schema_bytes: Vec<u8>,
    pub metadata: DatasetMetadata,
    /// Offset of the first chunk.
    pub data_start: u64,
}

pub(crate) fn read_header(file: &File, file_len: u64) -> Result<Header> {
    let mut fixed = [0u8; 12];
    if file_len < 12 {
        return Err(StoreError::BadMagic);
    }
    read_exact_at(file, &mut fixed, 0)?;
    if fixed[0..4] != MAGIC {
        return Err(StoreError::BadMagic);
    }
    let version = u32::from_le_bytes(fixed[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(StoreError::UnsupportedVersion(version));
    }
    let schema_len = u32::from_le_bytes(fixed[8..12].try_into().unwrap()) as u64;
    if 12 + schema_len + 4 > file_len {
        return Err(StoreError::InvalidSchema("header truncated".into()));
    }
    let mut schema_bytes = vec![0u8; schema_len as usize];
    read_exact_at(file, &mut schema_bytes, 12)?;
    let schema = DatasetSchema::from_canonical_bytes(&schema_bytes)?;
    let mut len4 = [0u8; 4];
    read_exact_at(file, &mut len4, 12 + schema_len)?;
    let md_len = u32::from_le_bytes(len4) as u64;
    let md_start = 16 + schema_len;
    if md_start + md_len > file_len {
        return Err(StoreError::InvalidMetadata("header truncated".into()));
    }
    let mut md_bytes = vec![0u8; md_len as usize];
    read_exact_at(file, &mut md_bytes, md_start)?;
    let metadata = DatasetMetadata::from_bytes(&md_bytes)?;
    Ok(Header {
        schema,
        schema_bytes,
        metadata,
        data_start: md_start + md_len,
    })
}

/// Serialized chunk (header plus payload) for `records`.
pub(crate) fn encode_chunk(compression: Compression, record_count: u32, raw: &[u8]) -> io::Result<Vec<u8>> {
    let payload = match compression {
        Compression::None => raw.to_vec(),
        Compression::Deflate => {
            let mut enc = DeflateEncoder::new(Vec::with_capacity(raw.len() / 2), flate2::Compression::default());
            enc.write_all(raw)?;
            enc.finish()?
        }
    };
    let crc = crc32fast::hash(&payload);
    let mut out = Vec::with_capacity(CHUNK_HEADER_LEN as usize + payload.len());
    out.push(compression.id());
    out.extend_from_slice(&record_count.to_le_bytes());
    out.extend_from_slice(&(raw.len() as u32).to_le_bytes());
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&crc.to_le_bytes());
    out.extend_from_slice(&payload);
    Ok(out)
}

pub(crate) struct RawChunk {
    pub record_count: u32,
    pub payload: Vec<u8>,
    /// Offset just past this chunk.
    pub end: u64,
}

/// Why a chunk could not be read.
pub(crate) enum ChunkFault {
    /// Fewer bytes remain before `limit` than the chunk needs.
    Truncated,
    Corrupt(String),
    Io(io::Error),
}

impl ChunkFault {
    pub fn into_store_error(self, offset: u64) -> StoreError {
        match self {
            ChunkFault::Truncated => StoreError::ChunkCorrupt {
                offset,
                reason: "chunk extends past end of data".into(),
            },
            ChunkFault::Corrupt(reason) => StoreError::ChunkCorrupt { offset, reason },
            ChunkFault::Io(e) => StoreError::Io(e),
        }
    }
}

/// Reads, CRC-checks and decompresses the chunk at `offset`, which must end
/// at or before `limit`.
pub(crate) fn read_chunk(file: &File, offset: u64, limit: u64) -> std::result::Result<RawChunk, ChunkFault> {
    if offset + CHUNK_HEADER_LEN > limit {
        return Err(ChunkFault::Truncated);
    }
    let mut h = [0u8; CHUNK_HEADER_LEN as usize];
    read_exact_at(file, &mut h, offset).map_err(ChunkFault::Io)?;
    let compression =
        Compression::from_id(h[0]).ok_or_else(|| ChunkFault::Corrupt(format!("unknown compression id {}", h[0])))?;
    let record_count = u32::from_le_bytes(h[1..5].try_into().unwrap());
    let uncompressed_len = u32::from_le_bytes(h[5..9].try_into().unwrap());
    let payload_len = u32::from_le_bytes(h[9..13].try_into().unwrap()) as u64;
    let crc = u32::from_le_bytes(h[13..17].try_into().unwrap());
    let end = offset + CHUNK_HEADER_LEN + payload_len;
    if end > limit {
        return Err(ChunkFault::Truncated);
    }
    let mut stored = vec![0u8; payload_len as usize];
    read_exact_at(file, &mut stored, offset + CHUNK_HEADER_LEN).map_err(ChunkFault::Io)?;
    if crc32fast::hash(&stored) != crc {
        return Err(ChunkFault::Corrupt("crc32 mismatch".into()));
    }
    if record_count == 0 {
        return Err(ChunkFault::Corrupt("empty chunk".into()));
    }
    let payload = match compression {
        Compression::None => stored,
        Compression::Deflate => {
            let mut out = Vec::with_capacity(uncompressed_len as usize);
            DeflateDecoder::new(&stored[..])
                .take(uncompressed_len as u64 + 1)
                .read_to_end(&mut out)
                .map_err(|e| ChunkFault::Corrupt(format!("inflate failed: {e}")))?;
            out
        }
    };
    if payload.len() != uncompressed_len as usize {
        return Err(ChunkFault::Corrupt(format!(
            "payload is {} bytes, header says {uncompressed_len}",
            payload.len()
        )));
    }
    Ok(RawChunk {
        record_count,
        payload,
        end,
    })
}

/// Reads the trailer; `Some(footer_offset)` when it is present and sane.
pub(crate) fn read_trailer(file: &File, data_start: u64, file_len: u64) -> io::Result<Option<u64>> {
    if file_len < data_start + TRAILER_LEN + 4 {
        return Ok(None);
    }
    let mut t = [0u8; TRAILER_LEN as usize];
    read_exact_at(file, &mut t, file_len - TRAILER_LEN)?;
    if t[8..12] != TRAILER_MAGIC {
        return Ok(None);
    }
    let footer_offset = u64::from_le_bytes(t[0..8].try_into().unwrap());
    if footer_offset < data_start || footer_offset + 4 > file_len - TRAILER_LEN {
        return Ok(None);
    }
    Ok(Some(footer_offset))
}

#[cfg(unix)]
pub(crate) fn read_exact_at(file: &File, buf: &mut [u8], offset: u64) -> io::Result<()> {
    use std::os::unix::fs::FileExt;
    file.read_exact_at(buf, offset)
}

#[cfg(windows)]
pub(crate) fn read_exact_at(file: &File, mut buf: &mut [u8], mut offset: u64) -> io::Result<()> {
    use std::os::windows::fs::FileExt;
    while !buf.is_empty() {
        match file.seek_read(buf, offset)? {
            0 => return Err(io::ErrorKind::UnexpectedEof.into()),
            n => {
                buf = &mut buf[n..];
                offset += n as u64;
            }
        }
    }
    Ok(())
}
