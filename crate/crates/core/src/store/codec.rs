//! Binary encoding of tensor trees and records inside chunk payloads.
//!
//! Leaves are visited in canonical spec order. Fixed-extent numeric leaves
//! are raw little-endian row-major values; a variable first dimension is
//! prefixed with its extent as a LEB128 varint; every `bytes` value is
//! varint-length-prefixed; bools take one byte each.

use crate::model::{
    DType, DatasetSchema, Dim, FeatureSpec, LeafSpec, StepRecord, Tensor, TensorData, TensorTree,
};

pub(crate) const RECORD_STEP: u8 = 0x00;
pub(crate) const RECORD_EPISODE_END: u8 = 0x01;

const FLAG_FIRST: u8 = 1;
const FLAG_LAST: u8 = 1 << 1;
const FLAG_TERMINAL: u8 = 1 << 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct DecodeError(pub String);

type Result<T> = std::result::Result<T, DecodeError>;

pub(crate) fn put_varint(out: &mut Vec<u8>, mut v: u64) {
    while v >= 0x80 {
        out.push((v as u8) | 0x80);
        v >>= 7;
    }
    out.push(v as u8);
}

/// Read cursor over a decoded payload.
pub(crate) struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Cursor { buf, pos: 0 }
    }

    pub fn at(buf: &'a [u8], pos: usize) -> Self {
        Cursor { buf, pos }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn is_at_end(&self) -> bool {
        self.pos >= self.buf.len()
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| DecodeError(format!("need {n} bytes at {}, have {}", self.pos, self.buf.len() - self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn varint(&mut self) -> Result<u64> {
        let mut v = 0u64;
        for shift in (0..64).step_by(7) {
            let b = self.u8()?;
            v |= ((b & 0x7f) as u64) << shift;
            if b & 0x80 == 0 {
                return Ok(v);
            }
        }
        Err(DecodeError("varint overflow".into()))
    }
}

pub(crate) fn encode_tree(spec: &FeatureSpec, tree: &TensorTree, out: &mut Vec<u8>) {
    match (spec, tree) {
        (FeatureSpec::Leaf(l), TensorTree::Leaf(t)) => encode_leaf(l, t, out),
        (FeatureSpec::Node(sm), TensorTree::Node(tm)) => {
            for (k, s) in sm {
                encode_tree(s, &tm[k], out);
            }
        }
        _ => unreachable!("tree validated against spec before encoding"),
    }
}

fn encode_leaf(spec: &LeafSpec, t: &Tensor, out: &mut Vec<u8>) {
    if spec.has_variable_extent() {
        put_varint(out, t.shape()[0] as u64);
    }
    match t.data() {
        TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        TensorData::I32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        TensorData::I64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        TensorData::U8(v) => out.extend_from_slice(v),
        TensorData::Bool(v) => out.extend(v.iter().map(|&b| b as u8)),
        TensorData::Bytes(v) => {
            for s in v {
                put_varint(out, s.len() as u64);
                out.extend_from_slice(s);
            }
        }
    }
}

pub(crate) fn decode_tree(spec: &FeatureSpec, cur: &mut Cursor<'_>) -> Result<TensorTree> {
    match spec {
        FeatureSpec::Leaf(l) => Ok(TensorTree::Leaf(decode_leaf(l, cur)?)),
        FeatureSpec::Node(m) => Ok(TensorTree::Node(
            m.iter()
                .map(|(k, s)| Ok((k.clone(), decode_tree(s, cur)?)))
                .collect::<Result<_>>()?,
        )),
    }
}

fn decode_leaf(spec: &LeafSpec, cur: &mut Cursor<'_>) -> Result<Tensor> {
    let mut shape = Vec::with_capacity(spec.shape.len());
    for d in &spec.shape {
        shape.push(match d {
            Dim::Fixed(n) => *n,
            Dim::Variable => usize::try_from(cur.varint()?).map_err(|_| DecodeError("extent overflow".into()))?,
        });
    }
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| DecodeError("element count overflow".into()))?;
    if let Some(w) = spec.dtype.width() {
        // Reject absurd extents before allocating.
        if count.checked_mul(w).is_none_or(|n| n > cur.buf.len() - cur.pos) {
            return Err(DecodeError(format!("leaf of {count} values exceeds payload")));
        }
    }
    let data = match spec.dtype {
        DType::F32 => TensorData::F32(
            cur.take(count * 4)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
        DType::F64 => TensorData::F64(
            cur.take(count * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
        DType::I32 => TensorData::I32(
            cur.take(count * 4)?
                .chunks_exact(4)
                .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
        DType::I64 => TensorData::I64(
            cur.take(count * 8)?
                .chunks_exact(8)
                .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
        DType::U8 => TensorData::U8(cur.take(count)?.to_vec()),
        DType::Bool => TensorData::Bool(
            cur.take(count)?
                .iter()
                .map(|&b| match b {
                    0 => Ok(false),
                    1 => Ok(true),
                    other => Err(DecodeError(format!("bad bool byte {other}"))),
                })
                .collect::<Result<_>>()?,
        ),
        DType::Bytes => {
            let mut values = Vec::new();
            for _ in 0..count {
                let len = cur.varint()? as usize;
                values.push(cur.take(len)?.to_vec());
            }
            TensorData::Bytes(values)
        }
    };
    Tensor::new(shape, data).map_err(|e| DecodeError(e.to_string()))
}

pub(crate) fn encode_step(schema: &DatasetSchema, step: &StepRecord, out: &mut Vec<u8>) {
    out.push(RECORD_STEP);
    let mut flags = 0;
    if step.is_first {
        flags |= FLAG_FIRST;
    }
    if step.is_last {
        flags |= FLAG_LAST;
    }
    if step.is_terminal {
        flags |= FLAG_TERMINAL;
    }
    out.push(flags);
    encode_tree(&schema.action, &step.action, out);
    encode_tree(&schema.discount, &step.discount, out);
    encode_tree(&schema.observation, &step.observation, out);
    encode_tree(&schema.reward, &step.reward, out);
    encode_tree(&schema.step_metadata, &step.metadata, out);
}

pub(crate) fn encode_episode_end(schema: &DatasetSchema, metadata: &TensorTree, out: &mut Vec<u8>) {
    out.push(RECORD_EPISODE_END);
    encode_tree(&schema.episode_metadata, metadata, out);
}

pub(crate) enum Record {
    Step(StepRecord),
    EpisodeEnd(TensorTree),
}

pub(crate) fn decode_record(schema: &DatasetSchema, cur: &mut Cursor<'_>) -> Result<Record> {
    match cur.u8()? {
        RECORD_STEP => {
            let flags = cur.u8()?;
            if flags & !(FLAG_FIRST | FLAG_LAST | FLAG_TERMINAL) != 0 {
                return Err(DecodeError(format!("unknown flag bits {flags:#04x}")));
            }
            let action = decode_tree(&schema.action, cur)?;
            let discount = decode_tree(&schema.discount, cur)?;
            let observation = decode_tree(&schema.observation, cur)?;
            let reward = decode_tree(&schema.reward, cur)?;
            let metadata = decode_tree(&schema.step_metadata, cur)?;
            Ok(Record::Step(StepRecord {
                observation,
                action,
                reward,
                discount,
                is_first: flags & FLAG_FIRST != 0,
                is_last: flags & FLAG_LAST != 0,
                is_terminal: flags & FLAG_TERMINAL != 0,
                metadata,
            }))
        }
        RECORD_EPISODE_END => Ok(Record::EpisodeEnd(decode_tree(&schema.episode_metadata, cur)?)),
        other => Err(DecodeError(format!("unknown record type {other:#04x}"))),
    }
}

/// Size in bytes of the encoded step, for accounting in tests and tools.
pub fn encoded_step_len(schema: &DatasetSchema, step: &StepRecord) -> usize {
    let mut out = Vec::new();
    encode_step(schema, step, &mut out);
    out.len()
}


#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn varint_roundtrip(v in any::<u64>()) {
            let mut out = Vec::new();
            put_varint(&mut out, v);
            let mut cur = Cursor::new(&out);
            prop_assert_eq!(cur.varint().unwrap(), v);
            prop_assert!(cur.is_at_end());
        }
    }

    #[test]
    fn leaf_layout_is_raw_little_endian() {
        let spec = FeatureSpec::node([
            ("a", FeatureSpec::leaf(DType::I32, &[2])),
            ("b", FeatureSpec::Leaf(LeafSpec::ragged(DType::U8, &[]))),
            ("c", FeatureSpec::scalar(DType::Bytes)),
        ]);
        let tree = TensorTree::node([
            ("a", Tensor::vector(TensorData::I32(vec![1, -1])).into()),
            ("b", Tensor::vector(TensorData::U8(vec![7, 8, 9])).into()),
            ("c", Tensor::scalar_bytes(b"hi".to_vec()).into()),
        ]);
        let mut out = Vec::new();
        encode_tree(&spec, &tree, &mut out);
        assert_eq!(out, [1, 0, 0, 0, 0xff, 0xff, 0xff, 0xff, 3, 7, 8, 9, 2, b'h', b'i']);
        let back = decode_tree(&spec, &mut Cursor::new(&out)).unwrap();
        assert_eq!(back, tree);
    }

    #[test]
    fn truncated_leaf_is_an_error() {
        let spec = FeatureSpec::leaf(DType::F64, &[4]);
        assert!(decode_tree(&spec, &mut Cursor::new(&[0u8; 31])).is_err());
        let ragged = FeatureSpec::Leaf(LeafSpec::ragged(DType::F64, &[]));
        // Extent claims far more data than is present.
        assert!(decode_tree(&ragged, &mut Cursor::new(&[0xff, 0xff, 0xff, 0x7f])).is_err());
    }
}
