use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::ModelError;

pub const MAX_RANK: usize = 8;

/// Element type of a tensor leaf.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
    I32,
    I64,
    U8,
    Bool,
    Bytes,
}

impl DType {
    pub fn name(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
            DType::I32 => "i32",
            DType::I64 => "i64",
            DType::U8 => "u8",
            DType::Bool => "bool",
            DType::Bytes => "bytes",
        }
    }

    pub fn parse(name: &str) -> Option<DType> {
        Some(match name {
            "f32" => DType::F32,
            "f64" => DType::F64,
            "i32" => DType::I32,
            "i64" => DType::I64,
            "u8" => DType::U8,
            "bool" => DType::Bool,
            "bytes" => DType::Bytes,
            _ => return None,
        })
    }

    /// Width in bytes of one fixed-size element, `None` for `bytes`.
    pub fn width(self) -> Option<usize> {
        match self {
            DType::F32 | DType::I32 => Some(4),
            DType::F64 | DType::I64 => Some(8),
            DType::U8 | DType::Bool => Some(1),
            DType::Bytes => None,
        }
    }

    pub fn is_numeric(self) -> bool {
        self != DType::Bytes
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Flat row-major storage for a tensor.
///
/// Equality is bitwise for floating point values: two tensors holding the
/// same NaN payload compare equal, `0.0` and `-0.0` do not.
#[derive(Debug, Clone)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    I32(Vec<i32>),
    I64(Vec<i64>),
    U8(Vec<u8>),
    Bool(Vec<bool>),
    Bytes(Vec<Vec<u8>>),
}

impl TensorData {
    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
            TensorData::I32(_) => DType::I32,
            TensorData::I64(_) => DType::I64,
            TensorData::U8(_) => DType::U8,
            TensorData::Bool(_) => DType::Bool,
            TensorData::Bytes(_) => DType::Bytes,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::I32(v) => v.len(),
            TensorData::I64(v) => v.len(),
            TensorData::U8(v) => v.len(),
            TensorData::Bool(v) => v.len(),
            TensorData::Bytes(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `count` zero values (false, empty byte string) of the given dtype.
    pub fn zeros(dtype: DType, count: usize) -> TensorData {
        match dtype {
            DType::F32 => TensorData::F32(vec![0.0; count]),
            DType::F64 => TensorData::F64(vec![0.0; count]),
            DType::I32 => TensorData::I32(vec![0; count]),
            DType::I64 => TensorData::I64(vec![0; count]),
            DType::U8 => TensorData::U8(vec![0; count]),
            DType::Bool => TensorData::Bool(vec![false; count]),
            DType::Bytes => TensorData::Bytes(vec![Vec::new(); count]),
        }
    }

    /// Numeric values promoted to f64 (bool as 0/1); `None` for bytes.
    pub fn to_f64(&self) -> Option<Vec<f64>> {
        Some(match self {
            TensorData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            TensorData::F64(v) => v.clone(),
            TensorData::I32(v) => v.iter().map(|&x| x as f64).collect(),
            TensorData::I64(v) => v.iter().map(|&x| x as f64).collect(),
            TensorData::U8(v) => v.iter().map(|&x| x as f64).collect(),
            TensorData::Bool(v) => v.iter().map(|&x| if x { 1.0 } else { 0.0 }).collect(),
            TensorData::Bytes(_) => return None,
        })
    }

    /// Appends the values of `other`; both sides must share a dtype.
    pub fn extend_from(&mut self, other: &TensorData) -> bool {
        match (self, other) {
            (TensorData::F32(a), TensorData::F32(b)) => a.extend_from_slice(b),
            (TensorData::F64(a), TensorData::F64(b)) => a.extend_from_slice(b),
            (TensorData::I32(a), TensorData::I32(b)) => a.extend_from_slice(b),
            (TensorData::I64(a), TensorData::I64(b)) => a.extend_from_slice(b),
            (TensorData::U8(a), TensorData::U8(b)) => a.extend_from_slice(b),
            (TensorData::Bool(a), TensorData::Bool(b)) => a.extend_from_slice(b),
            (TensorData::Bytes(a), TensorData::Bytes(b)) => a.extend_from_slice(b),
            _ => return false,
        }
        true
    }
}

impl PartialEq for TensorData {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (TensorData::F32(a), TensorData::F32(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            (TensorData::F64(a), TensorData::F64(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            (TensorData::I32(a), TensorData::I32(b)) => a == b,
            (TensorData::I64(a), TensorData::I64(b)) => a == b,
            (TensorData::U8(a), TensorData::U8(b)) => a == b,
            (TensorData::Bool(a), TensorData::Bool(b)) => a == b,
            (TensorData::Bytes(a), TensorData::Bytes(b)) => a == b,
            _ => false,
        }
    }
}

impl Eq for TensorData {}

/// A dense n-dimensional array with row-major storage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: TensorData,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: TensorData) -> Result<Tensor, ModelError> {
        if shape.len() > MAX_RANK {
            return Err(ModelError::RankTooLarge(shape.len()));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(ModelError::ShapeDataMismatch {
                shape,
                values: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(dtype: DType, shape: Vec<usize>) -> Result<Tensor, ModelError> {
        let count = shape.iter().product();
        Tensor::new(shape, TensorData::zeros(dtype, count))
    }

    pub fn scalar_f64(value: f64) -> Tensor {
        Tensor {
            shape: vec![],
            data: TensorData::F64(vec![value]),
        }
    }

    pub fn scalar_f32(value: f32) -> Tensor {
        Tensor {
            shape: vec![],
            data: TensorData::F32(vec![value]),
        }
    }

    pub fn scalar_i64(value: i64) -> Tensor {
        Tensor {
            shape: vec![],
            data: TensorData::I64(vec![value]),
        }
    }

    pub fn scalar_bool(value: bool) -> Tensor {
        Tensor {
            shape: vec![],
            data: TensorData::Bool(vec![value]),
        }
    }

    pub fn scalar_bytes(value: impl Into<Vec<u8>>) -> Tensor {
        Tensor {
            shape: vec![],
            data: TensorData::Bytes(vec![value.into()]),
        }
    }

    pub fn vector(data: TensorData) -> Tensor {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn into_data(self) -> TensorData {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// The single value of a scalar (or one-element) numeric tensor as f64.
    pub fn as_f64(&self) -> Option<f64> {
        if self.len() != 1 {
            return None;
        }
        self.data.to_f64().map(|v| v[0])
    }

    pub fn as_bytes(&self) -> Option<&[u8]> {
        match &self.data {
            TensorData::Bytes(v) if v.len() == 1 => Some(&v[0]),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match &self.data {
            TensorData::Bool(v) if v.len() == 1 => Some(v[0]),
            _ => None,
        }
    }

    /// Same dtype and shape, every value zero / false / empty.
    pub fn zeros_like(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: TensorData::zeros(self.dtype(), self.len()),
        }
    }
}

/// Nested tensors: either a single leaf or a name-keyed map of subtrees.
///
/// Children iterate in byte-wise lexicographic order of their names, which
/// is the canonical order used for serialization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TensorTree {
    Leaf(Tensor),
    Node(BTreeMap<String, TensorTree>),
}

impl Default for TensorTree {
    fn default() -> Self {
        TensorTree::empty()
    }
}

impl From<Tensor> for TensorTree {
    fn from(t: Tensor) -> Self {
        TensorTree::Leaf(t)
    }
}

impl TensorTree {
    pub fn empty() -> TensorTree {
        TensorTree::Node(BTreeMap::new())
    }

    pub fn node<K: Into<String>>(entries: impl IntoIterator<Item = (K, TensorTree)>) -> TensorTree {
        TensorTree::Node(entries.into_iter().map(|(k, v)| (k.into(), v)).collect())
    }

    pub fn as_leaf(&self) -> Option<&Tensor> {
        match self {
            TensorTree::Leaf(t) => Some(t),
            TensorTree::Node(_) => None,
        }
    }

    pub fn as_node(&self) -> Option<&BTreeMap<String, TensorTree>> {
        match self {
            TensorTree::Node(m) => Some(m),
            TensorTree::Leaf(_) => None,
        }
    }

    pub fn as_node_mut(&mut self) -> Option<&mut BTreeMap<String, TensorTree>> {
        match self {
            TensorTree::Node(m) => Some(m),
            TensorTree::Leaf(_) => None,
        }
    }

    /// Looks up a `/`-separated path; the empty path is the tree itself.
    pub fn get(&self, path: &str) -> Option<&TensorTree> {
        let mut cur = self;
        for part in path.split('/').filter(|p| !p.is_empty()) {
            cur = cur.as_node()?.get(part)?;
        }
        Some(cur)
    }

    /// Leaves in canonical order, with their `/`-joined paths.
    pub fn leaves(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        collect_leaves(self, String::new(), &mut out);
        out
    }

    /// Same structure with every leaf replaced by its `zeros_like`.
    pub fn zeros_like(&self) -> TensorTree {
        match self {
            TensorTree::Leaf(t) => TensorTree::Leaf(t.zeros_like()),
            TensorTree::Node(m) => {
                TensorTree::Node(m.iter().map(|(k, v)| (k.clone(), v.zeros_like())).collect())
            }
        }
    }
}

fn collect_leaves<'a>(tree: &'a TensorTree, prefix: String, out: &mut Vec<(String, &'a Tensor)>) {
    match tree {
        TensorTree::Leaf(t) => out.push((prefix, t)),
        TensorTree::Node(m) => {
            for (k, v) in m {
                let path = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}/{k}")
                };
                collect_leaves(v, path, out);
            }
        }
    }
}
