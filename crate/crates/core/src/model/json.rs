//! Plain JSON views of tensor trees for reports and protocol messages.
//!
//! Leaves become nested arrays following their shape (a scalar is a bare
//! value). Non-finite floats are the strings `"NaN"`, `"inf"` and `"-inf"`;
//! byte strings are UTF-8 text when valid and arrays of byte values
//! otherwise. The view is lossy for NaN payloads and is not a storage
//! format.

use serde_json::{Map, Number, Value};

use super::spec::{Dim, FeatureSpec, LeafSpec};
use super::tensor::{DType, Tensor, TensorData, TensorTree};
use super::ModelError;

fn float(x: f64) -> Value {
    if x.is_nan() {
        Value::from("NaN")
    } else if x.is_infinite() {
        Value::from(if x > 0.0 { "inf" } else { "-inf" })
    } else {
        Number::from_f64(x).map(Value::Number).unwrap_or(Value::Null)
    }
}

fn scalars(data: &TensorData) -> Vec<Value> {
    match data {
        TensorData::F32(v) => v.iter().map(|&x| float(x as f64)).collect(),
        TensorData::F64(v) => v.iter().map(|&x| float(x)).collect(),
        TensorData::I32(v) => v.iter().map(|&x| Value::from(x)).collect(),
        TensorData::I64(v) => v.iter().map(|&x| Value::from(x)).collect(),
        TensorData::U8(v) => v.iter().map(|&x| Value::from(x)).collect(),
        TensorData::Bool(v) => v.iter().map(|&x| Value::from(x)).collect(),
        TensorData::Bytes(v) => v
            .iter()
            .map(|b| match std::str::from_utf8(b) {
                Ok(s) => Value::from(s),
                Err(_) => Value::from(b.clone()),
            })
            .collect(),
    }
}

fn nest(values: &mut std::vec::IntoIter<Value>, shape: &[usize]) -> Value {
    match shape.split_first() {
        None => values.next().unwrap_or(Value::Null),
        Some((&n, rest)) => Value::Array((0..n).map(|_| nest(values, rest)).collect()),
    }
}

pub fn tensor_to_json(t: &Tensor) -> Value {
    nest(&mut scalars(t.data()).into_iter(), t.shape())
}

pub fn tree_to_json(tree: &TensorTree) -> Value {
    match tree {
        TensorTree::Leaf(t) => tensor_to_json(t),
        TensorTree::Node(m) => Value::Object(m.iter().map(|(k, v)| (k.clone(), tree_to_json(v))).collect::<Map<_, _>>()),
    }
}

fn bad(msg: impl Into<String>) -> ModelError {
    ModelError::InvalidSpec(msg.into())
}

fn flatten<'a>(v: &'a Value, out: &mut Vec<&'a Value>, shape: &mut Vec<usize>, depth: usize) {
    match v {
        Value::Array(items) => {
            if shape.len() == depth {
                shape.push(items.len());
            }
            for item in items {
                flatten(item, out, shape, depth + 1);
            }
        }
        other => out.push(other),
    }
}

fn parse_float(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => match s.as_str() {
            "NaN" => Some(f64::NAN),
            "inf" => Some(f64::INFINITY),
            "-inf" => Some(f64::NEG_INFINITY),
            _ => None,
        },
        _ => None,
    }
}

fn parse_int(v: &Value, lo: i64, hi: i64) -> Option<i64> {
    v.as_i64().filter(|x| (lo..=hi).contains(x))
}

/// Builds a tensor for `spec` from its JSON view. Nested or flat arrays are
/// accepted as long as the element count fits the leaf's shape.
pub fn tensor_from_json(spec: &LeafSpec, value: &Value) -> Result<Tensor, ModelError> {
    let mut items = Vec::new();
    let mut seen_shape = Vec::new();
    flatten(value, &mut items, &mut seen_shape, 0);
    let fixed: usize = spec
        .shape
        .iter()
        .filter_map(|d| match d {
            Dim::Fixed(n) => Some(*n),
            Dim::Variable => None,
        })
        .product();
    let shape: Vec<usize> = match spec.shape.first() {
        Some(Dim::Variable) => {
            if fixed == 0 || items.len() % fixed != 0 {
                return Err(bad(format!("{} values do not fit shape {:?}", items.len(), spec.shape)));
            }
            std::iter::once(items.len() / fixed)
                .chain(spec.shape[1..].iter().map(|d| match d {
                    Dim::Fixed(n) => *n,
                    Dim::Variable => 0,
                }))
                .collect()
        }
        _ => spec.shape.iter().map(|d| if let Dim::Fixed(n) = d { *n } else { 0 }).collect(),
    };
    let count: usize = shape.iter().product();
    if items.len() != count {
        return Err(bad(format!("expected {count} values for shape {shape:?}, got {}", items.len())));
    }
    let wrong = |v: &Value| bad(format!("{v} is not a valid {} value", spec.dtype));
    let data = match spec.dtype {
        DType::F32 => TensorData::F32(
            items.iter().map(|v| parse_float(v).map(|x| x as f32).ok_or_else(|| wrong(v))).collect::<Result<_, _>>()?,
        ),
        DType::F64 => TensorData::F64(items.iter().map(|v| parse_float(v).ok_or_else(|| wrong(v))).collect::<Result<_, _>>()?),
        DType::I32 => TensorData::I32(
            items
                .iter()
                .map(|v| parse_int(v, i32::MIN as i64, i32::MAX as i64).map(|x| x as i32).ok_or_else(|| wrong(v)))
                .collect::<Result<_, _>>()?,
        ),
        DType::I64 => TensorData::I64(items.iter().map(|v| v.as_i64().ok_or_else(|| wrong(v))).collect::<Result<_, _>>()?),
        DType::U8 => TensorData::U8(
            items.iter().map(|v| parse_int(v, 0, 255).map(|x| x as u8).ok_or_else(|| wrong(v))).collect::<Result<_, _>>()?,
        ),
        DType::Bool => TensorData::Bool(items.iter().map(|v| v.as_bool().ok_or_else(|| wrong(v))).collect::<Result<_, _>>()?),
        DType::Bytes => TensorData::Bytes(
            items
                .iter()
                .map(|v| v.as_str().map(|s| s.as_bytes().to_vec()).ok_or_else(|| wrong(v)))
                .collect::<Result<_, _>>()?,
        ),
    };
    Tensor::new(shape, data)
}

/// Builds a tree for `spec` from its JSON view; objects must have exactly
/// the feature spec's keys.
pub fn tree_from_json(spec: &FeatureSpec, value: &Value) -> Result<TensorTree, ModelError> {
    match spec {
        FeatureSpec::Leaf(l) => Ok(TensorTree::Leaf(tensor_from_json(l, value)?)),
        FeatureSpec::Node(children) => {
            let obj = match value {
                Value::Object(o) => o,
                Value::Null if children.is_empty() => return Ok(TensorTree::empty()),
                other => return Err(bad(format!("expected an object, got {other}"))),
            };
            if let Some(k) = obj.keys().find(|k| !children.contains_key(*k)) {
                return Err(bad(format!("unexpected key {k}")));
            }
            children
                .iter()
                .map(|(k, s)| {
                    let v = obj.get(k).ok_or_else(|| bad(format!("missing key {k}")))?;
                    Ok((k.clone(), tree_from_json(s, v)?))
                })
                .collect::<Result<_, _>>()
                .map(TensorTree::Node)
        }
    }
}
