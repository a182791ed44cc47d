//! Random schemas, tensors and episodes from a seeded generator.

use std::collections::BTreeMap;

use epilogue::model::{
    canonical_fill, Alignment, DType, DatasetSchema, Dim, EpisodeRecord, FeatureSpec, LeafSpec, StepField, StepRecord,
    Tensor, TensorData, TensorTree,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type TestRng = ChaCha8Rng;

pub fn rng(seed: u64) -> TestRng {
    TestRng::seed_from_u64(seed)
}

/// Size limits for generated data.
#[derive(Debug, Clone, Copy)]
pub struct Limits {
    pub max_depth: usize,
    pub max_rank: usize,
    pub max_dim: usize,
    pub max_episodes: usize,
    pub max_steps: usize,
    /// Include NaN payloads, infinities and negative zero in float leaves.
    pub special_floats: bool,
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            max_depth: 4,
            max_rank: 3,
            max_dim: 4,
            max_episodes: 20,
            max_steps: 50,
            special_floats: true,
        }
    }
}

const DTYPES: [DType; 7] = [DType::F32, DType::F64, DType::I32, DType::I64, DType::U8, DType::Bool, DType::Bytes];

pub fn leaf_spec(rng: &mut TestRng, limits: &Limits) -> LeafSpec {
    let dtype = DTYPES[rng.random_range(0..DTYPES.len())];
    let rank = rng.random_range(0..=limits.max_rank);
    let mut shape: Vec<Dim> = (0..rank).map(|_| Dim::Fixed(rng.random_range(1..=limits.max_dim))).collect();
    if rank > 0 && rng.random_bool(0.2) {
        shape[0] = Dim::Variable;
    }
    LeafSpec { dtype, shape }
}

/// A random tree of at most `depth` levels (a lone leaf has depth 0).
pub fn feature_spec(rng: &mut TestRng, limits: &Limits, depth: usize) -> FeatureSpec {
    if depth == 0 || rng.random_bool(0.35) {
        return FeatureSpec::Leaf(leaf_spec(rng, limits));
    }
    let n = rng.random_range(1..=3);
    let mut children = BTreeMap::new();
    for i in 0..n {
        let key = format!("{}{}", ["a", "B", "z_", "k.", "é"][rng.random_range(0..5)], i);
        children.insert(key, feature_spec(rng, limits, depth - 1));
    }
    FeatureSpec::Node(children)
}

/// A numeric (non-bytes) vector observation spec, as needed by the
/// absorbing transform.
pub fn vector_spec(rng: &mut TestRng, limits: &Limits) -> FeatureSpec {
    let dtype = DTYPES[rng.random_range(0..DTYPES.len() - 1)];
    FeatureSpec::Leaf(LeafSpec::new(dtype, &[rng.random_range(1..=limits.max_dim)]))
}

pub fn schema(rng: &mut TestRng, limits: &Limits) -> DatasetSchema {
    let depth = limits.max_depth;
    let mut s = DatasetSchema::new(feature_spec(rng, limits, depth), feature_spec(rng, limits, depth));
    if rng.random_bool(0.3) {
        s.reward = feature_spec(rng, limits, 1);
    }
    if rng.random_bool(0.2) {
        s.discount = feature_spec(rng, limits, 1);
    }
    if rng.random_bool(0.5) {
        s.step_metadata = feature_spec(rng, limits, 2);
    }
    if rng.random_bool(0.5) {
        s.episode_metadata = feature_spec(rng, limits, 2);
    }
    s
}

fn f64_value(rng: &mut TestRng, special: bool) -> f64 {
    if special && rng.random_bool(0.1) {
        match rng.random_range(0..5) {
            0 => f64::from_bits(0x7ff8_0000_0000_0000 | rng.random_range(1..1u64 << 51)),
            1 => f64::INFINITY,
            2 => f64::NEG_INFINITY,
            3 => -0.0,
            _ => f64::MIN_POSITIVE / 3.0,
        }
    } else {
        rng.random_range(-1e3..1e3)
    }
}

fn f32_value(rng: &mut TestRng, special: bool) -> f32 {
    if special && rng.random_bool(0.1) {
        match rng.random_range(0..4) {
            0 => f32::from_bits(0x7fc0_0000 | rng.random_range(1..1u32 << 22)),
            1 => f32::INFINITY,
            2 => -0.0,
            _ => f32::MIN_POSITIVE / 3.0,
        }
    } else {
        rng.random_range(-1e3f32..1e3)
    }
}

pub fn tensor_data(rng: &mut TestRng, dtype: DType, count: usize, special: bool) -> TensorData {
    match dtype {
        DType::F32 => TensorData::F32((0..count).map(|_| f32_value(rng, special)).collect()),
        DType::F64 => TensorData::F64((0..count).map(|_| f64_value(rng, special)).collect()),
        DType::I32 => TensorData::I32((0..count).map(|_| rng.random()).collect()),
        DType::I64 => TensorData::I64((0..count).map(|_| rng.random()).collect()),
        DType::U8 => TensorData::U8((0..count).map(|_| rng.random()).collect()),
        DType::Bool => TensorData::Bool((0..count).map(|_| rng.random()).collect()),
        DType::Bytes => TensorData::Bytes(
            (0..count)
                .map(|_| {
                    let n = rng.random_range(0..8);
                    (0..n).map(|_| rng.random()).collect()
                })
                .collect(),
        ),
    }
}

pub fn tensor(rng: &mut TestRng, spec: &LeafSpec, special: bool) -> Tensor {
    let shape: Vec<usize> = spec
        .shape
        .iter()
        .map(|d| match d {
            Dim::Fixed(n) => *n,
            Dim::Variable => rng.random_range(0..4),
        })
        .collect();
    let count = shape.iter().product();
    Tensor::new(shape, tensor_data(rng, spec.dtype, count, special)).expect("shape matches data")
}

pub fn tree(rng: &mut TestRng, spec: &FeatureSpec, special: bool) -> TensorTree {
    match spec {
        FeatureSpec::Leaf(l) => TensorTree::Leaf(tensor(rng, l, special)),
        FeatureSpec::Node(m) => TensorTree::Node(m.iter().map(|(k, v)| (k.clone(), tree(rng, v, special))).collect()),
    }
}

/// A valid episode of `len` steps: flags per storage rules, undefined
/// fields holding the canonical fill for `alignment`.
pub fn episode(
    rng: &mut TestRng,
    schema: &DatasetSchema,
    alignment: Alignment,
    len: usize,
    terminal: bool,
    special: bool,
) -> EpisodeRecord {
    let steps = (0..len)
        .map(|i| {
            let is_first = i == 0;
            let is_last = i + 1 == len;
            let field = |rng: &mut TestRng, f: StepField, spec: &FeatureSpec| {
                if alignment.is_defined(f, is_first, is_last) {
                    tree(rng, spec, special)
                } else {
                    canonical_fill(spec)
                }
            };
            StepRecord {
                observation: tree(rng, &schema.observation, special),
                action: field(rng, StepField::Action, &schema.action),
                reward: field(rng, StepField::Reward, &schema.reward),
                discount: field(rng, StepField::Discount, &schema.discount),
                is_first,
                is_last,
                is_terminal: is_last && terminal,
                metadata: tree(rng, &schema.step_metadata, special),
            }
        })
        .collect();
    EpisodeRecord::new(steps, tree(rng, &schema.episode_metadata, special))
}

/// Between 1 and `limits.max_episodes` episodes of 1..=`max_steps` steps.
pub fn dataset(rng: &mut TestRng, schema: &DatasetSchema, alignment: Alignment, limits: &Limits) -> Vec<EpisodeRecord> {
    let n = rng.random_range(1..=limits.max_episodes);
    (0..n)
        .map(|_| {
            let len = rng.random_range(1..=limits.max_steps);
            let terminal = rng.random_bool(0.5);
            episode(rng, schema, alignment, len, terminal, limits.special_floats)
        })
        .collect()
}

/// Schema with scalar f64 reward and a vector observation, suitable for
/// statistics and absorbing tests.
pub fn simple_schema(rng: &mut TestRng, limits: &Limits) -> DatasetSchema {
    DatasetSchema::new(vector_spec(rng, limits), feature_spec(rng, limits, 1))
}
