use std::collections::BTreeMap;

use serde_json::{Map, Value};

use super::tensor::{DType, Tensor, TensorData, TensorTree, MAX_RANK};
use super::ModelError;

pub const MAX_DEPTH: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dim {
    Fixed(usize),
    /// Only allowed as the first dimension of a leaf.
    Variable,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LeafSpec {
    pub dtype: DType,
    pub shape: Vec<Dim>,
}

impl LeafSpec {
    pub fn new(dtype: DType, shape: &[usize]) -> LeafSpec {
        LeafSpec {
            dtype,
            shape: shape.iter().map(|&d| Dim::Fixed(d)).collect(),
        }
    }

    pub fn scalar(dtype: DType) -> LeafSpec {
        LeafSpec {
            dtype,
            shape: vec![],
        }
    }

    /// Leaf whose first dimension is variable, followed by fixed `rest`.
    pub fn ragged(dtype: DType, rest: &[usize]) -> LeafSpec {
        let mut shape = vec![Dim::Variable];
        shape.extend(rest.iter().map(|&d| Dim::Fixed(d)));
        LeafSpec { dtype, shape }
    }

    pub fn has_variable_extent(&self) -> bool {
        self.shape.first() == Some(&Dim::Variable)
    }

    pub fn matches(&self, t: &Tensor) -> bool {
        t.dtype() == self.dtype
            && t.shape().len() == self.shape.len()
            && t.shape().iter().zip(&self.shape).all(|(&got, dim)| match dim {
                Dim::Fixed(n) => got == *n,
                Dim::Variable => true,
            })
    }

    /// Image-like leaf: u8 of rank 3 with 1, 3 or 4 channels.
    pub fn is_image(&self) -> bool {
        self.dtype == DType::U8
            && self.shape.len() == 3
            && matches!(self.shape[2], Dim::Fixed(1) | Dim::Fixed(3) | Dim::Fixed(4))
    }
}

/// Nested feature description: leaves are (dtype, shape), nodes map names
/// to children.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum FeatureSpec {
    Leaf(LeafSpec),
    Node(BTreeMap<String, FeatureSpec>),
}

impl Default for FeatureSpec {
    fn default() -> Self {
        FeatureSpec::empty()
    }
}

impl From<LeafSpec> for FeatureSpec {
    fn from(l: LeafSpec) -> Self {
        FeatureSpec::Leaf(l)
    }
}

impl FeatureSpec {
    pub fn empty() -> FeatureSpec {
        FeatureSpec::Node(BTreeMap::new())
    }

    pub fn scalar(dtype: DType) -> FeatureSpec {
        FeatureSpec::Leaf(LeafSpec::scalar(dtype))
    }

    pub fn leaf(dtype: DType, shape: &[usize]) -> FeatureSpec {
        FeatureSpec::Leaf(LeafSpec::new(dtype, shape))
    }

    pub fn node<K: Into<String>>(entries: impl IntoIterator<Item = (K, FeatureSpec)>) -> FeatureSpec {
        FeatureSpec::Node(entries.into_iter().map(|(k, v)| (k.into(), v)).collect())
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, FeatureSpec::Node(m) if m.is_empty())
    }

    pub fn depth(&self) -> usize {
        match self {
            FeatureSpec::Leaf(_) => 0,
            FeatureSpec::Node(m) => 1 + m.values().map(FeatureSpec::depth).max().unwrap_or(0),
        }
    }

    pub fn get(&self, path: &str) -> Option<&FeatureSpec> {
        let mut cur = self;
        for part in path.split('/').filter(|p| !p.is_empty()) {
            match cur {
                FeatureSpec::Node(m) => cur = m.get(part)?,
                FeatureSpec::Leaf(_) => return None,
            }
        }
        Some(cur)
    }

    /// Leaves in canonical order with their `/`-joined paths.
    pub fn leaves(&self) -> Vec<(String, &LeafSpec)> {
        fn walk<'a>(s: &'a FeatureSpec, prefix: String, out: &mut Vec<(String, &'a LeafSpec)>) {
            match s {
                FeatureSpec::Leaf(l) => out.push((prefix, l)),
                FeatureSpec::Node(m) => {
                    for (k, v) in m {
                        let p = if prefix.is_empty() {
                            k.clone()
                        } else {
                            format!("{prefix}/{k}")
                        };
                        walk(v, p, out);
                    }
                }
            }
        }
        let mut out = Vec::new();
        walk(self, String::new(), &mut out);
        out
    }

    pub fn check_valid(&self) -> Result<(), ModelError> {
        if self.depth() > MAX_DEPTH {
            return Err(ModelError::InvalidSpec(format!(
                "depth {} exceeds {MAX_DEPTH}",
                self.depth()
            )));
        }
        self.check_node("")
    }

    fn check_node(&self, path: &str) -> Result<(), ModelError> {
        match self {
            FeatureSpec::Leaf(l) => {
                if l.shape.len() > MAX_RANK {
                    return Err(ModelError::InvalidSpec(format!("{path}: rank {} exceeds {MAX_RANK}", l.shape.len())));
                }
                if l.shape.iter().skip(1).any(|d| *d == Dim::Variable) {
                    return Err(ModelError::InvalidSpec(format!(
                        "{path}: variable extent allowed on first dimension only"
                    )));
                }
                Ok(())
            }
            FeatureSpec::Node(m) => {
                for (k, v) in m {
                    if k.is_empty() || k.contains('/') {
                        return Err(ModelError::InvalidSpec(format!("{path}: field name {k:?} is empty or contains '/'")));
                    }
                    v.check_node(&format!("{path}/{k}"))?;
                }
                Ok(())
            }
        }
    }

    /// Describes the first place where `tree` departs from this spec.
    pub fn mismatch(&self, tree: &TensorTree) -> Option<String> {
        self.mismatch_at(tree, "")
    }

    pub fn matches(&self, tree: &TensorTree) -> bool {
        self.mismatch(tree).is_none()
    }

    fn mismatch_at(&self, tree: &TensorTree, path: &str) -> Option<String> {
        match (self, tree) {
            (FeatureSpec::Leaf(l), TensorTree::Leaf(t)) => {
                if l.matches(t) {
                    None
                } else {
                    Some(format!(
                        "{path}: expected {} {}, got {} {:?}",
                        l.dtype,
                        shape_string(&l.shape),
                        t.dtype(),
                        t.shape()
                    ))
                }
            }
            (FeatureSpec::Node(sm), TensorTree::Node(tm)) => {
                for k in tm.keys() {
                    if !sm.contains_key(k) {
                        return Some(format!("{path}/{k}: unexpected field"));
                    }
                }
                for (k, s) in sm {
                    let sub = format!("{path}/{k}");
                    match tm.get(k) {
                        None => return Some(format!("{sub}: missing field")),
                        Some(t) => {
                            if let Some(m) = s.mismatch_at(t, &sub) {
                                return Some(m);
                            }
                        }
                    }
                }
                None
            }
            (FeatureSpec::Leaf(_), TensorTree::Node(_)) => Some(format!("{path}: expected leaf, got node")),
            (FeatureSpec::Node(_), TensorTree::Leaf(_)) => Some(format!("{path}: expected node, got leaf")),
        }
    }

    /// Copy of this spec with every variable extent fixed to `extent`.
    pub fn resolve_variable(&self, extent: usize) -> FeatureSpec {
        match self {
            FeatureSpec::Leaf(l) => FeatureSpec::Leaf(LeafSpec {
                dtype: l.dtype,
                shape: l
                    .shape
                    .iter()
                    .map(|d| match d {
                        Dim::Variable => Dim::Fixed(extent),
                        f => *f,
                    })
                    .collect(),
            }),
            FeatureSpec::Node(m) => {
                FeatureSpec::Node(m.iter().map(|(k, v)| (k.clone(), v.resolve_variable(extent))).collect())
            }
        }
    }

    /// Spec without image-like leaves (and without nodes left empty by it).
    pub fn without_images(&self) -> FeatureSpec {
        match self {
            FeatureSpec::Leaf(l) => FeatureSpec::Leaf(l.clone()),
            FeatureSpec::Node(m) => FeatureSpec::Node(
                m.iter()
                    .filter_map(|(k, v)| match v {
                        FeatureSpec::Leaf(l) if l.is_image() => None,
                        FeatureSpec::Node(_) => {
                            let pruned = v.without_images();
                            if pruned.is_empty() && !v.is_empty() {
                                None
                            } else {
                                Some((k.clone(), pruned))
                            }
                        }
                        leaf => Some((k.clone(), leaf.clone())),
                    })
                    .collect(),
            ),
        }
    }

    pub fn to_document(&self) -> Value {
        match self {
            FeatureSpec::Leaf(l) => {
                let shape: Vec<Value> = l
                    .shape
                    .iter()
                    .map(|d| match d {
                        Dim::Fixed(n) => Value::from(*n as i64),
                        Dim::Variable => Value::from(-1),
                    })
                    .collect();
                let mut m = Map::new();
                m.insert("dtype".into(), Value::from(l.dtype.name()));
                m.insert("shape".into(), Value::Array(shape));
                Value::Object(m)
            }
            FeatureSpec::Node(children) => Value::Object(
                children
                    .iter()
                    .map(|(k, v)| (k.clone(), v.to_document()))
                    .collect(),
            ),
        }
    }

    pub fn from_document(doc: &Value) -> Result<FeatureSpec, ModelError> {
        let obj = doc
            .as_object()
            .ok_or_else(|| ModelError::InvalidSpec(format!("expected object, got {doc}")))?;
        if let Some(Value::String(dtype)) = obj.get("dtype") {
            if obj.len() != 2 {
                return Err(ModelError::InvalidSpec("leaf must have exactly dtype and shape".into()));
            }
            let dtype = DType::parse(dtype).ok_or_else(|| ModelError::InvalidSpec(format!("unknown dtype {dtype}")))?;
            let shape = obj
                .get("shape")
                .and_then(Value::as_array)
                .ok_or_else(|| ModelError::InvalidSpec("leaf shape must be an array".into()))?
                .iter()
                .map(|d| match d.as_i64() {
                    Some(-1) => Ok(Dim::Variable),
                    Some(n) if n >= 0 => Ok(Dim::Fixed(n as usize)),
                    _ => Err(ModelError::InvalidSpec(format!("bad extent {d}"))),
                })
                .collect::<Result<Vec<_>, _>>()?;
            return Ok(FeatureSpec::Leaf(LeafSpec { dtype, shape }));
        }
        let children = obj
            .iter()
            .map(|(k, v)| Ok((k.clone(), FeatureSpec::from_document(v)?)))
            .collect::<Result<BTreeMap<_, _>, ModelError>>()?;
        Ok(FeatureSpec::Node(children))
    }
}

fn shape_string(shape: &[Dim]) -> String {
    let parts: Vec<String> = shape
        .iter()
        .map(|d| match d {
            Dim::Fixed(n) => n.to_string(),
            Dim::Variable => "?".into(),
        })
        .collect();
    format!("[{}]", parts.join(","))
}

/// Field specs for every per-step field plus episode metadata.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DatasetSchema {
    pub observation: FeatureSpec,
    pub action: FeatureSpec,
    pub reward: FeatureSpec,
    pub discount: FeatureSpec,
    pub step_metadata: FeatureSpec,
    pub episode_metadata: FeatureSpec,
}

impl DatasetSchema {
    /// Schema with scalar f64 reward and discount and no metadata.
    pub fn new(observation: FeatureSpec, action: FeatureSpec) -> DatasetSchema {
        DatasetSchema {
            observation,
            action,
            reward: FeatureSpec::scalar(DType::F64),
            discount: FeatureSpec::scalar(DType::F64),
            step_metadata: FeatureSpec::empty(),
            episode_metadata: FeatureSpec::empty(),
        }
    }

    pub fn with_step_metadata(mut self, spec: FeatureSpec) -> Self {
        self.step_metadata = spec;
        self
    }

    pub fn with_episode_metadata(mut self, spec: FeatureSpec) -> Self {
        self.episode_metadata = spec;
        self
    }

    pub fn check_valid(&self) -> Result<(), ModelError> {
        for (name, spec) in self.fields() {
            spec.check_valid()
                .map_err(|e| ModelError::InvalidSpec(format!("{name}: {e}")))?;
        }
        Ok(())
    }

    /// `(name, spec)` for all six fields in canonical (byte-wise) order.
    pub fn fields(&self) -> [(&'static str, &FeatureSpec); 6] {
        [
            ("action", &self.action),
            ("discount", &self.discount),
            ("episode_metadata", &self.episode_metadata),
            ("observation", &self.observation),
            ("reward", &self.reward),
            ("step_metadata", &self.step_metadata),
        ]
    }

    /// Resolves a step field selector such as `observation/pos` or
    /// `metadata/tag:placed`.
    pub fn step_field(&self, selector: &str) -> Option<(StepField, &FeatureSpec)> {
        let (head, rest) = selector.split_once('/').unwrap_or((selector, ""));
        let field = StepField::parse(head)?;
        let spec = match field {
            StepField::Observation => &self.observation,
            StepField::Action => &self.action,
            StepField::Reward => &self.reward,
            StepField::Discount => &self.discount,
            StepField::Metadata => &self.step_metadata,
        };
        Some((field, spec.get(rest)?))
    }

    pub fn to_document(&self) -> Value {
        Value::Object(
            self.fields()
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_document()))
                .collect(),
        )
    }

    pub fn from_document(doc: &Value) -> Result<DatasetSchema, ModelError> {
        let obj = doc
            .as_object()
            .ok_or_else(|| ModelError::InvalidSpec("schema document must be an object".into()))?;
        let field = |name: &str| -> Result<FeatureSpec, ModelError> {
            match obj.get(name) {
                Some(v) => FeatureSpec::from_document(v),
                None => Err(ModelError::InvalidSpec(format!("schema missing field {name}"))),
            }
        };
        if let Some(extra) = obj.keys().find(|k| {
            !matches!(
                k.as_str(),
                "action" | "discount" | "episode_metadata" | "observation" | "reward" | "step_metadata"
            )
        }) {
            return Err(ModelError::InvalidSpec(format!("unexpected schema field {extra}")));
        }
        let schema = DatasetSchema {
            observation: field("observation")?,
            action: field("action")?,
            reward: field("reward")?,
            discount: field("discount")?,
            step_metadata: field("step_metadata")?,
            episode_metadata: field("episode_metadata")?,
        };
        schema.check_valid()?;
        Ok(schema)
    }

    /// Canonical UTF-8 bytes: compact, sibling keys byte-wise sorted.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        crate::doc::canonical_bytes(&self.to_document())
    }

    pub fn from_canonical_bytes(bytes: &[u8]) -> Result<DatasetSchema, ModelError> {
        let doc: Value = serde_json::from_slice(bytes).map_err(|e| ModelError::InvalidSpec(e.to_string()))?;
        DatasetSchema::from_document(&doc)
    }
}

/// Top-level step field addressed by a selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StepField {
    Observation,
    Action,
    Reward,
    Discount,
    Metadata,
}

impl StepField {
    pub fn parse(name: &str) -> Option<StepField> {
        Some(match name {
            "observation" => StepField::Observation,
            "action" => StepField::Action,
            "reward" => StepField::Reward,
            "discount" => StepField::Discount,
            "metadata" | "step_metadata" => StepField::Metadata,
            _ => return None,
        })
    }
}

/// Zero / false / empty values shaped per `spec`.
///
/// Variable extents must be resolved first (see
/// [`FeatureSpec::resolve_variable`]).
pub fn undefined_fill(spec: &FeatureSpec) -> Result<TensorTree, ModelError> {
    match spec {
        FeatureSpec::Leaf(l) => {
            let mut shape = Vec::with_capacity(l.shape.len());
            for d in &l.shape {
                match d {
                    Dim::Fixed(n) => shape.push(*n),
                    Dim::Variable => return Err(ModelError::UnresolvedVariableExtent),
                }
            }
            let count = shape.iter().product();
            Ok(TensorTree::Leaf(Tensor::new(shape, TensorData::zeros(l.dtype, count))?))
        }
        FeatureSpec::Node(m) => Ok(TensorTree::Node(
            m.iter()
                .map(|(k, v)| Ok((k.clone(), undefined_fill(v)?)))
                .collect::<Result<_, ModelError>>()?,
        )),
    }
}

/// The fill used for undefined step fields: variable extents resolve to 0.
pub fn canonical_fill(spec: &FeatureSpec) -> TensorTree {
    undefined_fill(&spec.resolve_variable(0)).expect("variable extents resolved")
}
