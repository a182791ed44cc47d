//! Declarative transform pipelines.
//!
//! A pipeline document names one or more input datasets, an ordered list
//! of stages and what to report. Each stage consumes and produces a stream
//! of a given [`Kind`]; the chain is checked before anything is read.
//!
//! ```json
//! {
//!   "inputs": [{"name": "synthetic", "path": "synthetic.rlds"},
//!              {"name": "human", "catalog": {"store": "cat", "dataset": "human", "split": "train[:10]"}}],
//!   "stages": [{"op": "sample_episodes", "k": 5, "buffer": 30, "seed": 42},
//!              {"op": "flat_steps"},
//!              {"op": "make_transitions"}],
//!   "report": {"stats": "reward", "histogram": {"field": "reward", "bins": 20}}
//! }
//! ```

use std::fmt;
use std::path::{Path, PathBuf};

use epilogue::catalog::{Catalog, LoadedSplit};
use epilogue::model::{Alignment, DatasetSchema, Dim, FeatureSpec, StepField, StepRecord, TensorTree};
use epilogue::store::{DatasetMetadata, Reader, Writer, WriterOptions};
use epilogue::transforms::{
    self, apply_episodes, batch_dataset, flat_steps, flatten_observation, map_steps, pad_steps, sample_episodes,
    shift_alignment, to_absorbing, truncate_after_condition, EpisodeResult, FieldStats, StatsAccumulator,
    Transition,
};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::histogram::{histogram, Row, DEFAULT_BINS};

/// What a stream carries between stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Episode,
    Step,
    Transition,
    Batch,
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Kind::Episode => "episode",
            Kind::Step => "step",
            Kind::Transition => "transition",
            Kind::Batch => "batch",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogInput {
    pub store: PathBuf,
    pub dataset: String,
    pub split: String,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSpec {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub catalog: Option<CatalogInput>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Stage {
    SampleEpisodes {
        k: u64,
        buffer: usize,
        seed: u64,
    },
    ShiftAlignment {
        to: String,
    },
    /// Keeps each episode's steps up to the first one whose selected leaf
    /// holds a nonzero (or true) value.
    TruncateAfterCondition {
        field: String,
    },
    ToAbsorbing,
    PadSteps {
        count: usize,
    },
    FlattenObservation {
        paths: Vec<String>,
    },
    FlatSteps,
    MakeTransitions,
    BatchSteps {
        size: usize,
        shift: usize,
        #[serde(default)]
        drop_remainder: bool,
    },
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::SampleEpisodes { .. } => "sample_episodes",
            Stage::ShiftAlignment { .. } => "shift_alignment",
            Stage::TruncateAfterCondition { .. } => "truncate_after_condition",
            Stage::ToAbsorbing => "to_absorbing",
            Stage::PadSteps { .. } => "pad_steps",
            Stage::FlattenObservation { .. } => "flatten_observation",
            Stage::FlatSteps => "flat_steps",
            Stage::MakeTransitions => "make_transitions",
            Stage::BatchSteps { .. } => "batch_steps",
        }
    }

    /// `(input, output)` kinds.
    pub fn signature(&self) -> (Kind, Kind) {
        match self {
            Stage::FlatSteps => (Kind::Episode, Kind::Step),
            Stage::MakeTransitions => (Kind::Step, Kind::Transition),
            Stage::BatchSteps { .. } => (Kind::Episode, Kind::Batch),
            _ => (Kind::Episode, Kind::Episode),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistogramSpec {
    /// A step field selector, or `return` for per-episode returns.
    pub field: String,
    #[serde(default = "default_bins")]
    pub bins: usize,
}

fn default_bins() -> usize {
    DEFAULT_BINS
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSpec {
    #[serde(default)]
    pub stats: Option<String>,
    #[serde(default)]
    pub histogram: Option<HistogramSpec>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSpec {
    pub inputs: Vec<InputSpec>,
    #[serde(default)]
    pub stages: Vec<Stage>,
    /// Writes the final episode stream here (single input only).
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub report: ReportSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetReport {
    pub name: String,
    pub kind: Kind,
    /// Items of the final stream.
    pub items: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stats: Option<FieldStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub datasets: Vec<DatasetReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub histogram: Option<Vec<Row>>,
}

const RETURN_FIELD: &str = "return";

impl PipelineSpec {
    pub fn from_json(bytes: &[u8]) -> Result<PipelineSpec> {
        serde_json::from_slice(bytes).map_err(|e| CliError::Pipeline(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<PipelineSpec> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        PipelineSpec::from_json(&bytes)
    }

    /// Kind of the final stream, after checking every stage accepts its
    /// predecessor's output.
    pub fn check(&self) -> Result<Kind> {
        let mut kind = Kind::Episode;
        for (i, stage) in self.stages.iter().enumerate() {
            let (input, output) = stage.signature();
            if input != kind {
                return Err(CliError::KindMismatch {
                    stage: i,
                    op: stage.name().to_string(),
                    expected: input,
                    got: kind,
                });
            }
            kind = output;
        }
        if self.inputs.is_empty() {
            return Err(CliError::Pipeline("at least one input is required".into()));
        }
        for input in &self.inputs {
            if input.path.is_some() == input.catalog.is_some() {
                return Err(CliError::Pipeline("each input needs exactly one of `path` or `catalog`".into()));
            }
        }
        if self.output.is_some() {
            if kind != Kind::Episode {
                return Err(CliError::Pipeline(format!("`output` needs an episode stream, the pipeline ends with {kind}")));
            }
            if self.inputs.len() != 1 {
                return Err(CliError::Pipeline("`output` needs exactly one input".into()));
            }
            if let Some(s) = self
                .stages
                .iter()
                .find(|s| matches!(s, Stage::TruncateAfterCondition { .. } | Stage::PadSteps { .. }))
            {
                return Err(CliError::Pipeline(format!(
                    "{} breaks the episode flag structure, so its output cannot be written",
                    s.name()
                )));
            }
        }
        let fields = self.report.stats.iter().chain(self.report.histogram.as_ref().map(|h| &h.field));
        for field in fields {
            if kind == Kind::Batch {
                return Err(CliError::Pipeline("statistics need an episode, step or transition stream".into()));
            }
            if field == RETURN_FIELD && kind != Kind::Episode {
                return Err(CliError::Pipeline("`return` needs an episode stream".into()));
            }
        }
        if self.report.histogram.as_ref().is_some_and(|h| h.bins == 0) {
            return Err(CliError::Pipeline("histogram needs at least one bin".into()));
        }
        Ok(kind)
    }

    pub fn run(&self) -> Result<Report> {
        let kind = self.check()?;
        let mut datasets = Vec::new();
        let mut values = Vec::new();
        for (i, input) in self.inputs.iter().enumerate() {
            let source = Source::open(input)?;
            let name = input.name.clone().unwrap_or_else(|| source.default_name(i));
            let (schema, alignment) = self.output_schema(source.schema()?.clone(), source.alignment())?;
            let stream = self.build(source.episodes(), source.schema()?, source.alignment())?;
            let mut sink = Sink::new(self, &schema, alignment)?;
            let items = sink.drain(stream)?;
            let stats = self.report.stats.as_ref().map(|_| sink.stats.finish());
            values.push((name.clone(), std::mem::take(&mut sink.hist_values)));
            datasets.push(DatasetReport { name, kind, items, stats });
        }
        let histogram = self.report.histogram.as_ref().map(|h| histogram(&values, h.bins));
        Ok(Report { datasets, histogram })
    }

    /// Schema and alignment of the stream after every stage.
    fn output_schema(&self, mut schema: DatasetSchema, mut alignment: Alignment) -> Result<(DatasetSchema, Alignment)> {
        for stage in &self.stages {
            match stage {
                Stage::ShiftAlignment { to } => alignment = parse_alignment(to)?,
                Stage::ToAbsorbing => schema.observation = absorbing_spec(&schema.observation)?,
                Stage::FlattenObservation { paths } => schema.observation = flattened_spec(&schema.observation, paths)?,
                _ => {}
            }
        }
        Ok((schema, alignment))
    }

    fn build<'a>(
        &self,
        episodes: Box<dyn Iterator<Item = EpisodeResult> + 'a>,
        schema: &DatasetSchema,
        alignment: Alignment,
    ) -> Result<Stream<'a>> {
        let mut stream = Stream::Episodes(episodes);
        let mut schema = schema.clone();
        let mut alignment = alignment;
        for stage in &self.stages {
            stream = match (stage, stream) {
                (Stage::SampleEpisodes { k, buffer, seed }, Stream::Episodes(eps)) => {
                    Stream::Episodes(Box::new(sample_episodes(eps, *buffer, *seed, *k)?))
                }
                (Stage::ShiftAlignment { to }, Stream::Episodes(eps)) => {
                    let (from, to) = (alignment, parse_alignment(to)?);
                    alignment = to;
                    let s = schema.clone();
                    Stream::Episodes(Box::new(apply_episodes(eps, move |ep| {
                        shift_alignment(&ep, from, to, &s).map(|(ep, _)| ep)
                    })))
                }
                (Stage::TruncateAfterCondition { field }, Stream::Episodes(eps)) => {
                    if schema.step_field(field).is_none() {
                        return Err(transforms::TransformError::UnknownField(field.clone()).into());
                    }
                    let field = field.clone();
                    Stream::Episodes(Box::new(apply_episodes(eps, move |ep| {
                        let steps = truncate_after_condition(ep.steps, |s: &StepRecord| truthy(s.select(&field))).collect();
                        Ok(epilogue::model::EpisodeRecord::new(steps, ep.metadata))
                    })))
                }
                (Stage::ToAbsorbing, Stream::Episodes(eps)) => {
                    schema.observation = absorbing_spec(&schema.observation)?;
                    Stream::Episodes(Box::new(to_absorbing(eps)))
                }
                (Stage::PadSteps { count }, Stream::Episodes(eps)) => {
                    let template = StepRecord::filled(&schema);
                    let count = *count;
                    Stream::Episodes(Box::new(apply_episodes(eps, move |ep| {
                        let steps = pad_steps(ep.steps, count, template.clone()).collect();
                        Ok(epilogue::model::EpisodeRecord::new(steps, ep.metadata))
                    })))
                }
                (Stage::FlattenObservation { paths }, Stream::Episodes(eps)) => {
                    schema.observation = flattened_spec(&schema.observation, paths)?;
                    let paths: Vec<&str> = paths.iter().map(String::as_str).collect();
                    Stream::Episodes(Box::new(map_steps(eps, flatten_observation(&paths))))
                }
                (Stage::FlatSteps, Stream::Episodes(eps)) => Stream::Steps(Box::new(flat_steps(eps))),
                (Stage::MakeTransitions, Stream::Steps(steps)) => Stream::Transitions(Box::new(step_pairs(steps))),
                (Stage::BatchSteps { size, shift, drop_remainder }, Stream::Episodes(eps)) => {
                    Stream::Batches(Box::new(batch_dataset(eps, *size, *shift, *drop_remainder)?))
                }
                _ => unreachable!("kinds are checked before building"),
            };
        }
        Ok(stream)
    }
}

/// Transitions from a flat step stream: consecutive pairs within one
/// episode, so an episode of `n` steps gives `n - 1`.
fn step_pairs<'a>(steps: Box<dyn Iterator<Item = transforms::Result<StepRecord>> + 'a>) -> impl Iterator<Item = transforms::Result<Transition>> + 'a {
    let mut prev: Option<StepRecord> = None;
    steps.filter_map(move |step| match step {
        Err(e) => Some(Err(e)),
        Ok(s) => {
            let out = match prev.take() {
                Some(p) if !p.is_last && !s.is_first => Some(Ok(Transition::from_pair(&p, &s))),
                _ => None,
            };
            prev = Some(s);
            out
        }
    })
}

fn truthy(tree: Option<&TensorTree>) -> bool {
    tree.is_some_and(|t| {
        t.leaves()
            .iter()
            .any(|(_, l)| l.data().to_f64().is_some_and(|v| v.iter().any(|&x| x != 0.0)))
    })
}

fn parse_alignment(name: &str) -> Result<Alignment> {
    name.parse()
        .map_err(|_| CliError::Pipeline(format!("unknown alignment {name:?}, expected sar or rsa")))
}

fn extent(d: Dim) -> usize {
    match d {
        Dim::Fixed(n) => n,
        Dim::Variable => unreachable!("variable extents are rejected first"),
    }
}

fn absorbing_spec(observation: &FeatureSpec) -> Result<FeatureSpec> {
    match observation {
        FeatureSpec::Leaf(l) if l.shape.len() == 1 && !l.has_variable_extent() => {
            let n = extent(l.shape[0]);
            Ok(FeatureSpec::leaf(l.dtype, &[n + 1]))
        }
        _ => Err(transforms::TransformError::NonVectorObservation("to_absorbing needs a rank-1 observation; flatten it first".into()).into()),
    }
}

fn flattened_spec(observation: &FeatureSpec, paths: &[String]) -> Result<FeatureSpec> {
    let mut dtype = None;
    let mut total = 0;
    for path in paths {
        let Some(FeatureSpec::Leaf(l)) = observation.get(path) else {
            return Err(transforms::TransformError::UnknownField(format!("observation/{path}")).into());
        };
        if l.has_variable_extent() {
            return Err(CliError::Pipeline(format!("observation/{path} has a variable extent")));
        }
        if *dtype.get_or_insert(l.dtype) != l.dtype {
            return Err(transforms::TransformError::UnsupportedDtype(format!("observation/{path} is {}", l.dtype)).into());
        }
        total += l.shape.iter().map(|&d| extent(d)).product::<usize>();
    }
    let dtype = dtype.ok_or_else(|| CliError::Pipeline("flatten_observation needs at least one path".into()))?;
    Ok(FeatureSpec::leaf(dtype, &[total]))
}

enum Stream<'a> {
    Episodes(Box<dyn Iterator<Item = EpisodeResult> + 'a>),
    Steps(Box<dyn Iterator<Item = transforms::Result<StepRecord>> + 'a>),
    Transitions(Box<dyn Iterator<Item = transforms::Result<Transition>> + 'a>),
    Batches(Box<dyn Iterator<Item = transforms::Result<Vec<StepRecord>>> + 'a>),
}

enum Source {
    File(Reader),
    Catalog(LoadedSplit),
}

impl Source {
    fn open(input: &InputSpec) -> Result<Source> {
        match (&input.path, &input.catalog) {
            (Some(p), None) => Ok(Source::File(Reader::open(p)?)),
            (None, Some(c)) => Ok(Source::Catalog(Catalog::open(&c.store).load(&c.dataset, &c.split)?)),
            _ => unreachable!("checked"),
        }
    }

    fn default_name(&self, i: usize) -> String {
        match self {
            Source::File(r) => r
                .path()
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| format!("dataset-{i}")),
            Source::Catalog(s) => format!("{}:{}", s.manifest().name, s.split()),
        }
    }

    fn schema(&self) -> Result<&DatasetSchema> {
        match self {
            Source::File(r) => Ok(r.schema()),
            Source::Catalog(s) => s.schema().ok_or_else(|| CliError::Pipeline("catalog split has no files".into())),
        }
    }

    fn alignment(&self) -> Alignment {
        match self {
            Source::File(r) => r.alignment(),
            Source::Catalog(s) => s.readers().first().map(Reader::alignment).unwrap_or_default(),
        }
    }

    fn episodes(&self) -> Box<dyn Iterator<Item = EpisodeResult> + '_> {
        match self {
            Source::File(r) => Box::new(transforms::episodes(r)),
            Source::Catalog(s) => Box::new(s.episodes()),
        }
    }
}

/// Where the final stream goes: counted, summarized and optionally written.
struct Sink<'p> {
    spec: &'p PipelineSpec,
    schema: DatasetSchema,
    alignment: Alignment,
    writer: Option<Writer>,
    stats: StatsAccumulator,
    hist_values: Vec<f64>,
}

impl<'p> Sink<'p> {
    fn new(spec: &'p PipelineSpec, schema: &DatasetSchema, alignment: Alignment) -> Result<Sink<'p>> {
        let writer = match &spec.output {
            Some(path) => {
                let mut meta = DatasetMetadata::new();
                meta.set_alignment(alignment);
                Some(Writer::create(path, schema, &meta, WriterOptions::default())?)
            }
            None => None,
        };
        for field in spec.report.stats.iter().chain(spec.report.histogram.as_ref().map(|h| &h.field)) {
            if field != RETURN_FIELD && !field.starts_with("next_observation") && schema.step_field(field).is_none() {
                return Err(transforms::TransformError::UnknownField(field.clone()).into());
            }
        }
        Ok(Sink {
            spec,
            schema: schema.clone(),
            alignment,
            writer,
            stats: StatsAccumulator::new(),
            hist_values: Vec::new(),
        })
    }

    fn wants_return(&self) -> bool {
        let report = &self.spec.report;
        report.stats.as_deref() == Some(RETURN_FIELD) || report.histogram.as_ref().is_some_and(|h| h.field == RETURN_FIELD)
    }

    fn record(&mut self, field_values: impl Fn(&Self, &str) -> Vec<f64>) {
        let spec = self.spec;
        if let Some(f) = &spec.report.stats {
            for x in field_values(self, f) {
                self.stats.push(x);
            }
        }
        if let Some(h) = &spec.report.histogram {
            let values = field_values(self, &h.field);
            self.hist_values.extend(values);
        }
    }

    fn step_values(&self, step: &StepRecord, field: &str) -> Vec<f64> {
        let Some((f, _)) = self.schema.step_field(field) else {
            return Vec::new();
        };
        if !self.alignment.is_defined(f, step.is_first, step.is_last) {
            return Vec::new();
        }
        leaf_values(step.select(field))
    }

    fn drain(&mut self, stream: Stream<'_>) -> Result<u64> {
        let mut items = 0;
        match stream {
            Stream::Episodes(eps) => {
                for ep in eps {
                    let ep = ep?;
                    items += 1;
                    let ret = match self.wants_return() {
                        true => transforms::episode_return(ep.steps.iter().cloned(), self.alignment, None)?,
                        false => 0.0,
                    };
                    self.record(|sink, field| {
                        if field == RETURN_FIELD {
                            vec![ret]
                        } else {
                            ep.steps.iter().flat_map(|s| sink.step_values(s, field)).collect()
                        }
                    });
                    if let Some(w) = self.writer.as_mut() {
                        for s in &ep.steps {
                            w.append_step(s)?;
                        }
                        w.end_episode(&ep.metadata)?;
                    }
                }
                if let Some(w) = self.writer.as_mut() {
                    w.finalize()?;
                }
            }
            Stream::Steps(steps) => {
                for s in steps {
                    let s = s?;
                    items += 1;
                    self.record(|sink, field| sink.step_values(&s, field));
                }
            }
            Stream::Transitions(ts) => {
                for t in ts {
                    let t = t?;
                    items += 1;
                    self.record(|_, field| transition_values(&t, field));
                }
            }
            Stream::Batches(bs) => {
                for b in bs {
                    b?;
                    items += 1;
                }
            }
        }
        Ok(items)
    }
}

fn leaf_values(tree: Option<&TensorTree>) -> Vec<f64> {
    tree.map(|t| t.leaves().iter().filter_map(|(_, l)| l.data().to_f64()).flatten().collect())
        .unwrap_or_default()
}

fn transition_values(t: &Transition, field: &str) -> Vec<f64> {
    let (head, rest) = field.split_once('/').unwrap_or((field, ""));
    let tree = match (head, StepField::parse(head)) {
        ("next_observation", _) => &t.next_observation,
        (_, Some(StepField::Observation)) => &t.observation,
        (_, Some(StepField::Action)) => &t.action,
        (_, Some(StepField::Reward)) => &t.reward,
        (_, Some(StepField::Discount)) => &t.discount,
        _ => return Vec::new(),
    };
    if rest.is_empty() {
        leaf_values(Some(tree))
    } else {
        leaf_values(tree.get(rest))
    }
}
