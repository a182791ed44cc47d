//! Studies and their recorded episodes on disk.
//!
//! ```text
//! <root>/studies/<study>/study.json
//! <root>/studies/<study>/episodes.json      index with outcomes and tags
//! <root>/studies/<study>/episodes/<id>.rlds one record file per episode
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use epilogue::model::{
    canonical_fill, validate_episode, Alignment, DType, DatasetSchema, EpisodeRecord, FeatureSpec, StepField, StepRecord,
    Tensor, TensorTree,
};
use epilogue::store::{DatasetMetadata, Reader, Writer, WriterOptions};
use epilogue::transforms::truncate_after_condition;
use serde::{Deserialize, Serialize};

use crate::session::Outcome;
use crate::study::{Study, StudyDraft, StudyState};
use crate::{CollectError, Result};

/// Prefix of exported tag fields in step and episode metadata.
pub const TAG_PREFIX: &str = "tag:";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TagValue {
    Bool(bool),
    Text(String),
}

impl TagValue {
    fn as_text(&self) -> String {
        match self {
            TagValue::Bool(b) => b.to_string(),
            TagValue::Text(s) => s.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TagScope {
    Episode,
    Step(u64),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeTags {
    #[serde(default)]
    pub episode: BTreeMap<String, TagValue>,
    /// Tag name to the step indices carrying it.
    #[serde(default)]
    pub steps: BTreeMap<String, BTreeSet<u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeEntry {
    pub id: u64,
    pub study_id: u64,
    pub user_id: String,
    pub session_id: u64,
    pub env_index: usize,
    pub outcome: Outcome,
    /// Stored steps, including the final observation step.
    pub steps: u64,
    pub total_reward: f64,
    #[serde(default)]
    pub tags: EpisodeTags,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportFilter {
    #[serde(default = "completed_only")]
    pub outcomes: Vec<Outcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub episode_ids: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub env_index: Option<usize>,
}

fn completed_only() -> Vec<Outcome> {
    vec![Outcome::Completed]
}

impl Default for ExportFilter {
    fn default() -> Self {
        ExportFilter {
            outcomes: completed_only(),
            episode_ids: None,
            env_index: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportOptions {
    #[serde(default)]
    pub strip_images: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncate_on_tag: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExportSummary {
    pub episode_ids: Vec<u64>,
    pub steps: u64,
    pub bytes: u64,
}

#[derive(Debug, Default)]
struct Inner {
    studies: BTreeMap<u64, Study>,
    episodes: BTreeMap<u64, EpisodeEntry>,
    next_study: u64,
    next_episode: u64,
}

/// Single-writer, multi-reader store of studies and episodes.
#[derive(Debug)]
pub struct StudyStore {
    root: PathBuf,
    inner: RwLock<Inner>,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| CollectError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CollectError::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| CollectError::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| CollectError::InvalidArgument(format!("{}: {e}", path.display())))
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    epilogue::doc::to_canonical_bytes(value).expect("store documents serialize")
}

fn check_tag_name(name: &str) -> Result<()> {
    if name.is_empty() || name.contains('/') {
        return Err(CollectError::InvalidTag(format!("bad tag name {name:?}")));
    }
    Ok(())
}

fn reward_of(step: &StepRecord) -> f64 {
    step.reward
        .leaves()
        .iter()
        .filter_map(|(_, t)| t.data().to_f64())
        .flatten()
        .sum()
}

/// Sum of the defined SAR rewards of an episode.
pub fn total_reward(episode: &EpisodeRecord) -> f64 {
    episode
        .steps
        .iter()
        .filter(|s| Alignment::Sar.is_defined(StepField::Reward, s.is_first, s.is_last))
        .map(reward_of)
        .sum()
}

impl StudyStore {
    /// Opens (creating if needed) the store rooted at `root`.
    pub fn open(root: impl Into<PathBuf>) -> Result<StudyStore> {
        let root = root.into();
        let studies_dir = root.join("studies");
        fs::create_dir_all(&studies_dir).map_err(|e| CollectError::io(&studies_dir, e))?;
        let mut inner = Inner::default();
        for entry in fs::read_dir(&studies_dir).map_err(|e| CollectError::io(&studies_dir, e))? {
            let dir = entry.map_err(|e| CollectError::io(&studies_dir, e))?.path();
            let study_file = dir.join("study.json");
            if !study_file.is_file() {
                continue;
            }
            let study: Study = read_json(&study_file)?;
            let index = dir.join("episodes.json");
            if index.is_file() {
                let entries: Vec<EpisodeEntry> = read_json(&index)?;
                for e in entries {
                    inner.next_episode = inner.next_episode.max(e.id + 1);
                    inner.episodes.insert(e.id, e);
                }
            }
            inner.next_study = inner.next_study.max(study.id + 1);
            inner.studies.insert(study.id, study);
        }
        inner.next_study = inner.next_study.max(1);
        inner.next_episode = inner.next_episode.max(1);
        Ok(StudyStore {
            root,
            inner: RwLock::new(inner),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn study_dir(&self, id: u64) -> PathBuf {
        self.root.join("studies").join(id.to_string())
    }

    fn episode_path(&self, study: u64, episode: u64) -> PathBuf {
        self.study_dir(study).join("episodes").join(format!("{episode}.rlds"))
    }

    fn save_study(&self, study: &Study) -> Result<()> {
        let dir = self.study_dir(study.id);
        fs::create_dir_all(dir.join("episodes")).map_err(|e| CollectError::io(&dir, e))?;
        write_atomic(&dir.join("study.json"), &to_json(study))
    }

    fn save_index(&self, inner: &Inner, study: u64) -> Result<()> {
        let entries: Vec<&EpisodeEntry> = inner.episodes.values().filter(|e| e.study_id == study).collect();
        write_atomic(&self.study_dir(study).join("episodes.json"), &to_json(&entries))
    }

    pub fn create_study(&self, draft: StudyDraft) -> Result<Study> {
        draft.check_valid()?;
        let mut inner = self.inner.write().expect("store lock");
        let study = Study {
            id: inner.next_study,
            state: StudyState::Draft,
            draft,
        };
        self.save_study(&study)?;
        inner.next_study += 1;
        inner.studies.insert(study.id, study.clone());
        Ok(study)
    }

    /// Replaces the configuration of a draft study.
    pub fn update_study(&self, id: u64, draft: StudyDraft) -> Result<Study> {
        draft.check_valid()?;
        let mut inner = self.inner.write().expect("store lock");
        let study = inner.studies.get_mut(&id).ok_or(CollectError::UnknownStudy(id))?;
        if study.state != StudyState::Draft {
            return Err(CollectError::StudyImmutable(id));
        }
        study.draft = draft;
        let study = study.clone();
        self.save_study(&study)?;
        Ok(study)
    }

    /// Moves a study forward: draft to active or archived, active to archived.
    pub fn set_state(&self, id: u64, state: StudyState) -> Result<Study> {
        let mut inner = self.inner.write().expect("store lock");
        let study = inner.studies.get_mut(&id).ok_or(CollectError::UnknownStudy(id))?;
        let allowed = matches!(
            (study.state, state),
            (StudyState::Draft, StudyState::Active)
                | (StudyState::Draft, StudyState::Archived)
                | (StudyState::Active, StudyState::Archived)
        ) || study.state == state;
        if !allowed {
            return Err(CollectError::InvalidArgument(format!(
                "study {id} cannot go from {:?} to {:?}",
                study.state, state
            )));
        }
        study.state = state;
        let study = study.clone();
        self.save_study(&study)?;
        Ok(study)
    }

    pub fn study(&self, id: u64) -> Result<Study> {
        let inner = self.inner.read().expect("store lock");
        inner.studies.get(&id).cloned().ok_or(CollectError::UnknownStudy(id))
    }

    pub fn studies(&self) -> Vec<Study> {
        self.inner.read().expect("store lock").studies.values().cloned().collect()
    }

    /// Schema of episodes recorded in environment `env_index` of a study.
    pub fn schema(&self, study: &Study, env_index: usize) -> Result<DatasetSchema> {
        let env = study.draft.environments.get(env_index).ok_or(CollectError::IndexOutOfRange {
            index: env_index as u64,
            len: study.draft.environments.len() as u64,
        })?;
        env.schema()
    }

    /// Validates and writes a finished episode, returning its index entry.
    /// The provenance metadata is filled in here.
    pub fn persist_episode(
        &self,
        study_id: u64,
        user_id: &str,
        session_id: u64,
        env_index: usize,
        outcome: Outcome,
        episode: &EpisodeRecord,
    ) -> Result<EpisodeEntry> {
        let study = self.study(study_id)?;
        let schema = self.schema(&study, env_index)?;
        let mut inner = self.inner.write().expect("store lock");
        let id = inner.next_episode;
        let metadata = TensorTree::node([
            ("episode_id", Tensor::scalar_i64(id as i64).into()),
            ("outcome", Tensor::scalar_bytes(outcome.name()).into()),
            ("study_id", Tensor::scalar_i64(study_id as i64).into()),
            ("user_id", Tensor::scalar_bytes(user_id).into()),
        ]);
        let record = EpisodeRecord::new(episode.steps.clone(), metadata);
        let report = validate_episode(&record, &schema, Alignment::Sar);
        if !report.is_ok() {
            return Err(CollectError::InvalidArgument(format!(
                "episode fails validation: {}",
                report.tags().join(", ")
            )));
        }
        let path = self.episode_path(study_id, id);
        let meta = DatasetMetadata::new().with("alignment", "sar")?;
        let mut writer = Writer::create(&path, &schema, &meta, WriterOptions::default())?;
        for step in &record.steps {
            writer.append_step(step)?;
        }
        writer.end_episode(&record.metadata)?;
        writer.finalize()?;

        let entry = EpisodeEntry {
            id,
            study_id,
            user_id: user_id.to_string(),
            session_id,
            env_index,
            outcome,
            steps: record.len() as u64,
            total_reward: total_reward(&record),
            tags: EpisodeTags::default(),
        };
        inner.next_episode += 1;
        inner.episodes.insert(id, entry.clone());
        self.save_index(&inner, study_id)?;
        Ok(entry)
    }

    pub fn episodes(&self, study_id: u64) -> Result<Vec<EpisodeEntry>> {
        let inner = self.inner.read().expect("store lock");
        if !inner.studies.contains_key(&study_id) {
            return Err(CollectError::UnknownStudy(study_id));
        }
        Ok(inner.episodes.values().filter(|e| e.study_id == study_id).cloned().collect())
    }

    pub fn entry(&self, episode_id: u64) -> Result<EpisodeEntry> {
        let inner = self.inner.read().expect("store lock");
        inner.episodes.get(&episode_id).cloned().ok_or(CollectError::UnknownEpisode(episode_id))
    }

    pub fn episode_file(&self, episode_id: u64) -> Result<PathBuf> {
        let e = self.entry(episode_id)?;
        Ok(self.episode_path(e.study_id, e.id))
    }

    pub fn read_episode(&self, episode_id: u64) -> Result<EpisodeRecord> {
        let reader = Reader::open(self.episode_file(episode_id)?)?;
        Ok(reader.get_episode(0)?)
    }

    pub fn read_step(&self, episode_id: u64, index: u64) -> Result<StepRecord> {
        let entry = self.entry(episode_id)?;
        if index >= entry.steps {
            return Err(CollectError::IndexOutOfRange {
                index,
                len: entry.steps,
            });
        }
        let reader = Reader::open(self.episode_path(entry.study_id, entry.id))?;
        Ok(reader.get_step(0, index)?)
    }

    /// Per-step rewards, zero where undefined.
    pub fn reward_profile(&self, episode_id: u64) -> Result<Vec<f64>> {
        let ep = self.read_episode(episode_id)?;
        Ok(ep
            .steps
            .iter()
            .map(|s| {
                if Alignment::Sar.is_defined(StepField::Reward, s.is_first, s.is_last) {
                    reward_of(s)
                } else {
                    0.0
                }
            })
            .collect())
    }

    /// Sets (or, for a step tag set to `false`, clears) a tag.
    pub fn tag(&self, episode_id: u64, scope: TagScope, name: &str, value: TagValue) -> Result<EpisodeEntry> {
        check_tag_name(name)?;
        let mut inner = self.inner.write().expect("store lock");
        let entry = inner.episodes.get_mut(&episode_id).ok_or(CollectError::UnknownEpisode(episode_id))?;
        match scope {
            TagScope::Episode => {
                entry.tags.episode.insert(name.to_string(), value);
            }
            TagScope::Step(index) => {
                if index >= entry.steps {
                    return Err(CollectError::IndexOutOfRange {
                        index,
                        len: entry.steps,
                    });
                }
                let on = match value {
                    TagValue::Bool(b) => b,
                    TagValue::Text(_) => return Err(CollectError::InvalidTag("step tags are boolean".into())),
                };
                let set = entry.tags.steps.entry(name.to_string()).or_default();
                if on {
                    set.insert(index);
                } else {
                    set.remove(&index);
                    if set.is_empty() {
                        entry.tags.steps.remove(name);
                    }
                }
            }
        }
        let entry = entry.clone();
        self.save_index(&inner, entry.study_id)?;
        Ok(entry)
    }

    /// Episodes of `study_id` selected by `filter`, in id order.
    pub fn select(&self, study_id: u64, filter: &ExportFilter) -> Result<Vec<EpisodeEntry>> {
        let mut out = self.episodes(study_id)?;
        out.retain(|e| {
            filter.outcomes.contains(&e.outcome)
                && filter.episode_ids.as_ref().is_none_or(|ids| ids.contains(&e.id))
                && filter.env_index.is_none_or(|i| i == e.env_index)
        });
        Ok(out)
    }

    /// Writes the selected episodes to a new record file at `out`.
    ///
    /// Step tags become bool step metadata `tag:<name>`; episode tags become
    /// episode metadata `tag:<name>`, bool when every value is bool and
    /// text otherwise. With `truncate_on_tag`, each episode is cut after the
    /// first step carrying that tag; the cut step becomes the last step of
    /// the exported episode.
    pub fn export(&self, study_id: u64, filter: &ExportFilter, options: &ExportOptions, out: &Path) -> Result<ExportSummary> {
        if let Some(tag) = &options.truncate_on_tag {
            check_tag_name(tag)?;
        }
        let study = self.study(study_id)?;
        let entries = self.select(study_id, filter)?;
        if entries.is_empty() {
            return Err(CollectError::NoMatchingEpisodes);
        }
        let base = self.schema(&study, entries[0].env_index)?;
        for e in &entries[1..] {
            if self.schema(&study, e.env_index)? != base {
                return Err(CollectError::InvalidArgument(
                    "selected episodes come from environments with different schemas; filter by env_index".into(),
                ));
            }
        }

        let step_tags: BTreeSet<&str> = entries.iter().flat_map(|e| e.tags.steps.keys().map(String::as_str)).collect();
        let mut episode_tags: BTreeMap<&str, bool> = BTreeMap::new();
        for e in &entries {
            for (k, v) in &e.tags.episode {
                let is_bool = matches!(v, TagValue::Bool(_));
                *episode_tags.entry(k.as_str()).or_insert(true) &= is_bool;
            }
        }

        let mut step_md = match if options.strip_images { base.step_metadata.without_images() } else { base.step_metadata.clone() } {
            FeatureSpec::Node(m) => m,
            leaf => BTreeMap::from([("value".to_string(), leaf)]),
        };
        for name in &step_tags {
            step_md.insert(format!("{TAG_PREFIX}{name}"), FeatureSpec::scalar(DType::Bool));
        }
        let mut episode_md = match base.episode_metadata.clone() {
            FeatureSpec::Node(m) => m,
            leaf => BTreeMap::from([("value".to_string(), leaf)]),
        };
        for (name, all_bool) in &episode_tags {
            let dtype = if *all_bool { DType::Bool } else { DType::Bytes };
            episode_md.insert(format!("{TAG_PREFIX}{name}"), FeatureSpec::scalar(dtype));
        }
        let schema = DatasetSchema {
            step_metadata: FeatureSpec::Node(step_md),
            episode_metadata: FeatureSpec::Node(episode_md),
            ..base.clone()
        };

        let meta = DatasetMetadata::new()
            .with("alignment", "sar")?
            .with("study_id", study_id)?
            .with("study_name", study.draft.name.clone())?;
        let mut writer = Writer::create(out, &schema, &meta, WriterOptions::default())?;
        let mut steps_written = 0;
        for entry in &entries {
            let episode = self.read_episode(entry.id)?;
            let steps = export_steps(episode.steps, entry, &schema, &base, options.truncate_on_tag.as_deref());
            for step in &steps {
                writer.append_step(step)?;
            }
            steps_written += steps.len() as u64;
            writer.end_episode(&export_episode_metadata(&episode.metadata, entry, &schema, &episode_tags))?;
        }
        let summary = writer.finalize()?;
        Ok(ExportSummary {
            episode_ids: entries.iter().map(|e| e.id).collect(),
            steps: steps_written,
            bytes: summary.bytes,
        })
    }
}

fn node_value(tree: &TensorTree, key: &str) -> Option<TensorTree> {
    match tree {
        TensorTree::Node(m) => m.get(key).cloned(),
        leaf if key == "value" => Some(leaf.clone()),
        _ => None,
    }
}

/// Rebuilds every step's metadata for the export schema and applies the
/// tag truncation.
fn export_steps(
    steps: Vec<StepRecord>,
    entry: &EpisodeEntry,
    schema: &DatasetSchema,
    base: &DatasetSchema,
    truncate_on: Option<&str>,
) -> Vec<StepRecord> {
    let FeatureSpec::Node(spec) = &schema.step_metadata else {
        unreachable!("export step metadata is a node");
    };
    let full_len = steps.len();
    let tagged = |name: &str, j: u64| entry.tags.steps.get(name).is_some_and(|s| s.contains(&j));
    let mut out: Vec<StepRecord> = steps
        .into_iter()
        .enumerate()
        .map(|(j, mut s)| {
            let md = spec
                .iter()
                .map(|(k, leaf)| {
                    let v = match k.strip_prefix(TAG_PREFIX) {
                        Some(name) => Tensor::scalar_bool(tagged(name, j as u64)).into(),
                        None => node_value(&s.metadata, k).unwrap_or_else(|| canonical_fill(leaf)),
                    };
                    (k.clone(), v)
                })
                .collect();
            s.metadata = TensorTree::Node(md);
            s
        })
        .collect();
    if let Some(name) = truncate_on {
        let mut j = 0u64;
        out = truncate_after_condition(out, |_: &StepRecord| {
            let hit = tagged(name, j);
            j += 1;
            hit
        })
        .collect();
        if out.len() < full_len {
            let last = out.last_mut().expect("truncation keeps the matching step");
            last.is_last = true;
            last.is_terminal = false;
            last.action = canonical_fill(&base.action);
            last.reward = canonical_fill(&base.reward);
            last.discount = canonical_fill(&base.discount);
        }
    }
    out
}

fn export_episode_metadata(
    recorded: &TensorTree,
    entry: &EpisodeEntry,
    schema: &DatasetSchema,
    episode_tags: &BTreeMap<&str, bool>,
) -> TensorTree {
    let FeatureSpec::Node(spec) = &schema.episode_metadata else {
        unreachable!("export episode metadata is a node");
    };
    let md = spec
        .iter()
        .map(|(k, leaf)| {
            let v = match k.strip_prefix(TAG_PREFIX) {
                Some(name) => {
                    let value = entry.tags.episode.get(name);
                    if episode_tags.get(name).copied().unwrap_or(true) {
                        let b = matches!(value, Some(TagValue::Bool(true)));
                        Tensor::scalar_bool(b).into()
                    } else {
                        Tensor::scalar_bytes(value.map(TagValue::as_text).unwrap_or_default()).into()
                    }
                }
                None => node_value(recorded, k).unwrap_or_else(|| canonical_fill(leaf)),
            };
            (k.clone(), v)
        })
        .collect();
    TensorTree::Node(md)
}
