use std::collections::BTreeMap;

use epilogue::env::{Environment, GridAction, GridPickPlace, TIME_LIMIT};
use epilogue::model::{DType, DatasetSchema, FeatureSpec};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CollectError;

pub const DEFAULT_PAUSE_TIMEOUT_SECS: u64 = 120;
pub const MIN_FRAME_RATE_HZ: u32 = 1;
pub const MAX_FRAME_RATE_HZ: u32 = 60;
/// Name of the rendered-frame leaf in recorded step metadata.
pub const IMAGE_KEY: &str = "image";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StudyMode {
    /// The environment steps once per received action.
    Sync,
    /// The environment steps at a fixed rate with the latest action.
    Async { frame_rate_hz: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyState {
    Draft,
    Active,
    Archived,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Termination {
    /// Episodes are cut (not terminal) after this many steps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub name: String,
    /// Environment-specific settings; GridPickPlace reads `seed` and
    /// `fixed_length`.
    #[serde(default)]
    pub config: BTreeMap<String, Value>,
    #[serde(default)]
    pub termination: Termination,
    /// Action applied in async mode before the user sends one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noop_action: Option<Value>,
}

impl EnvConfig {
    pub fn gridpickplace() -> EnvConfig {
        EnvConfig {
            name: "gridpickplace".into(),
            config: BTreeMap::new(),
            termination: Termination::default(),
            noop_action: None,
        }
    }

    fn seed(&self) -> u64 {
        self.config.get("seed").and_then(Value::as_u64).unwrap_or(0)
    }

    pub fn noop(&self) -> Value {
        self.noop_action.clone().unwrap_or_else(|| Value::from(GridAction::Grab.id()))
    }

    /// A fresh environment, seeded from the config plus `salt`.
    pub fn build(&self, salt: u64) -> Result<Box<dyn Environment + Send>, CollectError> {
        match self.name.as_str() {
            "gridpickplace" => {
                let limit = self.termination.max_steps.unwrap_or(TIME_LIMIT);
                let env = GridPickPlace::new(self.seed().wrapping_add(salt)).with_time_limit(limit);
                let fixed = self.config.get("fixed_length").and_then(Value::as_bool).unwrap_or(false);
                Ok(Box::new(if fixed { env.with_fixed_length() } else { env }))
            }
            other => Err(CollectError::InvalidStudy(format!("unknown environment {other}"))),
        }
    }

    /// Schema of episodes recorded from this environment: rendered frames
    /// as step metadata plus the provenance fields as episode metadata.
    pub fn schema(&self) -> Result<DatasetSchema, CollectError> {
        let env = self.build(0)?;
        let frame = env.render()?;
        Ok(DatasetSchema {
            observation: env.observation_spec(),
            action: env.action_spec(),
            reward: env.reward_spec(),
            discount: env.discount_spec(),
            step_metadata: FeatureSpec::node([(IMAGE_KEY, FeatureSpec::leaf(DType::U8, frame.shape()))]),
            episode_metadata: episode_metadata_spec(),
        })
    }
}

/// `{episode_id, outcome, study_id, user_id}`.
pub fn episode_metadata_spec() -> FeatureSpec {
    FeatureSpec::node([
        ("episode_id", FeatureSpec::scalar(DType::I64)),
        ("outcome", FeatureSpec::scalar(DType::Bytes)),
        ("study_id", FeatureSpec::scalar(DType::I64)),
        ("user_id", FeatureSpec::scalar(DType::Bytes)),
    ])
}

/// Everything about a study that its author chooses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyDraft {
    pub name: String,
    #[serde(default)]
    pub instructions: String,
    pub environments: Vec<EnvConfig>,
    pub mode: StudyMode,
    #[serde(default = "default_pause_timeout")]
    pub pause_timeout_secs: u64,
    /// Keyboard key to action value, used by clients.
    #[serde(default)]
    pub input_map: BTreeMap<String, Value>,
}

fn default_pause_timeout() -> u64 {
    DEFAULT_PAUSE_TIMEOUT_SECS
}

impl StudyDraft {
    pub fn new(name: impl Into<String>, mode: StudyMode) -> StudyDraft {
        StudyDraft {
            name: name.into(),
            instructions: String::new(),
            environments: vec![EnvConfig::gridpickplace()],
            mode,
            pause_timeout_secs: DEFAULT_PAUSE_TIMEOUT_SECS,
            input_map: BTreeMap::new(),
        }
    }

    pub fn check_valid(&self) -> Result<(), CollectError> {
        if self.name.trim().is_empty() {
            return Err(CollectError::InvalidStudy("name must not be empty".into()));
        }
        if self.environments.is_empty() {
            return Err(CollectError::InvalidStudy("at least one environment is required".into()));
        }
        if let StudyMode::Async { frame_rate_hz } = self.mode {
            if !(MIN_FRAME_RATE_HZ..=MAX_FRAME_RATE_HZ).contains(&frame_rate_hz) {
                return Err(CollectError::InvalidStudy(format!(
                    "frame_rate_hz must lie in [{MIN_FRAME_RATE_HZ}, {MAX_FRAME_RATE_HZ}], got {frame_rate_hz}"
                )));
            }
        }
        if self.pause_timeout_secs == 0 {
            return Err(CollectError::InvalidStudy("pause_timeout_secs must be positive".into()));
        }
        for env in &self.environments {
            if env.termination.max_steps == Some(0) {
                return Err(CollectError::InvalidStudy("max_steps must be positive".into()));
            }
            let schema = env.schema()?;
            epilogue::model::tree_from_json(&schema.action, &env.noop())
                .map_err(|e| CollectError::InvalidStudy(format!("noop_action: {e}")))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Study {
    pub id: u64,
    pub state: StudyState,
    #[serde(flatten)]
    pub draft: StudyDraft,
}

impl Study {
    pub fn is_active(&self) -> bool {
        self.state == StudyState::Active
    }
}
