//! Environments, the recording wrapper that turns their timesteps into
//! stored steps, and scripted agents for synthetic datasets.

mod agents;
mod generate;
mod gridpickplace;
mod recorder;

use thiserror::Error;

use crate::model::{DType, FeatureSpec, Tensor, TensorTree};
use crate::store::StoreError;

pub use agents::{scripted_agent, Agent, AgentKind, AgentRng, ScriptedAgent};
pub use generate::{generate, id_metadata_spec, GenerateSummary};
pub use gridpickplace::{GridAction, GridPickPlace, GRID_SIZE, RENDER_CELL_PX, TIME_LIMIT};
pub use recorder::{record, EpisodeBuffer, RecordingEnvironment, StepMetadataFn, EpisodeMetadataFn, StepSink};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StepType {
    First,
    Mid,
    Last,
}

/// What an environment returns from `reset` and `step`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeStep {
    pub step_type: StepType,
    /// `None` on `First`.
    pub reward: Option<TensorTree>,
    /// `None` on `First`; zero on a `Last` step that reached a terminal state.
    pub discount: Option<TensorTree>,
    pub observation: TensorTree,
}

impl TimeStep {
    pub fn first(observation: TensorTree) -> TimeStep {
        TimeStep {
            step_type: StepType::First,
            reward: None,
            discount: None,
            observation,
        }
    }

    pub fn is_first(&self) -> bool {
        self.step_type == StepType::First
    }

    pub fn is_last(&self) -> bool {
        self.step_type == StepType::Last
    }

    /// A `Last` step whose discount is entirely zero.
    pub fn is_terminal(&self) -> bool {
        self.is_last()
            && self.discount.as_ref().is_some_and(|d| {
                d.leaves()
                    .iter()
                    .all(|(_, t)| t.data().to_f64().is_some_and(|v| v.iter().all(|&x| x == 0.0)))
            })
    }
}

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid action: {0}")]
    InvalidAction(String),
    #[error("environment protocol violation: {0}")]
    Protocol(String),
    #[error("environment spec does not match sink schema: {0}")]
    SchemaMismatch(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl EnvError {
    pub fn code(&self) -> &'static str {
        match self {
            EnvError::InvalidArgument(_) => "INVALID_ARGUMENT",
            EnvError::InvalidAction(_) => "INVALID_ACTION",
            EnvError::Protocol(_) => "ENV_PROTOCOL",
            EnvError::SchemaMismatch(_) => "SCHEMA_MISMATCH",
            EnvError::Store(e) => e.code(),
        }
    }
}

/// A stateful, resettable environment.
///
/// After a `Last` timestep, the next `step` call must behave like `reset`
/// and return a `First` timestep.
pub trait Environment {
    fn observation_spec(&self) -> FeatureSpec;
    fn action_spec(&self) -> FeatureSpec;

    fn reward_spec(&self) -> FeatureSpec {
        FeatureSpec::scalar(DType::F64)
    }

    fn discount_spec(&self) -> FeatureSpec {
        FeatureSpec::scalar(DType::F64)
    }

    fn reset(&mut self) -> Result<TimeStep, EnvError>;
    fn step(&mut self, action: &TensorTree) -> Result<TimeStep, EnvError>;
    /// RGB image, u8 of shape `[H, W, 3]`.
    fn render(&self) -> Result<Tensor, EnvError>;
    fn seed(&mut self, seed: u64);
}

impl<E: Environment + ?Sized> Environment for Box<E> {
    fn observation_spec(&self) -> FeatureSpec {
        (**self).observation_spec()
    }
    fn action_spec(&self) -> FeatureSpec {
        (**self).action_spec()
    }
    fn reward_spec(&self) -> FeatureSpec {
        (**self).reward_spec()
    }
    fn discount_spec(&self) -> FeatureSpec {
        (**self).discount_spec()
    }
    fn reset(&mut self) -> Result<TimeStep, EnvError> {
        (**self).reset()
    }
    fn step(&mut self, action: &TensorTree) -> Result<TimeStep, EnvError> {
        (**self).step(action)
    }
    fn render(&self) -> Result<Tensor, EnvError> {
        (**self).render()
    }
    fn seed(&mut self, seed: u64) {
        (**self).seed(seed)
    }
}
