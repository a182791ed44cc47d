use super::{EnvError, Environment, StepType, TimeStep};
use crate::model::{canonical_fill, DatasetSchema, EpisodeRecord, FeatureSpec, StepRecord, Tensor, TensorTree};
use crate::store::{StoreError, Writer};

/// Destination for recorded steps: a record file or an in-memory buffer.
pub trait StepSink {
    fn schema(&self) -> &DatasetSchema;
    fn append_step(&mut self, step: &StepRecord) -> Result<(), StoreError>;
    fn end_episode(&mut self, metadata: &TensorTree) -> Result<(), StoreError>;
}

impl StepSink for Writer {
    fn schema(&self) -> &DatasetSchema {
        Writer::schema(self)
    }
    fn append_step(&mut self, step: &StepRecord) -> Result<(), StoreError> {
        Writer::append_step(self, step)
    }
    fn end_episode(&mut self, metadata: &TensorTree) -> Result<(), StoreError> {
        Writer::end_episode(self, metadata)
    }
}

impl<S: StepSink + ?Sized> StepSink for &mut S {
    fn schema(&self) -> &DatasetSchema {
        (**self).schema()
    }
    fn append_step(&mut self, step: &StepRecord) -> Result<(), StoreError> {
        (**self).append_step(step)
    }
    fn end_episode(&mut self, metadata: &TensorTree) -> Result<(), StoreError> {
        (**self).end_episode(metadata)
    }
}

/// Collects recorded episodes in memory.
#[derive(Debug, Clone)]
pub struct EpisodeBuffer {
    schema: DatasetSchema,
    current: Vec<StepRecord>,
    episodes: Vec<EpisodeRecord>,
}

impl EpisodeBuffer {
    pub fn new(schema: DatasetSchema) -> EpisodeBuffer {
        EpisodeBuffer {
            schema,
            current: Vec::new(),
            episodes: Vec::new(),
        }
    }

    pub fn current_steps(&self) -> &[StepRecord] {
        &self.current
    }

    pub fn episodes(&self) -> &[EpisodeRecord] {
        &self.episodes
    }

    pub fn take_episodes(&mut self) -> Vec<EpisodeRecord> {
        std::mem::take(&mut self.episodes)
    }

    /// Drops any steps of an uncommitted episode.
    pub fn discard_current(&mut self) {
        self.current.clear();
    }
}

impl StepSink for EpisodeBuffer {
    fn schema(&self) -> &DatasetSchema {
        &self.schema
    }

    fn append_step(&mut self, step: &StepRecord) -> Result<(), StoreError> {
        if self.current.is_empty() != step.is_first {
            return Err(StoreError::FlagSequence("is_first must mark exactly the first step".into()));
        }
        self.current.push(step.clone());
        Ok(())
    }

    fn end_episode(&mut self, metadata: &TensorTree) -> Result<(), StoreError> {
        if !self.current.last().is_some_and(|s| s.is_last) {
            return Err(StoreError::DanglingEpisode);
        }
        let steps = std::mem::take(&mut self.current);
        self.episodes.push(EpisodeRecord::new(steps, metadata.clone()));
        Ok(())
    }
}

pub type StepMetadataFn<E> = Box<dyn FnMut(&TimeStep, &E) -> TensorTree + Send>;
pub type EpisodeMetadataFn<E> = Box<dyn FnMut(&E) -> TensorTree + Send>;

/// The observation step waiting for its action and outcome.
struct Pending {
    observation: TensorTree,
    metadata: TensorTree,
    is_first: bool,
}

/// Wraps an environment and logs every interaction as SAR steps.
///
/// `reset` opens a pending step at the first observation; each `step(a)`
/// completes the pending step with `a` and the returned reward and
/// discount, then opens a new pending step at the next observation. On a
/// `Last` timestep that final observation is committed with `is_last` set
/// (and `is_terminal` iff the discount is zero) and the episode is closed.
pub struct RecordingEnvironment<E, S> {
    env: E,
    sink: S,
    step_metadata_fn: Option<StepMetadataFn<E>>,
    episode_metadata_fn: Option<EpisodeMetadataFn<E>>,
    pending: Option<Pending>,
    action_fill: TensorTree,
    reward_fill: TensorTree,
    discount_fill: TensorTree,
    step_metadata_fill: TensorTree,
    episode_metadata_fill: TensorTree,
}

/// Wraps `env` so that its interactions are written to `sink`.
pub fn record<E: Environment, S: StepSink>(env: E, sink: S) -> Result<RecordingEnvironment<E, S>, EnvError> {
    RecordingEnvironment::new(env, sink)
}

impl<E: Environment, S: StepSink> RecordingEnvironment<E, S> {
    pub fn new(env: E, sink: S) -> Result<Self, EnvError> {
        let schema = sink.schema().clone();
        let checks: [(&str, FeatureSpec, &FeatureSpec); 4] = [
            ("observation", env.observation_spec(), &schema.observation),
            ("action", env.action_spec(), &schema.action),
            ("reward", env.reward_spec(), &schema.reward),
            ("discount", env.discount_spec(), &schema.discount),
        ];
        for (name, got, want) in checks {
            if &got != want {
                return Err(EnvError::SchemaMismatch(format!("{name} spec differs from sink schema")));
            }
        }
        Ok(RecordingEnvironment {
            env,
            sink,
            step_metadata_fn: None,
            episode_metadata_fn: None,
            pending: None,
            action_fill: canonical_fill(&schema.action),
            reward_fill: canonical_fill(&schema.reward),
            discount_fill: canonical_fill(&schema.discount),
            step_metadata_fill: canonical_fill(&schema.step_metadata),
            episode_metadata_fill: canonical_fill(&schema.episode_metadata),
        })
    }

    /// Called once per stored step, at the time its observation is produced.
    pub fn with_step_metadata(mut self, f: impl FnMut(&TimeStep, &E) -> TensorTree + Send + 'static) -> Self {
        self.step_metadata_fn = Some(Box::new(f));
        self
    }

    /// Called once per episode, when it is committed.
    pub fn with_episode_metadata(mut self, f: impl FnMut(&E) -> TensorTree + Send + 'static) -> Self {
        self.episode_metadata_fn = Some(Box::new(f));
        self
    }

    pub fn env(&self) -> &E {
        &self.env
    }

    pub fn env_mut(&mut self) -> &mut E {
        &mut self.env
    }

    pub fn sink(&self) -> &S {
        &self.sink
    }

    pub fn sink_mut(&mut self) -> &mut S {
        &mut self.sink
    }

    pub fn into_parts(self) -> (E, S) {
        (self.env, self.sink)
    }

    pub fn in_episode(&self) -> bool {
        self.pending.is_some()
    }

    pub fn reset(&mut self) -> Result<TimeStep, EnvError> {
        self.truncate_episode()?;
        let ts = self.env.reset()?;
        if !ts.is_first() {
            return Err(EnvError::Protocol("reset did not return a first timestep".into()));
        }
        self.open(&ts);
        Ok(ts)
    }

    pub fn step(&mut self, action: &TensorTree) -> Result<TimeStep, EnvError> {
        let ts = self.env.step(action)?;
        match ts.step_type {
            StepType::First => {
                self.truncate_episode()?;
                self.open(&ts);
            }
            StepType::Mid | StepType::Last => {
                let pending = self
                    .pending
                    .take()
                    .ok_or_else(|| EnvError::Protocol("transition without a preceding first timestep".into()))?;
                let reward = ts
                    .reward
                    .clone()
                    .ok_or_else(|| EnvError::Protocol("non-first timestep without reward".into()))?;
                let discount = ts
                    .discount
                    .clone()
                    .ok_or_else(|| EnvError::Protocol("non-first timestep without discount".into()))?;
                self.sink.append_step(&StepRecord {
                    observation: pending.observation,
                    action: action.clone(),
                    reward,
                    discount,
                    is_first: pending.is_first,
                    is_last: false,
                    is_terminal: false,
                    metadata: pending.metadata,
                })?;
                self.open(&ts);
                if ts.is_last() {
                    self.close(ts.is_terminal())?;
                }
            }
        }
        Ok(ts)
    }

    /// Ends the running episode at its current observation, flagged
    /// `is_last` but not terminal. Returns whether an episode was open.
    pub fn truncate_episode(&mut self) -> Result<bool, EnvError> {
        if self.pending.is_none() {
            return Ok(false);
        }
        self.close(false)?;
        Ok(true)
    }

    pub fn render(&self) -> Result<Tensor, EnvError> {
        self.env.render()
    }

    fn open(&mut self, ts: &TimeStep) {
        let metadata = match self.step_metadata_fn.as_mut() {
            Some(f) => f(ts, &self.env),
            None => self.step_metadata_fill.clone(),
        };
        self.pending = Some(Pending {
            observation: ts.observation.clone(),
            metadata,
            is_first: ts.is_first(),
        });
    }

    fn close(&mut self, terminal: bool) -> Result<(), EnvError> {
        let pending = self.pending.take().expect("close called with a pending step");
        self.sink.append_step(&StepRecord {
            observation: pending.observation,
            action: self.action_fill.clone(),
            reward: self.reward_fill.clone(),
            discount: self.discount_fill.clone(),
            is_first: pending.is_first,
            is_last: true,
            is_terminal: terminal,
            metadata: pending.metadata,
        })?;
        let metadata = match self.episode_metadata_fn.as_mut() {
            Some(f) => f(&self.env),
            None => self.episode_metadata_fill.clone(),
        };
        self.sink.end_episode(&metadata)?;
        Ok(())
    }
}

impl<E: Environment, S: StepSink> Environment for RecordingEnvironment<E, S> {
    fn observation_spec(&self) -> FeatureSpec {
        self.env.observation_spec()
    }
    fn action_spec(&self) -> FeatureSpec {
        self.env.action_spec()
    }
    fn reward_spec(&self) -> FeatureSpec {
        self.env.reward_spec()
    }
    fn discount_spec(&self) -> FeatureSpec {
        self.env.discount_spec()
    }
    fn reset(&mut self) -> Result<TimeStep, EnvError> {
        RecordingEnvironment::reset(self)
    }
    fn step(&mut self, action: &TensorTree) -> Result<TimeStep, EnvError> {
        RecordingEnvironment::step(self, action)
    }
    fn render(&self) -> Result<Tensor, EnvError> {
        self.env.render()
    }
    fn seed(&mut self, seed: u64) {
        self.env.seed(seed)
    }
}
