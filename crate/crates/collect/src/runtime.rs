use std::sync::Arc;
use std::time::Duration;

use epilogue::env::{EpisodeBuffer, Environment, RecordingEnvironment, TimeStep};
use epilogue::model::{tree_from_json, FeatureSpec, TensorTree};

use crate::clock::Clock;
use crate::frame::encode_frame;
use crate::protocol::ServerMessage;
use crate::session::{apply, Effect, Event, Outcome, Phase};
use crate::store::{StudyStore, TagScope, TagValue};
use crate::study::{Study, StudyMode, IMAGE_KEY};
use crate::{CollectError, Result};

type Recorder = RecordingEnvironment<Box<dyn Environment + Send>, EpisodeBuffer>;

const NANOS_PER_SEC: u128 = 1_000_000_000;

/// One user's live session: the environment, its recorder and the episode
/// state machine.
///
/// In async mode the environment advances `floor(t * hz)` times during `t`
/// seconds of running time, each time with the most recent action (or the
/// configured no-op before the first one). Time only counts while
/// `Running`.
pub struct SessionRuntime {
    id: u64,
    study: Study,
    user: String,
    store: Arc<StudyStore>,
    clock: Arc<dyn Clock>,
    env_index: usize,
    rec: Recorder,
    action_spec: FeatureSpec,
    phase: Phase,
    pause_deadline: Option<Duration>,
    action: TensorTree,
    env_steps: u64,
    ran_before: Duration,
    resumed_at: Option<Duration>,
    last_episode: Option<u64>,
}

fn recorder(study: &Study, env_index: usize, salt: u64) -> Result<(Recorder, FeatureSpec, TensorTree)> {
    let cfg = &study.draft.environments[env_index];
    let schema = cfg.schema()?;
    let action_spec = schema.action.clone();
    let noop = tree_from_json(&action_spec, &cfg.noop())?;
    let rec = RecordingEnvironment::new(cfg.build(salt)?, EpisodeBuffer::new(schema))?.with_step_metadata(
        |_: &TimeStep, env: &Box<dyn Environment + Send>| {
            let image = env.render().expect("environment renders");
            TensorTree::node([(IMAGE_KEY, image.into())])
        },
    );
    Ok((rec, action_spec, noop))
}

fn reward_sum(tree: &TensorTree) -> f64 {
    tree.leaves().iter().filter_map(|(_, t)| t.data().to_f64()).flatten().sum()
}

impl SessionRuntime {
    /// Opens a session on an active study, starting in `Idle` on its first
    /// environment.
    pub fn new(id: u64, study: Study, user: &str, store: Arc<StudyStore>, clock: Arc<dyn Clock>) -> Result<SessionRuntime> {
        if !study.is_active() {
            return Err(CollectError::StudyNotActive(study.id));
        }
        let (rec, action_spec, noop) = recorder(&study, 0, id)?;
        Ok(SessionRuntime {
            id,
            study,
            user: user.to_string(),
            store,
            clock,
            env_index: 0,
            rec,
            action_spec,
            phase: Phase::Idle,
            pause_deadline: None,
            action: noop,
            env_steps: 0,
            ran_before: Duration::ZERO,
            resumed_at: None,
            last_episode: None,
        })
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn study(&self) -> &Study {
        &self.study
    }

    pub fn user(&self) -> &str {
        &self.user
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn env_index(&self) -> usize {
        self.env_index
    }

    /// Environment steps taken in the current episode.
    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    /// Id of the most recently persisted episode.
    pub fn last_episode(&self) -> Option<u64> {
        self.last_episode
    }

    fn hz(&self) -> Option<u32> {
        match self.study.draft.mode {
            StudyMode::Sync => None,
            StudyMode::Async { frame_rate_hz } => Some(frame_rate_hz),
        }
    }

    pub fn state(&self) -> ServerMessage {
        ServerMessage::State {
            phase: self.phase,
            session: self.id,
            env: self.env_index,
            outcome: None,
            episode_id: None,
        }
    }

    /// Applies a client event; failures come back as an `error` message and
    /// leave the phase unchanged.
    pub fn handle(&mut self, event: Event) -> Vec<ServerMessage> {
        let mut out = Vec::new();
        if let Err(e) = self.catch_up(&mut out).and_then(|_| self.dispatch(event, &mut out)) {
            out.push(ServerMessage::error(&e));
        }
        out
    }

    /// Advances time-driven behaviour: async ticks and the pause timeout.
    pub fn poll(&mut self) -> Vec<ServerMessage> {
        let mut out = Vec::new();
        let result = self.catch_up(&mut out).and_then(|_| {
            match self.pause_deadline {
                Some(deadline) if self.phase == Phase::Paused && self.clock.now() >= deadline => {
                    self.dispatch(Event::PauseTimeout, &mut out)
                }
                _ => Ok(()),
            }
        });
        if let Err(e) = result {
            out.push(ServerMessage::error(&e));
        }
        out
    }

    /// Clock time at which [`poll`](Self::poll) next has work to do.
    pub fn next_wakeup(&self) -> Option<Duration> {
        match self.phase {
            Phase::Paused => self.pause_deadline,
            Phase::Running => {
                let hz = self.hz()? as u128;
                let resumed = self.resumed_at?;
                let k = self.env_steps as u128 + 1;
                let at = (k * NANOS_PER_SEC).div_ceil(hz);
                let before = self.ran_before.as_nanos();
                Some(resumed + Duration::from_nanos(at.saturating_sub(before) as u64))
            }
            _ => None,
        }
    }

    /// Pauses a running episode, as when the client goes away.
    pub fn detach(&mut self) -> Vec<ServerMessage> {
        if self.phase == Phase::Running {
            self.handle(Event::Pause)
        } else {
            Vec::new()
        }
    }

    /// Tags a persisted episode, by default the last one of this session.
    pub fn tag(&self, scope: TagScope, name: &str, value: TagValue, episode: Option<u64>) -> Result<ServerMessage> {
        let id = episode.or(self.last_episode).ok_or_else(|| CollectError::InvalidTag("no episode to tag".into()))?;
        let entry = self.store.entry(id)?;
        if entry.study_id != self.study.id {
            return Err(CollectError::UnknownEpisode(id));
        }
        self.store.tag(id, scope, name, value)?;
        Ok(ServerMessage::State {
            phase: self.phase,
            session: self.id,
            env: self.env_index,
            outcome: Some(entry.outcome),
            episode_id: Some(id),
        })
    }

    fn running_time(&self, now: Duration) -> Duration {
        match self.resumed_at {
            Some(r) => self.ran_before + now.saturating_sub(r),
            None => self.ran_before,
        }
    }

    fn freeze(&mut self) {
        let now = self.clock.now();
        self.ran_before = self.running_time(now);
        self.resumed_at = None;
    }

    fn catch_up(&mut self, out: &mut Vec<ServerMessage>) -> Result<()> {
        let Some(hz) = self.hz() else { return Ok(()) };
        while self.phase == Phase::Running {
            let due = self.running_time(self.clock.now()).as_nanos() * hz as u128 / NANOS_PER_SEC;
            if self.env_steps as u128 >= due {
                break;
            }
            let action = self.action.clone();
            self.step_env(&action, out)?;
        }
        Ok(())
    }

    fn frame(&self, reward: f64, out: &mut Vec<ServerMessage>) -> Result<()> {
        out.push(ServerMessage::Frame {
            step: self.env_steps,
            image: encode_frame(&self.rec.render()?)?,
            reward,
        });
        Ok(())
    }

    fn step_env(&mut self, action: &TensorTree, out: &mut Vec<ServerMessage>) -> Result<()> {
        let ts = self.rec.step(action)?;
        self.env_steps += 1;
        self.frame(ts.reward.as_ref().map(reward_sum).unwrap_or(0.0), out)?;
        if ts.is_last() {
            let (next, _) = apply(self.phase, &Event::EpisodeEnd)?;
            self.phase = next;
            self.freeze();
            out.push(ServerMessage::EpisodeEnd { steps: self.env_steps });
            out.push(self.state());
        }
        Ok(())
    }

    fn dispatch(&mut self, event: Event, out: &mut Vec<ServerMessage>) -> Result<()> {
        let action = match &event {
            Event::Action(v) => Some(
                tree_from_json(&self.action_spec, v).map_err(|e| CollectError::InvalidAction(e.to_string()))?,
            ),
            _ => None,
        };
        if let Event::SelectEnv(i) = event {
            let len = self.study.draft.environments.len();
            if i >= len {
                return Err(CollectError::IndexOutOfRange {
                    index: i as u64,
                    len: len as u64,
                });
            }
        }
        let before = self.phase;
        let (next, effect) = apply(before, &event)?;
        match effect {
            Effect::BeginEpisode => {
                self.rec.reset()?;
                self.phase = next;
                self.env_steps = 0;
                self.action = tree_from_json(&self.action_spec, &self.study.draft.environments[self.env_index].noop())?;
                self.ran_before = Duration::ZERO;
                self.resumed_at = Some(self.clock.now());
                self.frame(0.0, out)?;
                out.push(self.state());
            }
            Effect::Act => {
                let action = action.expect("action events carry a value");
                if self.hz().is_some() {
                    self.action = action;
                } else {
                    self.step_env(&action, out)?;
                }
            }
            Effect::ArmDeadline => {
                self.freeze();
                self.phase = next;
                self.pause_deadline =
                    Some(self.clock.now() + Duration::from_secs(self.study.draft.pause_timeout_secs));
                out.push(self.state());
            }
            Effect::DisarmDeadline => {
                self.phase = next;
                self.pause_deadline = None;
                self.resumed_at = Some(self.clock.now());
                out.push(self.state());
            }
            Effect::SwitchEnv => {
                let Event::SelectEnv(i) = event else {
                    unreachable!("only select_env switches environments");
                };
                let (rec, spec, noop) = recorder(&self.study, i, self.id)?;
                self.rec = rec;
                self.action_spec = spec;
                self.action = noop;
                self.env_index = i;
                self.phase = next;
                out.push(self.state());
            }
            Effect::Finish(outcome) => {
                let episode_id = self.finish(before, outcome)?;
                self.phase = next;
                out.push(ServerMessage::State {
                    phase: self.phase,
                    session: self.id,
                    env: self.env_index,
                    outcome: Some(outcome),
                    episode_id,
                });
            }
            Effect::None => {
                self.phase = next;
                out.push(self.state());
            }
        }
        Ok(())
    }

    /// Closes the current episode and stores it unless it was rejected.
    fn finish(&mut self, from: Phase, outcome: Outcome) -> Result<Option<u64>> {
        self.freeze();
        self.pause_deadline = None;
        if from != Phase::AwaitingSave {
            self.rec.truncate_episode()?;
        }
        let episode = self.rec.sink_mut().take_episodes().pop();
        let Some(episode) = episode.filter(|_| outcome.is_persisted()) else {
            return Ok(None);
        };
        let entry = self
            .store
            .persist_episode(self.study.id, &self.user, self.id, self.env_index, outcome, &episode)?;
        self.last_episode = Some(entry.id);
        Ok(Some(entry.id))
    }
}
