#![allow(dead_code)]

use std::sync::Arc;

use epilogue::env::{scripted_agent, Agent, AgentKind, AgentRng, Environment, GridAction};
use epilogue::model::TensorTree;
use epilogue_collect::protocol::ServerMessage;
use epilogue_collect::{Clock, EnvConfig, Event, FakeClock, Phase, SessionRuntime, Study, StudyDraft, StudyMode, StudyState, StudyStore};
use rand::SeedableRng;
use serde_json::{json, Value};
use tempfile::TempDir;

pub struct Fixture {
    pub dir: TempDir,
    pub store: Arc<StudyStore>,
    pub clock: FakeClock,
}

impl Fixture {
    pub fn new() -> Fixture {
        let dir = tempfile::tempdir().unwrap();
        let store = Arc::new(StudyStore::open(dir.path()).unwrap());
        Fixture {
            dir,
            store,
            clock: FakeClock::new(),
        }
    }

    pub fn study(&self, draft: StudyDraft) -> Study {
        let s = self.store.create_study(draft).unwrap();
        self.store.set_state(s.id, StudyState::Active).unwrap()
    }

    pub fn runtime(&self, study: &Study, session: u64) -> SessionRuntime {
        let clock: Arc<dyn Clock> = Arc::new(self.clock.clone());
        SessionRuntime::new(session, study.clone(), "tester", Arc::clone(&self.store), clock).unwrap()
    }
}

/// Sync study over one GridPickPlace environment.
pub fn sync_draft(max_steps: Option<u32>, fixed_length: bool) -> StudyDraft {
    let mut env = EnvConfig::gridpickplace();
    env.termination.max_steps = max_steps;
    env.config.insert("seed".into(), json!(11));
    if fixed_length {
        env.config.insert("fixed_length".into(), json!(true));
    }
    StudyDraft {
        environments: vec![env],
        ..StudyDraft::new("pick and place", StudyMode::Sync)
    }
}

pub fn async_draft(hz: u32) -> StudyDraft {
    StudyDraft {
        mode: StudyMode::Async { frame_rate_hz: hz },
        ..sync_draft(Some(100_000), true)
    }
}

pub fn last_phase(out: &[ServerMessage]) -> Option<Phase> {
    out.iter().rev().find_map(|m| match m {
        ServerMessage::State { phase, .. } => Some(*phase),
        _ => None,
    })
}

pub fn error_code(out: &[ServerMessage]) -> Option<String> {
    out.iter().find_map(|m| match m {
        ServerMessage::Error { code, .. } => Some(code.clone()),
        _ => None,
    })
}

pub fn frames(out: &[ServerMessage]) -> Vec<(u64, String, f64)> {
    out.iter()
        .filter_map(|m| match m {
            ServerMessage::Frame { step, image, reward } => Some((*step, image.clone(), *reward)),
            _ => None,
        })
        .collect()
}

pub fn episode_id(out: &[ServerMessage]) -> Option<u64> {
    out.iter().rev().find_map(|m| match m {
        ServerMessage::State { episode_id, .. } => *episode_id,
        _ => None,
    })
}

/// A copy of a session's environment, stepped in lockstep to choose
/// planner actions the way a scripted user would.
pub struct Mirror {
    env: Box<dyn Environment + Send>,
    obs: TensorTree,
    agent: Box<dyn Agent>,
    rng: AgentRng,
}

impl Mirror {
    pub fn new(cfg: &EnvConfig, session: u64) -> Mirror {
        let mut env = cfg.build(session).unwrap();
        let obs = env.reset().unwrap().observation;
        Mirror {
            env,
            obs,
            agent: Box::new(scripted_agent(AgentKind::PlannerEps(0.0)).unwrap()),
            rng: AgentRng::seed_from_u64(0),
        }
    }

    pub fn holding(&self) -> bool {
        self.obs.get("holding").and_then(TensorTree::as_leaf).and_then(|t| t.as_bool()).unwrap()
    }

    pub fn planned(&mut self) -> Value {
        let a = self.agent.act(&self.obs, &mut self.rng).unwrap();
        json!(a.as_leaf().unwrap().data().to_f64().unwrap()[0] as i64)
    }

    /// Applies `action` to the mirror and returns it as a protocol value.
    pub fn step(&mut self, action: Value) -> Value {
        let id = action.as_i64().unwrap();
        let ts = self.env.step(&GridAction::from_id(id).unwrap().to_tree()).unwrap();
        self.obs = ts.observation;
        action
    }

    /// The planner's next action, applied to the mirror.
    pub fn next(&mut self) -> Value {
        let a = self.planned();
        self.step(a)
    }
}

/// Drives `rt` to `phase` from a fresh session.
pub fn drive_to(rt: &mut SessionRuntime, phase: Phase) {
    let path: &[Event] = match phase {
        Phase::Idle => &[],
        Phase::Running => &[Event::StartEpisode],
        Phase::Paused => &[Event::StartEpisode, Event::Pause],
        Phase::AwaitingSave => &[Event::StartEpisode, Event::Action(json!(4)), Event::Action(json!(4))],
        Phase::Ended => &[Event::EndSession],
    };
    for e in path {
        let out = rt.handle(e.clone());
        assert_eq!(error_code(&out), None, "{e:?}");
    }
    assert_eq!(rt.phase(), phase);
}
