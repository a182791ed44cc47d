use epilogue::env::{
    generate, record, scripted_agent, Agent, AgentKind, AgentRng, EnvError, Environment, EpisodeBuffer, GridAction,
    GridPickPlace, StepType, TimeStep,
};
use epilogue::model::{validate_episode, Alignment, DType, DatasetSchema, FeatureSpec, Tensor, TensorTree};
use epilogue::store::{DatasetMetadata, Reader, Writer, WriterOptions};

/// Emits observation `t` at time `t`, reward `10 + t` and discount `1`,
/// ending after `len` transitions (terminal when `terminal`). Steps after a
/// `Last` restart the episode.
struct Counter {
    len: i64,
    terminal: bool,
    t: i64,
    needs_reset: bool,
    actions: Vec<i64>,
}

impl Counter {
    fn new(len: i64, terminal: bool) -> Counter {
        Counter {
            len,
            terminal,
            t: 0,
            needs_reset: true,
            actions: Vec::new(),
        }
    }
}

fn obs(t: i64) -> TensorTree {
    Tensor::scalar_i64(t).into()
}

fn f(x: f64) -> TensorTree {
    Tensor::scalar_f64(x).into()
}

impl Environment for Counter {
    fn observation_spec(&self) -> FeatureSpec {
        FeatureSpec::scalar(DType::I64)
    }
    fn action_spec(&self) -> FeatureSpec {
        FeatureSpec::scalar(DType::I64)
    }
    fn reset(&mut self) -> Result<TimeStep, EnvError> {
        self.t = 0;
        self.needs_reset = false;
        Ok(TimeStep::first(obs(0)))
    }
    fn step(&mut self, action: &TensorTree) -> Result<TimeStep, EnvError> {
        if self.needs_reset {
            return self.reset();
        }
        self.actions.push(action.as_leaf().unwrap().as_f64().unwrap() as i64);
        self.t += 1;
        let last = self.t == self.len;
        self.needs_reset = last;
        Ok(TimeStep {
            step_type: if last { StepType::Last } else { StepType::Mid },
            reward: Some(f(10.0 + self.t as f64)),
            discount: Some(f(if last && self.terminal { 0.0 } else { 1.0 })),
            observation: obs(self.t),
        })
    }
    fn render(&self) -> Result<Tensor, EnvError> {
        Tensor::zeros(DType::U8, vec![2, 2, 3]).map_err(|e| EnvError::InvalidArgument(e.to_string()))
    }
    fn seed(&mut self, _seed: u64) {}
}

fn counter_schema() -> DatasetSchema {
    DatasetSchema::new(FeatureSpec::scalar(DType::I64), FeatureSpec::scalar(DType::I64))
}

fn scalar(t: &TensorTree) -> f64 {
    t.as_leaf().unwrap().as_f64().unwrap()
}

fn act(a: i64) -> TensorTree {
    Tensor::scalar_i64(a).into()
}

#[test]
fn interactions_map_to_sar_steps() {
    let mut rec = record(Counter::new(3, true), EpisodeBuffer::new(counter_schema())).unwrap();
    rec.reset().unwrap();
    for a in [100, 101, 102] {
        rec.step(&act(a)).unwrap();
    }
    let eps = rec.sink().episodes();
    assert_eq!(eps.len(), 1);
    let steps = &eps[0].steps;
    assert_eq!(steps.len(), 4);
    for (t, s) in steps.iter().enumerate().take(3) {
        assert_eq!(scalar(&s.observation), t as f64);
        assert_eq!(scalar(&s.action), 100.0 + t as f64);
        assert_eq!(scalar(&s.reward), 11.0 + t as f64);
        assert_eq!(scalar(&s.discount), if t == 2 { 0.0 } else { 1.0 });
        assert_eq!((s.is_first, s.is_last, s.is_terminal), (t == 0, false, false));
    }
    let last = &steps[3];
    assert_eq!(scalar(&last.observation), 3.0);
    assert_eq!(scalar(&last.action), 0.0);
    assert_eq!(scalar(&last.reward), 0.0);
    assert!(last.is_last && last.is_terminal && !last.is_first);
    assert!(validate_episode(&eps[0], &counter_schema(), Alignment::Sar).is_ok());
}

#[test]
fn truncated_episode_is_last_but_not_terminal() {
    let mut rec = record(Counter::new(2, false), EpisodeBuffer::new(counter_schema())).unwrap();
    rec.reset().unwrap();
    rec.step(&act(1)).unwrap();
    rec.step(&act(2)).unwrap();
    let ep = &rec.sink().episodes()[0];
    assert_eq!(ep.len(), 3);
    assert!(ep.steps[2].is_last && !ep.steps[2].is_terminal);
    assert_eq!(scalar(&ep.steps[1].discount), 1.0);
}

#[test]
fn reset_mid_episode_closes_it_at_the_current_observation() {
    let mut rec = record(Counter::new(10, true), EpisodeBuffer::new(counter_schema())).unwrap();
    rec.reset().unwrap();
    rec.step(&act(1)).unwrap();
    rec.reset().unwrap();
    assert!(rec.in_episode());
    let ep = &rec.sink().episodes()[0];
    assert_eq!(ep.len(), 2);
    assert!(ep.steps[1].is_last && !ep.steps[1].is_terminal);
    assert_eq!(scalar(&ep.steps[1].observation), 1.0);
}

#[test]
fn step_after_last_restarts_like_reset() {
    let mut rec = record(Counter::new(1, true), EpisodeBuffer::new(counter_schema())).unwrap();
    rec.reset().unwrap();
    assert_eq!(rec.step(&act(5)).unwrap().step_type, StepType::Last);
    assert!(!rec.in_episode());
    assert_eq!(rec.step(&act(6)).unwrap().step_type, StepType::First);
    rec.step(&act(7)).unwrap();
    let eps = rec.sink().episodes();
    assert_eq!(eps.len(), 2);
    assert!(eps.iter().all(|e| e.len() == 2 && e.steps[0].is_first));
    assert_eq!(scalar(&eps[1].steps[0].action), 7.0);
}

#[test]
fn wrapper_passes_actions_and_timesteps_through() {
    let mut plain = Counter::new(4, true);
    let mut rec = record(Counter::new(4, true), EpisodeBuffer::new(counter_schema())).unwrap();
    assert_eq!(plain.reset().unwrap(), rec.reset().unwrap());
    for a in [3, 1, 4, 1, 5, 9] {
        assert_eq!(plain.step(&act(a)).unwrap(), rec.step(&act(a)).unwrap());
    }
    assert_eq!(plain.actions, rec.env().actions);
    assert_eq!(rec.observation_spec(), plain.observation_spec());
    assert_eq!(rec.render().unwrap(), plain.render().unwrap());
}

#[test]
fn metadata_callbacks_are_recorded() {
    let schema = counter_schema()
        .with_step_metadata(FeatureSpec::scalar(DType::I64))
        .with_episode_metadata(FeatureSpec::scalar(DType::F64));
    let mut calls = 0.0;
    let mut rec = record(Counter::new(2, true), EpisodeBuffer::new(schema.clone()))
        .unwrap()
        .with_step_metadata(|ts, _env| Tensor::scalar_i64(scalar(&ts.observation) as i64 * 7).into())
        .with_episode_metadata(move |env: &Counter| {
            calls += 1.0;
            Tensor::scalar_f64(calls * 100.0 + env.t as f64).into()
        });
    for _ in 0..2 {
        rec.reset().unwrap();
        rec.step(&act(0)).unwrap();
        rec.step(&act(0)).unwrap();
    }
    let eps = rec.sink().episodes();
    assert_eq!(eps.len(), 2);
    for (i, ep) in eps.iter().enumerate() {
        let md: Vec<f64> = ep.steps.iter().map(|s| scalar(&s.metadata)).collect();
        assert_eq!(md, [0.0, 7.0, 14.0]);
        assert_eq!(scalar(&ep.metadata), (i as f64 + 1.0) * 100.0 + 2.0);
        assert!(validate_episode(ep, &schema, Alignment::Sar).is_ok());
    }
}

#[test]
fn metadata_survives_the_file_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.rlds");
    let schema = counter_schema().with_step_metadata(FeatureSpec::node([("tag", FeatureSpec::scalar(DType::Bytes))]));
    let writer = Writer::create(&path, &schema, &DatasetMetadata::new(), WriterOptions::default()).unwrap();
    let mut rec = record(Counter::new(3, true), writer)
        .unwrap()
        .with_step_metadata(|ts, _| TensorTree::node([("tag", Tensor::scalar_bytes(format!("t{}", scalar(&ts.observation))).into())]));
    rec.reset().unwrap();
    for a in 0..3 {
        rec.step(&act(a)).unwrap();
    }
    let (_, mut writer) = rec.into_parts();
    writer.finalize().unwrap();
    let reader = Reader::open(&path).unwrap();
    let ep = reader.get_episode(0).unwrap();
    let tags: Vec<_> = ep.steps.iter().map(|s| s.metadata.get("tag").unwrap().clone()).collect();
    let want: Vec<TensorTree> = (0..4).map(|t| Tensor::scalar_bytes(format!("t{}", t as f64)).into()).collect();
    assert_eq!(tags, want);
}

#[test]
fn spec_mismatch_is_rejected() {
    let schema = DatasetSchema::new(FeatureSpec::scalar(DType::F32), FeatureSpec::scalar(DType::I64));
    let err = record(Counter::new(1, true), EpisodeBuffer::new(schema)).err().unwrap();
    assert_eq!(err.code(), "SCHEMA_MISMATCH");
}

/// Never moves, so episodes only end at the time limit.
struct Idle;

impl Agent for Idle {
    fn act(&mut self, _observation: &TensorTree, _rng: &mut AgentRng) -> Result<TensorTree, EnvError> {
        Ok(GridAction::Drop.to_tree())
    }
    fn name(&self) -> String {
        "idle".into()
    }
}

#[test]
fn time_limit_ends_without_terminal() {
    let mut buf = EpisodeBuffer::new(GridPickPlace::schema());
    let env = GridPickPlace::new(0).with_time_limit(5);
    let summary = generate(env, &mut Idle, 3, 11, &mut buf).unwrap();
    assert_eq!(summary.terminal_episodes, 0);
    for ep in buf.episodes() {
        assert_eq!(ep.len(), 6);
        let last = ep.steps.last().unwrap();
        assert!(last.is_last && !last.is_terminal);
        assert!(ep.steps[..5].iter().all(|s| scalar(&s.discount) == 1.0));
    }
}

fn generate_file(path: &std::path::Path, seed: u64, eps: f64, episodes: u64) -> epilogue::env::GenerateSummary {
    let schema = GridPickPlace::schema();
    let meta = DatasetMetadata::new().with("alignment", "sar").unwrap();
    let mut writer = Writer::create(path, &schema, &meta, WriterOptions::default()).unwrap();
    let mut agent = scripted_agent(AgentKind::PlannerEps(eps)).unwrap();
    let summary = generate(GridPickPlace::default(), &mut agent, episodes, seed, &mut writer).unwrap();
    writer.finalize().unwrap();
    summary
}

#[test]
fn generation_is_byte_identical_under_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    generate_file(&a, 7, 0.3, 20);
    generate_file(&b, 7, 0.3, 20);
    generate_file(&c, 8, 0.3, 20);
    let (a, b, c) = (std::fs::read(a).unwrap(), std::fs::read(b).unwrap(), std::fs::read(c).unwrap());
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn generated_episodes_validate_and_count_final_steps() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.rlds");
    let summary = generate_file(&path, 3, 0.2, 25);
    let reader = Reader::open(&path).unwrap();
    assert_eq!(reader.episode_count(), 25);
    assert_eq!(reader.total_steps(), summary.steps);
    let schema = GridPickPlace::schema();
    let mut transitions = 0;
    for (i, ep) in reader.iter_episodes().enumerate() {
        let ep = ep.unwrap();
        assert!(validate_episode(&ep, &schema, Alignment::Sar).is_ok());
        assert_eq!(ep.metadata.get("episode_id").unwrap().as_leaf().unwrap().as_f64(), Some(i as f64));
        transitions += ep.len() as u64 - 1;
    }
    assert_eq!(summary.steps, transitions + 25);
}

#[test]
fn greedy_planner_always_succeeds() {
    let mut buf = EpisodeBuffer::new(GridPickPlace::schema());
    let mut agent = scripted_agent(AgentKind::PlannerEps(0.0)).unwrap();
    let summary = generate(GridPickPlace::default(), &mut agent, 100, 5, &mut buf).unwrap();
    assert_eq!(summary.terminal_episodes, 100);
    assert_eq!(summary.total_reward, 100);
    for ep in buf.episodes() {
        let rewards: f64 = ep.steps.iter().map(|s| scalar(&s.reward)).sum();
        assert_eq!(rewards, 1.0);
        assert!(ep.ends_terminal());
        // Manhattan distances on an 8x8 grid bound the plan length.
        assert!(ep.len() <= 2 * 14 + 3);
    }
}

#[test]
fn zero_episodes_is_invalid() {
    let mut buf = EpisodeBuffer::new(GridPickPlace::schema());
    let mut agent = scripted_agent(AgentKind::UniformRandom).unwrap();
    let err = generate(GridPickPlace::default(), &mut agent, 0, 1, &mut buf).unwrap_err();
    assert_eq!(err.code(), "INVALID_ARGUMENT");
}
