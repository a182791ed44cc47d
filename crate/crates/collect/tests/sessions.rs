mod common;

use std::sync::Arc;
use std::time::Duration;

use common::*;
use epilogue::model::{validate_episode, Alignment, TensorTree};
use epilogue_collect::session::transition;
use epilogue_collect::{Clock, Event, EventKind, Hub, Outcome, Phase};
use serde_json::json;

fn event_of(kind: EventKind) -> Event {
    match kind {
        EventKind::StartEpisode => Event::StartEpisode,
        EventKind::Action => Event::Action(json!(4)),
        EventKind::Pause => Event::Pause,
        EventKind::Unpause => Event::Unpause,
        EventKind::PauseTimeout => Event::PauseTimeout,
        EventKind::Cancel => Event::Cancel,
        EventKind::EpisodeEnd => Event::EpisodeEnd,
        EventKind::Save => Event::Save { confirm: true },
        EventKind::SelectEnv => Event::SelectEnv(0),
        EventKind::EndSession => Event::EndSession,
    }
}

/// Every legal (phase, event) pair and where it leads; all others are illegal.
fn expected(phase: Phase, kind: EventKind) -> Option<Phase> {
    use EventKind as E;
    use Phase as P;
    match (phase, kind) {
        (P::Idle, E::StartEpisode) => Some(P::Running),
        (P::Idle, E::SelectEnv) => Some(P::Idle),
        (P::Idle, E::EndSession) => Some(P::Ended),
        (P::Running, E::Action) => Some(P::Running),
        (P::Running, E::Pause) => Some(P::Paused),
        (P::Running, E::Cancel) => Some(P::Idle),
        (P::Running, E::EpisodeEnd) => Some(P::AwaitingSave),
        (P::Running, E::EndSession) => Some(P::Ended),
        (P::Paused, E::Unpause) => Some(P::Running),
        (P::Paused, E::PauseTimeout) => Some(P::Ended),
        (P::Paused, E::Cancel) => Some(P::Idle),
        (P::Paused, E::EndSession) => Some(P::Ended),
        (P::AwaitingSave, E::Save) => Some(P::Idle),
        (P::AwaitingSave, E::EndSession) => Some(P::Ended),
        _ => None,
    }
}

#[test]
fn every_phase_event_pair_matches_the_table() {
    let fx = Fixture::new();
    let study = fx.study(sync_draft(Some(2), false));
    let mut session = 1;
    let mut legal = 0;
    for phase in Phase::ALL {
        for kind in EventKind::ALL {
            let want = expected(phase, kind);
            assert_eq!(transition(phase, kind).ok().map(|(p, _)| p), want, "{phase} {kind:?}");

            let mut rt = fx.runtime(&study, session);
            session += 1;
            drive_to(&mut rt, phase);
            let out = rt.handle(event_of(kind));
            match want {
                Some(next) => {
                    legal += 1;
                    assert_eq!(error_code(&out), None, "{phase} {kind:?}");
                    assert_eq!(rt.phase(), next, "{phase} {kind:?}");
                }
                None => {
                    assert_eq!(error_code(&out).as_deref(), Some("ILLEGAL_EVENT"), "{phase} {kind:?}");
                    assert_eq!(rt.phase(), phase, "{phase} {kind:?}");
                }
            }
        }
    }
    assert_eq!(legal, 14);
}

#[test]
fn sync_steps_once_per_action() {
    let fx = Fixture::new();
    let study = fx.study(sync_draft(None, false));
    let mut rt = fx.runtime(&study, 1);
    let out = rt.handle(Event::StartEpisode);
    assert_eq!(frames(&out).iter().map(|f| f.0).collect::<Vec<_>>(), vec![0]);
    for (i, a) in [0, 1, 2].into_iter().enumerate() {
        let out = rt.handle(Event::Action(json!(a)));
        let f = frames(&out);
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].0, i as u64 + 1);
    }
    assert_eq!(rt.env_steps(), 3);
    let out = rt.handle(Event::Cancel);
    let id = episode_id(&out).unwrap();
    let entry = fx.store.entry(id).unwrap();
    assert_eq!((entry.outcome, entry.steps), (Outcome::Canceled, 4));
    let ep = fx.store.read_episode(id).unwrap();
    let last = ep.steps.last().unwrap();
    assert!(last.is_last && !last.is_terminal);
    let actions: Vec<TensorTree> = ep.steps[..3].iter().map(|s| s.action.clone()).collect();
    let want: Vec<TensorTree> = [0, 1, 2].map(|a| epilogue::model::Tensor::scalar_i64(a).into()).to_vec();
    assert_eq!(actions, want);
}

fn play_to_end(rt: &mut epilogue_collect::SessionRuntime, mirror: &mut Mirror) -> Vec<epilogue_collect::ServerMessage> {
    let mut all = rt.handle(Event::StartEpisode);
    while rt.phase() == Phase::Running {
        let out = rt.handle(Event::Action(mirror.next()));
        assert_eq!(error_code(&out), None);
        all.extend(out);
    }
    all
}

#[test]
fn completed_episodes_carry_provenance_and_validate() {
    let fx = Fixture::new();
    let study = fx.study(sync_draft(None, false));
    let mut rt = fx.runtime(&study, 1);
    let mut mirror = Mirror::new(&study.draft.environments[0], 1);
    let out = play_to_end(&mut rt, &mut mirror);
    assert_eq!(rt.phase(), Phase::AwaitingSave);
    let end = out.iter().find_map(|m| match m {
        epilogue_collect::ServerMessage::EpisodeEnd { steps } => Some(*steps),
        _ => None,
    });
    assert_eq!(end, Some(rt.env_steps()));
    let out = rt.handle(Event::Save { confirm: true });
    assert_eq!(last_phase(&out), Some(Phase::Idle));
    let id = episode_id(&out).unwrap();

    let entry = fx.store.entry(id).unwrap();
    assert_eq!(entry.outcome, Outcome::Completed);
    assert_eq!(entry.total_reward, 1.0);
    let ep = fx.store.read_episode(id).unwrap();
    assert_eq!(ep.len() as u64, end.unwrap() + 1);
    assert!(ep.steps.last().unwrap().is_terminal);
    let schema = fx.store.schema(&study, 0).unwrap();
    assert!(validate_episode(&ep, &schema, Alignment::Sar).is_ok());
    let md = |k: &str| ep.metadata.get(k).and_then(TensorTree::as_leaf).cloned().unwrap();
    assert_eq!(md("outcome").as_bytes().unwrap(), b"completed");
    assert_eq!(md("user_id").as_bytes().unwrap(), b"tester");
    assert_eq!(md("study_id").as_f64().unwrap(), study.id as f64);
    assert_eq!(md("episode_id").as_f64().unwrap(), id as f64);
}

#[test]
fn rejected_episodes_are_not_stored() {
    let fx = Fixture::new();
    let study = fx.study(sync_draft(Some(3), false));
    let mut rt = fx.runtime(&study, 1);
    drive_to(&mut rt, Phase::Running);
    for _ in 0..3 {
        rt.handle(Event::Action(json!(4)));
    }
    assert_eq!(rt.phase(), Phase::AwaitingSave);
    let out = rt.handle(Event::Save { confirm: false });
    assert_eq!(episode_id(&out), None);
    assert!(fx.store.episodes(study.id).unwrap().is_empty());
    assert_eq!(rt.phase(), Phase::Idle);
}

#[test]
fn outcome_paths() {
    let fx = Fixture::new();
    let study = fx.study(sync_draft(Some(50), false));
    let outcome_of = |out: &[epilogue_collect::ServerMessage]| {
        let id = episode_id(out).expect("episode persisted");
        fx.store.entry(id).unwrap().outcome
    };

    let mut rt = fx.runtime(&study, 1);
    drive_to(&mut rt, Phase::Paused);
    assert_eq!(outcome_of(&rt.handle(Event::Cancel)), Outcome::Canceled);
    assert_eq!(rt.phase(), Phase::Idle);

    let mut rt = fx.runtime(&study, 2);
    drive_to(&mut rt, Phase::Running);
    rt.handle(Event::Action(json!(0)));
    assert_eq!(outcome_of(&rt.handle(Event::EndSession)), Outcome::Abandoned);

    let mut rt = fx.runtime(&study, 3);
    drive_to(&mut rt, Phase::Paused);
    assert_eq!(outcome_of(&rt.handle(Event::EndSession)), Outcome::Abandoned);

    let mut rt = fx.runtime(&study, 4);
    drive_to(&mut rt, Phase::Paused);
    fx.clock.advance(Duration::from_secs(119));
    assert!(rt.poll().is_empty());
    assert_eq!(rt.phase(), Phase::Paused);
    assert_eq!(rt.next_wakeup(), Some(fx.clock.now() + Duration::from_secs(1)));
    fx.clock.advance(Duration::from_secs(1));
    let out = rt.poll();
    assert_eq!(rt.phase(), Phase::Ended);
    assert_eq!(outcome_of(&out), Outcome::Abandoned);

    let mut rt = fx.runtime(&study, 5);
    drive_to(&mut rt, Phase::Running);
    for _ in 0..50 {
        rt.handle(Event::Action(json!(4)));
    }
    assert_eq!(rt.phase(), Phase::AwaitingSave);
    let out = rt.handle(Event::EndSession);
    assert_eq!(outcome_of(&out), Outcome::Abandoned);
    assert_eq!(fx.store.entry(episode_id(&out).unwrap()).unwrap().steps, 51);

    let schema = fx.store.schema(&study, 0).unwrap();
    for e in fx.store.episodes(study.id).unwrap() {
        let ep = fx.store.read_episode(e.id).unwrap();
        assert!(validate_episode(&ep, &schema, Alignment::Sar).is_ok());
        assert!(!ep.steps.last().unwrap().is_terminal);
    }
}

#[test]
fn unpause_disarms_the_timeout() {
    let fx = Fixture::new();
    let study = fx.study(sync_draft(None, false));
    let mut rt = fx.runtime(&study, 1);
    drive_to(&mut rt, Phase::Paused);
    fx.clock.advance(Duration::from_secs(100));
    rt.handle(Event::Unpause);
    fx.clock.advance(Duration::from_secs(100));
    assert!(rt.poll().is_empty());
    assert_eq!(rt.phase(), Phase::Running);
    assert_eq!(rt.next_wakeup(), None);
}

#[test]
fn async_steps_follow_floor_of_elapsed_time() {
    for (hz, millis) in [(1u32, 2500u64), (15, 2500), (60, 1000), (7, 3333), (30, 10), (13, 0), (60, 12_345)] {
        let fx = Fixture::new();
        let study = fx.study(async_draft(hz));
        let mut rt = fx.runtime(&study, 1);
        rt.handle(Event::StartEpisode);
        let mut left = millis;
        let mut chunk = 1;
        let mut frames_seen = 0;
        while left > 0 {
            let d = chunk.min(left);
            fx.clock.advance(Duration::from_millis(d));
            frames_seen += frames(&rt.poll()).len();
            left -= d;
            chunk = chunk * 3 % 997 + 1;
        }
        let want = millis * hz as u64 / 1000;
        assert_eq!(rt.env_steps(), want, "hz {hz} T {millis}ms");
        assert_eq!(frames_seen as u64, want);
    }
}

#[test]
fn async_time_only_counts_while_running() {
    let fx = Fixture::new();
    let study = fx.study(async_draft(10));
    let mut rt = fx.runtime(&study, 1);
    rt.handle(Event::StartEpisode);
    fx.clock.advance(Duration::from_secs(1));
    rt.handle(Event::Pause);
    assert_eq!(rt.env_steps(), 10);
    fx.clock.advance(Duration::from_secs(5));
    rt.poll();
    assert_eq!(rt.env_steps(), 10);
    rt.handle(Event::Unpause);
    fx.clock.advance(Duration::from_millis(550));
    rt.poll();
    assert_eq!(rt.env_steps(), 15);
}

#[test]
fn async_wakeup_points_at_the_next_tick() {
    let fx = Fixture::new();
    let study = fx.study(async_draft(3));
    let mut rt = fx.runtime(&study, 1);
    assert_eq!(rt.next_wakeup(), None);
    rt.handle(Event::StartEpisode);
    let first = rt.next_wakeup().unwrap();
    assert_eq!(first, Duration::from_nanos(333_333_334));
    fx.clock.set(first - Duration::from_nanos(1));
    assert!(rt.poll().is_empty());
    fx.clock.set(first);
    assert_eq!(frames(&rt.poll()).len(), 1);
    assert_eq!(rt.next_wakeup().unwrap(), Duration::from_nanos(666_666_667));
}

#[test]
fn async_holds_the_latest_action_after_the_noop() {
    let fx = Fixture::new();
    let study = fx.study(async_draft(10));
    let mut rt = fx.runtime(&study, 1);
    rt.handle(Event::StartEpisode);
    fx.clock.advance(Duration::from_millis(300));
    rt.handle(Event::Action(json!(3)));
    fx.clock.advance(Duration::from_millis(200));
    rt.poll();
    let id = episode_id(&rt.handle(Event::Cancel)).unwrap();
    let ep = fx.store.read_episode(id).unwrap();
    let actions: Vec<f64> = ep.steps[..5]
        .iter()
        .map(|s| s.action.as_leaf().unwrap().data().to_f64().unwrap()[0])
        .collect();
    assert_eq!(actions, vec![4.0, 4.0, 4.0, 3.0, 3.0]);
    assert_eq!(ep.len(), 6);
}

#[test]
fn bad_actions_do_not_step() {
    let fx = Fixture::new();
    let study = fx.study(sync_draft(None, false));
    let mut rt = fx.runtime(&study, 1);
    drive_to(&mut rt, Phase::Running);
    for bad in [json!("up"), json!([1, 2]), json!(null), json!(1.5)] {
        let out = rt.handle(Event::Action(bad.clone()));
        assert_eq!(error_code(&out).as_deref(), Some("INVALID_ACTION"), "{bad}");
    }
    assert_eq!((rt.env_steps(), rt.phase()), (0, Phase::Running));
}

#[test]
fn select_env_checks_the_index() {
    let fx = Fixture::new();
    let mut draft = sync_draft(None, false);
    let mut second = draft.environments[0].clone();
    second.config.insert("seed".into(), json!(99));
    draft.environments.push(second);
    let study = fx.study(draft);
    let mut rt = fx.runtime(&study, 1);
    let out = rt.handle(Event::SelectEnv(2));
    assert_eq!(error_code(&out).as_deref(), Some("INDEX_OUT_OF_RANGE"));
    rt.handle(Event::SelectEnv(1));
    assert_eq!(rt.env_index(), 1);
    let a = frames(&rt.handle(Event::StartEpisode));
    let mut other = fx.runtime(&study, 1);
    let b = frames(&other.handle(Event::StartEpisode));
    assert_ne!(a[0].1, b[0].1, "different seeds render different layouts");
}

#[test]
fn sessions_need_an_active_study() {
    let fx = Fixture::new();
    let draft = fx.store.create_study(sync_draft(None, false)).unwrap();
    let clock: Arc<dyn Clock> = Arc::new(fx.clock.clone());
    let err = epilogue_collect::SessionRuntime::new(1, draft.clone(), "u", Arc::clone(&fx.store), clock.clone());
    assert_eq!(err.err().unwrap().code(), "STUDY_NOT_ACTIVE");

    let hub = Hub::new(Arc::clone(&fx.store), clock);
    let mut conn = hub.connect();
    let out = conn.handle_text(r#"{"v":1,"type":"start_episode"}"#);
    assert_eq!(error_code(&out).as_deref(), Some("NO_SESSION"));
    let out = conn.handle_text(&format!(r#"{{"v":1,"type":"start_session","study":{}}}"#, draft.id));
    assert_eq!(error_code(&out).as_deref(), Some("STUDY_NOT_ACTIVE"));
    let out = conn.handle_text(r#"{"v":1,"type":"start_session","study":777}"#);
    assert_eq!(error_code(&out).as_deref(), Some("UNKNOWN_STUDY"));
    let out = conn.handle_text(r#"{"v":3,"type":"pause"}"#);
    assert_eq!(error_code(&out).as_deref(), Some("UNSUPPORTED_VERSION"));
}

#[test]
fn disconnect_pauses_and_the_session_can_resume() {
    let fx = Fixture::new();
    let study = fx.study(sync_draft(None, false));
    let hub = Hub::new(Arc::clone(&fx.store), Arc::new(fx.clock.clone()));
    let mut conn = hub.connect();
    let start = format!(r#"{{"v":1,"type":"start_session","study":{},"user":"ana"}}"#, study.id);
    conn.handle_text(&start);
    let session = conn.session_id().unwrap();
    conn.handle_text(r#"{"v":1,"type":"start_episode"}"#);
    conn.handle_text(r#"{"v":1,"type":"action","value":1}"#);
    drop(conn);

    let mut other = hub.connect();
    let wrong_user = format!(r#"{{"v":1,"type":"start_session","study":{},"user":"bo","session":{session}}}"#, study.id);
    assert_eq!(error_code(&other.handle_text(&wrong_user)).as_deref(), Some("UNKNOWN_SESSION"));
    let resume = format!(r#"{{"v":1,"type":"start_session","study":{},"user":"ana","session":{session}}}"#, study.id);
    assert_eq!(last_phase(&other.handle_text(&resume)), Some(Phase::Paused));
    assert_eq!(last_phase(&other.handle_text(r#"{"v":1,"type":"unpause"}"#)), Some(Phase::Running));
    let out = other.handle_text(r#"{"v":1,"type":"action","value":1}"#);
    assert_eq!(frames(&out)[0].0, 2);
    let out = other.handle_text(r#"{"v":1,"type":"end_session"}"#);
    assert_eq!(last_phase(&out), Some(Phase::Ended));
    assert!(hub.live_sessions().is_empty());
}

#[test]
fn detached_sessions_time_out_through_the_reaper() {
    let fx = Fixture::new();
    let study = fx.study(sync_draft(None, false));
    let hub = Hub::new(Arc::clone(&fx.store), Arc::new(fx.clock.clone()));
    let mut conn = hub.connect();
    conn.handle_text(&format!(r#"{{"v":1,"type":"start_session","study":{}}}"#, study.id));
    conn.handle_text(r#"{"v":1,"type":"start_episode"}"#);
    conn.disconnect();
    assert_eq!(hub.next_reap(), Some(Duration::from_secs(120)));
    fx.clock.advance(Duration::from_secs(60));
    hub.reap();
    assert_eq!(hub.live_sessions().len(), 1);
    fx.clock.advance(Duration::from_secs(60));
    hub.reap();
    assert!(hub.live_sessions().is_empty());
    let eps = fx.store.episodes(study.id).unwrap();
    assert_eq!(eps.len(), 1);
    assert_eq!(eps[0].outcome, Outcome::Abandoned);
}
