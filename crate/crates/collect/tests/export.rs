mod common;

use common::*;
use epilogue::model::{validate_episode, Alignment, FeatureSpec, TensorTree};
use epilogue::store::Reader;
use epilogue_collect::frame::{decode_frame, encode_frame};
use epilogue_collect::{Event, ExportFilter, ExportOptions, Outcome, Phase, StudyState, StudyStore, TagScope, TagValue};
use epilogue_testkit::oracle;

/// Plays one planner episode to its end in a fresh session and resolves it
/// with `outcome`. Returns the episode id (if stored) and every frame sent.
fn record_episode(fx: &Fixture, study: &epilogue_collect::Study, session: u64, outcome: Outcome) -> (Option<u64>, Vec<(u64, String, f64)>) {
    let mut rt = fx.runtime(study, session);
    let mut mirror = Mirror::new(&study.draft.environments[0], session);
    let mut sent = frames(&rt.handle(Event::StartEpisode));
    if outcome == Outcome::Canceled {
        for _ in 0..3 {
            sent.extend(frames(&rt.handle(Event::Action(mirror.next()))));
        }
        return (episode_id(&rt.handle(Event::Cancel)), sent);
    }
    while rt.phase() == Phase::Running {
        sent.extend(frames(&rt.handle(Event::Action(mirror.next()))));
    }
    let out = rt.handle(Event::Save {
        confirm: outcome == Outcome::Completed,
    });
    (episode_id(&out), sent)
}

fn bool_at(step: &epilogue::model::StepRecord, key: &str) -> bool {
    step.metadata.get(key).and_then(TensorTree::as_leaf).and_then(|t| t.as_bool()).unwrap()
}

#[test]
fn default_export_keeps_completed_episodes() {
    let fx = Fixture::new();
    let study = fx.study(sync_draft(None, false));
    let outcomes = [Outcome::Completed, Outcome::Canceled, Outcome::Completed];
    let ids: Vec<u64> = outcomes
        .iter()
        .enumerate()
        .map(|(i, &o)| record_episode(&fx, &study, i as u64 + 1, o).0.unwrap())
        .collect();

    let out = fx.dir.path().join("all.rlds");
    let summary = fx.store.export(study.id, &ExportFilter::default(), &ExportOptions::default(), &out).unwrap();
    assert_eq!(summary.episode_ids, vec![ids[0], ids[2]]);
    let reader = Reader::open(&out).unwrap();
    assert_eq!(reader.episode_count(), 2);
    assert_eq!(reader.total_steps(), summary.steps);
    for i in 0..2 {
        let ep = reader.get_episode(i).unwrap();
        assert!(validate_episode(&ep, reader.schema(), Alignment::Sar).is_ok());
        let outcome = ep.metadata.get("outcome").and_then(TensorTree::as_leaf).unwrap();
        assert_eq!(outcome.as_bytes().unwrap(), b"completed");
    }

    let canceled = ExportFilter {
        outcomes: vec![Outcome::Canceled],
        ..ExportFilter::default()
    };
    let s = fx.store.export(study.id, &canceled, &ExportOptions::default(), &out).unwrap();
    assert_eq!(s.episode_ids, vec![ids[1]]);
    let by_id = ExportFilter {
        outcomes: vec![Outcome::Completed, Outcome::Canceled],
        episode_ids: Some(vec![ids[1], ids[2]]),
        env_index: None,
    };
    let s = fx.store.export(study.id, &by_id, &ExportOptions::default(), &out).unwrap();
    assert_eq!(s.episode_ids, vec![ids[1], ids[2]]);
    let none = ExportFilter {
        outcomes: vec![Outcome::Abandoned],
        ..ExportFilter::default()
    };
    let err = fx.store.export(study.id, &none, &ExportOptions::default(), &out).unwrap_err();
    assert_eq!(err.code(), "NO_MATCHING_EPISODES");
}

#[test]
fn stripping_images_shrinks_the_export() {
    let fx = Fixture::new();
    let study = fx.study(sync_draft(None, false));
    record_episode(&fx, &study, 1, Outcome::Completed);
    let full = fx.dir.path().join("full.rlds");
    let lean = fx.dir.path().join("lean.rlds");
    let a = fx.store.export(study.id, &ExportFilter::default(), &ExportOptions::default(), &full).unwrap();
    let opts = ExportOptions {
        strip_images: true,
        truncate_on_tag: None,
    };
    let b = fx.store.export(study.id, &ExportFilter::default(), &opts, &lean).unwrap();
    assert_eq!(a.steps, b.steps);
    assert!(b.bytes < a.bytes, "{} vs {}", b.bytes, a.bytes);
    let reader = Reader::open(&lean).unwrap();
    assert!(reader.schema().step_metadata.leaves().iter().all(|(_, l)| !l.is_image()));
    let full = Reader::open(&full).unwrap().get_episode(0).unwrap();
    let lean = reader.get_episode(0).unwrap();
    for (x, y) in full.steps.iter().zip(&lean.steps) {
        assert_eq!((&x.observation, &x.action, &x.reward), (&y.observation, &y.action, &y.reward));
    }
}

#[test]
fn tags_become_metadata() {
    let fx = Fixture::new();
    let study = fx.study(sync_draft(None, false));
    let a = record_episode(&fx, &study, 1, Outcome::Completed).0.unwrap();
    let b = record_episode(&fx, &study, 2, Outcome::Completed).0.unwrap();
    fx.store.tag(a, TagScope::Step(2), "bump", TagValue::Bool(true)).unwrap();
    fx.store.tag(a, TagScope::Step(3), "bump", TagValue::Bool(true)).unwrap();
    fx.store.tag(a, TagScope::Step(3), "bump", TagValue::Bool(false)).unwrap();
    fx.store.tag(a, TagScope::Episode, "good", TagValue::Bool(true)).unwrap();
    fx.store.tag(a, TagScope::Episode, "note", TagValue::Text("slow start".into())).unwrap();
    fx.store.tag(b, TagScope::Episode, "note", TagValue::Bool(true)).unwrap();

    let out = fx.dir.path().join("tags.rlds");
    fx.store.export(study.id, &ExportFilter::default(), &ExportOptions::default(), &out).unwrap();
    let reader = Reader::open(&out).unwrap();
    assert_eq!(reader.schema().step_metadata.get("tag:bump"), Some(&FeatureSpec::scalar(epilogue::model::DType::Bool)));
    let ea = reader.get_episode(0).unwrap();
    let eb = reader.get_episode(1).unwrap();
    let marked: Vec<usize> = (0..ea.len()).filter(|&j| bool_at(&ea.steps[j], "tag:bump")).collect();
    assert_eq!(marked, vec![2]);
    assert!(eb.steps.iter().all(|s| !bool_at(s, "tag:bump")));
    let md = |ep: &epilogue::model::EpisodeRecord, k: &str| ep.metadata.get(k).and_then(TensorTree::as_leaf).cloned().unwrap();
    assert_eq!(md(&ea, "tag:good").as_bool(), Some(true));
    assert_eq!(md(&eb, "tag:good").as_bool(), Some(false));
    assert_eq!(md(&ea, "tag:note").as_bytes().unwrap(), b"slow start");
    assert_eq!(md(&eb, "tag:note").as_bytes().unwrap(), b"true");
}

#[test]
fn tag_errors() {
    let fx = Fixture::new();
    let study = fx.study(sync_draft(Some(5), false));
    let id = record_episode(&fx, &study, 1, Outcome::Completed).0.unwrap();
    let code = |scope, name: &str, value| fx.store.tag(id, scope, name, value).unwrap_err().code();
    assert_eq!(code(TagScope::Step(6), "x", TagValue::Bool(true)), "INDEX_OUT_OF_RANGE");
    assert_eq!(code(TagScope::Step(1), "a/b", TagValue::Bool(true)), "INVALID_TAG");
    assert_eq!(code(TagScope::Episode, "", TagValue::Bool(true)), "INVALID_TAG");
    assert_eq!(code(TagScope::Step(1), "x", TagValue::Text("y".into())), "INVALID_TAG");
    let err = fx.store.tag(id + 1, TagScope::Episode, "x", TagValue::Bool(true)).unwrap_err();
    assert_eq!(err.code(), "UNKNOWN_EPISODE");
    assert!(fx.store.tag(id, TagScope::Step(5), "x", TagValue::Bool(true)).is_ok());
    assert_eq!(fx.store.read_step(id, 6).unwrap_err().code(), "INDEX_OUT_OF_RANGE");
}

#[test]
fn truncating_on_a_tag_ends_the_episode_there() {
    let fx = Fixture::new();
    let study = fx.study(sync_draft(Some(40), true));
    let (id, sent) = record_episode(&fx, &study, 1, Outcome::Completed);
    let id = id.unwrap();
    let paid: Vec<u64> = sent.iter().filter(|f| f.2 == 1.0).map(|f| f.0).collect();
    assert!(paid.len() >= 2, "fixed-length planner places more than once: {paid:?}");
    let k = paid[0];
    fx.store.tag(id, TagScope::Step(k), "placed", TagValue::Bool(true)).unwrap();

    let whole = fx.store.read_episode(id).unwrap();
    assert_eq!(oracle::episode_return(&whole.steps, Alignment::Sar, |_| false), paid.len() as f64);

    let out = fx.dir.path().join("cut.rlds");
    let opts = ExportOptions {
        strip_images: false,
        truncate_on_tag: Some("placed".into()),
    };
    fx.store.export(study.id, &ExportFilter::default(), &opts, &out).unwrap();
    let reader = Reader::open(&out).unwrap();
    let ep = reader.get_episode(0).unwrap();
    assert_eq!(ep.len() as u64, k + 1);
    assert_eq!(oracle::episode_return(&ep.steps, Alignment::Sar, |_| false), 1.0);
    assert!(bool_at(ep.steps.last().unwrap(), "tag:placed"));
    let last = ep.steps.last().unwrap();
    assert!(last.is_last && !last.is_terminal);
    assert!(validate_episode(&ep, reader.schema(), Alignment::Sar).is_ok());
    for (x, y) in ep.steps[..k as usize].iter().zip(&whole.steps) {
        assert_eq!((&x.observation, &x.action, &x.reward), (&y.observation, &y.action, &y.reward));
    }
}

#[test]
fn replayed_frames_match_the_live_ones() {
    let fx = Fixture::new();
    let study = fx.study(sync_draft(Some(25), false));
    let (id, sent) = record_episode(&fx, &study, 1, Outcome::Completed);
    let id = id.unwrap();
    let entry = fx.store.entry(id).unwrap();
    assert_eq!(sent.len() as u64, entry.steps);
    for (j, image, _) in &sent {
        let step = fx.store.read_step(id, *j).unwrap();
        let recorded = step.metadata.get("image").and_then(TensorTree::as_leaf).unwrap();
        assert_eq!(&encode_frame(recorded).unwrap(), image, "step {j}");
        assert_eq!(&decode_frame(image).unwrap(), recorded);
    }
    let rewards = fx.store.reward_profile(id).unwrap();
    assert_eq!(rewards.len() as u64, entry.steps);
    let live: Vec<f64> = sent[1..].iter().map(|f| f.2).collect();
    assert_eq!(&rewards[..rewards.len() - 1], &live[..]);
}

#[test]
fn store_survives_reopening() {
    let fx = Fixture::new();
    let study = fx.study(sync_draft(None, false));
    let draft = fx.store.create_study(sync_draft(Some(9), false)).unwrap();
    let id = record_episode(&fx, &study, 1, Outcome::Completed).0.unwrap();
    fx.store.tag(id, TagScope::Step(1), "seen", TagValue::Bool(true)).unwrap();

    let again = StudyStore::open(fx.dir.path()).unwrap();
    assert_eq!(again.studies(), fx.store.studies());
    assert_eq!(again.entry(id).unwrap(), fx.store.entry(id).unwrap());
    assert_eq!(again.read_episode(id).unwrap(), fx.store.read_episode(id).unwrap());
    let next = again.create_study(sync_draft(None, false)).unwrap();
    assert!(next.id > draft.id);
}

#[test]
fn active_studies_only_change_state() {
    let fx = Fixture::new();
    let draft = fx.store.create_study(sync_draft(None, false)).unwrap();
    let renamed = epilogue_collect::StudyDraft {
        name: "renamed".into(),
        ..draft.draft.clone()
    };
    assert_eq!(fx.store.update_study(draft.id, renamed.clone()).unwrap().draft.name, "renamed");
    fx.store.set_state(draft.id, StudyState::Active).unwrap();
    assert_eq!(fx.store.update_study(draft.id, renamed).unwrap_err().code(), "STUDY_IMMUTABLE");
    assert_eq!(fx.store.set_state(draft.id, StudyState::Draft).unwrap_err().code(), "INVALID_ARGUMENT");
    assert_eq!(fx.store.set_state(draft.id, StudyState::Archived).unwrap().state, StudyState::Archived);
    let bad = epilogue_collect::StudyDraft {
        environments: vec![],
        ..draft.draft
    };
    assert_eq!(fx.store.create_study(bad).unwrap_err().code(), "INVALID_STUDY");
}
