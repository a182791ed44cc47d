use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use epilogue::model::{Alignment, DType, DatasetSchema, EpisodeRecord, FeatureSpec, StepRecord, Tensor, TensorTree};
use epilogue::store::{DatasetMetadata, Reader, WriterOptions};
use epilogue_testkit::{oracle, write_dataset};
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_epilogue"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn schema() -> DatasetSchema {
    DatasetSchema::new(FeatureSpec::scalar(DType::F64), FeatureSpec::scalar(DType::I64))
}

fn episode(rewards: &[f64]) -> EpisodeRecord {
    let schema = schema();
    let n = rewards.len() + 1;
    let steps = (0..n)
        .map(|i| {
            let mut s = StepRecord::filled(&schema);
            s.observation = Tensor::scalar_f64(i as f64 * 0.5).into();
            s.is_first = i == 0;
            s.is_last = i == n - 1;
            s.is_terminal = s.is_last;
            if i < rewards.len() {
                s.action = Tensor::scalar_i64(i as i64 + 1).into();
                s.reward = Tensor::scalar_f64(rewards[i]).into();
                s.discount = Tensor::scalar_f64(1.0).into();
            }
            s
        })
        .collect();
    EpisodeRecord::new(steps, TensorTree::empty())
}

/// Two episodes of 3 and 4 steps whose defined rewards average 2.0.
fn fixture(dir: &Path) -> (PathBuf, Vec<EpisodeRecord>) {
    let path = dir.join("fixture.rlds");
    let episodes = vec![episode(&[1.0, 3.0]), episode(&[2.0, 2.0, 2.0])];
    let meta = DatasetMetadata::new().with("alignment", "sar").unwrap();
    write_dataset(&path, &schema(), &meta, &episodes, WriterOptions::default()).unwrap();
    (path, episodes)
}

#[test]
fn inspect_prints_header_and_index() {
    let dir = tempfile::tempdir().unwrap();
    let (file, _) = fixture(dir.path());
    let out = run(&["inspect", p(&file)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("episodes: 2"), "{text}");
    assert!(text.contains("num_steps: [3,4]"), "{text}");
    assert!(text.contains("alignment: sar"), "{text}");

    let out = run(&["inspect", p(&file), "--format", "json"]);
    let doc: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["num_steps"], serde_json::json!([3, 4]));
    assert_eq!(doc["total_steps"], 7);
    assert!(doc["schema"].is_object());
}

#[test]
fn inspect_single_step() {
    let dir = tempfile::tempdir().unwrap();
    let (file, _) = fixture(dir.path());
    let out = run(&["inspect", p(&file), "--episode", "1", "--step", "0"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("is_first=true"), "{text}");
    assert!(text.contains("is_last=false"), "{text}");

    let out = run(&["inspect", p(&file), "--episode", "1", "--step", "3", "--format", "json"]);
    let doc: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["is_last"], true);
    assert_eq!(doc["observation"], 1.5);

    let out = run(&["inspect", p(&file), "--episode", "1"]);
    assert!(stdout(&out).contains("num_steps: 4"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let (file, _) = fixture(dir.path());
    let junk = dir.path().join("junk.rlds");
    std::fs::write(&junk, b"definitely not a record file").unwrap();
    let out = run(&["inspect", p(&junk)]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("BAD_MAGIC"), "{}", stderr(&out));

    assert_eq!(code(&run(&["inspect", p(&file), "--episode", "9"])), 1);
    assert_eq!(code(&run(&["inspect", p(&dir.path().join("missing.rlds"))])), 4);
    assert_eq!(code(&run(&[])), 1);
    assert_eq!(code(&run(&["frobnicate"])), 1);
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["inspect", p(&file), "--step", "0"])), 1);

    let bytes = std::fs::read(&file).unwrap();
    let cut = dir.path().join("cut.rlds");
    std::fs::write(&cut, &bytes[..bytes.len() - 3]).unwrap();
    assert_eq!(code(&run(&["inspect", p(&cut)])), 3);
}

#[test]
fn stats_mean_and_histogram() {
    let dir = tempfile::tempdir().unwrap();
    let (file, episodes) = fixture(dir.path());
    let out = run(&["stats", p(&file), "--field", "reward", "--format", "json"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let doc: Value = serde_json::from_slice(&out.stdout).unwrap();
    let stats = &doc["datasets"][0]["stats"];
    let (n, mean, std, min, max) = oracle::statistics(&oracle::field_values(&episodes, Alignment::Sar, "reward"));
    assert_eq!(mean, 2.0);
    assert_eq!(stats["count"], n);
    assert_eq!(stats["mean"].as_f64().unwrap(), mean);
    assert!((stats["std"].as_f64().unwrap() - std).abs() <= 1e-12 * std);
    assert_eq!((stats["min"].as_f64().unwrap(), stats["max"].as_f64().unwrap()), (min, max));

    let out = run(&["stats", p(&file), "--field", "reward", "--histogram"]);
    let text = stdout(&out);
    let table: Vec<&str> = text.lines().skip_while(|l| !l.contains("bin_left")).collect();
    assert_eq!(table[0], "dataset\tbin_left\tbin_right\tcount");
    assert_eq!(table.len(), 21, "{text}");
    let total: u64 = table[1..].iter().map(|l| l.rsplit('\t').next().unwrap().parse::<u64>().unwrap()).sum();
    assert_eq!(total, 5);

    let out = run(&["stats", p(&file), "--field", "return", "--format", "json"]);
    let doc: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["datasets"][0]["stats"]["mean"], 5.0);

    assert_eq!(code(&run(&["stats", p(&file), "--field", "nope"])), 4);
}

#[test]
fn convert_roundtrips_through_rsa() {
    let dir = tempfile::tempdir().unwrap();
    let (file, episodes) = fixture(dir.path());
    let rsa = dir.path().join("rsa.rlds");
    let back = dir.path().join("back.rlds");
    let out = run(&["convert", "--alignment", "rsa", p(&file), p(&rsa)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let out = run(&["convert", "--alignment", "sar", p(&rsa), p(&back)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let shifted = Reader::open(&rsa).unwrap();
    assert_eq!(shifted.alignment(), Alignment::Rsa);
    let expected = oracle::shift_alignment(&episodes[0], Alignment::Sar, Alignment::Rsa, &schema());
    assert_eq!(shifted.get_episode(0).unwrap(), expected);

    let restored = Reader::open(&back).unwrap();
    assert_eq!(restored.alignment(), Alignment::Sar);
    for (i, ep) in episodes.iter().enumerate() {
        assert_eq!(&restored.get_episode(i as u64).unwrap(), ep);
    }
    assert_eq!(code(&run(&["convert", "--alignment", "xyz", p(&file), p(&back)])), 1);
}

#[test]
fn validate_flags_bad_fills() {
    let dir = tempfile::tempdir().unwrap();
    let (file, _) = fixture(dir.path());
    let out = run(&["validate", p(&file)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("2 episodes, 0 invalid"));

    let mut bad = episode(&[1.0]);
    bad.steps[1].reward = Tensor::scalar_f64(7.0).into();
    let path = dir.path().join("bad.rlds");
    let meta = DatasetMetadata::new().with("alignment", "sar").unwrap();
    write_dataset(&path, &schema(), &meta, &[episode(&[1.0]), bad], WriterOptions::default()).unwrap();
    let out = run(&["validate", p(&path), "--format", "json"]);
    assert_eq!(code(&out), 2);
    let doc: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["invalid"][0]["episode"], 1);
}

#[test]
fn record_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.rlds");
    let b = dir.path().join("b.rlds");
    for path in [&a, &b] {
        let out = run(&[
            "record", "--env", "gridpickplace", "--agent", "planner", "--eps", "0.1", "--episodes", "200", "--seed", "7",
            "--out", p(path),
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let reader = Reader::open(&a).unwrap();
    assert_eq!(reader.episode_count(), 200);
    assert_eq!(reader.dataset_metadata().get("seed"), Some(&Value::from(7)));

    let bad = |extra: &[&str]| {
        let mut args = vec!["record", "--episodes", "2", "--seed", "1", "--out", p(&b)];
        args.extend_from_slice(extra);
        code(&run(&args))
    };
    assert_eq!(bad(&["--env", "gridpickplace", "--agent", "planner", "--eps", "1.5"]), 4);
    assert_eq!(bad(&["--env", "cartpole", "--agent", "planner"]), 4);
    assert_eq!(bad(&["--env", "gridpickplace", "--agent", "genius"]), 4);
}

fn write_spec(dir: &Path, doc: Value) -> PathBuf {
    let path = dir.join("pipeline.json");
    std::fs::write(&path, doc.to_string()).unwrap();
    path
}

#[test]
fn pipeline_kind_mismatch_names_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let (file, _) = fixture(dir.path());
    let spec = write_spec(
        dir.path(),
        serde_json::json!({
            "inputs": [{"path": file}],
            "stages": [{"op": "flat_steps"}, {"op": "to_absorbing"}],
        }),
    );
    let out = run(&["pipeline", "--spec", p(&spec)]);
    assert_eq!(code(&out), 5);
    let err = stderr(&out);
    assert!(err.contains("PIPELINE_KIND_MISMATCH") && err.contains("stage 1"), "{err}");
}

#[test]
fn pipeline_sample_and_transitions() {
    let dir = tempfile::tempdir().unwrap();
    let (file, episodes) = fixture(dir.path());
    let spec = write_spec(
        dir.path(),
        serde_json::json!({
            "inputs": [{"name": "fixture", "path": file}],
            "stages": [
                {"op": "sample_episodes", "k": 2, "buffer": 2, "seed": 42},
                {"op": "flat_steps"},
                {"op": "make_transitions"}
            ],
            "report": {"stats": "reward"}
        }),
    );
    let out = run(&["pipeline", "--spec", p(&spec), "--format", "json"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let doc: Value = serde_json::from_slice(&out.stdout).unwrap();
    let expected: usize = oracle::sample_episodes(&episodes, 2, 42, 2).iter().map(|e| e.len() - 1).sum();
    assert_eq!(doc["datasets"][0]["kind"], "transition");
    assert_eq!(doc["datasets"][0]["items"], expected);
    assert_eq!(doc["datasets"][0]["stats"]["mean"], 2.0);
}

#[test]
fn pipeline_writes_output() {
    let dir = tempfile::tempdir().unwrap();
    let (file, episodes) = fixture(dir.path());
    let dest = dir.path().join("shifted.rlds");
    let spec = write_spec(
        dir.path(),
        serde_json::json!({
            "inputs": [{"path": file}],
            "stages": [{"op": "sample_episodes", "k": 2, "buffer": 2, "seed": 3}, {"op": "shift_alignment", "to": "rsa"}],
            "output": dest,
        }),
    );
    let out = run(&["pipeline", "--spec", p(&spec)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let written = Reader::open(&dest).unwrap();
    assert_eq!(written.alignment(), Alignment::Rsa);
    let expected: Vec<EpisodeRecord> = oracle::sample_episodes(&episodes, 2, 3, 2)
        .iter()
        .map(|e| oracle::shift_alignment(e, Alignment::Sar, Alignment::Rsa, &schema()))
        .collect();
    for (i, e) in expected.iter().enumerate() {
        assert_eq!(&written.get_episode(i as u64).unwrap(), e);
    }

    let spec = write_spec(
        dir.path(),
        serde_json::json!({
            "inputs": [{"path": file}],
            "stages": [{"op": "pad_steps", "count": 2}],
            "output": dest,
        }),
    );
    let out = run(&["pipeline", "--spec", p(&spec)]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
}

#[test]
fn recover_reports_and_rewrites() {
    let dir = tempfile::tempdir().unwrap();
    let (file, episodes) = fixture(dir.path());
    let bytes = std::fs::read(&file).unwrap();
    let cut = dir.path().join("cut.rlds");
    std::fs::write(&cut, &bytes[..bytes.len() - 3]).unwrap();
    let fixed = dir.path().join("fixed.rlds");
    let out = run(&["recover", p(&cut), "--out", p(&fixed)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("footer intact: false"));
    let reader = Reader::open(&fixed).unwrap();
    assert_eq!(reader.episode_count(), 2);
    assert_eq!(reader.get_episode(1).unwrap(), episodes[1]);
}

#[test]
fn catalog_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let (file, episodes) = fixture(dir.path());
    let store = dir.path().join("store");
    let cache = dir.path().join("cache");
    let manifest = dir.path().join("manifest.json");
    let out = run(&[
        "catalog", "--store", p(&store), "new-manifest", "--name", "toy", "--version", "1.0.0", "--citation", "toy data",
        "--split", &format!("train={}", p(&file)), "--out", p(&manifest),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let out = run(&["catalog", "--store", p(&store), "register", p(&manifest)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let out = run(&["catalog", "--store", p(&store), "list"]);
    assert_eq!(stdout(&out).trim(), "toy\t1.0.0");

    let out = bin()
        .args(["catalog", "--store", p(&store), "load", "toy", "train[1:]", "--format", "json"])
        .env("EPILOGUE_CACHE_DIR", &cache)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let doc: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["num_steps"], serde_json::json!([episodes[1].len()]));

    let mut tampered = serde_json::from_slice::<Value>(&std::fs::read(&manifest).unwrap()).unwrap();
    tampered["version"] = "1.0.1".into();
    tampered["splits"]["train"][0]["sha256"] = "0".repeat(64).into();
    std::fs::write(&manifest, tampered.to_string()).unwrap();
    let out = run(&["catalog", "--store", p(&store), "register", p(&manifest)]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}
