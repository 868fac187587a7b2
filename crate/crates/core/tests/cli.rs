use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use arcurate::pipeline::{RunManifest, Stage, StageStatus, FAULT_ENV};
use arcurate::synth::{write_fixture, FixtureFormat, SynthConfig};

fn arcurate(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_arcurate"));
    cmd.args(args).env_remove(FAULT_ENV).env("RUST_LOG", "warn");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

/// Fixture plus a config file using paths relative to itself.
fn setup(dir: &Path) -> String {
    let synth = SynthConfig {
        seed: 4,
        target_bytes: 300_000,
        exact_dup_rate: 0.1,
        near_dup_rate: 0.1,
        ..SynthConfig::default()
    };
    let fx = write_fixture(&synth, &dir.join("data"), FixtureFormat::Wet, 100_000).unwrap();
    let sources: Vec<_> = fx
        .files
        .iter()
        .map(|p| {
            let rel = p.strip_prefix(dir).unwrap();
            serde_json::json!({"path": rel, "format": "wet", "source": "CC"})
        })
        .collect();
    let cfg = serde_json::json!({
        "sources": sources,
        "tokenizer": {"target_size": 600, "num_sentinels": 100},
        "seq_len": 64,
        "shard_bytes": 60000,
        "examples_per_file": 200,
        "output_dir": "out",
    });
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

fn output_hashes(m: &RunManifest) -> Vec<(Stage, Vec<(String, String)>)> {
    m.stages
        .iter()
        .map(|s| (s.stage, s.outputs.iter().map(|f| (f.path.clone(), f.hash.to_hex())).collect()))
        .collect()
}

#[test]
fn killed_run_resumes_to_the_same_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let clean = dir.path().join("clean-run");
    let killed = dir.path().join("killed-run");
    let (clean_s, killed_s) = (clean.to_str().unwrap(), killed.to_str().unwrap());

    assert!(arcurate(&["run", "--config", &cfg, "--output", clean_s], &[]).status.success());

    for stage in ["dedup", "corrupt"] {
        let out = arcurate(&["run", "--config", &cfg, "--output", killed_s], &[(FAULT_ENV, stage)]);
        assert!(!out.status.success(), "fault in {stage} should abort");
        let partial = RunManifest::load(&killed).unwrap();
        assert!(!partial.is_complete());
        let target: Stage = stage.parse().unwrap();
        assert!(partial
            .stages
            .iter()
            .all(|s| s.stage < target && s.status == StageStatus::Complete));

        let out = arcurate(&["resume", "--output", killed_s], &[]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }

    let a = RunManifest::load(&clean).unwrap();
    let b = RunManifest::load(&killed).unwrap();
    assert!(b.is_complete());
    assert_eq!(output_hashes(&a), output_hashes(&b));
    assert_eq!(a.comparable(), b.comparable());
    assert!(killed.join("report.txt").exists());
}

#[test]
fn stage_subcommands_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let out = dir.path().join("staged");
    let out_s = out.to_str().unwrap();
    for (cmd, stages) in [("ingest", 1), ("filter", 2), ("dedup", 3), ("train-tokenizer", 4), ("corrupt", 5)] {
        let o = arcurate(&[cmd, "--config", &cfg, "--output", out_s], &[]);
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        assert_eq!(RunManifest::load(&out).unwrap().stages.len(), stages);
    }
    let o = arcurate(&["report", "--output", out_s], &[]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("Filtering %") && text.contains("corrupt"));
    let json: RunManifest = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    assert!(json.is_complete());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let out = dir.path().join("o");
    let out_s = out.to_str().unwrap();

    assert_eq!(arcurate(&["--help"], &[]).status.code(), Some(0));
    assert_eq!(arcurate(&["no-such-command"], &[]).status.code(), Some(1));
    assert_eq!(arcurate(&["run"], &[]).status.code(), Some(1), "missing --config");

    let bad = dir.path().join("bad.json");
    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&cfg).unwrap()).unwrap();
    v["seq_len"] = 4.into();
    fs::write(&bad, v.to_string()).unwrap();
    assert_eq!(arcurate(&["run", "--config", bad.to_str().unwrap()], &[]).status.code(), Some(1));
    assert!(!dir.path().join("out").exists(), "nothing written for an invalid config");

    v["seq_len"] = 64.into();
    v["colour"] = "red".into();
    fs::write(&bad, v.to_string()).unwrap();
    assert_eq!(arcurate(&["run", "--config", bad.to_str().unwrap()], &[]).status.code(), Some(1));

    // An output path that is a regular file fails at runtime.
    v.as_object_mut().unwrap().remove("colour");
    let blocker = dir.path().join("blocker");
    fs::write(&blocker, b"").unwrap();
    fs::write(&bad, v.to_string()).unwrap();
    let o = arcurate(&["ingest", "--config", bad.to_str().unwrap(), "--output", blocker.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));

    // Resuming with an edited config is rejected.
    assert!(arcurate(&["ingest", "--config", &cfg, "--output", out_s], &[]).status.success());
    let o = arcurate(&["resume", "--config", &cfg, "--output", out_s, "--seed", "7"], &[]);
    assert_eq!(o.status.code(), Some(1));
    // Worker count is not part of the run identity.
    let o = arcurate(&["resume", "--config", &cfg, "--output", out_s, "--workers", "2"], &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));

    // Pointing at a directory with no run is a usage mistake.
    assert_eq!(arcurate(&["report", "--output", dir.path().join("nothing").to_str().unwrap()], &[]).status.code(), Some(1));
}

#[test]
fn plan_fewshot_and_eval_commands() {
    let dir = tempfile::tempdir().unwrap();
    let o = arcurate(&["plan", "--output", dir.path().to_str().unwrap()], &[]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("data_parallel 32") && text.contains("accum 4"), "{text}");
    let grid: Vec<serde_json::Value> = serde_json::from_slice(&fs::read(dir.path().join("grid.json")).unwrap()).unwrap();
    assert_eq!(grid.len(), 128);

    let data: String = (0..40)
        .map(|i| format!("{{\"id\": \"e{i}\", \"label\": \"{}\"}}\n", ["pos", "neg", "neu"][i % 3]))
        .collect();
    fs::write(dir.path().join("train.jsonl"), data).unwrap();
    fs::write(
        dir.path().join("fewshot.json"),
        r#"{"dataset": "train.jsonl", "sizes": [8, 16, 32], "folds": 3, "seed": 5}"#,
    )
    .unwrap();
    let fewshot_cfg = dir.path().join("fewshot.json");
    let args = ["fewshot", "--config", fewshot_cfg.to_str().unwrap()];
    let (a, b) = (arcurate(&args, &[]), arcurate(&args, &[]));
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let folds: serde_json::Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(folds["folds"]["16"].as_array().unwrap().len(), 3);

    fs::write(
        dir.path().join("mq2q.jsonl"),
        "{\"id\": 1, \"prediction\": \"1\", \"gold\": \"1\"}\n{\"id\": 2, \"prediction\": \"0\", \"gold\": \"1\"}\n",
    )
    .unwrap();
    fs::write(
        dir.path().join("eval.json"),
        r#"{"tasks": {"MQ2Q": {"path": "mq2q.jsonl"}}, "model_name": "m"}"#,
    )
    .unwrap();
    let o = arcurate(&["eval", "--config", dir.path().join("eval.json").to_str().unwrap()], &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8(o.stdout).unwrap().contains("MQ2Q"));
}
