use std::path::Path;
use std::process::{Command, Output};

use racestrat::RaceConfig;

fn racestrat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_racestrat")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn write_config(dir: &Path, laps: usize) -> String {
    let p = dir.join(format!("race{laps}.json"));
    std::fs::write(&p, RaceConfig::with_laps(laps).to_json_pretty()).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn optimize_writes_a_solution() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 10);
    let out = dir.path().join("sol.json");
    let stdout = ok(&racestrat(&["optimize", "--config", &cfg, "--gap", "1e-4", "--max-stops", "2", "--nodes", "500", "--deterministic", "--out", out.to_str().unwrap()]));
    assert!(stdout.starts_with("(M_0, "), "{stdout}");
    let sol: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
    for key in ["strategy", "inputs", "states", "t_race", "gap", "stats"] {
        assert!(sol.get(key).is_some(), "missing {key}");
    }
    assert_eq!(sol["inputs"].as_array().unwrap().len(), 10);
    assert_eq!(sol["states"].as_array().unwrap().len(), 11);
}

#[test]
fn train_eval_and_bench_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 6);
    let ck = dir.path().join("ck").join("agent.json");
    let ck = ck.to_str().unwrap();
    let tc = dir.path().join("train.json");
    std::fs::write(&tc, r#"{"batch_size": 16, "buffer_size": 1000, "hidden": [16, 16], "warmup_steps": 50, "eval_every": 100}"#).unwrap();
    let curve = dir.path().join("curve.json");
    ok(&racestrat(&[
        "train", "--config", &cfg, "--train-config", tc.to_str().unwrap(), "--steps", "240", "--seed", "3", "--checkpoint", ck, "--out", curve.to_str().unwrap(),
    ]));
    let c: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(curve).unwrap()).unwrap();
    assert_eq!(c["curve"].as_array().unwrap().len(), 3);

    let ev = dir.path().join("eval.json");
    let stdout = ok(&racestrat(&["eval", "--config", &cfg, "--checkpoint", ck, "--reference", "500", "--out", ev.to_str().unwrap()]));
    assert!(stdout.contains("t_race"));
    let e: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(ev).unwrap()).unwrap();
    assert_eq!(e["laps"].as_array().unwrap().len(), 6);
    assert!(e["metrics"]["legal"].as_bool().unwrap());

    let out_dir = dir.path().join("bench");
    let stdout = ok(&racestrat(&["bench", "nominal", "--config", &cfg, "--checkpoint", ck, "--out-dir", out_dir.to_str().unwrap(), "--format", "json,md"]));
    assert!(stdout.contains("minlp") && stdout.contains("rl"), "{stdout}");
    assert!(out_dir.join("nominal.json").exists());
    assert!(out_dir.join("nominal.md").exists());
    assert!(!out_dir.join("nominal_laps.csv").exists());
}

#[test]
fn bench_needs_a_checkpoint() {
    let out = racestrat(&["bench", "nominal"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing checkpoint"));
}

#[test]
fn bad_inputs_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"n_laps": 0}"#).unwrap();
    let out = racestrat(&["optimize", "--config", bad.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(!String::from_utf8_lossy(&out.stderr).contains("panicked"));
    let out = racestrat(&["eval", "--checkpoint", dir.path().join("none.json").to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(ok(&racestrat(&["serve", "--help"])).contains("--data-dir"));
}
