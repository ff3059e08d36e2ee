use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SHORT: &str = "[synth]\nn_cycles = 3\n[sim]\nduration_s = 3.0\n";

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn cdskill(args: &[&str]) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cdskill"));
    cmd.args(args).env("CDSKILL_LOG", "warn");
    for (key, _) in std::env::vars() {
        if key.starts_with("CDSKILL_") && key != "CDSKILL_LOG" {
            cmd.env_remove(key);
        }
    }
    cmd
}

fn run(args: &[&str]) -> Output {
    cdskill(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn short_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("cfg.toml");
    std::fs::write(&path, format!("{SHORT}{extra}")).unwrap();
    path.display().to_string()
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

#[test]
fn golden_skeleton_ingests_to_golden_csv() {
    let tmp = TempDir::new().unwrap();
    let out = run(&["--out-dir", &s(tmp.path()), "ingest", "--skeleton", &s(&fixture("golden_skeleton.json")), "--subject", "A"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(
        std::fs::read(tmp.path().join("arm_A.csv")).unwrap(),
        std::fs::read(fixture("golden_arm_A.csv")).unwrap()
    );
}

#[test]
fn missing_person_is_a_data_error() {
    let tmp = TempDir::new().unwrap();
    let out = run(&["--out-dir", &s(tmp.path()), "ingest", "--skeleton", &s(&fixture("golden_skeleton.json")), "--subject", "Z"]);
    assert_eq!(code(&out), 5);
    assert!(stderr(&out).contains("'Z' not found"), "{}", stderr(&out));
}

#[test]
fn configuration_errors_exit_with_code_2() {
    let tmp = TempDir::new().unwrap();
    let bad_key = short_config(tmp.path(), "[gmm]\ncomponents = 3\n");
    let out = run(&["--config", &bad_key, "--out-dir", &s(tmp.path()), "synth"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("components"), "{}", stderr(&out));

    let bad_value = short_config(tmp.path(), "[planner]\nperiod_s = -1.0\n");
    assert_eq!(code(&run(&["--config", &bad_value, "synth"])), 2);

    assert_eq!(code(&run(&["--out-dir", &s(tmp.path()), "simulate", "--stiffness", "spring:3"])), 2);
    assert_eq!(code(&run(&["--out-dir", &s(tmp.path()), "train", "--k-components", "0"])), 2);
    assert_eq!(code(&run(&["frobnicate"])), 2);
}

#[test]
fn io_and_parse_errors_have_their_own_codes() {
    let tmp = TempDir::new().unwrap();
    let out = run(&["--out-dir", &s(tmp.path()), "ingest", "--skeleton", &s(&tmp.path().join("nope.json"))]);
    assert_eq!(code(&out), 3);
    assert_eq!(code(&run(&["--config", &s(&tmp.path().join("nope.toml")), "synth"])), 3);

    let broken = tmp.path().join("broken.json");
    std::fs::write(&broken, "[{\"t\": 0.0, \"persons\": [}]").unwrap();
    let out = run(&["--out-dir", &s(tmp.path()), "ingest", "--skeleton", &s(&broken)]);
    assert_eq!(code(&out), 4);
    assert!(stderr(&out).contains("line 1"), "{}", stderr(&out));
}

#[test]
fn stages_run_from_separate_directories() {
    let root = TempDir::new().unwrap();
    let cfg = short_config(root.path(), "");
    let dir = |name: &str| s(&root.path().join(name));
    let step = |args: &[&str]| {
        let mut all = vec!["--config", cfg.as_str()];
        all.extend_from_slice(args);
        let out = run(&all);
        assert_eq!(code(&out), 0, "{args:?}: {}", stderr(&out));
        out
    };

    step(&["--out-dir", &dir("synth"), "synth"]);
    step(&["--out-dir", &dir("ingest"), "ingest", "--in-dir", &dir("synth")]);
    step(&["--out-dir", &dir("extract"), "extract", "--in-dir", &dir("ingest")]);
    step(&["--out-dir", &dir("train"), "train", "--in-dir", &dir("extract"), "--k-components", "3"]);
    for f in ["training_A.csv", "training_B.csv"] {
        std::fs::copy(root.path().join("extract").join(f), root.path().join("train").join(f)).unwrap();
    }
    let out = step(&["--out-dir", &dir("reproduce"), "reproduce", "--in-dir", &dir("train")]);
    let reports: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    for r in reports.as_array().unwrap() {
        assert!(r[1]["max_rel_error"].as_f64().unwrap() < 0.05, "{r}");
    }

    let model_a = root.path().join("train/model_A.json");
    let model_b = root.path().join("train/model_B.json");
    let stiffness = format!("model:{}", s(&model_a));
    step(&["--out-dir", &dir("sim"), "simulate", "--tag", "learned", "--stiffness", &stiffness, "--stiffness", &format!("model:{}", s(&model_b))]);
    let logged = std::fs::read(root.path().join("sim/metrics_learned.json")).unwrap();
    step(&["--out-dir", &dir("metrics"), "metrics", &s(&root.path().join("sim/simlog_learned.csv"))]);
    assert_eq!(std::fs::read(root.path().join("metrics/metrics_learned.json")).unwrap(), logged);
}

#[test]
fn training_is_reproducible_and_seeded() {
    let root = TempDir::new().unwrap();
    let cfg = short_config(root.path(), "");
    let run_seed = |name: &str, seed: &str| {
        let dir = s(&root.path().join(name));
        for stage in ["synth", "ingest", "extract", "train"] {
            let out = cdskill(&["--config", &cfg, stage]).env("CDSKILL_OUT_DIR", &dir).env("CDSKILL_SEED", seed).output().unwrap();
            assert_eq!(code(&out), 0, "{stage}: {}", stderr(&out));
        }
        std::fs::read(root.path().join(name).join("model_A.json")).unwrap()
    };
    let a = run_seed("a", "11");
    let b = run_seed("b", "11");
    let c = run_seed("c", "12");
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn instability_exits_7_and_keeps_outputs() {
    let tmp = TempDir::new().unwrap();
    let cfg = short_config(tmp.path(), "[sim.coupling]\nwood_top_z = -10.0\n");
    let out = run(&["--config", &cfg, "--out-dir", &s(tmp.path()), "simulate", "--tag", "fall", "--stiffness", "constant:0,800,0"]);
    assert_eq!(code(&out), 7, "{}", stderr(&out));
    let metrics: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(metrics["aborted_at_s"].as_f64().is_some());
    assert!(tmp.path().join("simlog_fall.csv").exists());
    assert!(tmp.path().join("metrics_fall.json").exists());
}

#[test]
fn constant_stiffness_orders_vertical_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = short_config(tmp.path(), "");
    let mut max_ez = Vec::new();
    for (tag, k) in [("stiff", "constant:0,800,800"), ("soft", "constant:0,800,0")] {
        let out = run(&["--config", &cfg, "--out-dir", &s(tmp.path()), "simulate", "--tag", tag, "--stiffness", k]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        let m: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        max_ez.push(m["max_abs_ez"].as_f64().unwrap());
    }
    assert!(max_ez[0] < max_ez[1], "{max_ez:?}");
}
