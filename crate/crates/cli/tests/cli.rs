use std::path::Path;
use std::process::{Command, Output};

fn ppnlab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ppnlab"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn stdout_json(o: &Output) -> serde_json::Value {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).unwrap()
}

const SMALL: &str = r#"
[env.noise]
p_nlu_drop = 0.0
p_nlu_corrupt = 0.0
p_dst_skip = 0.0
p_policy_omit = 0.0
p_nlg_drop = 0.0

[model]
embed_dim = 8
hidden = 8

[il]
n_turns = 100
epochs = 1

[rl]
iterations = 1
turns_per_iter = 8
minibatch = 16

[eval]
n_dialogues = 16
"#;

#[test]
fn noise_free_pipeline_always_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), SMALL).unwrap();
    let o = ppnlab(dir.path(), &["evaluate", "--config", "c.toml", "--checkpoint", "none", "--out", "o"]);
    let v = stdout_json(&o);
    assert_eq!(v["summary"]["success_rate"], 1.0);
    assert_eq!(v["checkpoint"], "none");
    assert!(dir.path().join("o/eval-none.json").exists());
}

#[test]
fn one_iteration_writes_one_record() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), SMALL).unwrap();
    let base = ["--config", "c.toml", "--out", "o", "--seed", "3"];
    for cmd in ["gen-demos", "train-il", "train-rl"] {
        let o = ppnlab(dir.path(), &[&[cmd][..], &base[..]].concat());
        stdout_json(&o);
    }
    let log = std::fs::read_to_string(dir.path().join("o/metrics-module-seed3.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[1]["iteration"], 0);
    assert!(dir.path().join("o/rl-module-seed3.ckpt").exists());
}

#[test]
fn config_output_reloads() {
    let dir = tempfile::tempdir().unwrap();
    let o = ppnlab(dir.path(), &["config", "--seed", "9", "--granularity", "turn"]);
    assert!(o.status.success());
    std::fs::write(dir.path().join("c.toml"), &o.stdout).unwrap();
    let again = ppnlab(dir.path(), &["config", "--config", "c.toml"]);
    assert_eq!(o.stdout, again.stdout);
    assert!(String::from_utf8_lossy(&o.stdout).contains("value_granularity = \"turn\""));
}

#[test]
fn unwritable_output_reports_error_code() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), SMALL).unwrap();
    std::fs::write(dir.path().join("blocker"), "").unwrap();
    let o = ppnlab(dir.path(), &["gen-demos", "--config", "c.toml", "--out", "blocker/sub"]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.starts_with("error code=unwritable message="), "{err}");
}

#[test]
fn missing_checkpoint_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), SMALL).unwrap();
    let o = ppnlab(dir.path(), &["evaluate", "--config", "c.toml", "--checkpoint", "nope.ckpt"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error code="));
}
