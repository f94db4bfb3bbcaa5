//! Black-box tests of the `traffic-curriculum` binary: exit codes,
//! diagnostics, flag handling, and the files each subcommand leaves behind.

use std::path::Path;
use std::process::{Command, Output};

const TINY_CONFIG: &str = r#"
seed = 3
student_hidden = 8
eval_episodes = 2

[teacher]
embed = 8
msg_hidden = 8
head_hidden = 8
map_layers = 1

[teacher_ppo]
steps_per_iter = 64
minibatch = 16
epochs = 1

[student_ppo]
steps_per_iter = 64
minibatch = 16
epochs = 1

[env]
npc_count = 2
max_steps = 40

[curriculum]
n_teacher = 1
n_student = 1
n_recalibrate = 9
total_rounds = 1
"#;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_traffic-curriculum"))
        .args(args)
        .output()
        .expect("spawning the binary")
}

fn write_config(dir: &Path) -> String {
    let path = dir.join("run.toml");
    std::fs::write(&path, TINY_CONFIG).unwrap();
    path.display().to_string()
}

#[test]
fn missing_config_file_fails_with_diagnostic() {
    let out = bin(&["train-curriculum", "--config", "/nonexistent/run.toml"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("error:"), "stderr was: {err}");
    assert!(err.contains("/nonexistent/run.toml"), "stderr was: {err}");
}

#[test]
fn invalid_config_key_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.toml");
    std::fs::write(&path, "mystery_knob = 1\n").unwrap();
    let out = bin(&["eval", "--config", path.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));
}

#[test]
fn eval_rejects_zero_episodes() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path());
    let out = bin(&[
        "eval",
        "--config",
        &config,
        "--episodes",
        "0",
        "--out",
        tmp.path().join("ev").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));
}

#[test]
fn recalibrate_flag_controls_the_phase() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path());

    let rows_with = |flag: &str, dir: &str| -> String {
        let out = bin(&[
            "train-curriculum",
            "--config",
            &config,
            "--recalibrate",
            flag,
            "--out",
            tmp.path().join(dir).to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::read_to_string(tmp.path().join(dir).join("curriculum.csv")).unwrap()
    };

    let on = rows_with("true", "on");
    let off = rows_with("false", "off");
    assert!(on.lines().any(|l| l.contains(",recalibrate,")));
    assert!(!off.lines().any(|l| l.contains(",recalibrate,")));
}

#[test]
fn full_cycle_train_eval_replay_plot() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path());
    let out_dir = tmp.path().join("run");

    let out = bin(&[
        "train-curriculum",
        "--config",
        &config,
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["config.toml", "curriculum.csv", "checkpoint_final.json"] {
        assert!(out_dir.join(name).exists(), "missing {name}");
    }

    // Evaluate the trained checkpoint at one difficulty level.
    let eval_dir = tmp.path().join("eval");
    let out = bin(&[
        "eval",
        "--config",
        &config,
        "--checkpoint",
        out_dir.join("checkpoint_final.json").to_str().unwrap(),
        "--episodes",
        "2",
        "--lambda",
        "0",
        "--out",
        eval_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = std::fs::read_to_string(eval_dir.join("eval_report.json")).unwrap();
    assert!(report.contains("success_rate"));

    // Replay each emitted scenario and expect a bit-exact match verdict.
    let mut replayed = 0;
    for entry in std::fs::read_dir(&out_dir).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        if name.starts_with("scenario_") && name.ends_with(".jsonl") {
            let out = bin(&["replay", path.to_str().unwrap()]);
            assert!(out.status.success());
            assert!(String::from_utf8_lossy(&out.stdout).contains("match"));
            replayed += 1;
        }
    }
    assert!(replayed > 0, "no scenario logs to replay");

    // A tampered log must be rejected with a nonzero exit.
    let victim = out_dir.join("scenario_lambda_0.jsonl");
    let text = std::fs::read_to_string(&victim).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let idx = lines.len() / 2;
    let mut record: serde_json::Value = serde_json::from_str(&lines[idx]).unwrap();
    record["x"] = serde_json::json!(record["x"].as_f64().unwrap() + 0.5);
    lines[idx] = serde_json::to_string(&record).unwrap();
    let tampered = tmp.path().join("tampered.jsonl");
    std::fs::write(&tampered, lines.join("\n") + "\n").unwrap();
    let out = bin(&["replay", tampered.to_str().unwrap()]);
    assert!(!out.status.success());

    // Plot data: per-phase traces from the metrics CSV.
    let plot_dir = tmp.path().join("plots");
    let out = bin(&[
        "plot-data",
        "--config",
        &config,
        "--curriculum",
        out_dir.join("curriculum.csv").to_str().unwrap(),
        "--out",
        plot_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(plot_dir.join("trace_teacher.csv").exists());
    assert!(plot_dir.join("trace_student.csv").exists());
}

#[test]
fn train_baseline_writes_its_trace() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path());
    let dir = tmp.path().join("base");
    let out = bin(&[
        "train-baseline",
        "--config",
        &config,
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.join("baseline.csv")).unwrap();
    assert!(csv.lines().skip(1).all(|l| l.is_empty() || l.contains(",student,")));
    assert!(dir.join("checkpoint_final.json").exists());
}

#[test]
fn seed_override_changes_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path());
    let run = |seed: &str, dir: &str| -> Vec<u8> {
        let out_dir = tmp.path().join(dir);
        let out = bin(&[
            "train-curriculum",
            "--config",
            &config,
            "--seed",
            seed,
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::read(out_dir.join("curriculum.csv")).unwrap()
    };
    assert_ne!(run("1", "s1"), run("2", "s2"));
}
