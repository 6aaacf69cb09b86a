use std::path::Path;
use std::process::{Command, Output};

fn sam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sam"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TINY: &[&str] = &[
    "--set", "i_max=4",
    "--set", "rollout_steps=20",
    "--set", "warmup_steps=40",
    "--set", "g_max=2",
    "--set", "workers=2",
    "--set", "actor_hidden=[8]",
    "--set", "critic_hidden=[8]",
    "--set", "disc_hidden=[8]",
    "--set", "batch_size=8",
    "--set", "disc_batch_size=8",
    "--set", "eval_every=2",
    "--set", "eval_episodes=1",
    "--set", "bc_epochs=20",
];

fn gen(dir: &Path) -> std::path::PathBuf {
    let out = sam(&["gen-demos", "--env", "double_integrator_1d", "--n", "2", "--seed", "0", "--out", p(dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    dir.join("demos.jsonl")
}

#[test]
fn gen_demos_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [a.path(), b.path()] {
        let out = sam(&["gen-demos", "--env", "double_integrator_1d", "--n", "5", "--seed", "0", "--out", p(d)]);
        assert!(out.status.success());
    }
    let fa = std::fs::read(a.path().join("demos.jsonl")).unwrap();
    let fb = std::fs::read(b.path().join("demos.jsonl")).unwrap();
    assert_eq!(fa, fb);
    assert!(a.path().join("gen_demos.json").exists());
}

#[test]
fn unknown_override_key_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let demos = gen(dir.path());
    let out = sam(&["train", "--demos", p(&demos), "--set", "lerning_rate=3", "--out", p(&dir.path().join("r"))]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(stderr.trim().lines().count(), 1);
    let v: serde_json::Value = serde_json::from_str(stderr.trim()).unwrap();
    assert_eq!(v["error"], "config");
    assert!(v["message"].as_str().unwrap().contains("lerning_rate"));
}

#[test]
fn missing_inputs_exit_nonzero_with_one_line() {
    let out = sam(&["train", "--demos", "/nonexistent/demos.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
    let out = sam(&["export-curves", "/nonexistent/metrics.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
    let v: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert!(v["message"].as_str().unwrap().contains("nonexistent"));
}

#[test]
fn runtime_aborts_use_their_own_code() {
    let dir = tempfile::tempdir().unwrap();
    let demos = gen(dir.path());
    let mut args = vec!["train", "--demos", p(&demos)];
    args.extend(TINY);
    let run = dir.path().join("boom");
    args.extend(["--set", "i_max=40", "--set", "warmup_steps=0", "--set", "critic_lr=1e300", "--set", "actor_lr=1e300", "--out", p(&run)]);
    let out = sam(&args);
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(out.status.code(), Some(3), "{stderr}");
    // log lines may precede it; the error is always the final line
    let v: serde_json::Value = serde_json::from_str(stderr.lines().last().unwrap()).unwrap();
    assert_eq!(v["error"], "runtime");
}

#[test]
fn export_counts_rows() {
    let dir = tempfile::tempdir().unwrap();
    let mut lines = String::new();
    for (iter, inter) in [(2, 100), (4, 200), (6, 300)] {
        for seed in [7, 8] {
            lines.push_str(&format!(
                "{{\"kind\":\"eval\",\"iter\":{iter},\"interactions\":{inter},\"seed\":{seed},\"payload\":{{\"mean\":-1.5,\"std\":0.0,\"min\":-1.5,\"max\":-1.5,\"returns\":[-1.5]}}}}\n"
            ));
        }
        lines.push_str(&format!(
            "{{\"kind\":\"diag\",\"iter\":{iter},\"interactions\":{inter},\"seed\":7,\"payload\":{{}}}}\n"
        ));
    }
    let metrics = dir.path().join("metrics.jsonl");
    std::fs::write(&metrics, lines).unwrap();
    let csv = dir.path().join("out/curves.csv");
    let out = sam(&["export-curves", p(&metrics), "--out", p(&csv)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 1 + 3 * 2);
    assert_eq!(rows[0], "run_id,seed,interactions,return");
    // pure function of the inputs
    let again = sam(&["export-curves", p(&metrics)]);
    assert_eq!(String::from_utf8(again.stdout).unwrap(), text);
}

#[test]
fn train_evaluate_and_export_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let demos = gen(dir.path());
    let run = dir.path().join("run");
    let mut args = vec!["train", "--demos", p(&demos), "--seed", "3", "--out", p(&run)];
    args.extend(TINY);
    let out = sam(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["interactions"], 4 * 20 * 2);

    let config: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("config.json")).unwrap()).unwrap();
    assert_eq!(config["seeds"], serde_json::json!([3000, 3001]));
    assert_eq!(config["i_max"], 4);

    let ckpt = run.join("checkpoints/final/actor.json");
    let out = sam(&["evaluate", "--checkpoint", p(&ckpt), "--env", "double_integrator_1d", "--n", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stats: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(stats["returns"].as_array().unwrap().len(), 3);

    let out = sam(&["export-curves", p(&run.join("metrics.jsonl"))]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 2);
    assert!(text.lines().nth(1).unwrap().starts_with("run,3000,80,"));
}

#[test]
fn baselines_run_from_the_command_line() {
    let dir = tempfile::tempdir().unwrap();
    let demos = gen(dir.path());
    let bc = dir.path().join("bc");
    let mut args = vec!["bc", "--demos", p(&demos), "--n", "1", "--out", p(&bc)];
    args.extend(TINY);
    let out = sam(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["demos"], 1);
    assert!(dir.path().join("bc/config.json").exists());
    assert!(dir.path().join("bc/checkpoints/final/actor.json").exists());

    let on = dir.path().join("on");
    let mut args = vec!["onpolicy", "--demos", p(&demos), "--out", p(&on)];
    args.extend(TINY);
    let out = sam(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(on.join("metrics.jsonl").exists());
    assert!(on.join("config.json").exists());
}
