//! Binary-level contract tests: exit codes, input immutability, config
//! precedence, and output determinism.

use std::path::Path;
use std::process::Output;

fn obflab(dir: &Path, args: &[&str]) -> Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_obflab"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "expected success, stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Small corpus + discriminator fixture shared by the pipeline tests.
fn fixture(dir: &Path) {
    assert_ok(&obflab(
        dir,
        &[
            "corpus", "synth", "--opcodes", "8", "--malicious", "12", "--benign", "12",
            "--separation", "0.9", "--seed", "7", "--out", "corpus.jsonl",
        ],
    ));
    assert_ok(&obflab(
        dir,
        &[
            "ids", "train", "--corpus", "corpus.jsonl", "--kind", "logistic",
            "--epochs", "400", "--lr", "30", "--seed", "13", "--out", "ids.ckpt",
        ],
    ));
}

#[test]
fn unknown_flag_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = obflab(dir.path(), &["corpus", "synth", "--bogus", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_input_exits_2_and_names_the_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out = obflab(
        dir.path(),
        &["ids", "train", "--corpus", "nope.jsonl", "--out", "ids.ckpt"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("nope.jsonl"));

    let out = obflab(dir.path(), &["swarm", "run", "--manifest", "absent.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("absent.json"));
}

#[test]
fn dimension_mismatch_exits_2_and_names_both_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    assert_ok(&obflab(
        dir.path(),
        &[
            "corpus", "synth", "--opcodes", "6", "--malicious", "8", "--benign", "8",
            "--separation", "0.9", "--seed", "1", "--out", "narrow.jsonl",
        ],
    ));
    let out = obflab(
        dir.path(),
        &["ids", "eval", "--corpus", "narrow.jsonl", "--ids", "ids.ckpt"],
    );
    assert_eq!(out.status.code(), Some(2));
    let message = stderr(&out);
    assert!(message.contains("narrow.jsonl") && message.contains("ids.ckpt"), "{message}");
}

#[test]
fn validation_failure_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let path = dir.path().join("corpus.jsonl");
    let mut text = std::fs::read_to_string(&path).unwrap();
    text.push_str("{\"not\": \"an entry\"}\n");
    std::fs::write(dir.path().join("broken.jsonl"), text).unwrap();
    let out = obflab(dir.path(), &["corpus", "validate", "broken.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
    let message = stderr(&out);
    assert!(message.contains("broken.jsonl") && message.contains("line 26"), "{message}");
}

#[test]
fn corpus_synth_is_seed_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let synth = |seed: &str, out: &str| {
        assert_ok(&obflab(
            dir.path(),
            &[
                "corpus", "synth", "--opcodes", "8", "--malicious", "5", "--benign", "5",
                "--separation", "0.7", "--seed", seed, "--out", out,
            ],
        ));
        std::fs::read(dir.path().join(out)).unwrap()
    };
    let a = synth("9", "a.jsonl");
    let b = synth("9", "b.jsonl");
    let c = synth("10", "c.jsonl");
    assert_eq!(a, b, "same seed, same bytes");
    assert_ne!(a, c, "different seed, different corpus");
}

#[test]
fn pipeline_never_mutates_inputs() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let corpus_before = std::fs::read(dir.path().join("corpus.jsonl")).unwrap();
    let ids_before = std::fs::read(dir.path().join("ids.ckpt")).unwrap();

    assert_ok(&obflab(
        dir.path(),
        &[
            "agent", "train", "--corpus", "corpus.jsonl", "--ids", "ids.ckpt",
            "--out", "agent.ckpt", "--metrics", "metrics.jsonl", "--budget", "256",
            "--horizon", "128", "--minibatch", "64", "--max-turns", "8",
        ],
    ));
    std::fs::write(
        dir.path().join("campaign.json"),
        r#"{"corpus": "corpus.jsonl", "ids": "ids.ckpt", "out": "run",
            "train_budget": 256, "eval_episodes": 2,
            "agents": [{"agent_id": "a-00", "seed": 1,
                        "env": {"max_turns": 8},
                        "ppo": {"rollout_horizon": 128, "minibatch_size": 64}}]}"#,
    )
    .unwrap();
    assert_ok(&obflab(dir.path(), &["swarm", "run", "--manifest", "campaign.json"]));
    assert_ok(&obflab(
        dir.path(),
        &["report", "evasion", "--archive", "run/archive.jsonl"],
    ));

    assert_eq!(corpus_before, std::fs::read(dir.path().join("corpus.jsonl")).unwrap());
    assert_eq!(ids_before, std::fs::read(dir.path().join("ids.ckpt")).unwrap());
}

#[test]
fn flags_override_manifest_values() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    std::fs::write(
        dir.path().join("campaign.json"),
        r#"{"corpus": "corpus.jsonl", "ids": "ids.ckpt", "out": "run",
            "train_budget": 256, "eval_episodes": 3,
            "agents": [{"agent_id": "a-00", "seed": 1,
                        "env": {"max_turns": 8},
                        "ppo": {"rollout_horizon": 128, "minibatch_size": 64}}]}"#,
    )
    .unwrap();
    assert_ok(&obflab(
        dir.path(),
        &[
            "swarm", "run", "--manifest", "campaign.json", "--eval-episodes", "5",
            "--out", "elsewhere",
        ],
    ));
    assert!(!dir.path().join("run").exists(), "--out overrides the manifest");
    let archive = std::fs::read_to_string(dir.path().join("elsewhere/archive.jsonl")).unwrap();
    assert_eq!(archive.lines().count(), 5, "--eval-episodes overrides the manifest");
}

#[test]
fn manifest_with_unknown_field_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("campaign.json"),
        r#"{"corpus": "c", "ids": "i", "out": "o", "agents": [], "surprise": 1}"#,
    )
    .unwrap();
    let out = obflab(dir.path(), &["swarm", "run", "--manifest", "campaign.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("surprise"));
}

#[test]
fn curves_export_matches_training_updates() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    assert_ok(&obflab(
        dir.path(),
        &[
            "agent", "train", "--corpus", "corpus.jsonl", "--ids", "ids.ckpt",
            "--out", "agent.ckpt", "--metrics", "metrics.jsonl", "--budget", "512",
            "--horizon", "128", "--minibatch", "64", "--max-turns", "8",
        ],
    ));
    assert_ok(&obflab(
        dir.path(),
        &["report", "curves", "--metrics", "metrics.jsonl", "--out", "curves.csv"],
    ));
    let csv = std::fs::read_to_string(dir.path().join("curves.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "update,env_steps,mean_step_reward,episodes_completed,mean_episode_reward,\
         mean_discounted_episode_reward,mean_episode_length,actor_loss,critic_loss,\
         entropy,clip_fraction"
    );
    assert_eq!(lines.count(), 4, "512 steps at horizon 128 is four updates");
}
