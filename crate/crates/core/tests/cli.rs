use std::path::Path;
use std::process::{Command, Output};

fn mrta(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mrta")).args(args).current_dir(dir).output().unwrap()
}

fn ok(args: &[&str], dir: &Path) -> Output {
    let out = mrta(args, dir);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap()
}

fn small_dataset(dir: &Path, name: &str) {
    ok(&["--seed", "5", "gen", "--agents", "3", "--tasks", "4..7", "--count", "6", "--out", name], dir);
}

#[test]
fn generation_is_byte_identical_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["--seed", "3", "gen", "--preset", "val10", "--count", "20", "--out", "a.jsonl"], d);
    ok(&["--seed", "3", "--jobs", "2", "gen", "--preset", "val10", "--count", "20", "--out", "b.jsonl"], d);
    ok(&["--seed", "4", "gen", "--preset", "val10", "--count", "20", "--out", "c.jsonl"], d);
    assert_eq!(read(d, "a.jsonl"), read(d, "b.jsonl"));
    assert_ne!(read(d, "a.jsonl"), read(d, "c.jsonl"));
    assert_eq!(String::from_utf8(read(d, "a.jsonl")).unwrap().lines().count(), 20);
}

#[test]
fn more_agents_than_tasks_is_a_valid_world() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["gen", "--agents", "5", "--tasks", "3..3", "--count", "1", "--out", "w.jsonl"], d);
    ok(&["oracle", "--worlds", "w.jsonl", "--out", "o.json"], d);
    ok(&["solve", "--worlds", "w.jsonl", "--out", "s.jsonl"], d);
    let line = String::from_utf8(read(d, "s.jsonl")).unwrap();
    let record: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
    assert_eq!(record["timed_out"], false);
}

#[test]
fn oracle_cache_is_reused() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_dataset(d, "w.jsonl");
    ok(&["oracle", "--worlds", "w.jsonl", "--out", "o.json"], d);
    let first = read(d, "o.json");
    let again = ok(&["oracle", "--worlds", "w.jsonl", "--out", "o.json"], d);
    assert_eq!(read(d, "o.json"), first);
    let text = String::from_utf8_lossy(&again.stdout).to_string() + &String::from_utf8_lossy(&again.stderr);
    assert!(text.contains("6 cache hits, 0 solved"), "{text}");
}

#[test]
fn missing_dataset_fails_without_a_partial_cache() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = mrta(&["oracle", "--worlds", "absent.jsonl", "--out", "o.json"], d);
    assert_eq!(out.status.code(), Some(2));
    assert!(!d.join("o.json").exists());
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.jsonl"));
}

#[test]
fn usage_errors_and_unknown_bidders_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(mrta(&["gen"], d).status.code(), Some(1));
    assert_eq!(mrta(&["frobnicate"], d).status.code(), Some(1));
    assert_eq!(mrta(&["--help"], d).status.code(), Some(0));
    small_dataset(d, "w.jsonl");
    let out = mrta(&["solve", "--worlds", "w.jsonl", "--bidder", "greedy", "--out", "s.jsonl"], d);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    for name in ["classic", "nam", "lstm"] {
        assert!(err.contains(name), "{err}");
    }
    let out = mrta(&["eval", "--worlds", "w.jsonl", "--bidder", "lstm", "--out", "e.jsonl"], d);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn pipeline_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_dataset(d, "w.jsonl");
    std::fs::write(
        d.join("cfg.toml"),
        "[train]\nhidden = 4\nhead_hidden = 3\nprobe_worlds = 3\n\n[train.ppo]\nworlds_per_epoch = 3\nmax_iterations = 10\n",
    )
    .unwrap();
    for run in ["a", "b"] {
        ok(&["oracle", "--worlds", "w.jsonl", "--out", "o.json"], d);
        ok(&["--seed", "2", "solve", "--worlds", "w.jsonl", "--out", &format!("solve_{run}.jsonl")], d);
        ok(
            &["--seed", "2", "--config", "cfg.toml", "train", "--worlds", "w.jsonl", "--oracles", "o.json", "--arch", "lstm", "--epochs", "2", "--out", &format!("train_{run}")],
            d,
        );
        let policy = format!("lstm=train_{run}/policy.json");
        ok(
            &["eval", "--worlds", "w.jsonl", "--oracles", "o.json", "--bidder", "classic", "--bidder", &policy, "--out", &format!("eval_{run}.jsonl")],
            d,
        );
        ok(&["report", "--records", &format!("eval_{run}.jsonl"), "--out", &format!("report_{run}")], d);
    }
    assert_eq!(read(d, "solve_a.jsonl"), read(d, "solve_b.jsonl"));
    assert_eq!(read(d, "train_a/curve.csv"), read(d, "train_b/curve.csv"));
    assert_eq!(read(d, "train_a/policy.json"), read(d, "train_b/policy.json"));
    assert_eq!(read(d, "eval_a.jsonl"), read(d, "eval_b.jsonl"));
    assert_eq!(read(d, "report_a/records.csv"), read(d, "report_b/records.csv"));
    assert_eq!(read(d, "report_a/summary.json"), read(d, "report_b/summary.json"));
    let curve = String::from_utf8(read(d, "train_a/curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 3);

    // Resuming to more epochs extends the same curve.
    ok(
        &["--seed", "2", "--config", "cfg.toml", "train", "--worlds", "w.jsonl", "--oracles", "o.json", "--arch", "lstm", "--epochs", "3", "--resume", "--out", "train_a"],
        d,
    );
    let extended = String::from_utf8(read(d, "train_a/curve.csv")).unwrap();
    assert!(extended.starts_with(&curve));
    assert_eq!(extended.lines().count(), 4);
}
