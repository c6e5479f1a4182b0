use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn aiblob(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aiblob"))
        .args(args)
        .output()
        .unwrap()
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

/// Ingests and indexes the fixture transcripts into `dir/store`.
fn fixture_store(dir: &Path) -> PathBuf {
    let corpus = dir.join("corpus.jsonl");
    let store = dir.join("store");
    assert!(aiblob(&[
        "ingest",
        "--transcripts",
        &s(&fixtures().join("transcripts")),
        "--out",
        &s(&corpus)
    ])
    .status
    .success());
    let out = aiblob(&[
        "index",
        "--corpus",
        &s(&corpus),
        "--store",
        &s(&store),
        "--embedder",
        "deterministic:64",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    store
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(aiblob(&[]).status.code(), Some(2));
    assert_eq!(aiblob(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(
        aiblob(&["stats", "--store", "x", "--bogus"]).status.code(),
        Some(2)
    );
    assert_eq!(
        aiblob(&[
            "index",
            "--corpus",
            "c",
            "--store",
            "s",
            "--embedder",
            "deterministic:1"
        ])
        .status
        .code(),
        Some(2)
    );
    let out = aiblob(&[
        "compose", "--store", "s", "--title", "t", "--config", "c", "--out", "o", "--llm", "magic",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("scripted:<file>"));
    assert_eq!(aiblob(&["--help"]).status.code(), Some(0));
}

#[test]
fn stage_failures_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = aiblob(&["stats", "--store", &s(&dir.path().join("missing"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn stats_counts_fixture_store() {
    let dir = tempfile::tempdir().unwrap();
    let store = fixture_store(dir.path());
    let out = aiblob(&["stats", "--store", &s(&store)]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("videos: 10\nsentences: "), "{text}");
    assert!(text.ends_with("dim: 64\n"));
}

#[test]
fn exhausted_replay_leaves_no_workspace() {
    let dir = tempfile::tempdir().unwrap();
    let store = fixture_store(dir.path());
    let replay = fixtures().join("replay.jsonl");
    let short = dir.path().join("short.jsonl");
    let first_two: String = fs::read_to_string(&replay)
        .unwrap()
        .lines()
        .take(2)
        .map(|l| format!("{l}\n"))
        .collect();
    fs::write(&short, first_two).unwrap();
    let out_dir = dir.path().join("ep");
    let out = aiblob(&[
        "compose",
        "--store",
        &s(&store),
        "--title",
        "Il calcio e la politica",
        "--config",
        &s(&fixtures().join("episode.toml")),
        "--out",
        &s(&out_dir),
        "--llm",
        &format!("scripted:{}", s(&short)),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("score"));
    assert!(!out_dir.exists());
}

#[test]
fn compose_then_dry_run_render() {
    let dir = tempfile::tempdir().unwrap();
    let store = fixture_store(dir.path());
    let ep = dir.path().join("ep");
    let out = aiblob(&[
        "compose",
        "--store",
        &s(&store),
        "--title",
        "Il calcio e la politica",
        "--config",
        &s(&fixtures().join("episode.toml")),
        "--out",
        &s(&ep),
        "--llm",
        &format!("scripted:{}", s(&fixtures().join("replay.jsonl"))),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for f in [
        "themes.jsonl",
        "queries.jsonl",
        "candidates.jsonl",
        "scores.jsonl",
        "plan.json",
        "edl.json",
        "compose.log",
    ] {
        assert!(ep.join(f).is_file(), "{f}");
    }
    let out = aiblob(&[
        "render",
        "--edl",
        &s(&ep.join("edl.json")),
        "--out",
        "ep.mp4",
        "--dry-run",
        "--renderer",
        "/opt/none/ffmpeg",
    ]);
    assert!(out.status.success());
    let plan = String::from_utf8(out.stdout).unwrap();
    assert!(plan.lines().all(|l| l.starts_with("/opt/none/ffmpeg ")));
    assert!(plan.lines().last().unwrap().contains("loudnorm"));

    let out = aiblob(&[
        "render",
        "--edl",
        &s(&ep.join("edl.json")),
        "--out",
        &s(&dir.path().join("ep.mp4")),
        "--renderer",
        "/opt/none/ffmpeg",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not found"));
}

#[test]
fn flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let store = fixture_store(dir.path());
    let ep = dir.path().join("ep");
    let out = aiblob(&[
        "compose",
        "--store",
        &s(&store),
        "--title",
        "Il calcio e la politica",
        "--config",
        &s(&fixtures().join("episode.toml")),
        "--out",
        &s(&ep),
        "--llm",
        &format!("scripted:{}", s(&fixtures().join("replay.jsonl"))),
        "--irony-threshold",
        "11",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("irony_threshold 11"));
}
