use std::path::Path;
use std::process::{Command, Output};

fn scope(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scope"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn scope")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn missing_config_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let o = scope(&["train", "--config", "absent.json"], dir.path());
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(err.starts_with("error:") && err.contains("absent.json"), "{err}");
}

#[test]
fn missing_artifacts_fail_before_work() {
    let dir = tempfile::tempdir().unwrap();
    let o = scope(&["infer"], dir.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("model"), "{}", stderr(&o));
}

#[test]
fn out_of_range_overrides_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = scope(&["synth", "--n-shot", "7"], dir.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("n-shot"), "{}", stderr(&o));
    let o = scope(&["synth", "--alpha", "1.5"], dir.path());
    assert!(!o.status.success());
}

#[test]
fn full_run_in_a_scratch_directory() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("run.json"),
        r#"{"paths": {"corpus": "data/corpus.jsonl", "bank": "work/bank.bin", "model": "work/model.json", "tfidf": "work/tfidf.json", "output": "work"}}"#,
    )
    .unwrap();
    let o = scope(&["all", "--config", "run.json", "--n-shot", "2"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("wrote 500 pairs"), "{stdout}");
    assert!(stdout.contains("accuracy"), "{stdout}");
    for f in ["data/corpus.jsonl", "work/bank.test.bin", "work/model.json", "work/verdicts.jsonl", "work/metrics.json"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("work/metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["samples"], 150);

    let o = scope(&["evaluate", "--config", "run.json"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
}
