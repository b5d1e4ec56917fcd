use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn chatrecip(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chatrecip"))
        .current_dir(cwd)
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

#[test]
fn help_and_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&chatrecip(dir.path(), &["--help"])), 0);
    assert_eq!(code(&chatrecip(dir.path(), &["lmm", "--help"])), 0);
    assert_eq!(code(&chatrecip(dir.path(), &["frobnicate"])), 1);
    assert_eq!(code(&chatrecip(dir.path(), &["ingest"])), 1, "no inputs");
    assert_eq!(code(&chatrecip(dir.path(), &["ingest", "--input", "missing"])), 1);
    assert_eq!(code(&chatrecip(dir.path(), &["rt", "--rp-threshold", "0"])), 1);
}

#[test]
fn empty_input_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("empty")).unwrap();
    let out = chatrecip(dir.path(), &["all", "--input", "empty", "--out", "report"]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn stages_run_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let work = dir.path().join("work");
    let work = work.to_str().unwrap();
    let fx = fixtures();

    let early = chatrecip(&fx, &["similarity", "--out", work]);
    assert_eq!(code(&early), 1);
    assert!(String::from_utf8_lossy(&early.stderr).contains("filter"));

    let out = chatrecip(&fx, &["ingest", "--config", "corpus.toml", "--out", work]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for stage in ["clean", "filter", "rt", "report", "similarity", "lmm"] {
        let out = chatrecip(&fx, &[stage, "--config", "corpus.toml", "--out", work]);
        assert_eq!(code(&out), 0, "{stage}: {}", String::from_utf8_lossy(&out.stderr));
    }
    assert!(Path::new(work).join("lmm/lmm_summary.csv").is_file());
    assert!(Path::new(work).join("rt/responses.jsonl").is_file());
}

#[test]
fn synth_refuses_to_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    let out = chatrecip(dir.path(), &["synth", "--out", "corpus", "--seed", "2"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("corpus/planted.jsonl").is_file());
    assert_eq!(code(&chatrecip(dir.path(), &["synth", "--out", "corpus"])), 1);
}
