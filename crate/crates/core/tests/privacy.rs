use std::path::{Path, PathBuf};

use chatrecip::pipeline::{execute, ingest_inputs, write_bundle, PipelineConfig};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn sentinels() -> Vec<String> {
    std::fs::read_to_string(fixtures().join("sentinels.txt"))
        .unwrap()
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn corpus_config() -> PipelineConfig {
    let text = std::fs::read_to_string(fixtures().join("corpus.toml")).unwrap();
    let mut cfg = PipelineConfig::from_toml(&text).unwrap();
    for input in &mut cfg.inputs {
        input.path = fixtures().join(&input.path);
    }
    cfg
}

fn leaks(text: &str, sentinels: &[String]) -> Vec<String> {
    let lower = text.to_lowercase();
    sentinels.iter().filter(|s| lower.contains(s.as_str())).cloned().collect()
}

fn all_files(dir: &Path, out: &mut Vec<PathBuf>) {
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            all_files(&path, out);
        } else {
            out.push(path);
        }
    }
}

#[test]
fn raw_exports_do_contain_the_sentinels() {
    let mut files = Vec::new();
    all_files(&fixtures().join("corpus"), &mut files);
    let mut raw = String::new();
    for f in files {
        raw.push_str(&std::fs::read_to_string(f).unwrap());
    }
    let found = leaks(&raw, &sentinels());
    assert!(found.len() >= 20, "only {} sentinels present in the raw corpus", found.len());
}

#[test]
fn parsed_records_carry_no_names_or_words() {
    let cfg = corpus_config();
    let (donations, report) = ingest_inputs(&cfg.inputs, &cfg.ingest).unwrap();
    let mut text = serde_json::to_string(&donations).unwrap();
    text.push_str(&serde_json::to_string(&report).unwrap());
    for d in &donations {
        for r in &d.records {
            text.push_str(&serde_json::to_string(r).unwrap());
        }
    }
    assert_eq!(leaks(&text, &sentinels()), Vec::<String>::new());
}

#[test]
fn report_bundle_carries_no_names_or_words() {
    let run = execute(&corpus_config()).unwrap();
    let out = tempfile::tempdir().unwrap();
    let bundle = out.path().join("bundle");
    write_bundle(&bundle, &run).unwrap();
    let mut files = Vec::new();
    all_files(&bundle, &mut files);
    assert!(!files.is_empty());
    let sentinels = sentinels();
    for f in files {
        let bytes = std::fs::read(&f).unwrap();
        let text = String::from_utf8_lossy(&bytes);
        assert_eq!(leaks(&text, &sentinels), Vec::<String>::new(), "{}", f.display());
    }
}
