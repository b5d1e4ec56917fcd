//! Line-delimited JSON interchange between pipeline stages.
//!
//! A stage directory holds `donations.jsonl` (one donation header per line)
//! and `records.jsonl` (one [`MessageRecord`] per line). Response records
//! go to `responses.jsonl`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::ingest::{Donation, MessageRecord};

pub const DONATIONS_FILE: &str = "donations.jsonl";
pub const RECORDS_FILE: &str = "records.jsonl";
pub const RESPONSES_FILE: &str = "responses.jsonl";

pub fn write_jsonl<'a, T: Serialize + 'a>(
    path: &Path,
    items: impl IntoIterator<Item = &'a T>,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| Error::json(path, e))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::json(path, e))?);
    }
    Ok(out)
}

pub fn write_corpus(dir: &Path, donations: &[Donation]) -> Result<()> {
    write_jsonl(&dir.join(DONATIONS_FILE), donations)?;
    write_jsonl(
        &dir.join(RECORDS_FILE),
        donations.iter().flat_map(|d| d.records.iter()),
    )
}

/// Reads a stage directory back into donations, in the order written.
pub fn read_corpus(dir: &Path) -> Result<Vec<Donation>> {
    let mut donations: Vec<Donation> = read_jsonl(&dir.join(DONATIONS_FILE))?;
    let index: BTreeMap<String, usize> = donations
        .iter()
        .enumerate()
        .map(|(i, d)| (d.donation_id.clone(), i))
        .collect();
    for r in read_jsonl::<MessageRecord>(&dir.join(RECORDS_FILE))? {
        let Some(&i) = index.get(&r.donation_id) else {
            return Err(Error::InvalidConfig(format!(
                "record references unknown donation `{}`",
                r.donation_id
            )));
        };
        donations[i].records.push(r);
    }
    Ok(donations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Source;

    #[test]
    fn corpus_survives_a_write_read_cycle() {
        let rec = |chat: &str, ts| MessageRecord {
            donation_id: "d".into(),
            chat_id: chat.into(),
            sender_id: "s".into(),
            timestamp_min: ts,
            word_count: 2,
            audio_seconds: Some(3),
            is_media: false,
            source: Source::Instagram,
        };
        let mut d = Donation::new("d", Source::Instagram, vec![rec("a", 1), rec("b", 2)]);
        d.donor_id = Some("s".into());
        let tmp = tempfile::tempdir().unwrap();
        write_corpus(tmp.path(), std::slice::from_ref(&d)).unwrap();
        let back = read_corpus(tmp.path()).unwrap();
        assert_eq!(back, vec![d]);
        let line = std::fs::read_to_string(tmp.path().join(RECORDS_FILE)).unwrap();
        assert!(line.starts_with(
            r#"{"donation_id":"d","chat_id":"a","sender_id":"s","timestamp_min":1,"word_count":2,"audio_seconds":3,"is_media":false,"source":"instagram"}"#
        ));
    }
}
