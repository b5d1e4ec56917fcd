//! Instagram export archives.
//!
//! Each conversation directory holds one or more `message_<n>.json` files:
//!
//! ```json
//! {"participants": [{"name": "..."}],
//!  "messages": [{"sender_name": "...", "timestamp_ms": 1700000000000,
//!                "content": "...",
//!                "audio_files": [{"uri": "...", "duration_s": 12}],
//!                "photos": [...], "videos": [...], "share": {...}}]}
//! ```
//!
//! Instagram writes messages newest first; entries are ordered by their
//! millisecond timestamp before truncation so that same-minute messages keep
//! their true order.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::Value;

use super::{chat_id_for, word_count, Anonymizer, MessageRecord, ParseReport, Source};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct ParsedArchive {
    pub records: Vec<MessageRecord>,
    pub report: ParseReport,
    pub chats: usize,
}

#[derive(Deserialize)]
struct ConversationFile {
    messages: Vec<Value>,
}

#[derive(Deserialize)]
struct Entry {
    sender_name: String,
    timestamp_ms: i64,
    #[serde(default)]
    content: Option<String>,
    #[serde(default)]
    audio_files: Vec<AudioFile>,
    #[serde(default)]
    photos: Vec<Value>,
    #[serde(default)]
    videos: Vec<Value>,
    #[serde(default)]
    gifs: Vec<Value>,
    #[serde(default)]
    files: Vec<Value>,
    #[serde(default)]
    sticker: Option<Value>,
    #[serde(default)]
    share: Option<Value>,
}

#[derive(Deserialize)]
struct AudioFile {
    duration_s: u32,
}

impl Entry {
    fn has_other_media(&self) -> bool {
        !self.photos.is_empty()
            || !self.videos.is_empty()
            || !self.gifs.is_empty()
            || !self.files.is_empty()
            || self.sticker.is_some()
            || self.share.is_some()
    }
}

fn message_file_number(path: &Path) -> Option<u32> {
    let name = path.file_name()?.to_str()?;
    name.strip_prefix("message_")?
        .strip_suffix(".json")?
        .parse()
        .ok()
}

fn collect_message_files(dir: &Path, out: &mut BTreeMap<PathBuf, Vec<(u32, PathBuf)>>) -> Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for path in entries {
        if path.is_dir() {
            collect_message_files(&path, out)?;
        } else if let Some(n) = message_file_number(&path) {
            out.entry(dir.to_path_buf()).or_default().push((n, path));
        }
    }
    Ok(())
}

/// Parses every conversation found below `root`.
pub fn parse_instagram_export(
    root: &Path,
    donation_id: &str,
    anon: &mut Anonymizer,
) -> Result<ParsedArchive> {
    let mut conversations = BTreeMap::new();
    collect_message_files(root, &mut conversations)?;
    if conversations.is_empty() {
        return Err(Error::MissingMessageFile(root.to_path_buf()));
    }

    let mut out = ParsedArchive::default();
    for (index, (_, mut files)) in conversations.into_iter().enumerate() {
        files.sort();
        let chat_id = chat_id_for(donation_id, index);
        let mut entries: Vec<Entry> = Vec::new();
        for (_, path) in &files {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let conv: ConversationFile =
                serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
            for value in conv.messages {
                match serde_json::from_value::<Entry>(value) {
                    Ok(e) if e.timestamp_ms >= 0 => entries.push(e),
                    _ => out.report.malformed_entries += 1,
                }
            }
        }
        // Files list the newest entry first; reversing before the stable
        // sort keeps equal timestamps in chronological order.
        entries.reverse();
        entries.sort_by_key(|e| e.timestamp_ms);

        let before = out.records.len();
        for e in entries {
            let sender_id = match anon.id_for(&e.sender_name) {
                Ok(id) => id,
                Err(Error::EmptySenderLabel) => {
                    out.report.empty_sender_labels += 1;
                    out.report.malformed_entries += 1;
                    continue;
                }
                Err(err) => return Err(err),
            };
            let (word_count, audio_seconds, is_media) = if let Some(a) = e.audio_files.first() {
                (0, Some(a.duration_s), false)
            } else if e.has_other_media() {
                (0, None, true)
            } else {
                (e.content.as_deref().map_or(0, word_count), None, false)
            };
            out.records.push(MessageRecord {
                donation_id: donation_id.to_string(),
                chat_id: chat_id.clone(),
                sender_id,
                timestamp_min: e.timestamp_ms.div_euclid(60_000),
                word_count,
                audio_seconds,
                is_media,
                source: Source::Instagram,
            });
        }
        if out.records.len() > before {
            out.chats += 1;
        }
    }
    out.report.records = out.records.len();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_conv(root: &Path, name: &str, body: &str) {
        let dir = root.join("messages/inbox").join(name);
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::write(dir.join("message_1.json"), body).unwrap();
    }

    fn parse(root: &Path) -> Result<ParsedArchive> {
        let mut anon = Anonymizer::new("ig1");
        parse_instagram_export(root, "ig1", &mut anon)
    }

    #[test]
    fn text_audio_and_media_entries() {
        let tmp = tempfile::tempdir().unwrap();
        write_conv(
            tmp.path(),
            "conv_a",
            r#"{"participants":[{"name":"A"},{"name":"B"}],"messages":[
                {"sender_name":"B","timestamp_ms":1700000120000,"photos":[{"uri":"x.jpg"}]},
                {"sender_name":"A","timestamp_ms":1700000060000,"audio_files":[{"uri":"a.mp4","duration_s":12}]},
                {"sender_name":"B","timestamp_ms":1700000000000,"content":"ok see you"}
            ]}"#,
        );
        let p = parse(tmp.path()).unwrap();
        assert_eq!(p.records.len(), 3);
        let text = &p.records[0];
        assert_eq!(text.word_count, 3);
        assert_eq!(text.timestamp_min, 28_333_333);
        let audio = &p.records[1];
        assert_eq!((audio.audio_seconds, audio.word_count), (Some(12), 0));
        let photo = &p.records[2];
        assert!(photo.is_media);
        assert_eq!(photo.word_count, 0);
        assert_eq!(p.chats, 1);
    }

    #[test]
    fn malformed_entries_are_skipped() {
        let tmp = tempfile::tempdir().unwrap();
        write_conv(
            tmp.path(),
            "conv_a",
            r#"{"messages":[
                {"sender_name":"A","timestamp_ms":1700000000000,"content":"fine"},
                {"sender_name":"A","content":"no timestamp"},
                {"sender_name":"A","timestamp_ms":1700000000000,"audio_files":[{"uri":"no-duration"}]},
                {"sender_name":"","timestamp_ms":1700000000000,"content":"nobody"}
            ]}"#,
        );
        let p = parse(tmp.path()).unwrap();
        assert_eq!(p.records.len(), 1);
        assert_eq!(p.report.malformed_entries, 3);
    }

    #[test]
    fn missing_message_files() {
        let tmp = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(tmp.path().join("messages/inbox/empty")).unwrap();
        assert!(matches!(parse(tmp.path()), Err(Error::MissingMessageFile(_))));
    }

    #[test]
    fn multiple_files_merge_into_one_chat() {
        let tmp = tempfile::tempdir().unwrap();
        write_conv(
            tmp.path(),
            "c",
            r#"{"messages":[{"sender_name":"A","timestamp_ms":60000,"content":"a"}]}"#,
        );
        std::fs::write(
            tmp.path().join("messages/inbox/c/message_2.json"),
            r#"{"messages":[{"sender_name":"B","timestamp_ms":0,"content":"b b"}]}"#,
        )
        .unwrap();
        let p = parse(tmp.path()).unwrap();
        assert_eq!(p.chats, 1);
        assert_eq!(p.records[0].word_count, 2);
        assert_eq!(p.records[0].chat_id, p.records[1].chat_id);
    }
}
