//! Serialization of synthetic corpora as platform export trees.
//!
//! Layout under the output root:
//!
//! ```text
//! whatsapp/<donation>/chat_NN.txt        one Android-style export per chat
//! whatsapp/<donation>/meta.json          donor label and donation date
//! instagram/<donation>/messages/inbox/conv_NN/message_1.json
//! instagram/<donation>/meta.json
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chrono::DateTime;
use serde::Serialize;

use super::{Content, SynthChat, SynthCorpus, SynthDonation, VOCABULARY};
use crate::error::{Error, Result};
use crate::ingest::Source;

const ENCRYPTION_NOTICE: &str = "Messages and calls are end-to-end encrypted. No one outside of this chat, not even WhatsApp, can read or listen to them.";

fn minute_to_datetime(minute: i64) -> DateTime<chrono::Utc> {
    DateTime::from_timestamp(minute * 60, 0).expect("timestamp in range")
}

fn body(content: Content, salt: usize) -> String {
    match content {
        Content::Text { words } => (0..words as usize)
            .map(|k| VOCABULARY[(salt * 7 + k * 5) % VOCABULARY.len()])
            .collect::<Vec<_>>()
            .join(" "),
        Content::Media => "<Media omitted>".to_string(),
        // WhatsApp has no voice-note metadata here; treat as media.
        Content::Audio { .. } => "<Media omitted>".to_string(),
    }
}

fn whatsapp_text(donation: &SynthDonation, chat: &SynthChat) -> String {
    let mut out = String::new();
    if let Some(first) = chat.messages.first() {
        let stamp = minute_to_datetime(first.minute).format("%d.%m.%y, %H:%M");
        writeln!(out, "{stamp} - {ENCRYPTION_NOTICE}").unwrap();
    }
    for (i, m) in chat.messages.iter().enumerate() {
        let stamp = minute_to_datetime(m.minute).format("%d.%m.%y, %H:%M");
        let sender = if m.from_ego {
            &donation.donor_label
        } else {
            &chat.alter_label
        };
        writeln!(out, "{stamp} - {sender}: {}", body(m.content, i)).unwrap();
    }
    out
}

#[derive(Serialize)]
struct Participant<'a> {
    name: &'a str,
}

#[derive(Serialize)]
struct Uri {
    uri: String,
}

#[derive(Serialize)]
struct AudioUri {
    uri: String,
    duration_s: u32,
}

#[derive(Serialize)]
struct IgMessage<'a> {
    sender_name: &'a str,
    timestamp_ms: i64,
    #[serde(skip_serializing_if = "Option::is_none")]
    content: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    audio_files: Vec<AudioUri>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    photos: Vec<Uri>,
}

#[derive(Serialize)]
struct IgConversation<'a> {
    participants: Vec<Participant<'a>>,
    messages: Vec<IgMessage<'a>>,
    title: &'a str,
}

fn instagram_json(donation: &SynthDonation, chat: &SynthChat, index: usize) -> String {
    // Exports list the newest message first.
    let messages = chat
        .messages
        .iter()
        .enumerate()
        .rev()
        .map(|(i, m)| {
            let sender_name = if m.from_ego {
                donation.donor_label.as_str()
            } else {
                chat.alter_label.as_str()
            };
            let mut msg = IgMessage {
                sender_name,
                timestamp_ms: m.minute * 60_000 + i64::from(m.second) * 1000,
                content: None,
                audio_files: Vec::new(),
                photos: Vec::new(),
            };
            match m.content {
                Content::Text { .. } => msg.content = Some(body(m.content, i)),
                Content::Media => msg.photos.push(Uri {
                    uri: format!("photos/{index:02}_{i:06}.jpg"),
                }),
                Content::Audio { seconds } => msg.audio_files.push(AudioUri {
                    uri: format!("audio/{index:02}_{i:06}.mp4"),
                    duration_s: seconds,
                }),
            }
            msg
        })
        .collect();
    let conv = IgConversation {
        participants: vec![
            Participant {
                name: &chat.alter_label,
            },
            Participant {
                name: &donation.donor_label,
            },
        ],
        messages,
        title: &chat.alter_label,
    };
    serde_json::to_string(&conv).expect("serializable")
}

#[derive(Serialize)]
struct Meta<'a> {
    donor: &'a str,
    donated_at: String,
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

impl SynthCorpus {
    /// Writes every donation below `root` and returns the donation
    /// directories in order.
    pub fn write(&self, root: &Path) -> Result<Vec<PathBuf>> {
        let mut dirs = Vec::with_capacity(self.donations.len());
        for d in &self.donations {
            let dir = root.join(d.source.as_str()).join(&d.donation_id);
            for (i, chat) in d.chats.iter().enumerate() {
                match d.source {
                    Source::Whatsapp => {
                        write_file(&dir.join(format!("chat_{i:02}.txt")), &whatsapp_text(d, chat))?
                    }
                    Source::Instagram => write_file(
                        &dir.join(format!("messages/inbox/conv_{i:02}/message_1.json")),
                        &instagram_json(d, chat, i),
                    )?,
                }
            }
            let meta = Meta {
                donor: &d.donor_label,
                donated_at: minute_to_datetime(d.donated_at_min()).to_rfc3339(),
            };
            write_file(
                &dir.join("meta.json"),
                &serde_json::to_string_pretty(&meta).expect("serializable"),
            )?;
            dirs.push(dir);
        }
        Ok(dirs)
    }
}

#[cfg(test)]
mod tests {
    use super::super::{gen_corpus, CorpusSpec};
    use crate::ingest::{ingest_donation_dir, IngestConfig};

    fn small(spec: CorpusSpec) -> CorpusSpec {
        CorpusSpec {
            n_donors: 2,
            chats_per_donor: 3,
            messages_per_chat: 80,
            ..spec
        }
    }

    #[test]
    fn whatsapp_roundtrip_matches_in_memory_records() {
        let corpus = gen_corpus(&small(CorpusSpec::whatsapp_like(5))).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        let dirs = corpus.write(tmp.path()).unwrap();
        let direct = corpus.to_donations();
        for (dir, mem) in dirs.iter().zip(&direct) {
            let (parsed, report) = ingest_donation_dir(
                dir,
                crate::ingest::Source::Whatsapp,
                &mem.donation_id,
                &IngestConfig::default(),
            )
            .unwrap();
            assert_eq!(report.unparsable_lines, 0);
            // The encryption notice adds one system record per chat.
            assert_eq!(parsed.records.len(), mem.records.len() + 3);
            assert_eq!(parsed.donated_at_min, mem.donated_at_min);
            let strip = |recs: &[crate::MessageRecord]| {
                recs.iter()
                    .map(|r| (r.chat_id.clone(), r.timestamp_min, r.word_count, r.is_media))
                    .collect::<Vec<_>>()
            };
            let ego = parsed.donor_id.clone().unwrap();
            let kept: Vec<_> = parsed
                .records
                .iter()
                .filter(|r| {
                    parsed
                        .records
                        .iter()
                        .filter(|o| o.chat_id == r.chat_id && o.sender_id == r.sender_id)
                        .count()
                        > 1
                })
                .cloned()
                .collect();
            assert_eq!(strip(&kept), strip(&mem.records));
            assert!(parsed.records.iter().any(|r| r.sender_id == ego));
        }
    }

    #[test]
    fn instagram_roundtrip_matches_in_memory_records() {
        let corpus = gen_corpus(&small(CorpusSpec::instagram_like(6))).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        let dirs = corpus.write(tmp.path()).unwrap();
        for (dir, mem) in dirs.iter().zip(corpus.to_donations()) {
            let (parsed, report) = ingest_donation_dir(
                dir,
                crate::ingest::Source::Instagram,
                &mem.donation_id,
                &IngestConfig::default(),
            )
            .unwrap();
            assert_eq!(report.malformed_entries, 0);
            // Sender IDs depend on first-seen order, so compare by role.
            let by_role = |d: &crate::Donation| {
                let ego = d.donor_id.clone().unwrap();
                d.records
                    .iter()
                    .map(|r| (r.chat_id.clone(), r.sender_id == ego, r.timestamp_min, r.word_count, r.audio_seconds, r.is_media))
                    .collect::<Vec<_>>()
            };
            assert_eq!(by_role(&parsed), by_role(&mem));
        }
    }

    #[test]
    fn writing_is_deterministic() {
        let corpus = gen_corpus(&small(CorpusSpec::whatsapp_like(8))).unwrap();
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        corpus.write(a.path()).unwrap();
        corpus.write(b.path()).unwrap();
        let read = |root: &std::path::Path| {
            std::fs::read_to_string(root.join("whatsapp/donation_001/chat_02.txt")).unwrap()
        };
        assert_eq!(read(a.path()), read(b.path()));
    }
}
