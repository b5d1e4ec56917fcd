//! Parsing of raw chat exports into metadata-only [`MessageRecord`]s.
//!
//! Message bodies are reduced to word counts (or audio lengths) while the
//! line is being parsed and sender labels are replaced by opaque IDs from a
//! per-donation [`Anonymizer`]. Nothing else from the raw export survives.

pub mod anonymize;
mod instagram;
mod whatsapp;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use anonymize::Anonymizer;
pub use instagram::{parse_instagram_export, ParsedArchive};
pub use whatsapp::{parse_whatsapp_export, ParsedChat};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Whatsapp,
    Instagram,
}

impl Source {
    pub const ALL: [Source; 2] = [Source::Whatsapp, Source::Instagram];

    pub fn as_str(self) -> &'static str {
        match self {
            Source::Whatsapp => "whatsapp",
            Source::Instagram => "instagram",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "whatsapp" | "wa" => Ok(Source::Whatsapp),
            "instagram" | "ig" => Ok(Source::Instagram),
            other => Err(Error::InvalidConfig(format!("unknown source `{other}`"))),
        }
    }
}

/// One anonymized message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageRecord {
    pub donation_id: String,
    pub chat_id: String,
    pub sender_id: String,
    /// Minutes since the Unix epoch, UTC.
    pub timestamp_min: i64,
    pub word_count: u32,
    #[serde(default)]
    pub audio_seconds: Option<u32>,
    pub is_media: bool,
    pub source: Source,
}

/// `(earliest, latest, count)` of a donation as it was received.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Fingerprint {
    pub earliest_min: i64,
    pub latest_min: i64,
    pub message_count: usize,
}

impl Fingerprint {
    pub fn of(records: &[MessageRecord]) -> Self {
        let earliest_min = records.iter().map(|r| r.timestamp_min).min().unwrap_or(0);
        let latest_min = records.iter().map(|r| r.timestamp_min).max().unwrap_or(0);
        Fingerprint {
            earliest_min,
            latest_min,
            message_count: records.len(),
        }
    }

    /// Number of UTC calendar days touched, first and last day inclusive.
    pub fn span_days(&self) -> i64 {
        if self.message_count == 0 {
            return 0;
        }
        self.latest_min.div_euclid(1440) - self.earliest_min.div_euclid(1440) + 1
    }
}

/// All records of one donor, sorted by `(chat_id, timestamp_min)` with input
/// order breaking ties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Donation {
    pub donation_id: String,
    pub source: Source,
    /// Sender ID of the data donor (ego), if known.
    pub donor_id: Option<String>,
    /// Donation date in minutes since the epoch, if the export carried one.
    pub donated_at_min: Option<i64>,
    /// Fingerprint taken at ingest. Cleaning never recomputes it.
    pub fingerprint: Fingerprint,
    #[serde(skip)]
    pub records: Vec<MessageRecord>,
}

impl Donation {
    pub fn new(donation_id: impl Into<String>, source: Source, mut records: Vec<MessageRecord>) -> Self {
        records.sort_by(|a, b| {
            a.chat_id
                .cmp(&b.chat_id)
                .then(a.timestamp_min.cmp(&b.timestamp_min))
        });
        Donation {
            donation_id: donation_id.into(),
            source,
            donor_id: None,
            donated_at_min: None,
            fingerprint: Fingerprint::of(&records),
            records,
        }
    }

    /// Contiguous per-chat slices of `records`, in chat order.
    pub fn chats(&self) -> Vec<(&str, &[MessageRecord])> {
        self.records
            .chunk_by(|a, b| a.chat_id == b.chat_id)
            .map(|c| (c[0].chat_id.as_str(), c))
            .collect()
    }

    pub fn chat_count(&self) -> usize {
        self.chats().len()
    }

    /// Number of chats each sender takes part in.
    pub fn sender_chat_counts(&self) -> BTreeMap<&str, usize> {
        let mut counts = BTreeMap::new();
        for (_, msgs) in self.chats() {
            let senders: BTreeSet<&str> = msgs.iter().map(|m| m.sender_id.as_str()).collect();
            for s in senders {
                *counts.entry(s).or_insert(0) += 1;
            }
        }
        counts
    }

    /// Sender present in the most chats; ties go to the larger message total,
    /// then to the smaller ID.
    pub fn most_connected_sender(&self) -> Option<String> {
        let mut totals: BTreeMap<&str, usize> = BTreeMap::new();
        for r in &self.records {
            *totals.entry(r.sender_id.as_str()).or_insert(0) += 1;
        }
        self.sender_chat_counts()
            .into_iter()
            .max_by(|(a, ca), (b, cb)| {
                ca.cmp(cb)
                    .then(totals[a].cmp(&totals[b]))
                    .then(b.cmp(a))
            })
            .map(|(s, _)| s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestConfig {
    /// Message bodies that stand for an attachment rather than text.
    pub media_placeholders: Vec<String>,
}

impl Default for IngestConfig {
    fn default() -> Self {
        let placeholders = [
            "<Media omitted>",
            "<Medien ausgeschlossen>",
            "<Multimedia omitido>",
            "<Médias omis>",
            "<Media weggelaten>",
            "<Media omessi>",
            "image omitted",
            "video omitted",
            "audio omitted",
            "sticker omitted",
            "GIF omitted",
            "document omitted",
            "Bild weggelassen",
            "Video weggelassen",
            "Audio weggelassen",
            "Sticker weggelassen",
        ];
        IngestConfig {
            media_placeholders: placeholders.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl IngestConfig {
    pub(crate) fn is_media_placeholder(&self, content: &str) -> bool {
        let c = content.trim_matches(|ch: char| ch.is_whitespace() || ch == '\u{200e}');
        self.media_placeholders.iter().any(|p| p == c)
    }
}

/// Counts of maximal non-whitespace runs.
pub fn word_count(text: &str) -> u32 {
    text.split_whitespace().count() as u32
}

/// Lines or entries that could not be turned into records.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseReport {
    pub records: usize,
    pub unparsable_lines: usize,
    pub malformed_entries: usize,
    pub empty_sender_labels: usize,
}

impl ParseReport {
    pub fn merge(&mut self, other: &ParseReport) {
        self.records += other.records;
        self.unparsable_lines += other.unparsable_lines;
        self.malformed_entries += other.malformed_entries;
        self.empty_sender_labels += other.empty_sender_labels;
    }
}

/// Optional `meta.json` next to a donation's export files.
#[derive(Debug, Clone, Default, Deserialize)]
struct DonationMeta {
    /// Raw label of the donor as it appears among the senders.
    donor: Option<String>,
    /// RFC 3339 timestamp or `YYYY-MM-DD`.
    donated_at: Option<String>,
}

fn parse_donation_date(s: &str) -> Option<i64> {
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp().div_euclid(60));
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(23, 59, 0))
        .map(|dt| dt.and_utc().timestamp().div_euclid(60))
}

fn read_meta(dir: &Path) -> Result<DonationMeta> {
    let path = dir.join("meta.json");
    if !path.exists() {
        return Ok(DonationMeta::default());
    }
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(&path, e))
}

/// Parses one donation directory.
///
/// WhatsApp donations hold one `.txt` export per chat. Instagram donations
/// hold an export tree with `message_<n>.json` files per conversation. Chats
/// are numbered in file path order, so chat IDs never depend on file names.
pub fn ingest_donation_dir(
    dir: &Path,
    source: Source,
    donation_id: &str,
    cfg: &IngestConfig,
) -> Result<(Donation, ParseReport)> {
    let meta = read_meta(dir)?;
    let mut anon = Anonymizer::new(donation_id);
    let (records, report) = match source {
        Source::Whatsapp => {
            let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
                .map_err(|e| Error::io(dir, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "txt"))
                .collect();
            files.sort();
            if files.is_empty() {
                return Err(Error::MissingMessageFile(dir.to_path_buf()));
            }
            let mut records = Vec::new();
            let mut report = ParseReport::default();
            for (i, file) in files.iter().enumerate() {
                let text = std::fs::read_to_string(file).map_err(|e| Error::io(file, e))?;
                let chat_id = chat_id_for(donation_id, i);
                let parsed = parse_whatsapp_export(&text, donation_id, &chat_id, &mut anon, cfg)?;
                report.merge(&parsed.report);
                records.extend(parsed.records);
            }
            (records, report)
        }
        Source::Instagram => {
            let parsed = parse_instagram_export(dir, donation_id, &mut anon)?;
            (parsed.records, parsed.report)
        }
    };
    let mut donation = Donation::new(donation_id, source, records);
    donation.donated_at_min = meta.donated_at.as_deref().and_then(parse_donation_date);
    donation.donor_id = meta
        .donor
        .as_deref()
        .and_then(|label| anon.lookup(label).map(str::to_string))
        .or_else(|| donation.most_connected_sender());
    Ok((donation, report))
}

pub(crate) fn chat_id_for(donation_id: &str, index: usize) -> String {
    format!("{donation_id}-c{index:02}")
}
