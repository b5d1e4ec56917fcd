//! WhatsApp plain-text exports.
//!
//! Two line shapes are accepted:
//!
//! ```text
//! DD.MM.YY, HH:MM - Sender: text          (Android)
//! [DD.MM.YY, HH:MM:SS] Sender: text       (iOS)
//! ```
//!
//! `/` is accepted as date separator and the year may have two or four
//! digits. Seconds are dropped. A timestamped line without a `Sender: `
//! part is a platform notice and is attributed to a reserved system sender.
//! Any other line continues the previous message.

use std::sync::LazyLock;

use chrono::NaiveDate;
use regex::Regex;

use super::{word_count, Anonymizer, IngestConfig, MessageRecord, ParseReport, Source};
use crate::error::{Error, Result};

/// Raw label for platform notices. Cannot collide with a real display name.
pub(crate) const SYSTEM_LABEL: &str = "\u{0}system";

static ANDROID: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^(\d{1,2})[./](\d{1,2})[./](\d{4}|\d{2}), (\d{1,2}):(\d{2}) - (.*)$").unwrap()
});
static IOS: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^\[(\d{1,2})[./](\d{1,2})[./](\d{4}|\d{2}), (\d{1,2}):(\d{2}):(\d{2})\] (.*)$")
        .unwrap()
});

#[derive(Debug, Clone, Default)]
pub struct ParsedChat {
    pub records: Vec<MessageRecord>,
    pub report: ParseReport,
}

enum Line<'a> {
    Message { minute: i64, rest: &'a str },
    BadTimestamp,
    Continuation(&'a str),
}

fn classify(line: &str) -> Line<'_> {
    let caps = ANDROID.captures(line).or_else(|| IOS.captures(line));
    let Some(c) = caps else {
        return Line::Continuation(line);
    };
    let num = |i: usize| c[i].parse::<u32>().unwrap_or(u32::MAX);
    let (day, month, mut year) = (num(1), num(2), num(3) as i32);
    if c[3].len() == 2 {
        year += 2000;
    }
    let (hour, minute) = (num(4), num(5));
    let rest = c.get(c.len() - 1).map_or("", |m| m.as_str());
    let minute_stamp = NaiveDate::from_ymd_opt(year, month, day)
        .and_then(|d| d.and_hms_opt(hour, minute, 0))
        .map(|dt| dt.and_utc().timestamp().div_euclid(60))
        .filter(|m| *m >= 0);
    match minute_stamp {
        Some(m) => Line::Message { minute: m, rest },
        None => Line::BadTimestamp,
    }
}

/// Parses one chat export. Continuation lines fold into the word count of
/// the message they belong to; text is discarded once counted.
pub fn parse_whatsapp_export(
    text: &str,
    donation_id: &str,
    chat_id: &str,
    anon: &mut Anonymizer,
    cfg: &IngestConfig,
) -> Result<ParsedChat> {
    let mut out = ParsedChat::default();
    // Index of the record continuation lines attach to.
    let mut open: Option<usize> = None;
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);

    for raw in text.lines() {
        let line = raw.trim_start_matches('\u{200e}');
        match classify(line) {
            Line::Message { minute, rest } => {
                let (label, content) = match rest.split_once(": ") {
                    Some((label, content)) => (label.trim_start_matches('\u{200e}'), content),
                    None => (SYSTEM_LABEL, rest),
                };
                let sender_id = match anon.id_for(label) {
                    Ok(id) => id,
                    Err(Error::EmptySenderLabel) => {
                        out.report.empty_sender_labels += 1;
                        out.report.unparsable_lines += 1;
                        open = None;
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                let is_media = cfg.is_media_placeholder(content);
                out.records.push(MessageRecord {
                    donation_id: donation_id.to_string(),
                    chat_id: chat_id.to_string(),
                    sender_id,
                    timestamp_min: minute,
                    word_count: if is_media { 0 } else { word_count(content) },
                    audio_seconds: None,
                    is_media,
                    source: Source::Whatsapp,
                });
                open = Some(out.records.len() - 1);
            }
            Line::Continuation(content) => match open {
                Some(i) => out.records[i].word_count += word_count(content),
                None if content.trim().is_empty() => {}
                None => out.report.unparsable_lines += 1,
            },
            Line::BadTimestamp => {
                out.report.unparsable_lines += 1;
                open = None;
            }
        }
    }

    if out.records.is_empty() {
        return Err(Error::EmptyExport);
    }
    out.report.records = out.records.len();
    Ok(out)
}
