//! Block merging and response times.
//!
//! Consecutive messages by one sender form a block. Every block after the
//! first in a chat yields one [`ResponseRecord`]; its response time is the
//! gap from the previous block's last message to this block's first message
//! ([`Aggregation::First`]) or to its last message ([`Aggregation::Last`]),
//! in whole minutes with a floor of one minute.

use std::fmt;

use chrono::{DateTime, Datelike};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Error;
use crate::ingest::{Donation, MessageRecord};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    First,
    Last,
}

impl std::str::FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "first" => Ok(Aggregation::First),
            "last" => Ok(Aggregation::Last),
            other => Err(Error::InvalidConfig(format!("unknown aggregation `{other}`"))),
        }
    }
}

/// UTC calendar month.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MonthKey {
    pub year: i32,
    pub month: u32,
}

impl MonthKey {
    pub fn of_minute(minute: i64) -> Self {
        let dt = DateTime::from_timestamp(minute * 60, 0).expect("timestamp in range");
        MonthKey {
            year: dt.year(),
            month: dt.month(),
        }
    }
}

impl fmt::Display for MonthKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl Serialize for MonthKey {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MonthKey {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let parsed = s
            .split_once('-')
            .and_then(|(y, m)| Some((y.parse().ok()?, m.parse().ok()?)))
            .filter(|(_, m): &(i32, u32)| (1..=12).contains(m));
        match parsed {
            Some((year, month)) => Ok(MonthKey { year, month }),
            None => Err(serde::de::Error::custom(format!("bad month key `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub sender_id: String,
    pub first_ts: i64,
    pub last_ts: i64,
    pub word_count: u64,
    pub messages: usize,
}

/// Collapses maximal same-sender runs. Input order is taken as is.
pub fn merge_blocks(messages: &[MessageRecord]) -> Vec<Block> {
    messages
        .chunk_by(|a, b| a.sender_id == b.sender_id)
        .map(|run| Block {
            sender_id: run[0].sender_id.clone(),
            first_ts: run[0].timestamp_min,
            last_ts: run[run.len() - 1].timestamp_min,
            word_count: run.iter().map(|m| u64::from(m.word_count)).sum(),
            messages: run.len(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub donation_id: String,
    pub chat_id: String,
    pub responder_id: String,
    pub is_ego: bool,
    pub rt_min: u64,
    pub block_first_ts: i64,
    pub block_last_ts: i64,
    pub block_word_count: u64,
    /// Raw messages merged into the block.
    #[serde(default = "one")]
    pub block_messages: usize,
    pub month_key: MonthKey,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimingReport {
    pub blocks: usize,
    pub responses: usize,
    pub dropped_negative_gaps: usize,
}

/// Response records for one chat's blocks. Blocks with a negative gap to
/// their predecessor are dropped and counted.
pub fn response_times(
    blocks: &[Block],
    mode: Aggregation,
    donation_id: &str,
    chat_id: &str,
    ego_id: Option<&str>,
    report: &mut TimingReport,
) -> Vec<ResponseRecord> {
    report.blocks += blocks.len();
    let mut out = Vec::with_capacity(blocks.len().saturating_sub(1));
    for pair in blocks.windows(2) {
        let (prev, cur) = (&pair[0], &pair[1]);
        let anchor = match mode {
            Aggregation::First => cur.first_ts,
            Aggregation::Last => cur.last_ts,
        };
        let gap = anchor - prev.last_ts;
        if gap < 0 {
            report.dropped_negative_gaps += 1;
            continue;
        }
        out.push(ResponseRecord {
            donation_id: donation_id.to_string(),
            chat_id: chat_id.to_string(),
            responder_id: cur.sender_id.clone(),
            is_ego: ego_id == Some(cur.sender_id.as_str()),
            rt_min: gap.max(1) as u64,
            block_first_ts: cur.first_ts,
            block_last_ts: cur.last_ts,
            block_word_count: cur.word_count,
            block_messages: cur.messages,
            month_key: MonthKey::of_minute(cur.first_ts),
        });
    }
    report.responses += out.len();
    out
}

/// Response records for every chat of a donation. Records are expected in
/// [`Donation`] order (per chat, by time).
pub fn donation_responses(
    donation: &Donation,
    mode: Aggregation,
    report: &mut TimingReport,
) -> Vec<ResponseRecord> {
    let ego = donation.donor_id.as_deref();
    donation
        .chats()
        .into_iter()
        .flat_map(|(chat_id, msgs)| {
            let blocks = merge_blocks(msgs);
            response_times(&blocks, mode, &donation.donation_id, chat_id, ego, report)
        })
        .collect()
}
