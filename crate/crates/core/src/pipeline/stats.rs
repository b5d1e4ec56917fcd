//! Descriptive tables computed on filtered, unmerged messages.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ingest::{Donation, Fingerprint, Source};
use crate::stability::median;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    /// Sample SD; 0 for a single value.
    pub sd: f64,
    pub min: f64,
    pub max: f64,
}

impl SummaryStats {
    pub fn of(values: &[f64]) -> Option<Self> {
        let n = values.len();
        let median = median(values).ok()?;
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(SummaryStats {
            n,
            mean,
            median,
            sd,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatRow {
    pub source: Source,
    pub quantity: &'static str,
    pub stats: SummaryStats,
}

pub const CHATS_PER_DONOR: &str = "Chats per donor";
pub const TIME_SPAN_PER_DONOR: &str = "Time span per donor";
pub const MESSAGES_PER_DONOR: &str = "Messages per donor";

/// Chats, time span in days, and messages per donation, summarized per
/// source.
pub fn stat_table(donations: &[Donation]) -> Vec<StatRow> {
    let mut per_source: BTreeMap<Source, [Vec<f64>; 3]> = BTreeMap::new();
    for d in donations {
        let cols = per_source.entry(d.source).or_default();
        cols[0].push(d.chat_count() as f64);
        cols[1].push(Fingerprint::of(&d.records).span_days() as f64);
        cols[2].push(d.records.len() as f64);
    }
    let mut rows = Vec::new();
    for (source, cols) in per_source {
        for (quantity, values) in [CHATS_PER_DONOR, TIME_SPAN_PER_DONOR, MESSAGES_PER_DONOR]
            .into_iter()
            .zip(&cols)
        {
            if let Some(stats) = SummaryStats::of(values) {
                rows.push(StatRow {
                    source,
                    quantity,
                    stats,
                });
            }
        }
    }
    rows
}

pub const WORD_COUNT_MAX: usize = 300;

/// Word counts of text messages; media and voice notes are left out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordCountHistogram {
    pub source: Source,
    /// Messages with exactly `i` words, for `i` in `0..=300`.
    pub counts: Vec<usize>,
    pub over_max: usize,
    pub messages: usize,
    pub share_over_20: f64,
}

pub fn word_count_histogram(donations: &[Donation]) -> Vec<WordCountHistogram> {
    let mut per_source: BTreeMap<Source, WordCountHistogram> = BTreeMap::new();
    let mut over_20: BTreeMap<Source, usize> = BTreeMap::new();
    for d in donations {
        let h = per_source.entry(d.source).or_insert_with(|| WordCountHistogram {
            source: d.source,
            counts: vec![0; WORD_COUNT_MAX + 1],
            over_max: 0,
            messages: 0,
            share_over_20: 0.0,
        });
        for r in d.records.iter().filter(|r| !r.is_media && r.audio_seconds.is_none()) {
            let wc = r.word_count as usize;
            h.messages += 1;
            if wc > WORD_COUNT_MAX {
                h.over_max += 1;
            } else {
                h.counts[wc] += 1;
            }
            if wc > 20 {
                *over_20.entry(d.source).or_default() += 1;
            }
        }
    }
    per_source
        .into_values()
        .map(|mut h| {
            if h.messages > 0 {
                h.share_over_20 = over_20.get(&h.source).copied().unwrap_or(0) as f64 / h.messages as f64;
            }
            h
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::MessageRecord;

    fn donation(id: &str, chats: usize) -> Donation {
        let records = (0..chats)
            .flat_map(|c| {
                (0..2).map(move |k| MessageRecord {
                    donation_id: id.into(),
                    chat_id: format!("{id}-c{c:02}"),
                    sender_id: format!("s{k}"),
                    timestamp_min: 1440 * c as i64 + k,
                    word_count: 21 * k as u32,
                    audio_seconds: None,
                    is_media: false,
                    source: Source::Whatsapp,
                })
            })
            .collect();
        Donation::new(id, Source::Whatsapp, records)
    }

    #[test]
    fn single_donor_has_zero_spread() {
        let rows = stat_table(&[donation("a", 5)]);
        let chats = &rows[0].stats;
        assert_eq!(rows[0].quantity, CHATS_PER_DONOR);
        assert_eq!((chats.mean, chats.median, chats.sd), (5.0, 5.0, 0.0));
        assert_eq!(rows[1].stats.mean, 5.0);
        assert_eq!(rows[2].stats.mean, 10.0);
    }

    #[test]
    fn two_donors() {
        let rows = stat_table(&[donation("a", 5), donation("b", 7)]);
        let chats = &rows[0].stats;
        assert_eq!((chats.mean, chats.min, chats.max), (6.0, 5.0, 7.0));
        assert!((chats.sd - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn word_counts() {
        let h = word_count_histogram(&[donation("a", 3)]);
        assert_eq!(h[0].messages, 6);
        assert_eq!(h[0].counts[0], 3);
        assert_eq!(h[0].counts[21], 3);
        assert_eq!(h[0].share_over_20, 0.5);
    }
}
