//! Removal of erroneous data: test and duplicate donations, messages dated
//! after the donation, platform notices in chats, and misidentified
//! Instagram donors.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Donation, Fingerprint, MessageRecord, Source};

/// Known shape of an internal test export.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TestFingerprint {
    pub span_days: i64,
    pub message_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CleanConfig {
    pub test_fingerprints: Vec<TestFingerprint>,
    /// Senders with fewer messages are treated as platform notices in chats
    /// with more than two senders.
    pub system_cutoff: usize,
}

impl Default for CleanConfig {
    fn default() -> Self {
        CleanConfig {
            test_fingerprints: Vec::new(),
            system_cutoff: 10,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanReport {
    pub donations_in: usize,
    pub donations_removed_test: usize,
    pub donations_removed_duplicate: usize,
    pub messages_removed_future: usize,
    pub messages_removed_system: usize,
    /// Chat ID to number of senders pruned from it.
    pub senders_pruned_as_system: BTreeMap<String, usize>,
    pub donors_reassigned: usize,
    pub warnings: Vec<String>,
}

pub fn remove_test_donations(
    donations: Vec<Donation>,
    test_fingerprints: &[TestFingerprint],
) -> (Vec<Donation>, usize) {
    let known: HashSet<&TestFingerprint> = test_fingerprints.iter().collect();
    let before = donations.len();
    let kept: Vec<Donation> = donations
        .into_iter()
        .filter(|d| {
            !known.contains(&TestFingerprint {
                span_days: d.fingerprint.span_days(),
                message_count: d.fingerprint.message_count,
            })
        })
        .collect();
    let removed = before - kept.len();
    (kept, removed)
}

/// Keeps the first donation of every exact fingerprint.
pub fn remove_duplicate_donations(donations: Vec<Donation>) -> (Vec<Donation>, usize) {
    let mut seen: HashSet<Fingerprint> = HashSet::new();
    let before = donations.len();
    let kept: Vec<Donation> = donations
        .into_iter()
        .filter(|d| seen.insert(d.fingerprint))
        .collect();
    let removed = before - kept.len();
    (kept, removed)
}

/// Donation date used to spot future-dated messages: the recorded date, or
/// one day past the latest message.
pub fn donation_date(donation: &Donation) -> Option<i64> {
    donation.donated_at_min.or_else(|| {
        donation
            .records
            .iter()
            .map(|r| r.timestamp_min)
            .max()
            .map(|t| t + 1440)
    })
}

pub fn drop_future_messages(donation: &mut Donation, donation_date: Option<i64>) -> Result<usize> {
    let Some(limit) = donation_date else {
        return Err(Error::MissingDonationDate(donation.donation_id.clone()));
    };
    let before = donation.records.len();
    donation.records.retain(|r| r.timestamp_min <= limit);
    Ok(before - donation.records.len())
}

/// Repeatedly removes the least active sender of a chat with more than two
/// senders while that sender has fewer than `cutoff` messages. Returns the
/// pruned sender IDs.
pub fn prune_system_senders(chat: &mut Vec<MessageRecord>, cutoff: usize) -> Vec<String> {
    let mut pruned = Vec::new();
    loop {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for m in chat.iter() {
            *counts.entry(m.sender_id.as_str()).or_insert(0) += 1;
        }
        if counts.len() <= 2 {
            break;
        }
        let (least, n) = counts
            .iter()
            .min_by(|(a, x), (b, y)| x.cmp(y).then(a.cmp(b)))
            .map(|(s, n)| (s.to_string(), *n))
            .expect("chat has senders");
        if n >= cutoff {
            break;
        }
        chat.retain(|m| m.sender_id != least);
        pruned.push(least);
    }
    pruned
}

/// Moves the donor role to a sender present in strictly more chats than the
/// current candidate. Returns whether the donor changed.
pub fn fix_instagram_donor(donation: &mut Donation) -> bool {
    if donation.source != Source::Instagram {
        return false;
    }
    let counts = donation.sender_chat_counts();
    let current = donation
        .donor_id
        .as_deref()
        .and_then(|d| counts.get(d).copied())
        .unwrap_or(0);
    let best = counts
        .iter()
        .filter(|(_, &c)| c > current)
        .max_by(|(a, x), (b, y)| x.cmp(y).then(b.cmp(a)));
    match best {
        Some((id, _)) => {
            donation.donor_id = Some(id.to_string());
            true
        }
        None => false,
    }
}

fn prune_donation(donation: &mut Donation, cutoff: usize, report: &mut CleanReport) {
    let records = std::mem::take(&mut donation.records);
    let mut out = Vec::with_capacity(records.len());
    for chat in records.chunk_by(|a, b| a.chat_id == b.chat_id) {
        let chat_id = chat[0].chat_id.clone();
        let mut chat = chat.to_vec();
        let before = chat.len();
        let pruned = prune_system_senders(&mut chat, cutoff);
        if !pruned.is_empty() {
            report.messages_removed_system += before - chat.len();
            report.senders_pruned_as_system.insert(chat_id, pruned.len());
        }
        out.extend(chat);
    }
    donation.records = out;
}

/// Full cleaning pass. Fingerprints are those taken at ingest, so a second
/// pass over the output changes nothing.
pub fn cleanse(donations: Vec<Donation>, cfg: &CleanConfig) -> (Vec<Donation>, CleanReport) {
    let mut report = CleanReport {
        donations_in: donations.len(),
        ..Default::default()
    };
    let (donations, n) = remove_test_donations(donations, &cfg.test_fingerprints);
    report.donations_removed_test = n;
    let (mut donations, n) = remove_duplicate_donations(donations);
    report.donations_removed_duplicate = n;

    for d in &mut donations {
        let date = donation_date(d);
        match drop_future_messages(d, date) {
            Ok(n) => report.messages_removed_future += n,
            Err(e) => {
                log::warn!("{e}; skipping future-message check");
                report.warnings.push(e.to_string());
            }
        }
        prune_donation(d, cfg.system_cutoff, &mut report);
        if fix_instagram_donor(d) {
            report.donors_reassigned += 1;
        }
    }
    (donations, report)
}

/// Sender IDs present in a chat.
pub fn senders(chat: &[MessageRecord]) -> BTreeSet<&str> {
    chat.iter().map(|m| m.sender_id.as_str()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn msgs(chat: &str, counts: &[(&str, usize)]) -> Vec<MessageRecord> {
        let mut out = Vec::new();
        let mut t = 0;
        for (s, n) in counts {
            for _ in 0..*n {
                out.push(MessageRecord {
                    donation_id: "d".into(),
                    chat_id: chat.into(),
                    sender_id: s.to_string(),
                    timestamp_min: t,
                    word_count: 1,
                    audio_seconds: None,
                    is_media: false,
                    source: Source::Whatsapp,
                });
                t += 1;
            }
        }
        out
    }

    fn donation(id: &str, records: Vec<MessageRecord>) -> Donation {
        let records = records
            .into_iter()
            .map(|mut r| {
                r.donation_id = id.into();
                r
            })
            .collect();
        Donation::new(id, Source::Whatsapp, records)
    }

    #[test]
    fn test_fingerprints() {
        let d = donation("d", msgs("c", &[("a", 42)]));
        let (kept, n) = remove_test_donations(vec![d.clone()], &[]);
        assert_eq!((kept.len(), n), (1, 0));
        let fp = TestFingerprint {
            span_days: d.fingerprint.span_days(),
            message_count: 42,
        };
        let (kept, n) = remove_test_donations(vec![d], &[fp]);
        assert_eq!((kept.len(), n), (0, 1));
    }

    #[test]
    fn span_three_days_matches() {
        let mut records = msgs("c", &[("a", 42)]);
        for (i, r) in records.iter_mut().enumerate() {
            r.timestamp_min = (i as i64 % 3) * 1440 + 5;
        }
        let d = donation("d", records);
        let fp = TestFingerprint {
            span_days: 3,
            message_count: 42,
        };
        assert_eq!(remove_test_donations(vec![d], &[fp]).1, 1);
    }

    #[test]
    fn duplicates_are_exact_matches() {
        let a = donation("a", msgs("c", &[("x", 5)]));
        let b = donation("b", msgs("c", &[("x", 5)]));
        let (kept, n) = remove_duplicate_donations(vec![a, b]);
        assert_eq!(n, 1);
        assert_eq!(kept[0].donation_id, "a");

        let a = donation("a", msgs("c", &[("x", 5)]));
        let mut r = msgs("c", &[("x", 4)]);
        r[3].timestamp_min = 4;
        let b = donation("b", r);
        assert_eq!(a.fingerprint.latest_min, b.fingerprint.latest_min);
        assert_eq!(remove_duplicate_donations(vec![a, b]).1, 0);
    }

    #[test]
    fn future_messages() {
        let mut d = donation("d", msgs("c", &[("a", 5)]));
        assert_eq!(drop_future_messages(&mut d, Some(100)).unwrap(), 0);
        assert_eq!(drop_future_messages(&mut d, Some(3)).unwrap(), 1);
        assert_eq!(d.records.len(), 4);
        assert!(drop_future_messages(&mut d, None).is_err());
    }

    #[test]
    fn default_donation_date_keeps_everything() {
        let mut d = donation("d", msgs("c", &[("a", 5)]));
        let date = donation_date(&d);
        assert_eq!(date, Some(4 + 1440));
        assert_eq!(drop_future_messages(&mut d, date).unwrap(), 0);
        let empty = donation("e", vec![]);
        assert_eq!(donation_date(&empty), None);
    }

    #[test]
    fn prune_removes_minor_sender_from_triad() {
        let mut chat = msgs("c", &[("A", 500), ("B", 400), ("sys", 3)]);
        assert_eq!(prune_system_senders(&mut chat, 10), vec!["sys".to_string()]);
        assert_eq!(senders(&chat).len(), 2);
        assert_eq!(chat.len(), 900);
    }

    #[test]
    fn prune_keeps_real_triads_and_dyads() {
        let mut chat = msgs("c", &[("A", 500), ("B", 400), ("C", 50)]);
        assert!(prune_system_senders(&mut chat, 10).is_empty());
        assert_eq!(senders(&chat).len(), 3);
        let mut dyad = msgs("c", &[("A", 5), ("B", 200)]);
        assert!(prune_system_senders(&mut dyad, 10).is_empty());
        assert_eq!(dyad.len(), 205);
    }

    #[test]
    fn prune_iterates() {
        let mut chat = msgs("c", &[("A", 100), ("B", 100), ("s1", 3), ("s2", 7)]);
        assert_eq!(prune_system_senders(&mut chat, 10), vec!["s1", "s2"]);
        // Stops once the chat is a dyad even if a sender is below the cutoff.
        let mut chat = msgs("c", &[("A", 100), ("B", 5), ("s1", 3)]);
        assert_eq!(prune_system_senders(&mut chat, 10), vec!["s1"]);
        assert_eq!(senders(&chat).len(), 2);
    }

    #[test]
    fn instagram_donor_reassignment() {
        let mut records = Vec::new();
        for i in 0..7 {
            records.extend(msgs(&format!("c{i}"), &[("me", 3), (&format!("p{i}"), 3)]));
        }
        records.extend(msgs("c0", &[("wrong", 1)]));
        records.extend(msgs("c1", &[("wrong", 1)]));
        let mut d = donation("ig", records);
        d.source = Source::Instagram;
        d.donor_id = Some("wrong".into());
        assert!(fix_instagram_donor(&mut d));
        assert_eq!(d.donor_id.as_deref(), Some("me"));
        assert!(!fix_instagram_donor(&mut d));

        d.source = Source::Whatsapp;
        d.donor_id = Some("wrong".into());
        assert!(!fix_instagram_donor(&mut d));
    }

    #[test]
    fn cleanse_is_idempotent() {
        let mut a = msgs("a-c0", &[("x", 50), ("y", 40), ("sys", 2)]);
        a.extend(msgs("a-c1", &[("x", 30), ("z", 30)]));
        let mut da = donation("a", a);
        da.donated_at_min = Some(80);
        let db = donation("b", msgs("b-c0", &[("x", 50), ("y", 40), ("sys", 2)]));
        let dup = donation("dup", msgs("dup-c0", &[("x", 50), ("y", 40), ("sys", 2)]));
        let cfg = CleanConfig::default();
        let (once, report) = cleanse(vec![da, db, dup], &cfg);
        assert_eq!(report.donations_removed_duplicate, 1);
        assert!(report.messages_removed_future > 0);
        let (twice, report2) = cleanse(once.clone(), &cfg);
        assert_eq!(once, twice);
        assert_eq!(report2.donations_removed_duplicate, 0);
        assert_eq!(report2.messages_removed_future, 0);
        assert!(report2.senders_pruned_as_system.is_empty());
    }
}
