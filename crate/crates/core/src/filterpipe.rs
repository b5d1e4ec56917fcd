//! Quality filters that keep sustained dyadic chats in sufficiently large
//! donations. The stages must run in the order of [`run_filters`]: the
//! donation-size rule counts chats that survived the chat-level rules.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Donation, MessageRecord};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    /// Minimum share of a chat's messages each sender must have written.
    pub min_share: f64,
    /// Minimum raw message count per chat.
    pub min_messages: usize,
    pub min_chats_per_donation: usize,
    pub max_participants: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            min_share: 0.10,
            min_messages: 100,
            min_chats_per_donation: 5,
            max_participants: 2,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_share > 0.0 && self.min_share < 0.5) {
            return Err(Error::InvalidConfig(format!(
                "min_share must lie in (0, 0.5), got {}",
                self.min_share
            )));
        }
        if self.min_messages < 1 || self.min_chats_per_donation < 1 {
            return Err(Error::InvalidConfig(
                "min_messages and min_chats_per_donation must be at least 1".into(),
            ));
        }
        if self.max_participants != 2 {
            return Err(Error::InvalidConfig("only dyadic chats are supported".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum DropReason {
    NotDyadic { senders: usize },
    Unbalanced { smallest_share: f64 },
    TooFewMessages { messages: usize },
    DonationTooSmall { chats: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub donation_id: String,
    /// Empty for donation-level drops.
    pub chat_id: String,
    #[serde(flatten)]
    pub reason: DropReason,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterAudit {
    pub entries: Vec<AuditEntry>,
}

impl FilterAudit {
    pub fn count(&self, pred: impl Fn(&DropReason) -> bool) -> usize {
        self.entries.iter().filter(|e| pred(&e.reason)).count()
    }
}

fn sender_counts(chat: &[MessageRecord]) -> BTreeMap<&str, usize> {
    let mut counts = BTreeMap::new();
    for m in chat {
        *counts.entry(m.sender_id.as_str()).or_insert(0) += 1;
    }
    counts
}

/// Keeps the chats for which `verdict` returns `None`, logging the rest.
fn retain_chats(
    donation: &mut Donation,
    audit: &mut FilterAudit,
    verdict: impl Fn(&[MessageRecord]) -> Option<DropReason>,
) {
    let records = std::mem::take(&mut donation.records);
    let mut kept = Vec::with_capacity(records.len());
    for chat in records.chunk_by(|a, b| a.chat_id == b.chat_id) {
        match verdict(chat) {
            None => kept.extend_from_slice(chat),
            Some(reason) => audit.entries.push(AuditEntry {
                donation_id: donation.donation_id.clone(),
                chat_id: chat[0].chat_id.clone(),
                reason,
            }),
        }
    }
    donation.records = kept;
}

/// Drops chats that do not have exactly `max_participants` senders.
pub fn drop_group_chats(donation: &mut Donation, max_participants: usize, audit: &mut FilterAudit) {
    retain_chats(donation, audit, |chat| {
        let senders = sender_counts(chat).len();
        (senders != max_participants).then_some(DropReason::NotDyadic { senders })
    });
}

/// Drops chats where some sender wrote less than `min_share` of the messages.
/// A share exactly at the threshold is kept.
pub fn drop_unbalanced_chats(donation: &mut Donation, min_share: f64, audit: &mut FilterAudit) {
    retain_chats(donation, audit, |chat| {
        let total = chat.len() as f64;
        let smallest = sender_counts(chat).values().copied().min().unwrap_or(0) as f64 / total;
        (smallest < min_share).then_some(DropReason::Unbalanced {
            smallest_share: smallest,
        })
    });
}

pub fn drop_small_chats(donation: &mut Donation, min_messages: usize, audit: &mut FilterAudit) {
    retain_chats(donation, audit, |chat| {
        (chat.len() < min_messages).then_some(DropReason::TooFewMessages {
            messages: chat.len(),
        })
    });
}

pub fn drop_small_donations(
    donations: Vec<Donation>,
    min_chats: usize,
    audit: &mut FilterAudit,
) -> Vec<Donation> {
    donations
        .into_iter()
        .filter(|d| {
            let chats = d.chat_count();
            let keep = chats >= min_chats;
            if !keep {
                audit.entries.push(AuditEntry {
                    donation_id: d.donation_id.clone(),
                    chat_id: String::new(),
                    reason: DropReason::DonationTooSmall { chats },
                });
            }
            keep
        })
        .collect()
}

/// Group-chat drop, then balance, then size, then donation size.
pub fn run_filters(mut donations: Vec<Donation>, cfg: &FilterConfig) -> Result<(Vec<Donation>, FilterAudit)> {
    cfg.validate()?;
    let mut audit = FilterAudit::default();
    for d in &mut donations {
        drop_group_chats(d, cfg.max_participants, &mut audit);
        drop_unbalanced_chats(d, cfg.min_share, &mut audit);
        drop_small_chats(d, cfg.min_messages, &mut audit);
    }
    let donations = drop_small_donations(donations, cfg.min_chats_per_donation, &mut audit);
    Ok((donations, audit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Source;

    fn chat(id: &str, counts: &[(&str, usize)]) -> Vec<MessageRecord> {
        let mut out = Vec::new();
        let mut t = 0;
        for (s, n) in counts {
            for _ in 0..*n {
                out.push(MessageRecord {
                    donation_id: "d".into(),
                    chat_id: id.into(),
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

    fn donation(chats: Vec<Vec<MessageRecord>>) -> Donation {
        Donation::new("d", Source::Whatsapp, chats.concat())
    }

    #[test]
    fn group_chats() {
        let mut d = donation(vec![
            chat("a", &[("x", 5), ("y", 5), ("z", 5)]),
            chat("b", &[("x", 5), ("y", 5)]),
            chat("c", &[("x", 5)]),
        ]);
        let mut audit = FilterAudit::default();
        drop_group_chats(&mut d, 2, &mut audit);
        assert_eq!(d.chats().iter().map(|c| c.0).collect::<Vec<_>>(), ["b"]);
        assert_eq!(audit.entries.len(), 2);
    }

    #[test]
    fn balance_boundary_is_inclusive() {
        let mut d = donation(vec![
            chat("a", &[("x", 90), ("y", 10)]),
            chat("b", &[("x", 95), ("y", 5)]),
            chat("c", &[("x", 50), ("y", 50)]),
            chat("d", &[("x", 117), ("y", 13)]),
        ]);
        let mut audit = FilterAudit::default();
        drop_unbalanced_chats(&mut d, 0.10, &mut audit);
        assert_eq!(d.chats().iter().map(|c| c.0).collect::<Vec<_>>(), ["a", "c", "d"]);
    }

    #[test]
    fn size_boundary_is_inclusive() {
        let mut d = donation(vec![
            chat("a", &[("x", 50), ("y", 49)]),
            chat("b", &[("x", 50), ("y", 50)]),
        ]);
        let mut audit = FilterAudit::default();
        drop_small_chats(&mut d, 100, &mut audit);
        assert_eq!(d.chats().iter().map(|c| c.0).collect::<Vec<_>>(), ["b"]);
    }

    #[test]
    fn donation_size_boundary() {
        let mk = |n: usize| {
            donation((0..n).map(|i| chat(&format!("c{i}"), &[("x", 1), ("y", 1)])).collect())
        };
        let mut audit = FilterAudit::default();
        let kept = drop_small_donations(vec![mk(4), mk(5), mk(0)], 5, &mut audit);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].chat_count(), 5);
        assert_eq!(audit.entries.len(), 2);
    }

    #[test]
    fn config_validation() {
        assert!(FilterConfig::default().validate().is_ok());
        let bad = FilterConfig {
            min_share: 0.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = FilterConfig {
            min_messages: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
