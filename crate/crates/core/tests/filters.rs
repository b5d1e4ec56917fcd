use chatrecip::filterpipe::{run_filters, DropReason, FilterConfig};
use chatrecip::{Donation, MessageRecord, Source};
use proptest::prelude::*;

/// `(senders with their message counts)` per chat.
type ChatShape = Vec<usize>;

fn build(id: &str, chats: &[ChatShape]) -> Donation {
    let mut records = Vec::new();
    for (c, senders) in chats.iter().enumerate() {
        let chat_id = format!("{id}-c{c:02}");
        let mut t = 0;
        // Interleave senders so records look like a conversation.
        let mut left = senders.clone();
        while left.iter().any(|&n| n > 0) {
            for (s, n) in left.iter_mut().enumerate() {
                if *n > 0 {
                    *n -= 1;
                    t += 1;
                    records.push(MessageRecord {
                        donation_id: id.into(),
                        chat_id: chat_id.clone(),
                        sender_id: format!("s{s}"),
                        timestamp_min: t,
                        word_count: 3,
                        audio_seconds: None,
                        is_media: false,
                        source: Source::Whatsapp,
                    });
                }
            }
        }
    }
    Donation::new(id, Source::Whatsapp, records)
}

fn chat_passes(senders: &ChatShape, cfg: &FilterConfig) -> bool {
    let total: usize = senders.iter().sum();
    let present: Vec<usize> = senders.iter().copied().filter(|&n| n > 0).collect();
    present.len() == 2
        && total >= cfg.min_messages
        && present.iter().all(|&n| n as f64 / total as f64 >= cfg.min_share)
}

fn chat_shape() -> impl Strategy<Value = ChatShape> {
    prop_oneof![
        // Dyads near the size and share boundaries.
        (1usize..40, 60usize..140).prop_map(|(a, b)| vec![a, b]),
        (80usize..120, 0usize..30).prop_map(|(a, b)| vec![a, b]),
        // Groups and monologues.
        prop::collection::vec(5usize..60, 3..5),
        (90usize..130).prop_map(|a| vec![a]),
    ]
}

fn corpus() -> impl Strategy<Value = Vec<Vec<ChatShape>>> {
    prop::collection::vec(prop::collection::vec(chat_shape(), 1..10), 1..6)
}

#[test]
fn boundaries_are_inclusive() {
    let cfg = FilterConfig::default();
    // 10 of 100 is exactly the minimum share; 100 messages exactly the minimum.
    let keep = build("k", &vec![vec![10, 90]; 5]);
    let (out, audit) = run_filters(vec![keep], &cfg).unwrap();
    assert_eq!(out[0].chat_count(), 5);
    assert!(audit.entries.is_empty());

    let small = build("s", &[vec![50, 49], vec![50, 50], vec![50, 50], vec![50, 50], vec![50, 50]]);
    let (out, audit) = run_filters(vec![small], &cfg).unwrap();
    assert!(out.is_empty(), "4 surviving chats are too few");
    assert_eq!(audit.count(|r| matches!(r, DropReason::TooFewMessages { messages: 99 })), 1);
    assert_eq!(audit.count(|r| matches!(r, DropReason::DonationTooSmall { chats: 4 })), 1);

    let skewed = build("u", &[vec![9, 91]]);
    let (_, audit) = run_filters(vec![skewed], &cfg).unwrap();
    assert_eq!(audit.count(|r| matches!(r, DropReason::Unbalanced { .. })), 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn survivors_meet_every_threshold(shapes in corpus()) {
        let cfg = FilterConfig::default();
        let donations: Vec<Donation> = shapes
            .iter()
            .enumerate()
            .map(|(i, chats)| build(&format!("d{i}"), chats))
            .collect();
        let (kept, audit) = run_filters(donations, &cfg).unwrap();

        for d in &kept {
            prop_assert!(d.chat_count() >= cfg.min_chats_per_donation);
            for (_, chat) in d.chats() {
                let mut counts = std::collections::BTreeMap::new();
                for m in chat {
                    *counts.entry(&m.sender_id).or_insert(0usize) += 1;
                }
                prop_assert_eq!(counts.len(), 2);
                prop_assert!(chat.len() >= cfg.min_messages);
                for &n in counts.values() {
                    prop_assert!(n as f64 / chat.len() as f64 >= cfg.min_share);
                }
            }
        }

        // Independent oracle for which donations and chats survive.
        let expected: Vec<(String, usize)> = shapes
            .iter()
            .enumerate()
            .map(|(i, chats)| (format!("d{i}"), chats.iter().filter(|c| chat_passes(c, &cfg)).count()))
            .filter(|(_, n)| *n >= cfg.min_chats_per_donation)
            .collect();
        let got: Vec<(String, usize)> = kept.iter().map(|d| (d.donation_id.clone(), d.chat_count())).collect();
        prop_assert_eq!(got, expected);

        let total_chats: usize = shapes.iter().map(Vec::len).sum();
        let chat_drops = audit.entries.iter().filter(|e| !e.chat_id.is_empty()).count();
        let kept_chats: usize = kept.iter().map(Donation::chat_count).sum();
        let donation_drops: usize = audit.entries.iter().filter(|e| e.chat_id.is_empty()).count();
        prop_assert_eq!(donation_drops, shapes.len() - kept.len());
        prop_assert!(kept_chats + chat_drops <= total_chats);

        // A second pass changes nothing.
        let (again, audit2) = run_filters(kept.clone(), &cfg).unwrap();
        prop_assert_eq!(again, kept);
        prop_assert!(audit2.entries.is_empty());
    }
}
