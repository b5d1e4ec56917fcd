//! Seeded generator of synthetic donations with planted ground truth.
//!
//! Each chat gets a planted alter RP `x` and ego RP `y` linked by
//! `y = β0 + β1·x + u_donor + ε`. Response times are drawn from a mixture of
//! a fast lognormal component and a truncated Pareto tail, with the mixture
//! weight solved so that the share of gaps of at most five minutes equals
//! the planted RP. Corpora can be materialized in memory as [`Donation`]s or
//! written out as WhatsApp/Instagram export trees.

mod write;

use chrono::{Datelike, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, LogNormal, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, Normal as StdNormal};

use crate::error::{Error, Result};
use crate::ingest::anonymize::Anonymizer;
use crate::ingest::{chat_id_for, Donation, MessageRecord, Source};

/// Median of the fast component, in minutes.
pub const FAST_MEDIAN_MIN: f64 = 1.0;
pub const FAST_SIGMA: f64 = 0.6;
/// Scale (minimum) of the Pareto tail, in minutes.
pub const TAIL_SCALE_MIN: f64 = 5.0;
/// Tail draws are truncated at 30 days.
pub const TAIL_CAP_MIN: f64 = 43_200.0;
pub const RP_THRESHOLD_MIN: u64 = 5;
const WEIGHT_TOL: f64 = 1e-4;
const TARGET_CLIP: (f64, f64) = (0.01, 0.99);

/// Strings that appear in generated exports and must never reach an output.
pub const DONOR_NAME_STEM: &str = "Quorvex Donor";
pub const ALTER_NAME_STEM: &str = "Vantrell Partner";
pub const VOCABULARY: [&str; 12] = [
    "zephyrine",
    "blorptastic",
    "quillmoth",
    "snarvelite",
    "thrumbleck",
    "glaxenwort",
    "mirrowisp",
    "feldspurn",
    "crindlebar",
    "wozzleton",
    "pestrovine",
    "umbrakite",
];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceProfile {
    #[default]
    WhatsappLike,
    InstagramLike,
}

impl SourceProfile {
    pub fn source(self) -> Source {
        match self {
            SourceProfile::WhatsappLike => Source::Whatsapp,
            SourceProfile::InstagramLike => Source::Instagram,
        }
    }

    /// Pooled five-minute response share the profile is calibrated to.
    pub fn rp5_target(self) -> f64 {
        match self {
            SourceProfile::WhatsappLike => 0.6888,
            SourceProfile::InstagramLike => 0.4362,
        }
    }

    pub fn slope(self) -> f64 {
        match self {
            SourceProfile::WhatsappLike => 0.787,
            SourceProfile::InstagramLike => 0.797,
        }
    }
}

/// A change of both sides' RP targets for a stretch of months.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Drift {
    /// Zero-based month index within the chat.
    pub from_month: usize,
    /// Number of affected months; `None` keeps the change to the end.
    #[serde(default)]
    pub months: Option<usize>,
    pub rp5_ego_target: f64,
    pub rp5_alter_target: f64,
}

impl Drift {
    fn active(&self, month: usize) -> bool {
        month >= self.from_month && self.months.is_none_or(|k| month < self.from_month + k)
    }
}

/// Response-time behavior of one chat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DyadProfile {
    pub rp5_ego_target: f64,
    pub rp5_alter_target: f64,
    pub tail_exponent: f64,
    /// Probability that a block continues with one more message.
    pub burst_mixture_weight: f64,
    pub drift: Option<Drift>,
}

impl DyadProfile {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| v > 0.0 && v < 1.0;
        if !in_unit(self.rp5_ego_target) || !in_unit(self.rp5_alter_target) {
            return Err(Error::InvalidConfig("RP targets must lie in (0, 1)".into()));
        }
        if !(self.tail_exponent > 1.0) {
            return Err(Error::InvalidConfig("tail exponent must exceed 1".into()));
        }
        if !(0.0..1.0).contains(&self.burst_mixture_weight) {
            return Err(Error::InvalidConfig("burst weight must lie in [0, 1)".into()));
        }
        if let Some(d) = &self.drift {
            if !in_unit(d.rp5_ego_target) || !in_unit(d.rp5_alter_target) {
                return Err(Error::InvalidConfig("drift RP targets must lie in (0, 1)".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    pub n_donors: usize,
    pub chats_per_donor: usize,
    pub messages_per_chat: usize,
    pub slope_beta1: f64,
    pub intercept_beta0: f64,
    pub sigma_u: f64,
    pub sigma_e: f64,
    /// SD of a per-donor deviation of the slope; zero gives the
    /// random-intercept model.
    pub sigma_slope: f64,
    pub source: SourceProfile,
    pub seed: u64,
    /// Alter RP targets are uniform on this interval.
    pub alter_band: (f64, f64),
    pub tail_exponent: f64,
    pub burst_mixture_weight: f64,
    /// Messages are spread evenly over this many calendar months.
    pub months_per_chat: usize,
    pub drift: Option<Drift>,
    /// First calendar month of every chat.
    pub start_year: i32,
    pub start_month: u32,
    /// Share of messages replaced by a media attachment.
    pub media_share: f64,
    /// Share of Instagram messages sent as voice notes.
    pub audio_share: f64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec::whatsapp_like(1)
    }
}

impl CorpusSpec {
    fn preset(source: SourceProfile, seed: u64) -> Self {
        let target = source.rp5_target();
        let beta1 = source.slope();
        CorpusSpec {
            n_donors: 20,
            chats_per_donor: 8,
            messages_per_chat: 1000,
            slope_beta1: beta1,
            intercept_beta0: target * (1.0 - beta1),
            sigma_u: 0.05,
            sigma_e: 0.03,
            sigma_slope: 0.0,
            source,
            seed,
            alter_band: (target - 0.25, target + 0.25),
            tail_exponent: 1.5,
            burst_mixture_weight: 0.3,
            months_per_chat: 1,
            drift: None,
            start_year: 2022,
            start_month: 1,
            media_share: 0.02,
            audio_share: 0.03,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn whatsapp_like(seed: u64) -> Self {
        CorpusSpec::preset(SourceProfile::WhatsappLike, seed)
    }

    pub fn instagram_like(seed: u64) -> Self {
        CorpusSpec::preset(SourceProfile::InstagramLike, seed)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.n_donors == 0 || self.chats_per_donor == 0 || self.messages_per_chat == 0 {
            return bad("donor, chat and message counts must be at least 1");
        }
        if self.months_per_chat == 0 {
            return bad("months_per_chat must be at least 1");
        }
        if !(self.sigma_u >= 0.0 && self.sigma_e >= 0.0 && self.sigma_slope >= 0.0) {
            return bad("standard deviations must be non-negative");
        }
        let (lo, hi) = self.alter_band;
        if !(lo > 0.0 && hi < 1.0 && lo <= hi) {
            return bad("alter band must be an interval inside (0, 1)");
        }
        if !(self.tail_exponent > 1.0) {
            return bad("tail exponent must exceed 1");
        }
        if !(0.0..1.0).contains(&self.burst_mixture_weight) {
            return bad("burst weight must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.media_share) || !(0.0..=1.0).contains(&self.audio_share) {
            return bad("media and audio shares must lie in [0, 1]");
        }
        if let Some(d) = &self.drift {
            let in_unit = |v: f64| v > 0.0 && v < 1.0;
            if !in_unit(d.rp5_ego_target) || !in_unit(d.rp5_alter_target) {
                return bad("drift RP targets must lie in (0, 1)");
            }
        }
        if !(1..=12).contains(&self.start_month) {
            return bad("start_month must be 1..=12");
        }
        Ok(())
    }
}

/// Two-component response-time distribution for one side of a chat.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RtMixture {
    /// Probability of the fast component.
    pub weight: f64,
    pub tail_exponent: f64,
}

/// Probability that a fast draw rounds up to at most five minutes.
pub fn fast_rp5_mass() -> f64 {
    let z = (RP_THRESHOLD_MIN as f64 / FAST_MEDIAN_MIN).ln() / FAST_SIGMA;
    StdNormal::standard().cdf(z)
}

impl RtMixture {
    /// Solves the weight for a target five-minute share by bisection.
    /// Returns `true` alongside when the target was out of reach and the
    /// weight had to be clipped.
    pub fn for_target(target: f64, tail_exponent: f64) -> (Self, bool) {
        let mass = fast_rp5_mass();
        let share = |w: f64| w * mass;
        let clipped = !(target >= 0.0 && target <= mass);
        let (mut lo, mut hi) = (0.0, 1.0);
        while hi - lo > WEIGHT_TOL {
            let mid = 0.5 * (lo + hi);
            if share(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let weight = 0.5 * (lo + hi);
        (RtMixture { weight, tail_exponent }, clipped)
    }

    pub fn rp5(&self) -> f64 {
        self.weight * fast_rp5_mass()
    }

    /// One gap in whole minutes, at least 1.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> i64 {
        let draw = if rng.random::<f64>() < self.weight {
            LogNormal::new(FAST_MEDIAN_MIN.ln(), FAST_SIGMA)
                .expect("valid lognormal")
                .sample(rng)
        } else {
            let a = self.tail_exponent;
            let u: f64 = rng.random();
            let trunc = 1.0 - (TAIL_SCALE_MIN / TAIL_CAP_MIN).powf(a);
            let x = TAIL_SCALE_MIN * (1.0 - u * trunc).powf(-1.0 / a);
            // Keep the tail strictly above the threshold after rounding.
            x.max(RP_THRESHOLD_MIN as f64 + 0.5)
        };
        (draw.ceil() as i64).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Content {
    Text { words: u32 },
    Media,
    Audio { seconds: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthMessage {
    pub from_ego: bool,
    pub minute: i64,
    /// Seconds within the minute; used only by millisecond timestamps.
    pub second: u32,
    pub content: Content,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedChat {
    pub donation_id: String,
    pub chat_index: usize,
    pub donor_effect: f64,
    pub slope_effect: f64,
    pub profile: DyadProfile,
    /// The ego target left `(0.01, 0.99)` and was clipped.
    pub clipped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthChat {
    pub alter_label: String,
    pub messages: Vec<SynthMessage>,
    pub planted: PlantedChat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthDonation {
    pub donation_id: String,
    pub source: Source,
    pub donor_label: String,
    pub chats: Vec<SynthChat>,
}

impl SynthDonation {
    pub fn latest_minute(&self) -> i64 {
        self.chats
            .iter()
            .filter_map(|c| c.messages.last())
            .map(|m| m.minute)
            .max()
            .unwrap_or(0)
    }

    /// Declared donation time: one day after the last message.
    pub fn donated_at_min(&self) -> i64 {
        self.latest_minute() + 1440
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthCorpus {
    pub spec: CorpusSpec,
    pub donations: Vec<SynthDonation>,
    /// Targets whose mixture weight had to be clipped.
    pub infeasible_targets: usize,
}

impl SynthCorpus {
    pub fn planted(&self) -> impl Iterator<Item = &PlantedChat> {
        self.donations
            .iter()
            .flat_map(|d| d.chats.iter().map(|c| &c.planted))
    }

    pub fn message_count(&self) -> usize {
        self.donations
            .iter()
            .flat_map(|d| &d.chats)
            .map(|c| c.messages.len())
            .sum()
    }

    /// The corpus as parsed donations, skipping export files. Sender IDs
    /// come from the same per-donation anonymizer the parsers use.
    pub fn to_donations(&self) -> Vec<Donation> {
        self.donations
            .iter()
            .map(|d| {
                let mut anon = Anonymizer::new(&d.donation_id);
                let donor = anon.id_for(&d.donor_label).expect("non-empty label");
                let mut records = Vec::with_capacity(d.chats.iter().map(|c| c.messages.len()).sum());
                for (i, chat) in d.chats.iter().enumerate() {
                    let chat_id = chat_id_for(&d.donation_id, i);
                    let alter = anon.id_for(&chat.alter_label).expect("non-empty label");
                    for m in &chat.messages {
                        let (word_count, audio_seconds, is_media) = match m.content {
                            Content::Text { words } => (words, None, false),
                            Content::Media => (0, None, true),
                            Content::Audio { seconds } => (0, Some(seconds), false),
                        };
                        records.push(MessageRecord {
                            donation_id: d.donation_id.clone(),
                            chat_id: chat_id.clone(),
                            sender_id: if m.from_ego { donor.clone() } else { alter.clone() },
                            timestamp_min: m.minute,
                            word_count,
                            audio_seconds,
                            is_media,
                            source: d.source,
                        });
                    }
                }
                let mut donation = Donation::new(d.donation_id.clone(), d.source, records);
                donation.donor_id = Some(donor);
                donation.donated_at_min = Some(d.donated_at_min());
                donation
            })
            .collect()
    }
}

pub(crate) fn donation_id_for(j: usize) -> String {
    format!("donation_{j:03}")
}

fn donor_rng(seed: u64, donor: usize) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(b"synth-donor");
    h.update(seed.to_le_bytes());
    h.update((donor as u64).to_le_bytes());
    let mut bytes = [0u8; 32];
    bytes.copy_from_slice(&h.finalize());
    ChaCha8Rng::from_seed(bytes)
}

fn month_start_minute(year: i32, month: u32, offset: usize) -> i64 {
    let idx = year as i64 * 12 + (month as i64 - 1) + offset as i64;
    let (y, m) = (idx.div_euclid(12) as i32, idx.rem_euclid(12) as u32 + 1);
    let date = NaiveDate::from_ymd_opt(y, m, 1).expect("valid month");
    debug_assert_eq!(date.day(), 1);
    date.and_hms_opt(0, 0, 0)
        .expect("midnight")
        .and_utc()
        .timestamp()
        .div_euclid(60)
}

#[derive(Clone, Copy)]
struct ChatMix {
    ego: RtMixture,
    alter: RtMixture,
}

struct ChatPlan {
    normal: ChatMix,
    drifted: Option<(Drift, ChatMix)>,
    infeasible: usize,
}

impl ChatPlan {
    fn new(profile: &DyadProfile) -> Self {
        let mut infeasible = 0;
        let mut solve = |target: f64| {
            let (m, clipped) = RtMixture::for_target(target, profile.tail_exponent);
            infeasible += usize::from(clipped);
            m
        };
        let normal = ChatMix {
            ego: solve(profile.rp5_ego_target),
            alter: solve(profile.rp5_alter_target),
        };
        let drifted = profile.drift.as_ref().map(|d| {
            let mix = ChatMix {
                ego: solve(d.rp5_ego_target),
                alter: solve(d.rp5_alter_target),
            };
            (d.clone(), mix)
        });
        ChatPlan {
            normal,
            drifted,
            infeasible,
        }
    }

    fn mix(&self, month: usize) -> ChatMix {
        match &self.drifted {
            Some((d, m)) if d.active(month) => *m,
            _ => self.normal,
        }
    }
}

fn draw_content<R: Rng>(spec: &CorpusSpec, rng: &mut R) -> Content {
    let roll: f64 = rng.random();
    if roll < spec.media_share {
        Content::Media
    } else if spec.source == SourceProfile::InstagramLike && roll < spec.media_share + spec.audio_share {
        Content::Audio {
            seconds: rng.random_range(1..=120),
        }
    } else {
        Content::Text {
            words: rng.random_range(1..=12),
        }
    }
}

fn gen_timeline<R: Rng>(spec: &CorpusSpec, profile: &DyadProfile, plan: &ChatPlan, rng: &mut R) -> Vec<SynthMessage> {
    let months = spec.months_per_chat;
    let burst = Geometric::new(1.0 - profile.burst_mixture_weight).expect("weight in [0, 1)");
    let mut out: Vec<SynthMessage> = Vec::with_capacity(spec.messages_per_chat);
    let mut ego_turn = rng.random_bool(0.5);
    let mut last: Option<i64> = None;

    for month in 0..months {
        let quota = spec.messages_per_chat / months + usize::from(month < spec.messages_per_chat % months);
        if quota == 0 {
            continue;
        }
        let mix = plan.mix(month);
        let opening = month_start_minute(spec.start_year, spec.start_month, month)
            + rng.random_range(0..3 * 1440);
        let mut t = match last {
            Some(prev) => opening.max(prev + 1),
            None => opening,
        };
        let mut sent = 0;
        let mut first_block = true;
        while sent < quota {
            if !first_block {
                let side = if ego_turn { mix.ego } else { mix.alter };
                t = last.expect("a block was sent") + side.sample(rng);
            }
            first_block = false;
            let size = (1 + burst.sample(rng) as usize).min(quota - sent);
            for k in 0..size {
                if k > 0 {
                    t += rng.random_range(0..=1);
                }
                // Seconds rise within a minute so millisecond stamps keep
                // the generation order.
                let second = match out.last() {
                    Some(prev) if prev.minute == t => (prev.second + rng.random_range(1..4)).min(59),
                    _ => rng.random_range(0..30),
                };
                out.push(SynthMessage {
                    from_ego: ego_turn,
                    minute: t,
                    second,
                    content: draw_content(spec, rng),
                });
            }
            last = Some(t);
            sent += size;
            ego_turn = !ego_turn;
        }
    }
    out
}

fn gen_donor(spec: &CorpusSpec, j: usize) -> (SynthDonation, usize) {
    let mut rng = donor_rng(spec.seed, j);
    let donation_id = donation_id_for(j);
    let u = Normal::new(0.0, spec.sigma_u).expect("sigma_u >= 0").sample(&mut rng);
    let v = Normal::new(0.0, spec.sigma_slope).expect("sigma_slope >= 0").sample(&mut rng);
    let noise = Normal::new(0.0, spec.sigma_e).expect("sigma_e >= 0");
    let (lo, hi) = spec.alter_band;
    let center = 0.5 * (lo + hi);
    let mut infeasible = 0;

    let mut chats = Vec::with_capacity(spec.chats_per_donor);
    for c in 0..spec.chats_per_donor {
        let x = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        let raw_y = spec.intercept_beta0 + spec.slope_beta1 * x + v * (x - center) + u + noise.sample(&mut rng);
        let y = raw_y.clamp(TARGET_CLIP.0, TARGET_CLIP.1);
        let profile = DyadProfile {
            rp5_ego_target: y,
            rp5_alter_target: x,
            tail_exponent: spec.tail_exponent,
            burst_mixture_weight: spec.burst_mixture_weight,
            drift: spec.drift.clone(),
        };
        let plan = ChatPlan::new(&profile);
        infeasible += plan.infeasible;
        chats.push(SynthChat {
            alter_label: format!("{ALTER_NAME_STEM} {j:03}-{c:02}"),
            messages: gen_timeline(spec, &profile, &plan, &mut rng),
            planted: PlantedChat {
                donation_id: donation_id.clone(),
                chat_index: c,
                donor_effect: u,
                slope_effect: v,
                profile,
                clipped: y != raw_y,
            },
        });
    }
    let donation = SynthDonation {
        donation_id,
        source: spec.source.source(),
        donor_label: format!("{DONOR_NAME_STEM} {j:03}"),
        chats,
    };
    (donation, infeasible)
}

/// Generates a corpus. Donors are generated in parallel from per-donor
/// seeds, so the output depends only on the spec.
pub fn gen_corpus(spec: &CorpusSpec) -> Result<SynthCorpus> {
    spec.validate()?;
    let generated: Vec<(SynthDonation, usize)> = (0..spec.n_donors)
        .into_par_iter()
        .map(|j| gen_donor(spec, j))
        .collect();
    let infeasible_targets = generated.iter().map(|g| g.1).sum();
    Ok(SynthCorpus {
        spec: spec.clone(),
        donations: generated.into_iter().map(|g| g.0).collect(),
        infeasible_targets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixture_hits_target() {
        for target in [0.1, 0.4362, 0.6888, 0.95] {
            let (m, clipped) = RtMixture::for_target(target, 1.5);
            assert!(!clipped);
            assert!((m.rp5() - target).abs() < 1e-4, "{target}");
        }
        let (m, clipped) = RtMixture::for_target(0.999, 1.5);
        assert!(clipped);
        assert!(m.weight > 0.999);
    }

    #[test]
    fn empirical_share_matches_mixture() {
        let (m, _) = RtMixture::for_target(0.6888, 1.5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 200_000;
        let fast = (0..n).filter(|_| m.sample(&mut rng) <= 5).count();
        assert!((fast as f64 / n as f64 - 0.6888).abs() < 0.005);
    }

    #[test]
    fn tail_respects_cap() {
        let m = RtMixture {
            weight: 0.0,
            tail_exponent: 1.05,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10_000 {
            let g = m.sample(&mut rng);
            assert!((6..=TAIL_CAP_MIN as i64).contains(&g));
        }
    }

    #[test]
    fn corpus_shape_and_determinism() {
        let spec = CorpusSpec {
            n_donors: 3,
            chats_per_donor: 5,
            messages_per_chat: 120,
            ..CorpusSpec::whatsapp_like(4)
        };
        let a = gen_corpus(&spec).unwrap();
        let b = gen_corpus(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.message_count(), 3 * 5 * 120);
        for d in &a.donations {
            for c in &d.chats {
                assert!(c.messages.windows(2).all(|w| w[0].minute <= w[1].minute));
            }
        }
        let donations = a.to_donations();
        assert_eq!(donations.len(), 3);
        assert_eq!(donations[0].chat_count(), 5);
    }

    #[test]
    fn months_are_filled_in_order() {
        let spec = CorpusSpec {
            n_donors: 1,
            chats_per_donor: 1,
            messages_per_chat: 600,
            months_per_chat: 6,
            ..CorpusSpec::whatsapp_like(2)
        };
        let corpus = gen_corpus(&spec).unwrap();
        let msgs = &corpus.donations[0].chats[0].messages;
        let months: std::collections::BTreeSet<_> = msgs
            .iter()
            .map(|m| crate::timing::MonthKey::of_minute(m.minute))
            .collect();
        assert!(months.len() >= 6);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = CorpusSpec::whatsapp_like(1);
        spec.tail_exponent = 1.0;
        assert!(gen_corpus(&spec).is_err());
        let mut spec = CorpusSpec::whatsapp_like(1);
        spec.n_donors = 0;
        assert!(gen_corpus(&spec).is_err());
    }
}
