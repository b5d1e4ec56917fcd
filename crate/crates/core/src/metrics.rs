//! Binned response-time distributions, their Jensen-Shannon similarity,
//! fast-response probabilities and pooled ECDF summaries.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Real;
use crate::timing::ResponseRecord;

pub const N_BINS: usize = 7;
pub const BIN_LABELS: [&str; N_BINS] = [
    "1min", "2min", "3-5min", "6-15min", "16-30min", "31-60min", ">60min",
];
/// Inclusive upper edges of all but the open last bin.
const BIN_UPPER: [u64; N_BINS - 1] = [1, 2, 5, 15, 30, 60];

pub fn bin_index(rt_min: u64) -> usize {
    BIN_UPPER
        .iter()
        .position(|&upper| rt_min <= upper)
        .unwrap_or(N_BINS - 1)
}

pub fn bin_counts(rts: &[u64]) -> Result<[usize; N_BINS]> {
    let mut counts = [0usize; N_BINS];
    for &rt in rts {
        if rt == 0 {
            return Err(Error::InvalidResponseTime(rt));
        }
        counts[bin_index(rt)] += 1;
    }
    Ok(counts)
}

/// Normalized 7-bin histogram of response times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RtDistribution<T> {
    bins: [T; N_BINS],
    n: usize,
}

impl<T: Real> RtDistribution<T> {
    pub fn from_counts(counts: [usize; N_BINS]) -> Result<Self> {
        let n: usize = counts.iter().sum();
        if n == 0 {
            return Err(Error::EmptySample);
        }
        let total = T::from_count(n);
        Ok(RtDistribution {
            bins: counts.map(|c| T::from_count(c) / total),
            n,
        })
    }

    /// Wraps fractions that are non-negative and sum to one.
    pub fn from_fractions(bins: [T; N_BINS], n: usize) -> Result<Self> {
        let sum: T = bins.iter().copied().sum();
        let tol = T::epsilon() * T::lit(64.0);
        if n == 0 || bins.iter().any(|b| !(*b >= T::zero())) || (sum - T::one()).abs() > tol {
            return Err(Error::EmptySample);
        }
        Ok(RtDistribution { bins, n })
    }

    pub fn bins(&self) -> &[T; N_BINS] {
        &self.bins
    }

    pub fn n(&self) -> usize {
        self.n
    }
}

pub fn bin_rts<T: Real>(rts: &[u64]) -> Result<RtDistribution<T>> {
    RtDistribution::from_counts(bin_counts(rts)?)
}

/// One minus the Jensen-Shannon distance; 1 for identical distributions and
/// 0 for disjoint support.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimilarityScore<T>(T);

impl<T: Real> SimilarityScore<T> {
    pub fn value(self) -> T {
        self.0
    }
}

/// Jensen-Shannon divergence in bits. Per-bin terms are formed as
/// `p·log(p/m) + q·log(q/m)` before accumulation, so swapping the arguments
/// gives a bit-identical result.
///
/// The sum is divided by the accumulated mass instead of by 2. A bin used by
/// one side only contributes exactly its mass, so disjoint supports give
/// exactly 1 even when the bins do not sum to exactly 1.
pub fn js_divergence<T: Real>(p: &[T], q: &[T]) -> T {
    let half = T::lit(0.5);
    let term = |a: T, m: T| {
        if a > T::zero() {
            a * (a / m).log2()
        } else {
            T::zero()
        }
    };
    let mut acc = T::zero();
    let mut mass = T::zero();
    for (&a, &b) in p.iter().zip(q) {
        let m = (a + b) * half;
        acc += term(a, m) + term(b, m);
        mass += a + b;
    }
    acc / mass
}

pub fn similarity<T: Real>(p: &RtDistribution<T>, q: &RtDistribution<T>) -> SimilarityScore<T> {
    let jsd = js_divergence(&p.bins, &q.bins).max(T::zero()).min(T::one());
    SimilarityScore(T::one() - jsd.sqrt())
}

/// Fraction of response times at or below `threshold_min`.
pub fn rp_within<T: Real>(rts: &[u64], threshold_min: u64) -> Result<T> {
    if rts.is_empty() {
        return Err(Error::EmptySample);
    }
    let fast = rts.iter().filter(|&&rt| rt <= threshold_min).count();
    Ok(T::from_count(fast) / T::from_count(rts.len()))
}

/// Fast-response probabilities of ego and alter in one chat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRpPair<T> {
    pub donor_id: String,
    pub chat_id: String,
    pub rp_ego: T,
    pub rp_alter: T,
    pub n_ego: usize,
    pub n_alter: usize,
}

/// Response times of one chat split by side.
#[derive(Debug, Clone, Default)]
pub struct ChatSides {
    pub donation_id: String,
    pub chat_id: String,
    pub ego: Vec<u64>,
    pub alter: Vec<u64>,
}

/// Groups response records by `(donation_id, chat_id)`.
pub fn split_sides(records: &[ResponseRecord]) -> Vec<ChatSides> {
    let mut chats: BTreeMap<(&str, &str), ChatSides> = BTreeMap::new();
    for r in records {
        let entry = chats
            .entry((r.donation_id.as_str(), r.chat_id.as_str()))
            .or_insert_with(|| ChatSides {
                donation_id: r.donation_id.clone(),
                chat_id: r.chat_id.clone(),
                ..Default::default()
            });
        if r.is_ego {
            entry.ego.push(r.rt_min);
        } else {
            entry.alter.push(r.rt_min);
        }
    }
    chats.into_values().collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RpPairs<T> {
    pub pairs: Vec<ChatRpPair<T>>,
    /// Chats lacking responses from one side.
    pub excluded: Vec<String>,
}

pub fn chat_rp_pairs<T: Real>(records: &[ResponseRecord], threshold_min: u64) -> RpPairs<T> {
    let mut pairs = Vec::new();
    let mut excluded = Vec::new();
    for chat in split_sides(records) {
        match (
            rp_within::<T>(&chat.ego, threshold_min),
            rp_within::<T>(&chat.alter, threshold_min),
        ) {
            (Ok(rp_ego), Ok(rp_alter)) => pairs.push(ChatRpPair {
                donor_id: chat.donation_id,
                chat_id: chat.chat_id,
                rp_ego,
                rp_alter,
                n_ego: chat.ego.len(),
                n_alter: chat.alter.len(),
            }),
            _ => excluded.push(chat.chat_id),
        }
    }
    RpPairs { pairs, excluded }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatSimilarity<T> {
    pub donation_id: String,
    pub chat_id: String,
    pub similarity: SimilarityScore<T>,
    pub n_ego: usize,
    pub n_alter: usize,
}

/// Ego-alter similarity for every chat with responses on both sides.
pub fn chat_similarities<T: Real>(records: &[ResponseRecord]) -> Vec<ChatSimilarity<T>> {
    split_sides(records)
        .into_iter()
        .filter_map(|c| {
            let p = bin_rts::<T>(&c.ego).ok()?;
            let q = bin_rts::<T>(&c.alter).ok()?;
            Some(ChatSimilarity {
                similarity: similarity(&p, &q),
                n_ego: c.ego.len(),
                n_alter: c.alter.len(),
                donation_id: c.donation_id,
                chat_id: c.chat_id,
            })
        })
        .collect()
}

/// Reporting thresholds in minutes. A month is 30 days, a year 365 days.
pub const ECDF_THRESHOLDS: [(&str, u64); 7] = [
    ("1min", 1),
    ("5min", 5),
    ("1h", 60),
    ("24h", 1440),
    ("1week", 10_080),
    ("1month", 43_200),
    ("1year", 525_600),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcdfTable<T> {
    pub n: usize,
    /// `(label, minutes, fraction ≤ minutes)`.
    pub thresholds: Vec<(String, u64, T)>,
    /// `(rt, fraction ≤ rt)` at every distinct response time.
    pub curve: Vec<(u64, T)>,
}

impl<T: Real> EcdfTable<T> {
    pub fn fraction_at(&self, label: &str) -> Option<T> {
        self.thresholds
            .iter()
            .find(|(l, _, _)| l == label)
            .map(|(_, _, f)| *f)
    }
}

/// Pooled ECDF of response times. An empty input gives zero fractions.
pub fn pooled_ecdf<T: Real>(rts: &[u64]) -> EcdfTable<T> {
    let mut sorted = rts.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    let frac = |k: usize| {
        if n == 0 {
            T::zero()
        } else {
            T::from_count(k) / T::from_count(n)
        }
    };
    let thresholds = ECDF_THRESHOLDS
        .iter()
        .map(|&(label, minutes)| {
            let k = sorted.partition_point(|&rt| rt <= minutes);
            (label.to_string(), minutes, frac(k))
        })
        .collect();
    let mut curve = Vec::new();
    for (i, &rt) in sorted.iter().enumerate() {
        if i + 1 == n || sorted[i + 1] != rt {
            curve.push((rt, frac(i + 1)));
        }
    }
    EcdfTable {
        n,
        thresholds,
        curve,
    }
}

/// Equal-width histogram over `[lo, hi]`; `hi` itself falls in the last bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub width: f64,
    pub counts: Vec<usize>,
    pub below: usize,
    pub above: usize,
}

impl Histogram {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Self {
        Histogram {
            lo,
            width: (hi - lo) / bins as f64,
            counts: vec![0; bins],
            below: 0,
            above: 0,
        }
    }

    pub fn add(&mut self, x: f64) {
        let bins = self.counts.len();
        let hi = self.lo + self.width * bins as f64;
        if x < self.lo {
            self.below += 1;
        } else if x > hi {
            self.above += 1;
        } else {
            let i = (((x - self.lo) / self.width).floor() as usize).min(bins - 1);
            self.counts[i] += 1;
        }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum::<usize>() + self.below + self.above
    }

    /// `(lower edge, upper edge, count)` per bin.
    pub fn rows(&self) -> impl Iterator<Item = (f64, f64, usize)> + '_ {
        self.counts.iter().enumerate().map(|(i, &c)| {
            let lo = self.lo + self.width * i as f64;
            (lo, lo + self.width, c)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(b: [f64; 7]) -> RtDistribution<f64> {
        RtDistribution::from_fractions(b, 1).unwrap()
    }

    #[test]
    fn bin_edges() {
        assert_eq!(bin_index(1), 0);
        assert_eq!(bin_index(2), 1);
        assert_eq!(BIN_LABELS[bin_index(4)], "3-5min");
        assert_eq!(bin_index(5), 2);
        assert_eq!(bin_index(6), 3);
        assert_eq!(bin_index(60), 5);
        assert_eq!(BIN_LABELS[bin_index(61)], ">60min");
    }

    #[test]
    fn binning_arithmetic() {
        let d: RtDistribution<f64> = bin_rts(&[1, 1, 2, 5]).unwrap();
        assert_eq!(d.bins(), &[0.5, 0.25, 0.25, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(d.n(), 4);
        assert!(matches!(bin_rts::<f64>(&[]), Err(Error::EmptySample)));
        assert!(matches!(bin_rts::<f64>(&[0]), Err(Error::InvalidResponseTime(0))));
    }

    #[test]
    fn similarity_reference_points() {
        let p = dist([0.2, 0.1, 0.3, 0.1, 0.1, 0.1, 0.1]);
        assert_eq!(similarity(&p, &p).value(), 1.0);
        let one = dist([1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let two = dist([0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let slow = dist([0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(similarity(&one, &two).value(), 0.0);
        assert_eq!(similarity(&one, &slow).value(), 0.0);
    }

    #[test]
    fn similarity_half_half_vs_point_mass() {
        // m = (0.75, 0.25): D(p||m) = 0.5·log2(2/3) + 0.5·log2(2) and
        // D(q||m) = log2(4/3); sim = 1 - sqrt of their mean.
        let p = dist([0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let q = dist([1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let s = similarity(&p, &q).value();
        assert!((s - 0.4421).abs() < 1e-4, "{s}");
    }

    #[test]
    fn similarity_in_f32() {
        let p = RtDistribution::<f32>::from_counts([3, 1, 0, 0, 0, 0, 1]).unwrap();
        let q = RtDistribution::<f32>::from_counts([1, 1, 1, 1, 1, 0, 0]).unwrap();
        let s = similarity(&p, &q).value();
        assert_eq!(s, similarity(&q, &p).value());
        assert!((0.0..=1.0).contains(&s));
        assert_eq!(similarity(&p, &p).value(), 1.0);
    }

    #[test]
    fn rp_within_threshold() {
        assert_eq!(rp_within::<f64>(&[1, 3, 7, 5, 120], 5).unwrap(), 0.6);
        assert_eq!(rp_within::<f64>(&[1, 2, 5], 5).unwrap(), 1.0);
        assert!(rp_within::<f64>(&[], 5).is_err());
    }

    #[test]
    fn ecdf_thresholds_and_curve() {
        let t = pooled_ecdf::<f64>(&[1, 2, 5]);
        assert_eq!(t.fraction_at("5min"), Some(1.0));
        assert_eq!(t.fraction_at("1min"), Some(1.0 / 3.0));
        let t = pooled_ecdf::<f64>(&[3, 1, 3, 100_000]);
        assert_eq!(t.curve, vec![(1, 0.25), (3, 0.75), (100_000, 1.0)]);
        assert_eq!(t.fraction_at("1week"), Some(0.75));
        let empty = pooled_ecdf::<f64>(&[]);
        assert_eq!(empty.fraction_at("1h"), Some(0.0));
        assert!(empty.curve.is_empty());
    }

    #[test]
    fn histogram_edges() {
        let mut h = Histogram::new(0.0, 1.0, 20);
        for x in [0.0, 0.049, 0.05, 1.0, 1.5, -0.1] {
            h.add(x);
        }
        assert_eq!(h.counts[0], 2);
        assert_eq!(h.counts[1], 1);
        assert_eq!(h.counts[19], 1);
        assert_eq!((h.below, h.above, h.total()), (1, 1, 6));
    }
}
