//! Month-by-month similarity, its dispersion, and the subsampling noise
//! calibration for the per-month record threshold.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ingest::Source;
use crate::metrics::{bin_counts, similarity, Histogram, RtDistribution, N_BINS};
use crate::num::{total_cmp, Real};
use crate::timing::{MonthKey, ResponseRecord};

pub const MIN_QUALIFYING_MONTHS: usize = 5;
pub const DEFAULT_MIN_PER_SIDE: usize = 70;
pub const MAD_BIN_WIDTH: f64 = 0.005;
pub const MAD_HIST_MAX: f64 = 0.1;

/// What is counted against the per-month threshold.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CountBasis {
    /// Response records, i.e. merged blocks.
    #[default]
    Merged,
    /// Raw messages inside those blocks.
    Raw,
}

impl std::str::FromStr for CountBasis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "merged" => Ok(CountBasis::Merged),
            "raw" => Ok(CountBasis::Raw),
            other => Err(Error::InvalidConfig(format!("unknown count basis `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthlyEntry<T> {
    pub month: MonthKey,
    pub similarity: T,
    pub n_ego: usize,
    pub n_alter: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthlySimilaritySeries<T> {
    pub donation_id: String,
    pub chat_id: String,
    pub entries: Vec<MonthlyEntry<T>>,
    pub qualifying: bool,
}

#[derive(Default)]
struct MonthSides {
    ego: Vec<u64>,
    alter: Vec<u64>,
    raw_ego: usize,
    raw_alter: usize,
}

type ChatKey<'a> = (&'a str, &'a str);

fn group_months(records: &[ResponseRecord]) -> BTreeMap<ChatKey<'_>, BTreeMap<MonthKey, MonthSides>> {
    let mut out: BTreeMap<ChatKey, BTreeMap<MonthKey, MonthSides>> = BTreeMap::new();
    for r in records {
        let m = out
            .entry((r.donation_id.as_str(), r.chat_id.as_str()))
            .or_default()
            .entry(r.month_key)
            .or_default();
        if r.is_ego {
            m.ego.push(r.rt_min);
            m.raw_ego += r.block_messages;
        } else {
            m.alter.push(r.rt_min);
            m.raw_alter += r.block_messages;
        }
    }
    out
}

fn series_for<T: Real>(
    donation_id: &str,
    chat_id: &str,
    months: &BTreeMap<MonthKey, MonthSides>,
    min_per_side: usize,
    basis: CountBasis,
) -> MonthlySimilaritySeries<T> {
    let entries: Vec<MonthlyEntry<T>> = months
        .iter()
        .filter_map(|(month, sides)| {
            let (n_ego, n_alter) = match basis {
                CountBasis::Merged => (sides.ego.len(), sides.alter.len()),
                CountBasis::Raw => (sides.raw_ego, sides.raw_alter),
            };
            if n_ego < min_per_side || n_alter < min_per_side {
                return None;
            }
            let p = crate::metrics::bin_rts::<T>(&sides.ego).ok()?;
            let q = crate::metrics::bin_rts::<T>(&sides.alter).ok()?;
            Some(MonthlyEntry {
                month: *month,
                similarity: similarity(&p, &q).value(),
                n_ego,
                n_alter,
            })
        })
        .collect();
    MonthlySimilaritySeries {
        donation_id: donation_id.to_string(),
        chat_id: chat_id.to_string(),
        qualifying: entries.len() >= MIN_QUALIFYING_MONTHS,
        entries,
    }
}

/// Monthly similarity for one chat. All records should belong to the same
/// chat; use [`monthly_series`] for a whole corpus.
pub fn monthly_similarity<T: Real>(
    records: &[ResponseRecord],
    min_per_side: usize,
    basis: CountBasis,
) -> MonthlySimilaritySeries<T> {
    match group_months(records).iter().next() {
        Some(((d, c), months)) => series_for(d, c, months, min_per_side, basis),
        None => MonthlySimilaritySeries {
            donation_id: String::new(),
            chat_id: String::new(),
            entries: Vec::new(),
            qualifying: false,
        },
    }
}

/// Monthly series for every chat, ordered by `(donation_id, chat_id)`.
pub fn monthly_series<T: Real>(
    records: &[ResponseRecord],
    min_per_side: usize,
    basis: CountBasis,
) -> Vec<MonthlySimilaritySeries<T>> {
    group_months(records)
        .iter()
        .map(|((d, c), months)| series_for(d, c, months, min_per_side, basis))
        .collect()
}

fn median_sorted<T: Real>(v: &[T]) -> T {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) * T::lit(0.5)
    }
}

pub fn median<T: Real>(values: &[T]) -> Result<T> {
    if values.is_empty() {
        return Err(Error::EmptySeries);
    }
    let mut v = values.to_vec();
    v.sort_by(total_cmp);
    Ok(median_sorted(&v))
}

/// Median absolute deviation from the median, unscaled.
pub fn mad<T: Real>(values: &[T]) -> Result<T> {
    let m = median(values)?;
    let dev: Vec<T> = values.iter().map(|x| (*x - m).abs()).collect();
    median(&dev)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMad<T> {
    pub donation_id: String,
    pub chat_id: String,
    pub months: usize,
    pub median_similarity: T,
    pub mad: T,
}

/// MAD of every qualifying series.
pub fn chat_mads<T: Real>(series: &[MonthlySimilaritySeries<T>]) -> Vec<ChatMad<T>> {
    series
        .iter()
        .filter(|s| s.qualifying)
        .map(|s| {
            let values: Vec<T> = s.entries.iter().map(|e| e.similarity).collect();
            ChatMad {
                donation_id: s.donation_id.clone(),
                chat_id: s.chat_id.clone(),
                months: values.len(),
                median_similarity: median(&values).expect("qualifying series is non-empty"),
                mad: mad(&values).expect("qualifying series is non-empty"),
            }
        })
        .collect()
}

/// MAD histogram per source, bin width 0.005 over `[0, 0.1]`.
pub fn mad_histogram<T: Real>(mads: &[(Source, T)]) -> BTreeMap<Source, Histogram> {
    let bins = (MAD_HIST_MAX / MAD_BIN_WIDTH).round() as usize;
    let mut out = BTreeMap::new();
    for (source, m) in mads {
        out.entry(*source)
            .or_insert_with(|| Histogram::new(0.0, MAD_HIST_MAX, bins))
            .add(m.as_f64());
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationConfig {
    /// Records per side a month-chat needs to enter the calibration.
    pub min_full: usize,
    pub sizes: Vec<usize>,
    pub reps: usize,
    pub seed: u64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            min_full: 200,
            sizes: vec![20, 26, 35, 50, 70, 100, 150],
            reps: 400,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow<T> {
    pub sample_size: usize,
    /// Population SD of subsample-minus-full similarity differences.
    pub sd: T,
    pub mean_difference: T,
    /// Month-chats large enough to draw this many records per side.
    pub month_chats: usize,
    pub differences: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTable<T> {
    pub rows: Vec<CalibrationRow<T>>,
    pub n_month_chats: usize,
    pub repetitions: usize,
    pub seed: u64,
}

impl<T: Real> CalibrationTable<T> {
    pub fn sd_at(&self, n: usize) -> Option<T> {
        self.rows.iter().find(|r| r.sample_size == n).map(|r| r.sd)
    }

    /// Half-width of the two-sided 95 % band of sampling noise at size `n`.
    pub fn noise_band(&self, n: usize) -> Option<T> {
        self.sd_at(n).map(|sd| sd * T::lit(1.959_963_984_540_054))
    }
}

struct MonthChat<'a> {
    donation_id: &'a str,
    chat_id: &'a str,
    month: MonthKey,
    ego: &'a [u64],
    alter: &'a [u64],
}

fn task_rng(seed: u64, mc: &MonthChat, n: usize, rep: usize) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(mc.donation_id.as_bytes());
    h.update([0]);
    h.update(mc.chat_id.as_bytes());
    h.update([0]);
    h.update(mc.month.to_string().as_bytes());
    h.update((n as u64).to_le_bytes());
    h.update((rep as u64).to_le_bytes());
    let mut bytes = [0u8; 32];
    bytes.copy_from_slice(&h.finalize());
    ChaCha8Rng::from_seed(bytes)
}

fn subsample_counts(rts: &[u64], n: usize, rng: &mut ChaCha8Rng) -> [usize; N_BINS] {
    let mut counts = [0; N_BINS];
    for i in rand::seq::index::sample(rng, rts.len(), n) {
        counts[crate::metrics::bin_index(rts[i])] += 1;
    }
    counts
}

/// Subsampling experiment: how far does the similarity of `n` records per
/// side stray from the similarity of the whole month?
///
/// Every `(month-chat, n, rep)` draw has its own generator derived from the
/// seed, so results do not depend on thread scheduling.
pub fn calibrate_threshold<T: Real>(
    records: &[ResponseRecord],
    cfg: &CalibrationConfig,
) -> Result<CalibrationTable<T>> {
    if cfg.reps == 0 || cfg.sizes.iter().any(|&n| n == 0) {
        return Err(Error::InvalidConfig(
            "calibration needs at least one repetition and positive sample sizes".into(),
        ));
    }
    let grouped = group_months(records);
    let month_chats: Vec<MonthChat> = grouped
        .iter()
        .flat_map(|((d, c), months)| {
            months.iter().filter_map(move |(m, s)| {
                (s.ego.len() >= cfg.min_full && s.alter.len() >= cfg.min_full).then_some(MonthChat {
                    donation_id: d,
                    chat_id: c,
                    month: *m,
                    ego: &s.ego,
                    alter: &s.alter,
                })
            })
        })
        .collect();
    if month_chats.is_empty() {
        return Err(Error::NoQualifyingMonths(cfg.min_full));
    }

    let full: Vec<T> = month_chats
        .iter()
        .map(|mc| {
            let p = RtDistribution::<T>::from_counts(bin_counts(mc.ego)?)?;
            let q = RtDistribution::<T>::from_counts(bin_counts(mc.alter)?)?;
            Ok(similarity(&p, &q).value())
        })
        .collect::<Result<_>>()?;

    let rows = cfg
        .sizes
        .iter()
        .map(|&n| {
            let eligible: Vec<usize> = (0..month_chats.len())
                .filter(|&i| month_chats[i].ego.len() >= n && month_chats[i].alter.len() >= n)
                .collect();
            let per_chat: Vec<Vec<T>> = eligible
                .par_iter()
                .map(|&i| {
                    let mc = &month_chats[i];
                    (0..cfg.reps)
                        .map(|rep| {
                            let mut rng = task_rng(cfg.seed, mc, n, rep);
                            let p = RtDistribution::<T>::from_counts(subsample_counts(mc.ego, n, &mut rng))
                                .expect("n > 0");
                            let q = RtDistribution::<T>::from_counts(subsample_counts(mc.alter, n, &mut rng))
                                .expect("n > 0");
                            similarity(&p, &q).value() - full[i]
                        })
                        .collect()
                })
                .collect();
            let diffs: Vec<T> = per_chat.into_iter().flatten().collect();
            let (mean, sd) = if diffs.is_empty() {
                (T::nan(), T::nan())
            } else {
                let k = T::from_count(diffs.len());
                let mean = diffs.iter().copied().sum::<T>() / k;
                let var = diffs.iter().map(|d| (*d - mean) * (*d - mean)).sum::<T>() / k;
                (mean, var.sqrt())
            };
            CalibrationRow {
                sample_size: n,
                sd,
                mean_difference: mean,
                month_chats: eligible.len(),
                differences: diffs.len(),
            }
        })
        .collect();

    Ok(CalibrationTable {
        rows,
        n_month_chats: month_chats.len(),
        repetitions: cfg.reps,
        seed: cfg.seed,
    })
}
