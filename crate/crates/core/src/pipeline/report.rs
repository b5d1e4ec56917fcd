//! Report bundle: plot-ready CSV tables plus JSON audit files.
//!
//! The bundle is assembled in a hidden sibling directory and moved into
//! place only once every file is written, so a failed run leaves no partial
//! output behind.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::stats::{stat_table, word_count_histogram};
use super::{PipelineConfig, PipelineRun, Skipped, StageCounts};
use crate::error::{Error, Result};
use crate::filterpipe::DropReason;
use crate::ingest::ParseReport;
use crate::metrics::{Histogram, BIN_LABELS};
use crate::stability::mad_histogram;
use crate::store;

pub const MANIFEST: &str = "manifest.json";

pub const BUNDLE_FILES: [&str; 24] = [
    MANIFEST,
    "parse_report.json",
    "clean_report.json",
    "filter_audit.csv",
    store::DONATIONS_FILE,
    store::RECORDS_FILE,
    store::RESPONSES_FILE,
    "general_stats.csv",
    "ecdf_thresholds.csv",
    "ecdf_curve.csv",
    "rt_bins.csv",
    "similarity_per_chat.csv",
    "similarity_hist.csv",
    "rp_pairs.csv",
    "lmm_summary.csv",
    "lmm_random.csv",
    "lmm_ladder.csv",
    "lmm_qq.csv",
    "monthly_similarity.csv",
    "mad_per_chat.csv",
    "mad_hist.csv",
    "calibration.csv",
    "wordcount_hist.csv",
    "wordcount_summary.csv",
];

const SIMILARITY_BINS: usize = 20;

fn num(x: f64) -> String {
    if x.is_nan() {
        "NA".to_string()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{x:.6}")
    }
}

fn pval(x: f64) -> String {
    if x.is_nan() {
        "NA".to_string()
    } else {
        format!("{x:.4e}")
    }
}

struct Table {
    path: PathBuf,
    writer: csv::Writer<std::fs::File>,
}

impl Table {
    fn create(dir: &Path, name: &str, header: &[&str]) -> Result<Self> {
        let path = dir.join(name);
        let mut writer = csv::Writer::from_path(&path)?;
        writer.write_record(header)?;
        Ok(Table { path, writer })
    }

    fn row<I, S>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        Ok(self.writer.write_record(fields)?)
    }

    fn finish(mut self) -> Result<()> {
        self.writer.flush().map_err(|e| Error::io(&self.path, e))
    }
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(&path, e))?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn hist_rows(t: &mut Table, scope: &str, h: &Histogram) -> Result<()> {
    for (lo, hi, c) in h.rows() {
        t.row([scope.to_string(), num(lo), num(hi), c.to_string()])?;
    }
    if h.above > 0 {
        let top = h.lo + h.width * h.counts.len() as f64;
        t.row([scope.to_string(), num(top), "inf".into(), h.above.to_string()])?;
    }
    Ok(())
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    config: &'a PipelineConfig,
    counts: &'a StageCounts,
    parse: &'a ParseReport,
    filter_drops: BTreeMap<&'static str, usize>,
    skipped: &'a [Skipped],
    files: Vec<&'static str>,
}

fn drop_label(r: &DropReason) -> &'static str {
    match r {
        DropReason::NotDyadic { .. } => "not_dyadic",
        DropReason::Unbalanced { .. } => "unbalanced",
        DropReason::TooFewMessages { .. } => "too_few_messages",
        DropReason::DonationTooSmall { .. } => "donation_too_small",
    }
}

/// Groups of bundle files that can be written on their own.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Section {
    /// Parse, clean, and filter audits.
    Audit,
    /// Filtered donations, records, and response records.
    Corpus,
    /// General statistics, ECDF, RT bins, word counts.
    Descriptive,
    Similarity,
    Lmm,
    Stability,
    Calibration,
}

impl Section {
    pub const ALL: [Section; 7] = [
        Section::Audit,
        Section::Corpus,
        Section::Descriptive,
        Section::Similarity,
        Section::Lmm,
        Section::Stability,
        Section::Calibration,
    ];
}

fn write_manifest(dir: &Path, run: &PipelineRun) -> Result<()> {
    let a = &run.analysis;
    let mut filter_drops: BTreeMap<&'static str, usize> = BTreeMap::new();
    for e in &run.audit.entries {
        *filter_drops.entry(drop_label(&e.reason)).or_default() += 1;
    }
    write_json(
        dir,
        MANIFEST,
        &Manifest {
            tool: "chatrecip",
            version: env!("CARGO_PKG_VERSION"),
            config: &run.config,
            counts: &run.counts,
            parse: &run.parse,
            filter_drops,
            skipped: &a.skipped,
            files: BUNDLE_FILES.to_vec(),
        },
    )
}

fn write_audit(dir: &Path, run: &PipelineRun) -> Result<()> {
    write_json(dir, "parse_report.json", &run.parse)?;
    write_json(dir, "clean_report.json", &run.clean)?;

    let mut t = Table::create(dir, "filter_audit.csv", &["donation_id", "chat_id", "reason", "detail"])?;
    for e in &run.audit.entries {
        let detail = match &e.reason {
            DropReason::NotDyadic { senders } => format!("senders={senders}"),
            DropReason::Unbalanced { smallest_share } => format!("smallest_share={}", num(*smallest_share)),
            DropReason::TooFewMessages { messages } => format!("messages={messages}"),
            DropReason::DonationTooSmall { chats } => format!("chats={chats}"),
        };
        t.row([e.donation_id.as_str(), e.chat_id.as_str(), drop_label(&e.reason), &detail])?;
    }
    t.finish()
}

fn write_corpus(dir: &Path, run: &PipelineRun) -> Result<()> {
    store::write_corpus(dir, &run.donations)?;
    store::write_jsonl(&dir.join(store::RESPONSES_FILE), &run.responses)
}

fn write_descriptive(dir: &Path, run: &PipelineRun) -> Result<()> {
    let a = &run.analysis;

    let mut t = Table::create(
        dir,
        "general_stats.csv",
        &["source", "quantity", "donors", "mean", "median", "sd", "min", "max"],
    )?;
    for r in stat_table(&run.donations) {
        let s = r.stats;
        t.row([
            r.source.to_string(),
            r.quantity.to_string(),
            s.n.to_string(),
            num(s.mean),
            num(s.median),
            num(s.sd),
            num(s.min),
            num(s.max),
        ])?;
    }
    t.finish()?;

    let scopes: Vec<(String, &crate::metrics::EcdfTable<f64>)> = a
        .per_source
        .iter()
        .map(|s| (s.source.to_string(), &s.ecdf))
        .chain(std::iter::once(("all".to_string(), &a.pooled_ecdf)))
        .collect();
    let mut t = Table::create(dir, "ecdf_thresholds.csv", &["scope", "threshold", "minutes", "n", "fraction"])?;
    for (scope, e) in &scopes {
        for (label, minutes, frac) in &e.thresholds {
            t.row([scope.clone(), label.clone(), minutes.to_string(), e.n.to_string(), num(*frac)])?;
        }
    }
    t.finish()?;
    let mut t = Table::create(dir, "ecdf_curve.csv", &["scope", "rt_min", "fraction"])?;
    for (scope, e) in &scopes {
        for (rt, frac) in &e.curve {
            t.row([scope.clone(), rt.to_string(), num(*frac)])?;
        }
    }
    t.finish()?;

    let source_of: BTreeMap<&str, crate::ingest::Source> = run
        .donations
        .iter()
        .map(|d| (d.donation_id.as_str(), d.source))
        .collect();
    let mut bins: BTreeMap<crate::ingest::Source, [[usize; crate::metrics::N_BINS]; 2]> = BTreeMap::new();
    for r in &run.responses {
        if let Some(&src) = source_of.get(r.donation_id.as_str()) {
            bins.entry(src).or_default()[usize::from(!r.is_ego)][crate::metrics::bin_index(r.rt_min)] += 1;
        }
    }
    let mut t = Table::create(dir, "rt_bins.csv", &["source", "side", "bin", "count"])?;
    for (source, sides) in &bins {
        for (side, row) in ["ego", "alter"].iter().zip(sides) {
            for (label, c) in BIN_LABELS.iter().zip(row) {
                t.row([source.to_string(), side.to_string(), label.to_string(), c.to_string()])?;
            }
        }
    }
    t.finish()?;
    write_word_counts(dir, run)
}

fn write_similarity(dir: &Path, run: &PipelineRun) -> Result<()> {
    let a = &run.analysis;
    let mut t = Table::create(
        dir,
        "similarity_per_chat.csv",
        &["source", "donation_id", "chat_id", "similarity", "n_ego", "n_alter"],
    )?;
    for s in &a.per_source {
        for c in &s.similarities {
            t.row([
                s.source.to_string(),
                c.donation_id.clone(),
                c.chat_id.clone(),
                num(c.similarity.value()),
                c.n_ego.to_string(),
                c.n_alter.to_string(),
            ])?;
        }
    }
    t.finish()?;

    let mut t = Table::create(dir, "similarity_hist.csv", &["source", "lo", "hi", "count"])?;
    for s in &a.per_source {
        let mut h = Histogram::new(0.0, 1.0, SIMILARITY_BINS);
        for c in &s.similarities {
            h.add(c.similarity.value());
        }
        hist_rows(&mut t, s.source.as_str(), &h)?;
    }
    t.finish()
}

fn write_lmm(dir: &Path, run: &PipelineRun) -> Result<()> {
    let a = &run.analysis;
    let mut t = Table::create(
        dir,
        "rp_pairs.csv",
        &["source", "donation_id", "chat_id", "rp_ego", "rp_alter", "n_ego", "n_alter"],
    )?;
    for s in &a.per_source {
        for p in &s.rp_pairs {
            t.row([
                s.source.to_string(),
                p.donor_id.clone(),
                p.chat_id.clone(),
                num(p.rp_ego),
                num(p.rp_alter),
                p.n_ego.to_string(),
                p.n_alter.to_string(),
            ])?;
        }
    }
    t.finish()?;

    let mut summary = Table::create(
        dir,
        "lmm_summary.csv",
        &["source", "Predictor", "Coef", "SE", "95% CI", "DF", "t", "p"],
    )?;
    let mut random = Table::create(
        dir,
        "lmm_random.csv",
        &[
            "source",
            "method",
            "n_obs",
            "n_groups",
            "sigma_u",
            "sigma_e",
            "lambda",
            "log_likelihood",
            "degenerate",
            "residual_ks",
        ],
    )?;
    let mut ladder = Table::create(
        dir,
        "lmm_ladder.csv",
        &["source", "model", "log_likelihood", "lr_statistic", "df", "p", "selected", "status"],
    )?;
    let mut qq = Table::create(dir, "lmm_qq.csv", &["source", "rank", "theoretical", "sample"])?;
    for s in &a.per_source {
        let Some(l) = &s.ladder else { continue };
        let src = s.source.to_string();
        let f = &l.base;
        for c in f.coefficients() {
            summary.row([
                src.clone(),
                c.predictor.to_string(),
                num(c.coef),
                num(c.se),
                format!("[{}, {}]", num(c.ci95.0), num(c.ci95.1)),
                num(c.df),
                num(c.t),
                pval(c.p),
            ])?;
        }
        let ks = s.qq.as_ref().map_or(f64::NAN, |q| q.ks_statistic);
        random.row([
            src.clone(),
            format!("{:?}", f.method).to_lowercase(),
            f.n_obs.to_string(),
            f.n_groups.to_string(),
            num(f.sigma_u),
            num(f.sigma_e),
            num(f.lambda),
            num(f.log_likelihood),
            f.degenerate.to_string(),
            num(ks),
        ])?;
        ladder.row([
            src.clone(),
            crate::inference::BASE_MODEL.to_string(),
            num(f.log_likelihood),
            String::new(),
            String::new(),
            String::new(),
            (l.selected_model == crate::inference::BASE_MODEL).to_string(),
            "ok".to_string(),
        ])?;
        for step in &l.steps {
            let opt = |v: Option<f64>| v.map(num).unwrap_or_default();
            ladder.row([
                src.clone(),
                step.name.clone(),
                opt(step.log_likelihood),
                opt(step.lr_statistic),
                step.df.to_string(),
                step.p_value.map(pval).unwrap_or_default(),
                step.selected.to_string(),
                step.status.clone(),
            ])?;
        }
        if let Some(q) = &s.qq {
            for r in &q.rows {
                qq.row([src.clone(), r.rank.to_string(), num(r.theoretical), num(r.sample)])?;
            }
        }
    }
    summary.finish()?;
    random.finish()?;
    ladder.finish()?;
    qq.finish()
}

fn write_stability(dir: &Path, run: &PipelineRun) -> Result<()> {
    let a = &run.analysis;
    let mut t = Table::create(
        dir,
        "monthly_similarity.csv",
        &["source", "donation_id", "chat_id", "month", "similarity", "n_ego", "n_alter", "qualifying"],
    )?;
    for s in &a.per_source {
        for series in &s.monthly {
            for e in &series.entries {
                t.row([
                    s.source.to_string(),
                    series.donation_id.clone(),
                    series.chat_id.clone(),
                    e.month.to_string(),
                    num(e.similarity),
                    e.n_ego.to_string(),
                    e.n_alter.to_string(),
                    series.qualifying.to_string(),
                ])?;
            }
        }
    }
    t.finish()?;

    let mut t = Table::create(
        dir,
        "mad_per_chat.csv",
        &["source", "donation_id", "chat_id", "months", "median_similarity", "mad"],
    )?;
    let mut mads = Vec::new();
    for s in &a.per_source {
        for m in &s.mads {
            mads.push((s.source, m.mad));
            t.row([
                s.source.to_string(),
                m.donation_id.clone(),
                m.chat_id.clone(),
                m.months.to_string(),
                num(m.median_similarity),
                num(m.mad),
            ])?;
        }
    }
    t.finish()?;

    let mut t = Table::create(dir, "mad_hist.csv", &["source", "lo", "hi", "count"])?;
    for (source, h) in mad_histogram(&mads) {
        hist_rows(&mut t, source.as_str(), &h)?;
    }
    t.finish()
}

fn write_calibration(dir: &Path, run: &PipelineRun) -> Result<()> {
    let a = &run.analysis;
    let mut t = Table::create(
        dir,
        "calibration.csv",
        &["sample_size", "sd", "noise_band_95", "mean_difference", "month_chats", "differences", "repetitions", "seed"],
    )?;
    if let Some(c) = &a.calibration {
        for r in &c.rows {
            t.row([
                r.sample_size.to_string(),
                num(r.sd),
                num(c.noise_band(r.sample_size).unwrap_or(f64::NAN)),
                num(r.mean_difference),
                r.month_chats.to_string(),
                r.differences.to_string(),
                c.repetitions.to_string(),
                c.seed.to_string(),
            ])?;
        }
    }
    t.finish()
}

fn write_word_counts(dir: &Path, run: &PipelineRun) -> Result<()> {
    let hists = word_count_histogram(&run.donations);
    let mut t = Table::create(dir, "wordcount_hist.csv", &["source", "word_count", "messages"])?;
    for h in &hists {
        for (wc, c) in h.counts.iter().enumerate() {
            t.row([h.source.to_string(), wc.to_string(), c.to_string()])?;
        }
        t.row([h.source.to_string(), format!(">{}", super::stats::WORD_COUNT_MAX), h.over_max.to_string()])?;
    }
    t.finish()?;
    let mut t = Table::create(
        dir,
        "wordcount_summary.csv",
        &["source", "messages", "over_300", "share_over_20"],
    )?;
    for h in &hists {
        t.row([
            h.source.to_string(),
            h.messages.to_string(),
            h.over_max.to_string(),
            num(h.share_over_20),
        ])?;
    }
    t.finish()
}

/// Writes one section's files into `dir`, which must exist.
pub fn write_section(dir: &Path, run: &PipelineRun, section: Section) -> Result<()> {
    match section {
        Section::Audit => write_audit(dir, run),
        Section::Corpus => write_corpus(dir, run),
        Section::Descriptive => write_descriptive(dir, run),
        Section::Similarity => write_similarity(dir, run),
        Section::Lmm => write_lmm(dir, run),
        Section::Stability => write_stability(dir, run),
        Section::Calibration => write_calibration(dir, run),
    }
}

fn write_files(dir: &Path, run: &PipelineRun) -> Result<()> {
    write_manifest(dir, run)?;
    for section in Section::ALL {
        write_section(dir, run, section)?;
    }
    Ok(())
}

fn staging_dir(out: &Path) -> PathBuf {
    let name = out
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "report".into());
    out.with_file_name(format!(".{name}.partial"))
}

/// Writes the bundle for `run` to `out`, replacing an earlier bundle there.
/// A non-empty directory that is not a bundle is left alone.
pub fn write_bundle(out: &Path, run: &PipelineRun) -> Result<()> {
    if out.exists() {
        let is_bundle = out.join(MANIFEST).is_file();
        let is_empty = std::fs::read_dir(out)
            .map_err(|e| Error::io(out, e))?
            .next()
            .is_none();
        if !is_bundle && !is_empty {
            return Err(Error::InvalidConfig(format!(
                "{} exists and is not a report bundle; refusing to overwrite",
                out.display()
            )));
        }
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let staging = staging_dir(out);
    if staging.exists() {
        std::fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    }
    std::fs::create_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    if let Err(e) = write_files(&staging, run) {
        let _ = std::fs::remove_dir_all(&staging);
        return Err(e);
    }
    if out.exists() {
        std::fs::remove_dir_all(out).map_err(|e| Error::io(out, e))?;
    }
    std::fs::rename(&staging, out).map_err(|e| Error::io(out, e))
}
