//! End-to-end orchestration: ingest, clean, filter, response times, and the
//! analyses behind the report tables.

mod report;
mod stats;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cleanse::{cleanse, CleanConfig, CleanReport};
use crate::error::{Error, Result};
use crate::filterpipe::{run_filters, FilterAudit, FilterConfig};
use crate::inference::{model_ladder, residual_diagnostics, LadderReport, Method, QqTable};
use crate::ingest::{ingest_donation_dir, Donation, IngestConfig, ParseReport, Source};
use crate::metrics::{chat_rp_pairs, chat_similarities, pooled_ecdf, ChatRpPair, ChatSimilarity, EcdfTable};
use crate::stability::{
    calibrate_threshold, chat_mads, monthly_series, CalibrationConfig, CalibrationTable, ChatMad, CountBasis,
    MonthlySimilaritySeries,
};
use crate::timing::{donation_responses, Aggregation, ResponseRecord, TimingReport};

pub use report::{write_bundle, write_section, Section, BUNDLE_FILES, MANIFEST};
pub use stats::{stat_table, word_count_histogram, StatRow, SummaryStats, WordCountHistogram};

/// One input location. With a source, every subdirectory of `path` is a
/// donation of that source. Without one, `path/whatsapp/*` and
/// `path/instagram/*` are scanned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSpec {
    pub path: PathBuf,
    #[serde(default)]
    pub source: Option<Source>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub inputs: Vec<InputSpec>,
    /// Not part of the manifest, so bundles written to different places
    /// stay byte-identical.
    #[serde(skip_serializing)]
    pub out: PathBuf,
    pub ingest: IngestConfig,
    pub clean: CleanConfig,
    pub filter: FilterConfig,
    pub aggregation: Aggregation,
    pub rp_threshold: u64,
    pub min_per_side: usize,
    pub count_basis: CountBasis,
    pub method: Method,
    /// Calibration settings; its seed is replaced by `seed`.
    pub calibration: CalibrationConfig,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            inputs: Vec::new(),
            out: PathBuf::from("report"),
            ingest: IngestConfig::default(),
            clean: CleanConfig::default(),
            filter: FilterConfig::default(),
            aggregation: Aggregation::First,
            rp_threshold: 5,
            min_per_side: crate::stability::DEFAULT_MIN_PER_SIDE,
            count_basis: CountBasis::Merged,
            method: Method::Reml,
            calibration: CalibrationConfig::default(),
            seed: 1,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.filter.validate()?;
        if self.rp_threshold == 0 {
            return Err(Error::InvalidConfig("rp_threshold must be at least 1 minute".into()));
        }
        if self.min_per_side == 0 {
            return Err(Error::InvalidConfig("min_per_side must be at least 1".into()));
        }
        for input in &self.inputs {
            if !input.path.is_dir() {
                return Err(Error::InvalidConfig(format!(
                    "input {} is not a directory",
                    input.path.display()
                )));
            }
        }
        Ok(())
    }

    fn calibration(&self) -> CalibrationConfig {
        CalibrationConfig {
            seed: self.seed,
            ..self.calibration.clone()
        }
    }
}

fn subdirs(path: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    Ok(dirs)
}

/// Donation directories named by the inputs, in a fixed order.
pub fn discover_donations(inputs: &[InputSpec]) -> Result<Vec<(PathBuf, Source, String)>> {
    let mut found = Vec::new();
    for input in inputs {
        let roots: Vec<(PathBuf, Source)> = match input.source {
            Some(s) => vec![(input.path.clone(), s)],
            None => [Source::Whatsapp, Source::Instagram]
                .into_iter()
                .map(|s| (input.path.join(s.as_str()), s))
                .filter(|(p, _)| p.is_dir())
                .collect(),
        };
        for (root, source) in roots {
            for dir in subdirs(&root)? {
                let id = dir
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_default();
                found.push((dir, source, id));
            }
        }
    }
    let mut seen = BTreeMap::new();
    for (dir, _, id) in &found {
        if let Some(first) = seen.insert(id.clone(), dir.clone()) {
            return Err(Error::InvalidConfig(format!(
                "donation ID `{id}` appears twice ({} and {})",
                first.display(),
                dir.display()
            )));
        }
    }
    Ok(found)
}

/// Parses every donation named by the inputs.
pub fn ingest_inputs(inputs: &[InputSpec], cfg: &IngestConfig) -> Result<(Vec<Donation>, ParseReport)> {
    let found = discover_donations(inputs)?;
    if found.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let parsed: Vec<(Donation, ParseReport)> = found
        .par_iter()
        .map(|(dir, source, id)| ingest_donation_dir(dir, *source, id, cfg))
        .collect::<Result<_>>()?;
    let mut report = ParseReport::default();
    let donations = parsed
        .into_iter()
        .map(|(d, r)| {
            report.merge(&r);
            d
        })
        .collect();
    Ok((donations, report))
}

pub fn response_stage(donations: &[Donation], mode: Aggregation) -> (Vec<ResponseRecord>, TimingReport) {
    let mut report = TimingReport::default();
    let records = donations
        .iter()
        .flat_map(|d| donation_responses(d, mode, &mut report))
        .collect();
    (records, report)
}

/// An analysis that could not run on the data at hand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub analysis: String,
    pub scope: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceAnalysis {
    pub source: Source,
    pub ecdf: EcdfTable<f64>,
    pub similarities: Vec<ChatSimilarity<f64>>,
    pub rp_pairs: Vec<ChatRpPair<f64>>,
    pub rp_excluded: Vec<String>,
    pub ladder: Option<LadderReport<f64>>,
    pub qq: Option<QqTable<f64>>,
    pub monthly: Vec<MonthlySimilaritySeries<f64>>,
    pub mads: Vec<ChatMad<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub pooled_ecdf: EcdfTable<f64>,
    pub per_source: Vec<SourceAnalysis>,
    pub calibration: Option<CalibrationTable<f64>>,
    pub skipped: Vec<Skipped>,
}

/// Errors that mean "not enough data for this analysis" rather than a
/// broken run.
fn is_insufficient(e: &Error) -> bool {
    matches!(
        e,
        Error::TooFewGroups(_)
            | Error::TooFewObservations { .. }
            | Error::SingularDesign
            | Error::NoQualifyingMonths(_)
            | Error::EmptySeries
    )
}

fn skip_or_fail<T>(
    res: Result<T>,
    stage: &'static str,
    scope: &str,
    skipped: &mut Vec<Skipped>,
) -> Result<Option<T>> {
    match res {
        Ok(v) => Ok(Some(v)),
        Err(e) if is_insufficient(&e) => {
            skipped.push(Skipped {
                analysis: stage.to_string(),
                scope: scope.to_string(),
                reason: e.to_string(),
            });
            Ok(None)
        }
        Err(e) => Err(e.in_stage(stage)),
    }
}

impl Analysis {
    pub fn empty() -> Self {
        Analysis {
            pooled_ecdf: pooled_ecdf(&[]),
            per_source: Vec::new(),
            calibration: None,
            skipped: Vec::new(),
        }
    }
}

/// Which of the costlier analyses to run. ECDFs, similarities, and RP
/// pairs are always computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Selection {
    pub lmm: bool,
    pub stability: bool,
    pub calibration: bool,
}

impl Selection {
    pub const ALL: Selection = Selection {
        lmm: true,
        stability: true,
        calibration: true,
    };
    pub const NONE: Selection = Selection {
        lmm: false,
        stability: false,
        calibration: false,
    };
}

/// Runs every analysis on filtered donations and their response records.
pub fn analyze(donations: &[Donation], responses: &[ResponseRecord], cfg: &PipelineConfig) -> Result<Analysis> {
    analyze_selected(donations, responses, cfg, Selection::ALL)
}

pub fn analyze_selected(
    donations: &[Donation],
    responses: &[ResponseRecord],
    cfg: &PipelineConfig,
    sel: Selection,
) -> Result<Analysis> {
    let source_of: BTreeMap<&str, Source> = donations
        .iter()
        .map(|d| (d.donation_id.as_str(), d.source))
        .collect();
    let mut by_source: BTreeMap<Source, Vec<ResponseRecord>> = BTreeMap::new();
    for r in responses {
        if let Some(&s) = source_of.get(r.donation_id.as_str()) {
            by_source.entry(s).or_default().push(r.clone());
        }
    }
    let mut skipped = Vec::new();
    let all_rts: Vec<u64> = responses.iter().map(|r| r.rt_min).collect();

    let mut per_source = Vec::new();
    for (source, records) in &by_source {
        let scope = source.as_str();
        let rts: Vec<u64> = records.iter().map(|r| r.rt_min).collect();
        let rp = chat_rp_pairs::<f64>(records, cfg.rp_threshold);
        let ladder = if sel.lmm {
            skip_or_fail(model_ladder(&rp.pairs, cfg.method), "lmm", scope, &mut skipped)?
        } else {
            None
        };
        let qq = match &ladder {
            Some(l) => skip_or_fail(residual_diagnostics(&l.base), "lmm", scope, &mut skipped)?,
            None => None,
        };
        let monthly = if sel.stability {
            monthly_series::<f64>(records, cfg.min_per_side, cfg.count_basis)
        } else {
            Vec::new()
        };
        let mads = chat_mads(&monthly);
        if sel.stability && mads.is_empty() {
            skipped.push(Skipped {
                analysis: "stability".into(),
                scope: scope.into(),
                reason: format!(
                    "no chat has {} months with at least {} records per side",
                    crate::stability::MIN_QUALIFYING_MONTHS,
                    cfg.min_per_side
                ),
            });
        }
        per_source.push(SourceAnalysis {
            source: *source,
            ecdf: pooled_ecdf(&rts),
            similarities: chat_similarities(records),
            rp_pairs: rp.pairs,
            rp_excluded: rp.excluded,
            ladder,
            qq,
            monthly,
            mads,
        });
    }

    let calibration = if sel.calibration {
        skip_or_fail(
            calibrate_threshold::<f64>(responses, &cfg.calibration()),
            "calibrate",
            "all",
            &mut skipped,
        )?
    } else {
        None
    };

    Ok(Analysis {
        pooled_ecdf: pooled_ecdf(&all_rts),
        per_source,
        calibration,
        skipped,
    })
}

/// Record counts after each stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageCounts {
    pub donations_ingested: usize,
    pub records_ingested: usize,
    pub donations_cleaned: usize,
    pub records_cleaned: usize,
    pub donations_filtered: usize,
    pub chats_filtered: usize,
    pub records_filtered: usize,
    pub blocks: usize,
    pub responses: usize,
    pub dropped_negative_gaps: usize,
}

/// Everything a run produces, before it is written out.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub config: PipelineConfig,
    pub parse: ParseReport,
    pub clean: CleanReport,
    pub audit: FilterAudit,
    pub timing: TimingReport,
    pub counts: StageCounts,
    pub donations: Vec<Donation>,
    pub responses: Vec<ResponseRecord>,
    pub analysis: Analysis,
}

fn record_count(donations: &[Donation]) -> usize {
    donations.iter().map(|d| d.records.len()).sum()
}

/// Runs all stages in memory.
pub fn execute(cfg: &PipelineConfig) -> Result<PipelineRun> {
    cfg.validate()?;
    let (donations, parse) = ingest_inputs(&cfg.inputs, &cfg.ingest).map_err(|e| match e {
        Error::EmptyCorpus => e,
        e => e.in_stage("ingest"),
    })?;
    execute_from(cfg, donations, parse)
}

/// Runs everything after ingest on donations already in memory.
pub fn execute_from(cfg: &PipelineConfig, donations: Vec<Donation>, parse: ParseReport) -> Result<PipelineRun> {
    if donations.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut counts = StageCounts {
        donations_ingested: donations.len(),
        records_ingested: record_count(&donations),
        ..Default::default()
    };
    let (donations, clean) = cleanse(donations, &cfg.clean);
    counts.donations_cleaned = donations.len();
    counts.records_cleaned = record_count(&donations);

    let (donations, audit) = run_filters(donations, &cfg.filter).map_err(|e| e.in_stage("filter"))?;
    counts.donations_filtered = donations.len();
    counts.chats_filtered = donations.iter().map(Donation::chat_count).sum();
    counts.records_filtered = record_count(&donations);

    let (responses, timing) = response_stage(&donations, cfg.aggregation);
    counts.blocks = timing.blocks;
    counts.responses = timing.responses;
    counts.dropped_negative_gaps = timing.dropped_negative_gaps;

    let analysis = analyze(&donations, &responses, cfg)?;
    Ok(PipelineRun {
        config: cfg.clone(),
        parse,
        clean,
        audit,
        timing,
        counts,
        donations,
        responses,
        analysis,
    })
}

/// Runs all stages and writes the report bundle to `cfg.out`.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineRun> {
    let run = execute(cfg)?;
    write_bundle(&cfg.out, &run).map_err(|e| e.in_stage("report"))?;
    Ok(run)
}
