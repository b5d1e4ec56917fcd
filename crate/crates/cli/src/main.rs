//! Command-line front end for the chatrecip pipeline.
//!
//! `all` runs every stage and writes one report bundle. The other
//! subcommands run a single stage inside a work directory (`--out`), one
//! subdirectory per stage, each finished by a `stage.json` marker that later
//! stages check before reading.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use chatrecip::cleanse::cleanse;
use chatrecip::filterpipe::run_filters;
use chatrecip::inference::Method;
use chatrecip::pipeline::{
    analyze_selected, ingest_inputs, response_stage, run_pipeline, write_section, InputSpec,
    PipelineConfig, PipelineRun, Section, Selection, StageCounts,
};
use chatrecip::stability::CountBasis;
use chatrecip::store::{read_corpus, read_jsonl, write_corpus, write_jsonl, RESPONSES_FILE};
use chatrecip::synth::{gen_corpus, CorpusSpec, SourceProfile};
use chatrecip::timing::{Aggregation, ResponseRecord};
use chatrecip::{Donation, Source};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const MARKER: &str = "stage.json";
const DEFAULT_WORK_DIR: &str = "chatrecip-work";

#[derive(Parser)]
#[command(name = "chatrecip", version, about = "Response-time reciprocity analysis of donated chat exports")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Pipeline configuration file (TOML); flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Work directory for single stages, bundle directory for `all`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct Inputs {
    /// Export directory; repeatable. Holds `whatsapp/` and `instagram/`
    /// subdirectories unless `--source` is given.
    #[arg(long = "input")]
    input: Vec<PathBuf>,
    /// Treat every subdirectory of each input as a donation of this source.
    #[arg(long)]
    source: Option<Source>,
}

#[derive(Args, Clone, Default)]
struct Params {
    /// Which message of a block anchors its response time: first or last.
    #[arg(long)]
    aggregation: Option<Aggregation>,
    /// RP threshold in minutes.
    #[arg(long)]
    rp_threshold: Option<u64>,
    /// Records per side a month needs to enter the stability series.
    #[arg(long)]
    min_per_side: Option<usize>,
    /// Count merged blocks or raw messages against --min-per-side.
    #[arg(long)]
    count_basis: Option<CountBasis>,
    /// Variance-component estimation: reml or ml.
    #[arg(long)]
    method: Option<Method>,
    /// Subsampling repetitions per month-chat during calibration.
    #[arg(long)]
    reps: Option<usize>,
    /// Seed for calibration subsampling.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse raw exports into records.
    Ingest {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
    },
    /// Remove test donations, duplicates, future messages, and system senders.
    Clean {
        #[command(flatten)]
        common: Common,
    },
    /// Keep dyadic, balanced, large-enough chats and donations.
    Filter {
        #[command(flatten)]
        common: Common,
    },
    /// Merge blocks and compute response times.
    Rt {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        params: Params,
    },
    /// General statistics, ECDF, RT bins, and word counts.
    Report {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        params: Params,
    },
    /// Per-chat similarity of ego and alter RT distributions.
    Similarity {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        params: Params,
    },
    /// Mixed model of ego RP on alter RP.
    Lmm {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        params: Params,
    },
    /// Monthly similarity series and per-chat MAD.
    Stability {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        params: Params,
    },
    /// Subsampling noise band for monthly similarity.
    Calibrate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        params: Params,
    },
    /// Write a synthetic export tree with planted ground truth.
    Synth {
        /// Corpus specification (TOML).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory to create; must not exist or be empty.
        #[arg(long)]
        out: PathBuf,
        /// Preset used when no config is given.
        #[arg(long, default_value = "whatsapp")]
        source: Source,
        /// Overrides the seed of the preset or config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run every stage and write the report bundle.
    All {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        params: Params,
    },
}

enum Failure {
    Usage(String),
    Data(chatrecip::Error),
}

impl From<chatrecip::Error> for Failure {
    fn from(e: chatrecip::Error) -> Self {
        Failure::Data(e)
    }
}

type CliResult<T> = Result<T, Failure>;

fn load_config(common: &Common) -> CliResult<PipelineConfig> {
    let Some(path) = &common.config else {
        return Ok(PipelineConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
    PipelineConfig::from_toml(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn apply_params(cfg: &mut PipelineConfig, p: &Params) {
    if let Some(v) = p.aggregation {
        cfg.aggregation = v;
    }
    if let Some(v) = p.rp_threshold {
        cfg.rp_threshold = v;
    }
    if let Some(v) = p.min_per_side {
        cfg.min_per_side = v;
    }
    if let Some(v) = p.count_basis {
        cfg.count_basis = v;
    }
    if let Some(v) = p.method {
        cfg.method = v;
    }
    if let Some(v) = p.reps {
        cfg.calibration.reps = v;
    }
    if let Some(v) = p.seed {
        cfg.seed = v;
    }
}

fn apply_inputs(cfg: &mut PipelineConfig, inputs: &Inputs) -> CliResult<()> {
    if !inputs.input.is_empty() {
        cfg.inputs = inputs
            .input
            .iter()
            .map(|path| InputSpec {
                path: path.clone(),
                source: inputs.source,
            })
            .collect();
    } else if inputs.source.is_some() {
        for spec in &mut cfg.inputs {
            spec.source = inputs.source;
        }
    }
    if cfg.inputs.is_empty() {
        return Err(Failure::Usage(
            "no input given; pass --input <dir> or list inputs in --config".into(),
        ));
    }
    Ok(())
}

fn validate(cfg: &PipelineConfig) -> CliResult<()> {
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))
}

fn work_dir(common: &Common) -> PathBuf {
    common.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_WORK_DIR))
}

#[derive(Serialize, Deserialize)]
struct StageMarker {
    stage: String,
    version: String,
    config: PipelineConfig,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Failure::Data(io_error(path, e)))
}

fn io_error(path: &Path, e: std::io::Error) -> chatrecip::Error {
    chatrecip::Error::InvalidConfig(format!("{}: {e}", path.display()))
}

/// Recreates the directory for `stage`, refusing to clear anything that is
/// not an earlier run of the same stage.
fn begin_stage(work: &Path, stage: &str) -> CliResult<PathBuf> {
    let dir = work.join(stage);
    if dir.exists() {
        let ours = dir.join(MARKER).is_file();
        let empty = std::fs::read_dir(&dir)
            .map_err(|e| Failure::Data(io_error(&dir, e)))?
            .next()
            .is_none();
        if !ours && !empty {
            return Err(Failure::Usage(format!(
                "{} exists and was not written by `chatrecip {stage}`; refusing to overwrite",
                dir.display()
            )));
        }
        std::fs::remove_dir_all(&dir).map_err(|e| Failure::Data(io_error(&dir, e)))?;
    }
    std::fs::create_dir_all(&dir).map_err(|e| Failure::Data(io_error(&dir, e)))?;
    Ok(dir)
}

fn finish_stage(dir: &Path, stage: &str, cfg: &PipelineConfig) -> CliResult<()> {
    write_json(
        &dir.join(MARKER),
        &StageMarker {
            stage: stage.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config: cfg.clone(),
        },
    )
}

/// The directory of a finished earlier stage, or a message naming the
/// command that produces it.
fn require_stage(work: &Path, stage: &str) -> CliResult<PathBuf> {
    let dir = work.join(stage);
    if dir.join(MARKER).is_file() {
        return Ok(dir);
    }
    let how = match stage {
        "ingest" => "chatrecip ingest --input <exports>",
        "clean" => "chatrecip clean",
        "filter" => "chatrecip filter",
        _ => "chatrecip rt",
    };
    Err(Failure::Usage(format!(
        "no finished `{stage}` stage in {}; run `{how} --out {}` first",
        work.display(),
        work.display()
    )))
}

fn corpus_summary(donations: &[Donation]) -> String {
    let chats: usize = donations.iter().map(Donation::chat_count).sum();
    let records: usize = donations.iter().map(|d| d.records.len()).sum();
    format!("{} donations, {chats} chats, {records} records", donations.len())
}

fn cmd_ingest(common: &Common, inputs: &Inputs) -> CliResult<()> {
    let mut cfg = load_config(common)?;
    apply_inputs(&mut cfg, inputs)?;
    validate(&cfg)?;
    let work = work_dir(common);
    let (donations, report) = ingest_inputs(&cfg.inputs, &cfg.ingest)?;
    let dir = begin_stage(&work, "ingest")?;
    write_corpus(&dir, &donations)?;
    write_json(&dir.join("parse_report.json"), &report)?;
    finish_stage(&dir, "ingest", &cfg)?;
    println!("ingest: {} -> {}", corpus_summary(&donations), dir.display());
    Ok(())
}

fn cmd_clean(common: &Common) -> CliResult<()> {
    let cfg = load_config(common)?;
    validate(&cfg)?;
    let work = work_dir(common);
    let donations = read_corpus(&require_stage(&work, "ingest")?)?;
    let (donations, report) = cleanse(donations, &cfg.clean);
    let dir = begin_stage(&work, "clean")?;
    write_corpus(&dir, &donations)?;
    write_json(&dir.join("clean_report.json"), &report)?;
    finish_stage(&dir, "clean", &cfg)?;
    println!("clean: {} -> {}", corpus_summary(&donations), dir.display());
    Ok(())
}

fn cmd_filter(common: &Common) -> CliResult<()> {
    let cfg = load_config(common)?;
    validate(&cfg)?;
    let work = work_dir(common);
    let donations = read_corpus(&require_stage(&work, "clean")?)?;
    let (donations, audit) = run_filters(donations, &cfg.filter).map_err(|e| e.in_stage("filter"))?;
    let dir = begin_stage(&work, "filter")?;
    write_corpus(&dir, &donations)?;
    write_json(&dir.join("filter_audit.json"), &audit)?;
    finish_stage(&dir, "filter", &cfg)?;
    println!(
        "filter: {} ({} drops) -> {}",
        corpus_summary(&donations),
        audit.entries.len(),
        dir.display()
    );
    Ok(())
}

fn cmd_rt(common: &Common, params: &Params) -> CliResult<()> {
    let mut cfg = load_config(common)?;
    apply_params(&mut cfg, params);
    validate(&cfg)?;
    let work = work_dir(common);
    let donations = read_corpus(&require_stage(&work, "filter")?)?;
    let (responses, report) = response_stage(&donations, cfg.aggregation);
    let dir = begin_stage(&work, "rt")?;
    write_jsonl(&dir.join(RESPONSES_FILE), &responses)?;
    write_json(&dir.join("timing_report.json"), &report)?;
    finish_stage(&dir, "rt", &cfg)?;
    println!(
        "rt: {} blocks, {} response times -> {}",
        report.blocks,
        report.responses,
        dir.display()
    );
    Ok(())
}

/// Runs one analysis stage on the outputs of `filter` and `rt`.
fn cmd_analysis(common: &Common, params: &Params, stage: &str, section: Section, sel: Selection) -> CliResult<()> {
    let mut cfg = load_config(common)?;
    apply_params(&mut cfg, params);
    validate(&cfg)?;
    let work = work_dir(common);
    let donations = read_corpus(&require_stage(&work, "filter")?)?;
    let responses: Vec<ResponseRecord> = read_jsonl(&require_stage(&work, "rt")?.join(RESPONSES_FILE))?;
    let analysis = analyze_selected(&donations, &responses, &cfg, sel)?;
    let skipped = analysis.skipped.clone();
    let run = PipelineRun {
        config: cfg.clone(),
        parse: Default::default(),
        clean: Default::default(),
        audit: Default::default(),
        timing: Default::default(),
        counts: StageCounts::default(),
        donations,
        responses,
        analysis,
    };
    let dir = begin_stage(&work, stage)?;
    write_section(&dir, &run, section)?;
    if !skipped.is_empty() {
        write_json(&dir.join("skipped.json"), &skipped)?;
        for s in &skipped {
            eprintln!("{stage}: skipped {} for {}: {}", s.analysis, s.scope, s.reason);
        }
    }
    finish_stage(&dir, stage, &cfg)?;
    println!("{stage}: -> {}", dir.display());
    Ok(())
}

fn cmd_synth(config: Option<&Path>, out: &Path, source: Source, seed: Option<u64>) -> CliResult<()> {
    let mut spec = match config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
            CorpusSpec::from_toml(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?
        }
        None => match source {
            Source::Whatsapp => CorpusSpec::whatsapp_like(1),
            Source::Instagram => CorpusSpec::instagram_like(1),
        },
    };
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    spec.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    if out.exists()
        && std::fs::read_dir(out)
            .map_err(|e| Failure::Data(io_error(out, e)))?
            .next()
            .is_some()
    {
        return Err(Failure::Usage(format!(
            "{} is not empty; choose a new directory for the synthetic corpus",
            out.display()
        )));
    }
    let corpus = gen_corpus(&spec)?;
    corpus.write(out)?;
    let planted: Vec<_> = corpus.planted().collect();
    write_jsonl(&out.join("planted.jsonl"), planted)?;
    write_json(&out.join("spec.json"), &spec)?;
    let profile = match spec.source {
        SourceProfile::WhatsappLike => "whatsapp-like",
        SourceProfile::InstagramLike => "instagram-like",
    };
    println!(
        "synth: {} donations, {} messages ({profile}) -> {}",
        corpus.donations.len(),
        corpus.message_count(),
        out.display()
    );
    if corpus.infeasible_targets > 0 {
        eprintln!(
            "synth: {} RP targets were outside the reachable range and were clipped",
            corpus.infeasible_targets
        );
    }
    Ok(())
}

fn cmd_all(common: &Common, inputs: &Inputs, params: &Params) -> CliResult<()> {
    let mut cfg = load_config(common)?;
    apply_inputs(&mut cfg, inputs)?;
    apply_params(&mut cfg, params);
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    validate(&cfg)?;
    let run = run_pipeline(&cfg)?;
    for s in &run.analysis.skipped {
        eprintln!("all: skipped {} for {}: {}", s.analysis, s.scope, s.reason);
    }
    println!(
        "all: {} donations, {} chats, {} response times -> {}",
        run.counts.donations_filtered,
        run.counts.chats_filtered,
        run.counts.responses,
        cfg.out.display()
    );
    Ok(())
}

fn dispatch(command: Command) -> CliResult<()> {
    let only = |lmm, stability, calibration| Selection {
        lmm,
        stability,
        calibration,
    };
    match command {
        Command::Ingest { common, inputs } => cmd_ingest(&common, &inputs),
        Command::Clean { common } => cmd_clean(&common),
        Command::Filter { common } => cmd_filter(&common),
        Command::Rt { common, params } => cmd_rt(&common, &params),
        Command::Report { common, params } => {
            cmd_analysis(&common, &params, "report", Section::Descriptive, Selection::NONE)
        }
        Command::Similarity { common, params } => {
            cmd_analysis(&common, &params, "similarity", Section::Similarity, Selection::NONE)
        }
        Command::Lmm { common, params } => {
            cmd_analysis(&common, &params, "lmm", Section::Lmm, only(true, false, false))
        }
        Command::Stability { common, params } => cmd_analysis(
            &common,
            &params,
            "stability",
            Section::Stability,
            only(false, true, false),
        ),
        Command::Calibrate { common, params } => cmd_analysis(
            &common,
            &params,
            "calibrate",
            Section::Calibration,
            only(false, false, true),
        ),
        Command::Synth {
            config,
            out,
            source,
            seed,
        } => cmd_synth(config.as_deref(), &out, source, seed),
        Command::All {
            common,
            inputs,
            params,
        } => cmd_all(&common, &inputs, &params),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_DATA)
        }
    }
}
