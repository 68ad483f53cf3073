//! `dcaseg` subcommands: `generate`, `run`, `sweep`, `compare`.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error.
//! Diagnostics go to stderr; data goes to files or stdout.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use thiserror::Error;

use crate::datagen::{self, Label, ScenarioSpec};
use crate::engine::{Engine, PopulationConfig, RunOutput, StreamError};
use crate::segmentation::{analyze, k_alpha_series, SegmentReport, SegmentationMode, SegmenterConfig};
use crate::signal::{AntigenType, Event, WeightMatrix};
use crate::stats::{compare_runs, summarize, Direction, RunSeries, SummaryRow, TestPlan, VarianceModel, DEFAULT_ALPHA};
use crate::stream_io::{
    self, parse_report, write_grid, write_report, write_summary, EventReader, Format, ReportDocument, ReportMeta,
    StreamIoError,
};

pub const TOOL: &str = "dcaseg";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

fn data_err(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = TOOL, version, about = "Deterministic DCA with segmented analysis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic event stream plus its label sidecar.
    Generate(GenerateArgs),
    /// Run detection and segmented analysis over an event stream.
    Run(RunArgs),
    /// Run one detection pass and analyse it at several segment sizes.
    Sweep(SweepArgs),
    /// t-test segmented reports against each other and a baseline.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Scenario spec (JSON).
    #[arg(long, conflicts_with = "bundled", required_unless_present = "bundled")]
    pub spec: Option<PathBuf>,
    /// Built-in scenario name.
    #[arg(long, value_parser = ["syn-scan"])]
    pub bundled: Option<String>,
    /// Overrides the spec's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Multiplies every source rate.
    #[arg(long)]
    pub scale: Option<f64>,
    #[arg(short = 'o', long = "output")]
    pub output: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct EngineArgs {
    #[arg(short = 'i', long = "input")]
    pub input: PathBuf,
    /// JSON file with default run settings; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub population: Option<usize>,
    #[arg(long = "threshold-step")]
    pub threshold_step: Option<f64>,
    /// JSON weight matrix.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Drop antigens still held at end of stream instead of flushing them.
    #[arg(long = "no-flush")]
    pub no_flush: bool,
    /// Leave end-of-stream forced records out of the analysis.
    #[arg(long = "exclude-forced")]
    pub exclude_forced: bool,
    /// Seed recorded in the report metadata (defaults to the generator sidecar).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub engine: EngineArgs,
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<SegmentationMode>,
    #[arg(long)]
    pub size: Option<u64>,
    #[arg(long, value_parser = parse_format)]
    pub format: Option<Format>,
    /// Defaults to stdout.
    #[arg(short = 'o', long = "output")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub engine: EngineArgs,
    #[arg(long, value_parser = parse_mode)]
    pub mode: SegmentationMode,
    /// Comma-separated sizes; defaults to 1e2..1e6 for abs and 1..1e3 for tbs.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Vec<u64>,
    /// Format of the summary table; per-size reports are always jsonl.
    #[arg(long, value_parser = parse_format)]
    pub format: Option<Format>,
    /// Output directory.
    #[arg(short = 'o', long = "output")]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Segmented jsonl reports, in table order.
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
    /// Unsegmented jsonl report supplying the true means.
    #[arg(long)]
    pub baseline: PathBuf,
    /// Label sidecar; anomalous types default to `greater`, normal to `less`.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,
    /// e.g. `Nmap=greater,Firefox=less`
    #[arg(long, value_delimiter = ',')]
    pub direction: Vec<String>,
    #[arg(long, value_parser = ["welch", "pooled"], default_value = "welch")]
    pub variance: String,
    #[arg(long, value_parser = parse_format)]
    pub format: Option<Format>,
    #[arg(short = 'o', long = "output")]
    pub output: Option<PathBuf>,
}

fn parse_mode(s: &str) -> Result<SegmentationMode, String> {
    s.parse()
        .map_err(|e: crate::segmentation::SegmentationError| e.to_string())
}

fn parse_format(s: &str) -> Result<Format, String> {
    s.parse()
}

/// Optional settings read from `--config`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub mode: Option<SegmentationMode>,
    pub size: Option<u64>,
    pub population: Option<usize>,
    pub threshold_step: Option<f64>,
    pub weights: Option<WeightMatrix>,
    pub flush: Option<bool>,
    pub include_forced: Option<bool>,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))
}

/// Writes via a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let file_name = path
        .file_name()
        .ok_or_else(|| config_err(format!("{}: not a file path", path.display())))?;
    let mut tmp_name = file_name.to_os_string();
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let io = |e: io::Error| data_err(format!("{}: {e}", path.display()));
    {
        let mut f = File::create(&tmp).map_err(io)?;
        f.write_all(contents).map_err(io)?;
        f.sync_all().map_err(io)?;
    }
    fs::rename(&tmp, path).map_err(io)
}

fn emit(output: Option<&Path>, text: &str) -> Result<(), CliError> {
    match output {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => {
            let mut out = io::stdout().lock();
            out.write_all(text.as_bytes()).map_err(data_err)?;
            out.flush().map_err(data_err)
        }
    }
}

fn sidecar(path: &Path, ext: &str) -> PathBuf {
    path.with_extension(ext)
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<(), CliError> {
    let mut spec: ScenarioSpec = match (&args.spec, args.bundled.as_deref()) {
        (Some(p), _) => read_json(p)?,
        (None, Some("syn-scan")) => datagen::bundled_scenario_syn_scan(),
        _ => return Err(config_err("one of --spec or --bundled is required")),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(f) = args.scale {
        if !(f.is_finite() && f >= 0.0) {
            return Err(config_err(format!("--scale must be non-negative, got {f}")));
        }
        spec = spec.scale_rates(f);
    }
    let scenario = datagen::generate(&spec).map_err(config_err)?;

    let mut buf = Vec::new();
    stream_io::write_events(&mut buf, &scenario.events).map_err(data_err)?;
    write_atomic(&args.output, &buf)?;
    let mut labels = Vec::new();
    stream_io::write_labels(&mut labels, &scenario.labels).map_err(data_err)?;
    write_atomic(&sidecar(&args.output, "labels"), &labels)?;
    let spec_json = serde_json::to_string_pretty(&spec).map_err(data_err)? + "\n";
    write_atomic(&sidecar(&args.output, "scenario.json"), spec_json.as_bytes())?;
    eprintln!(
        "generated {} events ({} antigens) over {} ticks, seed {}",
        scenario.events.len(),
        scenario.antigen_count(),
        spec.duration_ticks,
        spec.seed
    );
    Ok(())
}

struct Resolved {
    population: PopulationConfig,
    include_forced: bool,
    seed: Option<u64>,
    file: FileConfig,
}

fn resolve_engine(args: &EngineArgs) -> Result<Resolved, CliError> {
    let file: FileConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => FileConfig::default(),
    };
    let defaults = PopulationConfig::default();
    let weights = match &args.weights {
        Some(p) => read_json(p)?,
        None => file.weights.unwrap_or(defaults.weights),
    };
    let population = PopulationConfig {
        population_size: args.population.or(file.population).unwrap_or(defaults.population_size),
        threshold_step: args
            .threshold_step
            .or(file.threshold_step)
            .unwrap_or(defaults.threshold_step),
        weights,
        flush_at_end: if args.no_flush {
            false
        } else {
            file.flush.unwrap_or(true)
        },
    };
    population.validate().map_err(config_err)?;
    let include_forced = if args.exclude_forced {
        false
    } else {
        file.include_forced.unwrap_or(true)
    };
    let seed = args.seed.or_else(|| {
        let spec: ScenarioSpec = read_json(&sidecar(&args.input, "scenario.json")).ok()?;
        Some(spec.seed)
    });
    Ok(Resolved {
        population,
        include_forced,
        seed,
        file,
    })
}

/// Streams the input file through a fresh engine.
fn detect(input: &Path, population: PopulationConfig) -> Result<RunOutput, CliError> {
    let file = File::open(input).map_err(|e| config_err(format!("{}: {e}", input.display())))?;
    let mut engine = Engine::new(population).map_err(config_err)?;
    let mut out = RunOutput::default();
    for item in EventReader::new(BufReader::new(file)) {
        let (line, ev) = item.map_err(|e| match e {
            StreamIoError::Parse { .. } => data_err(format!("{}: {e}", input.display())),
            StreamIoError::Io(e) => data_err(format!("{}: {e}", input.display())),
        })?;
        engine
            .ingest(&ev, &mut out.records)
            .map_err(|e: StreamError| data_err(format!("{}: line {line}: {e}", input.display())))?;
        if matches!(ev, Event::Signal(_)) {
            out.signals += 1;
        }
    }
    out.antigens_ingested = engine.ag_counter();
    out.final_tick = engine.current_tick();
    let tail = engine.flush();
    out.records.extend(tail.records);
    out.dropped = tail.dropped;
    Ok(out)
}

fn build_report(
    input: &Path,
    resolved: &Resolved,
    run: &RunOutput,
    seg: SegmenterConfig,
) -> Result<ReportDocument, CliError> {
    let segments = analyze(&run.records, &seg, run.final_tick).map_err(config_err)?;
    Ok(ReportDocument {
        meta: ReportMeta {
            tool: TOOL.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            input: input.display().to_string(),
            mode: seg.mode,
            segment_size: seg.segment_size,
            include_forced: seg.include_forced,
            population: resolved.population,
            seed: resolved.seed,
            antigens_ingested: run.antigens_ingested,
            signals: run.signals,
            records: run.records.len() as u64,
            dropped: run.dropped,
            final_tick: run.final_tick,
        },
        segments,
    })
}

pub fn cmd_run(args: &RunArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let resolved = resolve_engine(&args.engine)?;
    let mode = args.mode.or(resolved.file.mode).unwrap_or(SegmentationMode::None);
    let size = args.size.or(resolved.file.size);
    let segment_size = match (mode, size) {
        (SegmentationMode::None, s) => s.unwrap_or(1),
        (_, Some(s)) => s,
        (m, None) => return Err(config_err(format!("--size is required for mode {m}"))),
    };
    let seg = SegmenterConfig {
        mode,
        segment_size,
        include_forced: resolved.include_forced,
    };
    seg.validate().map_err(config_err)?;

    let run = detect(&args.engine.input, resolved.population)?;
    let doc = build_report(&args.engine.input, &resolved, &run, seg)?;
    let text = write_report(&doc, args.format.unwrap_or(Format::JsonLines));
    emit(args.output.as_deref(), &text)?;
    eprintln!(
        "segments={} antigens={} records={} dropped={} wall={:.3}s",
        doc.segments.len(),
        run.antigens_ingested,
        run.records.len(),
        run.dropped,
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

/// Summary rows grouped by type, sizes in the given order.
pub fn summary_rows(per_size: &[(u64, Vec<SegmentReport>)]) -> Vec<SummaryRow> {
    let series: Vec<(u64, BTreeMap<AntigenType, Vec<f64>>)> = per_size
        .iter()
        .map(|(size, reports)| (*size, k_alpha_series(reports)))
        .collect();
    let mut types: Vec<&AntigenType> = series.iter().flat_map(|(_, s)| s.keys()).collect();
    types.sort();
    types.dedup();
    let mut rows = Vec::new();
    for t in types {
        for (size, s) in &series {
            if let Some(summary) = s.get(t).and_then(|v| summarize(v).ok()) {
                rows.push(SummaryRow {
                    antigen_type: t.clone(),
                    segment_size: *size,
                    summary,
                });
            }
        }
    }
    rows
}

pub fn default_sizes(mode: SegmentationMode) -> Vec<u64> {
    match mode {
        SegmentationMode::Abs => vec![100, 1_000, 10_000, 100_000, 1_000_000],
        SegmentationMode::Tbs => vec![1, 10, 100, 1_000],
        SegmentationMode::None => vec![1],
    }
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<(), CliError> {
    let started = Instant::now();
    if args.mode == SegmentationMode::None {
        return Err(config_err("sweep needs --mode abs or tbs"));
    }
    let resolved = resolve_engine(&args.engine)?;
    let sizes = if args.sizes.is_empty() {
        default_sizes(args.mode)
    } else {
        args.sizes.clone()
    };
    let segs: Vec<SegmenterConfig> = sizes
        .iter()
        .map(|&segment_size| SegmenterConfig {
            mode: args.mode,
            segment_size,
            include_forced: resolved.include_forced,
        })
        .collect();
    for s in &segs {
        s.validate().map_err(config_err)?;
    }
    fs::create_dir_all(&args.output).map_err(|e| config_err(format!("{}: {e}", args.output.display())))?;

    let run = detect(&args.engine.input, resolved.population)?;
    // Segment sizes are independent given the record sequence.
    let docs: Vec<Result<ReportDocument, CliError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = segs
            .iter()
            .map(|&seg| {
                let (input, resolved, run) = (&args.engine.input, &resolved, &run);
                scope.spawn(move || build_report(input, resolved, run, seg))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sweep worker panicked"))
            .collect()
    });
    let mut per_size = Vec::new();
    for (doc, size) in docs.into_iter().zip(&sizes) {
        let doc = doc?;
        let path = args.output.join(format!("{}_{}.jsonl", args.mode, size));
        write_atomic(&path, write_report(&doc, Format::JsonLines).as_bytes())?;
        eprintln!("{}: {} segments", path.display(), doc.segments.len());
        per_size.push((*size, doc.segments));
    }
    let format = args.format.unwrap_or(Format::Table);
    let ext = match format {
        Format::JsonLines => "jsonl",
        Format::Table => "txt",
    };
    let rows = summary_rows(&per_size);
    let path = args.output.join(format!("summary_{}.{ext}", args.mode));
    write_atomic(&path, write_summary(&rows, args.mode, format).as_bytes())?;
    eprintln!(
        "{}: {} rows; antigens={} records={} wall={:.3}s",
        path.display(),
        rows.len(),
        run.antigens_ingested,
        run.records.len(),
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

fn load_report(path: &Path) -> Result<ReportDocument, CliError> {
    let text = fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    parse_report(&text).map_err(|e| data_err(format!("{}: {e}", path.display())))
}

pub fn parse_directions(items: &[String]) -> Result<BTreeMap<AntigenType, Direction>, CliError> {
    let mut out = BTreeMap::new();
    for item in items.iter().filter(|s| !s.is_empty()) {
        let (t, d) = item
            .split_once('=')
            .ok_or_else(|| config_err(format!("--direction expects type=greater|less, got '{item}'")))?;
        out.insert(AntigenType::new(t), d.parse::<Direction>().map_err(config_err)?);
    }
    Ok(out)
}

pub fn cmd_compare(args: &CompareArgs) -> Result<(), CliError> {
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        return Err(config_err(format!("--alpha must lie in (0, 1), got {}", args.alpha)));
    }
    let baseline_doc = load_report(&args.baseline)?;
    if baseline_doc.segments.len() != 1 {
        return Err(config_err(format!(
            "{}: baseline must be a single-segment (mode none) report, found {} segments",
            args.baseline.display(),
            baseline_doc.segments.len()
        )));
    }
    let baseline: BTreeMap<AntigenType, f64> = baseline_doc.segments[0]
        .scores
        .iter()
        .map(|(t, s)| (t.clone(), s.k_alpha))
        .collect();

    let mut directions = BTreeMap::new();
    if let Some(p) = &args.labels {
        let file = File::open(p).map_err(|e| config_err(format!("{}: {e}", p.display())))?;
        let labels = stream_io::read_labels(BufReader::new(file)).map_err(config_err)?;
        for (t, l) in labels {
            let d = match l {
                Label::Anomalous => Direction::Greater,
                Label::Normal => Direction::Less,
            };
            directions.insert(t, d);
        }
    }
    directions.extend(parse_directions(&args.direction)?);

    let mut runs = Vec::new();
    for path in &args.reports {
        let doc = load_report(path)?;
        let mut label = doc.meta.label();
        if runs.iter().any(|r: &RunSeries| r.label == label) {
            label = format!("{label}#{}", runs.len() + 1);
        }
        runs.push(RunSeries {
            label,
            series: k_alpha_series(&doc.segments),
        });
    }
    let plan = TestPlan {
        alpha: args.alpha,
        variance: match args.variance.as_str() {
            "pooled" => VarianceModel::Pooled,
            _ => VarianceModel::Welch,
        },
        directions,
        types: None,
    };
    let grid = compare_runs(&runs, &baseline, &plan).map_err(config_err)?;
    emit(
        args.output.as_deref(),
        &write_grid(&grid, args.format.unwrap_or(Format::Table)),
    )
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Compare(a) => cmd_compare(a),
    }
}

/// Parses arguments, runs the subcommand and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{TOOL}: {e}");
            e.exit_code()
        }
    }
}
