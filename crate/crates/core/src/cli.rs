//! Command-line front end.
//!
//! Settings resolve as: explicit flag, then the `--config` file (TOML or
//! JSON), then the built-in default. The adapter command falls back to
//! `ZSD_ADAPTER_CMD` when neither flag nor config names one.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::adapter::ENV_ADAPTER_CMD;
use crate::cascade::{read_cascade, sweep_plan, PromptCascade, SweepTemplate, DEFAULT_SEPARATOR};
use crate::coco::{
    parse_detections, parse_ground_truth, write_detections, IngestOptions, Provenance,
};
use crate::crossover::{crossover_table, import_learning_curves, parse_targets};
use crate::harness::{
    run_all, run_experiment, BackendSpec, DetectorParams, ExperimentSpec, HarnessError, RunOptions,
    RunRecord, RunStore, Subsample,
};
use crate::metrics::{evaluate_with, CiMethod, EvalOptions, EvalReport, ThresholdGrid};
use crate::mock::{mock_detect, MockParams};
use crate::plot::learning_curve_svg;
use crate::report::{table_report, GroupBy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Text,
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
enum GroupArg {
    Prompt,
    Backend,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
enum CiArg {
    T,
    Normal,
}

#[derive(Parser, Debug)]
#[command(
    name = "zsd-bench",
    version,
    about = "Benchmark prompt-guided zero-shot object detectors"
)]
struct Cli {
    /// TOML or JSON file with default settings
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate a COCO ground-truth file
    Ingest(IngestArgs),
    /// Score a detections file against ground truth
    Evaluate(EvaluateArgs),
    /// Run one experiment and store its record
    Run(RunArgs),
    /// Run every prompt of a cascade several times
    Sweep(SweepArgs),
    /// Summarize stored runs
    Report(ReportArgs),
    /// Find where fine-tuned learning curves reach the zero-shot score
    Crossover(CrossoverArgs),
    /// Write synthetic detections derived from ground truth
    MockDetect(MockDetectArgs),
}

#[derive(Args, Debug, Default)]
struct IngestFlags {
    /// Keep boxes that overshoot the image instead of clipping them
    #[arg(long)]
    keep_out_of_bounds: bool,
    /// Drop invalid elements and report them instead of failing
    #[arg(long)]
    lenient: bool,
}

#[derive(Args, Debug)]
struct IngestArgs {
    #[arg(long)]
    gt: Option<PathBuf>,
    #[command(flatten)]
    ingest: IngestFlags,
    /// Write the validated dataset here
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long)]
    det: PathBuf,
    /// Comma-separated IoU thresholds (default 0.50:0.05:0.95)
    #[arg(long)]
    thresholds: Option<String>,
    /// Fail when the ground truth has no boxes
    #[arg(long)]
    strict: bool,
    /// Keep only the best detection per image
    #[arg(long)]
    top1: bool,
    #[command(flatten)]
    ingest: IngestFlags,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Args, Debug, Default)]
struct MockFlags {
    #[arg(long)]
    jitter: Option<f64>,
    #[arg(long)]
    drop_rate: Option<f64>,
    #[arg(long)]
    spurious_rate: Option<f64>,
    #[arg(long)]
    score_noise: Option<f64>,
}

#[derive(Args, Debug, Default)]
struct BackendFlags {
    /// `mock` or the name of an adapter backend
    #[arg(long)]
    backend: Option<String>,
    /// Shell command that starts the adapter
    #[arg(long)]
    adapter_cmd: Option<String>,
    #[command(flatten)]
    mock: MockFlags,
    #[arg(long)]
    box_threshold: Option<f64>,
    #[arg(long)]
    text_threshold: Option<f64>,
    #[arg(long)]
    max_in_flight: Option<usize>,
    /// Seconds to wait for each adapter response
    #[arg(long)]
    request_timeout: Option<u64>,
    /// Seconds to wait for the adapter handshake
    #[arg(long)]
    startup_timeout: Option<u64>,
}

#[derive(Args, Debug, Default)]
struct StoreFlags {
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long)]
    runs_dir: Option<PathBuf>,
    /// Directory image file names are resolved against
    #[arg(long)]
    images_root: Option<PathBuf>,
    /// Evaluate on the images that succeeded when some fail
    #[arg(long)]
    allow_partial: bool,
    #[arg(long)]
    top1: bool,
    /// Evaluate on a random fraction of the images
    #[arg(long)]
    subsample: Option<f64>,
    #[arg(long)]
    thresholds: Option<String>,
    #[command(flatten)]
    ingest: IngestFlags,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    prompt: Option<String>,
    #[arg(long)]
    prompt_number: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    store: StoreFlags,
    #[command(flatten)]
    backend: BackendFlags,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// One prompt fragment per line (default: the built-in reference cascade)
    #[arg(long)]
    cascade: Option<PathBuf>,
    #[arg(long)]
    separator: Option<String>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    seed_base: Option<u64>,
    #[command(flatten)]
    store: StoreFlags,
    #[command(flatten)]
    backend: BackendFlags,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long)]
    runs_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    group_by: Option<GroupArg>,
    #[arg(long, value_enum)]
    ci: Option<CiArg>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Args, Debug)]
struct CrossoverArgs {
    /// CSV with columns model,dataset,samples,map50
    #[arg(long)]
    curves: PathBuf,
    /// Zero-shot mAP@0.5 per dataset, e.g. `CSU=0.753,UNE=0.789`
    #[arg(long)]
    zero_shot: String,
    /// Write one SVG per dataset here
    #[arg(long)]
    plot_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Args, Debug)]
struct MockDetectArgs {
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    prompt: Option<String>,
    #[command(flatten)]
    mock: MockFlags,
    #[command(flatten)]
    ingest: IngestFlags,
}

/// Settings read from `--config`. Every field is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    gt: Option<PathBuf>,
    runs_dir: Option<PathBuf>,
    images_root: Option<PathBuf>,
    backend: Option<String>,
    adapter_cmd: Option<String>,
    prompt: Option<String>,
    seed: Option<u64>,
    seed_base: Option<u64>,
    runs: Option<usize>,
    cascade: Option<PathBuf>,
    separator: Option<String>,
    thresholds: Option<Vec<f64>>,
    box_threshold: Option<f64>,
    text_threshold: Option<f64>,
    jitter: Option<f64>,
    drop_rate: Option<f64>,
    spurious_rate: Option<f64>,
    score_noise: Option<f64>,
    max_in_flight: Option<usize>,
    request_timeout: Option<u64>,
    startup_timeout: Option<u64>,
    allow_partial: Option<bool>,
    top1: Option<bool>,
    keep_out_of_bounds: Option<bool>,
    lenient: Option<bool>,
    subsample: Option<f64>,
    group_by: Option<GroupArg>,
    ci: Option<CiArg>,
    format: Option<Format>,
}

impl FileConfig {
    fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))?;
        let is_json = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("json"));
        if is_json {
            serde_json::from_str(&text)
                .map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))
        } else {
            toml::from_str(&text).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))
        }
    }
}

#[derive(Debug)]
struct CliError {
    code: i32,
    message: String,
}

impl CliError {
    fn invalid(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        Self {
            code: if e.is_adapter_failure() { 2 } else { 1 },
            message: e.to_string(),
        }
    }
}

macro_rules! from_display {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::invalid(e.to_string())
            }
        }
    )*};
}

from_display!(
    crate::coco::IngestError,
    crate::metrics::MetricsError,
    crate::cascade::CascadeError,
    crate::crossover::CurveError,
    crate::report::ReportError,
    crate::mock::InvalidMockParams,
    std::io::Error
);

type CliResult = Result<(), CliError>;

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn dispatch<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                write!(out, "{text}")
            } else {
                write!(err, "{text}")
            };
            return code;
        }
    };
    let result = FileConfig::load_opt(cli.config.as_deref()).and_then(|cfg| match cli.command {
        Command::Ingest(a) => cmd_ingest(a, &cfg, out),
        Command::Evaluate(a) => cmd_evaluate(a, &cfg, out),
        Command::Run(a) => cmd_run(a, &cfg, out),
        Command::Sweep(a) => cmd_sweep(a, &cfg, out),
        Command::Report(a) => cmd_report(a, &cfg, out),
        Command::Crossover(a) => cmd_crossover(a, &cfg, out),
        Command::MockDetect(a) => cmd_mock_detect(a, &cfg, out),
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message);
            e.code
        }
    }
}

impl FileConfig {
    fn load_opt(path: Option<&Path>) -> Result<Self, CliError> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }
}

fn require_gt(flag: Option<PathBuf>, cfg: &FileConfig) -> Result<PathBuf, CliError> {
    flag.or_else(|| cfg.gt.clone())
        .ok_or_else(|| CliError::invalid("no ground truth given (use --gt or `gt` in the config)"))
}

fn ingest_options(flags: &IngestFlags, cfg: &FileConfig) -> IngestOptions {
    IngestOptions {
        clip_out_of_bounds: !(flags.keep_out_of_bounds || cfg.keep_out_of_bounds.unwrap_or(false)),
        skip_invalid: flags.lenient || cfg.lenient.unwrap_or(false),
        ..IngestOptions::default()
    }
}

fn threshold_grid(flag: Option<&str>, cfg: &FileConfig) -> Result<ThresholdGrid, CliError> {
    let values = match flag {
        Some(s) => s
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| CliError::invalid(format!("bad threshold `{v}`")))
            })
            .collect::<Result<Vec<_>, _>>()?,
        None => match &cfg.thresholds {
            Some(v) => v.clone(),
            None => return Ok(ThresholdGrid::coco()),
        },
    };
    Ok(ThresholdGrid::new(values)?)
}

fn mock_params(flags: &MockFlags, cfg: &FileConfig) -> MockParams {
    let d = MockParams::default();
    MockParams {
        jitter_frac: flags.jitter.or(cfg.jitter).unwrap_or(d.jitter_frac),
        drop_rate: flags.drop_rate.or(cfg.drop_rate).unwrap_or(d.drop_rate),
        spurious_rate: flags
            .spurious_rate
            .or(cfg.spurious_rate)
            .unwrap_or(d.spurious_rate),
        score_noise: flags
            .score_noise
            .or(cfg.score_noise)
            .unwrap_or(d.score_noise),
        seed: 0,
    }
}

fn backend_spec(flags: &BackendFlags, cfg: &FileConfig) -> Result<BackendSpec, CliError> {
    let name = flags
        .backend
        .clone()
        .or_else(|| cfg.backend.clone())
        .unwrap_or_else(|| "mock".to_string());
    if name == "mock" {
        return Ok(BackendSpec::Mock(mock_params(&flags.mock, cfg)));
    }
    let command = flags
        .adapter_cmd
        .clone()
        .or_else(|| cfg.adapter_cmd.clone())
        .or_else(|| std::env::var(ENV_ADAPTER_CMD).ok().filter(|s| !s.trim().is_empty()))
        .ok_or_else(|| {
            CliError::invalid(format!(
                "backend `{name}` needs an adapter command (--adapter-cmd, `adapter_cmd` in the config, or {ENV_ADAPTER_CMD})"
            ))
        })?;
    Ok(BackendSpec::Adapter { name, command })
}

fn detector_params(flags: &BackendFlags, cfg: &FileConfig) -> DetectorParams {
    let d = DetectorParams::default();
    DetectorParams {
        box_threshold: flags
            .box_threshold
            .or(cfg.box_threshold)
            .unwrap_or(d.box_threshold),
        text_threshold: flags
            .text_threshold
            .or(cfg.text_threshold)
            .unwrap_or(d.text_threshold),
    }
}

fn run_options(store: &StoreFlags, backend: &BackendFlags, cfg: &FileConfig) -> RunOptions {
    let d = RunOptions::default();
    RunOptions {
        runs_dir: store
            .runs_dir
            .clone()
            .or_else(|| cfg.runs_dir.clone())
            .unwrap_or(d.runs_dir),
        images_root: store
            .images_root
            .clone()
            .or_else(|| cfg.images_root.clone()),
        allow_partial: store.allow_partial || cfg.allow_partial.unwrap_or(false),
        top1: store.top1 || cfg.top1.unwrap_or(false),
        ingest: ingest_options(&store.ingest, cfg),
        max_in_flight: backend
            .max_in_flight
            .or(cfg.max_in_flight)
            .unwrap_or(d.max_in_flight),
        request_timeout: backend
            .request_timeout
            .or(cfg.request_timeout)
            .map(Duration::from_secs)
            .unwrap_or(d.request_timeout),
        startup_timeout: backend
            .startup_timeout
            .or(cfg.startup_timeout)
            .map(Duration::from_secs)
            .unwrap_or(d.startup_timeout),
    }
}

fn subsample(store: &StoreFlags, cfg: &FileConfig, seed: u64) -> Option<Subsample> {
    store
        .subsample
        .or(cfg.subsample)
        .map(|fraction| Subsample { fraction, seed })
}

fn format_of(flag: Option<Format>, cfg: &FileConfig) -> Format {
    flag.or(cfg.format).unwrap_or_default()
}

fn eval_text(r: &EvalReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "images = {}  gts = {}  detections = {}",
        r.counts.images, r.counts.gts, r.counts.detections
    );
    let _ = writeln!(s, "map5095 = {:.3}", r.map5095);
    let _ = writeln!(s, "map50 = {:.3}", r.map50);
    let _ = writeln!(s, "map75 = {:.3}", r.map75);
    for t in &r.ap_by_threshold {
        let _ = writeln!(s, "AP@{:.2} = {:.3}", t.threshold, t.ap);
    }
    if r.partial {
        let _ = writeln!(s, "WARNING: partial run, some images were not evaluated");
    }
    for w in &r.warnings {
        let _ = writeln!(s, "warning: {w}");
    }
    s
}

fn render_eval(r: &EvalReport, format: Format) -> String {
    match format {
        Format::Text => eval_text(r),
        Format::Csv => format!("{}\n{}\n", EvalReport::CSV_HEADER, r.csv_row()),
        Format::Json => serde_json::to_string_pretty(r).expect("report serializes") + "\n",
    }
}

fn cmd_ingest(a: IngestArgs, cfg: &FileConfig, out: &mut dyn Write) -> CliResult {
    let gt = require_gt(a.gt, cfg)?;
    let ingested = parse_ground_truth(&gt, &ingest_options(&a.ingest, cfg))?;
    let (d, r) = (&ingested.dataset, &ingested.report);
    if let Some(path) = &a.out {
        std::fs::write(path, d.to_coco_json())?;
    }
    match format_of(a.format, cfg) {
        Format::Json => {
            let v = serde_json::json!({
                "images": d.images.len(),
                "annotations": d.annotations.len(),
                "categories": d.categories.len(),
                "report": r,
            });
            writeln!(out, "{}", serde_json::to_string_pretty(&v).expect("json"))?;
        }
        Format::Csv => {
            writeln!(
                out,
                "images,annotations,categories,rejected,clipped,out_of_bounds"
            )?;
            writeln!(
                out,
                "{},{},{},{},{},{}",
                d.images.len(),
                d.annotations.len(),
                d.categories.len(),
                r.rejected.len(),
                r.clipped.len(),
                r.out_of_bounds.len()
            )?;
        }
        Format::Text => {
            writeln!(
                out,
                "images:      {} (of {})",
                d.images.len(),
                r.source_images
            )?;
            writeln!(
                out,
                "annotations: {} (of {})",
                d.annotations.len(),
                r.source_annotations
            )?;
            writeln!(
                out,
                "categories:  {} (of {})",
                d.categories.len(),
                r.source_categories
            )?;
            writeln!(out, "clipped:     {}", r.clipped.len())?;
            writeln!(out, "out of bounds: {}", r.out_of_bounds.len())?;
            writeln!(out, "rejected:    {}", r.rejected.len())?;
            for rej in &r.rejected {
                writeln!(out, "  {}: {}", rej.element, rej.error)?;
            }
        }
    }
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs, cfg: &FileConfig, out: &mut dyn Write) -> CliResult {
    let gt_path = require_gt(a.gt, cfg)?;
    let gt = parse_ground_truth(&gt_path, &ingest_options(&a.ingest, cfg))?.dataset;
    let mut det = parse_detections(&a.det)?;
    if a.top1 || cfg.top1.unwrap_or(false) {
        det = det.top1_per_image();
    }
    let grid = threshold_grid(a.thresholds.as_deref(), cfg)?;
    let report = evaluate_with(&gt, &det, &grid, EvalOptions { strict: a.strict })?;
    write!(out, "{}", render_eval(&report, format_of(a.format, cfg)))?;
    Ok(())
}

fn cmd_run(a: RunArgs, cfg: &FileConfig, out: &mut dyn Write) -> CliResult {
    let seed = a.seed.or(cfg.seed).unwrap_or(0);
    let spec = ExperimentSpec {
        dataset_ref: require_gt(a.store.gt.clone(), cfg)?,
        prompt: a
            .prompt
            .or_else(|| cfg.prompt.clone())
            .ok_or_else(|| CliError::invalid("no prompt given (use --prompt)"))?,
        prompt_number: a.prompt_number,
        backend: backend_spec(&a.backend, cfg)?,
        seed,
        thresholds: threshold_grid(a.store.thresholds.as_deref(), cfg)?,
        detector_params: detector_params(&a.backend, cfg),
        subsample: subsample(&a.store, cfg, seed),
    };
    let opts = run_options(&a.store, &a.backend, cfg);
    let record = run_experiment(&spec, &opts)?;
    let format = format_of(a.store.format, cfg);
    if format == Format::Text {
        writeln!(out, "run {}", record.id)?;
    }
    let report = record
        .report
        .as_ref()
        .expect("successful runs carry a report");
    write!(out, "{}", render_eval(report, format))?;
    Ok(())
}

fn cmd_sweep(a: SweepArgs, cfg: &FileConfig, out: &mut dyn Write) -> CliResult {
    let cascade = match a.cascade.or_else(|| cfg.cascade.clone()) {
        Some(path) => {
            let separator = a.separator.or_else(|| cfg.separator.clone());
            match separator {
                Some(sep) if sep != DEFAULT_SEPARATOR => {
                    let text = std::fs::read_to_string(&path)
                        .map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))?;
                    let phrases = crate::cascade::parse_cascade_text(&text)?;
                    crate::cascade::build_cascade_with_separator(phrases.phrases(), &sep)?
                }
                _ => read_cascade(&path)?,
            }
        }
        None => PromptCascade::reference(),
    };
    let runs = a.runs.or(cfg.runs).unwrap_or(5);
    if runs == 0 {
        return Err(CliError::invalid("--runs must be at least 1"));
    }
    let seed_base = a.seed_base.or(cfg.seed_base).or(cfg.seed).unwrap_or(0);
    let template = SweepTemplate {
        dataset_ref: require_gt(a.store.gt.clone(), cfg)?,
        backend: backend_spec(&a.backend, cfg)?,
        runs,
        seed_base,
        thresholds: threshold_grid(a.store.thresholds.as_deref(), cfg)?,
        detector_params: detector_params(&a.backend, cfg),
        subsample: subsample(&a.store, cfg, seed_base),
    };
    let specs = sweep_plan(&cascade, &template);
    for s in &specs {
        s.validate()?;
    }
    let opts = run_options(&a.store, &a.backend, cfg);
    let records = run_all(&specs, &opts)?;
    write_report(
        &records,
        GroupBy::Prompt,
        CiMethod::StudentT,
        format_of(a.store.format, cfg),
        out,
    )
}

fn write_report(
    records: &[RunRecord],
    group: GroupBy,
    ci: CiMethod,
    format: Format,
    out: &mut dyn Write,
) -> CliResult {
    let report = table_report(records, group, ci)?;
    let text = match format {
        Format::Text => report.to_text(),
        Format::Csv => report.to_csv(),
        Format::Json => report.to_json() + "\n",
    };
    write!(out, "{text}")?;
    Ok(())
}

fn cmd_report(a: ReportArgs, cfg: &FileConfig, out: &mut dyn Write) -> CliResult {
    let dir = a
        .runs_dir
        .or_else(|| cfg.runs_dir.clone())
        .unwrap_or_else(|| RunOptions::default().runs_dir);
    let records = RunStore::new(dir).load_all()?;
    let group = match a.group_by.or(cfg.group_by).unwrap_or(GroupArg::Backend) {
        GroupArg::Prompt => GroupBy::Prompt,
        GroupArg::Backend => GroupBy::Backend,
    };
    let ci = match a.ci.or(cfg.ci).unwrap_or(CiArg::T) {
        CiArg::T => CiMethod::StudentT,
        CiArg::Normal => CiMethod::Normal,
    };
    write_report(&records, group, ci, format_of(a.format, cfg), out)
}

fn cmd_crossover(a: CrossoverArgs, cfg: &FileConfig, out: &mut dyn Write) -> CliResult {
    let curves = import_learning_curves(&a.curves)?;
    let targets = parse_targets(&a.zero_shot).map_err(CliError::invalid)?;
    let table = crossover_table(&curves, &targets)?;
    let text = match format_of(a.format, cfg) {
        Format::Text => table.to_text(),
        Format::Csv => table.to_csv(),
        Format::Json => table.to_json() + "\n",
    };
    write!(out, "{text}")?;
    if let Some(dir) = &a.plot_dir {
        std::fs::create_dir_all(dir)?;
        for (dataset, &target) in &targets {
            let group: Vec<_> = curves.iter().filter(|c| &c.dataset == dataset).collect();
            if group.is_empty() {
                continue;
            }
            let file_name: String = dataset
                .chars()
                .map(|c| {
                    if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                        c
                    } else {
                        '_'
                    }
                })
                .collect();
            std::fs::write(
                dir.join(format!("{file_name}.svg")),
                learning_curve_svg(dataset, &group, target),
            )?;
        }
    }
    Ok(())
}

fn cmd_mock_detect(a: MockDetectArgs, cfg: &FileConfig, out: &mut dyn Write) -> CliResult {
    let gt_path = require_gt(a.gt, cfg)?;
    let gt = parse_ground_truth(&gt_path, &ingest_options(&a.ingest, cfg))?.dataset;
    let seed = a.seed.or(cfg.seed).unwrap_or(0);
    let params = MockParams {
        seed,
        ..mock_params(&a.mock, cfg)
    };
    params.validate()?;
    let provenance = Provenance {
        backend: "mock".into(),
        prompt: a.prompt.or_else(|| cfg.prompt.clone()).unwrap_or_default(),
        seed,
        timestamp: chrono::Utc::now().to_rfc3339(),
        box_threshold: None,
        text_threshold: None,
    };
    let detections = mock_detect(&gt, &params, provenance);
    write_detections(&detections, &a.out)?;
    writeln!(
        out,
        "wrote {} detections to {}",
        detections.len(),
        a.out.display()
    )?;
    Ok(())
}
