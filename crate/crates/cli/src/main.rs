use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use pointkit::eval::{self, EmitOptions, ReportFormat, ScoreOptions};
use pointkit::parser::{parse_with, ParseMode, ParseOptions, TaskKind};
use pointkit::reward::{compose, PresetTable, VerificationSpec};
use pointkit::trace::{apply_filters, process_trace, select_longest, FilterVerdict, Trajectory2D};
use pointkit::Parallelism;

/// Exit status when more dataset lines were rejected than `--max-rejects` allows.
const EXIT_REJECTS: u8 = 2;

#[derive(Parser)]
#[command(name = "pointkit", version, about = "Score pointing, trace and QA responses against verifiable rewards")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score a response file against a JSON-lines dataset and write a report.
    Score(ScoreArgs),
    /// Score one response and print the reward breakdown as JSON.
    Reward(RewardArgs),
    /// Trajectory utilities.
    Trace {
        #[command(subcommand)]
        command: TraceCommand,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Markdown,
    Json,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => ReportFormat::Csv,
            Format::Markdown => ReportFormat::Markdown,
            Format::Json => ReportFormat::Json,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Lenient,
    Strict,
}

impl From<Mode> for ParseMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Lenient => ParseMode::Lenient,
            Mode::Strict => ParseMode::Strict,
        }
    }
}

#[derive(clap::Args)]
struct ScoreArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    responses: PathBuf,
    /// Preset file; the shipped defaults when omitted.
    #[arg(long)]
    presets: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "markdown")]
    format: Format,
    /// Worker threads (1 = single-threaded).
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Largest number of rejected dataset lines tolerated before exiting with status 2.
    #[arg(long, default_value_t = 0)]
    max_rejects: usize,
    #[arg(long, value_enum, default_value = "lenient")]
    parse_mode: Mode,
    /// Print fractions as fractions rather than percentages in csv/markdown.
    #[arg(long)]
    no_percent: bool,
}

#[derive(clap::Args)]
struct RewardArgs {
    #[arg(long)]
    task: TaskKind,
    /// File holding the raw response text.
    #[arg(long)]
    response: PathBuf,
    /// Verification JSON file; mask bitmaps resolve relative to it.
    #[arg(long)]
    verification: PathBuf,
    /// Preset file; the shipped defaults when omitted.
    #[arg(long)]
    presets: Option<PathBuf>,
    /// Use a named alternative preset (e.g. rrg-main-text) instead of the task default.
    #[arg(long)]
    alternative: Option<String>,
    #[arg(long, value_enum, default_value = "lenient")]
    parse_mode: Mode,
}

#[derive(Subcommand)]
enum TraceCommand {
    /// Pick the longest candidate, optionally smooth, and resample to equidistant points.
    Process(TraceArgs),
}

#[derive(clap::Args)]
struct TraceArgs {
    /// A trajectory object, or a JSON array of candidate trajectories.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = 8)]
    points: usize,
    #[arg(long)]
    smooth: bool,
    /// Apply the preset file's filter rules and report the verdict.
    #[arg(long)]
    filter: bool,
    #[arg(long)]
    presets: Option<PathBuf>,
    /// Output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_presets(path: Option<&Path>) -> Result<PresetTable> {
    match path {
        Some(p) => PresetTable::load(p).with_context(|| format!("loading presets from {}", p.display())),
        None => Ok(PresetTable::builtin()),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn run_score(args: ScoreArgs) -> Result<ExitCode> {
    let presets = load_presets(args.presets.as_deref())?;
    let dataset = eval::load_dataset(&args.dataset)?;
    let responses = eval::load_responses(&args.responses)?;
    for r in &dataset.rejects {
        eprintln!("{}:{}: {:?}: {}", args.dataset.display(), r.line, r.kind, r.message);
    }
    let opts = ScoreOptions {
        parse: ParseOptions {
            mode: args.parse_mode.into(),
            ..ParseOptions::default()
        },
        parallelism: Parallelism::from_workers(args.workers),
    };
    let report = eval::score(&dataset.records, &responses, &presets, &opts)?;
    let emit = EmitOptions {
        format: args.format.into(),
        percent: !args.no_percent,
    };
    eval::emit_report(&report, emit, &args.out)?;
    eprintln!(
        "scored {} records ({} rejected) -> {}",
        report.records.len(),
        dataset.rejects.len(),
        args.out.display()
    );
    if dataset.rejects.len() > args.max_rejects {
        eprintln!(
            "{} rejected lines exceed --max-rejects {}",
            dataset.rejects.len(),
            args.max_rejects
        );
        return Ok(ExitCode::from(EXIT_REJECTS));
    }
    Ok(ExitCode::SUCCESS)
}

fn run_reward(args: RewardArgs) -> Result<ExitCode> {
    let presets = load_presets(args.presets.as_deref())?;
    let spec = match &args.alternative {
        Some(name) => presets
            .alternative(name)
            .ok_or_else(|| anyhow!("no alternative preset named `{name}`"))?,
        None => presets
            .get(args.task)
            .ok_or_else(|| anyhow!("no preset for task {}", args.task))?,
    };
    if spec.task() != args.task {
        bail!("preset is for {} but --task is {}", spec.task(), args.task);
    }
    let raw = read(&args.response)?;
    let vspec: VerificationSpec = serde_json::from_str(&read(&args.verification)?)
        .with_context(|| format!("parsing {}", args.verification.display()))?;
    let verification = vspec.load(args.verification.parent())?;
    let opts = ParseOptions {
        mode: args.parse_mode.into(),
        ..ParseOptions::default()
    };
    let parsed = parse_with(&raw, args.task, opts);
    let breakdown = compose(&parsed, &verification, spec)?;
    println!("{}", serde_json::to_string_pretty(&breakdown)?);
    Ok(ExitCode::SUCCESS)
}

fn run_trace(args: TraceArgs) -> Result<ExitCode> {
    let text = read(&args.input)?;
    let candidates: Vec<Trajectory2D> = match serde_json::from_str::<Vec<Trajectory2D>>(&text) {
        Ok(list) => list,
        Err(_) => vec![serde_json::from_str(&text).with_context(|| format!("parsing {}", args.input.display()))?],
    };
    let chosen = select_longest(&candidates)?;
    if args.filter {
        let presets = load_presets(args.presets.as_deref())?;
        let verdict = apply_filters(chosen, presets.filters());
        if verdict != FilterVerdict::Accept {
            bail!("trajectory rejected by filters: {verdict:?}");
        }
    }
    let out = process_trace(chosen, args.points, args.smooth)?;
    let json = serde_json::to_string_pretty(&out)?;
    match &args.out {
        Some(p) => fs::write(p, json + "\n").with_context(|| format!("writing {}", p.display()))?,
        None => println!("{json}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::FAILURE } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Score(a) => run_score(a),
        Command::Reward(a) => run_reward(a),
        Command::Trace {
            command: TraceCommand::Process(a),
        } => run_trace(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
