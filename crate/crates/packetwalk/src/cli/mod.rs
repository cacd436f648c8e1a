//! Command-line surface: one flat flag set covering three schemes, a
//! nested-box campaign (`multilevel`), a two-level campaign (`twolevel`),
//! and estimation-only replay of an existing counts table (`replay`).
//! Flags are checked for mutual consistency per scheme before any work
//! starts, and every run is reproducible from its flags and seed.

mod checkpoint;
mod ingest;
mod report;

pub use checkpoint::{campaign_identity, load_checkpoint, save_checkpoint, CheckpointError};
pub use ingest::{emit_counts_tsv, ingest_counts_table, read_counts_file, IngestError};
pub use report::{
    headline, render_fractions, render_histogram, render_json, render_kmin_scan, tool_info,
    ConfigEcho, CountsReport, FitOutcome, KminEcho, ToolInfo, TwoLevelReport,
};

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Parser, ValueEnum};

use crate::estimators::{kmin_scan, mle, regression_estimate};
use crate::multilevel::{
    run_campaign_from, BoxSchedule, CampaignError, CampaignOptions, CampaignProgress, GridMode,
    GrowthRatio, MemoryPolicy,
};
use crate::reference::reference_summary;
use crate::rng::DirectionRule;
use crate::twolevel::{
    fraction_histogram, run_twolevel_campaign, two_level_estimate, FractionSummary,
    TwoLevelOptions,
};
use crate::walkers::{PacketSpec, WalkRules};

/// Environment variable overriding the default per-grid memory budget;
/// the `--memory-budget` flag overrides both.
pub const MEMORY_BUDGET_ENV: &str = "PACKETWALK_MEMORY_BUDGET";
const CHECKPOINT_FILE: &str = "checkpoint.json";
const DEFAULT_L0: u32 = 30;
const DEFAULT_GROWTH: &str = "1.1";
const DEFAULT_TRIALS: u32 = 1000;
const DEFAULT_BINS: usize = 50;
const DEFAULT_CHECKPOINT_INTERVAL: u64 = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Scheme {
    Multilevel,
    Twolevel,
    Replay,
}

impl Scheme {
    fn name(self) -> &'static str {
        match self {
            Scheme::Multilevel => "multilevel",
            Scheme::Twolevel => "twolevel",
            Scheme::Replay => "replay",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum MemoryModeArg {
    Auto,
    Dense,
    Sparse,
}

impl From<MemoryModeArg> for GridMode {
    fn from(mode: MemoryModeArg) -> GridMode {
        match mode {
            MemoryModeArg::Auto => GridMode::Auto,
            MemoryModeArg::Dense => GridMode::Dense,
            MemoryModeArg::Sparse => GridMode::Sparse,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum DirectionArg {
    /// Bits 63..62 of the generator word.
    Top,
    /// Bits 59..58, for robustness reruns.
    Mid,
}

impl From<DirectionArg> for DirectionRule {
    fn from(arg: DirectionArg) -> DirectionRule {
        match arg {
            DirectionArg::Top => DirectionRule::TopBits,
            DirectionArg::Mid => DirectionRule::MidBits,
        }
    }
}

/// Measures non-intersection exponents of packets of planar random walks.
#[derive(Debug, Parser)]
#[command(
    name = "packetwalk",
    version = concat!(env!("CARGO_PKG_VERSION"), " ", env!("PACKETWALK_GIT_DESCRIBE")),
    about
)]
struct Cli {
    /// Packet sizes, comma separated: "1,1,2" runs packets of 1, 1, and 2
    /// walkers.
    #[arg(long, value_parser = PacketSpec::from_str)]
    packets: PacketSpec,

    /// What to run: a nested-box campaign, a two-level campaign, or
    /// estimation-only replay of an existing counts table.
    #[arg(long, value_enum)]
    scheme: Scheme,

    /// Innermost box radius [default: 30].
    #[arg(long)]
    l0: Option<u32>,

    /// Outermost box radius (multilevel).
    #[arg(long)]
    lmax: Option<u32>,

    /// Level growth ratio, decimal or fraction [default: 1.1] (multilevel).
    #[arg(long)]
    growth: Option<String>,

    /// Samples to run (multilevel).
    #[arg(long)]
    samples: Option<u64>,

    /// Base seed, decimal or 0x-prefixed hex [default: 0].
    #[arg(long)]
    seed: Option<String>,

    /// Worker threads [default: all cores].
    #[arg(long)]
    workers: Option<usize>,

    /// Fit cutoff as a level index [default: 0].
    #[arg(long, conflicts_with = "kmin_l")]
    kmin: Option<usize>,

    /// Fit cutoff as a box radius, resolved to its level index.
    #[arg(long)]
    kmin_l: Option<u32>,

    /// Inner freeze radius (twolevel).
    #[arg(long)]
    l1: Option<u32>,

    /// Outer trial radius [default: 2*l1] (twolevel).
    #[arg(long)]
    l2: Option<u32>,

    /// Master samples to accept (twolevel).
    #[arg(long)]
    masters: Option<u64>,

    /// Continuation trials per master [default: 1000] (twolevel).
    #[arg(long)]
    trials: Option<u32>,

    /// Fraction histogram bins [default: 50] (twolevel).
    #[arg(long)]
    bins: Option<usize>,

    /// Survivor-count TSV to replay (replay).
    #[arg(long)]
    counts: Option<PathBuf>,

    /// Directory for reports and TSV outputs [default: .].
    #[arg(long)]
    out_dir: Option<PathBuf>,

    /// Samples between checkpoints [default: 1000000] (multilevel).
    #[arg(long)]
    checkpoint_interval: Option<u64>,

    /// Resume from the checkpoint in the output directory (multilevel).
    #[arg(long)]
    resume: bool,

    /// Grid storage; auto picks dense when it fits the budget
    /// [default: auto].
    #[arg(long, value_enum)]
    memory_mode: Option<MemoryModeArg>,

    /// Per-worker grid budget in bytes; overrides PACKETWALK_MEMORY_BUDGET.
    #[arg(long)]
    memory_budget: Option<u64>,

    /// Also record the cell each walker stands on when a level starts.
    #[arg(long)]
    record_entry_cells: bool,

    /// Generator bits that pick step directions [default: top].
    #[arg(long, value_enum)]
    direction_rule: Option<DirectionArg>,

    /// Suppress progress output on stderr.
    #[arg(long)]
    quiet: bool,
}

#[derive(Debug)]
pub enum CliError {
    /// Inconsistent or invalid flags; exit code 1.
    Usage(String),
    /// Unreadable or malformed input data; exit code 2.
    Data(String),
    /// Failure while running or writing results; exit code 3.
    Runtime(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(msg) | CliError::Data(msg) | CliError::Runtime(msg) => {
                f.write_str(msg)
            }
        }
    }
}

impl std::error::Error for CliError {}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<CampaignError> for CliError {
    fn from(error: CampaignError) -> CliError {
        match error {
            CampaignError::ResumeMismatch(_) => CliError::Data(error.to_string()),
            _ => CliError::Runtime(error.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(error: CheckpointError) -> CliError {
        CliError::Data(error.to_string())
    }
}

/// Parses the command line, runs the requested scheme, and maps failures
/// to exit codes: 0 success, 1 usage, 2 data, 3 runtime.
pub fn run() -> ExitCode {
    ExitCode::from(run_with(std::env::args_os()))
}

/// [`run`] with explicit arguments (the first is the program name),
/// returning the exit code as a plain byte so callers can inspect it.
pub fn run_with<I, A>(args: I) -> u8
where
    I: IntoIterator<Item = A>,
    A: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(error) => {
            let code: u8 = match error.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = error.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(error) => {
            eprintln!("error: {error}");
            error.exit_code()
        }
    }
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    match cli.scheme {
        Scheme::Multilevel => run_multilevel(cli),
        Scheme::Twolevel => run_twolevel(cli),
        Scheme::Replay => run_replay(cli),
    }
}

fn reject<T>(option: &Option<T>, flag: &str, scheme: Scheme) -> Result<(), CliError> {
    if option.is_some() {
        return Err(CliError::Usage(format!(
            "--{flag} is not used by the {} scheme",
            scheme.name()
        )));
    }
    Ok(())
}

fn reject_flag(given: bool, flag: &str, scheme: Scheme) -> Result<(), CliError> {
    if given {
        return Err(CliError::Usage(format!(
            "--{flag} is not used by the {} scheme",
            scheme.name()
        )));
    }
    Ok(())
}

fn require<T: Copy>(option: &Option<T>, flag: &str, scheme: Scheme) -> Result<T, CliError> {
    option.as_ref().copied().ok_or_else(|| {
        CliError::Usage(format!("the {} scheme needs --{flag}", scheme.name()))
    })
}

fn parse_seed(text: &str) -> Result<u64, CliError> {
    let trimmed = text.trim();
    let parsed = match trimmed
        .strip_prefix("0x")
        .or_else(|| trimmed.strip_prefix("0X"))
    {
        Some(hex) => u64::from_str_radix(hex, 16),
        None => trimmed.parse(),
    };
    parsed.map_err(|_| {
        CliError::Usage(format!(
            "--seed must be a decimal or 0x-prefixed hex 64-bit integer, got {text:?}"
        ))
    })
}

fn walk_rules(cli: &Cli) -> WalkRules {
    WalkRules {
        direction_rule: cli.direction_rule.unwrap_or(DirectionArg::Top).into(),
        record_start_cell: cli.record_entry_cells,
    }
}

fn memory_policy(cli: &Cli) -> Result<MemoryPolicy, CliError> {
    let mut policy = MemoryPolicy::default();
    if let Some(mode) = cli.memory_mode {
        policy.mode = mode.into();
    }
    if let Some(budget) = cli.memory_budget {
        policy.budget_bytes = budget;
    } else if let Ok(text) = std::env::var(MEMORY_BUDGET_ENV) {
        policy.budget_bytes = text.trim().parse().map_err(|_| {
            CliError::Usage(format!(
                "{MEMORY_BUDGET_ENV} must be a byte count, got {text:?}"
            ))
        })?;
    }
    Ok(policy)
}

fn worker_count(cli: &Cli) -> Result<Option<usize>, CliError> {
    match cli.workers {
        Some(0) => Err(CliError::Usage("--workers must be at least 1".to_string())),
        other => Ok(other),
    }
}

fn resolve_kmin(
    schedule: &BoxSchedule,
    kmin: Option<usize>,
    kmin_l: Option<u32>,
) -> Result<KminEcho, CliError> {
    let levels = schedule.levels();
    let index = match (kmin, kmin_l) {
        (Some(index), None) => index,
        (None, Some(radius)) => schedule.index_of_radius(radius).ok_or_else(|| {
            CliError::Usage(format!(
                "--kmin-l {radius} matches no level; the schedule runs {}..{}",
                levels[0],
                levels[levels.len() - 1]
            ))
        })?,
        (None, None) => 0,
        (Some(_), Some(_)) => unreachable!("clap rejects --kmin together with --kmin-l"),
    };
    if index + 1 >= levels.len() {
        return Err(CliError::Usage(format!(
            "fit cutoff index {index} is out of range; the last admissible index is {}",
            levels.len() - 2
        )));
    }
    Ok(KminEcho {
        index,
        radius: levels[index],
    })
}

fn prepare_out_dir(cli: &Cli) -> Result<PathBuf, CliError> {
    let dir = cli.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).map_err(|error| {
        CliError::Runtime(format!("could not create {}: {error}", dir.display()))
    })?;
    Ok(dir)
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|error| {
        CliError::Runtime(format!("could not write {}: {error}", path.display()))
    })
}

fn run_multilevel(cli: &Cli) -> Result<(), CliError> {
    let scheme = Scheme::Multilevel;
    reject(&cli.l1, "l1", scheme)?;
    reject(&cli.l2, "l2", scheme)?;
    reject(&cli.masters, "masters", scheme)?;
    reject(&cli.trials, "trials", scheme)?;
    reject(&cli.bins, "bins", scheme)?;
    reject(&cli.counts, "counts", scheme)?;

    let lmax = require(&cli.lmax, "lmax", scheme)?;
    let samples = require(&cli.samples, "samples", scheme)?;
    if samples == 0 {
        return Err(CliError::Usage("--samples must be at least 1".to_string()));
    }
    let l0 = cli.l0.unwrap_or(DEFAULT_L0);
    let growth_text = cli
        .growth
        .clone()
        .unwrap_or_else(|| DEFAULT_GROWTH.to_string());
    let growth = GrowthRatio::parse(&growth_text)
        .map_err(|error| CliError::Usage(format!("--growth {growth_text:?}: {error}")))?;
    let schedule = BoxSchedule::build(l0, growth, lmax)
        .map_err(|error| CliError::Usage(error.to_string()))?;
    let kmin = resolve_kmin(&schedule, cli.kmin, cli.kmin_l)?;
    let seed_text = cli.seed.clone().unwrap_or_else(|| "0".to_string());

    let mut options = CampaignOptions::new(samples, parse_seed(&seed_text)?);
    if let Some(workers) = worker_count(cli)? {
        options.workers = workers;
    }
    options.rules = walk_rules(cli);
    options.memory = memory_policy(cli)?;
    options.block_size = cli
        .checkpoint_interval
        .unwrap_or(DEFAULT_CHECKPOINT_INTERVAL)
        .max(1);

    let out_dir = prepare_out_dir(cli)?;
    let checkpoint_path = out_dir.join(CHECKPOINT_FILE);
    let identity = campaign_identity(&cli.packets, &schedule, &options);
    let start = if cli.resume {
        load_checkpoint(&checkpoint_path, &identity)?
    } else {
        CampaignProgress::fresh(&schedule)
    };

    let started = Instant::now();
    let quiet = cli.quiet;
    let total = options.sample_count;
    let table = run_campaign_from(&cli.packets, &schedule, &options, start, |progress| {
        save_checkpoint(&checkpoint_path, &identity, progress)?;
        if !quiet {
            eprintln!("{} / {} samples", progress.completed, total);
        }
        Ok(())
    })?;
    if !quiet {
        eprintln!(
            "campaign finished in {:.1} s",
            started.elapsed().as_secs_f64()
        );
    }

    let report = CountsReport {
        tool: tool_info(),
        scheme: scheme.name(),
        packets: cli.packets.to_string(),
        seed: Some(seed_text),
        config: ConfigEcho {
            l0: Some(l0),
            lmax: Some(lmax),
            growth: Some(growth.to_string()),
            samples: Some(samples),
            workers: Some(options.workers),
            rules: Some(options.rules),
            ..ConfigEcho::default()
        },
        levels: schedule.levels().to_vec(),
        counts: table.counts.clone(),
        kmin,
        mle: FitOutcome::from_mle(mle(&table, kmin.index)),
        regression: FitOutcome::from_mle(regression_estimate(&table, kmin.index)),
        reference: reference_summary(&cli.packets),
    };

    write_text(&out_dir.join("counts.tsv"), &emit_counts_tsv(&table))?;
    write_text(
        &out_dir.join("kmin_scan.tsv"),
        &render_kmin_scan(&kmin_scan(&table)),
    )?;
    write_text(&out_dir.join("report.json"), &render_json(&report))?;
    println!(
        "{}",
        headline(&report.packets, report.scheme, &report.mle, Some(kmin))
    );
    Ok(())
}

fn run_replay(cli: &Cli) -> Result<(), CliError> {
    let scheme = Scheme::Replay;
    reject(&cli.l0, "l0", scheme)?;
    reject(&cli.lmax, "lmax", scheme)?;
    reject(&cli.growth, "growth", scheme)?;
    reject(&cli.samples, "samples", scheme)?;
    reject(&cli.seed, "seed", scheme)?;
    reject(&cli.workers, "workers", scheme)?;
    reject(&cli.l1, "l1", scheme)?;
    reject(&cli.l2, "l2", scheme)?;
    reject(&cli.masters, "masters", scheme)?;
    reject(&cli.trials, "trials", scheme)?;
    reject(&cli.bins, "bins", scheme)?;
    reject(&cli.checkpoint_interval, "checkpoint-interval", scheme)?;
    reject(&cli.memory_mode, "memory-mode", scheme)?;
    reject(&cli.memory_budget, "memory-budget", scheme)?;
    reject(&cli.direction_rule, "direction-rule", scheme)?;
    reject_flag(cli.resume, "resume", scheme)?;
    reject_flag(cli.record_entry_cells, "record-entry-cells", scheme)?;

    let path = cli
        .counts
        .as_ref()
        .ok_or_else(|| CliError::Usage("the replay scheme needs --counts".to_string()))?;
    let table = read_counts_file(path).map_err(|error| CliError::Data(error.to_string()))?;
    let kmin = resolve_kmin(&table.schedule, cli.kmin, cli.kmin_l)?;
    let out_dir = prepare_out_dir(cli)?;

    let report = CountsReport {
        tool: tool_info(),
        scheme: scheme.name(),
        packets: cli.packets.to_string(),
        seed: None,
        config: ConfigEcho {
            counts_file: Some(path.display().to_string()),
            ..ConfigEcho::default()
        },
        levels: table.schedule.levels().to_vec(),
        counts: table.counts.clone(),
        kmin,
        mle: FitOutcome::from_mle(mle(&table, kmin.index)),
        regression: FitOutcome::from_mle(regression_estimate(&table, kmin.index)),
        reference: reference_summary(&cli.packets),
    };

    write_text(
        &out_dir.join("kmin_scan.tsv"),
        &render_kmin_scan(&kmin_scan(&table)),
    )?;
    write_text(&out_dir.join("report.json"), &render_json(&report))?;
    println!(
        "{}",
        headline(&report.packets, report.scheme, &report.mle, Some(kmin))
    );
    Ok(())
}

fn run_twolevel(cli: &Cli) -> Result<(), CliError> {
    let scheme = Scheme::Twolevel;
    reject(&cli.lmax, "lmax", scheme)?;
    reject(&cli.growth, "growth", scheme)?;
    reject(&cli.samples, "samples", scheme)?;
    reject(&cli.counts, "counts", scheme)?;
    reject(&cli.kmin, "kmin", scheme)?;
    reject(&cli.kmin_l, "kmin-l", scheme)?;
    reject(&cli.checkpoint_interval, "checkpoint-interval", scheme)?;
    reject_flag(cli.resume, "resume", scheme)?;

    let l1 = require(&cli.l1, "l1", scheme)?;
    let masters = require(&cli.masters, "masters", scheme)?;
    if masters < 2 {
        return Err(CliError::Usage(
            "--masters must be at least 2 to estimate the spread".to_string(),
        ));
    }
    let l0 = cli.l0.unwrap_or(DEFAULT_L0);
    let l2 = match cli.l2 {
        Some(l2) => l2,
        None => l1.checked_mul(2).ok_or_else(|| {
            CliError::Usage(format!("default --l2 of 2*{l1} overflows; pass --l2"))
        })?,
    };
    if !(2 <= l0 && l0 < l1 && l1 < l2) {
        return Err(CliError::Usage(format!(
            "need 2 <= l0 < l1 < l2, got l0={l0}, l1={l1}, l2={l2}"
        )));
    }
    if l2 > i32::MAX as u32 {
        return Err(CliError::Usage(format!(
            "--l2 {l2} does not fit a 32-bit signed coordinate"
        )));
    }
    let trials = cli.trials.unwrap_or(DEFAULT_TRIALS);
    if trials == 0 {
        return Err(CliError::Usage("--trials must be at least 1".to_string()));
    }
    let bins = cli.bins.unwrap_or(DEFAULT_BINS);
    if bins == 0 {
        return Err(CliError::Usage("--bins must be at least 1".to_string()));
    }
    let seed_text = cli.seed.clone().unwrap_or_else(|| "0".to_string());

    let options = TwoLevelOptions {
        l0,
        l1,
        l2,
        master_count: masters,
        trials_per_master: trials,
        base_seed: parse_seed(&seed_text)?,
        workers: worker_count(cli)?
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())),
        rules: walk_rules(cli),
        memory: memory_policy(cli)?,
    };
    let out_dir = prepare_out_dir(cli)?;

    let started = Instant::now();
    let outcome = run_twolevel_campaign(&cli.packets, &options)?;
    if !cli.quiet {
        eprintln!(
            "{} masters from {} attempts in {:.1} s",
            outcome.survivals.len(),
            outcome.attempts,
            started.elapsed().as_secs_f64()
        );
    }

    let (fraction, estimate) = match FractionSummary::from_survivals(&outcome.survivals, trials)
    {
        Ok(summary) => (
            Some(summary),
            FitOutcome::from_two_level(two_level_estimate(&summary, l2 as f64 / l1 as f64)),
        ),
        Err(error) => (
            None,
            FitOutcome::Failed {
                error: error.to_string(),
            },
        ),
    };

    let report = TwoLevelReport {
        tool: tool_info(),
        scheme: scheme.name(),
        packets: cli.packets.to_string(),
        seed: seed_text,
        config: ConfigEcho {
            l0: Some(l0),
            l1: Some(l1),
            l2: Some(l2),
            masters: Some(masters),
            trials: Some(trials),
            workers: Some(options.workers),
            rules: Some(options.rules),
            ..ConfigEcho::default()
        },
        attempts: outcome.attempts,
        dead_attempts: outcome.dead_attempts,
        fraction,
        estimate,
        reference: reference_summary(&cli.packets),
    };

    write_text(&out_dir.join("fractions.tsv"), &render_fractions(&outcome))?;
    write_text(
        &out_dir.join("histogram.tsv"),
        &render_histogram(&fraction_histogram(&outcome.survivals, trials, bins)),
    )?;
    write_text(&out_dir.join("report.json"), &render_json(&report))?;
    println!(
        "{}",
        headline(&report.packets, report.scheme, &report.estimate, None)
    );
    Ok(())
}
