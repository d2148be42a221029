//! Command-line front end: `sweep` and `verify`.

pub mod sweep;
pub mod verify;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::ao::{AoOptions, Mode};
use crate::error::{Error, Result};
use crate::scenario::ScenarioConfig;
use sweep::{run_sweep, summarize, to_csv, SweepParam, SweepSpec};

pub const JOBS_ENV: &str = "IRS_CRB_JOBS";

#[derive(Debug, Parser)]
#[command(name = "irs-crb", version, about = "Max-CRB beamforming design for active-IRS sensing")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sweep one scenario parameter and write a CSV of per-trial results.
    Sweep(SweepArgs),
    /// Run the oracle battery and print a pass/fail table.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Scenario JSON; the built-in default scenario when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Parameter to sweep: p_t, p_s, m or a_max.
    #[arg(long)]
    pub sweep: SweepParam,
    /// Comma-separated values of the swept parameter.
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<f64>,
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    /// Comma-separated modes: joint, tx_only, rbf_only, passive.
    #[arg(long, value_delimiter = ',', default_value = "joint,tx_only,rbf_only,passive")]
    pub modes: Vec<Mode>,
    /// CSV path; the summary goes next to it as `<stem>.summary.json`.
    #[arg(long)]
    pub out: PathBuf,
    /// Base seed; trial t uses seed + t. Defaults to the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (overridden by IRS_CRB_JOBS).
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long, default_value_t = 30)]
    pub max_outer: usize,
    /// Also write every AO trace to this JSON file.
    #[arg(long)]
    pub traces: Option<PathBuf>,
    /// Write measured wall time instead of 0; the CSV is then no longer
    /// reproducible byte for byte.
    #[arg(long)]
    pub record_time: bool,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

fn load_config(path: Option<&Path>) -> Result<ScenarioConfig> {
    let cfg = match path {
        Some(p) => ScenarioConfig::load(p)?,
        None => ScenarioConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Thread count: the environment variable wins over the flag, which wins over
/// the number of available cores.
pub fn resolve_jobs(flag: Option<usize>, env: Option<&str>) -> Result<usize> {
    if let Some(v) = env.filter(|s| !s.trim().is_empty()) {
        return v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| Error::InvalidConfig(format!("{JOBS_ENV} must be a positive integer, got `{v}`")));
    }
    Ok(flag.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())).max(1))
}

pub fn summary_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "sweep".into());
    out.with_file_name(format!("{stem}.summary.json"))
}

pub fn sweep_cmd(args: &SweepArgs) -> Result<i32> {
    let cfg = load_config(args.config.as_deref())?;
    let spec = SweepSpec {
        param: args.sweep,
        values: args.values.clone(),
        trials: args.trials,
        modes: args.modes.clone(),
        seed: args.seed.unwrap_or(cfg.seed),
        record_time: args.record_time,
    };
    let jobs = resolve_jobs(args.jobs, std::env::var(JOBS_ENV).ok().as_deref())?;
    let ao = AoOptions { max_outer: args.max_outer, ..AoOptions::default() };
    let out = run_sweep(&cfg, &spec, &ao, jobs)?;
    std::fs::write(&args.out, to_csv(&out.rows, cfg.l))?;
    if let Some(summary) = summarize(&out.rows) {
        std::fs::write(summary_path(&args.out), serde_json::to_string_pretty(&summary)?)?;
        let mut stdout = std::io::stdout().lock();
        for p in &summary.points {
            let _ = writeln!(
                stdout,
                "{}={:<10} {:<9} mean {:.4e}  median {:.4e}  se {:.2e}  failed {}/{}",
                spec.param.name(),
                p.sweep_value,
                p.mode.name(),
                p.mean,
                p.median,
                p.std_err,
                p.failed,
                p.trials
            );
        }
    }
    if let Some(path) = &args.traces {
        std::fs::write(path, serde_json::to_string(&out.traces)?)?;
    }
    Ok(0)
}

pub fn verify_cmd(args: &VerifyArgs) -> Result<i32> {
    let cfg = load_config(args.config.as_deref())?;
    let checks = verify::run_all(&cfg, args.seed)?;
    let mut stdout = std::io::stdout().lock();
    for ch in &checks {
        let _ = writeln!(stdout, "{ch}");
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    let _ = writeln!(stdout, "{} checks, {} failed", checks.len(), failed);
    Ok(if failed == 0 { 0 } else { 1 })
}

pub fn run(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Sweep(a) => sweep_cmd(a),
        Command::Verify(a) => verify_cmd(a),
    }
}
