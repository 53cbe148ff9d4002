use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use regionsampler::experiment::{parse_config, run_seed, sweep, write_outputs, ExperimentConfig, SweepOutcome};

#[derive(Parser)]
#[command(version, about = "Simulate and verify self-organising region sampling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every cell once, for `--seed` or the first configured seed.
    Run(Opts),
    /// Run every cell for every seed and write per-run and aggregate CSVs.
    Sweep(Opts),
    /// Run like `sweep` and report verdicts without writing files.
    Verify(Opts),
}

#[derive(Args)]
struct Opts {
    config: PathBuf,
    /// Restrict the runs to this seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `[output] dir`.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Record per-event traces.
    #[arg(long)]
    trace: bool,
    /// Worker threads (default: all cores).
    #[arg(long, value_name = "K")]
    parallel: Option<usize>,
}

const DEFAULT_OUT_DIR: &str = "results";

fn load(opts: &Opts) -> Result<ExperimentConfig> {
    let mut cfg = parse_config(&opts.config).with_context(|| format!("reading {}", opts.config.display()))?;
    if opts.trace {
        cfg.output.trace = true;
    }
    if opts.parallel == Some(0) {
        bail!("--parallel must be at least 1");
    }
    Ok(cfg)
}

fn out_dir(opts: &Opts, cfg: &ExperimentConfig) -> PathBuf {
    opts.out_dir
        .clone()
        .or_else(|| cfg.output.dir.clone())
        .unwrap_or_else(|| Path::new(DEFAULT_OUT_DIR).to_path_buf())
}

fn report(outcome: &SweepOutcome) -> bool {
    for run in &outcome.runs {
        let status = if run.passed() { "ok" } else { "FAILED" };
        let regions: Vec<String> = run
            .phases
            .iter()
            .map(|p| match &p.stable_metrics {
                Some(m) => m.region_count.to_string(),
                None => "-".into(),
            })
            .collect();
        println!("{} seed {}: {status} (regions {})", run.cell, run.label.seed, regions.join("/"));
        for v in run.failures() {
            println!("  phase {} {}: {}", v.phase, v.check.name(), v.detail);
        }
    }
    let failed = outcome.failed_runs().count();
    println!("{} runs, {failed} failed", outcome.runs.len());
    failed == 0
}

fn execute(command: Command) -> Result<bool> {
    let (opts, write) = match &command {
        Command::Run(o) | Command::Sweep(o) => (o, true),
        Command::Verify(o) => (o, false),
    };
    let cfg = load(opts)?;
    let outcome = match (&command, opts.seed) {
        (Command::Run(_), None) => run_seed(&cfg, cfg.seeds[0], opts.parallel)?,
        (_, Some(seed)) => run_seed(&cfg, seed, opts.parallel)?,
        (_, None) => sweep(&cfg, opts.parallel)?,
    };
    if write {
        let dir = out_dir(opts, &cfg);
        write_outputs(&dir, &outcome).with_context(|| format!("writing {}", dir.display()))?;
        log::info!("wrote results to {}", dir.display());
    }
    Ok(report(&outcome))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse().command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
