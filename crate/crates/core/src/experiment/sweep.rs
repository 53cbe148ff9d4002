use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use super::{run_experiment_with, ExperimentConfig, RunConfig, RunOutcome};
use crate::analysis::{write_metrics_csv, MetricsRow};
use crate::error::{Error, Result};
use crate::sampler::sampler_program;

/// All runs of a sweep, ordered by cell and then by seed.
#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub runs: Vec<RunOutcome>,
}

impl SweepOutcome {
    pub fn passed(&self) -> bool {
        self.runs.iter().all(RunOutcome::passed)
    }

    pub fn failed_runs(&self) -> impl Iterator<Item = &RunOutcome> {
        self.runs.iter().filter(|r| !r.passed())
    }
}

fn execute(jobs: Vec<(RunConfig, u64)>, trace: bool, parallel: Option<usize>) -> Result<SweepOutcome> {
    let run = |(cfg, seed): &(RunConfig, u64)| {
        log::debug!("running {} seed {seed}", cfg.cell_name());
        run_experiment_with(cfg, *seed, trace, |s| sampler_program(s.clone()))
            .unwrap_or_else(|e| RunOutcome::aborted(cfg, *seed, &e))
    };
    let runs = match parallel {
        Some(1) => jobs.iter().map(run).collect(),
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?
            .install(|| jobs.par_iter().map(run).collect()),
        None => jobs.par_iter().map(run).collect(),
    };
    Ok(SweepOutcome { runs })
}

/// Runs every cell for every seed; `parallel` caps the worker threads.
pub fn sweep(cfg: &ExperimentConfig, parallel: Option<usize>) -> Result<SweepOutcome> {
    let jobs = cfg
        .cells()
        .into_iter()
        .flat_map(|cell| cfg.seeds.iter().map(move |&s| (cell.clone(), s)))
        .collect();
    execute(jobs, cfg.output.trace, parallel)
}

/// Runs every cell for a single seed.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64, parallel: Option<usize>) -> Result<SweepOutcome> {
    let jobs = cfg.cells().into_iter().map(|cell| (cell, seed)).collect();
    execute(jobs, cfg.output.trace, parallel)
}

/// Mean of a cell's metrics across seeds at one sampling instant.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub cell: String,
    pub deployment: String,
    pub signal: String,
    pub strength: String,
    pub metric: String,
    pub eta: f64,
    pub time: f64,
    pub runs: usize,
    pub regions: f64,
    pub mean_size: f64,
    pub sigma_mu: f64,
    pub mu_sigma: f64,
    pub sigma_sigma: f64,
}

pub const AGGREGATE_HEADER: &str =
    "deployment,signal,strength,metric,eta,time,runs,regions,mean_size,sigma_mu,mu_sigma,sigma_sigma";

/// Per-cell mean series. Runs are aligned by sampling instant; a run that
/// ended earlier contributes its last row to later instants.
pub fn aggregate(runs: &[RunOutcome]) -> Vec<AggregateRow> {
    let mut cells: Vec<&str> = Vec::new();
    for r in runs {
        if !cells.contains(&r.cell.as_str()) {
            cells.push(&r.cell);
        }
    }
    let mut out = Vec::new();
    for cell in cells {
        let members: Vec<&RunOutcome> = runs.iter().filter(|r| r.cell == cell && !r.rows.is_empty()).collect();
        let Some(first) = members.first() else { continue };
        let times: BTreeSet<u64> = members
            .iter()
            .flat_map(|r| r.rows.iter().map(|row| row.time.to_bits()))
            .collect();
        let mut times: Vec<f64> = times.into_iter().map(f64::from_bits).collect();
        times.sort_by(f64::total_cmp);
        let eta = members.iter().map(|r| r.label.eta).sum::<f64>() / members.len() as f64;
        let mut cursors = vec![0usize; members.len()];
        for t in times {
            let mut acc = [0.0; 5];
            for (r, cursor) in members.iter().zip(cursors.iter_mut()) {
                while *cursor + 1 < r.rows.len() && r.rows[*cursor + 1].time <= t {
                    *cursor += 1;
                }
                let row: &MetricsRow = &r.rows[*cursor];
                acc[0] += row.region_count as f64;
                acc[1] += row.mean_region_size;
                acc[2] += row.sigma_of_means;
                acc[3] += row.mean_of_sigmas;
                acc[4] += row.sigma_of_sigmas;
            }
            let k = members.len() as f64;
            out.push(AggregateRow {
                cell: cell.to_string(),
                deployment: first.label.deployment.clone(),
                signal: first.label.signal.clone(),
                strength: first.label.strength.clone(),
                metric: first.label.metric.clone(),
                eta,
                time: t,
                runs: members.len(),
                regions: acc[0] / k,
                mean_size: acc[1] / k,
                sigma_mu: acc[2] / k,
                mu_sigma: acc[3] / k,
                sigma_sigma: acc[4] / k,
            });
        }
    }
    out
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Writes `runs/<cell>_seed<k>.csv`, `aggregate.csv`, `verdicts.csv` and,
/// for traced runs, `traces/<cell>_seed<k>.csv` under `dir`.
pub fn write_outputs(dir: &Path, outcome: &SweepOutcome) -> Result<()> {
    let runs_dir = dir.join("runs");
    fs::create_dir_all(&runs_dir)?;
    for r in &outcome.runs {
        let name = format!("{}_seed{}.csv", r.cell, r.label.seed);
        let mut w = create(&runs_dir.join(&name))?;
        write_metrics_csv(&mut w, &r.label, &r.rows)?;
        w.flush()?;
        if let Some(trace) = &r.trace {
            let traces = dir.join("traces");
            fs::create_dir_all(&traces)?;
            let mut w = create(&traces.join(&name))?;
            trace.write_csv(&mut w)?;
            w.flush()?;
        }
    }

    let mut w = create(&dir.join("aggregate.csv"))?;
    writeln!(w, "{AGGREGATE_HEADER}")?;
    for a in aggregate(&outcome.runs) {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            a.deployment,
            a.signal,
            a.strength,
            a.metric,
            a.eta,
            a.time,
            a.runs,
            a.regions,
            a.mean_size,
            a.sigma_mu,
            a.mu_sigma,
            a.sigma_sigma
        )?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("verdicts.csv"))?;
    w.write_record(["cell", "seed", "phase", "check", "passed", "detail"])?;
    for r in &outcome.runs {
        for v in &r.verdicts {
            w.write_record([
                r.cell.as_str(),
                &r.label.seed.to_string(),
                &v.phase.to_string(),
                v.check.name(),
                if v.passed { "true" } else { "false" },
                &v.detail,
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
