//! Configured runs of the sampler, their verification and their exports.

mod config;
mod sweep;

use std::fmt;
use std::sync::Arc;

pub use config::{
    parse_config, parse_config_str, DeploymentChoice, Eta, ExperimentConfig, OutputOptions, RunConfig,
    RunSettings, SignalChoice, StrengthChoice, TieBreakMode,
};
pub use sweep::{aggregate, run_seed, sweep, write_outputs, AggregateRow, SweepOutcome, AGGREGATE_HEADER};

use crate::analysis::{
    check_contiguity, extract_partition, message_cost, partition_metrics, verify_follower_bound,
    verify_local_optimality, verify_within_error, MessageCost, MetricsRow, PathErrorOracle, RegionPartition,
    RunLabel,
};
use crate::error::{Error, Result};
use crate::runtime::{FieldProgram, Scheduler, Stabilisation, StabilityOptions, Trace, World};
use crate::sampler::{
    sampler_program, Candidacy, EdgeMetric, SamplerConfig, SamplerMessage, SamplerProgram, StrengthPolicy,
    TieBreak,
};
use crate::signals::{load_signal_values, make_signal, SignalField, SignalSpec};
use crate::topology::{build_deployment, build_network, load_stations, DeviceId, NetworkGraph};

/// Error bound of the distance metric when none is configured, in spacing units.
pub const DEFAULT_DISTANCE_ETA: f64 = 16.0;

/// Default diff bound as a multiple of the readings' standard deviation.
pub const DIFF_ETA_FACTOR: f64 = 0.125;
/// Default mix bound as a multiple of the default diff bound.
pub const MIX_ETA_FACTOR: f64 = 0.25;

/// Default error bound for `metric` given the readings the devices will see.
///
/// The diff bound is an eighth of the population standard deviation of the
/// readings, or 1 for a flat signal; the mix bound is a quarter of the diff
/// bound.
pub fn default_eta(metric: EdgeMetric, readings: &[f64]) -> f64 {
    let n = readings.len() as f64;
    let mean = readings.iter().sum::<f64>() / n;
    let sigma = (readings.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
    let diff = if sigma > 0.0 { DIFF_ETA_FACTOR * sigma } else { 1.0 };
    match metric {
        EdgeMetric::Distance => DEFAULT_DISTANCE_ETA,
        EdgeMetric::Diff { .. } => diff,
        EdgeMetric::Mix { .. } => MIX_ETA_FACTOR * diff,
    }
}

/// A field program whose output is a leader id and whose payload may expose
/// the winning candidacy.
pub trait SamplingProgram: FieldProgram<Output = DeviceId> {
    fn candidacy(payload: &Self::Payload) -> Option<Candidacy>;
}

impl SamplingProgram for SamplerProgram {
    fn candidacy(payload: &SamplerMessage) -> Option<Candidacy> {
        Some(payload.candidacy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Check {
    /// The run finished without a program failure.
    Completed,
    Stabilised,
    /// No output changed in the rounds following stabilisation.
    PostStable,
    /// Every leader leads itself.
    Partition,
    Contiguity,
    FollowerBound,
    WithinError,
    LocalOptimality,
}

impl Check {
    pub fn name(self) -> &'static str {
        match self {
            Check::Completed => "completed",
            Check::Stabilised => "stabilised",
            Check::PostStable => "post_stable",
            Check::Partition => "partition",
            Check::Contiguity => "contiguity",
            Check::FollowerBound => "follower_bound",
            Check::WithinError => "within_error",
            Check::LocalOptimality => "local_optimality",
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub phase: usize,
    pub check: Check,
    pub passed: bool,
    pub detail: String,
}

/// What happened during one signal phase (the whole run for static signals).
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseOutcome {
    pub index: usize,
    pub start: f64,
    /// Time of the last output change before quiescence.
    pub stabilised_at: Option<f64>,
    /// Metrics of the stable partition.
    pub stable_metrics: Option<MetricsRow>,
    /// Stable leader of every device.
    pub leaders: Option<Vec<DeviceId>>,
    /// Output changes seen after stabilisation.
    pub post_changes: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub cell: String,
    pub label: RunLabel,
    /// Metrics at every sampling instant.
    pub rows: Vec<MetricsRow>,
    pub phases: Vec<PhaseOutcome>,
    pub verdicts: Vec<Verdict>,
    pub cost: Option<MessageCost>,
    pub events: u64,
    pub trace: Option<Trace<DeviceId>>,
}

impl RunOutcome {
    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Verdict> {
        self.verdicts.iter().filter(|v| !v.passed)
    }

    fn aborted(cfg: &RunConfig, seed: u64, error: &Error) -> Self {
        RunOutcome {
            cell: cfg.cell_name(),
            label: label(cfg, seed, f64::NAN),
            rows: Vec::new(),
            phases: Vec::new(),
            verdicts: vec![Verdict {
                phase: 0,
                check: Check::Completed,
                passed: false,
                detail: error.to_string(),
            }],
            cost: None,
            events: 0,
            trace: None,
        }
    }
}

fn label(cfg: &RunConfig, seed: u64, eta: f64) -> RunLabel {
    RunLabel {
        seed,
        deployment: cfg.deployment.name().to_string(),
        signal: cfg.signal.name(),
        strength: cfg.strength.name().to_string(),
        metric: cfg.metric.name().to_string(),
        eta,
    }
}

/// Everything a run needs besides its program and scheduler.
#[derive(Debug, Clone)]
pub struct RunSetup {
    pub graph: Arc<NetworkGraph>,
    pub signal: Arc<SignalField>,
    pub sampler: SamplerConfig,
}

pub fn prepare(cfg: &RunConfig, seed: u64) -> Result<RunSetup> {
    let deployment = match &cfg.deployment {
        DeploymentChoice::Generated(kind) => build_deployment(*kind, cfg.settings.n, seed)?,
        DeploymentChoice::Stations(path) => load_stations(path)?,
    };
    let spec = match &cfg.signal {
        SignalChoice::Spec(spec) => spec.clone(),
        SignalChoice::File(path) => load_signal_values(path, &deployment)?,
    };
    let signal = make_signal(&spec, &deployment, seed)?;
    let strength = match &cfg.strength {
        StrengthChoice::Policy(p) => p.clone(),
        StrengthChoice::External(path) => match load_signal_values(path, &deployment)? {
            SignalSpec::Recorded(values) => {
                StrengthPolicy::external(values.into_iter().enumerate().map(|(i, v)| (DeviceId::from(i), v)))
            }
            _ => unreachable!("value files load as recorded signals"),
        },
    };
    let eta = match cfg.settings.eta {
        Eta::Fixed(eta) => eta,
        Eta::Default => {
            let mut readings = Vec::new();
            for start in phase_starts(&signal) {
                readings.extend(signal.readings(start));
            }
            default_eta(cfg.metric, &readings)
        }
    };
    let tie_break = match cfg.settings.tie_break {
        TieBreakMode::Distance => TieBreak::Distance,
        TieBreakMode::Rank => TieBreak::RandomRank { seed },
    };
    let sampler = SamplerConfig::new(eta, strength, cfg.metric)?.with_tie_break(tie_break);
    let graph = build_network(deployment, cfg.settings.k_min)?;
    Ok(RunSetup {
        graph: Arc::new(graph),
        signal: Arc::new(signal),
        sampler,
    })
}

fn phase_starts(signal: &SignalField) -> Vec<f64> {
    match signal.phase_length() {
        Some(len) => (0..signal.phase_count()).map(|k| k as f64 * len).collect(),
        None => vec![0.0],
    }
}

/// Builds the network and signal for `seed`, runs the sampler to
/// stabilisation (once per phase of a dynamic signal), and verifies every
/// stable partition.
pub fn run_experiment(cfg: &RunConfig, seed: u64) -> Result<RunOutcome> {
    run_experiment_with(cfg, seed, false, |s| sampler_program(s.clone()))
}

/// As [`run_experiment`], with a custom program and optional tracing.
pub fn run_experiment_with<P: SamplingProgram>(
    cfg: &RunConfig,
    seed: u64,
    trace: bool,
    make_program: impl FnOnce(&SamplerConfig) -> P,
) -> Result<RunOutcome> {
    let setup = prepare(cfg, seed)?;
    let program = make_program(&setup.sampler);
    let n = setup.graph.len();
    let scheduler = Scheduler::new(cfg.settings.scheduler, n, seed);
    let mut world = World::new(setup.graph.clone(), program, scheduler).with_sensors(setup.signal.clone());
    if trace {
        world = world.with_trace();
    }

    let eta = setup.sampler.eta();
    let settings = &cfg.settings;
    let mut samples = Sampling::new(settings.sample_interval, setup.signal.clone());
    let mut phases = Vec::new();
    let mut verdicts = Vec::new();
    let phase_length = setup.signal.phase_length();
    let starts = phase_starts(&setup.signal);

    for (index, &start) in starts.iter().enumerate() {
        let deadline = phase_length.map(|len| start + len);
        let opts = StabilityOptions {
            quiescence_window: settings.quiescence_window,
            max_sweeps: settings.max_sweeps,
            deadline,
        };
        let status = world.run_until_stable_observed(opts, |w, t| samples.catch_up(w, t))?;
        let mut phase = PhaseOutcome {
            index,
            start,
            stabilised_at: None,
            stable_metrics: None,
            leaders: None,
            post_changes: None,
        };
        let mut verdict = |check, passed, detail: String| {
            verdicts.push(Verdict {
                phase: index,
                check,
                passed,
                detail,
            })
        };
        match status {
            Stabilisation::Stabilised { at } => {
                phase.stabilised_at = Some(at);
                verdict(Check::Stabilised, true, format!("at {at}"));
                let snapshot = world.take_snapshot()?;
                let readings = setup.signal.readings(world.clock().max(start));
                match extract_partition(&snapshot, &setup.graph) {
                    Err(e) => verdict(Check::Partition, false, e.to_string()),
                    Ok(p) => {
                        verdict(Check::Partition, true, format!("{} regions", p.region_count()));
                        phase.stable_metrics = Some(partition_metrics(&p, &readings, snapshot.taken_at));
                        phase.leaders = Some(snapshot.values.clone());
                        let candidacies = (0..n)
                            .map(|i| world.payload(DeviceId::from(i)).and_then(P::candidacy))
                            .collect::<Option<Vec<_>>>();
                        let results = verify_partition(
                            &p,
                            &setup.graph,
                            setup.sampler.metric,
                            &readings,
                            eta,
                            settings.efficiency,
                            candidacies.as_deref(),
                        )?;
                        for (check, passed, detail) in results {
                            verdict(check, passed, detail);
                        }
                    }
                }
                let changes = match deadline {
                    Some(end) => world.run_rounds(u64::MAX, Some(end), |w, t| samples.catch_up(w, t))?,
                    None => world.run_rounds(settings.verify_rounds, None, |w, t| samples.catch_up(w, t))?,
                };
                phase.post_changes = Some(changes);
                verdict(Check::PostStable, changes == 0, format!("{changes} output changes"));
            }
            Stabilisation::NotStabilised => {
                verdict(
                    Check::Stabilised,
                    false,
                    format!("not quiescent after {} rounds per device", settings.max_sweeps),
                );
                match deadline {
                    Some(end) => {
                        world.run_rounds(u64::MAX, Some(end), |w, t| samples.catch_up(w, t))?;
                    }
                    None => {
                        phases.push(phase);
                        break;
                    }
                }
            }
        }
        phases.push(phase);
    }
    samples.finish(&world);

    Ok(RunOutcome {
        cell: cfg.cell_name(),
        label: label(cfg, seed, eta),
        rows: samples.rows,
        phases,
        verdicts,
        cost: Some(message_cost(&world)),
        events: world.events(),
        trace: world.trace(),
    })
}

/// Runs every verifier on a stable partition, returning `(check, passed, detail)`.
pub fn verify_partition(
    p: &RegionPartition,
    graph: &NetworkGraph,
    metric: EdgeMetric,
    readings: &[f64],
    eta: f64,
    efficiency: f64,
    candidacies: Option<&[Candidacy]>,
) -> Result<Vec<(Check, bool, String)>> {
    let mut out = Vec::new();
    let broken = check_contiguity(p, graph);
    out.push((
        Check::Contiguity,
        broken.is_empty(),
        if broken.is_empty() {
            String::new()
        } else {
            format!("disconnected regions led by {}", join(&broken))
        },
    ));
    let oracle = PathErrorOracle::new(graph, metric, readings)?;
    if let Some(c) = candidacies {
        let bad = verify_follower_bound(c, &oracle, eta / 2.0);
        let detail = match bad.first() {
            None => String::new(),
            Some(v) => format!(
                "{} devices, first {} holds {} with shortest path {}",
                bad.len(),
                v.device,
                v.candidacy,
                v.oracle_error
            ),
        };
        out.push((Check::FollowerBound, bad.is_empty(), detail));
    }
    let report = verify_within_error(p, &oracle, eta);
    let detail = match report.worst {
        Some((leader, e)) => format!("worst region {leader} error {e} bound {eta}"),
        None => String::new(),
    };
    out.push((Check::WithinError, report.holds(), detail));
    let bad = verify_local_optimality(p, graph, &oracle, eta, efficiency);
    // every violating pair is listed for inspection
    let detail = if bad.is_empty() {
        String::new()
    } else {
        let pairs: Vec<String> = bad
            .iter()
            .map(|v| {
                format!(
                    "({}, {}) union error {} leader error {}",
                    v.leaders.0, v.leaders.1, v.union_error, v.leader_error
                )
            })
            .collect();
        format!("{} pairs below bound {}: {}", bad.len(), efficiency * eta, pairs.join("; "))
    };
    out.push((Check::LocalOptimality, bad.is_empty(), detail));
    Ok(out)
}

fn join(ids: &[DeviceId]) -> String {
    ids.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(" ")
}

/// Records metrics at fixed instants as a run advances.
struct Sampling {
    interval: f64,
    next: u64,
    signal: Arc<SignalField>,
    rows: Vec<MetricsRow>,
}

impl Sampling {
    fn new(interval: f64, signal: Arc<SignalField>) -> Self {
        Sampling {
            interval,
            next: 0,
            signal,
            rows: Vec::new(),
        }
    }

    /// Records every instant before `until`; the world holds all events up to them.
    fn catch_up<P: FieldProgram<Output = DeviceId>>(&mut self, world: &World<P>, until: f64) {
        while (self.next as f64 * self.interval) < until {
            self.record(world);
        }
    }

    /// Records the remaining instants up to the world's clock.
    fn finish<P: FieldProgram<Output = DeviceId>>(&mut self, world: &World<P>) {
        while (self.next as f64 * self.interval) <= world.clock() {
            self.record(world);
        }
    }

    fn record<P: FieldProgram<Output = DeviceId>>(&mut self, world: &World<P>) {
        let t = self.next as f64 * self.interval;
        let p = RegionPartition::group_outputs(world.outputs());
        self.rows.push(partition_metrics(&p, &self.signal.readings(t), t));
        self.next += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_etas() {
        let flat = [2.0; 4];
        assert_eq!(default_eta(EdgeMetric::Distance, &flat), 16.0);
        assert_eq!(default_eta(EdgeMetric::diff(), &flat), 1.0);
        let spread = [0.0, 2.0];
        assert_eq!(default_eta(EdgeMetric::diff(), &spread), 0.125);
        assert_eq!(default_eta(EdgeMetric::mix(), &spread), 0.03125);
    }
}
