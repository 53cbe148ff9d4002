use std::path::{Path, PathBuf};

use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::runtime::{SchedulerKind, HALF_HOUR};
use crate::sampler::{EdgeMetric, StrengthPolicy, DEFAULT_EPSILON};
use crate::signals::{SignalSpec, DEFAULT_AMPLITUDE, DEFAULT_PHASE_LENGTH};
use crate::topology::DeploymentKind;

/// Error bound, either given or derived from the metric and the signal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Eta {
    Fixed(f64),
    Default,
}

/// Tie-break selection; the seed of a random rank is the run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TieBreakMode {
    Distance,
    Rank,
}

/// Strength policy as configured; external tables are bound per deployment.
#[derive(Debug, Clone, PartialEq)]
pub enum StrengthChoice {
    Policy(StrengthPolicy),
    External(PathBuf),
}

impl StrengthChoice {
    pub fn name(&self) -> &'static str {
        match self {
            StrengthChoice::Policy(p) => p.name(),
            StrengthChoice::External(_) => "external",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SignalChoice {
    Spec(SignalSpec),
    File(PathBuf),
}

impl SignalChoice {
    pub fn name(&self) -> String {
        match self {
            SignalChoice::Spec(s) => s.name(),
            SignalChoice::File(_) => "recorded".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DeploymentChoice {
    Generated(DeploymentKind),
    Stations(PathBuf),
}

impl DeploymentChoice {
    pub fn name(&self) -> &'static str {
        match self {
            DeploymentChoice::Generated(k) => k.name(),
            DeploymentChoice::Stations(_) => "stations",
        }
    }
}

/// Everything about a run except the seed and the sweep axes.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub n: usize,
    pub k_min: usize,
    pub eta: Eta,
    pub tie_break: TieBreakMode,
    pub scheduler: SchedulerKind,
    pub max_sweeps: u64,
    pub quiescence_window: u64,
    pub sample_interval: f64,
    /// Rounds per device run after stabilisation to confirm it.
    pub verify_rounds: u64,
    /// Efficiency factor of the local optimality check.
    pub efficiency: f64,
}

/// One point of the sweep grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub deployment: DeploymentChoice,
    pub signal: SignalChoice,
    pub strength: StrengthChoice,
    pub metric: EdgeMetric,
    pub settings: RunSettings,
}

impl RunConfig {
    /// File-name friendly identifier of the cell.
    pub fn cell_name(&self) -> String {
        let clean = |part: &str| -> String {
            let s: String = part
                .chars()
                .map(|c| if c.is_ascii_alphanumeric() { c } else { '-' })
                .collect();
            s.trim_matches('-').to_string()
        };
        [
            clean(self.deployment.name()),
            clean(&self.signal.name()),
            clean(self.strength.name()),
            clean(self.metric.name()),
        ]
        .join("_")
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OutputOptions {
    pub dir: Option<PathBuf>,
    pub trace: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub deployments: Vec<DeploymentChoice>,
    pub signals: Vec<SignalChoice>,
    pub strengths: Vec<StrengthChoice>,
    pub metrics: Vec<EdgeMetric>,
    pub settings: RunSettings,
    pub seeds: Vec<u64>,
    pub output: OutputOptions,
}

impl ExperimentConfig {
    /// The Cartesian product of the sweep axes, in a fixed order.
    pub fn cells(&self) -> Vec<RunConfig> {
        let mut cells = Vec::new();
        for deployment in &self.deployments {
            for signal in &self.signals {
                for strength in &self.strengths {
                    for metric in &self.metrics {
                        cells.push(RunConfig {
                            deployment: deployment.clone(),
                            signal: signal.clone(),
                            strength: strength.clone(),
                            metric: *metric,
                            settings: self.settings.clone(),
                        });
                    }
                }
            }
        }
        cells
    }
}

const KEYS: &[&str] = &[
    "deployment",
    "n",
    "k_min",
    "stations",
    "signal",
    "signal_value",
    "phases",
    "phase_length",
    "amplitude",
    "spread",
    "signal_file",
    "strength",
    "strength_file",
    "metric",
    "epsilon",
    "eta",
    "tie_break",
    "scheduler",
    "rate",
    "period",
    "seeds",
    "max_sweeps",
    "quiescence_window",
    "sample_interval",
    "verify_rounds",
    "efficiency",
    "output",
];

const OUTPUT_KEYS: &[&str] = &["dir", "trace"];

pub fn parse_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config_str(&text, base)
}

/// Parses a config; relative paths are resolved against `base`.
pub fn parse_config_str(text: &str, base: &Path) -> Result<ExperimentConfig> {
    let table: Table = text.parse().map_err(|e: toml::de::Error| Error::Parse {
        line: e.span().map_or(0, |s| text[..s.start].lines().count().max(1)),
        message: e.message().to_string(),
    })?;
    for key in table.keys() {
        if !KEYS.contains(&key.as_str()) {
            return Err(Error::config(key, "unknown key"));
        }
    }
    let r = Reader { table: &table, base };

    let n = r.opt_uint("n")?;
    let stations = r.opt_path("stations")?;
    let deployments = match (&stations, table.contains_key("deployment")) {
        (Some(_), true) => return Err(Error::config("stations", "cannot be combined with `deployment`")),
        (Some(p), false) => vec![DeploymentChoice::Stations(p.clone())],
        (None, _) => r
            .names("deployment")?
            .into_iter()
            .map(|name| {
                name.parse::<DeploymentKind>()
                    .map(DeploymentChoice::Generated)
                    .map_err(|_| Error::config("deployment", format!("unknown deployment `{name}`")))
            })
            .collect::<Result<_>>()?,
    };
    let n = match (n, &stations) {
        (Some(0), _) => return Err(Error::config("n", "must be positive")),
        (Some(n), _) => n as usize,
        (None, Some(_)) => 0,
        (None, None) => return Err(Error::config("n", "missing")),
    };

    let amplitude = r.opt_f64("amplitude")?.unwrap_or(DEFAULT_AMPLITUDE);
    let spread = r.opt_f64("spread")?;
    if spread.is_some_and(|s| s <= 0.0) {
        return Err(Error::config("spread", "must be positive"));
    }
    let constant = r.opt_f64("signal_value")?.unwrap_or(1.0);
    let phase_length = r.opt_f64("phase_length")?.unwrap_or(DEFAULT_PHASE_LENGTH);
    if phase_length <= 0.0 {
        return Err(Error::config("phase_length", "must be positive"));
    }
    let simple = |name: &str, key: &str| -> Result<SignalSpec> {
        Ok(match name {
            "constant" => SignalSpec::Constant(constant),
            "uniform" => SignalSpec::Uniform,
            "gauss" => SignalSpec::Gauss { amplitude, spread },
            "multigauss" => SignalSpec::MultiGauss { amplitude, spread },
            other => return Err(Error::config(key, format!("unknown signal `{other}`"))),
        })
    };
    let signal_file = r.opt_path("signal_file")?;
    let signals = match (&signal_file, table.contains_key("signal")) {
        (Some(_), true) => return Err(Error::config("signal_file", "cannot be combined with `signal`")),
        (Some(p), false) => vec![SignalChoice::File(p.clone())],
        (None, _) => r
            .names("signal")?
            .into_iter()
            .map(|name| {
                if name == "dynamic" {
                    let phases = match table.get("phases") {
                        Some(_) => r.names("phases")?,
                        None => vec!["constant".into(), "uniform".into(), "gauss".into()],
                    };
                    let phases = phases
                        .iter()
                        .map(|p| simple(p, "phases"))
                        .collect::<Result<Vec<_>>>()?;
                    Ok(SignalChoice::Spec(SignalSpec::Dynamic { phases, phase_length }))
                } else {
                    simple(&name, "signal").map(SignalChoice::Spec)
                }
            })
            .collect::<Result<_>>()?,
    };
    if stations.is_none() && signals.iter().any(|s| matches!(s, SignalChoice::File(_))) {
        return Err(Error::config("signal_file", "requires `stations`"));
    }

    let strength_file = r.opt_path("strength_file")?;
    let strengths = r
        .names_or("strength", "value")?
        .into_iter()
        .map(|name| match name.as_str() {
            "value" => Ok(StrengthChoice::Policy(StrengthPolicy::Value)),
            "mean" => Ok(StrengthChoice::Policy(StrengthPolicy::Mean)),
            "variance" => Ok(StrengthChoice::Policy(StrengthPolicy::Variance)),
            "external" => strength_file
                .clone()
                .map(StrengthChoice::External)
                .ok_or_else(|| Error::config("strength_file", "required by the external strength")),
            other => Err(Error::config("strength", format!("unknown strength `{other}`"))),
        })
        .collect::<Result<_>>()?;

    let epsilon = r.opt_f64("epsilon")?.unwrap_or(DEFAULT_EPSILON);
    if epsilon <= 0.0 {
        return Err(Error::config("epsilon", "must be positive"));
    }
    let metrics = r
        .names("metric")?
        .into_iter()
        .map(|name| match name.as_str() {
            "distance" => Ok(EdgeMetric::Distance),
            "diff" => Ok(EdgeMetric::Diff { epsilon }),
            "mix" => Ok(EdgeMetric::Mix { epsilon }),
            other => Err(Error::config("metric", format!("unknown metric `{other}`"))),
        })
        .collect::<Result<_>>()?;

    let eta = match table.get("eta") {
        None => return Err(Error::config("eta", "missing")),
        Some(Value::String(s)) if s == "default" => Eta::Default,
        Some(_) => {
            let v = r.opt_f64("eta")?.unwrap_or(0.0);
            if v <= 0.0 {
                return Err(Error::config("eta", format!("must be positive, got {v}")));
            }
            Eta::Fixed(v)
        }
    };

    let tie_break = match r.opt_str("tie_break")?.as_deref() {
        None | Some("rank") => TieBreakMode::Rank,
        Some("distance") => TieBreakMode::Distance,
        Some(other) => return Err(Error::config("tie_break", format!("unknown tie-break `{other}`"))),
    };

    let rate = r.opt_f64("rate")?;
    let period = r.opt_f64("period")?;
    let scheduler = match r.opt_str("scheduler")?.as_deref() {
        None | Some("async") => SchedulerKind::AsyncExponential { rate: rate.unwrap_or(1.0) },
        Some("sync") => SchedulerKind::Synchronous,
        Some("fixed") => SchedulerKind::FixedFrequency { period: period.unwrap_or(1.0) },
        Some("realistic") => SchedulerKind::AsyncExponential { rate: rate.unwrap_or(1.0 / HALF_HOUR) },
        Some(other) => return Err(Error::config("scheduler", format!("unknown scheduler `{other}`"))),
    };
    match scheduler {
        SchedulerKind::AsyncExponential { rate } if rate <= 0.0 => {
            return Err(Error::config("rate", "must be positive"))
        }
        SchedulerKind::FixedFrequency { period } if period <= 0.0 => {
            return Err(Error::config("period", "must be positive"))
        }
        _ => {}
    }

    let seeds = match table.get("seeds") {
        None => return Err(Error::config("seeds", "missing")),
        Some(Value::Integer(_)) => vec![r.opt_uint("seeds")?.unwrap_or_default()],
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| match v {
                Value::Integer(i) if *i >= 0 => Ok(*i as u64),
                _ => Err(Error::config("seeds", "expected non-negative integers")),
            })
            .collect::<Result<Vec<_>>>()?,
        Some(_) => return Err(Error::config("seeds", "expected an integer or a list of integers")),
    };
    if seeds.is_empty() {
        return Err(Error::config("seeds", "at least one seed is required"));
    }

    let positive = |key: &str, default: u64| -> Result<u64> {
        match r.opt_uint(key)? {
            Some(0) => Err(Error::config(key, "must be positive")),
            Some(v) => Ok(v),
            None => Ok(default),
        }
    };
    let sample_interval = r.opt_f64("sample_interval")?.unwrap_or(10.0);
    if sample_interval <= 0.0 {
        return Err(Error::config("sample_interval", "must be positive"));
    }
    let efficiency = r.opt_f64("efficiency")?.unwrap_or(0.5);
    if !(0.0..=1.0).contains(&efficiency) {
        return Err(Error::config("efficiency", "must lie in [0, 1]"));
    }
    let settings = RunSettings {
        n,
        k_min: positive("k_min", 8)? as usize,
        eta,
        tie_break,
        scheduler,
        max_sweeps: positive("max_sweeps", 1000)?,
        quiescence_window: positive("quiescence_window", 5)?,
        sample_interval,
        verify_rounds: r.opt_uint("verify_rounds")?.unwrap_or(100),
        efficiency,
    };

    let output = match table.get("output") {
        None => OutputOptions::default(),
        Some(Value::Table(t)) => {
            for key in t.keys() {
                if !OUTPUT_KEYS.contains(&key.as_str()) {
                    return Err(Error::config(format!("output.{key}"), "unknown key"));
                }
            }
            let o = Reader { table: t, base };
            OutputOptions {
                dir: o.opt_path("dir")?,
                trace: match t.get("trace") {
                    None => false,
                    Some(Value::Boolean(b)) => *b,
                    Some(_) => return Err(Error::config("output.trace", "expected a boolean")),
                },
            }
        }
        Some(_) => return Err(Error::config("output", "expected a section")),
    };

    Ok(ExperimentConfig {
        deployments,
        signals,
        strengths,
        metrics,
        settings,
        seeds,
        output,
    })
}

struct Reader<'a> {
    table: &'a Table,
    base: &'a Path,
}

impl Reader<'_> {
    fn opt_f64(&self, key: &str) -> Result<Option<f64>> {
        let v = match self.table.get(key) {
            None => return Ok(None),
            Some(Value::Float(f)) => *f,
            Some(Value::Integer(i)) => *i as f64,
            Some(_) => return Err(Error::config(key, "expected a number")),
        };
        if v.is_finite() {
            Ok(Some(v))
        } else {
            Err(Error::config(key, "must be finite"))
        }
    }

    fn opt_uint(&self, key: &str) -> Result<Option<u64>> {
        match self.table.get(key) {
            None => Ok(None),
            Some(Value::Integer(i)) if *i >= 0 => Ok(Some(*i as u64)),
            Some(_) => Err(Error::config(key, "expected a non-negative integer")),
        }
    }

    fn opt_str(&self, key: &str) -> Result<Option<String>> {
        match self.table.get(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(_) => Err(Error::config(key, "expected a string")),
        }
    }

    fn opt_path(&self, key: &str) -> Result<Option<PathBuf>> {
        Ok(self.opt_str(key)?.map(|s| self.base.join(s)))
    }

    /// A string or a non-empty list of strings.
    fn names(&self, key: &str) -> Result<Vec<String>> {
        match self.table.get(key) {
            None => Err(Error::config(key, "missing")),
            Some(Value::String(s)) => Ok(vec![s.clone()]),
            Some(Value::Array(items)) if !items.is_empty() => items
                .iter()
                .map(|v| match v {
                    Value::String(s) => Ok(s.clone()),
                    _ => Err(Error::config(key, "expected strings")),
                })
                .collect(),
            Some(_) => Err(Error::config(key, "expected a string or a non-empty list of strings")),
        }
    }

    fn names_or(&self, key: &str, default: &str) -> Result<Vec<String>> {
        if self.table.contains_key(key) {
            self.names(key)
        } else {
            Ok(vec![default.to_string()])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
deployment = "grid"
n = 100
signal = "constant"
metric = "distance"
eta = 16
seeds = [1]
"#;

    fn parse(text: &str) -> Result<ExperimentConfig> {
        parse_config_str(text, Path::new("/cfg"))
    }

    fn key_of(e: Error) -> String {
        match e {
            Error::Config { key, .. } => key,
            other => panic!("expected a config error, got {other}"),
        }
    }

    #[test]
    fn minimal_config_is_valid() {
        let cfg = parse(MINIMAL).unwrap();
        assert_eq!(cfg.deployments, vec![DeploymentChoice::Generated(DeploymentKind::Grid)]);
        assert_eq!(cfg.settings.n, 100);
        assert_eq!(cfg.settings.eta, Eta::Fixed(16.0));
        assert_eq!(cfg.seeds, vec![1]);
        assert_eq!(cfg.settings.k_min, 8);
        assert_eq!(cfg.settings.max_sweeps, 1000);
        assert_eq!(cfg.settings.sample_interval, 10.0);
        assert_eq!(cfg.cells().len(), 1);
    }

    #[test]
    fn zero_eta_is_rejected() {
        let e = parse(&MINIMAL.replace("eta = 16", "eta = 0")).unwrap_err();
        assert_eq!(key_of(e), "eta");
    }

    #[test]
    fn misspelt_metric_names_the_key() {
        let e = parse(&MINIMAL.replace("\"distance\"", "\"dif\"")).unwrap_err();
        assert_eq!(key_of(e), "metric");
    }

    #[test]
    fn unknown_key_is_rejected() {
        let e = parse(&format!("{MINIMAL}colour = 3\n")).unwrap_err();
        assert_eq!(key_of(e), "colour");
    }

    #[test]
    fn empty_seed_list_is_rejected() {
        let e = parse(&MINIMAL.replace("seeds = [1]", "seeds = []")).unwrap_err();
        assert_eq!(key_of(e), "seeds");
    }

    #[test]
    fn lists_expand_to_cells() {
        let text = MINIMAL
            .replace("\"grid\"", "[\"grid\", \"uniform\"]")
            .replace("\"constant\"", "[\"constant\", \"gauss\"]")
            .replace("[1]", "[1, 2, 3]");
        let cfg = parse(&text).unwrap();
        assert_eq!(cfg.cells().len(), 4);
        assert_eq!(cfg.cells()[3].cell_name(), "uniform_gauss_value_distance");
    }

    #[test]
    fn dynamic_signal_and_output_section() {
        let text = MINIMAL.replace("\"constant\"", "\"dynamic\"")
            + "phase_length = 50\neta = \"default\"\n[output]\ndir = \"out\"\ntrace = true\n";
        let text = text.replacen("eta = 16\n", "", 1);
        let cfg = parse(&text).unwrap();
        assert_eq!(cfg.settings.eta, Eta::Default);
        assert_eq!(cfg.output.dir.as_deref(), Some(Path::new("/cfg/out")));
        assert!(cfg.output.trace);
        match &cfg.signals[0] {
            SignalChoice::Spec(SignalSpec::Dynamic { phases, phase_length }) => {
                assert_eq!(phases.len(), 3);
                assert_eq!(*phase_length, 50.0);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(cfg.cells()[0].cell_name(), "grid_dynamic-constant-uniform-gauss_value_distance");
    }

    #[test]
    fn external_strength_needs_a_table() {
        let e = parse(&format!("{MINIMAL}strength = \"external\"\n")).unwrap_err();
        assert_eq!(key_of(e), "strength_file");
    }
}
