//! Spatial phenomena sensed by the devices.

use std::fmt;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::runtime::Sensors;
use crate::seed::{stream_rng, STREAM_SIGNAL};
use crate::topology::{csv_rows, parse_f64, Deployment, DeviceId, Point};

pub const DEFAULT_AMPLITUDE: f64 = 10.0;
/// Default phase length of the dynamic signal, in simulated time units.
pub const DEFAULT_PHASE_LENGTH: f64 = 300.0;

#[derive(Debug, Clone, PartialEq)]
pub enum SignalSpec {
    Constant(f64),
    /// One independent uniform `[0, 1)` draw per device.
    Uniform,
    /// Bell centred on the arena; `spread` defaults to a quarter of the side.
    Gauss { amplitude: f64, spread: Option<f64> },
    /// Three bells of a third of the amplitude along the arena diagonal.
    MultiGauss { amplitude: f64, spread: Option<f64> },
    /// Cycles through `phases`, each lasting `phase_length`.
    Dynamic { phases: Vec<SignalSpec>, phase_length: f64 },
    /// Per-device recorded values.
    Recorded(Vec<f64>),
}

impl SignalSpec {
    pub fn gauss() -> Self {
        SignalSpec::Gauss {
            amplitude: DEFAULT_AMPLITUDE,
            spread: None,
        }
    }

    pub fn multigauss() -> Self {
        SignalSpec::MultiGauss {
            amplitude: DEFAULT_AMPLITUDE,
            spread: None,
        }
    }

    pub fn name(&self) -> String {
        match self {
            SignalSpec::Constant(_) => "constant".into(),
            SignalSpec::Uniform => "uniform".into(),
            SignalSpec::Gauss { .. } => "gauss".into(),
            SignalSpec::MultiGauss { .. } => "multigauss".into(),
            SignalSpec::Dynamic { phases, .. } => {
                let names: Vec<_> = phases.iter().map(SignalSpec::name).collect();
                format!("dynamic({})", names.join("+"))
            }
            SignalSpec::Recorded(_) => "recorded".into(),
        }
    }
}

impl fmt::Display for SignalSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Bell {
    centre: Point,
    spread: f64,
    amplitude: f64,
}

impl Bell {
    fn at(&self, p: Point) -> f64 {
        let dx = p.x - self.centre.x;
        let dy = p.y - self.centre.y;
        self.amplitude * (-(dx * dx + dy * dy) / (2.0 * self.spread * self.spread)).exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Layer {
    Constant(f64),
    PerDevice(Vec<f64>),
    Bells(Vec<Bell>),
}

/// A signal bound to a deployment.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalField {
    positions: Vec<Point>,
    layers: Vec<Layer>,
    /// Present for dynamic signals.
    phase_length: Option<f64>,
}

impl SignalField {
    fn layer(&self, time: f64) -> &Layer {
        match self.phase_length {
            Some(len) => {
                let phase = (time / len).floor().max(0.0) as usize % self.layers.len();
                &self.layers[phase]
            }
            None => &self.layers[0],
        }
    }

    /// Value of an analytic signal at an arbitrary position; `None` for
    /// per-device signals, which only exist where devices are.
    pub fn value_at(&self, p: Point, time: f64) -> Option<f64> {
        match self.layer(time) {
            Layer::Constant(c) => Some(*c),
            Layer::PerDevice(_) => None,
            Layer::Bells(bells) => Some(bells.iter().map(|b| b.at(p)).sum()),
        }
    }

    /// Reading of device `d` at `time`.
    pub fn read_sensor(&self, d: DeviceId, time: f64) -> f64 {
        match self.layer(time) {
            Layer::Constant(c) => *c,
            Layer::PerDevice(values) => values[d.index()],
            Layer::Bells(bells) => {
                let p = self.positions[d.index()];
                bells.iter().map(|b| b.at(p)).sum()
            }
        }
    }

    /// Readings of all devices at `time`.
    pub fn readings(&self, time: f64) -> Vec<f64> {
        (0..self.positions.len())
            .map(|i| self.read_sensor(DeviceId::from(i), time))
            .collect()
    }

    /// Index of the phase active at `time` (always 0 for static signals).
    pub fn phase(&self, time: f64) -> u64 {
        match self.phase_length {
            Some(len) => (time / len).floor().max(0.0) as u64,
            None => 0,
        }
    }

    pub fn phase_length(&self) -> Option<f64> {
        self.phase_length
    }

    pub fn phase_count(&self) -> usize {
        self.layers.len()
    }
}

impl Sensors for SignalField {
    fn read(&self, device: DeviceId, time: f64) -> f64 {
        self.read_sensor(device, time)
    }

    fn epoch(&self, time: f64) -> u64 {
        self.phase(time)
    }
}

pub fn make_signal(spec: &SignalSpec, deployment: &Deployment, seed: u64) -> Result<SignalField> {
    let (layers, phase_length) = match spec {
        SignalSpec::Dynamic {
            phases,
            phase_length,
        } => {
            if phases.is_empty() || !(phase_length.is_finite() && *phase_length > 0.0) {
                return Err(Error::InvalidArgument(
                    "dynamic signal needs phases and a positive phase length".into(),
                ));
            }
            let layers = phases
                .iter()
                .enumerate()
                .map(|(k, phase)| match phase {
                    SignalSpec::Dynamic { .. } => Err(Error::InvalidArgument(
                        "dynamic signals cannot be nested".into(),
                    )),
                    _ => make_layer(phase, deployment, seed, k as u64),
                })
                .collect::<Result<Vec<_>>>()?;
            (layers, Some(*phase_length))
        }
        other => (vec![make_layer(other, deployment, seed, 0)?], None),
    };
    Ok(SignalField {
        positions: deployment.positions().to_vec(),
        layers,
        phase_length,
    })
}

fn make_layer(spec: &SignalSpec, deployment: &Deployment, seed: u64, phase: u64) -> Result<Layer> {
    let arena = deployment.arena();
    let spread_or_default = |spread: Option<f64>| -> Result<f64> {
        let s = spread.unwrap_or(arena.side() / 4.0);
        if s.is_finite() && s > 0.0 {
            Ok(s)
        } else {
            Err(Error::InvalidArgument(format!("spread must be positive, got {s}")))
        }
    };
    let finite = |v: f64, what: &str| -> Result<f64> {
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::InvalidArgument(format!("{what} must be finite")))
        }
    };
    Ok(match spec {
        SignalSpec::Constant(c) => Layer::Constant(finite(*c, "constant value")?),
        SignalSpec::Uniform => {
            let mut rng = stream_rng(seed, STREAM_SIGNAL.wrapping_add(phase));
            Layer::PerDevice((0..deployment.len()).map(|_| rng.random::<f64>()).collect())
        }
        SignalSpec::Gauss { amplitude, spread } => Layer::Bells(vec![Bell {
            centre: arena.centre(),
            spread: spread_or_default(*spread)?,
            amplitude: finite(*amplitude, "amplitude")?,
        }]),
        SignalSpec::MultiGauss { amplitude, spread } => {
            let spread = spread_or_default(*spread)?;
            let amplitude = finite(*amplitude, "amplitude")? / 3.0;
            Layer::Bells(
                [arena.origin, arena.centre(), arena.top_right()]
                    .into_iter()
                    .map(|centre| Bell {
                        centre,
                        spread,
                        amplitude,
                    })
                    .collect(),
            )
        }
        SignalSpec::Recorded(values) => {
            if values.len() != deployment.len() {
                return Err(Error::InvalidArgument(format!(
                    "{} recorded values for {} devices",
                    values.len(),
                    deployment.len()
                )));
            }
            for v in values {
                finite(*v, "recorded value")?;
            }
            Layer::PerDevice(values.clone())
        }
        SignalSpec::Dynamic { .. } => unreachable!("handled by make_signal"),
    })
}

/// Reads an `id,value` file keyed by the deployment's device labels.
pub fn load_signal_values(path: impl AsRef<Path>, deployment: &Deployment) -> Result<SignalSpec> {
    let text = std::fs::read_to_string(path)?;
    parse_signal_values(&text, deployment)
}

pub fn parse_signal_values(text: &str, deployment: &Deployment) -> Result<SignalSpec> {
    let mut values = vec![None; deployment.len()];
    for (line, id, fields) in csv_rows(text, 2)? {
        let label: u64 = id.parse().map_err(|_| Error::Parse {
            line,
            message: format!("invalid device id `{id}`"),
        })?;
        let d = deployment.device_for_label(label).ok_or_else(|| Error::Parse {
            line,
            message: format!("unknown device {label}"),
        })?;
        if values[d.index()].replace(parse_f64(&fields[0], line)?).is_some() {
            return Err(Error::DuplicateDevice(label));
        }
    }
    let values = values
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            v.ok_or_else(|| Error::Parse {
                line: 0,
                message: format!("no value for device {}", deployment.label(DeviceId::from(i))),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SignalSpec::Recorded(values))
}
