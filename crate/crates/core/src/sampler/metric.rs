use std::fmt;

use crate::error::{Error, Result};
use crate::topology::{DeviceId, NetworkGraph};

/// Default lower bound of the signal-difference metric.
pub const DEFAULT_EPSILON: f64 = 1e-3;

/// Local sampling error between two neighbouring devices.
///
/// Every kind is symmetric and positive between distinct devices. Path
/// errors are sums of these.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EdgeMetric {
    /// Euclidean length of the link.
    Distance,
    /// `max(ε, |s_a − s_b|)`.
    Diff { epsilon: f64 },
    /// Link length times the `Diff` error.
    Mix { epsilon: f64 },
}

impl EdgeMetric {
    pub const fn diff() -> Self {
        EdgeMetric::Diff {
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub const fn mix() -> Self {
        EdgeMetric::Mix {
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EdgeMetric::Distance => "distance",
            EdgeMetric::Diff { .. } => "diff",
            EdgeMetric::Mix { .. } => "mix",
        }
    }

    /// Whether neighbours must share their readings to evaluate the metric.
    pub fn needs_signal(&self) -> bool {
        !matches!(self, EdgeMetric::Distance)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            EdgeMetric::Distance => Ok(()),
            EdgeMetric::Diff { epsilon } | EdgeMetric::Mix { epsilon } => {
                if epsilon.is_finite() && epsilon > 0.0 {
                    Ok(())
                } else {
                    Err(Error::config("epsilon", format!("must be positive, got {epsilon}")))
                }
            }
        }
    }

    /// Error across a link of the given length between distinct devices.
    pub fn weight(&self, length: f64, s_a: f64, s_b: f64) -> f64 {
        match *self {
            EdgeMetric::Distance => length,
            EdgeMetric::Diff { epsilon } => (s_a - s_b).abs().max(epsilon),
            EdgeMetric::Mix { epsilon } => length * (s_a - s_b).abs().max(epsilon),
        }
    }
}

impl fmt::Display for EdgeMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Error between `a` and `b`, which must be neighbours or equal.
pub fn edge_error(
    metric: EdgeMetric,
    a: DeviceId,
    b: DeviceId,
    graph: &NetworkGraph,
    signals: &[f64],
) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let length = graph
        .edge_length(a, b)
        .ok_or_else(|| Error::InvalidArgument(format!("devices {a} and {b} are not neighbours")))?;
    let (s_a, s_b) = (signals[a.index()], signals[b.index()]);
    if metric.needs_signal() && !(s_a.is_finite() && s_b.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "non-finite signal on link ({a}, {b})"
        )));
    }
    Ok(metric.weight(length, s_a, s_b))
}
