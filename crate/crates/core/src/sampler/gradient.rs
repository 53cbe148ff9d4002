use super::EdgeMetric;
use crate::runtime::{Context, FieldProgram, StepError};
use crate::topology::DeviceId;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientMessage {
    pub estimate: f64,
    /// Sender's reading, shared when the metric depends on the signal.
    pub reading: Option<f64>,
}

/// Distance from the nearest source under an edge metric.
///
/// Sources output 0; other devices take the minimum over neighbours of
/// `estimate + edge error`, or `+∞` when no neighbour has spoken yet.
#[derive(Debug, Clone)]
pub struct GradientProgram {
    sources: Vec<bool>,
    metric: EdgeMetric,
}

pub fn gradient_program(sources: Vec<bool>, metric: EdgeMetric) -> GradientProgram {
    GradientProgram { sources, metric }
}

impl GradientProgram {
    pub fn is_source(&self, d: DeviceId) -> bool {
        self.sources.get(d.index()).copied().unwrap_or(false)
    }
}

impl FieldProgram for GradientProgram {
    type Payload = GradientMessage;
    type Output = f64;

    fn step(&self, ctx: &Context<'_, GradientMessage>) -> Result<(f64, GradientMessage), StepError> {
        let reading = ctx.sensor();
        if self.metric.needs_signal() && !reading.is_finite() {
            return Err(StepError(format!("non-finite reading {reading}")));
        }
        let estimate = if self.is_source(ctx.device()) {
            0.0
        } else {
            let mut best = f64::INFINITY;
            for (sender, msg) in ctx.inbox().neighbours() {
                let theirs = msg.reading.unwrap_or(0.0);
                let w = self.metric.weight(ctx.edge_length(sender), theirs, reading);
                best = best.min(msg.estimate + w);
            }
            best
        };
        let msg = GradientMessage {
            estimate,
            reading: self.metric.needs_signal().then_some(reading),
        };
        Ok((estimate, msg))
    }

    fn payload_records(&self, p: &GradientMessage) -> usize {
        1 + usize::from(p.reading.is_some())
    }
}
