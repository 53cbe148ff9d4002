//! Leader-based region growing.
//!
//! Every device announces a candidacy keyed by its leader strength. Neighbours
//! relay the candidacy they currently follow, adding the local sampling error
//! of the link they received it over. A relayed candidacy is dropped once its
//! accumulated error reaches `radius`, or when it comes back to its own leader.
//! Each device follows the minimum of its own candidacy and the surviving
//! relayed ones. Strength decides first; ties go to the nearer leader.

mod gradient;
mod metric;
mod strength;

use std::cmp::Ordering;
use std::fmt;

pub use gradient::{gradient_program, GradientMessage, GradientProgram};
pub use metric::{edge_error, EdgeMetric, DEFAULT_EPSILON};
pub use strength::{leader_strength, neighbourhood_mean, SignalShare, StrengthPolicy};

use crate::error::{Error, Result};
use crate::runtime::{Context, FieldProgram, ShareValue, StepError};
use crate::seed::{derive_seed, STREAM_SYMMETRY};
use crate::topology::DeviceId;

/// Ordering key of a candidacy: the negated strength, then a secondary rank.
#[derive(Debug, Clone, Copy)]
pub struct StrengthKey {
    pub negated_strength: f64,
    pub rank: u64,
}

impl StrengthKey {
    pub fn new(strength: f64, rank: u64) -> Self {
        StrengthKey {
            // `0.0 - s` keeps +0.0 for a zero strength
            negated_strength: 0.0 - strength,
            rank,
        }
    }

    pub const MAX: StrengthKey = StrengthKey {
        negated_strength: f64::INFINITY,
        rank: u64::MAX,
    };
}

impl PartialEq for StrengthKey {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for StrengthKey {}

impl PartialOrd for StrengthKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for StrengthKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.negated_strength
            .total_cmp(&other.negated_strength)
            .then(self.rank.cmp(&other.rank))
    }
}

/// A leadership claim as seen by one device.
#[derive(Debug, Clone, Copy)]
pub struct Candidacy {
    pub key: StrengthKey,
    /// Sampling error accumulated along the relay path from the leader.
    pub error_distance: f64,
    pub leader: DeviceId,
}

impl Candidacy {
    pub fn local(key: StrengthKey, device: DeviceId) -> Self {
        Candidacy {
            key,
            error_distance: 0.0,
            leader: device,
        }
    }

    pub fn is_discard(&self) -> bool {
        *self == discard_candidacy()
    }
}

impl PartialEq for Candidacy {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidacy {}

impl PartialOrd for Candidacy {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidacy {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key
            .cmp(&other.key)
            .then(self.error_distance.total_cmp(&other.error_distance))
            .then(self.leader.cmp(&other.leader))
    }
}

impl ShareValue for Candidacy {
    fn top() -> Self {
        discard_candidacy()
    }
}

impl fmt::Display for Candidacy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}, {})",
            self.key.negated_strength, self.error_distance, self.leader
        )
    }
}

/// The greatest candidacy: never preferred over a real one.
pub const fn discard_candidacy() -> Candidacy {
    Candidacy {
        key: StrengthKey::MAX,
        error_distance: f64::INFINITY,
        leader: DeviceId::SENTINEL,
    }
}

/// Drops candidacies led by `device` itself or relayed as far as `radius`.
pub fn expansion_logic(c: Candidacy, device: DeviceId, radius: f64) -> Candidacy {
    if c.leader == device || c.error_distance >= radius {
        discard_candidacy()
    } else {
        c
    }
}

/// Secondary ordering applied between candidacies of equal strength.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TieBreak {
    /// Equal strengths are decided by error distance, then device id.
    #[default]
    Distance,
    /// Each device draws a random rank from the seed; equal strengths are
    /// decided by rank before distance.
    RandomRank { seed: u64 },
}

impl TieBreak {
    pub fn rank(&self, device: DeviceId) -> u64 {
        match *self {
            TieBreak::Distance => 0,
            // u64::MAX is reserved for the discard key
            TieBreak::RandomRank { seed } => {
                derive_seed(seed ^ u64::from(device.0), STREAM_SYMMETRY) >> 1
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TieBreak::Distance => "distance",
            TieBreak::RandomRank { .. } => "rank",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    /// Half of the error bound η.
    pub radius: f64,
    pub strength: StrengthPolicy,
    pub metric: EdgeMetric,
    pub tie_break: TieBreak,
}

impl SamplerConfig {
    /// Configuration for error bound `eta`: candidacies travel up to `eta / 2`.
    pub fn new(eta: f64, strength: StrengthPolicy, metric: EdgeMetric) -> Result<Self> {
        if !(eta.is_finite() && eta > 0.0) {
            return Err(Error::config("eta", format!("must be positive, got {eta}")));
        }
        metric.validate()?;
        Ok(SamplerConfig {
            radius: eta / 2.0,
            strength,
            metric,
            tie_break: TieBreak::Distance,
        })
    }

    pub fn with_tie_break(mut self, tie_break: TieBreak) -> Self {
        self.tie_break = tie_break;
        self
    }

    pub fn eta(&self) -> f64 {
        self.radius * 2.0
    }
}

/// Payload exchanged by the sampler.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerMessage {
    /// The candidacy the sender currently follows.
    pub candidacy: Candidacy,
    /// Sender's reading, shared when the metric or strength needs it.
    pub reading: Option<f64>,
    /// Sender's neighbourhood mean, shared for the variance strength.
    pub mean: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SamplerProgram {
    cfg: SamplerConfig,
    share_readings: bool,
    share_means: bool,
}

pub fn sampler_program(cfg: SamplerConfig) -> SamplerProgram {
    SamplerProgram {
        share_readings: cfg.metric.needs_signal() || cfg.strength.needs_readings(),
        share_means: cfg.strength.needs_means(),
        cfg,
    }
}

impl SamplerProgram {
    pub fn config(&self) -> &SamplerConfig {
        &self.cfg
    }

    /// Winning candidacy for a round, given this round's local candidacy.
    fn compete(&self, ctx: &Context<'_, SamplerMessage>, local: Candidacy, reading: f64) -> Result<Candidacy, StepError> {
        let d = ctx.device();
        let mut best = discard_candidacy();
        for (sender, msg) in ctx.inbox().neighbours() {
            let theirs = match (self.cfg.metric.needs_signal(), msg.reading) {
                (false, _) => 0.0,
                (true, Some(r)) => r,
                (true, None) => return Err(StepError(format!("{sender} did not share its reading"))),
            };
            let w = self.cfg.metric.weight(ctx.edge_length(sender), theirs, reading);
            if !w.is_finite() {
                return Err(StepError(format!("non-finite edge error towards {sender}")));
            }
            let mut relayed = msg.candidacy;
            relayed.error_distance += w;
            let filtered = expansion_logic(relayed, d, self.cfg.radius);
            if filtered < best {
                best = filtered;
            }
        }
        Ok(local.min(best))
    }
}

impl FieldProgram for SamplerProgram {
    type Payload = SamplerMessage;
    type Output = DeviceId;

    fn step(&self, ctx: &Context<'_, SamplerMessage>) -> Result<(DeviceId, SamplerMessage), StepError> {
        let d = ctx.device();
        let reading = ctx.sensor();
        if !reading.is_finite() {
            return Err(StepError(format!("non-finite reading {reading}")));
        }

        let mut shares = vec![(d, SignalShare { reading, mean: None })];
        if self.share_readings {
            for (sender, msg) in ctx.inbox().neighbours() {
                let reading = msg
                    .reading
                    .ok_or_else(|| StepError(format!("{sender} did not share its reading")))?;
                shares.push((sender, SignalShare { reading, mean: msg.mean }));
            }
        }
        let mean = self.share_means.then(|| neighbourhood_mean(&shares));
        shares[0].1.mean = mean;
        let strength = leader_strength(&self.cfg.strength, d, &shares).map_err(|e| StepError(e.to_string()))?;
        if !strength.is_finite() {
            return Err(StepError(format!("non-finite leader strength {strength}")));
        }

        let local = Candidacy::local(StrengthKey::new(strength, self.cfg.tie_break.rank(d)), d);
        let winner = self.compete(ctx, local, reading)?;
        let msg = SamplerMessage {
            candidacy: winner,
            reading: self.share_readings.then_some(reading),
            mean,
        };
        Ok((winner.leader, msg))
    }

    fn payload_records(&self, p: &SamplerMessage) -> usize {
        1 + usize::from(p.reading.is_some()) + usize::from(p.mean.is_some())
    }
}
