//! Round scheduling policies.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::seed::{stream_rng, STREAM_SCHEDULER};
use crate::topology::DeviceId;

/// Simulated seconds between rounds in the low-power deployment mode.
pub const HALF_HOUR: f64 = 1800.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SchedulerKind {
    /// Every device fires once per sweep, at integer times, reading only the
    /// messages produced in earlier sweeps.
    Synchronous,
    /// Each device fires on an independent Poisson clock.
    AsyncExponential { rate: f64 },
    /// Each device fires every `period` after a random initial phase.
    FixedFrequency { period: f64 },
}

impl SchedulerKind {
    pub fn name(&self) -> &'static str {
        match self {
            SchedulerKind::Synchronous => "sync",
            SchedulerKind::AsyncExponential { .. } => "async",
            SchedulerKind::FixedFrequency { .. } => "fixed",
        }
    }

    /// Mean time between two rounds of the same device.
    pub fn mean_interval(&self) -> f64 {
        match *self {
            SchedulerKind::Synchronous => 1.0,
            SchedulerKind::AsyncExponential { rate } => 1.0 / rate,
            SchedulerKind::FixedFrequency { period } => period,
        }
    }
}

impl Default for SchedulerKind {
    fn default() -> Self {
        SchedulerKind::AsyncExponential { rate: 1.0 }
    }
}

impl fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchedulerKind::Synchronous => f.write_str("sync"),
            SchedulerKind::AsyncExponential { rate } => write!(f, "async({rate})"),
            SchedulerKind::FixedFrequency { period } => write!(f, "fixed({period})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Due {
    time: f64,
    device: DeviceId,
}

impl Eq for Due {}

impl PartialOrd for Due {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Due {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.device.cmp(&other.device))
    }
}

/// A scheduled round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Firing {
    pub device: DeviceId,
    pub time: f64,
    /// Last firing of a synchronous sweep.
    pub closes_sweep: bool,
}

#[derive(Debug, Clone)]
pub struct Scheduler {
    kind: SchedulerKind,
    devices: usize,
    rng: ChaCha8Rng,
    queue: BinaryHeap<Reverse<Due>>,
    sweep: u64,
    cursor: usize,
}

impl Scheduler {
    pub fn new(kind: SchedulerKind, devices: usize, seed: u64) -> Self {
        let mut rng = stream_rng(seed, STREAM_SCHEDULER);
        let mut queue = BinaryHeap::with_capacity(devices);
        match kind {
            SchedulerKind::Synchronous => {}
            SchedulerKind::AsyncExponential { rate } => {
                let exp = Exp::new(rate).expect("positive rate");
                for d in 0..devices {
                    let time = exp.sample(&mut rng);
                    queue.push(Reverse(Due {
                        time,
                        device: DeviceId::from(d),
                    }));
                }
            }
            SchedulerKind::FixedFrequency { period } => {
                for d in 0..devices {
                    let time = rng.random_range(0.0..period);
                    queue.push(Reverse(Due {
                        time,
                        device: DeviceId::from(d),
                    }));
                }
            }
        }
        Scheduler {
            kind,
            devices,
            rng,
            queue,
            sweep: 0,
            cursor: 0,
        }
    }

    pub fn kind(&self) -> SchedulerKind {
        self.kind
    }

    /// Time of the next firing, without consuming it.
    pub fn peek_time(&self) -> f64 {
        match self.kind {
            SchedulerKind::Synchronous => self.sweep as f64,
            _ => self.queue.peek().map_or(f64::INFINITY, |Reverse(d)| d.time),
        }
    }

    pub fn next_firing(&mut self) -> Firing {
        match self.kind {
            SchedulerKind::Synchronous => {
                let firing = Firing {
                    device: DeviceId::from(self.cursor),
                    time: self.sweep as f64,
                    closes_sweep: self.cursor + 1 == self.devices,
                };
                self.cursor += 1;
                if self.cursor == self.devices {
                    self.cursor = 0;
                    self.sweep += 1;
                }
                firing
            }
            SchedulerKind::AsyncExponential { rate } => {
                let Reverse(due) = self.queue.pop().expect("non-empty schedule");
                let gap = Exp::new(rate).expect("positive rate").sample(&mut self.rng);
                self.queue.push(Reverse(Due {
                    time: due.time + gap,
                    device: due.device,
                }));
                Firing {
                    device: due.device,
                    time: due.time,
                    closes_sweep: false,
                }
            }
            SchedulerKind::FixedFrequency { period } => {
                let Reverse(due) = self.queue.pop().expect("non-empty schedule");
                self.queue.push(Reverse(Due {
                    time: due.time + period,
                    device: due.device,
                }));
                Firing {
                    device: due.device,
                    time: due.time,
                    closes_sweep: false,
                }
            }
        }
    }

    /// True between synchronous sweeps, and always for asynchronous kinds.
    pub fn at_sweep_boundary(&self) -> bool {
        self.cursor == 0
    }
}
