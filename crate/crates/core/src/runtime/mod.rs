//! Round-based execution of field programs over a static network.
//!
//! A [`World`] runs one [`FieldProgram`] on every device of a
//! [`NetworkGraph`]. Each round (an *event*) the scheduled device reads its
//! inbox, which retains the latest payload of every neighbour together with
//! its own previous payload, and produces an output and a new payload. The
//! payload is delivered to every neighbour and back to the device itself.
//! Retained messages are never dropped: they are only overwritten by newer
//! payloads from the same sender.

mod scheduler;
mod share;

use std::fmt::Display;
use std::io::Write;
use std::sync::Arc;

pub use scheduler::{Firing, Scheduler, SchedulerKind, HALF_HOUR};
pub use share::{minimising_share, MinimisingShare, ShareProgram, ShareValue};

use crate::error::{Error, Result};
use crate::topology::{DeviceId, NetworkGraph};

/// Failure raised by a program while executing a round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepError(pub String);

impl Display for StepError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// Local readings available to programs.
pub trait Sensors: Send + Sync {
    fn read(&self, device: DeviceId, time: f64) -> f64;

    /// Changes whenever the environment changes. Within one epoch readings
    /// must be time-invariant.
    fn epoch(&self, _time: f64) -> u64 {
        0
    }
}

/// Environment with no sensors: every reading is zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoSensors;

impl Sensors for NoSensors {
    fn read(&self, _: DeviceId, _: f64) -> f64 {
        0.0
    }
}

/// Behaviour executed by every device, once per round.
///
/// `step` must be a deterministic function of its context; any state carried
/// from round to round has to flow through the device's own payload.
pub trait FieldProgram {
    type Payload: Clone + PartialEq;
    type Output: Clone + PartialEq;

    fn step(&self, ctx: &Context<'_, Self::Payload>) -> Result<(Self::Output, Self::Payload), StepError>;

    /// Number of records a payload occupies on the wire.
    fn payload_records(&self, _payload: &Self::Payload) -> usize {
        1
    }
}

/// Retained messages of one device: the latest payload from each neighbour
/// that has fired, plus the device's own previous payload.
#[derive(Debug, Clone, Copy)]
pub struct Inbox<'a, P> {
    owner: DeviceId,
    ids: &'a [DeviceId],
    slots: &'a [Option<P>],
}

impl<'a, P> Inbox<'a, P> {
    /// All retained `(sender, payload)` pairs in sender order, own entry included.
    pub fn iter(&self) -> impl Iterator<Item = (DeviceId, &'a P)> + 'a {
        self.ids
            .iter()
            .zip(self.slots)
            .filter_map(|(&id, slot)| slot.as_ref().map(|p| (id, p)))
    }

    /// Retained payloads from neighbours only.
    pub fn neighbours(&self) -> impl Iterator<Item = (DeviceId, &'a P)> + 'a {
        let owner = self.owner;
        self.iter().filter(move |(id, _)| *id != owner)
    }

    /// The device's own previous payload.
    pub fn own(&self) -> Option<&'a P> {
        self.get(self.owner)
    }

    pub fn get(&self, sender: DeviceId) -> Option<&'a P> {
        self.ids
            .binary_search(&sender)
            .ok()
            .and_then(|i| self.slots[i].as_ref())
    }

    pub fn len(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Everything a round can observe.
pub struct Context<'a, P> {
    device: DeviceId,
    time: f64,
    round: u64,
    graph: &'a NetworkGraph,
    sensors: &'a dyn Sensors,
    inbox: Inbox<'a, P>,
}

impl<'a, P> Context<'a, P> {
    pub fn device(&self) -> DeviceId {
        self.device
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// Zero-based index of this round on this device.
    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn graph(&self) -> &'a NetworkGraph {
        self.graph
    }

    pub fn sensor(&self) -> f64 {
        self.sensors.read(self.device, self.time)
    }

    /// Length of the link to `peer` (zero for the device itself).
    pub fn edge_length(&self, peer: DeviceId) -> f64 {
        self.graph
            .edge_length(self.device, peer)
            .expect("inbox entries come from neighbours")
    }

    pub fn inbox(&self) -> &Inbox<'a, P> {
        &self.inbox
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEvent<O> {
    pub index: u64,
    pub device: DeviceId,
    pub time: f64,
    pub output: O,
}

/// Per-device output history, in event order.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace<O> {
    pub events: Vec<TraceEvent<O>>,
}

impl<O: Display> Trace<O> {
    /// Writes `eventIndex,time,deviceId,output` records.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "eventIndex,time,deviceId,output")?;
        for e in &self.events {
            writeln!(out, "{},{},{},{}", e.index, e.time, e.device, e.output)?;
        }
        Ok(())
    }
}

/// One value per device.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot<O> {
    pub values: Vec<O>,
    pub taken_at: f64,
}

impl<O> Snapshot<O> {
    pub fn get(&self, d: DeviceId) -> &O {
        &self.values[d.index()]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Stabilisation {
    /// No output changed after this time.
    Stabilised { at: f64 },
    NotStabilised,
}

impl Stabilisation {
    pub fn is_stabilised(&self) -> bool {
        matches!(self, Stabilisation::Stabilised { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityOptions {
    /// Consecutive unchanged rounds each device must show.
    pub quiescence_window: u64,
    /// Give up once every device has executed this many rounds in the call.
    pub max_sweeps: u64,
    /// Stop before the first event at or after this time.
    pub deadline: Option<f64>,
}

impl Default for StabilityOptions {
    fn default() -> Self {
        StabilityOptions {
            quiescence_window: 5,
            max_sweeps: 1000,
            deadline: None,
        }
    }
}

/// A running simulation of one program over one network.
pub struct World<P: FieldProgram> {
    graph: Arc<NetworkGraph>,
    program: P,
    sensors: Arc<dyn Sensors>,
    scheduler: Scheduler,
    /// Senders retained by each device: its neighbours and itself, sorted.
    slot_ids: Vec<Vec<DeviceId>>,
    mailboxes: Vec<Vec<Option<P::Payload>>>,
    /// For each sender, `(receiver, slot)` pairs, itself included.
    routes: Vec<Vec<(usize, usize)>>,
    own_slot: Vec<usize>,
    pending: Vec<(DeviceId, P::Payload)>,
    outputs: Vec<Option<P::Output>>,
    rounds: Vec<u64>,
    clock: f64,
    events: u64,
    epoch: u64,
    trace: Option<Vec<TraceEvent<P::Output>>>,
    // stabilisation bookkeeping
    dirty: Vec<bool>,
    dirty_count: usize,
    streak: Vec<u64>,
    last_output_change: f64,
    // message cost instrumentation
    deposits: Vec<u64>,
    records: Vec<u64>,
}

impl<P: FieldProgram> World<P> {
    pub fn new(graph: Arc<NetworkGraph>, program: P, scheduler: Scheduler) -> Self {
        let n = graph.len();
        let mut slot_ids = Vec::with_capacity(n);
        for d in graph.devices() {
            let mut ids: Vec<DeviceId> = graph.neighbours(d).iter().map(|l| l.peer).collect();
            let at = ids.binary_search(&d).unwrap_err();
            ids.insert(at, d);
            slot_ids.push(ids);
        }
        let mut routes = vec![Vec::new(); n];
        let mut own_slot = vec![0; n];
        for (receiver, ids) in slot_ids.iter().enumerate() {
            for (slot, sender) in ids.iter().enumerate() {
                routes[sender.index()].push((receiver, slot));
                if sender.index() == receiver {
                    own_slot[receiver] = slot;
                }
            }
        }
        let mailboxes = slot_ids.iter().map(|ids| vec![None; ids.len()]).collect();
        World {
            graph,
            program,
            sensors: Arc::new(NoSensors),
            scheduler,
            slot_ids,
            mailboxes,
            routes,
            own_slot,
            pending: Vec::new(),
            outputs: vec![None; n],
            rounds: vec![0; n],
            clock: 0.0,
            events: 0,
            epoch: 0,
            trace: None,
            dirty: vec![true; n],
            dirty_count: n,
            streak: vec![0; n],
            last_output_change: 0.0,
            deposits: vec![0; n],
            records: vec![0; n],
        }
    }

    pub fn with_sensors(mut self, sensors: Arc<dyn Sensors>) -> Self {
        self.epoch = sensors.epoch(self.scheduler.peek_time());
        self.sensors = sensors;
        self
    }

    /// Records every event's output.
    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    pub fn graph(&self) -> &NetworkGraph {
        &self.graph
    }

    pub fn program(&self) -> &P {
        &self.program
    }

    pub fn sensors(&self) -> &dyn Sensors {
        &*self.sensors
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn peek_time(&self) -> f64 {
        self.scheduler.peek_time()
    }

    pub fn events(&self) -> u64 {
        self.events
    }

    pub fn rounds(&self) -> &[u64] {
        &self.rounds
    }

    pub fn output(&self, d: DeviceId) -> Option<&P::Output> {
        self.outputs[d.index()].as_ref()
    }

    pub fn outputs(&self) -> &[Option<P::Output>] {
        &self.outputs
    }

    /// The payload `d` produced in its latest round.
    pub fn payload(&self, d: DeviceId) -> Option<&P::Payload> {
        self.mailboxes[d.index()][self.own_slot[d.index()]].as_ref()
    }

    pub fn inbox(&self, d: DeviceId) -> Inbox<'_, P::Payload> {
        Inbox {
            owner: d,
            ids: &self.slot_ids[d.index()],
            slots: &self.mailboxes[d.index()],
        }
    }

    pub fn trace(&self) -> Option<Trace<P::Output>> {
        self.trace.as_ref().map(|events| Trace {
            events: events.clone(),
        })
    }

    /// Payload deliveries made by each device, own copy included.
    pub fn deposits(&self) -> &[u64] {
        &self.deposits
    }

    /// Wire records delivered by each device.
    pub fn records(&self) -> &[u64] {
        &self.records
    }

    /// Time of the latest output change.
    pub fn last_output_change(&self) -> f64 {
        self.last_output_change
    }

    /// Executes the next scheduled round.
    pub fn step(&mut self) -> Result<(DeviceId, P::Output)> {
        self.enter_epoch(self.scheduler.peek_time());
        let firing = self.scheduler.next_firing();
        let d = firing.device;
        let i = d.index();
        self.clock = firing.time;

        let ctx = Context {
            device: d,
            time: firing.time,
            round: self.rounds[i],
            graph: &self.graph,
            sensors: &*self.sensors,
            inbox: Inbox {
                owner: d,
                ids: &self.slot_ids[i],
                slots: &self.mailboxes[i],
            },
        };
        let (output, payload) = self.program.step(&ctx).map_err(|e| Error::ProgramFailed {
            device: d,
            round: self.rounds[i],
            reason: e.0,
        })?;
        self.rounds[i] += 1;

        if self.outputs[i].as_ref() != Some(&output) {
            self.streak[i] = 0;
            self.last_output_change = firing.time;
            self.outputs[i] = Some(output.clone());
        } else {
            self.streak[i] += 1;
        }
        if self.dirty[i] {
            self.dirty[i] = false;
            self.dirty_count -= 1;
        }

        let fanout = self.routes[i].len() as u64;
        self.deposits[i] += fanout;
        self.records[i] += fanout * self.program.payload_records(&payload) as u64;

        if let Some(trace) = &mut self.trace {
            trace.push(TraceEvent {
                index: self.events,
                device: d,
                time: firing.time,
                output: output.clone(),
            });
        }
        self.events += 1;

        if matches!(self.scheduler.kind(), SchedulerKind::Synchronous) {
            self.pending.push((d, payload));
            if firing.closes_sweep {
                for (sender, payload) in std::mem::take(&mut self.pending) {
                    self.deliver(sender, payload);
                }
            }
        } else {
            self.deliver(d, payload);
        }
        Ok((d, output))
    }

    fn deliver(&mut self, sender: DeviceId, payload: P::Payload) {
        let s = sender.index();
        let changed = self.mailboxes[s][self.own_slot[s]].as_ref() != Some(&payload);
        if !changed {
            return;
        }
        for &(receiver, slot) in &self.routes[s] {
            self.mailboxes[receiver][slot] = Some(payload.clone());
            if !self.dirty[receiver] {
                self.dirty[receiver] = true;
                self.dirty_count += 1;
            }
        }
    }

    fn enter_epoch(&mut self, time: f64) {
        let epoch = self.sensors.epoch(time);
        if epoch != self.epoch {
            self.epoch = epoch;
            self.dirty.iter_mut().for_each(|d| *d = true);
            self.dirty_count = self.dirty.len();
        }
    }

    /// Every device has shown `window` unchanged outputs and has re-run on the
    /// current contents of its inbox, so no further round can change anything.
    pub fn is_quiescent(&self, window: u64) -> bool {
        self.dirty_count == 0
            && self.pending.is_empty()
            && self.scheduler.at_sweep_boundary()
            && self.streak.iter().all(|&s| s >= window)
    }

    /// Runs until quiescent or until every device has executed
    /// `max_sweeps` rounds (or the deadline is reached).
    pub fn run_until_stable(&mut self, opts: StabilityOptions) -> Result<Stabilisation> {
        self.run_until_stable_observed(opts, |_, _| {})
    }

    /// As [`World::run_until_stable`], calling `observe(world, t)` before each
    /// event with the time `t` the event is about to happen at.
    pub fn run_until_stable_observed(
        &mut self,
        opts: StabilityOptions,
        mut observe: impl FnMut(&Self, f64),
    ) -> Result<Stabilisation> {
        assert!(opts.quiescence_window >= 1, "quiescence window must be positive");
        let start = self.rounds.clone();
        let mut exhausted = 0;
        let n = self.rounds.len();
        loop {
            let next = self.scheduler.peek_time();
            self.enter_epoch(next);
            if self.is_quiescent(opts.quiescence_window) {
                return Ok(Stabilisation::Stabilised {
                    at: self.last_output_change,
                });
            }
            if exhausted == n || opts.deadline.is_some_and(|t| next >= t) {
                return Ok(Stabilisation::NotStabilised);
            }
            observe(self, next);
            let (d, _) = self.step()?;
            if self.rounds[d.index()] - start[d.index()] == opts.max_sweeps {
                exhausted += 1;
            }
        }
    }

    /// Runs until every device has executed `per_device` further rounds (or
    /// the deadline is reached), returning the number of output changes seen.
    pub fn run_rounds(
        &mut self,
        per_device: u64,
        deadline: Option<f64>,
        mut observe: impl FnMut(&Self, f64),
    ) -> Result<u64> {
        let start = self.rounds.clone();
        let n = self.rounds.len();
        let mut done = if per_device == 0 { n } else { 0 };
        let mut changes = 0;
        while done < n {
            let next = self.scheduler.peek_time();
            if deadline.is_some_and(|t| next >= t) {
                break;
            }
            observe(self, next);
            let (d, _) = self.step()?;
            if self.streak[d.index()] == 0 {
                changes += 1;
            }
            if self.rounds[d.index()] - start[d.index()] == per_device {
                done += 1;
            }
        }
        Ok(changes)
    }

    /// Latest output of every device.
    pub fn take_snapshot(&self) -> Result<Snapshot<P::Output>> {
        let mut values = Vec::with_capacity(self.outputs.len());
        for (i, o) in self.outputs.iter().enumerate() {
            match o {
                Some(v) => values.push(v.clone()),
                None => return Err(Error::IncompleteSnapshot(DeviceId::from(i))),
            }
        }
        Ok(Snapshot {
            values,
            taken_at: self.clock,
        })
    }
}
