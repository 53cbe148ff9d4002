#![allow(dead_code)]

use std::sync::Arc;

use regionsampler::runtime::{FieldProgram, Scheduler, SchedulerKind, Sensors, Stabilisation, StabilityOptions, World};
use regionsampler::topology::{build_deployment, build_network, DeploymentKind, DeviceId, NetworkGraph};

/// Fixed per-device readings.
pub struct Readings(pub Vec<f64>);

impl Sensors for Readings {
    fn read(&self, device: DeviceId, _time: f64) -> f64 {
        self.0[device.index()]
    }
}

pub fn connected_graph(kind: DeploymentKind, n: usize, seed: u64) -> Arc<NetworkGraph> {
    let dep = build_deployment(kind, n, seed).unwrap();
    Arc::new(build_network(dep, 4).unwrap())
}

/// Runs `program` to a fixed point and returns the world.
pub fn settle<P: FieldProgram>(
    graph: Arc<NetworkGraph>,
    program: P,
    readings: Vec<f64>,
    kind: SchedulerKind,
    seed: u64,
) -> World<P> {
    let n = graph.len();
    let mut world =
        World::new(graph, program, Scheduler::new(kind, n, seed)).with_sensors(Arc::new(Readings(readings)));
    let s = world
        .run_until_stable(StabilityOptions {
            quiescence_window: 3,
            max_sweeps: 5000,
            deadline: None,
        })
        .unwrap();
    assert!(matches!(s, Stabilisation::Stabilised { .. }), "did not stabilise");
    world
}

pub const ASYNC: SchedulerKind = SchedulerKind::AsyncExponential { rate: 1.0 };
