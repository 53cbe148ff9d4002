//! Device deployments and the static communication graph.

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Exp};

use crate::error::{Error, Result};
use crate::seed::{stream_rng, STREAM_DEPLOYMENT};

/// Identifier of a device. Generated deployments use the contiguous range `[0, n)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DeviceId(pub u32);

impl DeviceId {
    /// Reserved id, greater than any real device. Used by the discard candidacy.
    pub const SENTINEL: DeviceId = DeviceId(u32::MAX);

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<usize> for DeviceId {
    fn from(i: usize) -> Self {
        DeviceId(u32::try_from(i).expect("device index exceeds u32"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Axis-aligned rectangle devices are placed in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arena {
    pub origin: Point,
    pub width: f64,
    pub height: f64,
}

impl Arena {
    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.origin.x
            && p.y >= self.origin.y
            && p.x <= self.origin.x + self.width
            && p.y <= self.origin.y + self.height
    }

    pub fn centre(&self) -> Point {
        Point::new(
            self.origin.x + self.width / 2.0,
            self.origin.y + self.height / 2.0,
        )
    }

    pub fn top_right(&self) -> Point {
        Point::new(self.origin.x + self.width, self.origin.y + self.height)
    }

    /// Length of the longer side.
    pub fn side(&self) -> f64 {
        self.width.max(self.height)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DeploymentKind {
    Grid,
    PerturbedGrid,
    Uniform,
    Exponential,
}

impl DeploymentKind {
    pub const ALL: [DeploymentKind; 4] = [
        DeploymentKind::Grid,
        DeploymentKind::PerturbedGrid,
        DeploymentKind::Uniform,
        DeploymentKind::Exponential,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DeploymentKind::Grid => "grid",
            DeploymentKind::PerturbedGrid => "pgrid",
            DeploymentKind::Uniform => "uniform",
            DeploymentKind::Exponential => "exp",
        }
    }
}

impl fmt::Display for DeploymentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DeploymentKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        DeploymentKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown deployment `{s}` (expected grid, pgrid, uniform or exp)"))
    }
}

/// Positions of every device, indexed by [`DeviceId`].
#[derive(Debug, Clone, PartialEq)]
pub struct Deployment {
    positions: Vec<Point>,
    arena: Arena,
    /// External identifiers when loaded from a station file.
    labels: Option<Vec<u64>>,
}

impl Deployment {
    pub fn new(positions: Vec<Point>, arena: Arena) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::InvalidArgument("deployment has no devices".into()));
        }
        if let Some(p) = positions.iter().find(|p| !arena.contains(**p)) {
            return Err(Error::InvalidArgument(format!(
                "position ({}, {}) lies outside the arena",
                p.x, p.y
            )));
        }
        Ok(Deployment {
            positions,
            arena,
            labels: None,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn position(&self, d: DeviceId) -> Point {
        self.positions[d.index()]
    }

    pub fn positions(&self) -> &[Point] {
        &self.positions
    }

    pub fn arena(&self) -> Arena {
        self.arena
    }

    pub fn devices(&self) -> impl Iterator<Item = DeviceId> + '_ {
        (0..self.positions.len()).map(DeviceId::from)
    }

    /// External station id of a device, or its index for generated deployments.
    pub fn label(&self, d: DeviceId) -> u64 {
        self.labels
            .as_ref()
            .map_or(u64::from(d.0), |labels| labels[d.index()])
    }

    pub fn device_for_label(&self, label: u64) -> Option<DeviceId> {
        match &self.labels {
            Some(labels) => labels.iter().position(|&l| l == label).map(DeviceId::from),
            None => usize::try_from(label)
                .ok()
                .filter(|&i| i < self.len())
                .map(DeviceId::from),
        }
    }
}

/// Places `n` devices in a square arena of side `⌈√n⌉` spacing units.
///
/// The arena spans `[-0.5, side - 0.5]` on both axes so that the unit lattice
/// sits at integer coordinates starting from the origin.
pub fn build_deployment(kind: DeploymentKind, n: usize, seed: u64) -> Result<Deployment> {
    if n == 0 {
        return Err(Error::InvalidArgument("device count must be at least 1".into()));
    }
    let side = (n as f64).sqrt().ceil() as usize;
    let arena = Arena {
        origin: Point::new(-0.5, -0.5),
        width: side as f64,
        height: side as f64,
    };
    let lattice = |i: usize| Point::new((i % side) as f64, (i / side) as f64);
    let mut rng = stream_rng(seed, STREAM_DEPLOYMENT);

    let positions = match kind {
        DeploymentKind::Grid => (0..n).map(lattice).collect(),
        DeploymentKind::PerturbedGrid => (0..n)
            .map(|i| {
                let p = lattice(i);
                let dx = rng.random_range(-PGRID_JITTER..=PGRID_JITTER);
                let dy = rng.random_range(-PGRID_JITTER..=PGRID_JITTER);
                Point::new(p.x + dx, p.y + dy)
            })
            .collect(),
        DeploymentKind::Uniform | DeploymentKind::Exponential => {
            let extent = side as f64;
            let exp = Exp::new(EXP_RATE_PER_SIDE / extent).expect("positive rate");
            let mut seen = HashSet::with_capacity(n);
            let mut positions = Vec::with_capacity(n);
            while positions.len() < n {
                let x = rng.random_range(0.0..extent);
                let y = if kind == DeploymentKind::Uniform {
                    rng.random_range(0.0..extent)
                } else {
                    loop {
                        let y: f64 = exp.sample(&mut rng);
                        if y < extent {
                            break y;
                        }
                    }
                };
                let p = Point::new(arena.origin.x + x, arena.origin.y + y);
                // exact collisions are re-drawn
                if seen.insert((p.x.to_bits(), p.y.to_bits())) {
                    positions.push(p);
                }
            }
            positions
        }
    };
    Deployment::new(positions, arena)
}

/// Per-coordinate jitter of the perturbed grid, in spacing units.
pub const PGRID_JITTER: f64 = 0.45;
/// Rate of the exponential axis, as a multiple of `1 / side`.
pub const EXP_RATE_PER_SIDE: f64 = 3.0;

/// Reads a station file: one `id,x,y` record per line, `#` comments allowed.
pub fn load_stations(path: impl AsRef<Path>) -> Result<Deployment> {
    let text = std::fs::read_to_string(path)?;
    parse_stations(&text)
}

pub fn parse_stations(text: &str) -> Result<Deployment> {
    let mut stations: BTreeMap<u64, Point> = BTreeMap::new();
    for (line, id, fields) in csv_rows(text, 3)? {
        let id: u64 = id.parse().map_err(|_| Error::Parse {
            line,
            message: format!("invalid station id `{id}`"),
        })?;
        let x = parse_f64(&fields[0], line)?;
        let y = parse_f64(&fields[1], line)?;
        if stations.insert(id, Point::new(x, y)).is_some() {
            return Err(Error::DuplicateDevice(id));
        }
    }
    if stations.is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: "station file contains no records".into(),
        });
    }

    let (mut min, mut max) = (Point::new(f64::MAX, f64::MAX), Point::new(f64::MIN, f64::MIN));
    for p in stations.values() {
        min = Point::new(min.x.min(p.x), min.y.min(p.y));
        max = Point::new(max.x.max(p.x), max.y.max(p.y));
    }
    let expand = |span: f64| if span > 0.0 { span * 1.01 } else { 1.0 };
    let (w, h) = (expand(max.x - min.x), expand(max.y - min.y));
    let arena = Arena {
        origin: Point::new(
            min.x - (w - (max.x - min.x)) / 2.0,
            min.y - (h - (max.y - min.y)) / 2.0,
        ),
        width: w,
        height: h,
    };
    let labels = stations.keys().copied().collect();
    let mut deployment = Deployment::new(stations.into_values().collect(), arena)?;
    deployment.labels = Some(labels);
    Ok(deployment)
}

/// Splits headerless CSV text into `(line, first field, remaining fields)`.
pub(crate) fn csv_rows(text: &str, arity: usize) -> Result<Vec<(usize, String, Vec<String>)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != arity {
            return Err(Error::Parse {
                line,
                message: format!("expected {arity} fields, found {}", record.len()),
            });
        }
        let fields: Vec<String> = record.iter().map(str::to_owned).collect();
        rows.push((line, fields[0].clone(), fields[1..].to_vec()));
    }
    Ok(rows)
}

pub(crate) fn parse_f64(s: &str, line: usize) -> Result<f64> {
    s.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Parse {
            line,
            message: format!("invalid number `{s}`"),
        })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Link {
    pub peer: DeviceId,
    pub length: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GraphWarning {
    /// `k_min` was not smaller than the device count; the graph is complete.
    DegenerateNeighbourhood { k_min: usize, devices: usize },
    /// Bridging edges added to reconnect separate components.
    Bridged(usize),
}

/// Undirected device graph without self-loops; edges carry Euclidean lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGraph {
    deployment: Deployment,
    neighbours: Vec<Vec<Link>>,
    warnings: Vec<GraphWarning>,
}

impl NetworkGraph {
    /// Graph with exactly the given undirected edges. Lengths are Euclidean.
    pub fn from_edges(
        deployment: Deployment,
        edges: impl IntoIterator<Item = (DeviceId, DeviceId)>,
    ) -> Result<Self> {
        let n = deployment.len();
        let mut graph = NetworkGraph {
            neighbours: vec![Vec::new(); n],
            deployment,
            warnings: Vec::new(),
        };
        for (a, b) in edges {
            if a == b || a.index() >= n || b.index() >= n {
                return Err(Error::InvalidArgument(format!("invalid edge ({a}, {b})")));
            }
            graph.connect(a, b);
        }
        Ok(graph)
    }

    /// Devices placed on a horizontal line with the given spacing, linked to
    /// their immediate predecessor and successor.
    pub fn line(n: usize, spacing: f64) -> Result<Self> {
        if n == 0 || spacing <= 0.0 {
            return Err(Error::InvalidArgument("line needs n ≥ 1 and positive spacing".into()));
        }
        let positions = (0..n).map(|i| Point::new(i as f64 * spacing, 0.0)).collect();
        let arena = Arena {
            origin: Point::new(0.0, -0.5),
            width: (n - 1) as f64 * spacing,
            height: 1.0,
        };
        let deployment = Deployment::new(positions, arena)?;
        NetworkGraph::from_edges(
            deployment,
            (1..n).map(|i| (DeviceId::from(i - 1), DeviceId::from(i))),
        )
    }

    fn connect(&mut self, a: DeviceId, b: DeviceId) -> bool {
        let length = self.deployment.position(a).distance(self.deployment.position(b));
        let list = &mut self.neighbours[a.index()];
        match list.binary_search_by_key(&b, |l| l.peer) {
            Ok(_) => false,
            Err(at) => {
                list.insert(at, Link { peer: b, length });
                let other = &mut self.neighbours[b.index()];
                let at = other.binary_search_by_key(&a, |l| l.peer).unwrap_err();
                other.insert(at, Link { peer: a, length });
                true
            }
        }
    }

    pub fn len(&self) -> usize {
        self.neighbours.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbours.is_empty()
    }

    pub fn deployment(&self) -> &Deployment {
        &self.deployment
    }

    pub fn devices(&self) -> impl Iterator<Item = DeviceId> + '_ {
        self.deployment.devices()
    }

    /// Neighbours of `d`, sorted by id.
    pub fn neighbours(&self, d: DeviceId) -> &[Link] {
        &self.neighbours[d.index()]
    }

    pub fn degree(&self, d: DeviceId) -> usize {
        self.neighbours[d.index()].len()
    }

    pub fn edge_length(&self, a: DeviceId, b: DeviceId) -> Option<f64> {
        if a == b {
            return Some(0.0);
        }
        let list = &self.neighbours[a.index()];
        list.binary_search_by_key(&b, |l| l.peer)
            .ok()
            .map(|i| list[i].length)
    }

    pub fn are_neighbours(&self, a: DeviceId, b: DeviceId) -> bool {
        a != b && self.edge_length(a, b).is_some()
    }

    /// Undirected edges `(a, b, length)` with `a < b`, in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (DeviceId, DeviceId, f64)> + '_ {
        self.neighbours.iter().enumerate().flat_map(|(a, links)| {
            let a = DeviceId::from(a);
            links
                .iter()
                .filter(move |l| l.peer > a)
                .map(move |l| (a, l.peer, l.length))
        })
    }

    pub fn edge_count(&self) -> usize {
        self.neighbours.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn warnings(&self) -> &[GraphWarning] {
        &self.warnings
    }

    pub fn is_degenerate(&self) -> bool {
        self.warnings
            .iter()
            .any(|w| matches!(w, GraphWarning::DegenerateNeighbourhood { .. }))
    }

    /// Component label per device, labels assigned in order of lowest member.
    pub fn components(&self) -> Vec<usize> {
        let mut label = vec![usize::MAX; self.len()];
        let mut next = 0;
        let mut queue = VecDeque::new();
        for start in 0..self.len() {
            if label[start] != usize::MAX {
                continue;
            }
            label[start] = next;
            queue.push_back(start);
            while let Some(u) = queue.pop_front() {
                for l in &self.neighbours[u] {
                    if label[l.peer.index()] == usize::MAX {
                        label[l.peer.index()] = next;
                        queue.push_back(l.peer.index());
                    }
                }
            }
            next += 1;
        }
        label
    }

    pub fn is_connected(&self) -> bool {
        self.components().iter().all(|&c| c == 0)
    }
}

/// Links every device to its `k_min` nearest peers (symmetric closure), then
/// bridges components through their closest cross pair until connected.
pub fn build_network(deployment: Deployment, k_min: usize) -> Result<NetworkGraph> {
    if k_min == 0 {
        return Err(Error::InvalidArgument("k_min must be positive".into()));
    }
    let n = deployment.len();
    let mut graph = NetworkGraph {
        neighbours: vec![Vec::new(); n],
        deployment,
        warnings: Vec::new(),
    };

    if k_min >= n {
        log::warn!("k_min = {k_min} with only {n} devices: building the complete graph");
        for a in 0..n {
            for b in a + 1..n {
                graph.connect(DeviceId::from(a), DeviceId::from(b));
            }
        }
        graph.warnings.push(GraphWarning::DegenerateNeighbourhood { k_min, devices: n });
        return Ok(graph);
    }

    let positions = graph.deployment.positions().to_vec();
    let mut candidates: Vec<(f64, usize)> = Vec::with_capacity(n);
    for (a, pa) in positions.iter().enumerate() {
        candidates.clear();
        candidates.extend(
            positions
                .iter()
                .enumerate()
                .filter(|&(b, _)| b != a)
                .map(|(b, pb)| (pa.distance(*pb), b)),
        );
        let by_distance = |x: &(f64, usize), y: &(f64, usize)| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1));
        candidates.select_nth_unstable_by(k_min - 1, by_distance);
        for &(_, b) in &candidates[..k_min] {
            graph.connect(DeviceId::from(a), DeviceId::from(b));
        }
    }

    let mut bridges = 0;
    loop {
        let components = graph.components();
        if components.iter().all(|&c| c == 0) {
            break;
        }
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..n {
            for b in a + 1..n {
                if components[a] == components[b] {
                    continue;
                }
                let d = positions[a].distance(positions[b]);
                if best.is_none_or(|(bd, _, _)| d < bd) {
                    best = Some((d, a, b));
                }
            }
        }
        let (_, a, b) = best.expect("at least two components");
        graph.connect(DeviceId::from(a), DeviceId::from(b));
        bridges += 1;
    }
    if bridges > 0 {
        graph.warnings.push(GraphWarning::Bridged(bridges));
    }
    Ok(graph)
}
