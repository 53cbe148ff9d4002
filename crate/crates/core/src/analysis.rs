//! Partitions of stable snapshots, with their verifiers and metrics.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::io::Write;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::runtime::{FieldProgram, Snapshot, World};
use crate::sampler::{edge_error, Candidacy, EdgeMetric};
use crate::topology::{DeviceId, NetworkGraph};

/// Relative slack used when comparing accumulated real-valued errors.
pub const REAL_TOLERANCE: f64 = 1e-9;

fn le_tol(a: f64, b: f64) -> bool {
    a <= b + REAL_TOLERANCE * b.abs().max(1.0)
}

/// Device-to-leader assignment and the regions it induces.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionPartition {
    leader_of: Vec<DeviceId>,
    regions: BTreeMap<DeviceId, Vec<DeviceId>>,
}

impl RegionPartition {
    /// Groups devices by leader without checking that leaders lead themselves.
    /// Meant for transient states; use [`extract_partition`] on stable ones.
    pub fn group(leader_of: Vec<DeviceId>) -> Self {
        let mut regions: BTreeMap<DeviceId, Vec<DeviceId>> = BTreeMap::new();
        for (i, &l) in leader_of.iter().enumerate() {
            regions.entry(l).or_default().push(DeviceId::from(i));
        }
        RegionPartition { leader_of, regions }
    }

    /// Grouping of possibly incomplete outputs: devices without an output
    /// count as their own region.
    pub fn group_outputs(outputs: &[Option<DeviceId>]) -> Self {
        Self::group(
            outputs
                .iter()
                .enumerate()
                .map(|(i, o)| o.unwrap_or(DeviceId::from(i)))
                .collect(),
        )
    }

    pub fn leader_of(&self, d: DeviceId) -> DeviceId {
        self.leader_of[d.index()]
    }

    pub fn leaders(&self) -> impl Iterator<Item = DeviceId> + '_ {
        self.regions.keys().copied()
    }

    pub fn region(&self, leader: DeviceId) -> Option<&[DeviceId]> {
        self.regions.get(&leader).map(Vec::as_slice)
    }

    pub fn regions(&self) -> impl Iterator<Item = (DeviceId, &[DeviceId])> + '_ {
        self.regions.iter().map(|(l, r)| (*l, r.as_slice()))
    }

    pub fn region_count(&self) -> usize {
        self.regions.len()
    }

    pub fn device_count(&self) -> usize {
        self.leader_of.len()
    }
}

/// Partition of a complete snapshot of leader ids.
pub fn extract_partition(s: &Snapshot<DeviceId>, g: &NetworkGraph) -> Result<RegionPartition> {
    if s.len() != g.len() {
        return Err(Error::InvalidArgument(format!(
            "snapshot has {} devices, graph has {}",
            s.len(),
            g.len()
        )));
    }
    let leader_of = s.values.clone();
    for (i, &l) in leader_of.iter().enumerate() {
        if l.index() >= leader_of.len() || leader_of[l.index()] != l {
            return Err(Error::MalformedPartition {
                device: DeviceId::from(i),
                leader: l,
            });
        }
    }
    Ok(RegionPartition::group(leader_of))
}

/// Leaders of the regions that do not induce a connected subgraph.
pub fn check_contiguity(p: &RegionPartition, g: &NetworkGraph) -> Vec<DeviceId> {
    let mut seen = vec![false; g.len()];
    let mut broken = Vec::new();
    for (leader, members) in p.regions() {
        let start = members[0];
        seen[start.index()] = true;
        let mut stack = vec![start];
        let mut reached = 1;
        while let Some(d) = stack.pop() {
            for link in g.neighbours(d) {
                let q = link.peer;
                if !seen[q.index()] && p.leader_of(q) == leader {
                    seen[q.index()] = true;
                    reached += 1;
                    stack.push(q);
                }
            }
        }
        if reached != members.len() {
            broken.push(leader);
        }
    }
    broken
}

/// Evaluation metrics of one partition at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub time: f64,
    pub region_count: usize,
    pub mean_region_size: f64,
    /// Population standard deviation of region means around their mean.
    pub sigma_of_means: f64,
    /// Mean of the per-region standard deviations.
    pub mean_of_sigmas: f64,
    /// Population standard deviation of the per-region standard deviations.
    pub sigma_of_sigmas: f64,
}

fn mean_and_sigma(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn partition_metrics(p: &RegionPartition, signals: &[f64], time: f64) -> MetricsRow {
    let mut means = Vec::with_capacity(p.region_count());
    let mut sigmas = Vec::with_capacity(p.region_count());
    for (_, members) in p.regions() {
        let (m, s) = mean_and_sigma(members.iter().map(|d| signals[d.index()]));
        means.push(m);
        sigmas.push(s);
    }
    let (_, sigma_of_means) = mean_and_sigma(means.iter().copied());
    let (mean_of_sigmas, sigma_of_sigmas) = mean_and_sigma(sigmas.iter().copied());
    MetricsRow {
        time,
        region_count: p.region_count(),
        mean_region_size: p.device_count() as f64 / p.region_count() as f64,
        sigma_of_means,
        mean_of_sigmas,
        sigma_of_sigmas,
    }
}

/// Identification of a run in metrics CSVs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLabel {
    pub seed: u64,
    pub deployment: String,
    pub signal: String,
    pub strength: String,
    pub metric: String,
    pub eta: f64,
}

pub const METRICS_HEADER: &str =
    "seed,deployment,signal,strength,metric,eta,time,regions,mean_size,sigma_mu,mu_sigma,sigma_sigma";

pub fn write_metrics_csv<W: Write>(mut out: W, label: &RunLabel, rows: &[MetricsRow]) -> Result<()> {
    writeln!(out, "{METRICS_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            label.seed,
            label.deployment,
            label.signal,
            label.strength,
            label.metric,
            label.eta,
            r.time,
            r.region_count,
            r.mean_region_size,
            r.sigma_of_means,
            r.mean_of_sigmas,
            r.sigma_of_sigmas
        )?;
    }
    Ok(())
}

/// Shortest-path sampling error between devices of a network.
///
/// Single-source rows are computed on demand and cached.
#[derive(Debug)]
pub struct PathErrorOracle {
    adjacency: Vec<Vec<(usize, f64)>>,
    rows: Vec<OnceLock<Vec<f64>>>,
}

impl PathErrorOracle {
    pub fn new(graph: &NetworkGraph, metric: EdgeMetric, signals: &[f64]) -> Result<Self> {
        if signals.len() != graph.len() {
            return Err(Error::InvalidArgument(format!(
                "{} signal values for {} devices",
                signals.len(),
                graph.len()
            )));
        }
        let mut adjacency = Vec::with_capacity(graph.len());
        for d in graph.devices() {
            let mut row = Vec::with_capacity(graph.degree(d));
            for link in graph.neighbours(d) {
                row.push((link.peer.index(), edge_error(metric, d, link.peer, graph, signals)?));
            }
            adjacency.push(row);
        }
        Ok(Self::from_weights(adjacency))
    }

    /// Oracle over an explicit weighted adjacency list.
    pub fn from_weights(adjacency: Vec<Vec<(usize, f64)>>) -> Self {
        let rows = (0..adjacency.len()).map(|_| OnceLock::new()).collect();
        PathErrorOracle { adjacency, rows }
    }

    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    /// Distances from the nearest of `sources`; `+∞` where unreachable.
    pub fn distances_from(&self, sources: &[DeviceId]) -> Vec<f64> {
        let mut dist = vec![f64::INFINITY; self.adjacency.len()];
        let mut heap = BinaryHeap::new();
        for s in sources {
            dist[s.index()] = 0.0;
            heap.push(Reverse((Key(0.0), s.index())));
        }
        while let Some(Reverse((Key(du), u))) = heap.pop() {
            if du > dist[u] {
                continue;
            }
            for &(v, w) in &self.adjacency[u] {
                let dv = du + w;
                if dv < dist[v] {
                    dist[v] = dv;
                    heap.push(Reverse((Key(dv), v)));
                }
            }
        }
        dist
    }

    pub fn row(&self, a: DeviceId) -> &[f64] {
        self.rows[a.index()].get_or_init(|| self.distances_from(&[a]))
    }

    pub fn path_error(&self, a: DeviceId, b: DeviceId) -> f64 {
        if a == b {
            return 0.0;
        }
        self.row(a)[b.index()]
    }

    /// Largest path error between any two members of `region`.
    pub fn region_error(&self, region: &[DeviceId]) -> f64 {
        self.region_error_until(region, f64::INFINITY)
    }

    /// As [`Self::region_error`], but may stop early once the error reaches `stop`.
    fn region_error_until(&self, region: &[DeviceId], stop: f64) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, &a) in region.iter().enumerate() {
            let row = self.row(a);
            for &b in &region[i + 1..] {
                worst = worst.max(row[b.index()]);
            }
            if worst >= stop {
                break;
            }
        }
        worst
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Key(f64);

impl Eq for Key {}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Outcome of the error-bound check.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorBoundReport {
    /// Leader and error of the region with the largest error.
    pub worst: Option<(DeviceId, f64)>,
    /// Regions whose error exceeds the bound.
    pub violations: Vec<(DeviceId, f64)>,
}

impl ErrorBoundReport {
    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks that every region's error is within `eta`.
pub fn verify_within_error(p: &RegionPartition, oracle: &PathErrorOracle, eta: f64) -> ErrorBoundReport {
    let mut worst: Option<(DeviceId, f64)> = None;
    let mut violations = Vec::new();
    for (leader, members) in p.regions() {
        let e = oracle.region_error(members);
        if worst.is_none_or(|(_, w)| e > w) {
            worst = Some((leader, e));
        }
        if !le_tol(e, eta) {
            violations.push((leader, e));
        }
    }
    ErrorBoundReport { worst, violations }
}

/// A pair of contiguous regions whose union stays below the efficiency bound.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimalityViolation {
    pub leaders: (DeviceId, DeviceId),
    pub union_error: f64,
    pub leader_error: f64,
}

/// Pairs of regions connected by at least one edge, as ordered leader pairs.
pub fn contiguous_pairs(p: &RegionPartition, g: &NetworkGraph) -> Vec<(DeviceId, DeviceId)> {
    let mut pairs: Vec<(DeviceId, DeviceId)> = g
        .edges()
        .filter_map(|(a, b, _)| {
            let (la, lb) = (p.leader_of(a), p.leader_of(b));
            (la != lb).then(|| (la.min(lb), la.max(lb)))
        })
        .collect();
    pairs.sort_unstable();
    pairs.dedup();
    pairs
}

/// Checks that no two contiguous regions could merge into one whose error
/// stays below `k · eta`.
pub fn verify_local_optimality(
    p: &RegionPartition,
    g: &NetworkGraph,
    oracle: &PathErrorOracle,
    eta: f64,
    k: f64,
) -> Vec<OptimalityViolation> {
    let bound = k * eta;
    let mut violations = Vec::new();
    for (a, b) in contiguous_pairs(p, g) {
        let leader_error = oracle.path_error(a, b);
        // a merged region contains both leaders
        if leader_error >= bound {
            continue;
        }
        let mut union: Vec<DeviceId> = p.region(a).unwrap_or_default().to_vec();
        union.extend_from_slice(p.region(b).unwrap_or_default());
        let union_error = oracle.region_error_until(&union, bound);
        if union_error < bound {
            violations.push(OptimalityViolation {
                leaders: (a, b),
                union_error,
                leader_error,
            });
        }
    }
    violations
}

/// A device whose winning candidacy is inconsistent with the stable partition.
#[derive(Debug, Clone, PartialEq)]
pub struct FollowerViolation {
    pub device: DeviceId,
    pub candidacy: Candidacy,
    pub oracle_error: f64,
}

/// Checks the winning candidacies at a fixed point: leaders hold their own
/// candidacy at distance 0, and every follower's accumulated error is below
/// `radius` and no shorter than the shortest path from its leader.
pub fn verify_follower_bound(
    candidacies: &[Candidacy],
    oracle: &PathErrorOracle,
    radius: f64,
) -> Vec<FollowerViolation> {
    let mut violations = Vec::new();
    for (i, c) in candidacies.iter().enumerate() {
        let d = DeviceId::from(i);
        let ok;
        let mut oracle_error = 0.0;
        if c.leader == d {
            ok = c.error_distance == 0.0;
        } else if c.leader.index() >= candidacies.len() {
            ok = false;
        } else {
            oracle_error = oracle.path_error(c.leader, d);
            ok = c.error_distance < radius && le_tol(oracle_error, c.error_distance);
        }
        if !ok {
            violations.push(FollowerViolation {
                device: d,
                candidacy: *c,
                oracle_error,
            });
        }
    }
    violations
}

/// Payload deliveries per round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MessageCost {
    /// Mean over devices of deposits per round.
    pub mean_per_round: f64,
    pub max_per_round: f64,
    /// Mean over devices of wire records per round.
    pub mean_records_per_round: f64,
    pub total_records: u64,
}

pub fn message_cost<P: FieldProgram>(world: &World<P>) -> MessageCost {
    let mut sum = 0.0;
    let mut max: f64 = 0.0;
    let mut records = 0.0;
    let mut active = 0usize;
    for ((&dep, &rec), &rounds) in world.deposits().iter().zip(world.records()).zip(world.rounds()) {
        if rounds == 0 {
            continue;
        }
        let per = dep as f64 / rounds as f64;
        sum += per;
        max = max.max(per);
        records += rec as f64 / rounds as f64;
        active += 1;
    }
    let active = active.max(1) as f64;
    MessageCost {
        mean_per_round: sum / active,
        max_per_round: max,
        mean_records_per_round: records / active,
        total_records: world.records().iter().sum(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{Arena, Deployment, Point};

    fn ids(v: &[u32]) -> Vec<DeviceId> {
        v.iter().map(|&i| DeviceId(i)).collect()
    }

    fn snapshot(values: &[u32]) -> Snapshot<DeviceId> {
        Snapshot {
            values: ids(values),
            taken_at: 0.0,
        }
    }

    fn unit_line(n: usize) -> (NetworkGraph, PathErrorOracle) {
        let g = NetworkGraph::line(n, 1.0).unwrap();
        let o = PathErrorOracle::new(&g, EdgeMetric::Distance, &vec![0.0; n]).unwrap();
        (g, o)
    }

    #[test]
    fn single_leader_partition() {
        let (g, _) = unit_line(4);
        let p = extract_partition(&snapshot(&[3, 3, 3, 3]), &g).unwrap();
        assert_eq!(p.region_count(), 1);
        assert_eq!(p.region(DeviceId(3)).unwrap().len(), 4);
    }

    #[test]
    fn singleton_partition() {
        let (g, _) = unit_line(4);
        let p = extract_partition(&snapshot(&[0, 1, 2, 3]), &g).unwrap();
        assert_eq!(p.region_count(), 4);
    }

    #[test]
    fn leader_must_lead_itself() {
        let (g, _) = unit_line(3);
        assert!(matches!(
            extract_partition(&snapshot(&[1, 2, 2]), &g),
            Err(Error::MalformedPartition { device, leader }) if device == DeviceId(0) && leader == DeviceId(1)
        ));
    }

    #[test]
    fn contiguity() {
        let (g, _) = unit_line(4);
        let p = extract_partition(&snapshot(&[0, 0, 0, 0]), &g).unwrap();
        assert!(check_contiguity(&p, &g).is_empty());
        let p = extract_partition(&snapshot(&[0, 1, 0, 3]), &g).unwrap();
        assert_eq!(check_contiguity(&p, &g), ids(&[0]));
    }

    #[test]
    fn disconnected_pair_is_not_contiguous() {
        let arena = Arena {
            origin: Point::new(0.0, 0.0),
            width: 10.0,
            height: 10.0,
        };
        let dep = Deployment::new(vec![Point::new(0.0, 0.0), Point::new(5.0, 5.0)], arena).unwrap();
        let g = NetworkGraph::from_edges(dep, []).unwrap();
        let p = RegionPartition::group(ids(&[0, 0]));
        assert_eq!(check_contiguity(&p, &g), ids(&[0]));
    }

    #[test]
    fn metrics_of_two_flat_regions() {
        let p = RegionPartition::group(ids(&[0, 0, 2, 2]));
        let m = partition_metrics(&p, &[0.0, 0.0, 2.0, 2.0], 0.0);
        assert_eq!(m.region_count, 2);
        assert_eq!(m.mean_region_size, 2.0);
        assert_eq!(m.sigma_of_means, 1.0);
        assert_eq!(m.mean_of_sigmas, 0.0);
        assert_eq!(m.sigma_of_sigmas, 0.0);
    }

    #[test]
    fn metrics_of_singletons_and_single_region() {
        let values = [0.3, 4.0, -1.0];
        let m = partition_metrics(&RegionPartition::group(ids(&[0, 1, 2])), &values, 0.0);
        assert_eq!((m.mean_of_sigmas, m.sigma_of_sigmas), (0.0, 0.0));
        let m = partition_metrics(&RegionPartition::group(ids(&[1, 1, 1])), &values, 0.0);
        assert_eq!(m.sigma_of_means, 0.0);
        assert!(m.mean_of_sigmas > 0.0);
    }

    #[test]
    fn line_path_errors() {
        let (_, o) = unit_line(11);
        assert_eq!(o.path_error(DeviceId(4), DeviceId(4)), 0.0);
        assert_eq!(o.path_error(DeviceId(0), DeviceId(4)), 4.0);
        assert_eq!(o.region_error(&ids(&[5])), 0.0);
        assert_eq!(o.region_error(&ids(&[0, 1, 2])), 2.0);
    }

    #[test]
    fn error_bound_thresholds() {
        let (_, o) = unit_line(11);
        let p = RegionPartition::group(ids(&[0, 0, 0, 3, 3, 3, 6, 6, 6, 9, 9]));
        assert!(verify_within_error(&p, &o, 2.0).holds());
        let r = verify_within_error(&p, &o, 1.5);
        assert_eq!(r.violations.len(), 3);
        assert_eq!(r.worst, Some((DeviceId(0), 2.0)));
    }

    #[test]
    fn line_partition_is_locally_optimal() {
        let (g, o) = unit_line(11);
        let p = RegionPartition::group(ids(&[0, 0, 0, 3, 3, 3, 6, 6, 6, 9, 9]));
        assert!(verify_local_optimality(&p, &g, &o, 5.0, 0.5).is_empty());
        // with a looser bound the merged pairs become admissible
        assert_eq!(verify_local_optimality(&p, &g, &o, 12.0, 0.5).len(), 3);
    }

    #[test]
    fn singletons_with_unit_bound_are_locally_optimal() {
        let (g, o) = unit_line(6);
        let p = RegionPartition::group(ids(&[0, 1, 2, 3, 4, 5]));
        assert!(verify_local_optimality(&p, &g, &o, 1.0, 0.5).is_empty());
    }

    #[test]
    fn distant_leaders_pass_without_union_scan() {
        let (g, o) = unit_line(4);
        let p = RegionPartition::group(ids(&[0, 0, 3, 3]));
        // leaders 0 and 3 are 3 apart, which is 0.6 of the bound 5
        assert!(verify_local_optimality(&p, &g, &o, 5.0, 0.5).is_empty());
    }

    #[test]
    fn grouping_incomplete_outputs() {
        let p = RegionPartition::group_outputs(&[Some(DeviceId(1)), None, Some(DeviceId(1))]);
        assert_eq!(p.region_count(), 1);
    }
}
