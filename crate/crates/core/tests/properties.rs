use proptest::prelude::*;

use regionsampler::analysis::{partition_metrics, RegionPartition};
use regionsampler::runtime::MinimisingShare;
use regionsampler::sampler::{discard_candidacy, Candidacy, EdgeMetric, StrengthKey};
use regionsampler::topology::{build_deployment, build_network, DeploymentKind, DeviceId};

fn candidacy() -> impl Strategy<Value = Candidacy> {
    (-5i32..5, 0u64..3, 0u32..8, 0u32..20).prop_map(|(s, rank, d, leader)| Candidacy {
        key: StrengthKey::new(f64::from(s), rank),
        error_distance: f64::from(d) * 0.5,
        leader: DeviceId(leader),
    })
}

fn kind() -> impl Strategy<Value = DeploymentKind> {
    prop::sample::select(DeploymentKind::ALL.to_vec())
}

fn metric() -> impl Strategy<Value = EdgeMetric> {
    prop_oneof![
        Just(EdgeMetric::Distance),
        (1e-6f64..1.0).prop_map(|epsilon| EdgeMetric::Diff { epsilon }),
        (1e-6f64..1.0).prop_map(|epsilon| EdgeMetric::Mix { epsilon }),
    ]
}

proptest! {
    #[test]
    fn minimise_is_order_independent(
        floor in candidacy(),
        values in prop::collection::vec(candidacy(), 0..12),
        shuffle in any::<u64>(),
    ) {
        let share = MinimisingShare::new(&floor).unwrap();
        let a = share.minimise(floor, values.clone());
        let mut permuted = values.clone();
        let len = permuted.len().max(1);
        permuted.rotate_left(shuffle as usize % len);
        permuted.reverse();
        let b = share.minimise(floor, permuted);
        prop_assert_eq!(a, b);
        let expected = values.iter().copied().fold(floor, Candidacy::min);
        prop_assert_eq!(a, expected);
        prop_assert!(a <= floor);
        prop_assert!(!a.is_discard());
    }

    #[test]
    fn discard_never_wins(c in candidacy()) {
        prop_assert_eq!(c.min(discard_candidacy()), c);
    }

    #[test]
    fn metric_axioms(m in metric(), len in 1e-3f64..10.0, a in -10.0f64..10.0, b in -10.0f64..10.0) {
        let w = m.weight(len, a, b);
        prop_assert!(w > 0.0);
        prop_assert_eq!(w, m.weight(len, b, a));
        match m {
            EdgeMetric::Distance => prop_assert_eq!(w, len),
            EdgeMetric::Diff { epsilon } => prop_assert!(w >= epsilon && w >= (a - b).abs()),
            EdgeMetric::Mix { epsilon } => prop_assert_eq!(w, len * (a - b).abs().max(epsilon)),
        }
    }

    #[test]
    fn networks_are_connected_and_symmetric(kind in kind(), n in 2usize..120, k in 1usize..9, seed in any::<u64>()) {
        let g = build_network(build_deployment(kind, n, seed).unwrap(), k).unwrap();
        prop_assert!(g.is_connected());
        for d in g.devices() {
            prop_assert!(g.degree(d) >= k.min(n - 1));
            for l in g.neighbours(d) {
                prop_assert!(l.peer != d);
                prop_assert_eq!(g.edge_length(l.peer, d), Some(l.length));
            }
        }
    }

    #[test]
    fn region_count_times_size_is_n(leaders in prop::collection::vec(0u32..10, 1..60)) {
        // make every chosen leader lead itself
        let n = leaders.len() as u32;
        let mut of: Vec<DeviceId> = leaders.iter().map(|&l| DeviceId(l.min(n - 1))).collect();
        for i in 0..of.len() {
            let l = of[i];
            of[l.index()] = l;
        }
        let p = RegionPartition::group(of);
        let signals: Vec<f64> = (0..n).map(f64::from).collect();
        let row = partition_metrics(&p, &signals, 0.0);
        prop_assert!((row.region_count as f64 * row.mean_region_size - f64::from(n)).abs() < 1e-9);
        prop_assert!(row.sigma_of_means >= 0.0 && row.mean_of_sigmas >= 0.0 && row.sigma_of_sigmas >= 0.0);
    }
}
