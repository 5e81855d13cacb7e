//! Property tests for the structural invariants: softmax normalization and
//! shift invariance, loss monotonicity, frontier correctness against brute
//! force, overlap deduplication bounds and path-count agreement.

use std::collections::BTreeSet;

use proptest::prelude::*;

use rtnas::latency::{self, LatencyModel, Selections};
use rtnas::pareto::{frontier, ParetoPoint};
use rtnas::relaxation;
use rtnas::search::{total_loss, LossConfig};
use rtnas::supernet::{ArchParams, CellId, InitPolicy, OpId, SkeletonConfig, SupernetTopology};

fn grid(layers: usize, scales: usize, tensors: usize) -> SupernetTopology {
    let mut cfg = SkeletonConfig {
        layers,
        scales,
        tensors_per_cell: tensors,
        ..SkeletonConfig::default()
    };
    for op in &mut cfg.ops {
        op.latency_ms.truncate(scales);
        while op.latency_ms.len() < scales {
            let last = *op.latency_ms.last().unwrap();
            op.latency_ms.push(last / 2.0);
        }
    }
    SupernetTopology::build(&cfg).unwrap()
}

fn params_from_values(topo: &SupernetTopology, values: &[f64]) -> ArchParams {
    let mut params = ArchParams::init(topo, InitPolicy::Zeros, 0);
    let mut it = values.iter().cycle();
    for v in params.cell_coeffs.values_mut() {
        *v = *it.next().unwrap();
    }
    for v in params.transition_coeffs.values_mut() {
        *v = *it.next().unwrap();
    }
    params
}

proptest! {
    #[test]
    fn mixture_groups_normalize_and_shift_invariance(
        values in prop::collection::vec(-30.0f64..30.0, 8..64),
        shift in -40.0f64..40.0,
    ) {
        let topo = grid(2, 2, 2);
        let params = params_from_values(&topo, &values);
        let weights = relaxation::mixture_weights(&params, &topo);
        for row in weights.groups.values() {
            let sum: f64 = row.iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12);
            prop_assert!(row.iter().all(|&w| w > 0.0));
        }
        let mut shifted = params.clone();
        let keys: Vec<_> = shifted
            .cell_coeffs
            .keys()
            .filter(|k| k.cell == CellId(0) && k.tensor == 2)
            .copied()
            .collect();
        for k in keys {
            *shifted.cell_coeffs.get_mut(&k).unwrap() += shift;
        }
        let shifted_weights = relaxation::mixture_weights(&shifted, &topo);
        for (key, a) in &weights.groups {
            let b = &shifted_weights.groups[key];
            for (x, y) in a.iter().zip(b.iter()) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn loss_is_monotone_in_both_arguments(
        la in 0.01f64..10.0,
        lt in 0.1f64..100.0,
        d_la in 0.001f64..5.0,
        d_lt in 0.001f64..50.0,
        lambda in 0.0f64..200.0,
    ) {
        let cfg = LossConfig { lambda, latency_ub_ms: 50.0, penalty_temp_ms: 1.0 };
        let base = total_loss(la, lt, &cfg);
        // The L_a increment must be resolvable next to the penalty term,
        // otherwise strict monotonicity is below f64 resolution.
        prop_assume!(d_la * lt > base * 1e-12);
        prop_assert!(total_loss(la + d_la, lt, &cfg) > base);
        prop_assert!(total_loss(la, lt + d_lt, &cfg) > base);
    }

    #[test]
    fn frontier_agrees_with_pairwise_domination(
        raw in prop::collection::vec((0u8..20, 1u8..20), 1..60),
    ) {
        let points: Vec<ParetoPoint> = raw
            .iter()
            .enumerate()
            .map(|(i, &(s, l))| ParetoPoint {
                id: format!("p{i}"),
                score: s as f64 / 2.0,
                latency_ms: l as f64,
                throughput_fps: 1000.0 / l as f64,
                source: "random".into(),
            })
            .collect();
        let fast = frontier(&points);
        let brute: Vec<usize> = (0..points.len())
            .filter(|&i| {
                !(0..points.len()).any(|j| {
                    j != i
                        && points[j].score >= points[i].score
                        && points[j].latency_ms <= points[i].latency_ms
                        && (points[j].score > points[i].score
                            || points[j].latency_ms < points[i].latency_ms)
                })
            })
            .collect();
        prop_assert_eq!(fast, brute);
    }

    #[test]
    fn throughput_scales_inversely_with_latency(lat in 0.1f64..500.0) {
        let topo = grid(1, 1, 1);
        let model = LatencyModel::from_topology(&topo, 1.0).unwrap();
        let t1 = latency::throughput(lat, &model).unwrap();
        let t2 = latency::throughput(2.0 * lat, &model).unwrap();
        prop_assert!((t1 - 2.0 * t2).abs() <= 1e-9 * t1);
    }

    #[test]
    fn enumerated_paths_match_dp_count(
        layers in 1usize..5,
        scales in 1usize..4,
    ) {
        let topo = grid(layers, scales, 1);
        let count = topo.path_count();
        prop_assert!(count <= 100_000);
        let paths = topo.enumerate_paths(100_000).unwrap();
        prop_assert_eq!(paths.len() as u128, count);
    }

    #[test]
    fn merged_latency_never_exceeds_path_sum(
        pick in prop::collection::vec(0usize..29, 1..6),
        slots in prop::collection::vec(0usize..9, 64),
    ) {
        let topo = grid(4, 3, 3);
        prop_assume!(topo.path_count() == 29);
        let model = LatencyModel::from_topology(&topo, 1.0).unwrap();
        let all = topo.enumerate_paths(100).unwrap();
        let mut selections = Selections::uniform_default(&topo);
        let mut it = slots.iter().cycle();
        for c in 0..topo.n_cells() {
            let cell = topo.cell(CellId(c));
            let n_ops = cell.template.op_set.len();
            for tensor in 1..=cell.template.n_tensors {
                let slot = it.next().unwrap() % (tensor * n_ops);
                let (source, op_pos) = relaxation::slot_decode(n_ops, slot);
                selections.set(CellId(c), tensor, (source, OpId(op_pos)));
            }
        }
        let chosen: Vec<&[CellId]> = pick.iter().map(|&i| all[i].as_slice()).collect();
        let merged = latency::discrete_network_latency(&topo, &chosen, &selections, &model).unwrap();
        let sum: f64 = chosen
            .iter()
            .map(|p| latency::discrete_network_latency(&topo, &[p], &selections, &model).unwrap())
            .sum();
        prop_assert!(merged <= sum + 1e-9);
        // Equality exactly when the chosen paths are pairwise disjoint.
        let mut seen: BTreeSet<CellId> = BTreeSet::new();
        let mut disjoint = true;
        for p in &chosen {
            for &c in p.iter() {
                if !seen.insert(c) {
                    disjoint = false;
                }
            }
        }
        if disjoint {
            prop_assert!((merged - sum).abs() <= 1e-9);
        } else {
            prop_assert!(merged < sum - 1e-12);
        }
    }
}
