//! Uniform random sampling of discrete architectures: one cell per layer
//! through uniform transitions, one (source, op) per tensor uniformly.

use std::collections::BTreeSet;

use rand::Rng;

use crate::error::Result;
use crate::latency::{self, LatencyModel, Selections};
use crate::pareto::ParetoPoint;
use crate::relaxation::{self, SurrogateModel};
use crate::rng::substream;
use crate::supernet::{CellId, SupernetTopology};

/// One sampled single-path architecture with its evaluated point.
#[derive(Clone, Debug)]
pub struct RandomSample {
    pub path: Vec<CellId>,
    pub selections: Selections,
    pub point: ParetoPoint,
}

/// Draw `n` architectures and evaluate score, latency and throughput for
/// each. Deterministic for a fixed seed.
pub fn sample_architectures(
    topo: &SupernetTopology,
    model: &LatencyModel,
    surrogate: &SurrogateModel,
    n: usize,
    seed: u64,
) -> Result<Vec<RandomSample>> {
    let mut rng = substream(seed, "sampling");
    let mut out = Vec::with_capacity(n);
    for idx in 0..n {
        let mut path = Vec::with_capacity(topo.n_layers);
        let mut node = topo.input_node();
        while node != topo.output_node() {
            let edges = topo.out_edges(node);
            let e = edges[rng.gen_range(0..edges.len())];
            node = topo.edge(e).to;
            if let Some(c) = topo.cell_of_node(node) {
                path.push(c);
            }
        }
        let mut selections = Selections::uniform_default(topo);
        for &c in &path {
            let cell = topo.cell(c);
            let n_ops = cell.template.op_set.len();
            for tensor in 1..=cell.template.n_tensors {
                let slot = rng.gen_range(0..tensor * n_ops);
                let (source, op_pos) = relaxation::slot_decode(n_ops, slot);
                selections.set(c, tensor, (source, cell.template.op_set[op_pos]));
            }
        }
        let latency_ms =
            latency::discrete_network_latency(topo, &[&path], &selections, model)?;
        let cells: BTreeSet<CellId> = path.iter().copied().collect();
        let score = relaxation::network_score(topo, surrogate, &cells, &selections);
        let throughput_fps = latency::throughput(latency_ms, model)?;
        out.push(RandomSample {
            path,
            selections,
            point: ParetoPoint {
                id: format!("rand{idx:04}"),
                score,
                latency_ms,
                throughput_fps,
                source: "random".into(),
            },
        });
    }
    Ok(out)
}
