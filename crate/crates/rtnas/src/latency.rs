//! Analytic latency model: expected edge latency under the relaxation,
//! cell latency as longest path plus the scaling constant, network latency
//! through layer marginals, discrete-architecture latency, and throughput.
//!
//! Expectations compose exactly as the estimator is defined: per-edge
//! latencies are averaged under the joint mixture weights first, then the
//! longest path runs over the expected edges. Decoded networks are costed
//! sequentially per layer with overlapping cells counted once.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::relaxation::{self, slot_index, MixtureWeights};
use crate::supernet::{ArchParams, CellId, NodeId, OpId, SupernetTopology};

/// Cost tables for the analytic model: per-op per-scale latencies, the
/// per-cell scaling constant, and the dimensionless throughput divisor.
#[derive(Clone, Debug)]
pub struct LatencyModel {
    op_latency: Vec<Vec<f64>>,
    cell_scaling: Vec<f64>,
    pub pipeline_overlap: f64,
}

impl LatencyModel {
    /// Copy the cost tables out of the topology's op specs and templates.
    pub fn from_topology(topo: &SupernetTopology, pipeline_overlap: f64) -> Result<LatencyModel> {
        if !pipeline_overlap.is_finite() || pipeline_overlap < 1.0 {
            return Err(Error::Config(format!(
                "pipeline_overlap must be >= 1, got {pipeline_overlap}"
            )));
        }
        Ok(LatencyModel {
            op_latency: topo.ops.iter().map(|o| o.latency_ms.clone()).collect(),
            cell_scaling: topo
                .cells
                .iter()
                .map(|c| c.template.scaling_latency_ms)
                .collect(),
            pipeline_overlap,
        })
    }

    pub fn op_latency(&self, op: OpId, scale: usize) -> f64 {
        self.op_latency[op.0][scale]
    }

    pub fn cell_scaling(&self, cell: CellId) -> f64 {
        self.cell_scaling[cell.0]
    }

    /// Overlay measured kernel timings from a plain tabular profile:
    /// one `op_id scale latency_ms` row per line, `#` comments allowed.
    pub fn apply_profile_table(
        &mut self,
        topo: &SupernetTopology,
        text: &str,
        path: &str,
    ) -> Result<()> {
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let row = raw.trim();
            if row.is_empty() || row.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = row.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(Error::Malformed {
                    path: path.into(),
                    line,
                    msg: format!("expected `op scale latency_ms`, got {} fields", fields.len()),
                });
            }
            let op = topo
                .ops
                .iter()
                .position(|o| o.id == fields[0])
                .ok_or_else(|| Error::Malformed {
                    path: path.into(),
                    line,
                    msg: format!("unknown op `{}`", fields[0]),
                })?;
            let scale: usize = fields[1].parse().map_err(|_| Error::Malformed {
                path: path.into(),
                line,
                msg: format!("bad scale `{}`", fields[1]),
            })?;
            if scale >= topo.n_scales {
                return Err(Error::Malformed {
                    path: path.into(),
                    line,
                    msg: format!("scale {scale} outside 0..{}", topo.n_scales),
                });
            }
            let lat: f64 = fields[2].parse().map_err(|_| Error::Malformed {
                path: path.into(),
                line,
                msg: format!("bad latency `{}`", fields[2]),
            })?;
            if !lat.is_finite() || lat < 0.0 {
                return Err(Error::Malformed {
                    path: path.into(),
                    line,
                    msg: "latency must be finite and >= 0".into(),
                });
            }
            self.op_latency[op][scale] = lat;
        }
        Ok(())
    }
}

/// One chosen (source, op) per produced tensor of every cell.
#[derive(Clone, Debug, PartialEq)]
pub struct Selections {
    per_cell: Vec<Vec<(usize, OpId)>>,
}

impl Selections {
    pub fn new(per_cell: Vec<Vec<(usize, OpId)>>) -> Selections {
        Selections { per_cell }
    }

    /// Selection for tensor `i` (1-based) of a cell.
    pub fn get(&self, cell: CellId, tensor: usize) -> (usize, OpId) {
        self.per_cell[cell.0][tensor - 1]
    }

    pub fn cell_row(&self, cell: CellId) -> &[(usize, OpId)] {
        &self.per_cell[cell.0]
    }

    pub fn set(&mut self, cell: CellId, tensor: usize, sel: (usize, OpId)) {
        self.per_cell[cell.0][tensor - 1] = sel;
    }

    /// Placeholder selections (source 0, first op) for every cell.
    pub fn uniform_default(topo: &SupernetTopology) -> Selections {
        Selections {
            per_cell: topo
                .cells
                .iter()
                .map(|c| vec![(0, c.template.op_set[0]); c.template.n_tensors])
                .collect(),
        }
    }
}

/// Longest-path working data for one cell under expected edge latencies.
#[derive(Clone, Debug)]
pub struct CellLatencyDetail {
    /// `edge_lat[i-1][j]`: expected latency of the edge from tensor `j`
    /// into tensor `i`.
    pub edge_lat: Vec<Vec<f64>>,
    /// Longest-path distance from `X_0` to each tensor.
    pub dist: Vec<f64>,
    /// Argmax predecessor per produced tensor (ties take the smallest
    /// source, which fixes the subgradient deterministically).
    pub pred: Vec<usize>,
    /// Longest path to `X_N` plus the scaling constant.
    pub latency_ms: f64,
}

/// Expected cell latency with its longest-path internals exposed for the
/// gradient.
pub fn expected_cell_latency_detail(
    topo: &SupernetTopology,
    cell_id: CellId,
    weights: &MixtureWeights,
    model: &LatencyModel,
) -> CellLatencyDetail {
    let cell = topo.cell(cell_id);
    let n = cell.template.n_tensors;
    let n_ops = cell.template.op_set.len();
    let mut edge_lat = Vec::with_capacity(n);
    for tensor in 1..=n {
        let w = weights.group(cell_id, tensor);
        let mut row = vec![0.0; tensor];
        for (source, lat) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (op_pos, &op) in cell.template.op_set.iter().enumerate() {
                acc += w[slot_index(n_ops, source, op_pos)] * model.op_latency(op, cell.in_scale);
            }
            *lat = acc;
        }
        edge_lat.push(row);
    }
    let mut dist = vec![0.0; n + 1];
    let mut pred = vec![0; n];
    for tensor in 1..=n {
        let mut best = f64::NEG_INFINITY;
        let mut best_j = 0;
        for j in 0..tensor {
            let d = dist[j] + edge_lat[tensor - 1][j];
            if d > best {
                best = d;
                best_j = j;
            }
        }
        dist[tensor] = best;
        pred[tensor - 1] = best_j;
    }
    CellLatencyDetail {
        latency_ms: dist[n] + model.cell_scaling(cell_id),
        edge_lat,
        dist,
        pred,
    }
}

/// Expected latency of one cell: longest path over expected edge
/// latencies, plus the scaling constant.
pub fn expected_cell_latency(
    topo: &SupernetTopology,
    cell_id: CellId,
    weights: &MixtureWeights,
    model: &LatencyModel,
) -> f64 {
    expected_cell_latency_detail(topo, cell_id, weights, model).latency_ms
}

/// Latency of a decoded cell: longest path where the selected edge of each
/// tensor carries its op latency and the remaining index-order edges are
/// free. Every produced tensor feeds the trailing scaling op, so the cell
/// finishes no earlier than any tensor; this is exactly the one-hot limit
/// of [`expected_cell_latency`].
pub fn discrete_cell_latency(
    topo: &SupernetTopology,
    cell_id: CellId,
    selection: &[(usize, OpId)],
    model: &LatencyModel,
) -> Result<f64> {
    let cell = topo.cell(cell_id);
    let n = cell.template.n_tensors;
    if selection.len() != n {
        return Err(Error::MalformedSelection(format!(
            "cell {} needs {} selections, got {}",
            cell.name,
            n,
            selection.len()
        )));
    }
    let mut dist = vec![0.0; n + 1];
    for tensor in 1..=n {
        let (source, op) = selection[tensor - 1];
        if source >= tensor {
            return Err(Error::MalformedSelection(format!(
                "cell {} tensor {} selects source {} (must be earlier)",
                cell.name, tensor, source
            )));
        }
        if !cell.template.op_set.contains(&op) {
            return Err(Error::MalformedSelection(format!(
                "cell {} tensor {} selects op outside the cell's op set",
                cell.name, tensor
            )));
        }
        let mut best = dist[source] + model.op_latency(op, cell.in_scale);
        for &earlier in &dist[..tensor] {
            best = best.max(earlier);
        }
        dist[tensor] = best;
    }
    Ok(dist[n] + model.cell_scaling(cell_id))
}

/// Probability of each cell being covered by a sampled end-to-end path.
#[derive(Clone, Debug)]
pub struct LayerMarginals {
    /// Indexed by `CellId`.
    pub k: Vec<f64>,
}

impl LayerMarginals {
    /// Per-layer sums; each must be 1 for a well-formed topology.
    pub fn layer_sums(&self, topo: &SupernetTopology) -> Vec<f64> {
        (1..=topo.n_layers)
            .map(|l| topo.cells_in_layer(l).iter().map(|&c| self.k[c.0]).sum())
            .collect()
    }
}

/// Forward probability flow with the given per-edge transition
/// probabilities.
pub fn marginals_from_probs(topo: &SupernetTopology, sigma: &[f64]) -> LayerMarginals {
    let mut node_prob = vec![0.0; topo.n_nodes()];
    node_prob[topo.input_node().0] = 1.0;
    for node in 1..topo.n_nodes() {
        let mut acc = 0.0;
        for &e in topo.in_edges(NodeId(node)) {
            acc += node_prob[topo.edge(e).from.0] * sigma[e.0];
        }
        node_prob[node] = acc;
    }
    LayerMarginals {
        k: (0..topo.n_cells())
            .map(|c| node_prob[topo.node_of_cell(CellId(c)).0])
            .collect(),
    }
}

/// Layer marginals under the softmax-normalized transition coefficients:
/// the input pseudo-cell has probability one and each cell accumulates
/// predecessor probability times transition weight.
pub fn layer_marginals(topo: &SupernetTopology, params: &ArchParams) -> LayerMarginals {
    let sigma = relaxation::transition_probs(params, topo);
    marginals_from_probs(topo, &sigma)
}

/// Expected end-to-end latency: marginal-weighted sum of expected cell
/// latencies over all layers.
pub fn expected_network_latency(
    topo: &SupernetTopology,
    params: &ArchParams,
    model: &LatencyModel,
) -> f64 {
    let weights = relaxation::mixture_weights(params, topo);
    let marginals = layer_marginals(topo, params);
    (0..topo.n_cells())
        .map(|c| marginals.k[c] * expected_cell_latency(topo, CellId(c), &weights, model))
        .sum()
}

/// Latency of a decoded multi-path network: union the cells across all
/// paths (overlapping segments count once) and sum their discrete
/// latencies layer by layer.
pub fn discrete_network_latency(
    topo: &SupernetTopology,
    paths: &[&[CellId]],
    selections: &Selections,
    model: &LatencyModel,
) -> Result<f64> {
    let mut cells: BTreeSet<CellId> = BTreeSet::new();
    for p in paths {
        cells.extend(p.iter().copied());
    }
    let mut total = 0.0;
    for &c in &cells {
        total += discrete_cell_latency(topo, c, selections.cell_row(c), model)?;
    }
    Ok(total)
}

/// Pipelined inverse-latency throughput model, in frames per second.
pub fn throughput(latency_ms: f64, model: &LatencyModel) -> Result<f64> {
    if latency_ms.is_nan() || latency_ms <= 0.0 {
        return Err(Error::DegenerateLatency(latency_ms));
    }
    Ok(1000.0 * model.pipeline_overlap / latency_ms)
}
