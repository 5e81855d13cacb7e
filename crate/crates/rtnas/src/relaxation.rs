//! Continuous relaxation: joint softmax mixture weights over
//! (input, operation) pairs, the synthetic surrogate accuracy loss, and
//! analytic gradients of the total loss with respect to all coefficients.
//!
//! Connections and operations are searched jointly: for each produced
//! tensor the softmax runs over every (source, op) pair at once, not as two
//! separate softmaxes, which keeps the coefficient gradients from
//! vanishing as the tensor array deepens.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::latency::{self, LatencyModel, Selections};
use crate::rng::substream;
use crate::search::LossConfig;
use crate::supernet::{ArchParams, CellCoeff, CellId, SupernetTopology};

/// One softmax group: the weights feeding a single produced tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct GroupKey {
    pub cell: CellId,
    pub tensor: usize,
}

/// Slot index of a (source, op) pair inside a group, with sources ordered
/// first and ops in template order within each source.
pub fn slot_index(n_ops: usize, source: usize, op_pos: usize) -> usize {
    source * n_ops + op_pos
}

/// Inverse of [`slot_index`].
pub fn slot_decode(n_ops: usize, slot: usize) -> (usize, usize) {
    (slot / n_ops, slot % n_ops)
}

/// Softmax mixture weights per (cell, produced tensor). Each group sums to
/// one and every weight is strictly positive.
#[derive(Clone, Debug)]
pub struct MixtureWeights {
    pub groups: BTreeMap<GroupKey, Vec<f64>>,
}

impl MixtureWeights {
    pub fn group(&self, cell: CellId, tensor: usize) -> &[f64] {
        &self.groups[&GroupKey { cell, tensor }]
    }
}

fn softmax_into(logits: &[f64], out: &mut Vec<f64>) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    out.clear();
    let mut sum = 0.0;
    for &v in logits {
        let e = (v - max).exp();
        out.push(e);
        sum += e;
    }
    for w in out.iter_mut() {
        *w /= sum;
    }
}

/// Joint softmax over all (source, op) pairs of each produced tensor.
pub fn mixture_weights(params: &ArchParams, topo: &SupernetTopology) -> MixtureWeights {
    let mut groups = BTreeMap::new();
    let mut logits = Vec::new();
    let mut weights = Vec::new();
    for (c, cell) in topo.cells.iter().enumerate() {
        let n_ops = cell.template.op_set.len();
        for tensor in 1..=cell.template.n_tensors {
            logits.clear();
            logits.resize(tensor * n_ops, 0.0);
            for source in 0..tensor {
                for (op_pos, &op) in cell.template.op_set.iter().enumerate() {
                    let key = CellCoeff {
                        cell: CellId(c),
                        tensor,
                        source,
                        op,
                    };
                    logits[slot_index(n_ops, source, op_pos)] = params.cell_coeffs[&key];
                }
            }
            softmax_into(&logits, &mut weights);
            groups.insert(
                GroupKey {
                    cell: CellId(c),
                    tensor,
                },
                weights.clone(),
            );
        }
    }
    MixtureWeights { groups }
}

/// Per-edge transition probabilities: softmax over each node's outgoing
/// transition coefficients. Indexed by `EdgeId`.
pub fn transition_probs(params: &ArchParams, topo: &SupernetTopology) -> Vec<f64> {
    let mut probs = vec![0.0; topo.edges.len()];
    let mut logits = Vec::new();
    let mut weights = Vec::new();
    for node in 0..topo.n_nodes() {
        let out = topo.out_edges(crate::supernet::NodeId(node));
        if out.is_empty() {
            continue;
        }
        logits.clear();
        for &e in out {
            logits.push(params.transition_coeffs[&e]);
        }
        softmax_into(&logits, &mut weights);
        for (i, &e) in out.iter().enumerate() {
            probs[e.0] = weights[i];
        }
    }
    probs
}

/// Synthetic stand-in for the trained network's accuracy loss: a smooth
/// quadratic alignment between mixture weights and an ideal target
/// profile. Shares the exact coefficient-to-weight path of the real
/// search, so gradients through the relaxation are fully exercised.
#[derive(Clone, Debug)]
pub struct SurrogateModel {
    pub targets: BTreeMap<GroupKey, Vec<f64>>,
    pub sharpness: f64,
}

impl SurrogateModel {
    /// Random target profiles: per slot, a logit of the op's quality plus
    /// Gaussian noise, softmax-normalized per group. Ops with higher
    /// quality attract more target mass.
    pub fn generate(topo: &SupernetTopology, sharpness: f64, noise: f64, seed: u64) -> SurrogateModel {
        let mut rng = substream(seed, "surrogate");
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mut targets = BTreeMap::new();
        let mut logits = Vec::new();
        let mut probs = Vec::new();
        for (c, cell) in topo.cells.iter().enumerate() {
            let n_ops = cell.template.op_set.len();
            for tensor in 1..=cell.template.n_tensors {
                logits.clear();
                for _source in 0..tensor {
                    for &op in &cell.template.op_set {
                        let z: f64 = normal.sample(&mut rng);
                        logits.push(topo.op(op).quality + noise * z);
                    }
                }
                debug_assert_eq!(logits.len(), tensor * n_ops);
                softmax_into(&logits, &mut probs);
                targets.insert(
                    GroupKey {
                        cell: CellId(c),
                        tensor,
                    },
                    probs.clone(),
                );
            }
        }
        SurrogateModel { targets, sharpness }
    }

    /// Uniform target profiles: the fully symmetric surrogate whose
    /// minimum sits at uniform mixture weights.
    pub fn uniform(topo: &SupernetTopology, sharpness: f64) -> SurrogateModel {
        let mut targets = BTreeMap::new();
        for (c, cell) in topo.cells.iter().enumerate() {
            let n_ops = cell.template.op_set.len();
            for tensor in 1..=cell.template.n_tensors {
                let len = tensor * n_ops;
                targets.insert(
                    GroupKey {
                        cell: CellId(c),
                        tensor,
                    },
                    vec![1.0 / len as f64; len],
                );
            }
        }
        SurrogateModel { targets, sharpness }
    }

    /// Build from explicit per-group target rows, checking coverage and
    /// normalization.
    pub fn from_groups(
        topo: &SupernetTopology,
        sharpness: f64,
        groups: BTreeMap<GroupKey, Vec<f64>>,
    ) -> Result<SurrogateModel> {
        let model = SurrogateModel {
            targets: groups,
            sharpness,
        };
        model.validate(topo)?;
        Ok(model)
    }

    pub fn validate(&self, topo: &SupernetTopology) -> Result<()> {
        if self.sharpness <= 0.0 || !self.sharpness.is_finite() {
            return Err(Error::Config("surrogate sharpness must be positive".into()));
        }
        let mut expected = BTreeSet::new();
        for (c, cell) in topo.cells.iter().enumerate() {
            for tensor in 1..=cell.template.n_tensors {
                expected.insert(GroupKey {
                    cell: CellId(c),
                    tensor,
                });
            }
        }
        let got: BTreeSet<GroupKey> = self.targets.keys().copied().collect();
        if expected != got {
            return Err(Error::KeyMismatch(
                "surrogate target groups do not cover the topology".into(),
            ));
        }
        for (k, row) in &self.targets {
            let cell = topo.cell(k.cell);
            let want = k.tensor * cell.template.op_set.len();
            if row.len() != want {
                return Err(Error::KeyMismatch(format!(
                    "surrogate group {}/{} has {} entries, expected {}",
                    cell.name,
                    k.tensor,
                    row.len(),
                    want
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 || row.iter().any(|&t| t.is_nan() || t < 0.0 || !t.is_finite()) {
                return Err(Error::Config(format!(
                    "surrogate group {}/{} is not a probability profile (sum {sum})",
                    cell.name, k.tensor
                )));
            }
        }
        Ok(())
    }
}

/// Quadratic alignment loss: `sharpness * sum (w - t)^2` over every slot.
/// Zero exactly when the mixture equals the target profile.
pub fn surrogate_loss(weights: &MixtureWeights, model: &SurrogateModel) -> Result<f64> {
    if weights.groups.len() != model.targets.len() {
        return Err(Error::KeyMismatch(format!(
            "{} weight groups vs {} target groups",
            weights.groups.len(),
            model.targets.len()
        )));
    }
    let mut acc = 0.0;
    for ((kw, w), (kt, t)) in weights.groups.iter().zip(model.targets.iter()) {
        if kw != kt || w.len() != t.len() {
            return Err(Error::KeyMismatch(format!(
                "weight group {:?} does not line up with target group {:?}",
                kw, kt
            )));
        }
        for (wi, ti) in w.iter().zip(t.iter()) {
            let d = wi - ti;
            acc += d * d;
        }
    }
    Ok(model.sharpness * acc)
}

/// Target mass captured by a decoded network: for every cell in the
/// network, the target probability of each selected (source, op) slot,
/// summed. Higher is better; more cells can only add mass.
pub fn network_score(
    topo: &SupernetTopology,
    model: &SurrogateModel,
    cells: &BTreeSet<CellId>,
    selections: &Selections,
) -> f64 {
    let mut score = 0.0;
    for &c in cells {
        let cell = topo.cell(c);
        let n_ops = cell.template.op_set.len();
        for tensor in 1..=cell.template.n_tensors {
            let (source, op) = selections.get(c, tensor);
            let op_pos = cell
                .template
                .op_set
                .iter()
                .position(|&o| o == op)
                .expect("selection op must be in the cell's op set");
            let t = &model.targets[&GroupKey { cell: c, tensor }];
            score += t[slot_index(n_ops, source, op_pos)];
        }
    }
    score
}

/// Loss value broken into the terms of the search objective.
#[derive(Clone, Copy, Debug)]
pub struct LossEval {
    pub la: f64,
    pub lt_ms: f64,
    pub product: f64,
    pub penalty: f64,
    pub total: f64,
    pub clamped: bool,
}

/// Evaluate the full objective at one coefficient setting.
pub fn evaluate_total(
    params: &ArchParams,
    topo: &SupernetTopology,
    model: &SurrogateModel,
    lat_model: &LatencyModel,
    loss_cfg: &LossConfig,
) -> Result<LossEval> {
    let weights = mixture_weights(params, topo);
    let la = surrogate_loss(&weights, model)?;
    let lt = latency::expected_network_latency(topo, params, lat_model);
    let terms = crate::search::loss_terms(la, lt, loss_cfg);
    Ok(LossEval {
        la,
        lt_ms: lt,
        product: terms.product,
        penalty: terms.penalty,
        total: terms.total,
        clamped: terms.clamped,
    })
}

/// Analytic gradient of the total loss with respect to every coefficient.
///
/// Cell coefficients see two terms: the softmax Jacobian of the alignment
/// loss times `L_t`, and the latency path `(L_a + penalty') * k_c *
/// d(cell latency)/dv`, where the cell-latency derivative follows the
/// argmax longest path. Transition coefficients see the marginal-flow
/// adjoint: `d L_t / d t_e = k_u * sigma_e * (a[v] - sum sigma a)`, with
/// `a[v]` the expected remaining latency from node `v` on.
pub fn grad_arch_params(
    params: &ArchParams,
    topo: &SupernetTopology,
    model: &SurrogateModel,
    lat_model: &LatencyModel,
    loss_cfg: &LossConfig,
) -> Result<ArchParams> {
    let weights = mixture_weights(params, topo);
    let la = surrogate_loss(&weights, model)?;
    let sigma = transition_probs(params, topo);
    let marginals = latency::marginals_from_probs(topo, &sigma);
    let details: Vec<latency::CellLatencyDetail> = (0..topo.n_cells())
        .map(|c| latency::expected_cell_latency_detail(topo, CellId(c), &weights, lat_model))
        .collect();
    let lt: f64 = (0..topo.n_cells())
        .map(|c| marginals.k[c] * details[c].latency_ms)
        .sum();
    let terms = crate::search::loss_terms(la, lt, loss_cfg);
    // Beyond the clamp the penalty is treated as a constant, so its
    // gradient contribution is zero there.
    let penalty_slope = if terms.clamped {
        0.0
    } else {
        terms.penalty / loss_cfg.penalty_temp_ms
    };
    let lat_factor = la + penalty_slope;

    let mut grad = params.zeros_like();

    for (c, cell) in topo.cells.iter().enumerate() {
        let cid = CellId(c);
        let n_ops = cell.template.op_set.len();
        let n = cell.template.n_tensors;
        let det = &details[c];
        let k_c = marginals.k[c];
        // Predecessor of each tensor along the argmax longest path.
        let mut on_path: Vec<Option<usize>> = vec![None; n + 1];
        let mut t = n;
        while t != 0 {
            let p = det.pred[t - 1];
            on_path[t] = Some(p);
            t = p;
        }
        for tensor in 1..=n {
            let key = GroupKey { cell: cid, tensor };
            let w = &weights.groups[&key];
            let targets = &model.targets[&key];
            let d: f64 = w
                .iter()
                .zip(targets.iter())
                .map(|(wi, ti)| (wi - ti) * wi)
                .sum();
            let pred = on_path[tensor];
            let pred_edge_lat = pred.map(|j| det.edge_lat[tensor - 1][j]);
            for slot in 0..tensor * n_ops {
                let (source, op_pos) = slot_decode(n_ops, slot);
                let op = cell.template.op_set[op_pos];
                let dla = 2.0 * model.sharpness * w[slot] * ((w[slot] - targets[slot]) - d);
                let mut dcell = 0.0;
                if let (Some(j_hat), Some(el)) = (pred, pred_edge_lat) {
                    let direct = if source == j_hat {
                        lat_model.op_latency(op, cell.in_scale)
                    } else {
                        0.0
                    };
                    dcell = w[slot] * (direct - el);
                }
                let g = lt * dla + lat_factor * k_c * dcell;
                *grad
                    .cell_coeffs
                    .get_mut(&CellCoeff {
                        cell: cid,
                        tensor,
                        source,
                        op,
                    })
                    .expect("gradient key mirrors params") = g;
            }
        }
    }

    // Node probabilities and the expected-remaining-latency adjoint.
    let n_nodes = topo.n_nodes();
    let mut node_prob = vec![0.0; n_nodes];
    node_prob[topo.input_node().0] = 1.0;
    for node in 1..n_nodes {
        let mut acc = 0.0;
        for &e in topo.in_edges(crate::supernet::NodeId(node)) {
            acc += node_prob[topo.edge(e).from.0] * sigma[e.0];
        }
        node_prob[node] = acc;
    }
    let mut adjoint = vec![0.0; n_nodes];
    for node in (0..n_nodes).rev() {
        let own = topo
            .cell_of_node(crate::supernet::NodeId(node))
            .map_or(0.0, |c| details[c.0].latency_ms);
        let mut acc = own;
        for &e in topo.out_edges(crate::supernet::NodeId(node)) {
            acc += sigma[e.0] * adjoint[topo.edge(e).to.0];
        }
        adjoint[node] = acc;
    }
    debug_assert!((adjoint[topo.input_node().0] - lt).abs() <= 1e-9 * (1.0 + lt.abs()));

    for node in 0..n_nodes {
        let out = topo.out_edges(crate::supernet::NodeId(node));
        if out.is_empty() {
            continue;
        }
        let mean_after: f64 = out
            .iter()
            .map(|&e| sigma[e.0] * adjoint[topo.edge(e).to.0])
            .sum();
        for &e in out {
            let dlt = node_prob[node] * sigma[e.0] * (adjoint[topo.edge(e).to.0] - mean_after);
            *grad
                .transition_coeffs
                .get_mut(&e)
                .expect("gradient key mirrors params") = lat_factor * dlt;
        }
    }

    Ok(grad)
}

/// Deterministic generator of the [`EdgeId`]-indexed log transition
/// probabilities, used by path scoring and k-best decoding.
pub fn transition_log_probs(params: &ArchParams, topo: &SupernetTopology) -> Vec<f64> {
    let mut log_probs = vec![0.0; topo.edges.len()];
    let mut logits = Vec::new();
    for node in 0..topo.n_nodes() {
        let out = topo.out_edges(crate::supernet::NodeId(node));
        if out.is_empty() {
            continue;
        }
        logits.clear();
        for &e in out {
            logits.push(params.transition_coeffs[&e]);
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        for (i, &e) in out.iter().enumerate() {
            log_probs[e.0] = logits[i] - lse;
        }
    }
    log_probs
}

/// Random surrogate plus random coefficients for a topology; shared by the
/// gradient-check corpus and several property tests.
pub fn random_instance(
    topo: &SupernetTopology,
    seed: u64,
    coeff_scale: f64,
    noise: f64,
) -> (ArchParams, SurrogateModel) {
    let mut rng = substream(seed, "instance");
    let mut params = ArchParams::init(topo, crate::supernet::InitPolicy::Zeros, seed);
    for v in params.cell_coeffs.values_mut() {
        *v = (rng.gen::<f64>() * 2.0 - 1.0) * coeff_scale;
    }
    for v in params.transition_coeffs.values_mut() {
        *v = (rng.gen::<f64>() * 2.0 - 1.0) * coeff_scale;
    }
    let model = SurrogateModel::generate(topo, 1.0, noise, seed ^ 0x9e37_79b9);
    (params, model)
}
