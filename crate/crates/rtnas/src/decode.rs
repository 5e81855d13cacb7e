//! Architecture derivation from converged coefficients: accumulated-weight
//! path scoring, the weight-greedy top-k decoder, and the genetic
//! algorithm that picks the set of paths with minimum merged-network
//! latency.
//!
//! Genes are legal end-to-end paths drawn from a pool of the top-weighted
//! paths; an individual is a sorted set of pool indices; fitness is the
//! latency of the union of its paths, so overlapping segments make
//! individuals cheaper.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::latency::{self, LatencyModel, Selections};
use crate::relaxation::{self, MixtureWeights};
use crate::rng::substream;
use crate::supernet::{ArchParams, CellId, NodeId, SupernetTopology};

/// Per-tensor argmax of the mixture weights; ties take the smallest slot.
pub fn argmax_selections(topo: &SupernetTopology, weights: &MixtureWeights) -> Selections {
    let mut selections = Selections::uniform_default(topo);
    for (c, cell) in topo.cells.iter().enumerate() {
        let n_ops = cell.template.op_set.len();
        for tensor in 1..=cell.template.n_tensors {
            let w = weights.group(CellId(c), tensor);
            let mut best = 0;
            for (slot, &v) in w.iter().enumerate() {
                if v > w[best] {
                    best = slot;
                }
            }
            let (source, op_pos) = relaxation::slot_decode(n_ops, best);
            selections.set(CellId(c), tensor, (source, cell.template.op_set[op_pos]));
        }
    }
    selections
}

/// An end-to-end cell sequence with its accumulated weight (log-probability
/// under the transition sampling model) and single-path latency.
#[derive(Clone, Debug, PartialEq)]
pub struct Path {
    pub cells: Vec<CellId>,
    pub weight: f64,
    pub latency_ms: f64,
}

/// Accumulated weight of a path: the sum of log transition probabilities
/// along its edges, including the hops from the input and to the output.
pub fn path_weight(topo: &SupernetTopology, params: &ArchParams, cells: &[CellId]) -> f64 {
    let log_probs = relaxation::transition_log_probs(params, topo);
    let mut weight = 0.0;
    let mut node = topo.input_node();
    for &c in cells {
        let to = topo.node_of_cell(c);
        let e = topo
            .out_edges(node)
            .iter()
            .find(|&&e| topo.edge(e).to == to)
            .expect("path must follow topology edges");
        weight += log_probs[e.0];
        node = to;
    }
    let e = topo
        .out_edges(node)
        .iter()
        .find(|&&e| topo.edge(e).to == topo.output_node())
        .expect("path must end at a final-layer cell");
    weight += log_probs[e.0];
    weight
}

/// Heap entry for best-first path decoding: `key` is the exact final
/// weight bound (accumulated weight plus best-to-go), so paths pop in
/// descending weight order; ties pop in lexicographic cell order.
struct Candidate {
    key: f64,
    weight: f64,
    node: NodeId,
    cells: Vec<CellId>,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key
            .total_cmp(&other.key)
            .then_with(|| other.cells.cmp(&self.cells))
    }
}

/// The `k` highest-weight paths, by best-first search over the layered DAG
/// with an exact to-go bound. Deterministic, with lexicographic
/// tie-breaks. Latency is the single-path discrete latency under the given
/// selections.
pub fn decode_topk_paths(
    topo: &SupernetTopology,
    params: &ArchParams,
    k: usize,
    model: &LatencyModel,
    selections: &Selections,
) -> Result<Vec<Path>> {
    let available = topo.path_count();
    if k as u128 > available {
        return Err(Error::Oversubscribed {
            requested: k,
            available,
        });
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let log_probs = relaxation::transition_log_probs(params, topo);
    // Best achievable log-weight from each node to the output.
    let mut to_go = vec![f64::NEG_INFINITY; topo.n_nodes()];
    to_go[topo.output_node().0] = 0.0;
    for node in (0..topo.n_nodes() - 1).rev() {
        let mut best = f64::NEG_INFINITY;
        for &e in topo.out_edges(NodeId(node)) {
            let v = log_probs[e.0] + to_go[topo.edge(e).to.0];
            if v > best {
                best = v;
            }
        }
        to_go[node] = best;
    }

    let mut heap = BinaryHeap::new();
    heap.push(Candidate {
        key: to_go[topo.input_node().0],
        weight: 0.0,
        node: topo.input_node(),
        cells: Vec::new(),
    });
    let mut out = Vec::with_capacity(k);
    while let Some(cand) = heap.pop() {
        if cand.node == topo.output_node() {
            let latency_ms =
                latency::discrete_network_latency(topo, &[&cand.cells], selections, model)?;
            out.push(Path {
                cells: cand.cells,
                weight: cand.weight,
                latency_ms,
            });
            if out.len() == k {
                break;
            }
            continue;
        }
        for &e in topo.out_edges(cand.node) {
            let to = topo.edge(e).to;
            let weight = cand.weight + log_probs[e.0];
            let mut cells = cand.cells.clone();
            if let Some(c) = topo.cell_of_node(to) {
                cells.push(c);
            }
            heap.push(Candidate {
                key: weight + to_go[to.0],
                weight,
                node: to,
                cells,
            });
        }
    }
    Ok(out)
}

/// The top paths by accumulated weight, in descending weight order; only
/// these genes exist during the evolution.
#[derive(Clone, Debug)]
pub struct GenePool {
    pub genes: Vec<Path>,
}

impl GenePool {
    pub fn len(&self) -> usize {
        self.genes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.genes.is_empty()
    }
}

/// Pool of the `capacity` highest-weight paths, latencies precomputed.
pub fn build_gene_pool(
    topo: &SupernetTopology,
    params: &ArchParams,
    capacity: usize,
    model: &LatencyModel,
    selections: &Selections,
) -> Result<GenePool> {
    if capacity == 0 {
        return Err(Error::Config("gene pool capacity must be >= 1".into()));
    }
    let genes = decode_topk_paths(topo, params, capacity, model, selections)?;
    Ok(GenePool { genes })
}

/// A network formed by `N_l` pool paths: strictly increasing gene indices
/// (the pool is weight-sorted, so index order is weight order), merged
/// latency, and the budget flag.
#[derive(Clone, Debug, PartialEq)]
pub struct Individual {
    pub gene_indices: Vec<usize>,
    pub fitness_latency_ms: f64,
    pub feasible: bool,
}

/// Everything needed to evaluate an individual.
pub struct EvalCtx<'a> {
    pub topo: &'a SupernetTopology,
    pub pool: &'a GenePool,
    pub model: &'a LatencyModel,
    pub selections: &'a Selections,
    pub budget_ms: f64,
}

impl<'a> EvalCtx<'a> {
    /// Evaluate a sorted index set: merged-network latency and budget flag.
    pub fn eval(&self, gene_indices: Vec<usize>) -> Individual {
        debug_assert!(gene_indices.windows(2).all(|w| w[0] < w[1]));
        let paths: Vec<&[CellId]> = gene_indices
            .iter()
            .map(|&i| self.pool.genes[i].cells.as_slice())
            .collect();
        let fitness_latency_ms =
            latency::discrete_network_latency(self.topo, &paths, self.selections, self.model)
                .expect("pool paths and selections are internally consistent");
        Individual {
            gene_indices,
            feasible: fitness_latency_ms <= self.budget_ms,
            fitness_latency_ms,
        }
    }

    /// The weight-greedy baseline: the top `n_l` pool paths.
    pub fn greedy(&self, n_l: usize) -> Individual {
        self.eval((0..n_l).collect())
    }
}

fn cmp_individual(a: &Individual, b: &Individual) -> Ordering {
    a.fitness_latency_ms
        .total_cmp(&b.fitness_latency_ms)
        .then_with(|| a.gene_indices.cmp(&b.gene_indices))
}

/// Single-cut crossover over the sorted index sequences. Children are
/// repaired to strictly increasing, distinct sequences: duplicates are
/// dropped and the gap filled with the displaced parent genes in weight
/// (pool index) order.
pub fn crossover(
    a: &Individual,
    b: &Individual,
    rng: &mut ChaCha8Rng,
    ctx: &EvalCtx,
) -> (Individual, Individual) {
    let n = a.gene_indices.len();
    debug_assert_eq!(n, b.gene_indices.len());
    if n <= 1 {
        return (a.clone(), b.clone());
    }
    let cut = rng.gen_range(1..n);
    (
        cross_at(a, b, cut, ctx),
        cross_at(b, a, cut, ctx),
    )
}

fn cross_at(head: &Individual, tail: &Individual, cut: usize, ctx: &EvalCtx) -> Individual {
    let n = head.gene_indices.len();
    let mut set: BTreeSet<usize> = head.gene_indices[..cut].iter().copied().collect();
    set.extend(tail.gene_indices[cut..].iter().copied());
    if set.len() < n {
        for &g in head.gene_indices.iter().chain(tail.gene_indices.iter()) {
            if set.len() == n {
                break;
            }
            set.insert(g);
        }
    }
    debug_assert_eq!(set.len(), n);
    ctx.eval(set.into_iter().collect())
}

/// Replace one uniformly chosen gene with a uniformly chosen pool gene not
/// already present, then re-sort and re-evaluate. Returns the individual
/// unchanged (flagged `false`) when the pool offers no replacement.
pub fn mutate(a: &Individual, rng: &mut ChaCha8Rng, ctx: &EvalCtx) -> (Individual, bool) {
    let n = a.gene_indices.len();
    if ctx.pool.len() <= n {
        return (a.clone(), false);
    }
    let pos = rng.gen_range(0..n);
    let absent: Vec<usize> = (0..ctx.pool.len())
        .filter(|g| a.gene_indices.binary_search(g).is_err())
        .collect();
    let replacement = absent[rng.gen_range(0..absent.len())];
    let mut indices = a.gene_indices.clone();
    indices[pos] = replacement;
    indices.sort_unstable();
    (ctx.eval(indices), true)
}

/// Genetic-algorithm knobs.
#[derive(Clone, Copy, Debug)]
pub struct GaConfig {
    pub population: usize,
    pub generations: usize,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    pub elitism: bool,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            population: 20,
            generations: 100,
            crossover_rate: 0.8,
            mutation_rate: 0.2,
            elitism: true,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population < 2 {
            return Err(Error::Config("GA population must be >= 2".into()));
        }
        if !(0.0..=1.0).contains(&self.crossover_rate) || !(0.0..=1.0).contains(&self.mutation_rate)
        {
            return Err(Error::Config("GA rates must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Evolution outcome with the best-so-far fitness trace, one entry per
/// generation.
#[derive(Clone, Debug)]
pub struct EvolveTrace {
    pub best: Individual,
    pub best_per_generation: Vec<f64>,
}

/// Evolve toward minimum merged-network latency. Selection is
/// fitness-proportional over inverse latency; elitism keeps the incumbent.
/// The greedy top-`n_l` individual is part of the initial population, so
/// the result never loses to the greedy baseline. Returns the best
/// feasible individual, or the best overall flagged infeasible when none
/// meets the budget.
pub fn evolve(ctx: &EvalCtx, ga: &GaConfig, n_l: usize, seed: u64) -> Result<Individual> {
    evolve_traced(ctx, ga, n_l, seed).map(|t| t.best)
}

pub fn evolve_traced(ctx: &EvalCtx, ga: &GaConfig, n_l: usize, seed: u64) -> Result<EvolveTrace> {
    ga.validate()?;
    if n_l == 0 {
        return Err(Error::Config("n_l must be >= 1".into()));
    }
    if ctx.pool.len() < n_l {
        return Err(Error::Oversubscribed {
            requested: n_l,
            available: ctx.pool.len() as u128,
        });
    }
    if ctx.pool.len() == n_l {
        // Only one legal individual: the whole pool.
        let only = ctx.eval((0..n_l).collect());
        return Ok(EvolveTrace {
            best_per_generation: vec![only.fitness_latency_ms],
            best: only,
        });
    }

    let mut rng = substream(seed, "ga");
    let mut population = Vec::with_capacity(ga.population);
    population.push(ctx.greedy(n_l));
    let mut deck: Vec<usize> = (0..ctx.pool.len()).collect();
    while population.len() < ga.population {
        deck.shuffle(&mut rng);
        let mut indices: Vec<usize> = deck[..n_l].to_vec();
        indices.sort_unstable();
        population.push(ctx.eval(indices));
    }

    let mut best = population
        .iter()
        .min_by(|a, b| cmp_individual(a, b))
        .expect("population is non-empty")
        .clone();
    let mut trace = Vec::with_capacity(ga.generations);
    for _gen in 0..ga.generations {
        let weights: Vec<f64> = population
            .iter()
            .map(|i| 1.0 / i.fitness_latency_ms.max(1e-9))
            .collect();
        let total: f64 = weights.iter().sum();
        let pick = |rng: &mut ChaCha8Rng| -> usize {
            let r = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            for (i, &w) in weights.iter().enumerate() {
                acc += w;
                if r < acc {
                    return i;
                }
            }
            weights.len() - 1
        };
        let mut next = Vec::with_capacity(ga.population);
        if ga.elitism {
            next.push(best.clone());
        }
        while next.len() < ga.population {
            let pa = pick(&mut rng);
            let pb = pick(&mut rng);
            let (mut c1, mut c2) = if rng.gen::<f64>() < ga.crossover_rate {
                crossover(&population[pa], &population[pb], &mut rng, ctx)
            } else {
                (population[pa].clone(), population[pb].clone())
            };
            if rng.gen::<f64>() < ga.mutation_rate {
                c1 = mutate(&c1, &mut rng, ctx).0;
            }
            if rng.gen::<f64>() < ga.mutation_rate {
                c2 = mutate(&c2, &mut rng, ctx).0;
            }
            next.push(c1);
            if next.len() < ga.population {
                next.push(c2);
            }
        }
        population = next;
        for ind in &population {
            if cmp_individual(ind, &best) == Ordering::Less {
                best = ind.clone();
            }
        }
        trace.push(best.fitness_latency_ms);
    }
    Ok(EvolveTrace {
        best,
        best_per_generation: trace,
    })
}
