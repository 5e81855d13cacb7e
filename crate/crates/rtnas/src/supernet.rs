//! Two-level search space: cells as tensor DAGs with candidate operations,
//! arranged on a layered multi-scale grid, plus the relaxation coefficients
//! over both levels.
//!
//! A cell reads one input tensor `X_0` and produces `N` new tensors; tensor
//! `X_i` may draw from every earlier tensor `X_j` (`j < i`) through any
//! candidate operation, so the cell DAG is implicit in the index ordering.
//! At the network level, cells of the three types (expanding, non-scaling,
//! contracting) connect consecutive layers; a successor's input scale must
//! equal its predecessor's output scale, which pins the grid structure.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{substream, Fnv1a};

/// Index of a cell in [`SupernetTopology::cells`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellId(pub usize);

/// Index of an operation in [`SupernetTopology::ops`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OpId(pub usize);

/// Index of an edge in [`SupernetTopology::edges`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EdgeId(pub usize);

/// Graph node: 0 is the input pseudo-cell, `1 + c` is cell `c`, and the
/// last id is the output pseudo-cell. Pseudo-cells carry no latency and no
/// cell coefficients.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub usize);

/// What a cell does to the feature scale. Contracting halves the feature
/// size (one scale level coarser), expanding doubles it, non-scaling keeps
/// it. The variant order fixes all id tie-breaks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellType {
    Contracting,
    Expanding,
    NonScaling,
}

impl CellType {
    pub const ALL: [CellType; 3] = [CellType::Contracting, CellType::Expanding, CellType::NonScaling];

    pub fn letter(self) -> char {
        match self {
            CellType::Contracting => 'c',
            CellType::Expanding => 'e',
            CellType::NonScaling => 'n',
        }
    }

    /// Output scale for a cell of this type reading from `in_scale`, or
    /// `None` if the move would leave the declared scale range (the cell
    /// type is then simply absent at that position).
    pub fn out_scale(self, in_scale: usize, n_scales: usize) -> Option<usize> {
        match self {
            CellType::NonScaling => Some(in_scale),
            CellType::Contracting => {
                let s = in_scale + 1;
                (s < n_scales).then_some(s)
            }
            CellType::Expanding => in_scale.checked_sub(1),
        }
    }
}

/// A candidate operation: identity, family, surrogate quality and its
/// latency on each scale level (ms, finer scales first).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OperationSpec {
    pub id: String,
    #[serde(default)]
    pub kind: String,
    pub quality: f64,
    pub latency_ms: Vec<f64>,
}

/// Cell-internal structure shared by every instance at one grid position.
#[derive(Clone, Debug)]
pub struct CellTemplate {
    pub n_tensors: usize,
    pub op_set: Vec<OpId>,
    pub cell_type: CellType,
    pub scaling_latency_ms: f64,
}

/// One cell of the grid. `in_scale` is where its operations run; the
/// trailing scaling op moves the result to `out_scale`.
#[derive(Clone, Debug)]
pub struct Cell {
    pub name: String,
    pub layer: usize,
    pub in_scale: usize,
    pub out_scale: usize,
    pub template: CellTemplate,
}

impl Cell {
    pub fn cell_type(&self) -> CellType {
        self.template.cell_type
    }
}

/// Directed transition between consecutive layers (or from the input /
/// to the output pseudo-cell).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Edge {
    pub from: NodeId,
    pub to: NodeId,
}

/// Per-cell-type latency of the trailing scaling operation (ms).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingLatencies {
    #[serde(default)]
    pub expanding: f64,
    #[serde(default)]
    pub non_scaling: f64,
    #[serde(default)]
    pub contracting: f64,
}

impl Default for ScalingLatencies {
    fn default() -> Self {
        ScalingLatencies {
            expanding: 0.0,
            non_scaling: 0.0,
            contracting: 0.0,
        }
    }
}

impl ScalingLatencies {
    pub fn for_type(&self, t: CellType) -> f64 {
        match t {
            CellType::Expanding => self.expanding,
            CellType::NonScaling => self.non_scaling,
            CellType::Contracting => self.contracting,
        }
    }
}

fn default_path_cap() -> usize {
    1_000_000
}

/// Declarative description of the grid, ingested from the run config file.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkeletonConfig {
    pub layers: usize,
    pub scales: usize,
    pub tensors_per_cell: usize,
    #[serde(default)]
    pub input_scale: usize,
    pub ops: Vec<OperationSpec>,
    #[serde(default)]
    pub scaling_latency_ms: ScalingLatencies,
    #[serde(default = "default_path_cap")]
    pub path_cap: usize,
}

impl Default for SkeletonConfig {
    /// Default skeleton: 10 layers, 3 cell types per grid position, 3
    /// tensors per cell, 4 scale levels.
    fn default() -> Self {
        let scale = |base: f64| vec![base, base / 2.0, base / 4.0, base / 8.0];
        SkeletonConfig {
            layers: 10,
            scales: 4,
            tensors_per_cell: 3,
            input_scale: 0,
            ops: vec![
                OperationSpec {
                    id: "sep_conv".into(),
                    kind: "conv".into(),
                    quality: 1.0,
                    latency_ms: scale(8.0),
                },
                OperationSpec {
                    id: "dil_conv".into(),
                    kind: "conv".into(),
                    quality: 0.8,
                    latency_ms: scale(5.0),
                },
                OperationSpec {
                    id: "skip".into(),
                    kind: "skip".into(),
                    quality: 0.5,
                    latency_ms: scale(0.5),
                },
            ],
            scaling_latency_ms: ScalingLatencies {
                expanding: 1.0,
                non_scaling: 0.0,
                contracting: 0.5,
            },
            path_cap: default_path_cap(),
        }
    }
}

/// Bare cell description for [`SupernetTopology::from_parts`].
#[derive(Clone, Debug)]
pub struct CellSpec {
    pub layer: usize,
    pub in_scale: usize,
    pub out_scale: usize,
    pub cell_type: CellType,
    pub n_tensors: usize,
    pub scaling_latency_ms: f64,
}

/// The layered multi-scale grid of candidate cells and their legal
/// connections, with one input and one output pseudo-cell. Immutable after
/// construction.
#[derive(Clone, Debug)]
pub struct SupernetTopology {
    pub n_layers: usize,
    pub n_scales: usize,
    pub ops: Vec<OperationSpec>,
    pub cells: Vec<Cell>,
    pub edges: Vec<Edge>,
    out_edges: Vec<Vec<EdgeId>>,
    in_edges: Vec<Vec<EdgeId>>,
    cells_by_layer: Vec<Vec<CellId>>,
}

impl SupernetTopology {
    /// Build the grid from a skeleton description. Cells whose scaling move
    /// would leave the scale range are absent, and only cells reachable
    /// from the input are kept, so every cell lies on at least one
    /// end-to-end path.
    pub fn build(cfg: &SkeletonConfig) -> Result<Self> {
        validate_skeleton(cfg)?;
        let n_ops = cfg.ops.len();
        let op_set: Vec<OpId> = (0..n_ops).map(OpId).collect();

        let mut specs: Vec<CellSpec> = Vec::new();
        let mut avail = vec![false; cfg.scales];
        avail[cfg.input_scale] = true;
        for layer in 1..=cfg.layers {
            let mut produced = vec![false; cfg.scales];
            for in_scale in 0..cfg.scales {
                if !avail[in_scale] {
                    continue;
                }
                for ty in CellType::ALL {
                    if let Some(out_scale) = ty.out_scale(in_scale, cfg.scales) {
                        specs.push(CellSpec {
                            layer,
                            in_scale,
                            out_scale,
                            cell_type: ty,
                            n_tensors: cfg.tensors_per_cell,
                            scaling_latency_ms: cfg.scaling_latency_ms.for_type(ty),
                        });
                        produced[out_scale] = true;
                    }
                }
            }
            avail = produced;
        }

        let mut edges: Vec<(usize, usize)> = Vec::new();
        for (a, ca) in specs.iter().enumerate() {
            for (b, cb) in specs.iter().enumerate() {
                if cb.layer == ca.layer + 1 && cb.in_scale == ca.out_scale {
                    edges.push((a, b));
                }
            }
        }
        Self::from_parts(cfg.layers, cfg.scales, cfg.ops.clone(), op_set, specs, &edges)
    }

    /// Assemble a topology from explicit parts. The input pseudo-cell feeds
    /// every layer-1 cell and every layer-L cell feeds the output. Grid
    /// scale semantics are not enforced here; [`SupernetTopology::build`]
    /// guarantees them by construction.
    pub fn from_parts(
        n_layers: usize,
        n_scales: usize,
        ops: Vec<OperationSpec>,
        op_set: Vec<OpId>,
        mut specs: Vec<CellSpec>,
        cell_edges: &[(usize, usize)],
    ) -> Result<Self> {
        if n_layers == 0 {
            return Err(Error::InvalidSkeleton("need at least one layer".into()));
        }
        if specs.is_empty() {
            return Err(Error::InvalidSkeleton("no cells".into()));
        }

        // Canonical cell order: (layer, out_scale, cell_type). Remap edges.
        let mut order: Vec<usize> = (0..specs.len()).collect();
        order.sort_by_key(|&i| (specs[i].layer, specs[i].out_scale, specs[i].cell_type));
        let mut rank = vec![0usize; specs.len()];
        for (new, &old) in order.iter().enumerate() {
            rank[old] = new;
        }
        let mut sorted = Vec::with_capacity(specs.len());
        for &old in &order {
            sorted.push(specs[old].clone());
        }
        specs = sorted;

        let mut seen = BTreeMap::new();
        for (i, s) in specs.iter().enumerate() {
            if s.layer == 0 || s.layer > n_layers {
                return Err(Error::InvalidSkeleton(format!(
                    "cell layer {} outside 1..={}",
                    s.layer, n_layers
                )));
            }
            if s.in_scale >= n_scales || s.out_scale >= n_scales {
                return Err(Error::InvalidSkeleton("cell scale outside declared range".into()));
            }
            if seen.insert((s.layer, s.out_scale, s.cell_type), i).is_some() {
                return Err(Error::InvalidSkeleton(format!(
                    "duplicate cell at layer {} scale {} type {:?}",
                    s.layer, s.out_scale, s.cell_type
                )));
            }
        }

        let cells: Vec<Cell> = specs
            .iter()
            .map(|s| Cell {
                name: format!("L{:02}.S{}.{}", s.layer, s.out_scale, s.cell_type.letter()),
                layer: s.layer,
                in_scale: s.in_scale,
                out_scale: s.out_scale,
                template: CellTemplate {
                    n_tensors: s.n_tensors,
                    op_set: op_set.clone(),
                    cell_type: s.cell_type,
                    scaling_latency_ms: s.scaling_latency_ms,
                },
            })
            .collect();

        let n_cells = cells.len();
        let input = NodeId(0);
        let output = NodeId(n_cells + 1);

        let mut edge_list: Vec<Edge> = Vec::new();
        for (c, cell) in cells.iter().enumerate() {
            if cell.layer == 1 {
                edge_list.push(Edge { from: input, to: NodeId(1 + c) });
            }
            if cell.layer == n_layers {
                edge_list.push(Edge { from: NodeId(1 + c), to: output });
            }
        }
        for &(a, b) in cell_edges {
            if a >= n_cells || b >= n_cells {
                return Err(Error::InvalidSkeleton("edge endpoint out of range".into()));
            }
            let (a, b) = (rank[a], rank[b]);
            if cells[b].layer != cells[a].layer + 1 {
                return Err(Error::InvalidSkeleton(format!(
                    "edge {} -> {} does not connect consecutive layers",
                    cells[a].name, cells[b].name
                )));
            }
            edge_list.push(Edge { from: NodeId(1 + a), to: NodeId(1 + b) });
        }
        edge_list.sort();
        edge_list.dedup();

        let n_nodes = n_cells + 2;
        let mut out_edges = vec![Vec::new(); n_nodes];
        let mut in_edges = vec![Vec::new(); n_nodes];
        for (i, e) in edge_list.iter().enumerate() {
            out_edges[e.from.0].push(EdgeId(i));
            in_edges[e.to.0].push(EdgeId(i));
        }

        let mut cells_by_layer = vec![Vec::new(); n_layers];
        for (c, cell) in cells.iter().enumerate() {
            cells_by_layer[cell.layer - 1].push(CellId(c));
        }

        let topo = SupernetTopology {
            n_layers,
            n_scales,
            ops,
            cells,
            edges: edge_list,
            out_edges,
            in_edges,
            cells_by_layer,
        };
        topo.check_cover()?;
        Ok(topo)
    }

    /// Every mid-network cell must have both an incoming and an outgoing
    /// transition, and every layer must be populated.
    fn check_cover(&self) -> Result<()> {
        for layer in 1..=self.n_layers {
            if self.cells_in_layer(layer).is_empty() {
                return Err(Error::InvalidSkeleton(format!("layer {layer} has no cells")));
            }
        }
        for (c, cell) in self.cells.iter().enumerate() {
            let node = self.node_of_cell(CellId(c));
            if self.out_edges(node).is_empty() {
                return Err(Error::InvalidSkeleton(format!("cell {} has no outgoing edge", cell.name)));
            }
            if self.in_edges(node).is_empty() {
                return Err(Error::InvalidSkeleton(format!("cell {} has no incoming edge", cell.name)));
            }
        }
        Ok(())
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.cells.len() + 2
    }

    pub fn input_node(&self) -> NodeId {
        NodeId(0)
    }

    pub fn output_node(&self) -> NodeId {
        NodeId(self.cells.len() + 1)
    }

    pub fn node_of_cell(&self, c: CellId) -> NodeId {
        NodeId(1 + c.0)
    }

    /// The cell behind a node, if it is not a pseudo-cell.
    pub fn cell_of_node(&self, n: NodeId) -> Option<CellId> {
        if n.0 == 0 || n.0 == self.cells.len() + 1 {
            None
        } else {
            Some(CellId(n.0 - 1))
        }
    }

    pub fn cell(&self, c: CellId) -> &Cell {
        &self.cells[c.0]
    }

    pub fn op(&self, o: OpId) -> &OperationSpec {
        &self.ops[o.0]
    }

    pub fn edge(&self, e: EdgeId) -> Edge {
        self.edges[e.0]
    }

    pub fn out_edges(&self, n: NodeId) -> &[EdgeId] {
        &self.out_edges[n.0]
    }

    pub fn in_edges(&self, n: NodeId) -> &[EdgeId] {
        &self.in_edges[n.0]
    }

    /// Cells of one layer (1-based), in canonical order.
    pub fn cells_in_layer(&self, layer: usize) -> &[CellId] {
        &self.cells_by_layer[layer - 1]
    }

    pub fn node_name(&self, n: NodeId) -> &str {
        if n.0 == 0 {
            "input"
        } else if n.0 == self.cells.len() + 1 {
            "output"
        } else {
            &self.cells[n.0 - 1].name
        }
    }

    /// Number of distinct input-to-output paths, by dynamic programming
    /// over the layered DAG. Saturates instead of overflowing.
    pub fn path_count(&self) -> u128 {
        let mut count = vec![0u128; self.n_nodes()];
        count[0] = 1;
        for node in 1..self.n_nodes() {
            let mut acc: u128 = 0;
            for &e in self.in_edges(NodeId(node)) {
                acc = acc.saturating_add(count[self.edge(e).from.0]);
            }
            count[node] = acc;
        }
        count[self.output_node().0]
    }

    /// Every distinct input-to-output cell sequence, exactly once, in
    /// lexicographic order of cell ids. Refuses to materialize more than
    /// `cap` paths.
    pub fn enumerate_paths(&self, cap: usize) -> Result<Vec<Vec<CellId>>> {
        let count = self.path_count();
        if count > cap as u128 {
            return Err(Error::PathCountExceeded { count, cap: cap as u128 });
        }
        let mut paths = Vec::with_capacity(count as usize);
        let mut prefix: Vec<CellId> = Vec::with_capacity(self.n_layers);
        self.dfs_paths(self.input_node(), &mut prefix, &mut paths);
        Ok(paths)
    }

    fn dfs_paths(&self, node: NodeId, prefix: &mut Vec<CellId>, out: &mut Vec<Vec<CellId>>) {
        if node == self.output_node() {
            out.push(prefix.clone());
            return;
        }
        for &e in self.out_edges(node) {
            let to = self.edge(e).to;
            match self.cell_of_node(to) {
                Some(c) => {
                    prefix.push(c);
                    self.dfs_paths(to, prefix, out);
                    prefix.pop();
                }
                None => self.dfs_paths(to, prefix, out),
            }
        }
    }

    /// Structural fingerprint: layers, scales, op identities, cells and
    /// transitions. Latency and quality values are deliberately excluded;
    /// the hash tells whether a coefficient set still keys into this grid.
    pub fn structure_hash(&self) -> u64 {
        let mut h = Fnv1a::new();
        h.write_usize(self.n_layers);
        h.write_usize(self.n_scales);
        h.write_usize(self.ops.len());
        for op in &self.ops {
            h.write(op.id.as_bytes());
            h.write(&[0]);
        }
        h.write_usize(self.cells.len());
        for c in &self.cells {
            h.write(c.name.as_bytes());
            h.write(&[0]);
            h.write_usize(c.in_scale);
            h.write_usize(c.template.n_tensors);
            h.write_usize(c.template.op_set.len());
        }
        h.write_usize(self.edges.len());
        for e in &self.edges {
            h.write_usize(e.from.0);
            h.write_usize(e.to.0);
        }
        h.finish()
    }
}

fn validate_skeleton(cfg: &SkeletonConfig) -> Result<()> {
    if cfg.layers == 0 {
        return Err(Error::InvalidSkeleton("layers must be >= 1".into()));
    }
    if cfg.scales == 0 {
        return Err(Error::InvalidSkeleton("scales must be >= 1".into()));
    }
    if cfg.tensors_per_cell == 0 {
        return Err(Error::InvalidSkeleton("tensors_per_cell must be >= 1".into()));
    }
    if cfg.ops.is_empty() {
        return Err(Error::InvalidSkeleton("operation set must be non-empty".into()));
    }
    if cfg.input_scale >= cfg.scales {
        return Err(Error::InvalidSkeleton(format!(
            "input_scale {} outside declared scale range 0..{}",
            cfg.input_scale, cfg.scales
        )));
    }
    let mut ids = BTreeMap::new();
    for (i, op) in cfg.ops.iter().enumerate() {
        if ids.insert(op.id.clone(), i).is_some() {
            return Err(Error::InvalidSkeleton(format!("duplicate op id `{}`", op.id)));
        }
        if op.latency_ms.len() != cfg.scales {
            return Err(Error::InvalidSkeleton(format!(
                "op `{}` has {} latency entries, expected one per scale ({})",
                op.id,
                op.latency_ms.len(),
                cfg.scales
            )));
        }
        for &l in &op.latency_ms {
            if !l.is_finite() || l < 0.0 {
                return Err(Error::InvalidSkeleton(format!(
                    "op `{}` has a non-finite or negative latency",
                    op.id
                )));
            }
        }
    }
    for t in CellType::ALL {
        let s = cfg.scaling_latency_ms.for_type(t);
        if !s.is_finite() || s < 0.0 {
            return Err(Error::InvalidSkeleton(
                "scaling latency must be finite and >= 0".into(),
            ));
        }
    }
    Ok(())
}

/// Key of one cell-level relaxation coefficient: the (target tensor,
/// source tensor, operation) triple inside a cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellCoeff {
    pub cell: CellId,
    pub tensor: usize,
    pub source: usize,
    pub op: OpId,
}

/// How coefficients start out.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitPolicy {
    Zeros,
    UniformNoise { eps: f64 },
}

/// All relaxation coefficients: per-cell (input, operation) coefficients
/// and inter-cell transition coefficients. Unconstrained reals; softmax
/// normalization happens in `relaxation`.
#[derive(Clone, Debug, PartialEq)]
pub struct ArchParams {
    pub cell_coeffs: BTreeMap<CellCoeff, f64>,
    pub transition_coeffs: BTreeMap<EdgeId, f64>,
}

impl ArchParams {
    /// One coefficient per legal (cell, target, source, op) tuple and per
    /// transition edge. Deterministic for a given seed.
    pub fn init(topo: &SupernetTopology, policy: InitPolicy, seed: u64) -> ArchParams {
        let mut rng = substream(seed, "init");
        let draw = |rng: &mut rand_chacha::ChaCha8Rng| match policy {
            InitPolicy::Zeros => 0.0,
            InitPolicy::UniformNoise { eps } => rng.gen_range(-eps..=eps),
        };
        let mut cell_coeffs = BTreeMap::new();
        for (c, cell) in topo.cells.iter().enumerate() {
            for tensor in 1..=cell.template.n_tensors {
                for source in 0..tensor {
                    for &op in &cell.template.op_set {
                        let v = draw(&mut rng);
                        cell_coeffs.insert(
                            CellCoeff {
                                cell: CellId(c),
                                tensor,
                                source,
                                op,
                            },
                            v,
                        );
                    }
                }
            }
        }
        let mut transition_coeffs = BTreeMap::new();
        for e in 0..topo.edges.len() {
            let v = draw(&mut rng);
            transition_coeffs.insert(EdgeId(e), v);
        }
        ArchParams {
            cell_coeffs,
            transition_coeffs,
        }
    }

    /// Same key set, all values zero. Used for gradients and velocities.
    pub fn zeros_like(&self) -> ArchParams {
        ArchParams {
            cell_coeffs: self.cell_coeffs.keys().map(|&k| (k, 0.0)).collect(),
            transition_coeffs: self.transition_coeffs.keys().map(|&k| (k, 0.0)).collect(),
        }
    }

    /// All coefficients multiplied by `factor` (softmax temperature
    /// sharpening).
    pub fn scaled(&self, factor: f64) -> ArchParams {
        ArchParams {
            cell_coeffs: self.cell_coeffs.iter().map(|(&k, &v)| (k, v * factor)).collect(),
            transition_coeffs: self
                .transition_coeffs
                .iter()
                .map(|(&k, &v)| (k, v * factor))
                .collect(),
        }
    }

    /// Checks that the key set exactly matches the topology: no orphan and
    /// no missing coefficients, all values finite.
    pub fn matches_topology(&self, topo: &SupernetTopology) -> Result<()> {
        let expected = ArchParams::init(topo, InitPolicy::Zeros, 0);
        if self.cell_coeffs.len() != expected.cell_coeffs.len()
            || self.transition_coeffs.len() != expected.transition_coeffs.len()
        {
            return Err(Error::KeyMismatch(format!(
                "expected {} cell and {} transition coefficients, got {} and {}",
                expected.cell_coeffs.len(),
                expected.transition_coeffs.len(),
                self.cell_coeffs.len(),
                self.transition_coeffs.len()
            )));
        }
        for k in expected.cell_coeffs.keys() {
            match self.cell_coeffs.get(k) {
                None => {
                    return Err(Error::KeyMismatch(format!(
                        "missing cell coefficient {:?}",
                        k
                    )))
                }
                Some(v) if !v.is_finite() => {
                    return Err(Error::KeyMismatch(format!(
                        "non-finite cell coefficient {:?}",
                        k
                    )))
                }
                _ => {}
            }
        }
        for k in expected.transition_coeffs.keys() {
            match self.transition_coeffs.get(k) {
                None => {
                    return Err(Error::KeyMismatch(format!(
                        "missing transition coefficient {:?}",
                        k
                    )))
                }
                Some(v) if !v.is_finite() => {
                    return Err(Error::KeyMismatch(format!(
                        "non-finite transition coefficient {:?}",
                        k
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg(layers: usize, scales: usize, tensors: usize) -> SkeletonConfig {
        SkeletonConfig {
            layers,
            scales,
            tensors_per_cell: tensors,
            ..SkeletonConfig::default()
        }
        .with_ops_truncated(scales)
    }

    impl SkeletonConfig {
        fn with_ops_truncated(mut self, scales: usize) -> Self {
            for op in &mut self.ops {
                op.latency_ms.truncate(scales);
                while op.latency_ms.len() < scales {
                    let last = *op.latency_ms.last().unwrap();
                    op.latency_ms.push(last / 2.0);
                }
            }
            self
        }
    }

    /// Independent recursive DFS used as the path-count oracle.
    fn dfs_count(topo: &SupernetTopology, node: NodeId) -> u128 {
        if node == topo.output_node() {
            return 1;
        }
        topo.out_edges(node)
            .iter()
            .map(|&e| dfs_count(topo, topo.edge(e).to))
            .sum()
    }

    #[test]
    fn paper_skeleton_shape() {
        let cfg = SkeletonConfig::default();
        let topo = SupernetTopology::build(&cfg).unwrap();
        assert_eq!(topo.n_layers, 10);
        for c in &topo.cells {
            assert_eq!(c.template.n_tensors, 3);
        }
        // All three cell types appear once the grid opens up.
        let types: std::collections::BTreeSet<CellType> =
            topo.cells.iter().map(|c| c.cell_type()).collect();
        assert_eq!(types.len(), 3);
        // Layer-1 cells all read the input scale.
        for &c in topo.cells_in_layer(1) {
            assert_eq!(topo.cell(c).in_scale, cfg.input_scale);
        }
        assert_eq!(topo.path_count(), dfs_count(&topo, topo.input_node()));
    }

    #[test]
    fn minimal_skeleton() {
        let mut cfg = tiny_cfg(1, 1, 1);
        cfg.ops.truncate(1);
        let topo = SupernetTopology::build(&cfg).unwrap();
        assert_eq!(topo.n_cells(), 1);
        assert_eq!(topo.cell(CellId(0)).cell_type(), CellType::NonScaling);
        assert_eq!(topo.path_count(), 1);
        let paths = topo.enumerate_paths(10).unwrap();
        assert_eq!(paths, vec![vec![CellId(0)]]);
    }

    #[test]
    fn enumerate_matches_dfs_oracle() {
        for (l, s, n) in [(3, 2, 2), (4, 3, 3), (2, 4, 1)] {
            let topo = SupernetTopology::build(&tiny_cfg(l, s, n)).unwrap();
            let count = dfs_count(&topo, topo.input_node());
            assert_eq!(topo.path_count(), count);
            let paths = topo.enumerate_paths(100_000).unwrap();
            assert_eq!(paths.len() as u128, count);
            let mut sorted = paths.clone();
            sorted.sort();
            sorted.dedup();
            assert_eq!(sorted.len(), paths.len(), "paths must be distinct");
            assert_eq!(sorted, paths, "paths must come out lexicographically");
        }
    }

    #[test]
    fn every_cell_lies_on_a_path() {
        let topo = SupernetTopology::build(&tiny_cfg(4, 3, 3)).unwrap();
        let paths = topo.enumerate_paths(100_000).unwrap();
        let mut on_path = vec![false; topo.n_cells()];
        for p in &paths {
            assert_eq!(p.len(), topo.n_layers);
            for &c in p {
                on_path[c.0] = true;
            }
        }
        assert!(on_path.iter().all(|&b| b), "dead cell in topology");
    }

    #[test]
    fn path_cap_is_enforced() {
        let topo = SupernetTopology::build(&tiny_cfg(4, 3, 3)).unwrap();
        let err = topo.enumerate_paths(3).unwrap_err();
        assert!(matches!(err, Error::PathCountExceeded { .. }));
    }

    #[test]
    fn fully_connected_two_by_two_has_four_paths() {
        let cfg = tiny_cfg(1, 2, 1);
        let mk = |layer, scale| CellSpec {
            layer,
            in_scale: scale,
            out_scale: scale,
            cell_type: CellType::NonScaling,
            n_tensors: 1,
            scaling_latency_ms: 0.0,
        };
        let specs = vec![mk(1, 0), mk(1, 1), mk(2, 0), mk(2, 1)];
        let edges = [(0, 2), (0, 3), (1, 2), (1, 3)];
        let topo = SupernetTopology::from_parts(
            2,
            2,
            cfg.ops.clone(),
            vec![OpId(0), OpId(1), OpId(2)],
            specs,
            &edges,
        )
        .unwrap();
        assert_eq!(topo.path_count(), 4);
        assert_eq!(topo.enumerate_paths(10).unwrap().len(), 4);
    }

    #[test]
    fn rejects_bad_skeletons() {
        let mut cfg = tiny_cfg(2, 2, 2);
        cfg.input_scale = 5;
        assert!(matches!(
            SupernetTopology::build(&cfg),
            Err(Error::InvalidSkeleton(_))
        ));

        let mut cfg = tiny_cfg(2, 2, 2);
        cfg.ops[0].latency_ms.pop();
        assert!(SupernetTopology::build(&cfg).is_err());

        let mut cfg = tiny_cfg(2, 2, 2);
        cfg.ops.clear();
        assert!(SupernetTopology::build(&cfg).is_err());
    }

    #[test]
    fn init_zeros_and_determinism() {
        let topo = SupernetTopology::build(&tiny_cfg(3, 2, 2)).unwrap();
        let z = ArchParams::init(&topo, InitPolicy::Zeros, 0);
        assert!(z.cell_coeffs.values().all(|&v| v == 0.0));
        assert!(z.transition_coeffs.values().all(|&v| v == 0.0));

        let a = ArchParams::init(&topo, InitPolicy::UniformNoise { eps: 1e-3 }, 7);
        let b = ArchParams::init(&topo, InitPolicy::UniformNoise { eps: 1e-3 }, 7);
        assert_eq!(a, b);
        let c = ArchParams::init(&topo, InitPolicy::UniformNoise { eps: 1e-3 }, 8);
        assert_ne!(a, c);
        assert!(a.cell_coeffs.values().all(|&v| v.abs() <= 1e-3));
    }

    #[test]
    fn init_key_count_minimal_two_ops() {
        let mut cfg = tiny_cfg(1, 1, 1);
        cfg.ops.truncate(2);
        let topo = SupernetTopology::build(&cfg).unwrap();
        let p = ArchParams::init(&topo, InitPolicy::Zeros, 0);
        assert_eq!(p.cell_coeffs.len(), 2);
        assert_eq!(p.transition_coeffs.len(), 2);
    }

    #[test]
    fn init_key_set_matches_independent_enumeration() {
        let topo = SupernetTopology::build(&tiny_cfg(3, 2, 2)).unwrap();
        let p = ArchParams::init(&topo, InitPolicy::Zeros, 0);
        let mut expected = std::collections::BTreeSet::new();
        for (c, cell) in topo.cells.iter().enumerate() {
            for i in 1..=cell.template.n_tensors {
                for j in 0..i {
                    for o in 0..topo.ops.len() {
                        expected.insert(CellCoeff {
                            cell: CellId(c),
                            tensor: i,
                            source: j,
                            op: OpId(o),
                        });
                    }
                }
            }
        }
        let got: std::collections::BTreeSet<CellCoeff> =
            p.cell_coeffs.keys().copied().collect();
        assert_eq!(got, expected);
        assert_eq!(p.transition_coeffs.len(), topo.edges.len());
        p.matches_topology(&topo).unwrap();
    }

    #[test]
    fn structure_hash_tracks_structure_only() {
        let topo_a = SupernetTopology::build(&tiny_cfg(3, 2, 2)).unwrap();
        let topo_b = SupernetTopology::build(&tiny_cfg(3, 2, 2)).unwrap();
        assert_eq!(topo_a.structure_hash(), topo_b.structure_hash());
        let topo_c = SupernetTopology::build(&tiny_cfg(4, 2, 2)).unwrap();
        assert_ne!(topo_a.structure_hash(), topo_c.structure_hash());
    }
}
