//! Command implementations behind the `rtnas` binary: search, decode,
//! sample and pareto, plus the on-disk formats they share. Every command
//! is byte-reproducible for a fixed seed.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{Instance, RunConfig};
use crate::decode::{self, EvalCtx, GenePool, Individual};
use crate::error::{Error, Result};
use crate::latency::{self, Selections};
use crate::pareto::{self, fmt_num, ParetoPoint, ValidRegion};
use crate::relaxation;
use crate::sample;
use crate::search::{self, SearchReport};
use crate::supernet::{ArchParams, CellCoeff, CellId, EdgeId, OpId, SupernetTopology};

/// Serialized coefficient document, keyed by human-readable names.
#[derive(Debug, Serialize, Deserialize)]
pub struct ParamsDoc {
    pub topology_hash: u64,
    pub cell_coeffs: Vec<CellCoeffRow>,
    pub transition_coeffs: Vec<TransitionRow>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CellCoeffRow {
    pub cell: String,
    pub tensor: usize,
    pub source: usize,
    pub op: String,
    pub value: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TransitionRow {
    pub from: String,
    pub to: String,
    pub value: f64,
}

pub fn params_to_doc(topo: &SupernetTopology, params: &ArchParams) -> ParamsDoc {
    ParamsDoc {
        topology_hash: topo.structure_hash(),
        cell_coeffs: params
            .cell_coeffs
            .iter()
            .map(|(k, &value)| CellCoeffRow {
                cell: topo.cell(k.cell).name.clone(),
                tensor: k.tensor,
                source: k.source,
                op: topo.op(k.op).id.clone(),
                value,
            })
            .collect(),
        transition_coeffs: params
            .transition_coeffs
            .iter()
            .map(|(&e, &value)| {
                let edge = topo.edge(e);
                TransitionRow {
                    from: topo.node_name(edge.from).to_string(),
                    to: topo.node_name(edge.to).to_string(),
                    value,
                }
            })
            .collect(),
    }
}

pub fn params_from_doc(topo: &SupernetTopology, doc: &ParamsDoc) -> Result<ArchParams> {
    let config_hash = topo.structure_hash();
    if doc.topology_hash != config_hash {
        return Err(Error::StaleParams {
            params_hash: doc.topology_hash,
            config_hash,
        });
    }
    let mut params = ArchParams::init(topo, crate::supernet::InitPolicy::Zeros, 0);
    let mut filled_cells: BTreeSet<CellCoeff> = BTreeSet::new();
    for row in &doc.cell_coeffs {
        let cell = topo
            .cells
            .iter()
            .position(|c| c.name == row.cell)
            .ok_or_else(|| Error::KeyMismatch(format!("unknown cell `{}`", row.cell)))?;
        let op = topo
            .ops
            .iter()
            .position(|o| o.id == row.op)
            .ok_or_else(|| Error::KeyMismatch(format!("unknown op `{}`", row.op)))?;
        let key = CellCoeff {
            cell: CellId(cell),
            tensor: row.tensor,
            source: row.source,
            op: OpId(op),
        };
        match params.cell_coeffs.get_mut(&key) {
            Some(slot) => *slot = row.value,
            None => {
                return Err(Error::KeyMismatch(format!(
                    "coefficient ({}, tensor {}, source {}, {}) is not legal for this topology",
                    row.cell, row.tensor, row.source, row.op
                )))
            }
        }
        if !filled_cells.insert(key) {
            return Err(Error::KeyMismatch(format!(
                "duplicate coefficient ({}, tensor {}, source {}, {})",
                row.cell, row.tensor, row.source, row.op
            )));
        }
    }
    if filled_cells.len() != params.cell_coeffs.len() {
        return Err(Error::KeyMismatch(format!(
            "params file has {} cell coefficients, topology needs {}",
            filled_cells.len(),
            params.cell_coeffs.len()
        )));
    }
    let mut filled_edges: BTreeSet<EdgeId> = BTreeSet::new();
    for row in &doc.transition_coeffs {
        let e = topo
            .edges
            .iter()
            .position(|e| topo.node_name(e.from) == row.from && topo.node_name(e.to) == row.to)
            .ok_or_else(|| {
                Error::KeyMismatch(format!("unknown transition {} -> {}", row.from, row.to))
            })?;
        *params.transition_coeffs.get_mut(&EdgeId(e)).expect("edge key exists") = row.value;
        if !filled_edges.insert(EdgeId(e)) {
            return Err(Error::KeyMismatch(format!(
                "duplicate transition {} -> {}",
                row.from, row.to
            )));
        }
    }
    if filled_edges.len() != params.transition_coeffs.len() {
        return Err(Error::KeyMismatch(format!(
            "params file has {} transition coefficients, topology needs {}",
            filled_edges.len(),
            params.transition_coeffs.len()
        )));
    }
    params.matches_topology(topo)?;
    Ok(params)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Config(format!("serialization failed: {e}")))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn search_log(report: &SearchReport) -> String {
    let mut out = String::new();
    for r in &report.records {
        out.push_str(&format!(
            "outer={} epoch={} lr={} la={} lt_ms={} penalty={} total={} clamped={}\n",
            r.outer,
            r.epoch,
            fmt_num(r.lr),
            fmt_num(r.la),
            fmt_num(r.lt_ms),
            fmt_num(r.penalty),
            fmt_num(r.total),
            u8::from(r.clamped),
        ));
    }
    out
}

fn search_summary(report: &SearchReport, argmax_path: &str) -> String {
    let last = report.final_record();
    let max_penalty = report
        .records
        .iter()
        .map(|r| r.penalty)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out = String::new();
    out.push_str(&format!("outer_iterations={}\n", report.outer.len()));
    out.push_str(&format!("records={}\n", report.records.len()));
    out.push_str(&format!("clamp_events={}\n", report.clamp_events()));
    out.push_str(&format!("final_la={}\n", fmt_num(last.la)));
    out.push_str(&format!("final_lt_ms={}\n", fmt_num(last.lt_ms)));
    out.push_str(&format!("final_penalty={}\n", fmt_num(last.penalty)));
    out.push_str(&format!("final_total={}\n", fmt_num(last.total)));
    out.push_str(&format!("max_penalty={}\n", fmt_num(max_penalty)));
    for (i, o) in report.outer.iter().enumerate() {
        out.push_str(&format!(
            "outer[{i}]: latency_ub_ms={} decoded_latency_ms={} throughput_fps={}\n",
            fmt_num(o.latency_ub_ms),
            fmt_num(o.decoded_latency_ms),
            fmt_num(o.throughput_fps),
        ));
    }
    out.push_str(&format!("argmax_path={argmax_path}\n"));
    out
}

fn resolve_out_dir(cfg: &RunConfig, out_override: Option<&Path>) -> PathBuf {
    match out_override {
        Some(p) => p.to_path_buf(),
        None => match &cfg.out_dir {
            Some(d) => cfg.base_dir.join(d),
            None => PathBuf::from("out"),
        },
    }
}

/// Run the throughput-constrained search and write `search.log`,
/// `params.json` and `summary.txt`.
pub fn cmd_search(config: &Path, seed: Option<u64>, out: Option<&Path>) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let seed = seed.unwrap_or(cfg.seed);
    let Instance {
        topo,
        lat_model,
        surrogate,
    } = cfg.instantiate()?;
    let out_dir = resolve_out_dir(&cfg, out);
    std::fs::create_dir_all(&out_dir)?;

    let report = search::constrained_search(
        &topo,
        &surrogate,
        &lat_model,
        &cfg.loss_config(),
        &cfg.optimizer,
        &cfg.search.outer_config(),
        cfg.constraints.throughput_min_fps,
        cfg.search.init_policy()?,
        seed,
    )?;

    let weights = relaxation::mixture_weights(&report.params, &topo);
    let selections = decode::argmax_selections(&topo, &weights);
    let top = decode::decode_topk_paths(&topo, &report.params, 1, &lat_model, &selections)?;
    let argmax_path = std::iter::once("input".to_string())
        .chain(top[0].cells.iter().map(|&c| topo.cell(c).name.clone()))
        .chain(std::iter::once("output".to_string()))
        .collect::<Vec<_>>()
        .join(" -> ");

    std::fs::write(out_dir.join("search.log"), search_log(&report))?;
    write_json(&out_dir.join("params.json"), &params_to_doc(&topo, &report.params))?;
    std::fs::write(
        out_dir.join("summary.txt"),
        search_summary(&report, &argmax_path),
    )?;
    Ok(())
}

/// Decoded-architecture document.
#[derive(Debug, Serialize, Deserialize)]
pub struct DecodedDoc {
    pub method: String,
    pub n_l: usize,
    pub topology_hash: u64,
    pub gene_indices: Vec<usize>,
    pub paths: Vec<Vec<String>>,
    pub cells: Vec<DecodedCell>,
    pub latency_ms: f64,
    pub throughput_fps: f64,
    pub score: f64,
    pub feasible: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DecodedCell {
    pub cell: String,
    pub tensors: Vec<DecodedTensor>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DecodedTensor {
    pub tensor: usize,
    pub source: usize,
    pub op: String,
}

/// Shared decode plumbing: pool construction and individual evaluation.
pub struct DecodeSetup<'a> {
    pub pool: GenePool,
    pub selections: Selections,
    topo: &'a SupernetTopology,
}

impl<'a> DecodeSetup<'a> {
    pub fn new(
        inst: &'a Instance,
        params: &ArchParams,
        capacity: usize,
    ) -> Result<DecodeSetup<'a>> {
        let weights = relaxation::mixture_weights(params, &inst.topo);
        let selections = decode::argmax_selections(&inst.topo, &weights);
        let pool = decode::build_gene_pool(&inst.topo, params, capacity, &inst.lat_model, &selections)?;
        Ok(DecodeSetup {
            pool,
            selections,
            topo: &inst.topo,
        })
    }

    pub fn ctx<'b>(&'b self, inst: &'b Instance, budget_ms: f64) -> EvalCtx<'b> {
        EvalCtx {
            topo: self.topo,
            pool: &self.pool,
            model: &inst.lat_model,
            selections: &self.selections,
            budget_ms,
        }
    }
}

/// Assemble the decoded document plus its Pareto point.
pub fn decoded_doc(
    inst: &Instance,
    setup: &DecodeSetup,
    individual: &Individual,
    method: &str,
) -> Result<(DecodedDoc, ParetoPoint)> {
    let topo = &inst.topo;
    let paths: Vec<Vec<String>> = individual
        .gene_indices
        .iter()
        .map(|&g| {
            setup.pool.genes[g]
                .cells
                .iter()
                .map(|&c| topo.cell(c).name.clone())
                .collect()
        })
        .collect();
    let union: BTreeSet<CellId> = individual
        .gene_indices
        .iter()
        .flat_map(|&g| setup.pool.genes[g].cells.iter().copied())
        .collect();
    let cells: Vec<DecodedCell> = union
        .iter()
        .map(|&c| {
            let cell = topo.cell(c);
            DecodedCell {
                cell: cell.name.clone(),
                tensors: (1..=cell.template.n_tensors)
                    .map(|tensor| {
                        let (source, op) = setup.selections.get(c, tensor);
                        DecodedTensor {
                            tensor,
                            source,
                            op: topo.op(op).id.clone(),
                        }
                    })
                    .collect(),
            }
        })
        .collect();
    let score = relaxation::network_score(topo, &inst.surrogate, &union, &setup.selections);
    let throughput_fps = latency::throughput(individual.fitness_latency_ms, &inst.lat_model)?;
    let n_l = individual.gene_indices.len();
    let doc = DecodedDoc {
        method: method.to_string(),
        n_l,
        topology_hash: topo.structure_hash(),
        gene_indices: individual.gene_indices.clone(),
        paths,
        cells,
        latency_ms: individual.fitness_latency_ms,
        throughput_fps,
        score,
        feasible: individual.feasible,
    };
    let point = ParetoPoint {
        id: format!("{method}_nl{n_l}"),
        score,
        latency_ms: individual.fitness_latency_ms,
        throughput_fps,
        source: method.to_string(),
    };
    Ok((doc, point))
}

/// Decode a converged coefficient file into a final architecture with the
/// greedy or genetic method, writing the document and its point row.
pub fn cmd_decode(
    config: &Path,
    params_path: &Path,
    n_l: usize,
    method: &str,
    seed: Option<u64>,
    out: Option<&Path>,
) -> Result<()> {
    if n_l == 0 {
        return Err(Error::Config("--nl must be >= 1".into()));
    }
    let cfg = RunConfig::load(config)?;
    let seed = seed.unwrap_or(cfg.seed);
    let inst = cfg.instantiate()?;
    let text = std::fs::read_to_string(params_path)?;
    let doc: ParamsDoc = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", params_path.display())))?;
    let params = params_from_doc(&inst.topo, &doc)?;

    if n_l > cfg.ga.pool {
        return Err(Error::Config(format!(
            "--nl {} exceeds the gene pool capacity {}",
            n_l, cfg.ga.pool
        )));
    }
    let setup = DecodeSetup::new(&inst, &params, cfg.ga.pool)?;
    let ctx = setup.ctx(&inst, cfg.constraints.latency_ub_ms);
    let individual = match method {
        "greedy" => ctx.greedy(n_l),
        "ga" => decode::evolve(&ctx, &cfg.ga.ga_config(), n_l, seed)?,
        other => {
            return Err(Error::Config(format!(
                "unknown decode method `{other}` (expected `greedy` or `ga`)"
            )))
        }
    };
    let (doc, point) = decoded_doc(&inst, &setup, &individual, method)?;

    let out_dir = resolve_out_dir(&cfg, out);
    std::fs::create_dir_all(&out_dir)?;
    let stem = format!("decode_{method}_nl{n_l}");
    write_json(&out_dir.join(format!("{stem}.json")), &doc)?;
    std::fs::write(
        out_dir.join(format!("{stem}.csv")),
        pareto::write_points_csv(std::slice::from_ref(&point)),
    )?;
    Ok(())
}

/// Uniformly sample architectures and write their evaluated points.
pub fn cmd_sample(config: &Path, n: usize, seed: Option<u64>, out: Option<&Path>) -> Result<()> {
    if n == 0 {
        return Err(Error::Config("--n must be >= 1".into()));
    }
    let cfg = RunConfig::load(config)?;
    let seed = seed.unwrap_or(cfg.seed);
    let inst = cfg.instantiate()?;
    let samples = sample::sample_architectures(&inst.topo, &inst.lat_model, &inst.surrogate, n, seed)?;
    let points: Vec<ParetoPoint> = samples.into_iter().map(|s| s.point).collect();
    let out_dir = resolve_out_dir(&cfg, out);
    std::fs::create_dir_all(&out_dir)?;
    std::fs::write(out_dir.join("samples.csv"), pareto::write_points_csv(&points))?;
    Ok(())
}

const PARETO_HEADER: &str = "id,score,latency_ms,throughput_fps,source,valid";

fn annotated_csv(points: &[ParetoPoint], region: &ValidRegion, frontier: &[usize]) -> (String, String) {
    let on_frontier: BTreeSet<usize> = frontier.iter().copied().collect();
    let mut front = String::from(PARETO_HEADER);
    front.push('\n');
    let mut plot = String::from(PARETO_HEADER);
    plot.push_str(",frontier\n");
    for (i, p) in points.iter().enumerate() {
        let valid = u8::from(region.contains(p));
        let row = format!(
            "{},{},{},{},{},{}",
            p.id,
            fmt_num(p.score),
            fmt_num(p.latency_ms),
            fmt_num(p.throughput_fps),
            p.source,
            valid
        );
        if on_frontier.contains(&i) {
            front.push_str(&row);
            front.push('\n');
        }
        plot.push_str(&row);
        plot.push_str(&format!(",{}\n", u8::from(on_frontier.contains(&i))));
    }
    (front, plot)
}

/// Merge point files, compute the non-dominated set and write the frontier
/// table plus plot data. The valid-region flags use the default real-time
/// box (latency <= 50 ms, throughput >= 22 FPS) unless a config is given.
pub fn cmd_pareto(files: &[PathBuf], region: ValidRegion, out: Option<&Path>) -> Result<()> {
    if files.is_empty() {
        return Err(Error::Config("pareto needs at least one points file".into()));
    }
    let mut points = Vec::new();
    for f in files {
        let text = std::fs::read_to_string(f)?;
        points.extend(pareto::parse_points_csv(&text, &f.display().to_string())?);
    }
    let frontier = pareto::frontier(&points);
    let (front, plot) = annotated_csv(&points, &region, &frontier);
    let out_dir = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out_dir)?;
    std::fs::write(out_dir.join("frontier.csv"), front)?;
    std::fs::write(out_dir.join("pareto_points.csv"), plot)?;
    Ok(())
}
