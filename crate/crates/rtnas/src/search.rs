//! Differentiable search loop: the combined accuracy/latency loss with an
//! exponential budget penalty, gradient descent with momentum and
//! decoupled weight decay over the architecture coefficients, and the
//! outer loop that tightens the latency budget until a throughput floor is
//! met.

use serde::{Deserialize, Serialize};

use crate::decode;
use crate::error::{Error, Result};
use crate::latency::{self, LatencyModel};
use crate::relaxation::{self, SurrogateModel};
use crate::supernet::{ArchParams, InitPolicy, SupernetTopology};

/// Arguments of the latency-penalized loss
/// `L = L_a * L_t + lambda * exp((L_t - L_ub) / tau)`.
#[derive(Clone, Copy, Debug)]
pub struct LossConfig {
    pub lambda: f64,
    pub latency_ub_ms: f64,
    pub penalty_temp_ms: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 100.0,
            latency_ub_ms: 50.0,
            penalty_temp_ms: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda.is_nan() || self.lambda < 0.0 {
            return Err(Error::Config("loss lambda must be >= 0".into()));
        }
        if self.latency_ub_ms.is_nan() || self.latency_ub_ms <= 0.0 {
            return Err(Error::Config("latency_ub_ms must be > 0".into()));
        }
        if self.penalty_temp_ms.is_nan() || self.penalty_temp_ms <= 0.0 {
            return Err(Error::Config("penalty_temp_ms must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Cosine,
    Linear,
}

/// SGD hyperparameters for tuning the architecture coefficients.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub momentum: f64,
    pub lr_start: f64,
    pub lr_end: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub lr_schedule: LrSchedule,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            momentum: 0.9,
            lr_start: 0.01,
            lr_end: 0.001,
            weight_decay: 0.0003,
            epochs: 40,
            lr_schedule: LrSchedule::Cosine,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.momentum.is_nan() || self.momentum < 0.0 || self.momentum >= 1.0 {
            return Err(Error::Config("momentum must be in [0, 1)".into()));
        }
        if self.lr_start.is_nan() || self.lr_start <= 0.0 || self.lr_end.is_nan() || self.lr_end <= 0.0 {
            return Err(Error::Config("learning rates must be > 0".into()));
        }
        if self.lr_end > self.lr_start {
            return Err(Error::Config("lr_end must not exceed lr_start".into()));
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be >= 0".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        Ok(())
    }

    /// Annealed learning rate for a given epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.lr_start;
        }
        let t = epoch as f64 / (self.epochs - 1) as f64;
        match self.lr_schedule {
            LrSchedule::Cosine => {
                self.lr_end
                    + 0.5 * (self.lr_start - self.lr_end) * (1.0 + (std::f64::consts::PI * t).cos())
            }
            LrSchedule::Linear => self.lr_start + (self.lr_end - self.lr_start) * t,
        }
    }
}

/// Loss split into its terms. `clamped` flags that the penalty exponent
/// was cut off at the overflow guard.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub product: f64,
    pub penalty: f64,
    pub total: f64,
    pub clamped: bool,
}

const PENALTY_EXP_CLAMP: f64 = 700.0;

/// `L_a * L_t + lambda * exp((L_t - L_ub) / tau)`, with the exponent
/// clamped against overflow.
pub fn loss_terms(la: f64, lt_ms: f64, cfg: &LossConfig) -> LossTerms {
    let product = la * lt_ms;
    let arg = (lt_ms - cfg.latency_ub_ms) / cfg.penalty_temp_ms;
    let clamped = arg > PENALTY_EXP_CLAMP;
    let penalty = cfg.lambda * arg.min(PENALTY_EXP_CLAMP).exp();
    LossTerms {
        product,
        penalty,
        total: product + penalty,
        clamped,
    }
}

/// Scalar value of the search objective.
pub fn total_loss(la: f64, lt_ms: f64, cfg: &LossConfig) -> f64 {
    loss_terms(la, lt_ms, cfg).total
}

/// One epoch of the trajectory.
#[derive(Clone, Copy, Debug)]
pub struct EpochRecord {
    pub outer: usize,
    pub epoch: usize,
    pub lr: f64,
    pub la: f64,
    pub lt_ms: f64,
    pub penalty: f64,
    pub total: f64,
    pub clamped: bool,
}

/// One outer iteration: the budget in force and what the decoded
/// architecture achieved.
#[derive(Clone, Copy, Debug)]
pub struct OuterRecord {
    pub latency_ub_ms: f64,
    pub decoded_latency_ms: f64,
    pub throughput_fps: f64,
}

/// Full search trajectory plus the converged coefficients.
#[derive(Clone, Debug)]
pub struct SearchReport {
    pub records: Vec<EpochRecord>,
    pub outer: Vec<OuterRecord>,
    pub params: ArchParams,
}

impl SearchReport {
    pub fn final_record(&self) -> &EpochRecord {
        self.records.last().expect("search ran at least one epoch")
    }

    pub fn clamp_events(&self) -> usize {
        self.records.iter().filter(|r| r.clamped).count()
    }
}

/// Latency of the argmax-decoded architecture: the highest-probability
/// path with per-tensor argmax selections.
pub fn argmax_decoded_latency(
    topo: &SupernetTopology,
    params: &ArchParams,
    model: &LatencyModel,
) -> Result<f64> {
    let weights = relaxation::mixture_weights(params, topo);
    let selections = decode::argmax_selections(topo, &weights);
    let top = decode::decode_topk_paths(topo, params, 1, model, &selections)?;
    Ok(top[0].latency_ms)
}

fn sgd_step(
    params: &mut ArchParams,
    velocity: &mut ArchParams,
    grad: &ArchParams,
    lr: f64,
    cfg: &OptimizerConfig,
) {
    for ((k, p), ((vk, v), (gk, g))) in params.cell_coeffs.iter_mut().zip(
        velocity
            .cell_coeffs
            .iter_mut()
            .zip(grad.cell_coeffs.iter()),
    ) {
        debug_assert!(k == vk && k == gk);
        *v = cfg.momentum * *v + *g;
        *p -= lr * *v + lr * cfg.weight_decay * *p;
    }
    for ((k, p), ((vk, v), (gk, g))) in params.transition_coeffs.iter_mut().zip(
        velocity
            .transition_coeffs
            .iter_mut()
            .zip(grad.transition_coeffs.iter()),
    ) {
        debug_assert!(k == vk && k == gk);
        *v = cfg.momentum * *v + *g;
        *p -= lr * *v + lr * cfg.weight_decay * *p;
    }
}

/// Gradient descent over the architecture coefficients. Deterministic for
/// a fixed seed: coefficients iterate in canonical key order and the
/// learning rate anneals from `lr_start` to `lr_end`.
pub fn run_search(
    topo: &SupernetTopology,
    model: &SurrogateModel,
    lat_model: &LatencyModel,
    loss_cfg: &LossConfig,
    opt_cfg: &OptimizerConfig,
    init: InitPolicy,
    seed: u64,
) -> Result<SearchReport> {
    loss_cfg.validate()?;
    opt_cfg.validate()?;
    let mut params = ArchParams::init(topo, init, seed);
    let mut velocity = params.zeros_like();
    let mut records = Vec::with_capacity(opt_cfg.epochs);
    for epoch in 0..opt_cfg.epochs {
        let lr = opt_cfg.lr_at(epoch);
        let eval = relaxation::evaluate_total(&params, topo, model, lat_model, loss_cfg)?;
        for (value, term) in [
            (eval.la, "la"),
            (eval.lt_ms, "lt"),
            (eval.penalty, "penalty"),
            (eval.total, "total"),
        ] {
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    outer: 0,
                    epoch,
                    term,
                });
            }
        }
        records.push(EpochRecord {
            outer: 0,
            epoch,
            lr,
            la: eval.la,
            lt_ms: eval.lt_ms,
            penalty: eval.penalty,
            total: eval.total,
            clamped: eval.clamped,
        });
        let grad = relaxation::grad_arch_params(&params, topo, model, lat_model, loss_cfg)?;
        sgd_step(&mut params, &mut velocity, &grad, lr, opt_cfg);
    }
    let decoded = argmax_decoded_latency(topo, &params, lat_model)?;
    let outer = vec![OuterRecord {
        latency_ub_ms: loss_cfg.latency_ub_ms,
        decoded_latency_ms: decoded,
        throughput_fps: latency::throughput(decoded, lat_model)?,
    }];
    Ok(SearchReport {
        records,
        outer,
        params,
    })
}

/// Outer-loop knobs: multiplicative budget shrink and the iteration cap.
#[derive(Clone, Copy, Debug)]
pub struct OuterConfig {
    pub shrink: f64,
    pub cap: usize,
}

impl Default for OuterConfig {
    fn default() -> Self {
        OuterConfig { shrink: 0.9, cap: 10 }
    }
}

/// Throughput-constrained search: run the differentiable search, and if
/// the decoded architecture misses the throughput floor, lower the latency
/// budget and run again. Fails once the iteration cap is exhausted.
pub fn constrained_search(
    topo: &SupernetTopology,
    model: &SurrogateModel,
    lat_model: &LatencyModel,
    loss_cfg: &LossConfig,
    opt_cfg: &OptimizerConfig,
    outer_cfg: &OuterConfig,
    throughput_min_fps: f64,
    init: InitPolicy,
    seed: u64,
) -> Result<SearchReport> {
    if throughput_min_fps.is_nan() || throughput_min_fps <= 0.0 {
        return Err(Error::Config("throughput_min_fps must be > 0".into()));
    }
    if outer_cfg.shrink.is_nan() || outer_cfg.shrink <= 0.0 || outer_cfg.shrink >= 1.0 {
        return Err(Error::Config("outer shrink must be in (0, 1)".into()));
    }
    if outer_cfg.cap == 0 {
        return Err(Error::Config("outer cap must be >= 1".into()));
    }
    let mut cfg = *loss_cfg;
    let mut records = Vec::new();
    let mut outer_history = Vec::new();
    for iteration in 0..outer_cfg.cap {
        let mut report = run_search(topo, model, lat_model, &cfg, opt_cfg, init, seed).map_err(
            |e| match e {
                Error::NonFiniteLoss { epoch, term, .. } => Error::NonFiniteLoss {
                    outer: iteration,
                    epoch,
                    term,
                },
                other => other,
            },
        )?;
        for r in &mut report.records {
            r.outer = iteration;
        }
        records.extend(report.records.iter().copied());
        outer_history.push(report.outer[0]);
        if report.outer[0].throughput_fps >= throughput_min_fps {
            report.records = records;
            report.outer = outer_history;
            return Ok(report);
        }
        cfg.latency_ub_ms *= outer_cfg.shrink;
    }
    let best = outer_history
        .last()
        .expect("cap >= 1 ran at least one iteration");
    Err(Error::InfeasibleConstraints {
        iterations: outer_cfg.cap,
        best_latency_ms: best.decoded_latency_ms,
        best_throughput_fps: best.throughput_fps,
        required_fps: throughput_min_fps,
    })
}
