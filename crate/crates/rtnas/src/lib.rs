//! Latency-constrained differentiable architecture search over multi-scale
//! cell grids, with genetic decoding of multi-path networks.
//!
//! The search space has two levels: each *cell* is a DAG of tensors whose
//! edges mix candidate operations through a joint softmax over
//! (input, operation) pairs, and the *network* level is a layered grid of
//! expanding / non-scaling / contracting cells spanning several feature
//! scales. An analytic latency model (expected edge latency, longest path
//! per cell, layer marginals for the whole net) folds a hard real-time
//! budget into the loss as an exponential penalty. Converged coefficients
//! are decoded either greedily (top weighted paths) or by a genetic
//! algorithm that minimizes the latency of the merged multi-path network.
//!
//! Accuracy is stood in for by a synthetic differentiable surrogate so the
//! whole stack is testable without any training data or device profiling.

pub mod cli;
pub mod config;
pub mod decode;
pub mod error;
pub mod latency;
pub mod pareto;
pub mod relaxation;
pub mod rng;
pub mod sample;
pub mod search;
pub mod supernet;

pub use error::{Error, Result};
