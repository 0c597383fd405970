//! Deterministic simulator for communication-constrained federated learning.
//!
//! Clients run `I_t` local SGD steps, sparsify the summed update with an
//! unbiased Bernoulli estimator whose expected atom count is `ε_t`, and the
//! server averages the compressed updates. The EAFO controller retunes
//! `(I_t, ε_t)` each round from the latest global loss with a cube-root law;
//! fixed and single-knob baselines run under the same simulated clock.
//!
//! Module map:
//!
//! * [`model`]: parameter vectors, datasets, partitioning, logistic
//!   regression / MLP losses and the local SGD primitive.
//! * [`compressor`]: atomic decomposition, variance-optimal sampling
//!   probabilities, the unbiased estimator and its variance algebra.
//! * [`bound`]: the joint error bound, its derivatives, Hessian, convexity
//!   conditions and stationary points.
//! * [`controller`]: the per-round `(I_t, ε_t)` schedule.
//! * [`sim`]: time model, strategies, round and experiment drivers.
//! * [`io`]: configuration, IDX loader, synthetic data, metrics sinks.
//! * [`oracle`]: brute-force reference computations used by tests and the
//!   `selftest` command.
//! * [`selftest`]: quick oracle checks run by `eafo selftest`.
//! * [`exec`], [`rng`]: sequential/parallel execution and deterministic
//!   random streams.

// Negated float comparisons are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bound;
pub mod compressor;
pub mod controller;
pub mod error;
pub mod exec;
pub mod io;
pub mod model;
pub mod oracle;
pub mod rng;
pub mod selftest;
pub mod sim;

pub use error::{Error, Result};
