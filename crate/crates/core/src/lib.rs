//! Expectation-propagation inference for spatio-temporal spike-and-slab
//! priors.
//!
//! The model solves a series of underdetermined linear inverse problems
//! `Y = A X + E` (or sparse probit classification) under a hierarchical
//! sparsity prior: a latent Gaussian field `γ` with structured covariance
//! drives the activation probabilities `z ~ Ber(Φ(γ))` of a spike-and-slab
//! coefficient prior, so the support of the solution can be smooth across
//! space and time. Posterior inference is deterministic parallel EP with
//! analytic moment matching, and four interchangeable strategies trade
//! accuracy for cost when refreshing the structure posterior: exact dense,
//! low-rank plus diagonal, common precision in a Kronecker eigenbasis, and
//! grouping of latent variables.
//!
//! Entry points:
//! * [`engine::run_ep_model`] — solve a [`likelihood::Problem`] under a
//!   kernel-level [`prior::PriorModel`];
//! * [`engine::run_ep`] — the same with a materialized prior and group map;
//! * [`harness`] — synthetic-benchmark commands behind the CLI (`sample`,
//!   `solve`, `gridsearch`, `phase-transition`).
//!
//! The `examples/` directory contains one runnable walkthrough per major
//! capability (`cargo run --release --example <name>`).

pub mod engine;
pub mod error;
pub mod gamma;
pub mod global_x;
pub mod harness;
pub mod io;
pub mod kernel;
pub mod likelihood;
pub mod math;
pub mod metrics;
pub mod moments;
pub mod prior;
pub mod sites;

pub use engine::{run_ep, run_ep_model, EpConfig, EpResult, Scheme};
pub use error::{Error, Result};
pub use likelihood::{Likelihood, Problem};
pub use prior::{GammaPriorSpec, GroupMap, PriorModel, PriorSample, SlabParams};
