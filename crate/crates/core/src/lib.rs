//! Accelerated stochastic variance-reduced ADMM (ASVRG-ADMM) for
//!
//! ```text
//! minimize  (1/n) Σ f_i(x) + g(y)   subject to  Ax + By = c
//! ```
//!
//! with smooth, possibly nonconvex `f_i` and convex `g`, together with the
//! SVRG-ADMM, SADMM and SADMM-F baselines, a diagnostics kit that evaluates
//! the convergence theory numerically (constant ledger, potential energy,
//! O(1/T) bound, optimal parameters), LIBSVM ingestion and a Monte-Carlo
//! benchmark harness.
//!
//! Data-parallel loops (component sums, exhaustive variance probes and
//! Monte-Carlo runs) use rayon when the `parallel` feature is enabled and
//! fall back to sequential iteration otherwise. Reductions are chunked in a
//! fixed order so both paths produce bitwise-identical results.

pub mod bench;
pub mod data;
pub mod error;
pub mod estimators;
pub mod exec;
pub mod linalg;
pub mod problem;
pub mod solvers;
pub mod theory;

pub use error::{Error, Result};
pub use linalg::{RealMatrix, SpectralSummary};
pub use problem::{ComponentLoss, ConstrainedProblem, Regularizer};
pub use solvers::{Algorithm, IterateState, SolveResult, SolveStatus, SolverConfig};
