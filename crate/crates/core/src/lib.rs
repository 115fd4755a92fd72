//! Distributed and centralized solvers for nonlinear programs with
//! complementarity (orthogonality) constraints.
//!
//! The constraint `G(x)ᵀH(x) = 0` is handled through an ℓ1-exact penalty
//! with slack pair `(p, n)` and relaxed log-barriers on sign bounds and
//! slacks. [`coordinator::run_aladin_beta`] splits that problem into three
//! independently solvable blocks coordinated by a consensus QP;
//! [`baselines`] solves the same penalty-barrier problem centrally.

// negated comparisons such as `!(x > 0.0)` are used to reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod coordinator;
pub mod error;
pub mod linalg;
pub mod problem;
pub mod reformulate;
pub mod runner;
pub mod subsolvers;

pub use baselines::{run_penalty_barrier_newton, run_vanilla_barrier, BaselineSchedule};
pub use coordinator::{run_aladin_beta, AladinConfig, IterationRecord, SolveResult, SolveStatus};
pub use error::{Error, Result};
pub use linalg::DenseMatrix;
pub use problem::{
    canonical_nearest_minimizer, finite_diff_check, make_canonical, BoundSign, ComplementarityMode,
    MpccOracle, QpccProblem,
};
pub use reformulate::SplitState;
pub use runner::{default_start, iterate_errors, run_solver, SolverKind};
