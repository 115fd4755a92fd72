//! Solver selection by name and post-processing shared by the front ends.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{run_penalty_barrier_newton, run_vanilla_barrier, BaselineSchedule};
use crate::coordinator::{run_aladin_beta, AladinConfig, SolveResult};
use crate::error::{Error, Result};
use crate::linalg::norm2;
use crate::problem::MpccOracle;

/// The four solvers of the benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    AladinBeta,
    PbPerStep,
    PbPerBarrier,
    Vanilla,
}

impl SolverKind {
    pub const ALL: [SolverKind; 4] = [
        SolverKind::AladinBeta,
        SolverKind::PbPerStep,
        SolverKind::PbPerBarrier,
        SolverKind::Vanilla,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SolverKind::AladinBeta => "aladin_beta",
            SolverKind::PbPerStep => "pb_per_step",
            SolverKind::PbPerBarrier => "pb_per_barrier",
            SolverKind::Vanilla => "vanilla",
        }
    }

    /// Whether the solver reports consensus and local-equality residuals.
    pub fn is_distributed(self) -> bool {
        self == SolverKind::AladinBeta
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SolverKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                let valid: Vec<&str> = SolverKind::ALL.iter().map(|k| k.as_str()).collect();
                Error::InvalidArgument(format!(
                    "unknown solver '{s}' (valid: {})",
                    valid.join(", ")
                ))
            })
    }
}

pub fn run_solver(
    kind: SolverKind,
    oracle: &dyn MpccOracle,
    x0: &[f64],
    cfg: &AladinConfig,
) -> Result<SolveResult> {
    match kind {
        SolverKind::AladinBeta => run_aladin_beta(oracle, x0, cfg),
        SolverKind::PbPerStep => {
            run_penalty_barrier_newton(oracle, x0, cfg, BaselineSchedule::PerStep)
        }
        SolverKind::PbPerBarrier => {
            run_penalty_barrier_newton(oracle, x0, cfg, BaselineSchedule::PerBarrierSolve)
        }
        SolverKind::Vanilla => run_vanilla_barrier(oracle, x0, cfg),
    }
}

/// Start point with unit distance to every bound: `+1` for nonnegative and
/// free coordinates, `−1` for nonpositive ones.
pub fn default_start(oracle: &dyn MpccOracle) -> Vec<f64> {
    oracle
        .bounds()
        .iter()
        .map(|b| b.orientation().unwrap_or(1.0))
        .collect()
}

/// `‖x_k − reference‖₂` for every iterate of `result`.
pub fn iterate_errors(result: &SolveResult, reference: &[f64]) -> Vec<f64> {
    result
        .iterates
        .iter()
        .map(|x| {
            norm2(
                &x.iter()
                    .zip(reference)
                    .map(|(a, b)| a - b)
                    .collect::<Vec<_>>(),
            )
        })
        .collect()
}
