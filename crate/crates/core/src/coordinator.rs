//! Coordination step and outer loop of ALADIN-β.
//!
//! Every outer iteration solves the three subproblems in parallel, turns
//! their solutions into local quadratic models, and couples the models in
//! an equality-constrained consensus QP. The QP multiplier of the coupling
//! constraint becomes the new dual estimate.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{kkt_solve, norm_inf, DenseMatrix, RegConfig};
use crate::problem::{check_finite, MpccOracle};
use crate::reformulate::{
    build_coupling, coupling_residual, eval_local_equality, local_equality_jacobian, Alpha,
    CouplingMatrices, Gamma, SplitState, SplitWeights,
};
use crate::subsolvers::{
    assemble_sensitivities, solve_subproblems, stationarity_gaps, InnerConfig, ProxWeights,
    Sensitivities, SubproblemSolution,
};

/// Every tunable of the solvers, with a flat layout so that single fields
/// can be overridden by name (see [`AladinConfig::set`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AladinConfig {
    pub mu0: f64,
    pub mu_shrink: f64,
    pub mu_min: f64,
    pub rho0: f64,
    pub rho_grow: f64,
    pub rho_max: f64,
    /// Barrier relaxation; the slack relaxation stays at this value while
    /// the bound relaxation shrinks with `μ`.
    pub r: f64,
    /// Bound relaxation `clamp(r·(μ/μ0)^r_exponent, r_min, r)`.
    pub r_exponent: f64,
    pub r_min: f64,
    pub w_p: f64,
    pub w_m: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub sigma3: f64,
    pub theta: f64,
    /// Threshold on `‖g(x)‖∞`.
    pub tol_comp: f64,
    /// Threshold on the consensus violation of the subproblem solutions.
    pub tol_cons: f64,
    /// Threshold on the primal step.
    pub tol_step: f64,
    pub max_outer: usize,
    /// Margin added to the initial slacks.
    pub slack_margin: f64,
    pub inner_tol: f64,
    pub inner_max_iter: usize,
    pub inner_armijo: f64,
    pub inner_backtrack: f64,
    /// KKT tolerance at which the per-barrier-solve baseline moves to the
    /// next `(μ, ρ)`.
    pub barrier_solve_tol: f64,
    pub reg_delta0: f64,
    pub reg_eps_pd: f64,
    pub reg_max_shifts: usize,
    /// When set, every record carries `‖x − reference‖₂`.
    pub reference_solution: Option<Vec<f64>>,
}

impl Default for AladinConfig {
    fn default() -> Self {
        AladinConfig {
            mu0: 10.0,
            mu_shrink: 0.2,
            mu_min: 1e-16,
            rho0: 10.0,
            rho_grow: 4.0,
            rho_max: 1e12,
            r: 1.0,
            r_exponent: 0.5,
            r_min: 1e-16,
            w_p: 10.0,
            w_m: 10.0,
            sigma1: 10.0,
            sigma2: 10.0,
            sigma3: 10.0,
            theta: 0.5,
            tol_comp: 1e-12,
            tol_cons: 1e-8,
            tol_step: 1e-10,
            max_outer: 200,
            slack_margin: 0.1,
            inner_tol: 1e-12,
            inner_max_iter: 50,
            inner_armijo: 1e-4,
            inner_backtrack: 0.5,
            barrier_solve_tol: 1e-8,
            reg_delta0: 1e-8,
            reg_eps_pd: 1e-8,
            reg_max_shifts: 8,
            reference_solution: None,
        }
    }
}

impl AladinConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mu0", self.mu0),
            ("mu_min", self.mu_min),
            ("rho0", self.rho0),
            ("rho_max", self.rho_max),
            ("r", self.r),
            ("r_min", self.r_min),
            ("w_p", self.w_p),
            ("w_m", self.w_m),
            ("sigma1", self.sigma1),
            ("sigma2", self.sigma2),
            ("sigma3", self.sigma3),
            ("tol_comp", self.tol_comp),
            ("tol_cons", self.tol_cons),
            ("tol_step", self.tol_step),
            ("inner_tol", self.inner_tol),
            ("barrier_solve_tol", self.barrier_solve_tol),
            ("reg_delta0", self.reg_delta0),
            ("reg_eps_pd", self.reg_eps_pd),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !(self.mu_shrink > 0.0 && self.mu_shrink < 1.0) {
            return Err(Error::InvalidArgument(
                "mu_shrink must lie in (0, 1)".into(),
            ));
        }
        if !(self.rho_grow > 1.0 && self.rho_grow.is_finite()) {
            return Err(Error::InvalidArgument("rho_grow must exceed 1".into()));
        }
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return Err(Error::InvalidArgument("theta must lie in (0, 1]".into()));
        }
        if !(self.r_exponent >= 0.0 && self.r_exponent.is_finite()) {
            return Err(Error::InvalidArgument(
                "r_exponent must be non-negative".into(),
            ));
        }
        if !(self.slack_margin > 0.0) {
            return Err(Error::InvalidArgument(
                "slack_margin must be positive".into(),
            ));
        }
        if !(self.inner_armijo > 0.0 && self.inner_armijo < 0.5) {
            return Err(Error::InvalidArgument(
                "inner_armijo must lie in (0, 0.5)".into(),
            ));
        }
        if !(self.inner_backtrack > 0.0 && self.inner_backtrack < 1.0) {
            return Err(Error::InvalidArgument(
                "inner_backtrack must lie in (0, 1)".into(),
            ));
        }
        if self.max_outer == 0 || self.inner_max_iter == 0 {
            return Err(Error::InvalidArgument(
                "iteration limits must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Overrides one field from its textual value. Values are read as JSON
    /// (`1e-8`, `200`, `[1, 0]`, `null`).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut doc = serde_json::to_value(&*self).expect("config serializes");
        let map = doc.as_object_mut().expect("config is an object");
        if !map.contains_key(key) {
            let mut known: Vec<&str> = map.keys().map(String::as_str).collect();
            known.sort_unstable();
            return Err(Error::InvalidArgument(format!(
                "unknown config key '{key}' (known: {})",
                known.join(", ")
            )));
        }
        let parsed: serde_json::Value = serde_json::from_str(value.trim())
            .map_err(|e| Error::InvalidArgument(format!("bad value for '{key}': {e}")))?;
        map.insert(key.to_string(), parsed);
        let updated: AladinConfig = serde_json::from_value(doc)
            .map_err(|e| Error::InvalidArgument(format!("bad value for '{key}': {e}")))?;
        updated.validate()?;
        *self = updated;
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let cfg: AladinConfig = serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn weights(&self, mu: f64, rho: f64) -> SplitWeights {
        SplitWeights {
            w_p: self.w_p,
            w_m: self.w_m,
            r: self.bound_relaxation(mu),
            r_slack: self.r,
            mu,
            rho,
        }
    }

    /// Relaxation of the bounds on `β` at barrier parameter `mu`:
    /// `r·(μ/μ₀)^r_exponent`, floored at `r_min`.
    pub fn bound_relaxation(&self, mu: f64) -> f64 {
        (self.r * (mu / self.mu0).powf(self.r_exponent))
            .max(self.r_min)
            .min(self.r)
    }

    pub fn prox(&self) -> ProxWeights {
        ProxWeights {
            sigma1: self.sigma1,
            sigma2: self.sigma2,
            sigma3: self.sigma3,
        }
    }

    pub fn inner(&self) -> InnerConfig {
        InnerConfig {
            tol: self.inner_tol,
            max_iter: self.inner_max_iter,
            armijo: self.inner_armijo,
            backtrack: self.inner_backtrack,
        }
    }

    pub fn reg(&self) -> RegConfig {
        RegConfig {
            delta0: self.reg_delta0,
            eps_pd: self.reg_eps_pd,
            max_shifts: self.reg_max_shifts,
        }
    }
}

/// Telemetry of one outer iteration. `mu` and `rho` are the values the
/// iteration was run with.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub k: usize,
    pub mu: f64,
    pub rho: f64,
    pub objective: f64,
    pub comp_residual: f64,
    /// `None` for centralized solvers.
    pub consensus_residual: Option<f64>,
    pub local_eq_residual: Option<f64>,
    pub step_norm: f64,
    pub x_error: Option<f64>,
    pub inner_iters: usize,
    pub wall_time: Duration,
    /// Largest relative gap between closed-form and direct gradients.
    pub stationarity_gap: Option<f64>,
    /// Relative residual of the coordination linear system.
    pub kkt_residual: Option<f64>,
}

impl IterationRecord {
    fn tracked(&self) -> impl Iterator<Item = f64> + '_ {
        [
            self.mu,
            self.rho,
            self.objective,
            self.comp_residual,
            self.step_norm,
        ]
        .into_iter()
        .chain(self.consensus_residual)
        .chain(self.local_eq_residual)
        .chain(self.x_error)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    InnerSolverFailure,
    LinearSolverSingular,
    Diverged,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Converged => "converged",
            SolveStatus::MaxIterations => "max_iterations",
            SolveStatus::InnerSolverFailure => "inner_solver_failure",
            SolveStatus::LinearSolverSingular => "linear_solver_singular",
            SolveStatus::Diverged => "diverged",
        }
    }

    pub(crate) fn from_error(e: &Error) -> Self {
        match e.root() {
            Error::InnerSolverFailure { .. } => SolveStatus::InnerSolverFailure,
            Error::LinearSolverSingular { .. } | Error::Singular { .. } => {
                SolveStatus::LinearSolverSingular
            }
            _ => SolveStatus::Diverged,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub status: SolveStatus,
    /// Last accepted iterate.
    pub state: SplitState,
    pub records: Vec<IterationRecord>,
    /// `x` after every iteration, aligned with `records`.
    pub iterates: Vec<Vec<f64>>,
    /// The failure behind a non-converged, non-exhausted status.
    pub error: Option<Error>,
}

impl SolveResult {
    pub fn x(&self) -> &[f64] {
        &self.state.alpha.x
    }

    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    /// First iteration index whose complementarity residual is at most `tol`.
    pub fn first_iteration_below(&self, tol: f64) -> Option<usize> {
        self.records
            .iter()
            .find(|r| r.comp_residual <= tol)
            .map(|r| r.k)
    }
}

/// Output of [`solve_consensus_qp`].
#[derive(Debug, Clone)]
pub struct ConsensusStep {
    pub alpha: Alpha,
    pub beta: Vec<f64>,
    pub gamma: Gamma,
    pub lambda_qp: Vec<f64>,
    /// `max(‖HΔ + g + Jᵀν‖∞, ‖JΔ − c‖∞) / (1 + ‖rhs‖∞)`.
    pub kkt_residual: f64,
}

/// Solves the coordination QP
///
/// ```text
/// min  ½ΔᵀHΔ + gᵀΔ   s.t.  C Δα = 0,   A₁(α̂ + Δα) + A₂(β̂ + Δβ) + A₃(γ̂ + Δγ) = 0 | λ_QP
/// ```
///
/// with `H = blkdiag(H₁, H₂, H₃)`, through one factorization of its KKT matrix.
pub fn solve_consensus_qp(
    hats: &SubproblemSolution,
    sens: &Sensitivities,
    c: &DenseMatrix,
    coupling: &CouplingMatrices,
    reg: &RegConfig,
) -> Result<ConsensusStep> {
    let (n, d) = (hats.beta_hat.len(), hats.kappa_hat.len());
    let na = n + 2 * d;
    let total = na + n + 2 * d;

    let mut h = DenseMatrix::zeros(total, total);
    h.set_block(0, 0, &sens.h1);
    for (i, &v) in sens.h2.iter().enumerate() {
        h[(na + i, na + i)] = v;
    }
    for (i, &v) in sens.h3.iter().enumerate() {
        h[(na + n + i, na + n + i)] = v;
    }

    let mut j = DenseMatrix::zeros(d + na, total);
    j.set_block(0, 0, c);
    j.set_block(d, 0, &coupling.stacked());

    let mut g = sens.g1.clone();
    g.extend_from_slice(&sens.g2);
    g.extend_from_slice(&sens.g3);

    let alpha_hat = hats.alpha_hat.to_vec();
    let gamma_hat = hats.gamma_hat.to_vec();
    let mut rhs_c = vec![0.0; d];
    rhs_c.extend(
        coupling
            .apply(&alpha_hat, &hats.beta_hat, &gamma_hat)
            .into_iter()
            .map(|v| -v),
    );

    let sol = kkt_solve(&h, &j, &g, &rhs_c, reg)?;

    // residual of the system that was actually posed (unshifted H)
    let mut stat = h.matvec(&sol.step);
    for (s, (gi, jt)) in stat
        .iter_mut()
        .zip(g.iter().zip(j.tr_matvec(&sol.multipliers)))
    {
        *s += gi + jt;
    }
    let prim: Vec<f64> = j
        .matvec(&sol.step)
        .iter()
        .zip(&rhs_c)
        .map(|(a, b)| a - b)
        .collect();
    let rhs_norm = norm_inf(&g).max(norm_inf(&rhs_c));
    let kkt_residual = norm_inf(&stat).max(norm_inf(&prim)) / (1.0 + rhs_norm);

    let step = &sol.step;
    let alpha: Vec<f64> = alpha_hat
        .iter()
        .zip(&step[..na])
        .map(|(a, s)| a + s)
        .collect();
    let beta: Vec<f64> = hats
        .beta_hat
        .iter()
        .zip(&step[na..na + n])
        .map(|(a, s)| a + s)
        .collect();
    let gamma: Vec<f64> = gamma_hat
        .iter()
        .zip(&step[na + n..])
        .map(|(a, s)| a + s)
        .collect();
    Ok(ConsensusStep {
        alpha: Alpha::from_stacked(&alpha, n, d),
        beta,
        gamma: Gamma::from_stacked(&gamma, d),
        lambda_qp: sol.multipliers[d..].to_vec(),
        kkt_residual,
    })
}

/// `λ + θ(λ_QP − λ)`
pub fn dual_update(lambda: &[f64], lambda_qp: &[f64], theta: f64) -> Vec<f64> {
    lambda
        .iter()
        .zip(lambda_qp)
        .map(|(l, q)| l + theta * (q - l))
        .collect()
}

/// One step of the fixed-rate schedule: `μ` shrinks to its floor, `ρ`
/// grows to its cap.
pub fn update_parameters(mu: f64, rho: f64, cfg: &AladinConfig) -> (f64, f64) {
    (
        (mu * cfg.mu_shrink).max(cfg.mu_min),
        (rho * cfg.rho_grow).min(cfg.rho_max),
    )
}

/// `None` means keep iterating.
pub fn check_termination(record: &IterationRecord, cfg: &AladinConfig) -> Option<SolveStatus> {
    if record.tracked().any(|v| !v.is_finite()) {
        return Some(SolveStatus::Diverged);
    }
    let consensus_ok = record.consensus_residual.is_none_or(|c| c <= cfg.tol_cons);
    if record.comp_residual <= cfg.tol_comp && consensus_ok && record.step_norm <= cfg.tol_step {
        return Some(SolveStatus::Converged);
    }
    if record.k >= cfg.max_outer {
        return Some(SolveStatus::MaxIterations);
    }
    None
}

pub(crate) fn validate_start(oracle: &dyn MpccOracle, x0: &[f64], r: f64) -> Result<()> {
    if x0.len() != oracle.n() {
        return Err(Error::Dimension(format!(
            "x0 has {} entries, problem has {}",
            x0.len(),
            oracle.n()
        )));
    }
    check_finite("x0", x0)?;
    for (i, (&xi, sign)) in x0.iter().zip(oracle.bounds()).enumerate() {
        if let Some(tau) = sign.orientation() {
            if r + tau * xi <= 0.0 {
                return Err(Error::Domain {
                    index: i,
                    argument: r + tau * xi,
                });
            }
        }
    }
    Ok(())
}

/// Slack pair that splits `g(x0)` with a positive margin on both sides.
pub(crate) fn initial_slacks(g0: &[f64], margin: f64) -> (Vec<f64>, Vec<f64>) {
    let p = g0.iter().map(|g| g.max(0.0) + margin).collect();
    let n = g0.iter().map(|g| (-g).max(0.0) + margin).collect();
    (p, n)
}

/// The starting iterate: `β = x0`, slacks split `g(x0)`, replicas agree
/// with the slacks and all duals are zero.
pub fn initial_state(
    oracle: &dyn MpccOracle,
    x0: &[f64],
    cfg: &AladinConfig,
) -> Result<SplitState> {
    validate_start(oracle, x0, cfg.r)?;
    let g0 = oracle.eval_g(x0);
    check_finite("eval_g", &g0)?;
    let (p, n) = initial_slacks(&g0, cfg.slack_margin);
    let d = g0.len();
    Ok(SplitState {
        alpha: Alpha {
            x: x0.to_vec(),
            q: p.clone(),
            m_copy: n.clone(),
        },
        beta: x0.to_vec(),
        gamma: Gamma { p, n_slack: n },
        lambda: vec![0.0; x0.len() + 2 * d],
        kappa: vec![0.0; d],
    })
}

/// Adds `delta` to every slack and slack replica. The local equality and
/// the coupling residual are unchanged.
fn translate_slacks(state: &mut SplitState, delta: f64) {
    for v in state
        .alpha
        .q
        .iter_mut()
        .chain(state.alpha.m_copy.iter_mut())
        .chain(state.gamma.p.iter_mut())
        .chain(state.gamma.n_slack.iter_mut())
    {
        *v += delta;
    }
}

fn linf_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

pub(crate) fn x_error(x: &[f64], reference: Option<&Vec<f64>>) -> Option<f64> {
    reference.map(|r| {
        x.iter()
            .zip(r)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    })
}

pub type RecordSink<'a> = &'a mut dyn FnMut(&IterationRecord);

/// Runs ALADIN-β from `x0`.
pub fn run_aladin_beta(
    oracle: &dyn MpccOracle,
    x0: &[f64],
    cfg: &AladinConfig,
) -> Result<SolveResult> {
    run_aladin_beta_with_sink(oracle, x0, cfg, None)
}

/// [`run_aladin_beta`] with every record also passed to `sink` as soon as
/// it is produced.
pub fn run_aladin_beta_with_sink(
    oracle: &dyn MpccOracle,
    x0: &[f64],
    cfg: &AladinConfig,
    mut sink: Option<RecordSink<'_>>,
) -> Result<SolveResult> {
    cfg.validate()?;
    if let Some(r) = &cfg.reference_solution {
        if r.len() != oracle.n() {
            return Err(Error::Dimension(
                "reference_solution has the wrong length".into(),
            ));
        }
    }
    // The slack relaxation is absorbed into (q, m, p, n) so that barrier
    // arguments near zero keep full relative precision.
    let mut state = initial_state(oracle, x0, cfg)?;
    translate_slacks(&mut state, cfg.r);
    let untranslated = |mut s: SplitState| {
        translate_slacks(&mut s, -cfg.r);
        s
    };
    let (n, d) = (state.n(), state.dim_g());
    let coupling = build_coupling(n, d);
    let (prox, inner, reg) = (cfg.prox(), cfg.inner(), cfg.reg());

    let mut mu = cfg.mu0;
    let mut rho = cfg.rho0;
    let mut records = Vec::new();
    let mut iterates = Vec::new();
    let started = Instant::now();

    for k in 1.. {
        let w = SplitWeights {
            r_slack: 0.0,
            ..cfg.weights(mu, rho)
        };
        let step = aladin_iteration(
            &state, oracle, &w, &prox, &inner, &reg, &coupling, cfg.theta,
        );
        let (next, hats, sens_info) = match step {
            Ok(v) => v,
            Err(e) => {
                let status = SolveStatus::from_error(&e);
                let state = untranslated(state);
                return Ok(SolveResult {
                    status,
                    state,
                    records,
                    iterates,
                    error: Some(e.at(k)),
                });
            }
        };

        let x = &next.alpha.x;
        let record = IterationRecord {
            k,
            mu,
            rho,
            objective: oracle.eval_f(x),
            comp_residual: norm_inf(&oracle.eval_g(x)),
            consensus_residual: Some(norm_inf(&coupling_residual(
                &hats.alpha_hat,
                &hats.beta_hat,
                &hats.gamma_hat,
            ))),
            local_eq_residual: Some(
                eval_local_equality(&next.alpha, oracle).map_or(f64::NAN, |v| norm_inf(&v)),
            ),
            step_norm: linf_diff(&next.alpha.to_vec(), &state.alpha.to_vec())
                .max(linf_diff(&next.beta, &state.beta))
                .max(linf_diff(&next.gamma.to_vec(), &state.gamma.to_vec())),
            x_error: x_error(x, cfg.reference_solution.as_ref()),
            inner_iters: hats.inner_iterations,
            wall_time: started.elapsed(),
            stationarity_gap: Some(sens_info.0),
            kkt_residual: Some(sens_info.1),
        };
        if let Some(s) = sink.as_mut() {
            s(&record);
        }
        let verdict = check_termination(&record, cfg);
        iterates.push(x.clone());
        records.push(record);

        if verdict == Some(SolveStatus::Diverged) {
            let state = untranslated(state);
            return Ok(SolveResult {
                status: SolveStatus::Diverged,
                state,
                records,
                iterates,
                error: None,
            });
        }
        state = next;
        if let Some(status) = verdict {
            let state = untranslated(state);
            return Ok(SolveResult {
                status,
                state,
                records,
                iterates,
                error: None,
            });
        }
        (mu, rho) = update_parameters(mu, rho, cfg);
    }
    unreachable!("outer loop exits through termination")
}

/// One pass of subproblems, sensitivities, consensus QP and dual update.
/// Also returns the worst stationarity gap and the QP KKT residual.
#[allow(clippy::too_many_arguments)]
fn aladin_iteration(
    state: &SplitState,
    oracle: &dyn MpccOracle,
    w: &SplitWeights,
    prox: &ProxWeights,
    inner: &InnerConfig,
    reg: &RegConfig,
    coupling: &CouplingMatrices,
    theta: f64,
) -> Result<(SplitState, SubproblemSolution, (f64, f64))> {
    let hats = solve_subproblems(state, oracle, w, prox, inner, reg)?;
    let sens = assemble_sensitivities(state, &hats, oracle, w, prox, reg)?;
    let gap = stationarity_gaps(state, &hats, &sens, oracle, w)?
        .into_iter()
        .fold(0.0, f64::max);
    let c = local_equality_jacobian(&hats.alpha_hat, oracle)?;
    let qp = solve_consensus_qp(&hats, &sens, &c, coupling, reg)?;

    let next = SplitState {
        alpha: qp.alpha,
        beta: qp.beta,
        gamma: qp.gamma,
        lambda: dual_update(&state.lambda, &qp.lambda_qp, theta),
        kappa: hats.kappa_hat.clone(),
    };
    next.check_finite()?;
    Ok((next, hats, (gap, qp.kkt_residual)))
}
