//! Centralized comparators for ALADIN-β.
//!
//! [`run_penalty_barrier_newton`] solves the ℓ1-penalty-barrier problem
//!
//! ```text
//! min  f(x) + ϕ(x) + ρ(p + n)ᵀe − μ Σ ln(r + p) − μ Σ ln(r + n)
//! s.t. g(x) − p + n = 0
//! ```
//!
//! over `(x, p, n)` jointly with damped Newton steps, updating `(μ, ρ)` on
//! one of two schedules. The equality is linear in the slacks, so `p` is
//! eliminated and the steps are taken in `(x, n)`, as in subproblem 1.
//! [`run_vanilla_barrier`] drops the slacks and enforces `g(x) = 0` directly
//! through Newton-KKT steps.
//!
//! Both use the schedule constants, bound relaxation and termination rules
//! of the coordinator. Slacks are stored as `r + p` and `r + n`, which keeps
//! full relative precision when a slack approaches its bound.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::coordinator::{
    check_termination, initial_slacks, update_parameters, validate_start, x_error, AladinConfig,
    IterationRecord, SolveResult, SolveStatus,
};
use crate::error::{Error, Result};
use crate::linalg::{dot, kkt_solve, norm2, norm_inf, solve_equilibrated, DenseMatrix};
use crate::problem::{check_finite, MpccOracle};
use crate::reformulate::{
    barrier_arg, eval_varphi, grad_varphi, hess_varphi_diag, Alpha, Gamma, SplitState, SplitWeights,
};
use crate::subsolvers::{convexify, curvature_shift};

/// When the penalty-barrier baseline moves to the next `(μ, ρ)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BaselineSchedule {
    /// After every Newton step.
    PerStep,
    /// Once the KKT residual of the current barrier problem is at most
    /// `barrier_solve_tol`.
    PerBarrierSolve,
}

/// Fraction of the distance to a barrier boundary that a step may cover.
const TO_BOUNDARY: f64 = 0.995;
/// Bound push after the bound relaxation shrinks, relative to the new relaxation.
const PUSH: f64 = 1e-2;
const MAX_BACKTRACKS: usize = 60;

/// Outcome of one Newton step.
struct Step<P> {
    point: P,
    trials: usize,
    /// Scaled KKT residual at the new point.
    kkt: f64,
    /// The direction was below working precision; the point is unchanged.
    stalled: bool,
}

/// A centralized method driven by the common outer loop.
trait Centralized {
    type Point: Clone;
    fn start(&self, x0: &[f64], g0: &[f64]) -> Self::Point;
    fn x<'p>(&self, pt: &'p Self::Point) -> &'p [f64];
    /// Primal variables compared by the step norm.
    fn primal(&self, pt: &Self::Point) -> Vec<f64>;
    fn step(&self, pt: &Self::Point, w: &SplitWeights) -> Result<Step<Self::Point>>;
    /// Restores strict feasibility after the bound relaxation has shrunk.
    fn push(&self, pt: &mut Self::Point, w: &SplitWeights);
    fn state(&self, pt: &Self::Point, w: &SplitWeights) -> SplitState;
    fn uses_penalty(&self) -> bool;
}

/// Keeps bounded coordinates strictly inside the domain relaxed by `r`.
fn push_into_domain(oracle: &dyn MpccOracle, x: &mut [f64], r: f64) {
    for (xi, sign) in x.iter_mut().zip(oracle.bounds()) {
        if let Some(tau) = sign.orientation() {
            let floor = PUSH * r;
            if r + tau * *xi < floor {
                *xi = tau * (floor - r);
            }
        }
    }
}

/// Lowers `t` so that `arg + t·darg ≥ (1 − TO_BOUNDARY)·arg`.
fn limit_to_boundary(t: &mut f64, arg: f64, darg: f64) {
    if darg < 0.0 {
        *t = t.min(-TO_BOUNDARY * arg / darg);
    }
}

fn limit_bounds(oracle: &dyn MpccOracle, x: &[f64], dx: &[f64], r: f64, t: &mut f64) {
    for ((&xi, &di), sign) in x.iter().zip(dx).zip(oracle.bounds()) {
        if let Some(tau) = sign.orientation() {
            limit_to_boundary(t, r + tau * xi, tau * di);
        }
    }
}

/// Penalty-barrier iterate: `x` and the shifted slack `r + n`; the shifted
/// `r + p = g(x) + (r + n)` is implied.
#[derive(Debug, Clone)]
struct PbPoint {
    x: Vec<f64>,
    n: Vec<f64>,
}

/// Values of the reduced objective `F(x, n)` and its derivatives.
struct PbEval {
    f: f64,
    barrier: f64,
    g: Vec<f64>,
    p: Vec<f64>,
    /// Multiplier of `g(x) − p + n = 0`, `ρ − μ/(r + p)`.
    nu: Vec<f64>,
    grad: Vec<f64>,
    kkt: f64,
}

struct PenaltyBarrier<'a> {
    oracle: &'a dyn MpccOracle,
    cfg: &'a AladinConfig,
}

impl PenaltyBarrier<'_> {
    fn eval(&self, pt: &PbPoint, w: &SplitWeights) -> Result<PbEval> {
        let o = self.oracle;
        let f = o.eval_f(&pt.x);
        check_finite("eval_f", std::slice::from_ref(&f))?;
        let barrier = eval_varphi(&pt.x, o.bounds(), w)?;
        let g = o.eval_g(&pt.x);
        check_finite("eval_g", &g)?;
        let d = g.len();
        let mut p = Vec::with_capacity(d);
        for (i, (gi, ni)) in g.iter().zip(&pt.n).enumerate() {
            p.push(barrier_arg(0.0, 1.0, gi + ni, i)?);
            barrier_arg(0.0, 1.0, *ni, d + i)?;
        }
        let nu: Vec<f64> = p.iter().map(|s| w.rho - w.mu / s).collect();

        let gf = o.grad_f(&pt.x);
        check_finite("grad_f", &gf)?;
        let gb = grad_varphi(&pt.x, o.bounds(), w)?;
        let jac = o.jac_g(&pt.x);
        check_finite("jac_g", jac.as_slice())?;
        let jtnu = jac.tr_matvec(&nu);
        let mut grad: Vec<f64> = (0..pt.x.len()).map(|j| gf[j] + gb[j] + jtnu[j]).collect();
        let x_scale = norm_inf(&gf).max(norm_inf(&gb)).max(norm_inf(&jtnu));
        let mut kkt = norm_inf(&grad) / (1.0 + x_scale);
        let gn: Vec<f64> =
            pt.n.iter()
                .zip(&nu)
                .map(|(s, v)| v + w.rho - w.mu / s)
                .collect();
        kkt = kkt.max(norm_inf(&gn) / (1.0 + w.rho));
        grad.extend(gn);
        Ok(PbEval {
            f,
            barrier,
            g,
            p,
            nu,
            grad,
            kkt,
        })
    }

    /// `F(b) − F(a)`, formed from differences so that the large constant
    /// parts of `F` cancel exactly.
    fn difference(&self, a: &PbEval, an: &[f64], b: &PbEval, bn: &[f64], w: &SplitWeights) -> f64 {
        let mut d = (b.f - a.f) + (b.barrier - a.barrier);
        for i in 0..a.p.len() {
            let dp = (b.g[i] - a.g[i]) + (bn[i] - an[i]);
            d += w.rho * (dp + (bn[i] - an[i]));
            d -= w.mu * ((b.p[i] / a.p[i]).ln() + (bn[i] / an[i]).ln());
        }
        d
    }
}

impl Centralized for PenaltyBarrier<'_> {
    type Point = PbPoint;

    fn start(&self, x0: &[f64], g0: &[f64]) -> PbPoint {
        let (_, n) = initial_slacks(g0, self.cfg.slack_margin);
        PbPoint {
            x: x0.to_vec(),
            n: n.into_iter().map(|s| s + self.cfg.r).collect(),
        }
    }

    fn x<'p>(&self, pt: &'p PbPoint) -> &'p [f64] {
        &pt.x
    }

    fn primal(&self, pt: &PbPoint) -> Vec<f64> {
        let g = self.oracle.eval_g(&pt.x);
        let p = g.iter().zip(&pt.n).map(|(a, b)| a + b);
        pt.x.iter().chain(&pt.n).copied().chain(p).collect()
    }

    /// Newton step on `F(x, n)` with the slack block eliminated:
    /// `(W + Jᵀ D J) dx = −∇ₓF + Jᵀ(a ∘ ∇ₙF)` where `D = μ/(p² + n²)` and
    /// `a = n²/(p² + n²)`. `W` is shifted as in subproblem 1 so that steps
    /// leave saddle points.
    fn step(&self, pt: &PbPoint, w: &SplitWeights) -> Result<Step<PbPoint>> {
        let (o, cfg) = (self.oracle, self.cfg);
        let (nx, d) = (pt.x.len(), pt.n.len());
        let cur = self.eval(pt, w)?;

        let mut h = o.hess_f(&pt.x).add(&o.hess_gl(&pt.x, &cur.nu));
        check_finite("hessian", h.as_slice())?;
        for (j, v) in hess_varphi_diag(&pt.x, o.bounds(), w)?
            .into_iter()
            .enumerate()
        {
            h[(j, j)] += v;
        }
        h.add_to_diagonal(curvature_shift(&h, &cfg.reg())?);

        let jac = o.jac_g(&pt.x);
        let (gx, gn) = cur.grad.split_at(nx);
        let mut a = Vec::with_capacity(d);
        let mut inv_sum = Vec::with_capacity(d);
        let mut kkt = DenseMatrix::zeros(nx + d, nx + d);
        kkt.set_block(0, 0, &h);
        kkt.set_block(nx, 0, &jac);
        kkt.set_block(0, nx, &jac.transpose());
        for i in 0..d {
            let (p2, n2) = (cur.p[i] * cur.p[i], pt.n[i] * pt.n[i]);
            a.push(n2 / (p2 + n2));
            // 1 / (μ/p² + μ/n²)
            inv_sum.push(p2 / (p2 + n2) * n2 / w.mu);
            kkt[(nx + i, nx + i)] = -(p2 + n2) / w.mu;
        }
        // (W + Jᵀ D J) dx = rhs through the quasi-definite system
        // [W Jᵀ; J −D⁻¹] [dx; y] = [rhs; 0], which avoids forming Jᵀ D J
        let an: Vec<f64> = a.iter().zip(gn).map(|(ai, gi)| ai * gi).collect();
        let mut rhs: Vec<f64> = jac
            .tr_matvec(&an)
            .iter()
            .zip(gx)
            .map(|(u, v)| u - v)
            .collect();
        rhs.resize(nx + d, 0.0);
        let mut dx = solve_equilibrated(&kkt, &rhs)?;
        dx.truncate(nx);
        let jdx = jac.matvec(&dx);
        let dn: Vec<f64> = (0..d)
            .map(|i| -gn[i] * inv_sum[i] - a[i] * jdx[i])
            .collect();

        let dir: Vec<f64> = dx.iter().chain(&dn).copied().collect();
        let here: Vec<f64> = pt.x.iter().chain(&pt.n).copied().collect();
        if norm_inf(&dir) <= 16.0 * f64::EPSILON * (1.0 + norm_inf(&here)) {
            return Ok(Step {
                point: pt.clone(),
                trials: 0,
                kkt: cur.kkt,
                stalled: true,
            });
        }
        let slope = dot(&cur.grad, &dir);

        let mut t: f64 = 1.0;
        limit_bounds(o, &pt.x, &dx, w.r, &mut t);
        for i in 0..d {
            limit_to_boundary(&mut t, pt.n[i], dn[i]);
            limit_to_boundary(&mut t, cur.p[i], jdx[i] + dn[i]);
        }
        let gnorm = norm_inf(&cur.grad);
        for trials in 1..=MAX_BACKTRACKS {
            let trial = PbPoint {
                x: pt.x.iter().zip(&dx).map(|(u, v)| u + t * v).collect(),
                n: pt.n.iter().zip(&dn).map(|(u, v)| u + t * v).collect(),
            };
            if let Ok(te) = self.eval(&trial, w) {
                let decrease =
                    self.difference(&cur, &pt.n, &te, &trial.n, w) <= cfg.inner_armijo * t * slope;
                // the objective stalls at round-off before the gradient does
                let tg = norm_inf(&te.grad);
                let flatter = tg < gnorm && tg <= (1.0 - cfg.inner_armijo * t) * gnorm;
                if decrease || flatter {
                    return Ok(Step {
                        point: trial,
                        trials,
                        kkt: te.kkt,
                        stalled: false,
                    });
                }
            }
            t *= cfg.inner_backtrack;
        }
        Err(Error::InnerSolverFailure {
            iterations: MAX_BACKTRACKS,
            residual: cur.kkt,
        })
    }

    fn push(&self, pt: &mut PbPoint, w: &SplitWeights) {
        let before = self.oracle.eval_g(&pt.x);
        push_into_domain(self.oracle, &mut pt.x, w.r);
        let after = self.oracle.eval_g(&pt.x);
        // keep r + p at least half its previous value
        for i in 0..pt.n.len() {
            let (old, new) = (before[i] + pt.n[i], after[i] + pt.n[i]);
            if new < 0.5 * old {
                pt.n[i] += 0.5 * old - new;
            }
        }
    }

    fn state(&self, pt: &PbPoint, w: &SplitWeights) -> SplitState {
        let r = self.cfg.r;
        let g = self.oracle.eval_g(&pt.x);
        let shifted: Vec<f64> = g.iter().zip(&pt.n).map(|(a, b)| a + b).collect();
        let nu = shifted.iter().map(|s| w.rho - w.mu / s).collect();
        let p: Vec<f64> = shifted.iter().map(|s| s - r).collect();
        let n: Vec<f64> = pt.n.iter().map(|s| s - r).collect();
        consensus_state(&pt.x, p, n, nu)
    }

    fn uses_penalty(&self) -> bool {
        true
    }
}

/// A centralized iterate as a [`SplitState`] with every replica in
/// consensus and `κ` set to the constraint multiplier.
fn consensus_state(x: &[f64], p: Vec<f64>, n: Vec<f64>, nu: Vec<f64>) -> SplitState {
    let d = p.len();
    SplitState {
        alpha: Alpha {
            x: x.to_vec(),
            q: p.clone(),
            m_copy: n.clone(),
        },
        beta: x.to_vec(),
        gamma: Gamma { p, n_slack: n },
        lambda: vec![0.0; x.len() + 2 * d],
        kappa: nu,
    }
}

/// Vanilla iterate: `x` and the multiplier of `g(x) = 0`.
#[derive(Debug, Clone)]
struct VanillaPoint {
    x: Vec<f64>,
    nu: Vec<f64>,
}

struct Vanilla<'a> {
    oracle: &'a dyn MpccOracle,
    cfg: &'a AladinConfig,
}

impl Vanilla<'_> {
    /// Stationarity and feasibility residuals, and their scaled maximum.
    fn residual(&self, pt: &VanillaPoint, w: &SplitWeights) -> Result<(Vec<f64>, Vec<f64>, f64)> {
        let o = self.oracle;
        let gf = o.grad_f(&pt.x);
        check_finite("grad_f", &gf)?;
        let gb = grad_varphi(&pt.x, o.bounds(), w)?;
        let jac = o.jac_g(&pt.x);
        check_finite("jac_g", jac.as_slice())?;
        let g = o.eval_g(&pt.x);
        check_finite("eval_g", &g)?;
        let jtnu = jac.tr_matvec(&pt.nu);
        let rx: Vec<f64> = (0..pt.x.len()).map(|j| gf[j] + gb[j] + jtnu[j]).collect();
        let scale = norm_inf(&gf).max(norm_inf(&gb)).max(norm_inf(&jtnu));
        let kkt = (norm_inf(&rx) / (1.0 + scale)).max(norm_inf(&g));
        Ok((rx, g, kkt))
    }
}

impl Centralized for Vanilla<'_> {
    type Point = VanillaPoint;

    fn start(&self, x0: &[f64], g0: &[f64]) -> VanillaPoint {
        VanillaPoint {
            x: x0.to_vec(),
            nu: vec![0.0; g0.len()],
        }
    }

    fn x<'p>(&self, pt: &'p VanillaPoint) -> &'p [f64] {
        &pt.x
    }

    fn primal(&self, pt: &VanillaPoint) -> Vec<f64> {
        pt.x.clone()
    }

    /// Newton-KKT step on `[W Jᵀ; J 0]`, damped by backtracking on the
    /// residual norm. The convexified `W` is tried before the exact one.
    fn step(&self, pt: &VanillaPoint, w: &SplitWeights) -> Result<Step<VanillaPoint>> {
        let (o, cfg) = (self.oracle, self.cfg);
        let (rx, g, kkt) = self.residual(pt, w)?;
        let merit = norm2(&rx).hypot(norm2(&g));
        let mut h = o.hess_f(&pt.x).add(&o.hess_gl(&pt.x, &pt.nu));
        check_finite("hessian", h.as_slice())?;
        for (j, v) in hess_varphi_diag(&pt.x, o.bounds(), w)?
            .into_iter()
            .enumerate()
        {
            h[(j, j)] += v;
        }
        let jac = o.jac_g(&pt.x);
        let neg_g: Vec<f64> = g.iter().map(|v| -v).collect();

        let mut trials = 0;
        let mut last_err = None;
        for convex in [true, false] {
            let hh = if convex {
                match convexify(&h, &cfg.reg()) {
                    Ok((c, _)) => c,
                    Err(e) => {
                        last_err = Some(e);
                        continue;
                    }
                }
            } else {
                h.clone()
            };
            let sol = match kkt_solve(&hh, &jac, &rx, &neg_g, &cfg.reg()) {
                Ok(s) => s,
                Err(e) => {
                    last_err = Some(e);
                    continue;
                }
            };
            if norm_inf(&sol.step) <= 16.0 * f64::EPSILON * (1.0 + norm_inf(&pt.x)) {
                return Ok(Step {
                    point: pt.clone(),
                    trials,
                    kkt,
                    stalled: true,
                });
            }
            let mut t: f64 = 1.0;
            limit_bounds(o, &pt.x, &sol.step, w.r, &mut t);
            for _ in 0..MAX_BACKTRACKS {
                trials += 1;
                let trial = VanillaPoint {
                    x: pt.x.iter().zip(&sol.step).map(|(u, v)| u + t * v).collect(),
                    nu: pt
                        .nu
                        .iter()
                        .zip(&sol.multipliers)
                        .map(|(u, v)| u + t * v)
                        .collect(),
                };
                if let Ok((trx, tg, tkkt)) = self.residual(&trial, w) {
                    let tm = norm2(&trx).hypot(norm2(&tg));
                    if tm < merit && tm <= (1.0 - cfg.inner_armijo * t) * merit {
                        return Ok(Step {
                            point: trial,
                            trials,
                            kkt: tkkt,
                            stalled: false,
                        });
                    }
                }
                t *= cfg.inner_backtrack;
            }
        }
        Err(last_err.unwrap_or(Error::InnerSolverFailure {
            iterations: trials,
            residual: kkt,
        }))
    }

    fn push(&self, pt: &mut VanillaPoint, w: &SplitWeights) {
        push_into_domain(self.oracle, &mut pt.x, w.r);
    }

    fn state(&self, pt: &VanillaPoint, _w: &SplitWeights) -> SplitState {
        let g = self.oracle.eval_g(&pt.x);
        let p = g.iter().map(|v| v.max(0.0)).collect();
        let n = g.iter().map(|v| (-v).max(0.0)).collect();
        consensus_state(&pt.x, p, n, pt.nu.clone())
    }

    fn uses_penalty(&self) -> bool {
        false
    }
}

fn run_centralized<M: Centralized>(
    method: &M,
    oracle: &dyn MpccOracle,
    x0: &[f64],
    cfg: &AladinConfig,
    schedule: BaselineSchedule,
) -> Result<SolveResult> {
    cfg.validate()?;
    if let Some(r) = &cfg.reference_solution {
        if r.len() != oracle.n() {
            return Err(Error::Dimension(
                "reference_solution has the wrong length".into(),
            ));
        }
    }
    validate_start(oracle, x0, cfg.r)?;
    let g0 = oracle.eval_g(x0);
    check_finite("eval_g", &g0)?;
    let mut pt = method.start(x0, &g0);

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
        let step = match method.step(&pt, &w) {
            Ok(s) => s,
            Err(e) => {
                let status = SolveStatus::from_error(&e);
                let state = method.state(&pt, &w);
                return Ok(SolveResult {
                    status,
                    state,
                    records,
                    iterates,
                    error: Some(e.at(k)),
                });
            }
        };
        let x = method.x(&step.point);
        let step_norm = method
            .primal(&step.point)
            .iter()
            .zip(method.primal(&pt))
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        let record = IterationRecord {
            k,
            mu,
            rho: if method.uses_penalty() { rho } else { 0.0 },
            objective: oracle.eval_f(x),
            comp_residual: norm_inf(&oracle.eval_g(x)),
            consensus_residual: None,
            local_eq_residual: None,
            step_norm,
            x_error: x_error(x, cfg.reference_solution.as_ref()),
            inner_iters: step.trials,
            wall_time: started.elapsed(),
            stationarity_gap: None,
            kkt_residual: Some(step.kkt),
        };
        // a stationary point of an intermediate barrier problem is not a
        // solution; convergence needs the barrier schedule to be exhausted
        let verdict = check_termination(&record, cfg)
            .filter(|s| *s != SolveStatus::Converged || mu <= cfg.mu_min);
        iterates.push(x.to_vec());
        records.push(record);
        if verdict == Some(SolveStatus::Diverged) {
            let state = method.state(&pt, &w);
            return Ok(SolveResult {
                status: SolveStatus::Diverged,
                state,
                records,
                iterates,
                error: None,
            });
        }
        pt = step.point;
        if let Some(status) = verdict {
            let state = method.state(&pt, &w);
            return Ok(SolveResult {
                status,
                state,
                records,
                iterates,
                error: None,
            });
        }
        let update = match schedule {
            BaselineSchedule::PerStep => true,
            BaselineSchedule::PerBarrierSolve => step.stalled || step.kkt <= cfg.barrier_solve_tol,
        };
        if update {
            (mu, rho) = update_parameters(mu, rho, cfg);
            method.push(&mut pt, &cfg.weights(mu, rho));
        }
    }
    unreachable!("outer loop exits through termination")
}

/// Centralized Newton method on the ℓ1-penalty-barrier problem. Each
/// record is one Newton step; `κ` of the returned state holds the
/// constraint multiplier.
pub fn run_penalty_barrier_newton(
    oracle: &dyn MpccOracle,
    x0: &[f64],
    cfg: &AladinConfig,
    schedule: BaselineSchedule,
) -> Result<SolveResult> {
    run_centralized(&PenaltyBarrier { oracle, cfg }, oracle, x0, cfg, schedule)
}

/// Log-barrier Newton method with `g(x) = 0` as a hard equality and no
/// penalty. `μ` is reduced once each barrier problem is solved; records
/// report `rho = 0`. Failure statuses are expected near points where `∇g`
/// loses rank.
pub fn run_vanilla_barrier(
    oracle: &dyn MpccOracle,
    x0: &[f64],
    cfg: &AladinConfig,
) -> Result<SolveResult> {
    run_centralized(
        &Vanilla { oracle, cfg },
        oracle,
        x0,
        cfg,
        BaselineSchedule::PerBarrierSolve,
    )
}
