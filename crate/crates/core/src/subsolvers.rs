//! The three decoupled subproblems of an ALADIN-β iteration and the
//! first/second-order information that is sent to the coordinator.
//!
//! Subproblem 1 is a small equality-constrained NLP in `α`. Its equality
//! `g(x) − q + m = 0` is linear in `q`, so `q` is eliminated and damped
//! Newton runs on `(x, m)`. Subproblems 2 and 3 separate into
//! one-dimensional barrier/proximal problems with closed-form solutions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    axpy, dot, first_non_finite, lu_solve, min_eigenvalue_estimate, norm_inf, DenseMatrix,
    RegConfig,
};
use crate::problem::{check_finite, BoundSign, MpccOracle};
use crate::reformulate::{
    eval_phi, grad_phi, grad_psi, grad_varphi, hess_psi_diag, hess_varphi_diag,
    local_equality_jacobian, Alpha, Gamma, SplitState, SplitWeights,
};

/// Proximal scalings `Σᵢ = σᵢ I`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProxWeights {
    pub sigma1: f64,
    pub sigma2: f64,
    pub sigma3: f64,
}

impl Default for ProxWeights {
    fn default() -> Self {
        ProxWeights {
            sigma1: 10.0,
            sigma2: 10.0,
            sigma3: 10.0,
        }
    }
}

impl ProxWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sigma1", self.sigma1),
            ("sigma2", self.sigma2),
            ("sigma3", self.sigma3),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Damped Newton settings of subproblem 1. The baselines take `armijo` and
/// `backtrack` from the same configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InnerConfig {
    /// Stop when `‖KKT residual‖∞ ≤ tol · (1 + scale)`; `scale` is the
    /// magnitude of the fixed data entering the residual.
    pub tol: f64,
    pub max_iter: usize,
    /// Sufficient-decrease constant on the squared residual.
    pub armijo: f64,
    pub backtrack: f64,
}

impl Default for InnerConfig {
    fn default() -> Self {
        InnerConfig {
            tol: 1e-12,
            max_iter: 50,
            armijo: 1e-4,
            backtrack: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sub1Solution {
    pub alpha: Alpha,
    pub kappa: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Results of the three subproblems of one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct SubproblemSolution {
    pub alpha_hat: Alpha,
    pub beta_hat: Vec<f64>,
    pub gamma_hat: Gamma,
    pub kappa_hat: Vec<f64>,
    pub inner_iterations: usize,
    pub inner_residual: f64,
}

/// Gradients and (convexified) Hessians handed to the consensus QP.
#[derive(Debug, Clone, PartialEq)]
pub struct Sensitivities {
    pub g1: Vec<f64>,
    pub g2: Vec<f64>,
    pub g3: Vec<f64>,
    pub h1: DenseMatrix,
    pub h2: Vec<f64>,
    pub h3: Vec<f64>,
    /// Shift added to `H₁` to make it positive definite.
    pub h1_shift: f64,
}

/// Minimizer of
///
/// ```text
/// h(s) = −μ ln(r + τ s) + c s + ½ σ (s − s₀)²,   r + τ s > 0.
/// ```
///
/// With `u = r + τ s`, stationarity becomes `σu² + bu − μ = 0` where
/// `b = τc − σ(r + τ s₀)`, which has exactly one positive root for `μ > 0`.
/// The root is taken in its cancellation-free form and polished with
/// Newton on `h′`. For `μ = 0` the unconstrained minimizer is returned if it
/// lies in the domain.
pub fn coordinate_barrier_min(
    c_lin: f64,
    sigma: f64,
    s_prev: f64,
    mu: f64,
    r: f64,
    tau: f64,
) -> Result<f64> {
    if !(sigma > 0.0) || !(mu >= 0.0) || !(r >= 0.0) || tau.abs() != 1.0 {
        return Err(Error::InvalidArgument(format!(
            "coordinate_barrier_min: sigma={sigma}, mu={mu}, r={r}, tau={tau}"
        )));
    }
    if !(c_lin.is_finite() && s_prev.is_finite()) {
        return Err(Error::NonFinite {
            what: "barrier subproblem data",
            index: 0,
        });
    }

    if mu == 0.0 {
        let s = s_prev - c_lin / sigma;
        let arg = r + tau * s;
        return if arg > 0.0 {
            Ok(s)
        } else {
            Err(Error::Domain {
                index: 0,
                argument: arg,
            })
        };
    }

    let b = tau * c_lin - sigma * (r + tau * s_prev);
    let disc = (b * b + 4.0 * sigma * mu).sqrt();
    let u = if b <= 0.0 {
        (disc - b) / (2.0 * sigma)
    } else {
        2.0 * mu / (b + disc)
    };
    let mut s = tau * (u - r);
    // u may be below the resolution of r; step back inside the domain
    while r + tau * s <= 0.0 {
        s = next_toward(s, tau);
    }

    let dh = |s: f64| -mu * tau / (r + tau * s) + c_lin + sigma * (s - s_prev);
    for _ in 0..2 {
        let arg = r + tau * s;
        let g = dh(s);
        if g == 0.0 {
            break;
        }
        let trial = s - g / (mu / (arg * arg) + sigma);
        if r + tau * trial > 0.0 && dh(trial).abs() < g.abs() {
            s = trial;
        } else {
            break;
        }
    }
    Ok(s)
}

/// Next representable value after `s` in the direction of `dir`.
fn next_toward(s: f64, dir: f64) -> f64 {
    if s == 0.0 {
        return dir * f64::from_bits(1);
    }
    let bits = s.to_bits();
    let away_from_zero = (s > 0.0) == (dir > 0.0);
    f64::from_bits(if away_from_zero { bits + 1 } else { bits - 1 })
}

fn remap_domain(e: Error, index: usize) -> Error {
    match e {
        Error::Domain { argument, .. } => Error::Domain { index, argument },
        Error::NonFinite { what, .. } => Error::NonFinite { what, index },
        other => other,
    }
}

/// `β̂ = argmin ϕ(β) − λ_xᵀβ + ½σ₂‖β − β⁻‖²`, coordinate by coordinate.
pub fn solve_sub2(
    state: &SplitState,
    bounds: &[BoundSign],
    w: &SplitWeights,
    prox: &ProxWeights,
) -> Result<Vec<f64>> {
    let n = state.n();
    let lambda_x = &state.lambda[..n];
    state
        .beta
        .iter()
        .zip(lambda_x)
        .zip(bounds)
        .enumerate()
        .map(|(i, ((&prev, &lam), sign))| match sign.orientation() {
            Some(tau) => coordinate_barrier_min(-lam, prox.sigma2, prev, w.mu, w.r, tau)
                .map_err(|e| remap_domain(e, i)),
            None => Ok(prev + lam / prox.sigma2),
        })
        .collect()
}

/// `γ̂ = argmin ψ(γ) − λ_qᵀp − λ_mᵀn + ½σ₃‖γ − γ⁻‖²`, coordinate by coordinate.
pub fn solve_sub3(state: &SplitState, w: &SplitWeights, prox: &ProxWeights) -> Result<Gamma> {
    let (n, d) = (state.n(), state.dim_g());
    let lambda_slack = &state.lambda[n..n + 2 * d];
    let stacked: Result<Vec<f64>> = state
        .gamma
        .to_vec()
        .iter()
        .zip(lambda_slack)
        .enumerate()
        .map(|(i, (&prev, &lam))| {
            coordinate_barrier_min(w.rho - lam, prox.sigma3, prev, w.mu, w.r_slack, 1.0)
                .map_err(|e| remap_domain(e, i))
        })
        .collect();
    Ok(Gamma::from_stacked(&stacked?, d))
}

/// Hessian of the subproblem-1 Lagrangian: the oracle part on the `x`
/// block plus `(w_p + σ₁) I` and `(w_m + σ₁) I` on the replicas.
fn sub1_hessian(
    oracle: &dyn MpccOracle,
    x: &[f64],
    kappa: &[f64],
    w: &SplitWeights,
    prox_diag: f64,
) -> Result<DenseMatrix> {
    let (n, d) = (x.len(), kappa.len());
    let hxx = oracle.hess_f(x).add(&oracle.hess_gl(x, kappa));
    check_finite("hessian", hxx.as_slice())?;
    let mut h = DenseMatrix::zeros(n + 2 * d, n + 2 * d);
    h.set_block(0, 0, &hxx);
    for i in 0..d {
        h[(n + i, n + i)] = w.w_p;
        h[(n + d + i, n + d + i)] = w.w_m;
    }
    h.add_to_diagonal(prox_diag);
    Ok(h)
}

/// Solves
///
/// ```text
/// min_α  φ(α, γ⁻) + λᵀα + ½σ₁‖α − α⁻‖²   s.t.  g(x) − q + m = 0  | κ
/// ```
///
/// The constraint is linear in `q`, so `q = g(x) + m` is eliminated and the
/// remaining unconstrained problem in `(x, m)` is minimized by Newton's
/// method, warm-started at `α⁻`. Its Hessian equals the Lagrangian Hessian
/// reduced to the constraint null space; when that is not positive definite
/// it is shifted so that iterates move away from saddle points. The
/// multiplier follows from stationarity in `q`:
/// `κ = w_P(q − p⁻) + λ_q + σ₁(q − q⁻)`.
pub fn solve_sub1(
    state: &SplitState,
    oracle: &dyn MpccOracle,
    w: &SplitWeights,
    prox: &ProxWeights,
    inner: &InnerConfig,
    reg: &RegConfig,
) -> Result<Sub1Solution> {
    let (n, d) = (state.n(), state.dim_g());
    let sigma = prox.sigma1;
    let prev = &state.alpha;
    let (lam_x, lam_q, lam_m) = (
        &state.lambda[..n],
        &state.lambda[n..n + d],
        &state.lambda[n + d..],
    );
    let (p_ref, n_ref) = (&state.gamma.p, &state.gamma.n_slack);

    let lift = |v: &[f64]| -> Result<(Alpha, Vec<f64>)> {
        let x = v[..n].to_vec();
        let m_copy = v[n..].to_vec();
        let g = oracle.eval_g(&x);
        check_finite("eval_g", &g)?;
        let q: Vec<f64> = g.iter().zip(&m_copy).map(|(gi, mi)| gi + mi).collect();
        let kappa = (0..d)
            .map(|i| w.w_p * (q[i] - p_ref[i]) + lam_q[i] + sigma * (q[i] - prev.q[i]))
            .collect();
        Ok((Alpha { x, q, m_copy }, kappa))
    };
    let objective = |alpha: &Alpha| -> Result<f64> {
        let av = alpha.to_vec();
        let pv = prev.to_vec();
        let mut v = eval_phi(alpha, &state.gamma, oracle, w)?;
        for (k, a) in av.iter().enumerate() {
            v += state.lambda[k] * a + 0.5 * sigma * (a - pv[k]).powi(2);
        }
        Ok(v)
    };
    let gradient = |alpha: &Alpha, kappa: &[f64]| -> Result<Vec<f64>> {
        let gf = oracle.grad_f(&alpha.x);
        check_finite("grad_f", &gf)?;
        let jac = oracle.jac_g(&alpha.x);
        check_finite("jac_g", jac.as_slice())?;
        let mut gx: Vec<f64> = (0..n)
            .map(|j| gf[j] + lam_x[j] + sigma * (alpha.x[j] - prev.x[j]))
            .collect();
        axpy(1.0, &jac.tr_matvec(kappa), &mut gx);
        gx.extend((0..d).map(|i| {
            kappa[i]
                + w.w_m * (alpha.m_copy[i] - n_ref[i])
                + lam_m[i]
                + sigma * (alpha.m_copy[i] - prev.m_copy[i])
        }));
        Ok(gx)
    };
    let hessian = |alpha: &Alpha, kappa: &[f64]| -> Result<DenseMatrix> {
        let jac = oracle.jac_g(&alpha.x);
        let hxx = oracle
            .hess_f(&alpha.x)
            .add(&oracle.hess_gl(&alpha.x, kappa));
        check_finite("hessian", hxx.as_slice())?;
        let wq = w.w_p + sigma;
        let mut h = DenseMatrix::zeros(n + d, n + d);
        h.set_block(0, 0, &hxx.add(&jac.transpose().matmul(&jac).scaled(wq)));
        h.set_block(0, n, &jac.transpose().scaled(wq));
        h.set_block(n, 0, &jac.scaled(wq));
        for j in 0..n {
            h[(j, j)] += sigma;
        }
        for i in 0..d {
            h[(n + i, n + i)] += wq + w.w_m + sigma;
        }
        Ok(h)
    };

    let scale = 1.0
        + norm_inf(&state.lambda)
            .max(sigma * norm_inf(&prev.to_vec()))
            .max(w.w_p.max(w.w_m) * norm_inf(&state.gamma.to_vec()));
    let target = inner.tol * scale;

    let mut v: Vec<f64> = prev.x.iter().chain(&prev.m_copy).copied().collect();
    let (mut alpha, mut kappa) = lift(&v)?;
    let mut grad = gradient(&alpha, &kappa)?;
    let mut gnorm = norm_inf(&grad);
    let mut obj = objective(&alpha)?;
    let mut iterations = 0;

    while gnorm > target {
        if iterations >= inner.max_iter {
            return Err(Error::InnerSolverFailure {
                iterations,
                residual: gnorm,
            });
        }
        iterations += 1;

        let mut h = hessian(&alpha, &kappa)?;
        h.add_to_diagonal(curvature_shift(&h, reg)?);
        let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
        let step = lu_solve(&h, &neg)?;
        // the Newton step no longer moves the iterate at working precision
        if norm_inf(&step) <= 16.0 * f64::EPSILON * (1.0 + norm_inf(&v)) {
            break;
        }
        let slope = dot(&grad, &step);

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = v.iter().zip(&step).map(|(a, s)| a + t * s).collect();
            if let Ok((ta, tk)) = lift(&trial) {
                if let (Ok(to), Ok(tg)) = (objective(&ta), gradient(&ta, &tk)) {
                    let decrease = to <= obj + inner.armijo * t * slope;
                    // the objective stalls at round-off before the gradient does
                    let tn = norm_inf(&tg);
                    let flatter = tn < gnorm && tn <= (1.0 - inner.armijo * t) * gnorm;
                    if to.is_finite() && first_non_finite(&tg).is_none() && (decrease || flatter) {
                        accepted = Some((trial, ta, tk, tg, to));
                        break;
                    }
                }
            }
            t *= inner.backtrack;
        }
        match accepted {
            Some((tv, ta, tk, tg, to)) => {
                v = tv;
                alpha = ta;
                kappa = tk;
                gnorm = norm_inf(&tg);
                grad = tg;
                obj = to;
            }
            // no decrease possible at working precision
            None => {
                return Err(Error::InnerSolverFailure {
                    iterations,
                    residual: gnorm,
                })
            }
        }
    }

    Ok(Sub1Solution {
        alpha,
        kappa,
        iterations,
        residual: gnorm,
    })
}

/// Diagonal shift lifting the minimum eigenvalue of `h` to
/// `max(eps_pd, 0.1·|λ_min|)`. The small margin keeps steps along
/// negative-curvature directions long.
pub(crate) fn curvature_shift(h: &DenseMatrix, reg: &RegConfig) -> Result<f64> {
    let lmin = min_eigenvalue_estimate(h);
    if !lmin.is_finite() {
        return Err(Error::NonFinite {
            what: "hessian",
            index: 0,
        });
    }
    if lmin >= reg.eps_pd {
        return Ok(0.0);
    }
    Ok(reg.eps_pd.max(0.1 * lmin.abs()) - lmin)
}

/// First rung of the shift ladder `{0, δ₀, 10δ₀, …}` with
/// `lmin + δ ≥ eps_pd`, capped at `1e8·δ₀·max(1, 10·scale)`.
fn shift_ladder(lmin: f64, scale: f64, reg: &RegConfig) -> Result<f64> {
    if lmin >= reg.eps_pd {
        return Ok(0.0);
    }
    let cap = 1e8 * reg.delta0 * (10.0 * scale).max(1.0);
    let mut delta = reg.delta0;
    let mut shifts = 1;
    while delta <= cap * (1.0 + 1e-12) {
        if lmin + delta >= reg.eps_pd {
            return Ok(delta);
        }
        delta *= 10.0;
        shifts += 1;
    }
    Err(Error::LinearSolverSingular { shifts })
}

/// Runs the three subproblems concurrently on the same read-only iterate.
pub fn solve_subproblems(
    state: &SplitState,
    oracle: &dyn MpccOracle,
    w: &SplitWeights,
    prox: &ProxWeights,
    inner: &InnerConfig,
    reg: &RegConfig,
) -> Result<SubproblemSolution> {
    let (sub1, (beta, gamma)) = rayon::join(
        || solve_sub1(state, oracle, w, prox, inner, reg),
        || {
            rayon::join(
                || solve_sub2(state, oracle.bounds(), w, prox),
                || solve_sub3(state, w, prox),
            )
        },
    );
    let sub1 = sub1?;
    Ok(SubproblemSolution {
        alpha_hat: sub1.alpha,
        beta_hat: beta?,
        gamma_hat: gamma?,
        kappa_hat: sub1.kappa,
        inner_iterations: sub1.iterations,
        inner_residual: sub1.residual,
    })
}

/// Adds the smallest `δ ∈ {0, δ₀, 10δ₀, …}` to the diagonal that lifts the
/// minimum eigenvalue to at least `eps_pd`.
pub fn convexify(h: &DenseMatrix, reg: &RegConfig) -> Result<(DenseMatrix, f64)> {
    let delta = shift_ladder(min_eigenvalue_estimate(h), h.max_abs(), reg)?;
    let mut shifted = h.clone();
    shifted.add_to_diagonal(delta);
    Ok((shifted, delta))
}

/// Gradients from the subproblem optimality conditions and Hessians of the
/// split objective at the subproblem solutions:
///
/// ```text
/// g₁ = σ₁(α⁻ − α̂) − λ − Cᵀκ̂
/// g₂ = σ₂(β⁻ − β̂) − A₂ᵀλ
/// g₃ = σ₃(γ⁻ − γ̂) − A₃ᵀλ
/// ```
///
/// `H₂` and `H₃` are the barrier second derivatives, floored at `eps_pd`.
pub fn assemble_sensitivities(
    prev: &SplitState,
    hats: &SubproblemSolution,
    oracle: &dyn MpccOracle,
    w: &SplitWeights,
    prox: &ProxWeights,
    reg: &RegConfig,
) -> Result<Sensitivities> {
    let (n, d) = (prev.n(), prev.dim_g());
    let c = local_equality_jacobian(&hats.alpha_hat, oracle)?;
    let ct_kappa = c.tr_matvec(&hats.kappa_hat);

    let alpha_prev = prev.alpha.to_vec();
    let alpha_hat = hats.alpha_hat.to_vec();
    let g1: Vec<f64> = (0..n + 2 * d)
        .map(|k| prox.sigma1 * (alpha_prev[k] - alpha_hat[k]) - prev.lambda[k] - ct_kappa[k])
        .collect();
    let g2: Vec<f64> = (0..n)
        .map(|i| prox.sigma2 * (prev.beta[i] - hats.beta_hat[i]) + prev.lambda[i])
        .collect();
    let gamma_prev = prev.gamma.to_vec();
    let gamma_hat = hats.gamma_hat.to_vec();
    let g3: Vec<f64> = (0..2 * d)
        .map(|i| prox.sigma3 * (gamma_prev[i] - gamma_hat[i]) + prev.lambda[n + i])
        .collect();

    let h1_raw = sub1_hessian(oracle, &hats.alpha_hat.x, &hats.kappa_hat, w, 0.0)?;
    let (h1, h1_shift) = convexify(&h1_raw, reg)?;
    let floor = |v: Vec<f64>| v.into_iter().map(|h| h.max(reg.eps_pd)).collect::<Vec<_>>();
    let h2 = floor(hess_varphi_diag(&hats.beta_hat, oracle.bounds(), w)?);
    let h3 = floor(hess_psi_diag(&hats.gamma_hat, w)?);

    for (what, v) in [
        ("g1", &g1),
        ("g2", &g2),
        ("g3", &g3),
        ("h2", &h2),
        ("h3", &h3),
    ] {
        check_finite(what, v)?;
    }
    Ok(Sensitivities {
        g1,
        g2,
        g3,
        h1,
        h2,
        h3,
        h1_shift,
    })
}

/// Relative gaps between the closed-form gradients and the gradients of
/// `φ(·, γ⁻)`, `ϕ` and `ψ` evaluated directly at the subproblem solutions.
/// Each gap is `‖gᵢ − ∇ᵢ‖∞ / (1 + sᵢ)`, where `sᵢ` is the largest summand
/// entering either evaluation (`ρ` dominates for `ψ`, whose gradient
/// `ρ − μ/(r + s)` cancels).
pub fn stationarity_gaps(
    prev: &SplitState,
    hats: &SubproblemSolution,
    sens: &Sensitivities,
    oracle: &dyn MpccOracle,
    w: &SplitWeights,
) -> Result<[f64; 3]> {
    let n = prev.n();
    let direct = [
        grad_phi(&hats.alpha_hat, &prev.gamma, oracle, w)?,
        grad_varphi(&hats.beta_hat, oracle.bounds(), w)?,
        grad_psi(&hats.gamma_hat, w)?,
    ];
    let closed = [&sens.g1, &sens.g2, &sens.g3];
    let c = local_equality_jacobian(&hats.alpha_hat, oracle)?;
    let terms = [
        norm_inf(&oracle.grad_f(&hats.alpha_hat.x))
            .max(norm_inf(&prev.lambda))
            .max(norm_inf(&c.tr_matvec(&hats.kappa_hat))),
        norm_inf(&prev.lambda[..n]),
        w.rho.max(norm_inf(&prev.lambda[n..])),
    ];
    let mut gaps = [0.0; 3];
    for k in 0..3 {
        let diff = direct[k].iter().zip(closed[k]).map(|(a, b)| (a - b).abs());
        let scale = terms[k].max(norm_inf(closed[k])).max(norm_inf(&direct[k]));
        gaps[k] = diff.fold(0.0, f64::max) / (1.0 + scale);
    }
    Ok(gaps)
}
