//! Structure-splitting of the penalty-barrier problem.
//!
//! The variables are grouped into three blocks
//!
//! * `α = (x, q, m)`: original variables plus replicas of the slack pair,
//! * `β`: a replica of `x` that carries the log-barrier of the sign bounds,
//! * `γ = (p, n)`: the ℓ1 slack pair with its penalty and barrier,
//!
//! and the objective splits as `φ(α, γ) + ϕ(β) + ψ(γ)`, subject to the local
//! equality `g(x) − q + m = 0` and the consensus constraint
//! `A₁α + A₂β + A₃γ = 0`, i.e. `x = β`, `q = p`, `m = n`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{sub, DenseMatrix};
use crate::problem::{check_finite, BoundSign, MpccOracle};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alpha {
    pub x: Vec<f64>,
    pub q: Vec<f64>,
    pub m_copy: Vec<f64>,
}

impl Alpha {
    pub fn len(&self) -> usize {
        self.x.len() + self.q.len() + self.m_copy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Stacked `[x; q; m]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.extend_from_slice(&self.x);
        v.extend_from_slice(&self.q);
        v.extend_from_slice(&self.m_copy);
        v
    }

    pub fn from_stacked(v: &[f64], n: usize, dim_g: usize) -> Self {
        assert_eq!(v.len(), n + 2 * dim_g);
        Alpha {
            x: v[..n].to_vec(),
            q: v[n..n + dim_g].to_vec(),
            m_copy: v[n + dim_g..].to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gamma {
    pub p: Vec<f64>,
    pub n_slack: Vec<f64>,
}

impl Gamma {
    pub fn len(&self) -> usize {
        self.p.len() + self.n_slack.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Stacked `[p; n]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.extend_from_slice(&self.p);
        v.extend_from_slice(&self.n_slack);
        v
    }

    pub fn from_stacked(v: &[f64], dim_g: usize) -> Self {
        assert_eq!(v.len(), 2 * dim_g);
        Gamma {
            p: v[..dim_g].to_vec(),
            n_slack: v[dim_g..].to_vec(),
        }
    }
}

/// Complete primal-dual iterate of the split problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitState {
    pub alpha: Alpha,
    pub beta: Vec<f64>,
    pub gamma: Gamma,
    /// Dual of the consensus constraint, laid out like `α`.
    pub lambda: Vec<f64>,
    /// Dual of the local equality.
    pub kappa: Vec<f64>,
}

impl SplitState {
    /// A state for the given dimensions with every entry zero.
    pub fn zeros(n: usize, dim_g: usize) -> Self {
        SplitState {
            alpha: Alpha {
                x: vec![0.0; n],
                q: vec![0.0; dim_g],
                m_copy: vec![0.0; dim_g],
            },
            beta: vec![0.0; n],
            gamma: Gamma {
                p: vec![0.0; dim_g],
                n_slack: vec![0.0; dim_g],
            },
            lambda: vec![0.0; n + 2 * dim_g],
            kappa: vec![0.0; dim_g],
        }
    }

    pub fn n(&self) -> usize {
        self.alpha.x.len()
    }

    pub fn dim_g(&self) -> usize {
        self.kappa.len()
    }

    pub fn check_dims(&self, n: usize, dim_g: usize) -> Result<()> {
        let ok = self.alpha.x.len() == n
            && self.alpha.q.len() == dim_g
            && self.alpha.m_copy.len() == dim_g
            && self.beta.len() == n
            && self.gamma.p.len() == dim_g
            && self.gamma.n_slack.len() == dim_g
            && self.lambda.len() == n + 2 * dim_g
            && self.kappa.len() == dim_g;
        if ok {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "split state does not match n = {n}, dim_g = {dim_g}"
            )))
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        check_finite("alpha", &self.alpha.to_vec())?;
        check_finite("beta", &self.beta)?;
        check_finite("gamma", &self.gamma.to_vec())?;
        check_finite("lambda", &self.lambda)?;
        check_finite("kappa", &self.kappa)
    }

    /// `A₁α + A₂β + A₃γ = (x − β, q − p, m − n)`.
    pub fn coupling_residual(&self) -> Vec<f64> {
        coupling_residual(&self.alpha, &self.beta, &self.gamma)
    }
}

pub fn coupling_residual(alpha: &Alpha, beta: &[f64], gamma: &Gamma) -> Vec<f64> {
    let mut r = sub(&alpha.x, beta);
    r.extend(sub(&alpha.q, &gamma.p));
    r.extend(sub(&alpha.m_copy, &gamma.n_slack));
    r
}

/// Dense consensus maps, sized `(n + 2d) × (n + 2d)`, `(n + 2d) × n` and
/// `(n + 2d) × 2d`.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingMatrices {
    pub a1: DenseMatrix,
    pub a2: DenseMatrix,
    pub a3: DenseMatrix,
}

impl CouplingMatrices {
    /// Stacked `[A₁ A₂ A₃]`.
    pub fn stacked(&self) -> DenseMatrix {
        let rows = self.a1.rows();
        let (c1, c2, c3) = (self.a1.cols(), self.a2.cols(), self.a3.cols());
        let mut out = DenseMatrix::zeros(rows, c1 + c2 + c3);
        out.set_block(0, 0, &self.a1);
        out.set_block(0, c1, &self.a2);
        out.set_block(0, c1 + c2, &self.a3);
        out
    }

    pub fn apply(&self, alpha: &[f64], beta: &[f64], gamma: &[f64]) -> Vec<f64> {
        let mut r = self.a1.matvec(alpha);
        for (acc, v) in r.iter_mut().zip(self.a2.matvec(beta)) {
            *acc += v;
        }
        for (acc, v) in r.iter_mut().zip(self.a3.matvec(gamma)) {
            *acc += v;
        }
        r
    }
}

pub fn build_coupling(n: usize, dim_g: usize) -> CouplingMatrices {
    let rows = n + 2 * dim_g;
    let a1 = DenseMatrix::identity(rows);
    let mut a2 = DenseMatrix::zeros(rows, n);
    for i in 0..n {
        a2[(i, i)] = -1.0;
    }
    let mut a3 = DenseMatrix::zeros(rows, 2 * dim_g);
    for i in 0..2 * dim_g {
        a3[(n + i, i)] = -1.0;
    }
    CouplingMatrices { a1, a2, a3 }
}

/// Weights of the split objective. `P = w_p I`, `M = w_m I`, and a single
/// barrier parameter `mu` is shared by every coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitWeights {
    pub w_p: f64,
    pub w_m: f64,
    /// Barrier relaxation `r` of the bounds on `β`.
    pub r: f64,
    /// Barrier relaxation of the slacks `p, n`. Zero is allowed: the slack
    /// relaxation is a translation of `(q, m, p, n)` and can be absorbed into
    /// the variables.
    pub r_slack: f64,
    pub mu: f64,
    pub rho: f64,
}

impl SplitWeights {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("w_p", self.w_p),
            ("w_m", self.w_m),
            ("r", self.r),
            ("mu", self.mu),
            ("rho", self.rho),
        ];
        for (name, v) in named {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !(self.r_slack >= 0.0 && self.r_slack.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "r_slack must be non-negative, got {}",
                self.r_slack
            )));
        }
        Ok(())
    }
}

/// Relaxed barrier argument `r + τ s`, rejected unless strictly positive.
#[inline]
pub(crate) fn barrier_arg(r: f64, tau: f64, s: f64, index: usize) -> Result<f64> {
    let arg = r + tau * s;
    if arg > 0.0 && arg.is_finite() {
        Ok(arg)
    } else {
        Err(Error::Domain {
            index,
            argument: arg,
        })
    }
}

/// `φ(α, γ) = f(x) + ½ w_p ‖q − p‖² + ½ w_m ‖m − n‖²`
pub fn eval_phi(
    alpha: &Alpha,
    gamma_ref: &Gamma,
    oracle: &dyn MpccOracle,
    w: &SplitWeights,
) -> Result<f64> {
    let f = oracle.eval_f(&alpha.x);
    check_finite("eval_f", std::slice::from_ref(&f))?;
    let dq: f64 = alpha
        .q
        .iter()
        .zip(&gamma_ref.p)
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    let dm: f64 = alpha
        .m_copy
        .iter()
        .zip(&gamma_ref.n_slack)
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    Ok(f + 0.5 * w.w_p * dq + 0.5 * w.w_m * dm)
}

/// `∇_α φ(α, γ)` stacked like `α`.
pub fn grad_phi(
    alpha: &Alpha,
    gamma_ref: &Gamma,
    oracle: &dyn MpccOracle,
    w: &SplitWeights,
) -> Result<Vec<f64>> {
    let mut g = oracle.grad_f(&alpha.x);
    check_finite("grad_f", &g)?;
    g.extend(
        alpha
            .q
            .iter()
            .zip(&gamma_ref.p)
            .map(|(a, b)| w.w_p * (a - b)),
    );
    g.extend(
        alpha
            .m_copy
            .iter()
            .zip(&gamma_ref.n_slack)
            .map(|(a, b)| w.w_m * (a - b)),
    );
    Ok(g)
}

/// `ϕ(β) = −μ Σ ln(r + τ_i β_i)` over bounded coordinates.
pub fn eval_varphi(beta: &[f64], bounds: &[BoundSign], w: &SplitWeights) -> Result<f64> {
    let mut acc = 0.0;
    for (i, (&b, sign)) in beta.iter().zip(bounds).enumerate() {
        if let Some(tau) = sign.orientation() {
            acc -= w.mu * barrier_arg(w.r, tau, b, i)?.ln();
        }
    }
    Ok(acc)
}

pub fn grad_varphi(beta: &[f64], bounds: &[BoundSign], w: &SplitWeights) -> Result<Vec<f64>> {
    beta.iter()
        .zip(bounds)
        .enumerate()
        .map(|(i, (&b, sign))| match sign.orientation() {
            Some(tau) => Ok(-w.mu * tau / barrier_arg(w.r, tau, b, i)?),
            None => Ok(0.0),
        })
        .collect()
}

/// Diagonal of `∇²ϕ(β)`: `μ / (r ± β_i)²`, zero for free coordinates.
pub fn hess_varphi_diag(beta: &[f64], bounds: &[BoundSign], w: &SplitWeights) -> Result<Vec<f64>> {
    beta.iter()
        .zip(bounds)
        .enumerate()
        .map(|(i, (&b, sign))| match sign.orientation() {
            Some(tau) => Ok(w.mu / barrier_arg(w.r, tau, b, i)?.powi(2)),
            None => Ok(0.0),
        })
        .collect()
}

/// `ψ(γ) = ρ (p + n)ᵀe − μ Σ (ln(r + p_i) + ln(r + n_i))` with `r = r_slack`
pub fn eval_psi(gamma: &Gamma, w: &SplitWeights) -> Result<f64> {
    let stacked = gamma.to_vec();
    let mut acc = 0.0;
    for (i, &s) in stacked.iter().enumerate() {
        let arg = barrier_arg(w.r_slack, 1.0, s, i)?;
        acc += w.rho * s - w.mu * arg.ln();
    }
    Ok(acc)
}

/// `∇ψ(γ)` stacked like `γ`.
pub fn grad_psi(gamma: &Gamma, w: &SplitWeights) -> Result<Vec<f64>> {
    gamma
        .to_vec()
        .iter()
        .enumerate()
        .map(|(i, &s)| Ok(w.rho - w.mu / barrier_arg(w.r_slack, 1.0, s, i)?))
        .collect()
}

/// Diagonal of `∇²ψ(γ)`: `μ / (r + p_i)²` then `μ / (r + n_i)²`.
pub fn hess_psi_diag(gamma: &Gamma, w: &SplitWeights) -> Result<Vec<f64>> {
    gamma
        .to_vec()
        .iter()
        .enumerate()
        .map(|(i, &s)| Ok(w.mu / barrier_arg(w.r_slack, 1.0, s, i)?.powi(2)))
        .collect()
}

/// `G(α) = g(x) − q + m`
pub fn eval_local_equality(alpha: &Alpha, oracle: &dyn MpccOracle) -> Result<Vec<f64>> {
    let mut g = oracle.eval_g(&alpha.x);
    check_finite("eval_g", &g)?;
    if g.len() != alpha.q.len() {
        return Err(Error::Dimension(format!(
            "oracle returned {} constraints, state has {}",
            g.len(),
            alpha.q.len()
        )));
    }
    for ((gi, q), m) in g.iter_mut().zip(&alpha.q).zip(&alpha.m_copy) {
        *gi += m - q;
    }
    Ok(g)
}

/// `C = [∂g/∂x, −I, I]`, shape `d × (n + 2d)`.
pub fn local_equality_jacobian(alpha: &Alpha, oracle: &dyn MpccOracle) -> Result<DenseMatrix> {
    let jac = oracle.jac_g(&alpha.x);
    check_finite("jac_g", jac.as_slice())?;
    let (n, d) = (alpha.x.len(), alpha.q.len());
    if (jac.rows(), jac.cols()) != (d, n) {
        return Err(Error::Dimension(format!(
            "jac_g is {}x{}, expected {d}x{n}",
            jac.rows(),
            jac.cols()
        )));
    }
    let mut c = DenseMatrix::zeros(d, n + 2 * d);
    c.set_block(0, 0, &jac);
    for i in 0..d {
        c[(i, n + i)] = -1.0;
        c[(i, n + d + i)] = 1.0;
    }
    Ok(c)
}
