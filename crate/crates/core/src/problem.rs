//! Problem definitions: the smooth oracle interface, a dense quadratic /
//! bilinear-complementarity container and derivative verification.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, first_non_finite, DenseMatrix};

/// Sign restriction on a single decision variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BoundSign {
    #[serde(rename = "nonneg")]
    NonNegative,
    #[serde(rename = "nonpos")]
    NonPositive,
    #[serde(rename = "free")]
    Free,
}

impl BoundSign {
    /// `+1` for `x ≥ 0`, `-1` for `x ≤ 0`, `None` for free variables.
    ///
    /// The relaxed barrier argument of a bounded coordinate is `r + τ x`.
    pub fn orientation(self) -> Option<f64> {
        match self {
            BoundSign::NonNegative => Some(1.0),
            BoundSign::NonPositive => Some(-1.0),
            BoundSign::Free => None,
        }
    }
}

/// Smooth problem `min f(x) s.t. g(x) = 0` with per-variable sign bounds,
/// where `g` collects orthogonality products `G(x)ᵀH(x)`.
///
/// Implementations hold read-only data and are shared across threads.
pub trait MpccOracle: Send + Sync {
    fn n(&self) -> usize;
    fn dim_g(&self) -> usize;
    fn eval_f(&self, x: &[f64]) -> f64;
    fn grad_f(&self, x: &[f64]) -> Vec<f64>;
    fn hess_f(&self, x: &[f64]) -> DenseMatrix;
    fn eval_g(&self, x: &[f64]) -> Vec<f64>;
    /// `dim_g × n`
    fn jac_g(&self, x: &[f64]) -> DenseMatrix;
    /// Hessian of `κᵀ g(x)`.
    fn hess_gl(&self, x: &[f64], kappa: &[f64]) -> DenseMatrix;
    fn bounds(&self) -> &[BoundSign];
}

pub(crate) fn check_finite(what: &'static str, v: &[f64]) -> Result<()> {
    match first_non_finite(v) {
        Some(index) => Err(Error::NonFinite { what, index }),
        None => Ok(()),
    }
}

/// How the products `G_i(x) H_i(x)` are assembled into `g`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ComplementarityMode {
    /// A single constraint `G(x)ᵀH(x) = 0`.
    #[default]
    Aggregate,
    /// One constraint `G_i(x) H_i(x) = 0` per pair.
    Componentwise,
}

/// `min ½xᵀQx + cᵀx + offset` subject to orthogonality of the affine maps
/// `G(x) = Ex + e0` and `H(x) = Fx + f0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpccProblem {
    #[serde(rename = "Q", with = "nested")]
    pub q: DenseMatrix,
    pub c: Vec<f64>,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub offset: f64,
    #[serde(rename = "E", with = "nested")]
    pub e: DenseMatrix,
    pub e0: Vec<f64>,
    #[serde(rename = "F", with = "nested")]
    pub f: DenseMatrix,
    pub f0: Vec<f64>,
    #[serde(default)]
    pub mode: ComplementarityMode,
    pub bounds: Vec<BoundSign>,
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

mod nested {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::linalg::DenseMatrix;

    pub fn serialize<S: Serializer>(m: &DenseMatrix, s: S) -> Result<S::Ok, S::Error> {
        m.to_rows().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DenseMatrix, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        DenseMatrix::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

impl QpccProblem {
    /// Checks that every block has a conforming shape.
    pub fn validate(&self) -> Result<()> {
        let n = self.c.len();
        let dc = self.e0.len();
        let bad = |msg: String| Err(Error::Dimension(msg));
        if n == 0 {
            return bad("problem has no variables".into());
        }
        if (self.q.rows(), self.q.cols()) != (n, n) {
            return bad(format!(
                "Q is {}x{}, expected {n}x{n}",
                self.q.rows(),
                self.q.cols()
            ));
        }
        if !self.q.is_symmetric(1e-12) {
            return Err(Error::InvalidArgument("Q is not symmetric".into()));
        }
        if dc == 0 {
            return bad("no complementarity pairs (e0 is empty)".into());
        }
        if (self.e.rows(), self.e.cols()) != (dc, n) {
            return bad(format!(
                "E is {}x{}, expected {dc}x{n}",
                self.e.rows(),
                self.e.cols()
            ));
        }
        if (self.f.rows(), self.f.cols()) != (dc, n) {
            return bad(format!(
                "F is {}x{}, expected {dc}x{n}",
                self.f.rows(),
                self.f.cols()
            ));
        }
        if self.f0.len() != dc {
            return bad(format!("f0 has {} entries, expected {dc}", self.f0.len()));
        }
        if self.bounds.len() != n {
            return bad(format!(
                "bounds has {} entries, expected {n}",
                self.bounds.len()
            ));
        }
        let all_finite = self.q.is_finite()
            && self.e.is_finite()
            && self.f.is_finite()
            && [&self.c, &self.e0, &self.f0]
                .iter()
                .all(|v| first_non_finite(v).is_none())
            && self.offset.is_finite();
        if !all_finite {
            return Err(Error::InvalidArgument("problem data is not finite".into()));
        }
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let p: QpccProblem = serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text).map_err(|e| match e {
            Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("problem data serializes")
    }

    /// Number of complementarity pairs (rows of `E` and `F`).
    pub fn pair_count(&self) -> usize {
        self.e0.len()
    }

    fn affine_maps(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut gx = self.e.matvec(x);
        gx.iter_mut().zip(&self.e0).for_each(|(v, o)| *v += o);
        let mut hx = self.f.matvec(x);
        hx.iter_mut().zip(&self.f0).for_each(|(v, o)| *v += o);
        (gx, hx)
    }
}

impl MpccOracle for QpccProblem {
    fn n(&self) -> usize {
        self.c.len()
    }

    fn dim_g(&self) -> usize {
        match self.mode {
            ComplementarityMode::Aggregate => 1,
            ComplementarityMode::Componentwise => self.pair_count(),
        }
    }

    fn eval_f(&self, x: &[f64]) -> f64 {
        0.5 * dot(x, &self.q.matvec(x)) + dot(&self.c, x) + self.offset
    }

    fn grad_f(&self, x: &[f64]) -> Vec<f64> {
        let mut g = self.q.matvec(x);
        g.iter_mut().zip(&self.c).for_each(|(v, c)| *v += c);
        g
    }

    fn hess_f(&self, _x: &[f64]) -> DenseMatrix {
        self.q.clone()
    }

    fn eval_g(&self, x: &[f64]) -> Vec<f64> {
        let (gx, hx) = self.affine_maps(x);
        match self.mode {
            ComplementarityMode::Aggregate => vec![dot(&gx, &hx)],
            ComplementarityMode::Componentwise => gx.iter().zip(&hx).map(|(a, b)| a * b).collect(),
        }
    }

    fn jac_g(&self, x: &[f64]) -> DenseMatrix {
        let n = self.n();
        let (gx, hx) = self.affine_maps(x);
        match self.mode {
            ComplementarityMode::Aggregate => {
                // ∇(GᵀH) = EᵀH + FᵀG
                let mut row = self.e.tr_matvec(&hx);
                let fg = self.f.tr_matvec(&gx);
                row.iter_mut().zip(&fg).for_each(|(a, b)| *a += b);
                DenseMatrix::from_row_major(1, n, row).expect("shape")
            }
            ComplementarityMode::Componentwise => {
                let mut jac = DenseMatrix::zeros(self.pair_count(), n);
                for i in 0..self.pair_count() {
                    let row = jac.row_mut(i);
                    for (j, r) in row.iter_mut().enumerate() {
                        *r = hx[i] * self.e[(i, j)] + gx[i] * self.f[(i, j)];
                    }
                }
                jac
            }
        }
    }

    fn hess_gl(&self, _x: &[f64], kappa: &[f64]) -> DenseMatrix {
        let n = self.n();
        let mut h = DenseMatrix::zeros(n, n);
        let weight = |i: usize| match self.mode {
            ComplementarityMode::Aggregate => kappa[0],
            ComplementarityMode::Componentwise => kappa[i],
        };
        for i in 0..self.pair_count() {
            let w = weight(i);
            if w == 0.0 {
                continue;
            }
            let (er, fr) = (self.e.row(i), self.f.row(i));
            for a in 0..n {
                for b in 0..n {
                    h[(a, b)] += w * (er[a] * fr[b] + fr[a] * er[b]);
                }
            }
        }
        h
    }

    fn bounds(&self) -> &[BoundSign] {
        &self.bounds
    }
}

/// `min ½‖x̂ − e‖² + ½‖x̃ − e‖²  s.t.  x̂ᵀx̃ = 0,  x ≥ 0` with `x = [x̂; x̃]`
/// and `pair_count` entries in each half.
pub fn make_canonical(pair_count: usize) -> Result<QpccProblem> {
    if pair_count == 0 {
        return Err(Error::InvalidArgument(
            "pair_count must be at least 1".into(),
        ));
    }
    let k = pair_count;
    let n = 2 * k;
    let mut e = DenseMatrix::zeros(k, n);
    let mut f = DenseMatrix::zeros(k, n);
    for i in 0..k {
        e[(i, i)] = 1.0;
        f[(i, k + i)] = 1.0;
    }
    Ok(QpccProblem {
        q: DenseMatrix::identity(n),
        c: vec![-1.0; n],
        offset: 0.5 * n as f64,
        e,
        e0: vec![0.0; k],
        f,
        f0: vec![0.0; k],
        mode: ComplementarityMode::Aggregate,
        bounds: vec![BoundSign::NonNegative; n],
    })
}

/// Nearest local minimizer of the canonical problem: each pair
/// `(x̂_i, x̃_i)` is rounded to `(1, 0)` or `(0, 1)`, whichever has the
/// larger leading coordinate (ties go to `(1, 0)`).
pub fn canonical_nearest_minimizer(x: &[f64]) -> Vec<f64> {
    let k = x.len() / 2;
    let mut out = vec![0.0; 2 * k];
    for i in 0..k {
        if x[i] >= x[k + i] {
            out[i] = 1.0;
        } else {
            out[k + i] = 1.0;
        }
    }
    out
}

/// Outcome of [`finite_diff_check`]. Errors are `|a − d| / max(1, |d|)`
/// maximized over entries, with `a` analytic and `d` the central difference.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteDiffReport {
    pub grad_f: f64,
    pub jac_g: f64,
    pub hess_f: f64,
    pub hess_gl: f64,
    pub passed: bool,
    /// First non-finite oracle output encountered, if any.
    pub non_finite: Option<Error>,
}

impl FiniteDiffReport {
    pub fn max_error(&self) -> f64 {
        self.grad_f
            .max(self.jac_g)
            .max(self.hess_f)
            .max(self.hess_gl)
    }
}

fn rel_err(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / fd.abs().max(1.0)
}

/// Compares all first and second derivatives of `oracle` at `x` against
/// central differences with step `step`. `hess_gl` is tested with the
/// multiplier `κ_i = 1 + i/2`.
pub fn finite_diff_check(
    oracle: &dyn MpccOracle,
    x: &[f64],
    step: f64,
    tol: f64,
) -> Result<FiniteDiffReport> {
    let n = oracle.n();
    let dg = oracle.dim_g();
    if x.len() != n {
        return Err(Error::Dimension(format!(
            "x has {} entries, expected {n}",
            x.len()
        )));
    }
    if !(step > 0.0) {
        return Err(Error::InvalidArgument("step must be positive".into()));
    }
    for (i, (&xi, b)) in x.iter().zip(oracle.bounds()).enumerate() {
        if let Some(tau) = b.orientation() {
            if tau * xi <= step {
                return Err(Error::InvalidArgument(format!(
                    "x[{i}] = {xi} is not strictly inside its bound region"
                )));
            }
        }
    }

    let mut report = FiniteDiffReport {
        grad_f: 0.0,
        jac_g: 0.0,
        hess_f: 0.0,
        hess_gl: 0.0,
        passed: false,
        non_finite: None,
    };

    let kappa: Vec<f64> = (0..dg).map(|i| 1.0 + 0.5 * i as f64).collect();
    let grad = oracle.grad_f(x);
    let jac = oracle.jac_g(x);
    let hf = oracle.hess_f(x);
    let hgl = oracle.hess_gl(x, &kappa);
    let outputs: [(&'static str, &[f64]); 4] = [
        ("grad_f", &grad),
        ("jac_g", jac.as_slice()),
        ("hess_f", hf.as_slice()),
        ("hess_gl", hgl.as_slice()),
    ];
    for (what, v) in outputs {
        if let Err(e) = check_finite(what, v) {
            report.non_finite = Some(e);
            return Ok(report);
        }
    }

    let mut xp = x.to_vec();
    let mut xm = x.to_vec();
    for j in 0..n {
        xp[j] = x[j] + step;
        xm[j] = x[j] - step;

        let (fp, fm) = (oracle.eval_f(&xp), oracle.eval_f(&xm));
        let (gp, gm) = (oracle.eval_g(&xp), oracle.eval_g(&xm));
        let (dfp, dfm) = (oracle.grad_f(&xp), oracle.grad_f(&xm));
        let (jp, jm) = (oracle.jac_g(&xp), oracle.jac_g(&xm));
        let probes: [(&'static str, &[f64]); 8] = [
            ("eval_f", std::slice::from_ref(&fp)),
            ("eval_f", std::slice::from_ref(&fm)),
            ("eval_g", &gp),
            ("eval_g", &gm),
            ("grad_f", &dfp),
            ("grad_f", &dfm),
            ("jac_g", jp.as_slice()),
            ("jac_g", jm.as_slice()),
        ];
        for (what, v) in probes {
            if let Err(e) = check_finite(what, v) {
                report.non_finite = Some(e);
                return Ok(report);
            }
        }

        let h2 = 2.0 * step;
        report.grad_f = report.grad_f.max(rel_err(grad[j], (fp - fm) / h2));
        for i in 0..dg {
            report.jac_g = report.jac_g.max(rel_err(jac[(i, j)], (gp[i] - gm[i]) / h2));
        }
        for i in 0..n {
            report.hess_f = report
                .hess_f
                .max(rel_err(hf[(i, j)], (dfp[i] - dfm[i]) / h2));
            let fd: f64 = (0..dg)
                .map(|r| kappa[r] * (jp[(r, i)] - jm[(r, i)]) / h2)
                .sum();
            report.hess_gl = report.hess_gl.max(rel_err(hgl[(i, j)], fd));
        }

        xp[j] = x[j];
        xm[j] = x[j];
    }
    report.passed = report.max_error() <= tol;
    Ok(report)
}
