//! Dense linear algebra: row-major matrices, LU with partial pivoting, a
//! regularized saddle-point (KKT) solve and symmetric eigenvalues.
//!
//! Everything here is sized for problems with at most a few hundred
//! unknowns; no sparsity is exploited.

use std::fmt;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative pivot threshold below which a matrix is declared singular.
pub const PIVOT_TOL: f64 = 1e-14;

#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "DenseMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    /// Builds a matrix from nested rows; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != cols) {
            return Err(Error::Dimension(format!(
                "row {bad} has {} entries, expected {cols}",
                rows[bad].len()
            )));
        }
        let data = rows.iter().flatten().copied().collect();
        Ok(DenseMatrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    /// `A x`
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "matvec dimension mismatch");
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `Aᵀ y`
    pub fn tr_matvec(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.rows, "tr_matvec dimension mismatch");
        let mut out = vec![0.0; self.cols];
        for (i, &yi) in y.iter().enumerate() {
            if yi != 0.0 {
                axpy(yi, self.row(i), &mut out);
            }
        }
        out
    }

    pub fn matmul(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a != 0.0 {
                    axpy(a, other.row(k), out.row_mut(i));
                }
            }
        }
        out
    }

    pub fn scaled(&self, s: f64) -> DenseMatrix {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn add(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn add_to_diagonal(&mut self, delta: f64) {
        for i in 0..self.rows.min(self.cols) {
            self[(i, i)] += delta;
        }
    }

    /// Copies `block` into `self` with its top-left corner at `(r0, c0)`.
    pub fn set_block(&mut self, r0: usize, c0: usize, block: &DenseMatrix) {
        assert!(r0 + block.rows <= self.rows && c0 + block.cols <= self.cols);
        for i in 0..block.rows {
            self.row_mut(r0 + i)[c0..c0 + block.cols].copy_from_slice(block.row(i));
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.is_square()
            && (0..self.rows).all(|i| {
                (0..i).all(|j| {
                    (self[(i, j)] - self[(j, i)]).abs() <= tol * (1.0 + self[(i, j)].abs())
                })
            })
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += a x`
#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(
        0.0,
        |m, x| if x.is_nan() { f64::NAN } else { m.max(x.abs()) },
    )
}

pub fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn first_non_finite(v: &[f64]) -> Option<usize> {
    v.iter().position(|x| !x.is_finite())
}

/// LU factorization `P A = L U` with partial pivoting, stored compactly.
#[derive(Debug, Clone)]
pub struct Lu {
    lu: DenseMatrix,
    perm: Vec<usize>,
}

impl Lu {
    /// Factors a square matrix. A pivot smaller than `PIVOT_TOL * max|A|`
    /// is reported as [`Error::Singular`] with its elimination index.
    pub fn factor(a: &DenseMatrix) -> Result<Lu> {
        if !a.is_square() {
            return Err(Error::Dimension(format!(
                "LU of a non-square {}x{} matrix",
                a.rows, a.cols
            )));
        }
        if let Some(i) = first_non_finite(&a.data) {
            return Err(Error::NonFinite {
                what: "matrix",
                index: i,
            });
        }
        let n = a.rows;
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let threshold = PIVOT_TOL * a.max_abs();

        for k in 0..n {
            let (p, pmax) = (k..n)
                .map(|i| (i, lu[(i, k)].abs()))
                .fold(
                    (k, -1.0),
                    |best, cur| if cur.1 > best.1 { cur } else { best },
                );
            if pmax <= threshold || pmax == 0.0 {
                return Err(Error::Singular { pivot: k });
            }
            if p != k {
                perm.swap(p, k);
                for j in 0..n {
                    lu.data.swap(p * n + j, k * n + j);
                }
            }
            let pivot = lu[(k, k)];
            for i in k + 1..n {
                let factor = lu[(i, k)] / pivot;
                lu[(i, k)] = factor;
                if factor != 0.0 {
                    for j in k + 1..n {
                        let ukj = lu[(k, j)];
                        lu[(i, j)] -= factor * ukj;
                    }
                }
            }
        }
        Ok(Lu { lu, perm })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.perm.len();
        assert_eq!(b.len(), n, "rhs dimension mismatch");
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let row = self.lu.row(i);
            let s = dot(&row[..i], &x[..i]);
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let row = self.lu.row(i);
            let s = dot(&row[i + 1..], &x[i + 1..]);
            x[i] = (x[i] - s) / row[i];
        }
        x
    }
}

/// Solves `A x = b` by LU with partial pivoting.
pub fn lu_solve(a: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != a.rows {
        return Err(Error::Dimension(format!(
            "rhs of length {} for {} rows",
            b.len(),
            a.rows
        )));
    }
    Ok(Lu::factor(a)?.solve(b))
}

/// Regularization knobs shared by the KKT solve and Hessian convexification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegConfig {
    /// First nonzero diagonal shift.
    pub delta0: f64,
    /// Required minimum eigenvalue after convexification.
    pub eps_pd: f64,
    /// Number of geometric shift retries in [`kkt_solve`].
    pub max_shifts: usize,
}

impl Default for RegConfig {
    fn default() -> Self {
        RegConfig {
            delta0: 1e-8,
            eps_pd: 1e-8,
            max_shifts: 8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KktSolution {
    pub step: Vec<f64>,
    pub multipliers: Vec<f64>,
    /// Diagonal shift that was added to the Hessian block (0 if none).
    pub shift: f64,
}

/// Solves the saddle-point system
///
/// ```text
/// [ H  Jᵀ ] [ d ]   [ -g ]
/// [ J  0  ] [ ν ] = [  c ]
/// ```
///
/// The system is symmetrically equilibrated before factoring. When the
/// factorization reports a singular pivot the Hessian block is shifted by
/// `δ I`, with `δ = δ₀, 10δ₀, ...` for at most `reg.max_shifts` retries.
pub fn kkt_solve(
    h: &DenseMatrix,
    j: &DenseMatrix,
    g: &[f64],
    c: &[f64],
    reg: &RegConfig,
) -> Result<KktSolution> {
    let n = h.rows;
    let m = j.rows;
    if !h.is_square() || g.len() != n || c.len() != m || (m > 0 && j.cols != n) {
        return Err(Error::Dimension(format!(
            "kkt_solve: H {}x{}, J {}x{}, g {}, c {}",
            h.rows,
            h.cols,
            j.rows,
            j.cols,
            g.len(),
            c.len()
        )));
    }

    let mut rhs = Vec::with_capacity(n + m);
    rhs.extend(g.iter().map(|v| -v));
    rhs.extend_from_slice(c);

    let mut shift = 0.0;
    let mut attempt = 0;
    loop {
        let mut k = DenseMatrix::zeros(n + m, n + m);
        k.set_block(0, 0, h);
        k.add_to_diagonal_range(0, n, shift);
        if m > 0 {
            k.set_block(n, 0, j);
            k.set_block(0, n, &j.transpose());
        }
        match solve_equilibrated(&k, &rhs) {
            Ok(sol) => {
                let (step, mult) = sol.split_at(n);
                return Ok(KktSolution {
                    step: step.to_vec(),
                    multipliers: mult.to_vec(),
                    shift,
                });
            }
            Err(Error::Singular { .. }) if attempt < reg.max_shifts => {
                shift = if attempt == 0 {
                    reg.delta0
                } else {
                    shift * 10.0
                };
                attempt += 1;
            }
            Err(Error::Singular { .. }) => {
                return Err(Error::LinearSolverSingular { shifts: attempt })
            }
            Err(e) => return Err(e),
        }
    }
}

impl DenseMatrix {
    fn add_to_diagonal_range(&mut self, start: usize, end: usize, delta: f64) {
        if delta != 0.0 {
            for i in start..end {
                self[(i, i)] += delta;
            }
        }
    }
}

/// Ruiz-equilibrated LU solve with two rounds of iterative refinement, for
/// symmetric systems with widely varying diagonal scales.
pub fn solve_equilibrated(k: &DenseMatrix, rhs: &[f64]) -> Result<Vec<f64>> {
    let n = k.rows;
    let mut d = vec![1.0; n];
    let mut scaled = k.clone();
    for _ in 0..10 {
        let mut done = true;
        let row_max: Vec<f64> = (0..n).map(|i| norm_inf(scaled.row(i))).collect();
        for &rm in row_max.iter() {
            if rm > 0.0 && (rm - 1.0).abs() > 1e-3 {
                done = false;
            }
        }
        if done {
            break;
        }
        let s: Vec<f64> = row_max
            .iter()
            .map(|&rm| if rm > 0.0 { 1.0 / rm.sqrt() } else { 1.0 })
            .collect();
        for i in 0..n {
            for j in 0..n {
                scaled[(i, j)] *= s[i] * s[j];
            }
            d[i] *= s[i];
        }
    }

    let lu = Lu::factor(&scaled)?;
    let srhs: Vec<f64> = rhs.iter().zip(&d).map(|(b, di)| b * di).collect();
    let mut y = lu.solve(&srhs);
    for _ in 0..2 {
        let r = sub(&srhs, &scaled.matvec(&y));
        if norm_inf(&r) == 0.0 {
            break;
        }
        let dy = lu.solve(&r);
        axpy(1.0, &dy, &mut y);
    }
    let x: Vec<f64> = y.iter().zip(&d).map(|(yi, di)| yi * di).collect();
    if let Some(i) = first_non_finite(&x) {
        return Err(Error::NonFinite {
            what: "kkt solution",
            index: i,
        });
    }
    Ok(x)
}

/// All eigenvalues of a symmetric matrix, ascending (cyclic Jacobi).
pub fn symmetric_eigenvalues(s: &DenseMatrix) -> Vec<f64> {
    assert!(s.is_square(), "eigenvalues of a non-square matrix");
    let n = s.rows;
    let mut a = s.clone();
    // symmetrize against round-off in the input
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    let scale = a.max_abs();
    if scale == 0.0 {
        return vec![0.0; n];
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum();
        if off.sqrt() <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - sn * akq;
                    a[(k, q)] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - sn * aqk;
                    a[(q, k)] = sn * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    eig.sort_by(|x, y| x.total_cmp(y));
    eig
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue_estimate(s: &DenseMatrix) -> f64 {
    symmetric_eigenvalues(s)
        .first()
        .copied()
        .unwrap_or(f64::INFINITY)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lu_identity_and_diagonal() {
        let b = vec![1.0, -2.0, 3.5];
        assert_eq!(lu_solve(&DenseMatrix::identity(3), &b).unwrap(), b);

        let a = DenseMatrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 4.0]]).unwrap();
        assert_eq!(lu_solve(&a, &[2.0, 8.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn lu_reports_singular_pivot() {
        let a = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap();
        assert_eq!(lu_solve(&a, &[1.0, 1.0]), Err(Error::Singular { pivot: 1 }));
    }

    #[test]
    fn lu_needs_pivoting() {
        let a = DenseMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(lu_solve(&a, &[3.0, 4.0]).unwrap(), vec![4.0, 3.0]);
    }

    #[test]
    fn kkt_without_constraints_is_plain_solve() {
        let h = DenseMatrix::from_diagonal(&[2.0, 4.0]);
        let sol = kkt_solve(
            &h,
            &DenseMatrix::zeros(0, 2),
            &[-2.0, -8.0],
            &[],
            &RegConfig::default(),
        )
        .unwrap();
        assert_eq!(sol.step, vec![1.0, 2.0]);
        assert!(sol.multipliers.is_empty());
    }

    #[test]
    fn kkt_projection_onto_hyperplane() {
        let h = DenseMatrix::identity(2);
        let j = DenseMatrix::from_rows(&[vec![1.0, 1.0]]).unwrap();
        let sol = kkt_solve(&h, &j, &[0.0, 0.0], &[1.0], &RegConfig::default()).unwrap();
        assert!((sol.step[0] - 0.5).abs() < 1e-15);
        assert!((sol.step[1] - 0.5).abs() < 1e-15);
        assert!((sol.multipliers[0] + 0.5).abs() < 1e-15);
        assert_eq!(sol.shift, 0.0);
    }

    #[test]
    fn kkt_shifts_singular_hessian() {
        // H = 0 with a single constraint: singular until shifted
        let h = DenseMatrix::zeros(2, 2);
        let j = DenseMatrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let sol = kkt_solve(&h, &j, &[0.0, 1.0], &[0.0], &RegConfig::default()).unwrap();
        assert!(sol.shift > 0.0);
        assert!((sol.step[1] + 1.0 / sol.shift).abs() < 1e-6 / sol.shift);
    }

    #[test]
    fn kkt_gives_up_after_retry_budget() {
        let h = DenseMatrix::zeros(1, 1);
        let j = DenseMatrix::from_rows(&[vec![0.0]]).unwrap();
        let err = kkt_solve(&h, &j, &[0.0], &[0.0], &RegConfig::default()).unwrap_err();
        assert_eq!(err, Error::LinearSolverSingular { shifts: 8 });
    }

    #[test]
    fn eigenvalues_small_cases() {
        assert_eq!(min_eigenvalue_estimate(&DenseMatrix::identity(4)), 1.0);
        assert_eq!(
            min_eigenvalue_estimate(&DenseMatrix::from_diagonal(&[-1.0, 5.0])),
            -1.0
        );
        let a = DenseMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let e = symmetric_eigenvalues(&a);
        assert!((e[0] - 1.0).abs() < 1e-14 && (e[1] - 3.0).abs() < 1e-14);
    }
}
