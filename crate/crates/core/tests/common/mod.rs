//! Acceptance suites shared by `acceptance.rs` and `suites.rs`. Each check
//! returns a one-line summary on success and the reason on failure.

#![allow(dead_code)]

use std::time::Instant;

use aladin_core::coordinator::solve_consensus_qp;
use aladin_core::linalg::{norm_inf, RegConfig};
use aladin_core::reformulate::{build_coupling, coupling_residual, Alpha, Gamma};
use aladin_core::subsolvers::{coordinate_barrier_min, Sensitivities, SubproblemSolution};
use aladin_core::*;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = std::result::Result<String, String>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn dist_inf(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    DenseMatrix::from_row_major(rows, cols, data).unwrap()
}

fn random_vec(rng: &mut ChaCha8Rng, len: usize, half_width: f64) -> Vec<f64> {
    (0..len)
        .map(|_| rng.gen_range(-half_width..half_width))
        .collect()
}

/// Random QPCC with symmetric (possibly indefinite) `Q` and mixed bounds.
pub fn random_qpcc(rng: &mut ChaCha8Rng) -> QpccProblem {
    let n = rng.gen_range(2..=8);
    let pairs = rng.gen_range(1..=n.min(4));
    let b = random_matrix(rng, n, n);
    let q = b.add(&b.transpose()).scaled(0.5);
    let bounds = (0..n)
        .map(|_| match rng.gen_range(0..3) {
            0 => BoundSign::NonNegative,
            1 => BoundSign::NonPositive,
            _ => BoundSign::Free,
        })
        .collect();
    QpccProblem {
        q,
        c: random_vec(rng, n, 1.0),
        offset: rng.gen_range(-1.0..1.0),
        e: random_matrix(rng, pairs, n),
        e0: random_vec(rng, pairs, 1.0),
        f: random_matrix(rng, pairs, n),
        f0: random_vec(rng, pairs, 1.0),
        mode: if rng.gen_bool(0.5) {
            ComplementarityMode::Aggregate
        } else {
            ComplementarityMode::Componentwise
        },
        bounds,
    }
}

/// Random point strictly inside the bound region of `p`.
pub fn random_interior(rng: &mut ChaCha8Rng, p: &QpccProblem) -> Vec<f64> {
    p.bounds
        .iter()
        .map(|b| match b.orientation() {
            Some(tau) => tau * rng.gen_range(0.2..2.0),
            None => rng.gen_range(-2.0..2.0),
        })
        .collect()
}

/// Strictly convex quadratic with one affine equality, written as a QPCC
/// whose second factor is the constant 1.
pub fn smooth_instance() -> QpccProblem {
    QpccProblem {
        q: DenseMatrix::from_rows(&[
            vec![4.0, 1.0, 0.0],
            vec![1.0, 3.0, 0.5],
            vec![0.0, 0.5, 2.0],
        ])
        .unwrap(),
        c: vec![-1.0, 2.0, -0.5],
        offset: 0.0,
        e: DenseMatrix::from_rows(&[vec![1.0, 2.0, -1.0]]).unwrap(),
        e0: vec![-1.0],
        f: DenseMatrix::zeros(1, 3),
        f0: vec![1.0],
        mode: ComplementarityMode::Aggregate,
        bounds: vec![BoundSign::Free; 3],
    }
}

/// Minimizer of the smooth instance from its KKT system.
pub fn smooth_solution(p: &QpccProblem) -> Vec<f64> {
    let n = p.c.len();
    let mut k = DMatrix::zeros(n + 1, n + 1);
    let mut rhs = DVector::zeros(n + 1);
    for i in 0..n {
        for j in 0..n {
            k[(i, j)] = p.q[(i, j)];
        }
        k[(i, n)] = p.e[(0, i)];
        k[(n, i)] = p.e[(0, i)];
        rhs[i] = -p.c[i];
    }
    rhs[n] = -p.e0[0];
    let sol = k.lu().solve(&rhs).expect("smooth KKT is nonsingular");
    sol.as_slice()[..n].to_vec()
}

pub fn check_trace_2d() -> Check {
    let p = make_canonical(1).unwrap();
    let start = Instant::now();
    let r = run_solver(
        SolverKind::AladinBeta,
        &p,
        &[1.0, 1.0],
        &AladinConfig::default(),
    )
    .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed().as_secs_f64();
    let x = r.x();
    let err = dist_inf(x, &[1.0, 0.0]).min(dist_inf(x, &[0.0, 1.0]));
    let f_err = (p.eval_f(x) - 0.5).abs();
    ensure(r.status == SolveStatus::Converged, || {
        format!("status {}", r.status.as_str())
    })?;
    ensure(err <= 1e-6, || format!("x = {x:?}"))?;
    ensure(f_err <= 1e-8, || format!("|f - 0.5| = {f_err:e}"))?;
    ensure(elapsed < 5.0, || format!("took {elapsed:.2} s"))?;
    Ok(format!(
        "x = ({:.3e}, {:.3e}), {} iterations, {elapsed:.3} s",
        x[0],
        x[1],
        r.iterations()
    ))
}

pub fn check_canonical_n20() -> Check {
    let p = make_canonical(10).unwrap();
    let start = Instant::now();
    let r = run_solver(
        SolverKind::AladinBeta,
        &p,
        &[1.0; 20],
        &AladinConfig::default(),
    )
    .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed().as_secs_f64();
    let x = r.x();
    let first = r.first_iteration_below(1e-12);
    let pattern = dist_inf(x, &canonical_nearest_minimizer(x));
    let f_err = (p.eval_f(x) - 5.0).abs();
    ensure(first.is_some_and(|k| k <= 100), || {
        format!("comp ≤ 1e-12 first at {first:?}")
    })?;
    ensure(r.status == SolveStatus::Converged, || {
        format!("status {}", r.status.as_str())
    })?;
    ensure(pattern <= 1e-6, || format!("pattern distance {pattern:e}"))?;
    ensure(f_err <= 1e-6, || format!("|f - 5| = {f_err:e}"))?;
    ensure(elapsed < 10.0, || format!("took {elapsed:.2} s"))?;
    Ok(format!(
        "comp ≤ 1e-12 at iteration {}, {} iterations, {elapsed:.3} s",
        first.unwrap(),
        r.iterations()
    ))
}

pub fn check_ordering() -> Check {
    let p = make_canonical(10).unwrap();
    let cfg = AladinConfig::default();
    let x0 = default_start(&p);
    let first = |kind| -> std::result::Result<Option<usize>, String> {
        let r = run_solver(kind, &p, &x0, &cfg).map_err(|e| e.to_string())?;
        Ok(r.first_iteration_below(1e-8))
    };
    let aladin = first(SolverKind::AladinBeta)?;
    let baseline = first(SolverKind::PbPerBarrier)?;
    let ok = match (aladin, baseline) {
        (Some(a), Some(b)) => a <= b,
        (Some(_), None) => true,
        _ => false,
    };
    ensure(ok, || {
        format!("aladin_beta {aladin:?} vs pb_per_barrier {baseline:?}")
    })?;
    let baseline = baseline.map_or("never".to_owned(), |b| b.to_string());
    Ok(format!(
        "comp ≤ 1e-8 at {} (aladin_beta) vs {baseline} (pb_per_barrier)",
        aladin.unwrap()
    ))
}

pub fn check_per_barrier_accuracy() -> Check {
    let p = make_canonical(10).unwrap();
    let r = run_solver(
        SolverKind::PbPerBarrier,
        &p,
        &default_start(&p),
        &AladinConfig::default(),
    )
    .map_err(|e| e.to_string())?;
    let reference = canonical_nearest_minimizer(r.x());
    let errors = iterate_errors(&r, &reference);
    let last_bad = errors.iter().rposition(|&e| e > 1e-6);
    let reached = last_bad.map_or(1, |i| i + 2);
    ensure(last_bad.is_none_or(|i| i + 1 < errors.len()), || {
        format!(
            "final x-error {:e}",
            errors.last().copied().unwrap_or(f64::NAN)
        )
    })?;
    ensure(reached <= 400, || {
        format!("x-error ≤ 1e-6 from step {reached}")
    })?;
    Ok(format!(
        "x-error ≤ 1e-6 from step {reached} ({})",
        r.status.as_str()
    ))
}

/// Converged ALADIN-β runs whose stationarity gaps are checked.
fn stationarity_runs() -> Vec<(String, QpccProblem, Vec<f64>)> {
    let mut runs = vec![
        (
            "canonical k=1".to_owned(),
            make_canonical(1).unwrap(),
            vec![1.0, 1.0],
        ),
        (
            "canonical k=1 (0.5, 2)".to_owned(),
            make_canonical(1).unwrap(),
            vec![0.5, 2.0],
        ),
        (
            "canonical k=1 (1, 0.01)".to_owned(),
            make_canonical(1).unwrap(),
            vec![1.0, 0.01],
        ),
        (
            "canonical k=10".to_owned(),
            make_canonical(10).unwrap(),
            vec![1.0; 20],
        ),
        ("smooth".to_owned(), smooth_instance(), vec![0.5; 3]),
    ];
    let mut rng = rng(17);
    for i in 0..6 {
        let mut p = random_qpcc(&mut rng);
        // convex objective so that the runs tend to converge
        let n = p.c.len();
        p.q.add_to_diagonal(n as f64);
        let x0 = random_interior(&mut rng, &p);
        runs.push((format!("random #{i}"), p, x0));
    }
    runs
}

pub fn check_stationarity_identity() -> Check {
    let cfg = AladinConfig::default();
    let mut converged = 0;
    let mut worst: f64 = 0.0;
    for (name, p, x0) in stationarity_runs() {
        let r = run_aladin_beta(&p, &x0, &cfg).map_err(|e| format!("{name}: {e}"))?;
        if r.status != SolveStatus::Converged {
            continue;
        }
        converged += 1;
        for rec in &r.records {
            let gap = rec
                .stationarity_gap
                .ok_or_else(|| format!("{name}: iteration {} has no gap", rec.k))?;
            ensure(gap <= 1e-6, || {
                format!("{name}: gap {gap:e} at iteration {}", rec.k)
            })?;
            worst = worst.max(gap);
        }
    }
    ensure(converged >= 5, || {
        format!("only {converged} converged runs")
    })?;
    Ok(format!(
        "{converged} converged runs, largest gap {worst:.2e}"
    ))
}

/// Basis of the null space of `j` from the eigenvectors of `jᵀj`.
fn null_space(j: &DMatrix<f64>) -> DMatrix<f64> {
    let n = j.ncols();
    let eig = (j.transpose() * j).symmetric_eigen();
    let scale = eig.eigenvalues.amax().max(1.0);
    let cols: Vec<DVector<f64>> = (0..n)
        .filter(|&i| eig.eigenvalues[i].abs() <= 1e-10 * scale)
        .map(|i| eig.eigenvectors.column(i).into_owned())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

fn to_na(m: &DenseMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

pub fn check_consensus_qp() -> Check {
    let mut rng = rng(3);
    let mut worst_rows: f64 = 0.0;
    let mut worst_match: f64 = 0.0;
    for case in 0..50 {
        let n = if case == 0 { 40 } else { rng.gen_range(1..=40) };
        let d = if case == 0 { 5 } else { rng.gen_range(1..=5) };
        let na = n + 2 * d;
        let total = na + n + 2 * d;

        let b = random_matrix(&mut rng, na, na);
        let mut h1 = b.matmul(&b.transpose());
        h1.add_to_diagonal(0.1);
        let sens = Sensitivities {
            g1: random_vec(&mut rng, na, 1.0),
            g2: random_vec(&mut rng, n, 1.0),
            g3: random_vec(&mut rng, 2 * d, 1.0),
            h1,
            h2: (0..n).map(|_| rng.gen_range(0.1..10.0)).collect(),
            h3: (0..2 * d).map(|_| rng.gen_range(0.1..10.0)).collect(),
            h1_shift: 0.0,
        };
        let alpha_hat = Alpha::from_stacked(&random_vec(&mut rng, na, 2.0), n, d);
        let hats = SubproblemSolution {
            alpha_hat,
            beta_hat: random_vec(&mut rng, n, 2.0),
            gamma_hat: Gamma::from_stacked(&random_vec(&mut rng, 2 * d, 2.0), d),
            kappa_hat: random_vec(&mut rng, d, 1.0),
            inner_iterations: 0,
            inner_residual: 0.0,
        };
        // C = [∂g/∂x, −I, I] with a random Jacobian
        let mut c = DenseMatrix::zeros(d, na);
        c.set_block(0, 0, &random_matrix(&mut rng, d, n));
        for i in 0..d {
            c[(i, n + i)] = -1.0;
            c[(i, n + d + i)] = 1.0;
        }
        let coupling = build_coupling(n, d);
        let step = solve_consensus_qp(&hats, &sens, &c, &coupling, &RegConfig::default())
            .map_err(|e| format!("case {case}: {e}"))?;

        let dalpha: Vec<f64> = step
            .alpha
            .to_vec()
            .iter()
            .zip(hats.alpha_hat.to_vec())
            .map(|(a, b)| a - b)
            .collect();
        let rows = norm_inf(&c.matvec(&dalpha)).max(norm_inf(&coupling_residual(
            &step.alpha,
            &step.beta,
            &step.gamma,
        )));
        ensure(rows <= 1e-10, || {
            format!("case {case}: constraint rows {rows:e}")
        })?;
        worst_rows = worst_rows.max(rows);

        // null-space oracle
        let mut h = DMatrix::zeros(total, total);
        h.view_mut((0, 0), (na, na)).copy_from(&to_na(&sens.h1));
        for (i, v) in sens.h2.iter().chain(&sens.h3).enumerate() {
            h[(na + i, na + i)] = *v;
        }
        let mut jm = DMatrix::zeros(d + na, total);
        jm.view_mut((0, 0), (d, na)).copy_from(&to_na(&c));
        jm.view_mut((d, 0), (na, total))
            .copy_from(&to_na(&coupling.stacked()));
        let mut rhs = DVector::zeros(d + na);
        let resid = coupling.apply(
            &hats.alpha_hat.to_vec(),
            &hats.beta_hat,
            &hats.gamma_hat.to_vec(),
        );
        for (i, v) in resid.iter().enumerate() {
            rhs[d + i] = -v;
        }
        let g = DVector::from_iterator(
            total,
            sens.g1.iter().chain(&sens.g2).chain(&sens.g3).copied(),
        );
        let jjt = &jm * jm.transpose();
        let xp = jm.transpose() * jjt.lu().solve(&rhs).ok_or("oracle: JJᵀ singular")?;
        let z = null_space(&jm);
        let reduced = z.transpose() * &h * &z;
        let y = reduced
            .cholesky()
            .ok_or("oracle: reduced Hessian not positive definite")?
            .solve(&(-(z.transpose() * (&g + &h * &xp))));
        let oracle = xp + z * y;

        let mut ours = dalpha;
        ours.extend(step.beta.iter().zip(&hats.beta_hat).map(|(a, b)| a - b));
        ours.extend(
            step.gamma
                .to_vec()
                .iter()
                .zip(hats.gamma_hat.to_vec())
                .map(|(a, b)| a - b),
        );
        let diff = dist_inf(&ours, oracle.as_slice()) / (1.0 + oracle.amax());
        ensure(diff <= 1e-8, || {
            format!("case {case} (n={n}, d={d}): mismatch {diff:e}")
        })?;
        worst_match = worst_match.max(diff);
    }
    Ok(format!(
        "50 instances, rows ≤ {worst_rows:.1e}, oracle mismatch ≤ {worst_match:.1e}"
    ))
}

/// Minimizer of `−μ ln(r + τs) + cs + ½σ(s − s₀)²` by bisection on `h′`,
/// which increases strictly over the domain.
fn bisect_barrier_min(c: f64, sigma: f64, s0: f64, mu: f64, r: f64, tau: f64) -> f64 {
    let dh = |s: f64| {
        let arg = r + tau * s;
        if arg <= 0.0 {
            // left of the domain for τ = 1, right of it for τ = −1
            -tau * f64::INFINITY
        } else {
            -mu * tau / arg + c + sigma * (s - s0)
        }
    };
    // bracket [lo, hi] with h′(lo) ≤ 0 ≤ h′(hi)
    let edge = -tau * r;
    let mut width = 1.0;
    let (mut lo, mut hi) = if tau > 0.0 {
        while dh(edge + width) < 0.0 {
            width *= 2.0;
        }
        (edge, edge + width)
    } else {
        while dh(edge - width) > 0.0 {
            width *= 2.0;
        }
        (edge - width, edge)
    };
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if dh(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // the interior end of the final bracket
    if r + tau * lo > 0.0 && r + tau * hi > 0.0 {
        if dh(lo).abs() <= dh(hi).abs() {
            lo
        } else {
            hi
        }
    } else if r + tau * lo > 0.0 {
        lo
    } else {
        hi
    }
}

pub fn check_barrier_minimizer() -> Check {
    let mut rng = rng(11);
    let golden = (5f64.sqrt() - 1.0) / 2.0;
    let mut draws = vec![
        (0.0, 1.0, 0.0, 1.0, 1.0, 1.0),
        (0.0, 1.0, 0.0, 1.0, 1.0, -1.0),
    ];
    while draws.len() < 1000 {
        let log_uniform = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| {
            10f64.powf(rng.gen_range(lo.log10()..hi.log10()))
        };
        let c = rng.gen_range(-10.0..10.0);
        let sigma = log_uniform(&mut rng, 1e-2, 1e2);
        let s0 = rng.gen_range(-5.0..5.0);
        let mu = log_uniform(&mut rng, 1e-12, 1e1);
        let r = if rng.gen_bool(0.1) {
            0.0
        } else {
            log_uniform(&mut rng, 1e-8, 1.0)
        };
        let tau = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        draws.push((c, sigma, s0, mu, r, tau));
    }
    let mut worst: f64 = 0.0;
    for (i, &(c, sigma, s0, mu, r, tau)) in draws.iter().enumerate() {
        let s = coordinate_barrier_min(c, sigma, s0, mu, r, tau)
            .map_err(|e| format!("draw {i}: {e}"))?;
        ensure(r + tau * s > 0.0, || {
            format!("draw {i}: s = {s} outside the domain")
        })?;
        let reference = bisect_barrier_min(c, sigma, s0, mu, r, tau);
        let err = (s - reference).abs() / reference.abs().max(1.0);
        ensure(err <= 1e-10, || {
            format!("draw {i} {:?}: {s} vs bisection {reference}", draws[i])
        })?;
        worst = worst.max(err);
    }
    let s = coordinate_barrier_min(0.0, 1.0, 0.0, 1.0, 1.0, 1.0).map_err(|e| e.to_string())?;
    ensure((s - golden).abs() <= 1e-10, || {
        format!("golden case gives {s}")
    })?;
    Ok(format!("1000 draws, largest deviation {worst:.1e}"))
}

pub fn check_smooth_agreement() -> Check {
    let p = smooth_instance();
    let exact = smooth_solution(&p);
    let cfg = AladinConfig::default();
    let x0 = vec![0.5; 3];
    let mut worst: f64 = 0.0;
    for kind in SolverKind::ALL {
        let r = run_solver(kind, &p, &x0, &cfg).map_err(|e| format!("{kind}: {e}"))?;
        let err = dist_inf(r.x(), &exact);
        ensure(err <= 1e-8, || {
            format!(
                "{kind}: x = {:?} ({}), error {err:e}",
                r.x(),
                r.status.as_str()
            )
        })?;
        worst = worst.max(err);
    }
    Ok(format!(
        "4 solvers within {worst:.1e} of the analytic minimizer"
    ))
}

pub fn check_derivatives() -> Check {
    let mut rng = rng(5);
    let mut cases = vec![
        (
            "canonical k=1".to_owned(),
            make_canonical(1).unwrap(),
            vec![0.7, 1.3],
        ),
        (
            "canonical k=10".to_owned(),
            make_canonical(10).unwrap(),
            vec![0.9; 20],
        ),
    ];
    for i in 0..10 {
        let p = random_qpcc(&mut rng);
        let x = random_interior(&mut rng, &p);
        cases.push((format!("random #{i}"), p, x));
    }
    let mut worst: f64 = 0.0;
    for (name, p, x) in &cases {
        let report = finite_diff_check(p, x, 1e-5, 1e-5).map_err(|e| format!("{name}: {e}"))?;
        ensure(report.passed, || format!("{name}: {report:?}"))?;
        worst = worst.max(report.max_error());
    }
    Ok(format!(
        "{} problems, largest relative error {worst:.1e}",
        cases.len()
    ))
}

/// Everything a bench row holds except wall time, rendered as text.
fn bench_rows(r: &SolveResult) -> Vec<String> {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
    r.records
        .iter()
        .zip(&r.iterates)
        .map(|(rec, x)| {
            format!(
                "{},{:e},{:e},{:e},{:e},{},{},{:e},{},{:?}",
                rec.k,
                rec.mu,
                rec.rho,
                rec.objective,
                rec.comp_residual,
                opt(rec.consensus_residual),
                opt(rec.local_eq_residual),
                rec.step_norm,
                rec.inner_iters,
                x
            )
        })
        .collect()
}

pub fn check_determinism() -> Check {
    let p = make_canonical(10).unwrap();
    let cfg = AladinConfig::default();
    let x0 = default_start(&p);
    let mut rows = 0;
    for kind in SolverKind::ALL {
        let a = run_solver(kind, &p, &x0, &cfg).map_err(|e| e.to_string())?;
        let b = run_solver(kind, &p, &x0, &cfg).map_err(|e| e.to_string())?;
        let (ra, rb) = (bench_rows(&a), bench_rows(&b));
        ensure(ra == rb, || format!("{kind}: runs differ"))?;
        rows += ra.len();
    }
    Ok(format!("4 solvers, {rows} identical rows"))
}

pub type Criterion = (&'static str, fn() -> Check);

pub const CRITERIA: [Criterion; 10] = [
    ("canonical 2-D trace", check_trace_2d),
    ("canonical n=20 run", check_canonical_n20),
    ("ordering vs per-barrier-solve baseline", check_ordering),
    (
        "per-barrier-solve baseline accuracy",
        check_per_barrier_accuracy,
    ),
    ("stationarity identity", check_stationarity_identity),
    ("consensus QP KKT", check_consensus_qp),
    ("1-D barrier minimizer", check_barrier_minimizer),
    ("smooth-instance agreement", check_smooth_agreement),
    ("derivatives", check_derivatives),
    ("determinism", check_determinism),
];
