//! Python bindings: problems, configuration, the four solvers and the
//! derivative check.

use aladin_core as core;
use aladin_core::MpccOracle;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Quadratic program with affine complementarity constraints.
#[pyclass(name = "QpccProblem", module = "aladin", from_py_object)]
#[derive(Clone)]
pub struct PyProblem {
    inner: core::QpccProblem,
}

#[pymethods]
impl PyProblem {
    /// Canonical problem with `pairs` independent complementarity pairs.
    #[staticmethod]
    fn canonical(pairs: usize) -> PyResult<Self> {
        Ok(PyProblem {
            inner: core::make_canonical(pairs).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyProblem {
            inner: core::QpccProblem::from_json_str(text).map_err(to_py)?,
        })
    }

    fn to_json(&self) -> String {
        self.inner.to_json_string()
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn dim_g(&self) -> usize {
        self.inner.dim_g()
    }

    fn eval_f(&self, x: Vec<f64>) -> PyResult<f64> {
        self.check_len(&x)?;
        Ok(self.inner.eval_f(&x))
    }

    fn eval_g(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.check_len(&x)?;
        Ok(self.inner.eval_g(&x))
    }

    fn grad_f(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.check_len(&x)?;
        Ok(self.inner.grad_f(&x))
    }

    /// Start point at unit distance from every sign bound.
    fn default_start(&self) -> Vec<f64> {
        core::default_start(&self.inner)
    }

    fn __repr__(&self) -> String {
        format!(
            "QpccProblem(n={}, dim_g={})",
            self.inner.n(),
            self.inner.dim_g()
        )
    }
}

impl PyProblem {
    fn check_len(&self, x: &[f64]) -> PyResult<()> {
        if x.len() == self.inner.n() {
            Ok(())
        } else {
            Err(PyValueError::new_err(format!(
                "x has {} entries, expected {}",
                x.len(),
                self.inner.n()
            )))
        }
    }
}

/// Solver settings. Keyword arguments override defaults by field name.
#[pyclass(name = "AladinConfig", module = "aladin", from_py_object)]
#[derive(Clone)]
pub struct PyConfig {
    inner: core::AladinConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut cfg = PyConfig {
            inner: core::AladinConfig::default(),
        };
        if let Some(kwargs) = kwargs {
            for (key, value) in kwargs.iter() {
                cfg.set(&key.extract::<String>()?, &value.str()?.to_string())?;
            }
        }
        Ok(cfg)
    }

    /// Sets one field from its textual value; the result is validated.
    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        self.inner.set(key, value).map_err(to_py)
    }

    /// Value of one field, as JSON-compatible Python data.
    fn get(&self, py: Python<'_>, key: &str) -> PyResult<Py<PyAny>> {
        let value = serde_json::to_value(&self.inner).expect("config serializes");
        match value.get(key) {
            Some(serde_json::Value::Number(n)) if n.is_u64() => {
                Ok(n.as_u64().unwrap().into_pyobject(py)?.into_any().unbind())
            }
            Some(serde_json::Value::Number(n)) => {
                Ok(n.as_f64().unwrap().into_pyobject(py)?.into_any().unbind())
            }
            Some(serde_json::Value::Null) => Ok(py.None()),
            Some(v) => Ok(v.to_string().into_pyobject(py)?.into_any().unbind()),
            None => Err(PyValueError::new_err(format!("unknown config key '{key}'"))),
        }
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyConfig {
            inner: core::AladinConfig::from_json_str(text).map_err(to_py)?,
        })
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.inner).expect("config serializes")
    }
}

/// Outcome of one solver run.
#[pyclass(name = "SolveResult", module = "aladin")]
pub struct PySolveResult {
    inner: core::SolveResult,
}

#[pymethods]
impl PySolveResult {
    #[getter]
    fn status(&self) -> &'static str {
        self.inner.status.as_str()
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.status == core::SolveStatus::Converged
    }

    #[getter]
    fn x(&self) -> Vec<f64> {
        self.inner.x().to_vec()
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.inner.iterations()
    }

    #[getter]
    fn iterates(&self) -> Vec<Vec<f64>> {
        self.inner.iterates.clone()
    }

    #[getter]
    fn error(&self) -> Option<String> {
        self.inner.error.as_ref().map(|e| e.to_string())
    }

    /// One dict per outer iteration.
    fn records<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.inner
            .records
            .iter()
            .map(|r| {
                let d = PyDict::new(py);
                d.set_item("iter", r.k)?;
                d.set_item("mu", r.mu)?;
                d.set_item("rho", r.rho)?;
                d.set_item("objective", r.objective)?;
                d.set_item("comp_residual", r.comp_residual)?;
                d.set_item("consensus_residual", r.consensus_residual)?;
                d.set_item("local_eq_residual", r.local_eq_residual)?;
                d.set_item("step_norm", r.step_norm)?;
                d.set_item("x_error", r.x_error)?;
                d.set_item("inner_iters", r.inner_iters)?;
                d.set_item("wall_time_s", r.wall_time.as_secs_f64())?;
                d.set_item("stationarity_gap", r.stationarity_gap)?;
                d.set_item("kkt_residual", r.kkt_residual)?;
                Ok(d)
            })
            .collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "SolveResult(status='{}', iterations={})",
            self.inner.status.as_str(),
            self.inner.iterations()
        )
    }
}

/// Runs a solver by name: `aladin_beta`, `pb_per_step`, `pb_per_barrier`
/// or `vanilla`.
#[pyfunction]
#[pyo3(signature = (problem, solver = "aladin_beta", x0 = None, config = None))]
fn solve(
    py: Python<'_>,
    problem: &PyProblem,
    solver: &str,
    x0: Option<Vec<f64>>,
    config: Option<&PyConfig>,
) -> PyResult<PySolveResult> {
    let kind: core::SolverKind = solver.parse().map_err(to_py)?;
    let x0 = x0.unwrap_or_else(|| core::default_start(&problem.inner));
    let cfg = config.map(|c| c.inner.clone()).unwrap_or_default();
    let oracle = &problem.inner;
    let result = py
        .detach(|| core::run_solver(kind, oracle, &x0, &cfg))
        .map_err(to_py)?;
    Ok(PySolveResult { inner: result })
}

/// Relative errors of all oracle derivatives against central differences.
#[pyfunction]
#[pyo3(signature = (problem, x, step = 1e-6, tol = 1e-6))]
fn finite_diff_check<'py>(
    py: Python<'py>,
    problem: &PyProblem,
    x: Vec<f64>,
    step: f64,
    tol: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let report = core::finite_diff_check(&problem.inner, &x, step, tol).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("grad_f", report.grad_f)?;
    d.set_item("jac_g", report.jac_g)?;
    d.set_item("hess_f", report.hess_f)?;
    d.set_item("hess_gl", report.hess_gl)?;
    d.set_item("max_error", report.max_error())?;
    d.set_item("passed", report.passed)?;
    d.set_item("non_finite", report.non_finite.map(|e| e.to_string()))?;
    Ok(d)
}

/// Canonical minimizer closest to `x`.
#[pyfunction]
fn canonical_nearest_minimizer(x: Vec<f64>) -> Vec<f64> {
    core::canonical_nearest_minimizer(&x)
}

#[pymodule]
fn aladin(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyProblem>()?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PySolveResult>()?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(finite_diff_check, m)?)?;
    m.add_function(wrap_pyfunction!(canonical_nearest_minimizer, m)?)?;
    m.add(
        "SOLVERS",
        core::SolverKind::ALL.map(|k| k.as_str()).to_vec(),
    )?;
    Ok(())
}
