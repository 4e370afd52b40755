//! Python bindings: quadrature, rational coefficients, the discrete
//! Laplacian, and the three front-end commands.

use fraclap::commands;
use fraclap::config::RunConfig;
use fraclap::operators::{DiscreteLaplacian, SpdOperator};
use fraclap::oracle::dense_frac_power_apply;
use fraclap::quadrature::{gauss_jacobi as jacobi_rule, JacobiWeight};
use fraclap::rational::{self, RationalCoeffs};
use fraclap::Error;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::Domain(_) | Error::DimensionMismatch { .. } => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Nodes and weights of the k-point rule for (1-t)^(beta-1) (1+t)^(-beta).
#[pyfunction]
fn gauss_jacobi(k: usize, beta: f64) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let w = JacobiWeight::fractional(beta).map_err(to_py)?;
    let rule = jacobi_rule(&w, k).map_err(to_py)?;
    Ok((rule.nodes().to_vec(), rule.weights().to_vec()))
}

#[pyfunction]
fn tau_opt(lambda_min: f64, lambda_max: f64) -> PyResult<f64> {
    rational::tau_opt(lambda_min, lambda_max).map_err(to_py)
}

#[pyfunction]
fn error_bound(k: usize, beta: f64, kappa: f64, norm_a: f64, tau: f64) -> PyResult<f64> {
    rational::error_bound(k, beta, kappa, norm_a, tau).map_err(to_py)
}

#[pyfunction]
fn convergence_factor(kappa: f64) -> f64 {
    rational::convergence_factor(kappa)
}

/// Finite-difference Laplacian with homogeneous Dirichlet conditions,
/// scaled so its stencil is (-1, 2, -1).
#[pyclass(name = "Laplacian", frozen)]
struct PyLaplacian(DiscreteLaplacian);

#[pymethods]
impl PyLaplacian {
    #[new]
    #[pyo3(signature = (n, dimension = 1, length = 1.0))]
    fn new(n: usize, dimension: usize, length: f64) -> PyResult<Self> {
        let op = match dimension {
            1 => DiscreteLaplacian::one_dimensional(n, length),
            2 => DiscreteLaplacian::two_dimensional(n),
            d => {
                return Err(PyValueError::new_err(format!(
                    "dimension must be 1 or 2, got {d}"
                )))
            }
        };
        op.map(Self).map_err(to_py)
    }

    #[getter]
    fn size(&self) -> usize {
        self.0.size()
    }

    #[getter]
    fn h(&self) -> f64 {
        self.0.h()
    }

    #[getter]
    fn lambda_min(&self) -> f64 {
        self.0.lambda_min()
    }

    #[getter]
    fn lambda_max(&self) -> f64 {
        self.0.lambda_max()
    }

    #[getter]
    fn condition_number(&self) -> f64 {
        self.0.condition_number()
    }

    fn eigenvalues(&self) -> Vec<f64> {
        self.0.eigenvalues()
    }

    fn apply(&self, v: Vec<f64>) -> PyResult<Vec<f64>> {
        self.0.apply(&v).map_err(to_py)
    }

    /// L^beta v through a dense eigendecomposition.
    fn frac_power(&self, v: Vec<f64>, beta: f64) -> PyResult<Vec<f64>> {
        dense_frac_power_apply(&self.0, beta, &v).map_err(to_py)
    }

    /// R_k(L) v through k shifted solves.
    fn apply_rational(&self, r: &PyRational, v: Vec<f64>) -> PyResult<Vec<f64>> {
        rational::apply_rational(&r.0, &self.0, &v).map_err(to_py)
    }

    /// Smallest k with |R_k(lambda_min) - lambda_min^beta| <= tol:
    /// returns (k, epsilon, reached).
    #[pyo3(signature = (beta, tol, k_max = 64))]
    fn select_k(&self, beta: f64, tol: f64, k_max: usize) -> PyResult<(usize, f64, bool)> {
        let s = rational::select_k(&self.0, beta, tol, k_max).map_err(to_py)?;
        Ok((s.k, s.epsilon, s.reached))
    }
}

/// R_k(z) = z sum gamma_j / (eta_j + z) approximating z^beta.
#[pyclass(name = "RationalApproximation", frozen)]
struct PyRational(RationalCoeffs);

#[pymethods]
impl PyRational {
    #[new]
    fn new(k: usize, beta: f64, tau: f64) -> PyResult<Self> {
        rational::build_coeffs(k, beta, tau)
            .map(Self)
            .map_err(to_py)
    }

    /// Coefficients with tau chosen from the operator's spectral bounds.
    #[staticmethod]
    fn for_operator(op: &PyLaplacian, k: usize, beta: f64) -> PyResult<Self> {
        let tau = rational::tau_opt(op.0.lambda_min(), op.0.lambda_max()).map_err(to_py)?;
        Self::new(k, beta, tau)
    }

    #[getter]
    fn k(&self) -> usize {
        self.0.k()
    }

    #[getter]
    fn beta(&self) -> f64 {
        self.0.beta()
    }

    #[getter]
    fn tau(&self) -> f64 {
        self.0.tau()
    }

    #[getter]
    fn gamma(&self) -> Vec<f64> {
        self.0.gamma().to_vec()
    }

    #[getter]
    fn eta(&self) -> Vec<f64> {
        self.0.eta().to_vec()
    }

    #[getter]
    fn nodes(&self) -> Vec<f64> {
        self.0.nodes().to_vec()
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.0.weights().to_vec()
    }

    fn __call__(&self, z: f64) -> f64 {
        rational::eval_scalar(&self.0, z)
    }

    fn spectral_error(&self, eigenvalues: Vec<f64>) -> f64 {
        rational::spectral_error(&self.0, &eigenvalues)
    }

    fn to_csv(&self) -> String {
        self.0.to_csv()
    }

    fn __repr__(&self) -> String {
        format!(
            "RationalApproximation(k={}, beta={}, tau={})",
            self.0.k(),
            self.0.beta(),
            self.0.tau()
        )
    }
}

/// Keyword options as a run configuration; lists become comma lists.
fn config_from(options: Option<&Bound<'_, PyDict>>) -> PyResult<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(options) = options {
        for (key, value) in options.iter() {
            let key: String = key.extract()?;
            let text = match value.extract::<Vec<f64>>() {
                Ok(list) => list
                    .iter()
                    .map(|x| x.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
                Err(_) if value.is_none() => "none".to_string(),
                Err(_) => value.str()?.to_string(),
            };
            cfg.set(&key, &text).map_err(to_py)?;
        }
    }
    Ok(cfg)
}

/// Convergence CSV; keywords are configuration keys (dimension, N, alphas, k_max).
#[pyfunction]
#[pyo3(signature = (**options))]
fn convergence(py: Python<'_>, options: Option<&Bound<'_, PyDict>>) -> PyResult<String> {
    let cfg = config_from(options)?;
    py.detach(|| commands::cmd_convergence(&cfg)).map_err(to_py)
}

/// Bound table text; keywords are configuration keys.
#[pyfunction]
#[pyo3(signature = (**options))]
fn bound(py: Python<'_>, options: Option<&Bound<'_, PyDict>>) -> PyResult<String> {
    let cfg = config_from(options)?;
    py.detach(|| commands::cmd_bound(&cfg)).map_err(to_py)
}

/// Runs an example; returns a dict with the error and profile CSVs and
/// per-path wall-clock seconds.
#[pyfunction]
#[pyo3(signature = (**options))]
fn solve<'py>(
    py: Python<'py>,
    options: Option<&Bound<'py, PyDict>>,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = config_from(options)?;
    let report = py.detach(|| commands::cmd_solve(&cfg)).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("errors_csv", report.errors_csv())?;
    out.set_item("profile_csv", report.profile_csv())?;
    out.set_item("times", report.times.clone())?;
    if let Some(mt) = &report.mt {
        out.set_item("mt_seconds", mt.seconds)?;
        out.set_item("mt_error", mt.error_exact.clone())?;
    }
    let runs = PyDict::new(py);
    for run in &report.rational {
        let entry = PyDict::new(py);
        entry.set_item("seconds", run.seconds)?;
        entry.set_item("epsilon_k", run.epsilon_k)?;
        entry.set_item("error", run.error_exact.clone())?;
        entry.set_item("diff_mt", run.diff_mt.clone())?;
        runs.set_item(run.k, entry)?;
    }
    out.set_item("rational", runs)?;
    Ok(out)
}

#[pymodule]
#[pyo3(name = "fraclap")]
fn fraclap_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(gauss_jacobi, m)?)?;
    m.add_function(wrap_pyfunction!(tau_opt, m)?)?;
    m.add_function(wrap_pyfunction!(error_bound, m)?)?;
    m.add_function(wrap_pyfunction!(convergence_factor, m)?)?;
    m.add_function(wrap_pyfunction!(convergence, m)?)?;
    m.add_function(wrap_pyfunction!(bound, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_class::<PyLaplacian>()?;
    m.add_class::<PyRational>()?;
    Ok(())
}
