//! Python bindings. Reports cross the boundary as plain dicts built from
//! their JSON form.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;
use shen_core::app::{self, RunOptions};
use shen_core::config::{load_config, parse_config, ExperimentConfig};
use shen_core::density::{collect_samples, density_envelope, pathwise_bounds};
use shen_core::kernel::PhiEvaluator;
use shen_core::malliavin::{linear_identity, negative_moment_probe};
use shen_core::solver::Simulator;
use shen_core::spectral::DEFAULT_DALANG_CUTOFFS;
use shen_core::taylor::{final_interval_terms, TermKind};
use shen_core::Error;
use std::path::PathBuf;

fn err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) | Error::Degenerate(_) | Error::Divergent(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_py<T: Serialize>(py: Python<'_>, v: &T) -> PyResult<PyObject> {
    let text = serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

/// Validated experiment configuration.
#[pyclass(name = "Config", module = "shen")]
#[derive(Clone)]
struct PyConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: parse_config(text).map_err(err)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: load_config(&path).map_err(err)? })
    }

    fn to_json(&self) -> String {
        self.inner.emit()
    }

    fn hash(&self) -> String {
        self.inner.hash()
    }

    #[getter]
    fn steps(&self) -> usize {
        self.inner.steps()
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.inner.dt
    }

    #[getter]
    fn horizon(&self) -> f64 {
        self.inner.horizon
    }

    #[getter]
    fn paths(&self) -> usize {
        self.inner.paths
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    /// `Phi(t)` for the configured noise.
    fn phi(&self, t: f64) -> PyResult<f64> {
        self.inner.phi().and_then(|p| p.phi(t)).map_err(err)
    }

    /// `J(t) = Phi'(t)`.
    fn j_rate(&self, t: f64) -> PyResult<f64> {
        self.inner.phi().and_then(|p| p.j_rate(t)).map_err(err)
    }

    fn dalang(&self, py: Python<'_>) -> PyResult<PyObject> {
        let r = self.inner.measure().and_then(|m| m.dalang_integral(&DEFAULT_DALANG_CUTOFFS)).map_err(err)?;
        to_py(py, &r)
    }

    fn simulator(&self) -> PyResult<PySimulator> {
        let sim = self.inner.simulator().map_err(err)?;
        Ok(PySimulator { sim, phi: self.inner.phi().map_err(err)? })
    }

    fn __repr__(&self) -> String {
        format!("Config(hash={}, steps={})", &self.inner.hash()[..12], self.inner.steps())
    }
}

/// Exponential-Euler solver on the configured lattice.
#[pyclass(name = "Simulator", module = "shen")]
struct PySimulator {
    sim: Simulator,
    phi: PhiEvaluator,
}

#[pymethods]
impl PySimulator {
    /// Field values at every step of one path: a list of `steps + 1` lists.
    fn solve(&self, py: Python<'_>, seed: u64, path: u64) -> PyResult<Vec<Vec<f64>>> {
        let p = py.allow_threads(|| self.sim.solve(seed, path)).map_err(err)?;
        Ok(p.states.into_iter().map(|f| f.values).collect())
    }

    /// `u(T, x_obs)` over `paths` paths.
    fn observed(&self, py: Python<'_>, paths: usize, seed: u64) -> PyResult<Vec<f64>> {
        py.allow_threads(|| collect_samples(&self.sim, paths, seed)).map_err(err)
    }

    /// Deterministic part `F_0 = (G_T * u0)(x_obs)`.
    fn f0(&self) -> f64 {
        self.sim.f0(self.sim.config().horizon())
    }

    fn linear_identity(&self, py: Python<'_>, seed: u64) -> PyResult<PyObject> {
        let r = py.allow_threads(|| linear_identity(&self.sim, &self.phi, seed)).map_err(err)?;
        to_py(py, &r)
    }

    fn pathwise_bounds(&self, py: Python<'_>, paths: usize, seed: u64) -> PyResult<PyObject> {
        let r = py.allow_threads(|| pathwise_bounds(&self.sim, &self.phi, paths, seed)).map_err(err)?;
        to_py(py, &r)
    }

    /// Taylor terms on the final interval of each width, for every path.
    fn taylor_terms(&self, py: Python<'_>, widths: Vec<usize>, paths: usize, seed: u64) -> PyResult<PyObject> {
        let r = py.allow_threads(|| final_interval_terms(&self.sim, &widths, paths, seed)).map_err(err)?;
        to_py(py, &r)
    }

    #[pyo3(signature = (lo, hi, paths, seed, p = 1))]
    fn small_ball(&self, py: Python<'_>, lo: usize, hi: usize, paths: usize, seed: u64, p: u32) -> PyResult<PyObject> {
        let r = py.allow_threads(|| negative_moment_probe(&self.sim, &self.phi, (lo, hi), p, paths, seed)).map_err(err)?;
        to_py(py, &r)
    }

    #[pyo3(signature = (paths, seed, points = 801))]
    fn density_envelope(&self, py: Python<'_>, paths: usize, seed: u64, points: usize) -> PyResult<PyObject> {
        let (_, r) = py.allow_threads(|| density_envelope(&self.sim, &self.phi, paths, seed, points)).map_err(err)?;
        to_py(py, &r)
    }
}

/// Runs a subcommand, writing artifacts and a manifest. Returns the manifest
/// plus per-subcommand summaries.
#[pyfunction]
#[pyo3(signature = (subcommand, config, out = None, seed = None, paths = None, terms = None, p = None, widths = None))]
#[allow(clippy::too_many_arguments)]
fn run(
    py: Python<'_>,
    subcommand: &str,
    config: &PyConfig,
    out: Option<PathBuf>,
    seed: Option<u64>,
    paths: Option<usize>,
    terms: Option<Vec<String>>,
    p: Option<u32>,
    widths: Option<Vec<usize>>,
) -> PyResult<PyObject> {
    let sub: app::Subcommand = subcommand.parse().map_err(err)?;
    let terms = terms
        .map(|t| t.iter().map(|s| s.parse::<TermKind>()).collect::<Result<Vec<_>, _>>())
        .transpose()
        .map_err(err)?;
    let opts = RunOptions { out, seed, paths, terms, p, widths, intervals: None };
    let r = py.allow_threads(|| app::run(sub, &config.inner, &opts)).map_err(err)?;
    let body = serde_json::json!({ "pass": r.pass(), "exit_code": r.exit_code(), "manifest": r.manifest, "outcomes": r.outcomes });
    to_py(py, &body)
}

#[pymodule]
pub fn shen(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PySimulator>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
