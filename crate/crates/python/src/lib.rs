//! Python bindings for the `simtemp` library. Reports come back as plain
//! Python dicts and lists.

use std::path::Path;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use simtemp::cli::{run_experiment as run_experiment_rs, ExperimentConfig};
use simtemp::diagnostics;
use simtemp::finitelab::{self, FiniteChain, Partition};
use simtemp::ladder::{self, Ladder, StepSizeParams};
use simtemp::rng::stream_rng;
use simtemp::targets::{self, LocalPotential, MixtureSpec};
use simtemp::tempering::{run_chain as run_chain_rs, ChainInit, ProposalKind, TemperingConfig};
use simtemp::zconst;
use simtemp::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(_) | Error::Quadrature { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn proposal_kind(name: &str) -> PyResult<ProposalKind> {
    match name.to_ascii_lowercase().as_str() {
        "rwm" => Ok(ProposalKind::Rwm),
        "mala" => Ok(ProposalKind::Mala),
        other => Err(PyValueError::new_err(format!("proposal must be 'rwm' or 'mala', got '{other}'"))),
    }
}

#[allow(clippy::too_many_arguments)]
fn tempering_config(proposal: &str, h: f64, alpha: f64, q_adj: f64, lazy: bool, seed: u64) -> PyResult<TemperingConfig> {
    let config = TemperingConfig { proposal: proposal_kind(proposal)?, h, alpha, q_adj, lazy, seed };
    config.validate().map_err(py_err)?;
    Ok(config)
}

/// Mixture `Σ_j w_j exp(-f(x - μ_j))` with a shared local potential.
#[pyclass(name = "MixtureSpec", module = "simtemp_py", skip_from_py_object)]
#[derive(Clone)]
struct PyMixtureSpec {
    inner: MixtureSpec,
}

fn local_potential(local: &str, curvatures: Option<Vec<f64>>, m: Option<f64>, l: Option<f64>) -> PyResult<LocalPotential> {
    match local {
        "isotropic" => Ok(LocalPotential::Isotropic),
        "diagonal" => Ok(LocalPotential::Diagonal {
            curvatures: curvatures.ok_or_else(|| PyValueError::new_err("diagonal potential needs curvatures"))?,
        }),
        "soft_abs" => match (m, l) {
            (Some(m), Some(l)) => Ok(LocalPotential::SoftAbs { m, l }),
            _ => Err(PyValueError::new_err("soft_abs potential needs m and l")),
        },
        other => Err(PyValueError::new_err(format!("unknown local potential '{other}'"))),
    }
}

#[pymethods]
impl PyMixtureSpec {
    #[new]
    #[pyo3(signature = (weights, modes, local = "isotropic", curvatures = None, m = None, l = None))]
    fn new(
        weights: Vec<f64>,
        modes: Vec<Vec<f64>>,
        local: &str,
        curvatures: Option<Vec<f64>>,
        m: Option<f64>,
        l: Option<f64>,
    ) -> PyResult<Self> {
        let local = local_potential(local, curvatures, m, l)?;
        Ok(PyMixtureSpec { inner: MixtureSpec::new(weights, modes, local).map_err(py_err)? })
    }

    /// Equal weights, modes at `±(distance, 0, …, 0)`, isotropic potential.
    #[staticmethod]
    fn symmetric_pair(dim: usize, distance: f64) -> PyResult<Self> {
        Ok(PyMixtureSpec {
            inner: MixtureSpec::symmetric_pair(dim, distance, LocalPotential::Isotropic).map_err(py_err)?,
        })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn num_components(&self) -> usize {
        self.inner.num_components()
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.inner.weights().to_vec()
    }

    #[getter]
    fn modes(&self) -> Vec<Vec<f64>> {
        self.inner.modes().to_vec()
    }

    #[getter]
    fn smoothness(&self) -> f64 {
        self.inner.local().smoothness()
    }

    #[getter]
    fn convexity(&self) -> f64 {
        self.inner.local().convexity()
    }

    #[getter]
    fn max_mode_norm(&self) -> f64 {
        self.inner.max_mode_norm()
    }

    fn potential(&self, x: Vec<f64>) -> PyResult<f64> {
        targets::mixture_potential(&self.inner, &x).map_err(py_err)
    }

    fn gradient(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        targets::mixture_gradient(&self.inner, &x).map_err(py_err)
    }

    fn label_weights(&self, ladder: PyRef<'_, PyLadder>, level: usize, x: Vec<f64>) -> PyResult<Vec<f64>> {
        targets::conditional_label_weights(&self.inner, &ladder.inner, level, &x).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "MixtureSpec(components={}, dim={}, local='{}')",
            self.inner.num_components(),
            self.inner.dim(),
            self.inner.local().name()
        )
    }
}

/// Inverse temperatures `β_1 < … < β_T = 1` with pseudo-log-weights `ζ`.
#[pyclass(name = "Ladder", module = "simtemp_py", skip_from_py_object)]
#[derive(Clone)]
struct PyLadder {
    inner: Ladder,
}

#[pymethods]
impl PyLadder {
    #[new]
    #[pyo3(signature = (betas, log_weights = None))]
    fn new(betas: Vec<f64>, log_weights: Option<Vec<f64>>) -> PyResult<Self> {
        let inner = match log_weights {
            Some(z) => Ladder::with_log_weights(betas, z),
            None => Ladder::from_betas(betas),
        };
        Ok(PyLadder { inner: inner.map_err(py_err)? })
    }

    #[staticmethod]
    fn geometric(ratio: f64, levels: usize) -> PyResult<Self> {
        Ok(PyLadder { inner: Ladder::geometric(ratio, levels).map_err(py_err)? })
    }

    /// Ladder spaced for smoothness `l`, convexity `m`, dimension `d` and
    /// mode radius `big_d`.
    #[staticmethod]
    fn build(l: f64, m: f64, d: usize, big_d: f64) -> PyResult<Self> {
        Ok(PyLadder { inner: ladder::build_ladder(l, m, d, big_d).map_err(py_err)? })
    }

    #[staticmethod]
    fn for_spec(spec: PyRef<'_, PyMixtureSpec>) -> PyResult<Self> {
        let s = &spec.inner;
        Self::build(s.local().smoothness(), s.local().convexity(), s.dim(), s.max_mode_norm())
    }

    #[getter]
    fn betas(&self) -> Vec<f64> {
        self.inner.betas().to_vec()
    }

    #[getter]
    fn log_weights(&self) -> Vec<f64> {
        self.inner.log_weights().to_vec()
    }

    #[getter]
    fn num_levels(&self) -> usize {
        self.inner.num_levels()
    }

    fn __len__(&self) -> usize {
        self.inner.num_levels()
    }

    fn __repr__(&self) -> String {
        format!("Ladder(levels={}, beta_1={:.6e})", self.inner.num_levels(), self.inner.beta(0))
    }
}

/// Reversible finite Markov chain with its stationary law.
#[pyclass(name = "FiniteChain", module = "simtemp_py")]
struct PyFiniteChain {
    inner: FiniteChain,
}

#[pymethods]
impl PyFiniteChain {
    #[new]
    fn new(rows: Vec<Vec<f64>>, pi: Vec<f64>) -> PyResult<Self> {
        Ok(PyFiniteChain { inner: FiniteChain::from_rows(rows, pi).map_err(py_err)? })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn pi(&self) -> Vec<f64> {
        self.inner.pi().to_vec()
    }

    fn rows(&self) -> Vec<Vec<f64>> {
        self.inner.rows()
    }

    fn lazy(&self) -> Self {
        PyFiniteChain { inner: self.inner.lazy() }
    }

    fn spectral_gap(&self) -> f64 {
        finitelab::spectral_gap(&self.inner)
    }

    fn s_conductance(&self, s: f64) -> PyResult<f64> {
        finitelab::s_conductance_exact(&self.inner, s).map_err(py_err)
    }

    /// Decomposition inequalities for the partition given by block `labels`.
    #[pyo3(signature = (labels, s = 0.0, n_functions = 100, seed = 0))]
    fn decomposition_check<'py>(
        &self,
        py: Python<'py>,
        labels: Vec<usize>,
        s: f64,
        n_functions: usize,
        seed: u64,
    ) -> PyResult<Bound<'py, PyAny>> {
        let partition = Partition::new(labels).map_err(py_err)?;
        let mut rng = stream_rng(seed, 0);
        let report = finitelab::decomposition_check(&self.inner, &partition, s, n_functions, &mut rng).map_err(py_err)?;
        to_py(py, &report)
    }
}

/// Runs the tempering chain; returns `{"trace": [...], "summary": {...}}`.
#[pyfunction]
#[pyo3(signature = (spec, ladder, h, steps, proposal = "rwm", seed = 0, thin = 1, replica = 0, alpha = 0.5, q_adj = 0.5, lazy = true))]
#[allow(clippy::too_many_arguments)]
fn run_chain<'py>(
    py: Python<'py>,
    spec: PyRef<'_, PyMixtureSpec>,
    ladder: PyRef<'_, PyLadder>,
    h: f64,
    steps: u64,
    proposal: &str,
    seed: u64,
    thin: u64,
    replica: u64,
    alpha: f64,
    q_adj: f64,
    lazy: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let config = tempering_config(proposal, h, alpha, q_adj, lazy, seed)?;
    let (s, l) = (spec.inner.clone(), ladder.inner.clone());
    let out = py
        .detach(move || run_chain_rs(&ChainInit::Default, &s, &l, &config, steps, thin, replica))
        .map_err(py_err)?;
    to_py(py, &out)
}

/// Calibrates `ζ`; returns the calibrated ladder and the report.
#[pyfunction]
#[pyo3(signature = (spec, ladder, h, proposal = "rwm", per_level_budget = 10_000, verify_steps = 100_000, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn calibrate<'py>(
    py: Python<'py>,
    spec: PyRef<'_, PyMixtureSpec>,
    ladder: PyRef<'_, PyLadder>,
    h: f64,
    proposal: &str,
    per_level_budget: u64,
    verify_steps: u64,
    seed: u64,
) -> PyResult<(PyLadder, Bound<'py, PyAny>)> {
    let config = tempering_config(proposal, h, 0.5, 0.5, true, seed)?;
    let (s, l) = (spec.inner.clone(), ladder.inner.clone());
    let (report, calibrated) = py
        .detach(move || {
            let report = zconst::calibrate_pseudo_weights(&s, &l, &config, per_level_budget, verify_steps)?;
            let calibrated = report.calibrated_ladder(&l)?;
            Ok::<_, Error>((report, calibrated))
        })
        .map_err(py_err)?;
    Ok((PyLadder { inner: calibrated }, to_py(py, &report)?))
}

#[pyfunction]
#[pyo3(signature = (spec, ladder, alpha = 0.5, q_adj = 0.5, eta = std::f64::consts::E, epsilon = 0.01, c = 0.01))]
#[allow(clippy::too_many_arguments)]
fn step_sizes<'py>(
    py: Python<'py>,
    spec: PyRef<'_, PyMixtureSpec>,
    ladder: PyRef<'_, PyLadder>,
    alpha: f64,
    q_adj: f64,
    eta: f64,
    epsilon: f64,
    c: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let params = StepSizeParams { alpha, q_adj, eta, epsilon, c };
    to_py(py, &ladder::step_sizes(&spec.inner, &ladder.inner, &params).map_err(py_err)?)
}

#[pyfunction]
fn design_report<'py>(
    py: Python<'py>,
    spec: PyRef<'_, PyMixtureSpec>,
    ladder: PyRef<'_, PyLadder>,
) -> PyResult<Bound<'py, PyAny>> {
    let report = ladder::DesignReport::new(&spec.inner, &ladder.inner, &StepSizeParams::default()).map_err(py_err)?;
    to_py(py, &report)
}

/// Exact `(Δ, H)` for a quadratic local potential.
#[pyfunction]
fn exact_overlap(spec: PyRef<'_, PyMixtureSpec>, ladder: PyRef<'_, PyLadder>) -> PyResult<(f64, f64)> {
    ladder::exact_overlap(&spec.inner, &ladder.inner).map_err(py_err)
}

#[pyfunction]
fn f_overlap(rho: f64, d: usize) -> PyResult<f64> {
    ladder::f_overlap(rho, d).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (spec, ladder, n_points = 1000, seed = 0))]
fn inequality_suite<'py>(
    py: Python<'py>,
    spec: PyRef<'_, PyMixtureSpec>,
    ladder: PyRef<'_, PyLadder>,
    n_points: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let mut rng = stream_rng(seed, 0);
    to_py(py, &diagnostics::inequality_suite(&spec.inner, &ladder.inner, n_points, &mut rng).map_err(py_err)?)
}

#[pyfunction]
#[pyo3(signature = (spec, ladder, h, n_mc = 10_000, proposal = "rwm", seed = 0))]
fn projected_chain_estimate<'py>(
    py: Python<'py>,
    spec: PyRef<'_, PyMixtureSpec>,
    ladder: PyRef<'_, PyLadder>,
    h: f64,
    n_mc: usize,
    proposal: &str,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let config = tempering_config(proposal, h, 0.5, 0.5, true, seed)?;
    let (s, l) = (spec.inner.clone(), ladder.inner.clone());
    let est = py.detach(move || diagnostics::projected_chain_estimate(&s, &l, &config, n_mc)).map_err(py_err)?;
    to_py(py, &est)
}

#[pyfunction]
#[pyo3(signature = (spec, ladder, h, s = 0.0, n_mc = 10_000, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn counterexample_witness<'py>(
    py: Python<'py>,
    spec: PyRef<'_, PyMixtureSpec>,
    ladder: PyRef<'_, PyLadder>,
    h: f64,
    s: f64,
    n_mc: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let report =
        diagnostics::counterexample_witness(&spec.inner, &ladder.inner, h, s, n_mc, seed).map_err(py_err)?;
    to_py(py, &report)
}

/// Runs a TOML experiment config into `out_dir`; returns the exit status.
#[pyfunction]
fn run_experiment(py: Python<'_>, config_toml: &str, out_dir: &str) -> PyResult<i32> {
    let cfg = ExperimentConfig::from_toml(config_toml).map_err(py_err)?;
    let out = out_dir.to_string();
    py.detach(move || run_experiment_rs(&cfg, Path::new(&out))).map_err(py_err)
}

#[pymodule]
pub fn simtemp_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMixtureSpec>()?;
    m.add_class::<PyLadder>()?;
    m.add_class::<PyFiniteChain>()?;
    m.add_function(wrap_pyfunction!(run_chain, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate, m)?)?;
    m.add_function(wrap_pyfunction!(step_sizes, m)?)?;
    m.add_function(wrap_pyfunction!(design_report, m)?)?;
    m.add_function(wrap_pyfunction!(exact_overlap, m)?)?;
    m.add_function(wrap_pyfunction!(f_overlap, m)?)?;
    m.add_function(wrap_pyfunction!(inequality_suite, m)?)?;
    m.add_function(wrap_pyfunction!(projected_chain_estimate, m)?)?;
    m.add_function(wrap_pyfunction!(counterexample_witness, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
