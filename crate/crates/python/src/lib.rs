//! Python bindings for `conflation-core`. Structured results come back as
//! plain dicts and lists.

use conflation_core::canonical::{self, CanonicalParams};
use conflation_core::learning::{self, PipelineMode};
use conflation_core::{chain, conflation as conf, optimize as opt, polytope, Error, MdpDocument, Policy, RewardFunction};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyModule;
use serde::Serialize;

fn py_err(err: Error) -> PyErr {
    match err {
        Error::InvalidInput(_) => PyValueError::new_err(err.to_string()),
        _ => PyRuntimeError::new_err(err.to_string()),
    }
}

fn to_py(py: Python<'_>, value: &impl Serialize) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(PyModule::import(py, "json")?.call_method1("loads", (text,))?.unbind())
}

fn params(m: f64, epsilon: f64) -> PyResult<CanonicalParams> {
    CanonicalParams::new(m, epsilon).map_err(py_err)
}

fn reward(values: Vec<f64>) -> PyResult<RewardFunction> {
    RewardFunction::new(values).map_err(py_err)
}

/// A policy given as one action per state or as per-state action probabilities.
#[derive(FromPyObject)]
enum PolicySpec {
    Actions(Vec<usize>),
    Probs(Vec<Vec<f64>>),
}

impl PolicySpec {
    fn build(self, n_actions: usize) -> PyResult<Policy> {
        match self {
            PolicySpec::Actions(a) => Policy::deterministic(&a, n_actions),
            PolicySpec::Probs(p) => Policy::new(p),
        }
        .map_err(py_err)
    }
}

/// Finite MDP with transitions indexed `[action][state][next_state]`.
#[pyclass(name = "Mdp", module = "conflation", frozen)]
struct PyMdp {
    inner: conflation_core::Mdp,
}

#[pymethods]
impl PyMdp {
    #[new]
    #[pyo3(signature = (transitions, initial_state = 0))]
    fn new(transitions: Vec<Vec<Vec<f64>>>, initial_state: usize) -> PyResult<Self> {
        Ok(Self { inner: conflation_core::Mdp::new(transitions, initial_state).map_err(py_err)? })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<(Self, Option<Vec<f64>>)> {
        let (mdp, r) = MdpDocument::from_json(text).and_then(MdpDocument::into_parts).map_err(py_err)?;
        Ok((Self { inner: mdp }, r.map(|r| r.values().to_vec())))
    }

    #[pyo3(signature = (reward = None))]
    fn to_json(&self, reward: Option<Vec<f64>>) -> PyResult<String> {
        let r = reward.map(self::reward).transpose()?;
        MdpDocument::new(&self.inner, r.as_ref()).to_json().map_err(py_err)
    }

    #[getter]
    fn n_states(&self) -> usize {
        self.inner.n_states()
    }

    #[getter]
    fn n_actions(&self) -> usize {
        self.inner.n_actions()
    }

    #[getter]
    fn initial_state(&self) -> usize {
        self.inner.initial_state()
    }

    #[getter]
    fn transitions(&self) -> Vec<Vec<Vec<f64>>> {
        self.inner.transitions().to_vec()
    }

    fn __repr__(&self) -> String {
        format!("Mdp(n_states={}, n_actions={})", self.inner.n_states(), self.inner.n_actions())
    }
}

/// The three-state example and its reward `[0, -1, m]`.
#[pyfunction]
fn canonical_mdp(m: f64, epsilon: f64) -> PyResult<(PyMdp, Vec<f64>)> {
    let (mdp, r) = canonical::build(params(m, epsilon)?).map_err(py_err)?;
    Ok((PyMdp { inner: mdp }, r.values().to_vec()))
}

#[pyfunction]
fn canonical_analysis(py: Python<'_>, m: f64, epsilon: f64) -> PyResult<Py<PyAny>> {
    to_py(py, &canonical::analyze(params(m, epsilon)?).map_err(py_err)?)
}

#[pyfunction]
fn closed_form_gain(m: f64, epsilon: f64) -> PyResult<f64> {
    Ok(canonical::closed_form_gain(params(m, epsilon)?))
}

#[pyfunction]
fn closed_form_value_gaps(m: f64, epsilon: f64) -> PyResult<(f64, f64)> {
    Ok(canonical::closed_form_value_gaps(params(m, epsilon)?))
}

#[pyfunction]
fn misalignment_condition(r_hat: Vec<f64>, epsilon: f64) -> PyResult<bool> {
    canonical::misalignment_condition(&r_hat, epsilon).map_err(py_err)
}

#[pyfunction]
fn theorem1_regime(beta_star: f64) -> PyResult<(f64, f64)> {
    canonical::theorem1_regime(beta_star).map_err(py_err)
}

#[pyfunction]
fn learning_threshold(epsilon: f64) -> f64 {
    canonical::learning_threshold(epsilon)
}

#[pyfunction]
fn average_reward(mdp: &PyMdp, reward: Vec<f64>, policy: PolicySpec) -> PyResult<f64> {
    let pi = policy.build(mdp.inner.n_actions())?;
    chain::average_reward(&mdp.inner, &self::reward(reward)?, &pi).map_err(py_err)
}

#[pyfunction]
fn relative_value(mdp: &PyMdp, reward: Vec<f64>, policy: PolicySpec) -> PyResult<Vec<f64>> {
    let pi = policy.build(mdp.inner.n_actions())?;
    chain::relative_value(&mdp.inner, &self::reward(reward)?, &pi).map_err(py_err)
}

#[pyfunction]
fn occupancy(mdp: &PyMdp, policy: PolicySpec) -> PyResult<Vec<f64>> {
    let pi = policy.build(mdp.inner.n_actions())?;
    chain::occupancy_from_start(&mdp.inner, &pi).map_err(py_err)
}

#[pyfunction]
fn optimize(py: Python<'_>, mdp: &PyMdp, reward: Vec<f64>) -> PyResult<Py<PyAny>> {
    to_py(py, &opt::optimize(&mdp.inner, &self::reward(reward)?).map_err(py_err)?)
}

#[pyfunction]
fn is_equivalent(g1: Vec<f64>, g2: Vec<f64>) -> PyResult<bool> {
    conf::is_equivalent(&g1, &g2).map_err(py_err)
}

#[pyfunction]
fn decompose(py: Python<'_>, r_hat: Vec<f64>, r: Vec<f64>, v: Vec<f64>) -> PyResult<Py<PyAny>> {
    to_py(py, &conf::decompose(&r_hat, &r, &v).map_err(py_err)?)
}

#[pyfunction]
#[pyo3(signature = (r, v, beta, c = 1.0, k = 0.0))]
fn make_conflated(r: Vec<f64>, v: Vec<f64>, beta: f64, c: f64, k: f64) -> PyResult<Vec<f64>> {
    Ok(conf::make_conflated(&r, &v, beta, c, k).map_err(py_err)?.values().to_vec())
}

/// Learned reward on the canonical example from the default comparisons.
/// Exact asymptotic loss when `n` is None, otherwise `n` sampled comparisons.
#[pyfunction]
#[pyo3(signature = (m, epsilon, n = None, seed = 0, l2 = 0.0))]
fn pipeline(py: Python<'_>, m: f64, epsilon: f64, n: Option<usize>, seed: u64, l2: f64) -> PyResult<Py<PyAny>> {
    let mode = match n {
        None => PipelineMode::Exact,
        Some(n) => PipelineMode::Sampled { n, seed, l2 },
    };
    let report = learning::misalignment_pipeline(params(m, epsilon)?, &canonical::default_comparisons(), mode)
        .map_err(py_err)?;
    to_py(py, &report)
}

/// Asymptotic-loss minimizer for the canonical example with `r_hat(0) = 0`.
#[pyfunction]
#[pyo3(signature = (m, epsilon, tol = learning::DEFAULT_TOL))]
fn learn_asymptotic(py: Python<'_>, m: f64, epsilon: f64, tol: f64) -> PyResult<Py<PyAny>> {
    let (_, r, _, v) = canonical::optimal_value(params(m, epsilon)?).map_err(py_err)?;
    let d = canonical::default_comparisons();
    to_py(py, &learning::minimize_asymptotic(&d, r.values(), &v, canonical::COMMON, tol).map_err(py_err)?)
}

/// Planar geometry of the canonical example, optionally with a conflated proxy of degree `beta`.
#[pyfunction]
#[pyo3(signature = (m, epsilon, beta = None))]
fn geometry(py: Python<'_>, m: f64, epsilon: f64, beta: Option<f64>) -> PyResult<Py<PyAny>> {
    let (mdp, r, _, v) = canonical::optimal_value(params(m, epsilon)?).map_err(py_err)?;
    let proxy = beta.map(|b| conf::make_conflated(r.values(), &v, b, 1.0, 0.0)).transpose().map_err(py_err)?;
    let geo = polytope::export_geometry(&mdp, r.values(), &v, proxy.as_ref().map(|p| p.values())).map_err(py_err)?;
    to_py(py, &geo)
}

#[pyfunction]
fn phi_vertices(mdp: &PyMdp) -> PyResult<Vec<Vec<f64>>> {
    Ok(polytope::compute_polytope(&mdp.inner).map_err(py_err)?.phi_vertices)
}

#[pymodule]
fn conflation(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMdp>()?;
    m.add_function(wrap_pyfunction!(canonical_mdp, m)?)?;
    m.add_function(wrap_pyfunction!(canonical_analysis, m)?)?;
    m.add_function(wrap_pyfunction!(closed_form_gain, m)?)?;
    m.add_function(wrap_pyfunction!(closed_form_value_gaps, m)?)?;
    m.add_function(wrap_pyfunction!(misalignment_condition, m)?)?;
    m.add_function(wrap_pyfunction!(theorem1_regime, m)?)?;
    m.add_function(wrap_pyfunction!(learning_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(average_reward, m)?)?;
    m.add_function(wrap_pyfunction!(relative_value, m)?)?;
    m.add_function(wrap_pyfunction!(occupancy, m)?)?;
    m.add_function(wrap_pyfunction!(optimize, m)?)?;
    m.add_function(wrap_pyfunction!(is_equivalent, m)?)?;
    m.add_function(wrap_pyfunction!(decompose, m)?)?;
    m.add_function(wrap_pyfunction!(make_conflated, m)?)?;
    m.add_function(wrap_pyfunction!(pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(learn_asymptotic, m)?)?;
    m.add_function(wrap_pyfunction!(geometry, m)?)?;
    m.add_function(wrap_pyfunction!(phi_vertices, m)?)?;
    Ok(())
}
