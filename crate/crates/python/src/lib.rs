//! Python bindings. Models, policies and datasets are classes; algorithm
//! results come back as plain dicts mirroring their JSON form.

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use pyo3::IntoPyObjectExt;
use serde::Serialize;
use serde_json::Value;

use sbrl_core::diagnostics::{audit, divergence_series, restricted_chi_square, AuditInput};
use sbrl_core::fqi::{lasso_fqi as core_lasso_fqi, policy_suboptimality};
use sbrl_core::generate::{generate_instance, strong_signal_instance, GeneratorSpec};
use sbrl_core::hard::{build_hard_instance, default_hard_params, verify_lower_bound_anatomy};
use sbrl_core::harness::Tuning;
use sbrl_core::ope::{lasso_fqe as core_lasso_fqe, post_selection_fqe, ridge_fqe_baseline, OpeConfig, OpeResult};
use sbrl_core::solvers::RestrictedEigenvalueOptions;
use sbrl_core::{
    collect, population_covariance, split_folds, BatchDataset, InitialDistribution, Policy, SparseLinearMdp,
};

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn value_to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    match v {
        Value::Null => Ok(py.None().into_bound(py)),
        Value::Bool(b) => b.into_bound_py_any(py),
        Value::Number(n) => match n.as_i64() {
            Some(i) => i.into_bound_py_any(py),
            None => n.as_f64().unwrap_or(f64::NAN).into_bound_py_any(py),
        },
        Value::String(s) => s.into_bound_py_any(py),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(value_to_py(py, item)?)?;
            }
            Ok(list.into_any())
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, item) in map {
                dict.set_item(k, value_to_py(py, item)?)?;
            }
            Ok(dict.into_any())
        }
    }
}

fn to_py<'py>(py: Python<'py>, v: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    value_to_py(py, &serde_json::to_value(v).map_err(err)?)
}

fn start_distribution(n_states: usize, start: Option<usize>) -> PyResult<InitialDistribution> {
    match start {
        Some(x) => InitialDistribution::point_mass(n_states, x).map_err(err),
        None => Ok(InitialDistribution::uniform(n_states)),
    }
}

/// A sparse linear MDP with known features and reward.
#[pyclass(name = "Mdp", module = "sbrl", frozen)]
struct PyMdp {
    inner: SparseLinearMdp,
}

#[pymethods]
impl PyMdp {
    /// Random instance with `s` relevant features out of `d`.
    #[staticmethod]
    #[pyo3(signature = (n_states, n_actions, d, s, gamma, seed, leading_support = false))]
    fn generate(
        n_states: usize,
        n_actions: usize,
        d: usize,
        s: usize,
        gamma: f64,
        seed: u64,
        leading_support: bool,
    ) -> PyResult<Self> {
        let mut spec = GeneratorSpec::new(n_states, n_actions, d, s, gamma, seed);
        spec.leading_support = leading_support;
        Ok(Self { inner: generate_instance(&spec).map_err(err)? })
    }

    #[staticmethod]
    fn strong_signal(n_states: usize, d: usize, gamma: f64, seed: u64) -> PyResult<Self> {
        Ok(Self { inner: strong_signal_instance(n_states, d, gamma, seed).map_err(err)? })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: SparseLinearMdp::from_json(text).map_err(err)? })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(err)
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
    fn d(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma()
    }

    #[getter]
    fn support(&self) -> Vec<usize> {
        self.inner.support().to_vec()
    }

    fn features(&self, x: usize, a: usize) -> PyResult<Vec<f64>> {
        if x >= self.inner.n_states() || a >= self.inner.n_actions() {
            return Err(PyValueError::new_err("state or action out of range"));
        }
        Ok(self.inner.features(x, a).to_vec())
    }

    fn reward(&self, x: usize, a: usize) -> PyResult<f64> {
        if x >= self.inner.n_states() || a >= self.inner.n_actions() {
            return Err(PyValueError::new_err("state or action out of range"));
        }
        Ok(self.inner.reward(x, a))
    }

    /// Exact value of `policy`, averaged over the start distribution.
    #[pyo3(signature = (policy, start = None))]
    fn policy_value(&self, policy: PyRef<'_, PyPolicy>, start: Option<usize>) -> PyResult<f64> {
        let xi0 = start_distribution(self.inner.n_states(), start)?;
        Ok(self.inner.exact_policy_value(&policy.inner, &xi0).map_err(err)?.scalar)
    }

    #[pyo3(signature = (tol = 1e-10))]
    fn optimal_policy(&self, tol: f64) -> PyResult<PyPolicy> {
        Ok(PyPolicy { inner: self.inner.exact_optimal_value(tol).map_err(err)?.policy })
    }

    /// Sup-norm and start-weighted suboptimality of `policy`.
    #[pyo3(signature = (policy, start = None))]
    fn suboptimality<'py>(
        &self,
        py: Python<'py>,
        policy: PyRef<'_, PyPolicy>,
        start: Option<usize>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let xi0 = start_distribution(self.inner.n_states(), start)?;
        to_py(py, &policy_suboptimality(&self.inner, &policy.inner, &xi0).map_err(err)?)
    }

    fn __repr__(&self) -> String {
        format!(
            "Mdp(n_states={}, n_actions={}, d={}, s={}, gamma={})",
            self.inner.n_states(),
            self.inner.n_actions(),
            self.inner.dim(),
            self.inner.sparsity(),
            self.inner.gamma()
        )
    }
}

/// A stationary stochastic policy, one action distribution per state.
#[pyclass(name = "Policy", module = "sbrl", frozen)]
struct PyPolicy {
    inner: Policy,
}

#[pymethods]
impl PyPolicy {
    #[new]
    fn new(probs: Vec<Vec<f64>>) -> PyResult<Self> {
        Ok(Self { inner: Policy::new(probs).map_err(err)? })
    }

    #[staticmethod]
    fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self { inner: Policy::uniform(n_states, n_actions) }
    }

    #[staticmethod]
    fn deterministic(actions: Vec<usize>, n_actions: usize) -> PyResult<Self> {
        Ok(Self { inner: Policy::deterministic(&actions, n_actions).map_err(err)? })
    }

    /// `(1 - epsilon) * self + epsilon * uniform`.
    fn epsilon_greedy(&self, epsilon: f64) -> PyResult<Self> {
        Ok(Self { inner: Policy::epsilon_greedy(&self.inner, epsilon).map_err(err)? })
    }

    #[getter]
    fn probs(&self) -> Vec<Vec<f64>> {
        (0..self.inner.n_states()).map(|x| self.inner.row(x).to_vec()).collect()
    }
}

/// Episodes of `(x, a, x')` transitions.
#[pyclass(name = "Dataset", module = "sbrl", frozen)]
struct PyDataset {
    inner: BatchDataset,
}

#[pymethods]
impl PyDataset {
    /// `episodes` episodes of length `episode_len` from uniform start states.
    #[staticmethod]
    #[pyo3(signature = (mdp, behavior, episodes, episode_len, seed, label = "behavior"))]
    fn collect(
        mdp: PyRef<'_, PyMdp>,
        behavior: PyRef<'_, PyPolicy>,
        episodes: usize,
        episode_len: usize,
        seed: u64,
        label: &str,
    ) -> PyResult<Self> {
        let init = InitialDistribution::uniform(mdp.inner.n_states());
        let inner = collect(&mdp.inner, &[behavior.inner.clone()], &init, episodes, episode_len, seed, label)
            .map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn read_csv(csv_path: PathBuf, meta_path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: BatchDataset::read_csv(&csv_path, &meta_path).map_err(err)? })
    }

    fn write_csv(&self, csv_path: PathBuf, meta_path: PathBuf) -> PyResult<()> {
        self.inner.write_csv(&csv_path, &meta_path).map_err(err)
    }

    fn transitions(&self) -> Vec<(usize, usize, usize)> {
        self.inner.transitions().map(|t| (t.x, t.a, t.x_next)).collect()
    }

    fn meta<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, self.inner.meta())
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

#[allow(clippy::too_many_arguments)]
fn resolve_config(
    n: usize,
    mdp: &SparseLinearMdp,
    iterations: Option<usize>,
    lambda1: Option<f64>,
    lambda1_scale: f64,
    lambda2: Option<f64>,
    lambda3: Option<f64>,
    monte_carlo: Option<usize>,
    seed: u64,
) -> PyResult<OpeConfig> {
    let tuning = Tuning {
        iterations,
        lambda1,
        lambda1_scale,
        lambda2,
        lambda3,
        monte_carlo,
        ..Tuning::default()
    };
    tuning.resolve(n, mdp.dim(), mdp.gamma(), seed).map_err(err)
}

fn ope_output<'py>(py: Python<'py>, mdp: &SparseLinearMdp, target: &Policy, xi0: &InitialDistribution, cfg: &OpeConfig, result: &OpeResult) -> PyResult<Bound<'py, PyAny>> {
    let out = to_py(py, result)?;
    let dict = out.cast::<PyDict>()?;
    let v_true = mdp.exact_policy_value(target, xi0).map_err(err)?.scalar;
    dict.set_item("v_true", v_true)?;
    dict.set_item("abs_err", (result.value - v_true).abs())?;
    dict.set_item("iterations", cfg.iterations)?;
    dict.set_item("lambda1", cfg.lambda1)?;
    dict.set_item("lambda2", cfg.lambda2)?;
    Ok(out)
}

/// Off-policy evaluation of `target` from `data`.
///
/// `algo` is `"lasso-fqe"`, `"post-select"` or `"ridge-fqe-baseline"`. Unset
/// hyperparameters follow the default formulas; `lambda1_scale` multiplies the default.
#[pyfunction]
#[pyo3(signature = (
    mdp, data, target, algo = "lasso-fqe", start = None, iterations = None, lambda1 = None,
    lambda1_scale = 1.0, lambda2 = None, lambda3 = None, monte_carlo = None, seed = 0
))]
#[allow(clippy::too_many_arguments)]
fn evaluate<'py>(
    py: Python<'py>,
    mdp: PyRef<'_, PyMdp>,
    data: PyRef<'_, PyDataset>,
    target: PyRef<'_, PyPolicy>,
    algo: &str,
    start: Option<usize>,
    iterations: Option<usize>,
    lambda1: Option<f64>,
    lambda1_scale: f64,
    lambda2: Option<f64>,
    lambda3: Option<f64>,
    monte_carlo: Option<usize>,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let (m, ds) = (&mdp.inner, &data.inner);
    let xi0 = start_distribution(m.n_states(), start)?;
    let cfg = resolve_config(ds.len(), m, iterations, lambda1, lambda1_scale, lambda2, lambda3, monte_carlo, seed)?;
    let model = m.access();
    let result = match algo {
        "lasso-fqe" => {
            let folds = split_folds(ds, cfg.iterations).map_err(err)?;
            core_lasso_fqe(ds, &folds, &model, &target.inner, &xi0, &cfg)
        }
        "post-select" => post_selection_fqe(ds, &model, &target.inner, &xi0, &cfg),
        "ridge-fqe-baseline" => ridge_fqe_baseline(ds, &model, &target.inner, &xi0, &cfg),
        other => return Err(PyValueError::new_err(format!("unknown algorithm {other:?}"))),
    }
    .map_err(err)?;
    ope_output(py, m, &target.inner, &xi0, &cfg, &result)
}

/// Lasso fitted Q-iteration. Returns the learned policy and a dict with
/// weights, actions and suboptimality.
#[pyfunction]
#[pyo3(signature = (mdp, data, start = None, iterations = None, lambda1 = None, lambda1_scale = 1.0, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn optimize<'py>(
    py: Python<'py>,
    mdp: PyRef<'_, PyMdp>,
    data: PyRef<'_, PyDataset>,
    start: Option<usize>,
    iterations: Option<usize>,
    lambda1: Option<f64>,
    lambda1_scale: f64,
    seed: u64,
) -> PyResult<(PyPolicy, Bound<'py, PyAny>)> {
    let (m, ds) = (&mdp.inner, &data.inner);
    let xi0 = start_distribution(m.n_states(), start)?;
    let cfg = resolve_config(ds.len(), m, iterations, lambda1, lambda1_scale, None, None, None, seed)?;
    let folds = split_folds(ds, cfg.iterations).map_err(err)?;
    let result = core_lasso_fqi(ds, &folds, &m.access(), &cfg).map_err(err)?;
    let policy = result.policy(m.n_actions()).map_err(err)?;
    let gaps = policy_suboptimality(m, &policy, &xi0).map_err(err)?;
    let out = to_py(py, &result)?;
    let dict = out.cast::<PyDict>()?;
    dict.set_item("sup_gap", gaps.sup_gap)?;
    dict.set_item("xi0_gap", gaps.weighted_gap)?;
    Ok((PyPolicy { inner: policy }, out))
}

/// Restricted chi-square divergence of the target's discounted feature mean
/// against the behavior covariance on `features` (the support by default).
#[pyfunction]
#[pyo3(signature = (mdp, target, behavior, episode_len = 1, features = None, start = None))]
fn chi_square(
    mdp: PyRef<'_, PyMdp>,
    target: PyRef<'_, PyPolicy>,
    behavior: PyRef<'_, PyPolicy>,
    episode_len: usize,
    features: Option<Vec<usize>>,
    start: Option<usize>,
) -> PyResult<f64> {
    let m = &mdp.inner;
    let xi0 = start_distribution(m.n_states(), start)?;
    let init = InitialDistribution::uniform(m.n_states());
    let feats = features.unwrap_or_else(|| m.support().to_vec());
    restricted_chi_square(m, &target.inner, &xi0, &behavior.inner, &init, episode_len, &feats).map_err(err)
}

/// Discounted sum of per-step feature-mean norms under the behavior covariance.
#[pyfunction]
#[pyo3(signature = (mdp, target, behavior, episode_len = 1, features = None, start = None, tol = 1e-10))]
#[allow(clippy::too_many_arguments)]
fn divergence<'py>(
    py: Python<'py>,
    mdp: PyRef<'_, PyMdp>,
    target: PyRef<'_, PyPolicy>,
    behavior: PyRef<'_, PyPolicy>,
    episode_len: usize,
    features: Option<Vec<usize>>,
    start: Option<usize>,
    tol: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let m = &mdp.inner;
    let xi0 = start_distribution(m.n_states(), start)?;
    let init = InitialDistribution::uniform(m.n_states());
    let sigma = population_covariance(m, &behavior.inner, &init, episode_len).map_err(err)?;
    let feats = features.unwrap_or_else(|| m.support().to_vec());
    let series = divergence_series(m, &target.inner, &xi0, &sigma, &feats, tol).map_err(err)?;
    to_py(py, &series)
}

/// Full distribution-mismatch report, including the signal-strength check at sample size `n`.
#[pyfunction]
#[pyo3(signature = (mdp, target, behavior, n, episode_len = 1, delta = 0.1, features = None, start = None))]
#[allow(clippy::too_many_arguments)]
fn mismatch_report<'py>(
    py: Python<'py>,
    mdp: PyRef<'_, PyMdp>,
    target: PyRef<'_, PyPolicy>,
    behavior: PyRef<'_, PyPolicy>,
    n: usize,
    episode_len: usize,
    delta: f64,
    features: Option<Vec<usize>>,
    start: Option<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let m = &mdp.inner;
    let xi0 = start_distribution(m.n_states(), start)?;
    let init = InitialDistribution::uniform(m.n_states());
    let report = audit(&AuditInput {
        mdp: m,
        behavior: &behavior.inner,
        target: &target.inner,
        xi0: &xi0,
        data_init: &init,
        episode_len,
        n,
        delta,
        features: features.as_deref(),
        horizon_tol: 1e-10,
        re_options: RestrictedEigenvalueOptions::default(),
    })
    .map_err(err)?;
    to_py(py, &report)
}

/// Lower-bound instance at the default perturbation for sample size `n`.
/// Returns the model, its behavior policy and the structural report.
#[pyfunction]
#[pyo3(signature = (s = 2, d = 6, n = 100_000, episode_len = 1, gamma = 0.75, model_index = 1))]
fn hard_instance<'py>(
    py: Python<'py>,
    s: usize,
    d: usize,
    n: usize,
    episode_len: usize,
    gamma: f64,
    model_index: usize,
) -> PyResult<(PyMdp, PyPolicy, Bound<'py, PyAny>)> {
    let mut params = default_hard_params(s, d, n, episode_len, gamma).map_err(err)?.params;
    params.model_index = model_index;
    let bundle = build_hard_instance(&params).map_err(err)?;
    let report = verify_lower_bound_anatomy(&bundle, &RestrictedEigenvalueOptions::default()).map_err(err)?;
    let out = to_py(py, &report)?;
    out.cast::<PyDict>()?.set_item("passed", report.passed())?;
    Ok((PyMdp { inner: bundle.mdp }, PyPolicy { inner: bundle.behavior }, out))
}

#[pymodule]
pub fn sbrl(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMdp>()?;
    m.add_class::<PyPolicy>()?;
    m.add_class::<PyDataset>()?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(optimize, m)?)?;
    m.add_function(wrap_pyfunction!(chi_square, m)?)?;
    m.add_function(wrap_pyfunction!(divergence, m)?)?;
    m.add_function(wrap_pyfunction!(mismatch_report, m)?)?;
    m.add_function(wrap_pyfunction!(hard_instance, m)?)?;
    Ok(())
}
