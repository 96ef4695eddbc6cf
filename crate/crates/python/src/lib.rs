//! Python bindings: the model families, schedules, oracle value, Wald rows,
//! a stepwise learner and the experiment drivers.

use std::path::PathBuf;

use nalgebra::DVector;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ipwsgd_core::engine::{Learner as CoreLearner, LearnerConfig, PendingBuffer};
use ipwsgd_core::env::draw_feature;
use ipwsgd_core::experiment::{
    run_monte_carlo, run_single, tune_alpha, ConfigLayer, ExperimentConfig,
};
use ipwsgd_core::inference::wald_row;
use ipwsgd_core::model::{Family, HessianVariant, ModelFamily, RewardModel};
use ipwsgd_core::policy;
use ipwsgd_core::report::{build_report, to_json, ReportOptions};
use ipwsgd_core::types::{Action, ExplorationKind, ExplorationSchedule, LearningSchedule};
use ipwsgd_core::value::oracle_value as core_oracle_value;
use ipwsgd_core::{Error, RngStream};

fn err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::Domain(_) | Error::Dimension { .. } | Error::Parse { .. } => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn family(name: &str) -> PyResult<Family> {
    name.parse().map_err(err)
}

fn action(a: u8) -> PyResult<Action> {
    Action::from_int(i64::from(a)).map_err(err)
}

fn vector(v: Vec<f64>) -> DVector<f64> {
    DVector::from_vec(v)
}

/// Converts any serializable result into plain Python objects.
fn to_python<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let bytes = to_json(value).map_err(err)?;
    let text = String::from_utf8(bytes).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Expected reward of `action` at `x` under `beta` (length 2p).
#[pyfunction]
fn mean_reward(model: &str, action_: u8, x: Vec<f64>, beta: Vec<f64>) -> PyResult<f64> {
    let x = vector(x);
    let m = ModelFamily::new(family(model)?, x.len());
    m.mean_reward(action(action_)?, &x, &vector(beta))
        .map_err(err)
}

/// Probability that the epsilon-greedy rule under `beta` picks action 1.
#[pyfunction]
fn propensity(model: &str, beta: Vec<f64>, x: Vec<f64>, eps: f64) -> PyResult<f64> {
    let x = vector(x);
    let m = ModelFamily::new(family(model)?, x.len());
    policy::propensity(&m, &vector(beta), &x, eps).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (t, alpha = 0.5, gamma = 0.501))]
fn learning_rate(t: usize, alpha: f64, gamma: f64) -> PyResult<f64> {
    LearningSchedule::new(alpha, gamma)
        .map_err(err)?
        .rate(t)
        .map_err(err)
}

/// `spec` is `fixed:F` or `decay:EXP,FLOOR`.
#[pyfunction]
#[pyo3(signature = (t, spec = "fixed:0.2", burn_in = 50))]
fn exploration_rate(t: usize, spec: &str, burn_in: usize) -> PyResult<f64> {
    Ok(exploration(spec, burn_in)?.rate(t))
}

fn exploration(spec: &str, burn_in: usize) -> PyResult<ExplorationSchedule> {
    let kind: ExplorationKind = spec.parse().map_err(err)?;
    ExplorationSchedule::new(kind, burn_in).map_err(err)
}

/// Monte Carlo value of the optimal rule for the synthetic feature law.
/// Returns `(mean, standard error)`.
#[pyfunction]
#[pyo3(signature = (model, beta0, draws = 1_000_000, seed = 0))]
fn oracle_value(model: &str, beta0: Vec<f64>, draws: usize, seed: u64) -> PyResult<(f64, f64)> {
    if !beta0.len().is_multiple_of(2) || beta0.len() < 4 {
        return Err(PyValueError::new_err(
            "beta0 must have even length 2p with p >= 2",
        ));
    }
    let p = beta0.len() / 2;
    let m = ModelFamily::new(family(model)?, p);
    let mut rng = RngStream::new(seed, 0);
    core_oracle_value(&m, &vector(beta0), draws, |r| draw_feature(p, r), &mut rng).map_err(err)
}

/// Wald interval and two-sided test of `estimate = null`, as a dict.
#[pyfunction]
#[pyo3(signature = (estimate, se, level = 0.95, null = 0.0, name = "theta"))]
fn wald<'py>(
    py: Python<'py>,
    estimate: f64,
    se: f64,
    level: f64,
    null: f64,
    name: &str,
) -> PyResult<Bound<'py, PyAny>> {
    to_python(py, &wald_row(name, estimate, se, level, null).map_err(err)?)
}

/// A stepwise online learner. Call `decide` for each context and `update`
/// with each reward; rewards must come back in decision order, but may lag.
#[pyclass]
struct Learner {
    inner: CoreLearner<ModelFamily>,
    pending: PendingBuffer,
    rng: RngStream,
}

#[pymethods]
impl Learner {
    #[new]
    #[pyo3(signature = (
        model, p, alpha = 0.5, gamma = 0.501, eps = "fixed:0.2", burn_in = 50,
        seed = 0, hessian = "exact", aipw = false
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        model: &str,
        p: usize,
        alpha: f64,
        gamma: f64,
        eps: &str,
        burn_in: usize,
        seed: u64,
        hessian: &str,
        aipw: bool,
    ) -> PyResult<Self> {
        let mut config = LearnerConfig::new(
            LearningSchedule::new(alpha, gamma).map_err(err)?,
            exploration(eps, burn_in)?,
        );
        config.hessian = hessian.parse::<HessianVariant>().map_err(err)?;
        config.aipw = aipw;
        Ok(Learner {
            inner: CoreLearner::new(ModelFamily::new(family(model)?, p), config),
            pending: PendingBuffer::default(),
            rng: RngStream::new(seed, 1),
        })
    }

    /// Samples an action for `x`. Returns `(step, action, propensity)`, where
    /// the propensity is the probability of action 1.
    fn decide(&mut self, x: Vec<f64>) -> PyResult<(usize, u8, f64)> {
        let record = self.inner.decide(vector(x), &mut self.rng).map_err(err)?;
        self.inner.commit(&record).map_err(err)?;
        let out = (record.step, record.action.index() as u8, record.pi);
        self.pending.push(record);
        Ok(out)
    }

    /// Feeds the reward for decision `step`.
    fn update(&mut self, step: usize, reward: f64) -> PyResult<()> {
        let record = self.pending.take(step).map_err(err)?;
        self.inner.update(&record, reward).map_err(err)?;
        Ok(())
    }

    #[getter]
    fn t(&self) -> usize {
        self.inner.state().t
    }

    #[getter]
    fn pending(&self) -> usize {
        self.pending.len()
    }

    #[getter]
    fn bar_beta(&self) -> Vec<f64> {
        self.inner.state().bar_beta.iter().copied().collect()
    }

    #[getter]
    fn cumulative_reward(&self) -> f64 {
        self.inner.cumulative_reward()
    }

    /// Inference report at the current update count: a dict with `t`, `rows`
    /// and `flags`.
    #[pyo3(signature = (level = 0.95, ridge = false))]
    fn report<'py>(&self, py: Python<'py>, level: f64, ridge: bool) -> PyResult<Bound<'py, PyAny>> {
        let report =
            build_report(&self.inner.snapshot(), &ReportOptions { level, ridge }).map_err(err)?;
        to_python(py, &report)
    }
}

/// Builds a configuration from an optional TOML file and keyword overrides
/// using the same keys.
fn config(
    py: Python<'_>,
    path: Option<PathBuf>,
    overrides: Option<&Bound<'_, PyDict>>,
) -> PyResult<ExperimentConfig> {
    let mut layer = match path {
        Some(p) => ConfigLayer::from_file(&p).map_err(err)?,
        None => ConfigLayer::default(),
    };
    if let Some(kw) = overrides {
        let text: String = py.import("json")?.call_method1("dumps", (kw,))?.extract()?;
        let extra: ConfigLayer = serde_json::from_str(&text)
            .map_err(|e| PyValueError::new_err(format!("invalid settings: {e}")))?;
        layer.merge(&extra);
    }
    ExperimentConfig::resolve(&layer).map_err(err)
}

/// One stream: reports at each checkpoint plus a trajectory summary.
#[pyfunction]
#[pyo3(signature = (config = None, **settings))]
fn run<'py>(
    py: Python<'py>,
    config: Option<PathBuf>,
    settings: Option<&Bound<'py, PyDict>>,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = self::config(py, config, settings)?;
    let result = py.detach(|| run_single(&cfg)).map_err(err)?;
    to_python(py, &result)
}

/// Monte Carlo replications summarized by ratio, coverage and length.
#[pyfunction]
#[pyo3(signature = (config = None, **settings))]
fn monte_carlo<'py>(
    py: Python<'py>,
    config: Option<PathBuf>,
    settings: Option<&Bound<'py, PyDict>>,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = self::config(py, config, settings)?;
    let summary = py.detach(|| run_monte_carlo(&cfg)).map_err(err)?;
    to_python(py, &summary)
}

/// Binned loss curves for each learning rate on the grid.
#[pyfunction(name = "tune_alpha")]
#[pyo3(signature = (config = None, **settings))]
fn tune<'py>(
    py: Python<'py>,
    config: Option<PathBuf>,
    settings: Option<&Bound<'py, PyDict>>,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = self::config(py, config, settings)?;
    let result = py.detach(|| tune_alpha(&cfg)).map_err(err)?;
    to_python(py, &result)
}

#[pymodule]
fn ipwsgd(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(mean_reward, m)?)?;
    m.add_function(wrap_pyfunction!(propensity, m)?)?;
    m.add_function(wrap_pyfunction!(learning_rate, m)?)?;
    m.add_function(wrap_pyfunction!(exploration_rate, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_value, m)?)?;
    m.add_function(wrap_pyfunction!(wald, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(monte_carlo, m)?)?;
    m.add_function(wrap_pyfunction!(tune, m)?)?;
    m.add_class::<Learner>()?;
    Ok(())
}
