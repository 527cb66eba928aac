//! Python bindings. Structured inputs (emission laws, events, configs) are
//! accepted as plain dicts and lists; structured outputs come back as dicts.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyModule;
use serde::de::DeserializeOwned;
use serde::Serialize;

use regime_clt::clt::{self, ConvergenceConfig};
use regime_clt::independence::{IndependenceLab, Method, RectEvent};
use regime_clt::runner::{self, Overrides, RunError};
use regime_clt::{EmissionSpec, Initial, SeedRecord};

create_exception!(regime_clt_py, ConfigInvalid, PyValueError);
create_exception!(regime_clt_py, BoundViolated, PyRuntimeError);

fn value_err(e: regime_clt::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn run_err(e: RunError) -> PyErr {
    match e {
        RunError::ConfigInvalid(m) => ConfigInvalid::new_err(m),
        RunError::BoundViolated(m) => BoundViolated::new_err(m),
        RunError::Internal(m) => PyRuntimeError::new_err(m),
    }
}

/// Python object -> Rust value through JSON.
fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let json = obj.py().import("json")?;
    let text: String = json.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Rust value -> Python object through JSON.
fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

#[pyclass(name = "TransitionMatrix", module = "regime_clt_py", from_py_object)]
#[derive(Clone)]
struct PyTransitionMatrix {
    inner: regime_clt::TransitionMatrix,
}

#[pymethods]
impl PyTransitionMatrix {
    #[new]
    fn new(rows: Vec<Vec<f64>>) -> PyResult<Self> {
        let inner = regime_clt::TransitionMatrix::new(rows).map_err(value_err)?;
        Ok(PyTransitionMatrix { inner })
    }

    #[getter]
    fn n_states(&self) -> usize {
        self.inner.n_states()
    }

    fn rows(&self) -> Vec<Vec<f64>> {
        self.inner.rows()
    }

    fn n_step(&self, s: usize) -> PyResult<Self> {
        let inner = self.inner.n_step(s).map_err(value_err)?;
        Ok(PyTransitionMatrix { inner })
    }

    fn stationary(&self) -> PyResult<Vec<f64>> {
        Ok(self.inner.stationary_distribution().map_err(value_err)?.into_vec())
    }

    fn slem(&self) -> f64 {
        self.inner.slem()
    }

    fn is_ergodic<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.is_ergodic())
    }

    /// Dict with `alpha`, `c`, `stationary` and per-step `gaps`.
    #[pyo3(signature = (s_max = 50))]
    fn mixing_rate<'py>(&self, py: Python<'py>, s_max: usize) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.mixing_rate(s_max).map_err(value_err)?)
    }

    fn __repr__(&self) -> String {
        format!("TransitionMatrix({:?})", self.inner.rows())
    }
}

#[pyclass(name = "Model", module = "regime_clt_py", from_py_object)]
#[derive(Clone)]
struct PyModel {
    inner: regime_clt::ModelSpec,
}

#[pymethods]
impl PyModel {
    /// `emissions` is a list of dicts such as
    /// `{"family": "gaussian", "mu": 0.0, "sigma": 1.0}`; `initial` is
    /// `None` (stationary), a state index, or a probability list.
    #[new]
    #[pyo3(signature = (chain, emissions, initial = None))]
    fn new(chain: &PyTransitionMatrix, emissions: &Bound<'_, PyAny>, initial: Option<&Bound<'_, PyAny>>) -> PyResult<Self> {
        let laws: EmissionSpec = from_py(emissions)?;
        let initial = match initial {
            None => Initial::Stationary,
            Some(obj) => match obj.extract::<usize>() {
                Ok(j) => Initial::Fixed(j),
                Err(_) => Initial::Explicit(obj.extract()?),
            },
        };
        let inner = regime_clt::ModelSpec::new(chain.inner.clone(), laws, initial).map_err(value_err)?;
        Ok(PyModel { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(PyModel { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    #[getter]
    fn n_states(&self) -> usize {
        self.inner.n_states()
    }

    #[getter]
    fn chain(&self) -> PyTransitionMatrix {
        PyTransitionMatrix {
            inner: self.inner.chain().clone(),
        }
    }

    fn stationary(&self) -> PyResult<Vec<f64>> {
        Ok(self.inner.stationary().map_err(value_err)?.to_vec())
    }

    fn stationary_mean(&self) -> PyResult<f64> {
        self.inner.stationary_mean().map_err(value_err)
    }

    fn stationary_variance(&self) -> PyResult<f64> {
        self.inner.stationary_variance().map_err(value_err)
    }

    fn long_run_variance(&self) -> PyResult<f64> {
        self.inner.long_run_variance_exact().map_err(value_err)
    }

    /// `(states, observations)` of a path of length `n`.
    #[pyo3(signature = (n, seed, stream = 0))]
    fn sample_path(&self, py: Python<'_>, n: usize, seed: u64, stream: u64) -> PyResult<(Vec<usize>, Vec<f64>)> {
        let model = &self.inner;
        let path = py
            .detach(|| model.sample_path(n, SeedRecord::new(seed, stream)))
            .map_err(value_err)?;
        Ok((path.states, path.observations))
    }

    fn predictive_state_probs(&self, prefix: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.predictive_state_probs(&prefix).map_err(value_err)
    }

    fn conditional_density(&self, x: f64, prefix: Vec<f64>) -> PyResult<f64> {
        self.inner.conditional_density(x, &prefix).map_err(value_err)
    }

    fn __repr__(&self) -> String {
        format!("Model(n_states={})", self.inner.n_states())
    }
}

/// Exact `|P(X_{T+tau} in a | X_T in b) - P(X_{T+tau} in a)|` with bounds.
/// Events are dicts with optional `states`, `lo`, `hi`.
#[pyfunction]
fn conditional_gap<'py>(
    py: Python<'py>,
    model: &PyModel,
    a: &Bound<'py, PyAny>,
    b: &Bound<'py, PyAny>,
    tau: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let a: RectEvent = from_py(a)?;
    let b: RectEvent = from_py(b)?;
    let lab = IndependenceLab::new(&model.inner).map_err(value_err)?;
    to_py(py, &lab.conditional_gap_exact(&a, &b, tau).map_err(value_err)?)
}

/// Joint-minus-product gap of `len(events)` observations at the given lags.
#[pyfunction]
#[pyo3(signature = (model, events, lags, method = "exact", replicates = 0, seed = 0))]
fn joint_gap<'py>(
    py: Python<'py>,
    model: &PyModel,
    events: &Bound<'py, PyAny>,
    lags: Vec<usize>,
    method: &str,
    replicates: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let events: Vec<RectEvent> = from_py(events)?;
    let method = match method {
        "exact" => Method::Exact,
        "monte_carlo" => Method::MonteCarlo,
        other => return Err(PyValueError::new_err(format!("unknown method {other:?}"))),
    };
    let lab = IndependenceLab::new(&model.inner).map_err(value_err)?;
    let report = py
        .detach(|| lab.joint_product_gap(&events, &lags, method, replicates, seed))
        .map_err(value_err)?;
    to_py(py, &report)
}

#[pyfunction]
fn decompose<'py>(py: Python<'py>, n: usize, alpha_exp: f64, m: usize) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &clt::decompose(n, alpha_exp, m).map_err(value_err)?)
}

/// Convergence of normalised sums to N(0, 1). `config` is a dict with
/// `n_grid`, `replicates`, `t_grid` and optional `eta_grid`, `normalizer`.
#[pyfunction]
fn clt_convergence<'py>(
    py: Python<'py>,
    model: &PyModel,
    config: &Bound<'py, PyAny>,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let config: ConvergenceConfig = from_py(config)?;
    let model = &model.inner;
    let report = py
        .detach(|| clt::clt_convergence(model, &config, seed))
        .map_err(value_err)?;
    to_py(py, &report)
}

/// Runs a scenario file like `regime-clt run`; failed checks raise
/// `BoundViolated`.
#[pyfunction]
#[pyo3(signature = (scenario, out, seed = None, replicates = None, threads = None))]
fn run_scenario<'py>(
    py: Python<'py>,
    scenario: PathBuf,
    out: PathBuf,
    seed: Option<u64>,
    replicates: Option<usize>,
    threads: Option<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let overrides = Overrides { seed, replicates };
    let outcome = py
        .detach(|| runner::run(&scenario, &out, overrides, threads))
        .map_err(run_err)?;
    to_py(py, &outcome)
}

#[pymodule]
pub fn regime_clt_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTransitionMatrix>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(conditional_gap, m)?)?;
    m.add_function(wrap_pyfunction!(joint_gap, m)?)?;
    m.add_function(wrap_pyfunction!(decompose, m)?)?;
    m.add_function(wrap_pyfunction!(clt_convergence, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add("ConfigInvalid", m.py().get_type::<ConfigInvalid>())?;
    m.add("BoundViolated", m.py().get_type::<BoundViolated>())?;
    Ok(())
}
