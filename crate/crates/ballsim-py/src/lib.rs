//! Python bindings: load states, process specs, simulation, exact oracles and invariant suites.
//! Structured results come back as plain dicts and lists.

use ballsim::coupling;
use ballsim::framework;
use ballsim::harness::{self, ExperimentSpec, Suite, VerifyOptions};
use ballsim::oracle;
use ballsim::process::{self, parse_ratio, ProcessConfig, ProcessState, TraceMode};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde_json::Value;

fn err(e: ballsim::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match (n.as_i64(), n.as_f64()) {
            (Some(i), _) => i.into_pyobject(py)?.into_any(),
            (None, Some(f)) => f.into_pyobject(py)?.into_any(),
            _ => n.to_string().into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(to_py(py, item)?)?;
            }
            list.into_any()
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, item) in map {
                dict.set_item(k, to_py(py, item)?)?;
            }
            dict.into_any()
        }
    })
}

fn serialized<'py, T: serde::Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let value = serde_json::to_value(v).map_err(|e| PyValueError::new_err(e.to_string()))?;
    to_py(py, &value)
}

fn config(spec: &str) -> PyResult<ProcessConfig> {
    spec.parse().map_err(err)
}

/// Bin loads with exact normalized quantities.
#[pyclass(name = "LoadState", frozen)]
struct PyLoadState {
    inner: ballsim::LoadState,
}

#[pymethods]
impl PyLoadState {
    #[new]
    fn new(loads: Vec<i64>) -> PyResult<Self> {
        Ok(PyLoadState { inner: ballsim::LoadState::from_loads(loads).map_err(err)? })
    }

    #[staticmethod]
    fn empty(n: usize) -> PyResult<Self> {
        Ok(PyLoadState { inner: ballsim::LoadState::new(n).map_err(err)? })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn total(&self) -> i64 {
        self.inner.total()
    }

    #[getter]
    fn loads(&self) -> Vec<i64> {
        self.inner.loads().to_vec()
    }

    /// `max load - W / n` as `(numerator, denominator)`.
    fn gap(&self) -> (i64, i64) {
        let g = self.inner.gap();
        (*g.numer(), *g.denom())
    }

    /// Fraction of bins at or above the average, as `(numerator, denominator)`.
    fn quantile(&self) -> (i64, i64) {
        let q = self.inner.quantile();
        (*q.numer(), *q.denom())
    }

    /// `n x_i - W` for every bin.
    fn scaled(&self) -> Vec<i64> {
        self.inner.scaled_loads().z
    }

    #[pyo3(signature = (alpha, alpha_tilde = None))]
    fn potentials<'py>(&self, py: Python<'py>, alpha: f64, alpha_tilde: Option<f64>) -> PyResult<Bound<'py, PyAny>> {
        let at = alpha_tilde.unwrap_or(1.0 / (12.0 * self.inner.n() as f64));
        serialized(py, &self.inner.potentials(alpha, at).map_err(err)?)
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!("LoadState({:?})", self.inner.loads())
    }
}

/// Parsed process spec such as `"thinning:3"` or `"one-plus-beta:1/2"`.
#[pyclass(name = "Process", frozen)]
struct PyProcess {
    inner: ProcessConfig,
}

#[pymethods]
impl PyProcess {
    #[new]
    fn new(spec: &str) -> PyResult<Self> {
        Ok(PyProcess { inner: config(spec)? })
    }

    #[getter]
    fn single_ball(&self) -> bool {
        self.inner.single_ball()
    }

    #[getter]
    fn filling(&self) -> bool {
        self.inner.filling()
    }

    fn __str__(&self) -> String {
        self.inner.to_string()
    }

    fn __repr__(&self) -> String {
        format!("Process({:?})", self.inner.to_string())
    }
}

/// Runs `rounds` rounds from the empty state; returns the final state and the trace points.
#[pyfunction]
#[pyo3(signature = (process, n, rounds, seed = 0, trace = "final"))]
fn simulate<'py>(
    py: Python<'py>,
    process: &str,
    n: usize,
    rounds: u64,
    seed: u64,
    trace: &str,
) -> PyResult<(PyLoadState, Bound<'py, PyAny>)> {
    let mode: TraceMode = trace.parse().map_err(err)?;
    let (state, points) = process::simulate(&config(process)?, n, rounds, seed, mode).map_err(err)?;
    Ok((PyLoadState { inner: state.load }, serialized(py, &points)?))
}

/// One step from `state` with stream `(seed, rep)`; returns the new state and the event.
#[pyfunction]
#[pyo3(signature = (process, state, seed = 0, rep = 0, cache = None, round = 0))]
fn step<'py>(
    py: Python<'py>,
    process: &str,
    state: &PyLoadState,
    seed: u64,
    rep: u64,
    cache: Option<usize>,
    round: u64,
) -> PyResult<(PyLoadState, Bound<'py, PyAny>)> {
    let s = ProcessState { load: state.inner.clone(), cache, round };
    let (next, ev) = process::step(&config(process)?, &s, &mut process::stream(seed, rep)).map_err(err)?;
    Ok((PyLoadState { inner: next.load }, serialized(py, &ev)?))
}

/// Per-rank allocation probabilities as `(numerators, denominator)`.
#[pyfunction]
#[pyo3(signature = (process, state, cache = None, round = 0))]
fn distribution_vector(
    process: &str,
    state: &PyLoadState,
    cache: Option<usize>,
    round: u64,
) -> PyResult<(Vec<i128>, i128)> {
    let s = ProcessState { load: state.inner.clone(), cache, round };
    let p = framework::distribution_vector(&config(process)?, &s).map_err(err)?;
    Ok((p.numerators().to_vec(), p.denominator()))
}

/// Exact gap distribution after `m` balls, keyed by gap with probabilities as `"p/q"` strings.
#[pyfunction]
fn exact_gap_distribution<'py>(py: Python<'py>, process: &str, n: usize, m: i64) -> PyResult<Bound<'py, PyAny>> {
    serialized(py, &oracle::exact_gap_distribution(&config(process)?, n, m).map_err(err)?)
}

/// Final-gap histogram over `reps` seeded runs of `balls` balls.
#[pyfunction]
#[pyo3(signature = (process, n, balls, reps = 1, seed = 0, threads = 0))]
fn gapdist<'py>(
    py: Python<'py>,
    process: &str,
    n: usize,
    balls: i64,
    reps: u64,
    seed: u64,
    threads: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let mut spec = ExperimentSpec::with_balls(config(process)?, n, balls);
    spec.reps = reps;
    spec.seed = seed;
    let h = py.detach(|| harness::gapdist(&spec, threads)).map_err(err)?;
    serialized(py, &h)
}

/// Runs an invariant suite: framework, drift, counterexamples, couplings or caching2step.
#[pyfunction]
#[pyo3(signature = (suite, n = None, cases = None, balls = None, seed = 0, threads = 0))]
fn verify<'py>(
    py: Python<'py>,
    suite: &str,
    n: Option<usize>,
    cases: Option<u64>,
    balls: Option<i64>,
    seed: u64,
    threads: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let suite: Suite = suite.parse().map_err(err)?;
    let options = VerifyOptions { n, cases, m: balls, seed, alpha: None, eps: None };
    let report = py.detach(|| harness::verify(suite, &options, threads)).map_err(err)?;
    serialized(py, &report)
}

/// Expected change of the one-sided and two-sided exponential potentials on the two adversarial states.
#[pyfunction]
#[pyo3(signature = (n, alpha = 0.5))]
fn counterexamples<'py>(py: Python<'py>, n: usize, alpha: f64) -> PyResult<Bound<'py, PyAny>> {
    let (b1, b2) = oracle::verify_counterexamples(n, alpha).map_err(err)?;
    serialized(py, &serde_json::json!({ "b1": b1, "b2": b2 }))
}

/// Coupled Thinning runs with thresholds 0 and `f` on shared samples.
#[pyfunction]
#[pyo3(signature = (n, m, f, seed = 0))]
fn coupled_thinning<'py>(py: Python<'py>, n: usize, m: u64, f: i64, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    serialized(py, &coupling::coupled_thinning_summary(n, m, f, seed).map_err(err)?)
}

/// Whether the `(1+eta)`-MeanThinning vector with `eta = beta` majorizes the `(1+beta)` vector
/// at every quantile for `n` bins.
#[pyfunction]
fn beta_eta_prefix_check(n: usize, beta: &str) -> PyResult<bool> {
    let beta = parse_ratio(beta).map_err(err)?;
    Ok(coupling::beta_eta_prefix_check(n, beta).map_err(err)?.holds)
}

#[pymodule]
fn ballsim_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyLoadState>()?;
    m.add_class::<PyProcess>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(step, m)?)?;
    m.add_function(wrap_pyfunction!(distribution_vector, m)?)?;
    m.add_function(wrap_pyfunction!(exact_gap_distribution, m)?)?;
    m.add_function(wrap_pyfunction!(gapdist, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(counterexamples, m)?)?;
    m.add_function(wrap_pyfunction!(coupled_thinning, m)?)?;
    m.add_function(wrap_pyfunction!(beta_eta_prefix_check, m)?)?;
    Ok(())
}
