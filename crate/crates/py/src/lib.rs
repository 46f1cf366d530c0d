//! Python bindings. Vectors cross the boundary as lists of floats and reports
//! come back as plain dicts.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyList;

use byzsim_core::aggregators::{self, AggregatorConfig, AggregatorKind};
use byzsim_core::attacks;
use byzsim_core::bucketing;
use byzsim_core::certify::{certify_aggregator, CertifyConfig};
use byzsim_core::harness::{self, ExperimentConfig};
use byzsim_core::rng::{Purpose, SeededRng};
use byzsim_core::{Error, ParamVector};

fn py_err(e: Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn vectors(rows: Vec<Vec<f64>>) -> PyResult<Vec<ParamVector>> {
    rows.into_iter()
        .map(|r| ParamVector::new(r).map_err(py_err))
        .collect()
}

fn rows(vs: Vec<ParamVector>) -> Vec<Vec<f64>> {
    vs.into_iter().map(|v| v.as_slice().to_vec()).collect()
}

/// Serializes through JSON so reports become ordinary Python objects.
fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Aggregates `msgs` with the named rule after `s`-bucketing.
#[pyfunction]
#[pyo3(signature = (msgs, kind, q=0, s=1, seed=0, center=None, clip_radius=None, iters=aggregators::DEFAULT_WEISZFELD_ITERS, smoothing=aggregators::DEFAULT_WEISZFELD_SMOOTHING))]
#[allow(clippy::too_many_arguments)]
fn aggregate(
    msgs: Vec<Vec<f64>>,
    kind: &str,
    q: usize,
    s: usize,
    seed: u64,
    center: Option<Vec<f64>>,
    clip_radius: Option<f64>,
    iters: usize,
    smoothing: f64,
) -> PyResult<Vec<f64>> {
    let kind: AggregatorKind = kind.parse().map_err(py_err)?;
    let cfg = AggregatorConfig {
        weiszfeld_iters: iters,
        weiszfeld_smoothing: smoothing,
        clip_radius,
        ..AggregatorConfig::new(kind, q)
    };
    let msgs = vectors(msgs)?;
    let center = center.map(ParamVector::new).transpose().map_err(py_err)?;
    let mut rng = SeededRng::new(seed).stream(Purpose::Bucketing, 0, 0);
    let out =
        bucketing::robust_aggregate(&msgs, s, &cfg, &mut rng, center.as_ref()).map_err(py_err)?;
    Ok(out.as_slice().to_vec())
}

/// Random partition of `n` worker indices into buckets of at most `s`.
#[pyfunction]
#[pyo3(signature = (n, s, seed=0))]
fn bucket_plan(n: usize, s: usize, seed: u64) -> PyResult<Vec<Vec<usize>>> {
    let mut rng = SeededRng::new(seed).stream(Purpose::Bucketing, 0, 0);
    let plan = bucketing::make_plan(n, s, &mut rng).map_err(py_err)?;
    Ok(plan.buckets().map(<[usize]>::to_vec).collect())
}

#[pyfunction]
#[pyo3(signature = (delta, delta_max, s_cap=5))]
fn choose_s(delta: f64, delta_max: f64, s_cap: usize) -> usize {
    bucketing::choose_s(delta, delta_max, s_cap)
}

#[pyfunction]
fn alie_z(n: usize, q: usize) -> PyResult<f64> {
    attacks::alie_z(n, q).map_err(py_err)
}

/// Messages sent by `q` attackers given the good messages.
///
/// `mimic` copies good message `target`; `alie` uses `n = len(good) + q`.
#[pyfunction]
#[pyo3(signature = (kind, good, q, epsilon=0.1, target=0, z=None))]
fn attack(
    kind: &str,
    good: Vec<Vec<f64>>,
    q: usize,
    epsilon: f64,
    target: usize,
    z: Option<f64>,
) -> PyResult<Vec<Vec<f64>>> {
    let good = vectors(good)?;
    let out = match kind {
        "bit_flip" | "bitflip" => attacks::attack_bit_flip(&good, q),
        "ipm" => attacks::attack_ipm(&good, epsilon, q),
        "alie" => attacks::attack_alie(&good, good.len() + q, q, z),
        "mimic" => attacks::attack_mimic(&good, target, q),
        other => Err(Error::InvalidParameter(format!(
            "attack '{other}' needs training state; use run() instead"
        ))),
    }
    .map_err(py_err)?;
    Ok(rows(out))
}

/// Monte-Carlo check of an aggregator's robustness constants.
#[pyfunction]
#[pyo3(signature = (kind, s=None, delta=0.1, workers=20, dim=10, trials=1000, seed=0))]
#[allow(clippy::too_many_arguments)]
fn certify<'py>(
    py: Python<'py>,
    kind: &str,
    s: Option<usize>,
    delta: f64,
    workers: usize,
    dim: usize,
    trials: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let report = certify_aggregator(&CertifyConfig {
        aggregator: kind.parse().map_err(py_err)?,
        bucket_size: s,
        delta,
        workers,
        dim,
        trials,
        seed,
        ..CertifyConfig::default()
    })
    .map_err(py_err)?;
    to_py(py, &report)
}

/// How bucketing shrinks the spread of i.i.d. Gaussian inputs.
#[pyfunction]
#[pyo3(signature = (n, s, delta=0.125, dim=10, trials=1000, seed=0))]
fn lemma1<'py>(
    py: Python<'py>,
    n: usize,
    s: usize,
    delta: f64,
    dim: usize,
    trials: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let report = bucketing::lemma1_gaussian(n, s, delta, dim, trials, seed).map_err(py_err)?;
    to_py(py, &report)
}

#[pyfunction]
fn preset_names() -> Vec<&'static str> {
    harness::PRESET_NAMES.to_vec()
}

/// An experiment config: task, trainer and seeds.
#[pyclass(name = "Config")]
struct PyConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: ExperimentConfig::from_toml(text).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: ExperimentConfig::load(&path).map_err(py_err)?,
        })
    }

    /// Expanded configs of a named experiment set.
    #[staticmethod]
    fn preset(name: &str) -> PyResult<Vec<Self>> {
        let cfgs = harness::preset(name).map_err(py_err)?;
        Ok(cfgs.into_iter().map(|inner| Self { inner }).collect())
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml().map_err(py_err)
    }

    /// Returns a copy with `key=value` overrides applied.
    fn with_overrides(&self, overrides: Vec<String>) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.with_overrides(&overrides).map_err(py_err)?,
        })
    }

    #[getter]
    fn name(&self) -> &str {
        &self.inner.name
    }

    #[getter]
    fn seeds(&self) -> Vec<u64> {
        self.inner.seeds.clone()
    }

    /// Trains one seed and returns `{"summary": ..., "metrics": [...]}`.
    ///
    /// The GIL is released while training.
    #[pyo3(signature = (seed=None))]
    fn run<'py>(&self, py: Python<'py>, seed: Option<u64>) -> PyResult<Bound<'py, PyAny>> {
        let seed = seed
            .or_else(|| self.inner.seeds.first().copied())
            .unwrap_or(0);
        let cfg = self.inner.clone();
        let outcome = py
            .detach(move || harness::run_single(&cfg, seed))
            .map_err(py_err)?;
        let out = pyo3::types::PyDict::new(py);
        out.set_item("summary", to_py(py, &outcome.summary)?)?;
        out.set_item("metrics", to_py(py, &outcome.metrics.records)?)?;
        let x = outcome.final_x.map(|v| v.as_slice().to_vec());
        out.set_item("final_x", x.map(|v| PyList::new(py, v)).transpose()?)?;
        Ok(out.into_any())
    }

    /// Runs every seed and writes metrics CSV and JSON files into `out_dir`.
    fn run_to(&self, py: Python<'_>, out_dir: std::path::PathBuf) -> PyResult<Vec<String>> {
        let cfg = self.inner.clone();
        let outcomes = py
            .detach(move || harness::run_experiment(&cfg, &out_dir))
            .map_err(py_err)?;
        Ok(outcomes.into_iter().map(|o| o.summary.run_id).collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Config(name={:?}, seeds={:?})",
            self.inner.name, self.inner.seeds
        )
    }
}

#[pymodule]
fn byzsim(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(aggregate, m)?)?;
    m.add_function(wrap_pyfunction!(bucket_plan, m)?)?;
    m.add_function(wrap_pyfunction!(choose_s, m)?)?;
    m.add_function(wrap_pyfunction!(alie_z, m)?)?;
    m.add_function(wrap_pyfunction!(attack, m)?)?;
    m.add_function(wrap_pyfunction!(certify, m)?)?;
    m.add_function(wrap_pyfunction!(lemma1, m)?)?;
    m.add_function(wrap_pyfunction!(preset_names, m)?)?;
    m.add_class::<PyConfig>()?;
    Ok(())
}
