//! Python bindings for `cic_core`.
//!
//! ```python
//! import cic_sampler as cs
//! res = cs.run_parabolic(b=1.5, seed=42)
//! print(res.rho_hat, res.k_history)
//! ```

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use cic_core::benchmark::{self, Method, ParabolicLimitState};
use cic_core::error::Error;
use cic_core::pipeline::{self, PipelineConfig, Problem};
use cic_core::{GmmParams, SpdMatrix, StreamSeed};

fn to_py(e: Error) -> PyErr {
    PyValueError::new_err(format!("{}: {}", e.name(), e))
}

/// Gaussian mixture with full covariances.
#[pyclass(name = "Gmm", module = "cic_sampler", frozen)]
struct PyGmm {
    inner: GmmParams,
}

#[pymethods]
impl PyGmm {
    /// `covs` are row-major nested lists, one `p x p` matrix per component.
    #[new]
    fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, covs: Vec<Vec<Vec<f64>>>) -> PyResult<Self> {
        let covs = covs.iter().map(|c| SpdMatrix::from_rows(c)).collect::<Result<Vec<_>, _>>().map_err(to_py)?;
        Ok(Self { inner: GmmParams::new(weights, means, covs).map_err(to_py)? })
    }

    #[staticmethod]
    fn from_json(s: &str) -> PyResult<Self> {
        Ok(Self { inner: GmmParams::from_json(s).map_err(to_py)? })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.inner.weights().to_vec()
    }

    #[getter]
    fn means(&self) -> Vec<Vec<f64>> {
        self.inner.means().to_vec()
    }

    #[getter]
    fn covs(&self) -> Vec<Vec<Vec<f64>>> {
        self.inner.covs().iter().map(|c| c.rows()).collect()
    }

    fn free_param_dimension(&self) -> usize {
        self.inner.free_param_dimension()
    }

    fn logpdf(&self, x: Vec<f64>) -> PyResult<f64> {
        self.inner.logpdf(&x).map_err(to_py)
    }

    /// Component responsibilities at `x`.
    fn responsibilities(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        cic_core::em::responsibilities(&self.inner, &x).map_err(to_py)
    }

    #[pyo3(signature = (n, seed=0))]
    fn sample(&self, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = StreamSeed::new(seed).rng();
        (0..n).map(|_| self.inner.sample(&mut rng)).collect()
    }

    fn __repr__(&self) -> String {
        format!("Gmm(k={}, dim={})", self.inner.k(), self.inner.dim())
    }
}

/// Failure region `b - x2 - kappa (x1 - e)^2 <= 0` under a bivariate standard normal.
#[pyclass(name = "LimitState", module = "cic_sampler", frozen)]
struct PyLimitState {
    inner: ParabolicLimitState,
}

#[pymethods]
impl PyLimitState {
    #[new]
    #[pyo3(signature = (b, kappa=0.1, e=0.0))]
    fn new(b: f64, kappa: f64, e: f64) -> PyResult<Self> {
        Ok(Self { inner: ParabolicLimitState::with_shape(b, kappa, e).map_err(to_py)? })
    }

    fn g(&self, x: [f64; 2]) -> f64 {
        self.inner.g(&x)
    }

    fn fails(&self, x: [f64; 2]) -> bool {
        self.inner.fails(&x)
    }

    /// Failure probability by quadrature.
    fn true_rho(&self) -> f64 {
        benchmark::true_rho_oracle(&self.inner)
    }

    #[pyo3(signature = (n, seed=0))]
    fn cmc(&self, n: usize, seed: u64) -> PyResult<f64> {
        if n == 0 {
            return Err(PyValueError::new_err("n must be positive"));
        }
        Ok(benchmark::run_cmc(&self.inner, n, &mut StreamSeed::new(seed).rng()))
    }
}

/// Outcome of one adaptive sampling run.
#[pyclass(name = "PipelineResult", module = "cic_sampler", frozen)]
struct PyPipelineResult {
    inner: pipeline::PipelineResult,
}

#[pymethods]
impl PyPipelineResult {
    #[getter]
    fn rho_hat(&self) -> f64 {
        self.inner.rho_hat_final
    }

    #[getter]
    fn k_history(&self) -> Vec<usize> {
        self.inner.k_history.clone()
    }

    #[getter]
    fn final_params(&self) -> PyGmm {
        PyGmm { inner: self.inner.final_params.clone() }
    }

    /// `(t, k, d, status, cbar, rho_hat, cic, chosen)` per grid entry.
    fn trace(&self) -> Vec<(usize, usize, usize, String, f64, f64, f64, bool)> {
        self.inner
            .traces
            .iter()
            .enumerate()
            .flat_map(|(i, tr)| cic_core::cic::trace_rows(i + 1, tr))
            .map(|r| (r.t, r.k, r.d, r.status, r.cbar, r.rho_hat, r.cic, r.chosen == 1))
            .collect()
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }
}

fn config(tau: usize, batch_size: usize, final_batch_size: usize, seed: u64) -> PipelineConfig {
    PipelineConfig::new(tau, batch_size, final_batch_size, seed)
}

/// Runs the adaptive sampler on the parabolic limit state.
#[pyfunction]
#[pyo3(signature = (b, seed=0, tau=7, batch_size=1000, final_batch_size=1700, kappa=0.1, e=0.0))]
fn run_parabolic(
    py: Python<'_>,
    b: f64,
    seed: u64,
    tau: usize,
    batch_size: usize,
    final_batch_size: usize,
    kappa: f64,
    e: f64,
) -> PyResult<PyPipelineResult> {
    let ls = ParabolicLimitState::with_shape(b, kappa, e).map_err(to_py)?;
    let cfg = config(tau, batch_size, final_batch_size, seed);
    let res = py.detach(|| pipeline::run_cic_is(&benchmark::make_problem(&ls), &cfg)).map_err(to_py)?;
    Ok(PyPipelineResult { inner: res })
}

/// Runs the adaptive sampler on a user target given as `log_r(x: list[float]) -> float`.
#[pyfunction]
#[pyo3(signature = (log_r, dim, seed=0, tau=7, batch_size=1000, final_batch_size=1700))]
fn run_cic_is(
    log_r: Py<PyAny>,
    dim: usize,
    seed: u64,
    tau: usize,
    batch_size: usize,
    final_batch_size: usize,
) -> PyResult<PyPipelineResult> {
    let failure: std::sync::Arc<std::sync::Mutex<Option<PyErr>>> = Default::default();
    let slot = failure.clone();
    let problem = Problem::new(dim, "python callable", move |x| {
        Python::attach(|py| match log_r.call1(py, (x.to_vec(),)).and_then(|v| v.extract::<f64>(py)) {
            Ok(v) if v.is_nan() => f64::NEG_INFINITY,
            Ok(v) => v,
            Err(err) => {
                slot.lock().unwrap().get_or_insert(err);
                f64::NEG_INFINITY
            }
        })
    });
    let res = pipeline::run_cic_is(&problem, &config(tau, batch_size, final_batch_size, seed));
    if let Some(err) = failure.lock().unwrap().take() {
        return Err(err);
    }
    Ok(PyPipelineResult { inner: res.map_err(to_py)? })
}

/// Repeats CIC-IS and the fixed-order baseline and returns one dict per method.
#[pyfunction]
#[pyo3(signature = (b, repetitions=500, seed=0, methods=vec!["cic-is".to_string(), "ce-ais-gm".to_string()], tau=7, batch_size=1000, final_batch_size=1700))]
fn benchmark_parabolic<'py>(
    py: Python<'py>,
    b: f64,
    repetitions: usize,
    seed: u64,
    methods: Vec<String>,
    tau: usize,
    batch_size: usize,
    final_batch_size: usize,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let methods = methods.iter().map(|m| m.parse::<Method>()).collect::<Result<Vec<_>, _>>().map_err(to_py)?;
    let ls = ParabolicLimitState::new(b);
    let cfg = config(tau, batch_size, final_batch_size, seed);
    let report = py.detach(|| benchmark::run_experiment(&ls, &methods, repetitions, seed, &cfg)).map_err(to_py)?;
    report
        .summaries
        .iter()
        .map(|s| {
            let d = PyDict::new(py);
            d.set_item("b", b)?;
            d.set_item("method", s.method.name())?;
            d.set_item("mean", s.mean)?;
            d.set_item("std_error", s.std_error)?;
            d.set_item("cmc_ratio", s.cmc_ratio)?;
            d.set_item("repetitions", s.repetitions)?;
            d.set_item("n_total", s.n_total)?;
            Ok(d)
        })
        .collect()
}

/// `cbar + rho_hat * d / total_n`.
#[pyfunction]
fn cic_value(cbar: f64, rho_hat: f64, d: usize, total_n: usize) -> f64 {
    cic_core::cic::cic_value(cbar, rho_hat, d, total_n)
}

/// Free parameters of a `k`-component full-covariance mixture in `p` dimensions.
#[pyfunction]
fn free_param_dimension(k: usize, p: usize) -> usize {
    cic_core::gmm::free_param_dimension(k, p)
}

#[pymodule]
fn cic_sampler(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGmm>()?;
    m.add_class::<PyLimitState>()?;
    m.add_class::<PyPipelineResult>()?;
    m.add_function(wrap_pyfunction!(run_parabolic, m)?)?;
    m.add_function(wrap_pyfunction!(run_cic_is, m)?)?;
    m.add_function(wrap_pyfunction!(benchmark_parabolic, m)?)?;
    m.add_function(wrap_pyfunction!(cic_value, m)?)?;
    m.add_function(wrap_pyfunction!(free_param_dimension, m)?)?;
    Ok(())
}
