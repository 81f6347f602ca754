//! Python module `triq_py`: norm heads, triangle fixing and experiment runs.
// pyo3 0.22 macros wrap returned errors in a same-type `From` conversion.
#![allow(clippy::useless_conversion)]

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use triq::axioms::{self, check_guarantees};
use triq::cli::{self, ExperimentConfig};
use triq::diffcore::Tensor;
use triq::metrics::DistanceMatrix;
use triq::nearness::{self, NearnessProblem, TriangleFixing};
use triq::norms::{load_model, save_model, Activation, DeepNormSpec, HeadSpec, NormModel, Pooling, WideNormSpec};

fn err(e: triq::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse<T: serde::de::DeserializeOwned>(what: &str, s: &str) -> PyResult<T> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| PyValueError::new_err(format!("unknown {what} '{s}'")))
}

fn matrix(rows: Vec<Vec<f64>>, symmetric: bool) -> PyResult<DistanceMatrix> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err("expected a square matrix"));
    }
    DistanceMatrix::new(n, n, rows.concat(), symmetric).map_err(err)
}

fn rows(m: &DistanceMatrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

/// A norm head with its parameters.
#[pyclass(name = "Norm", module = "triq_py")]
struct PyNorm {
    inner: NormModel,
}

impl PyNorm {
    fn build(spec: HeadSpec, seed: u64) -> PyResult<Self> {
        Ok(Self { inner: NormModel::new(spec, &mut ChaCha8Rng::seed_from_u64(seed)).map_err(err)? })
    }
}

#[pymethods]
impl PyNorm {
    /// Builds a head from its JSON architecture descriptor.
    #[new]
    #[pyo3(signature = (spec, seed = 0))]
    fn new(spec: &str, seed: u64) -> PyResult<Self> {
        let spec: HeadSpec = serde_json::from_str(spec).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Self::build(spec, seed)
    }

    #[staticmethod]
    #[pyo3(signature = (input_dim, widths, activation = "max_relu", pooling = "max_mean", seed = 0))]
    fn deep_norm(input_dim: usize, widths: Vec<usize>, activation: &str, pooling: &str, seed: u64) -> PyResult<Self> {
        let activation: Activation = parse("activation", activation)?;
        let pooling: Pooling = parse("pooling", pooling)?;
        Self::build(HeadSpec::DeepNorm(DeepNormSpec { input_dim, widths, activation, pooling }), seed)
    }

    #[staticmethod]
    #[pyo3(signature = (input_dim, components, component_dim, asymmetric = false, pooling = "max_mean", seed = 0))]
    fn wide_norm(
        input_dim: usize,
        components: usize,
        component_dim: usize,
        asymmetric: bool,
        pooling: &str,
        seed: u64,
    ) -> PyResult<Self> {
        let pooling: Pooling = parse("pooling", pooling)?;
        Self::build(HeadSpec::WideNorm(WideNormSpec { input_dim, components, component_dim, asymmetric, pooling }), seed)
    }

    #[staticmethod]
    #[pyo3(signature = (input_dim, rows, seed = 0))]
    fn mahalanobis(input_dim: usize, rows: usize, seed: u64) -> PyResult<Self> {
        Self::build(HeadSpec::Mahalanobis { input_dim, rows }, seed)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: load_model(&path).map_err(err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_model(&self.inner, &path).map_err(err)
    }

    /// The architecture as JSON.
    fn spec(&self) -> String {
        serde_json::to_string(self.inner.spec()).expect("specs always serialize")
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    fn __call__(&self, x: Vec<f64>) -> PyResult<f64> {
        self.inner.eval(&x).map_err(err)
    }

    /// Norms of each row.
    fn batch(&self, xs: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let d = self.inner.input_dim();
        if xs.iter().any(|r| r.len() != d) {
            return Err(PyValueError::new_err(format!("every row needs {d} entries")));
        }
        let z = Tensor::new(vec![xs.len(), d], xs.concat()).map_err(|e| PyValueError::new_err(e.to_string()))?;
        self.inner.eval_batch(&z).map_err(err)
    }

    /// Sampled checks of the axioms this architecture guarantees, as
    /// `{axiom: violations}`.
    #[pyo3(signature = (samples = 10_000, tol = axioms::DEFAULT_TOL, seed = 0))]
    fn check_axioms(&self, samples: usize, tol: f64, seed: u64) -> PyResult<Vec<(String, usize)>> {
        let reports = check_guarantees(&self.inner, self.inner.spec(), samples, tol, seed).map_err(err)?;
        Ok(reports.into_iter().map(|r| (r.axiom.to_string(), r.violations)).collect())
    }

    fn __repr__(&self) -> String {
        format!("Norm({})", self.inner.spec().label())
    }
}

/// Metric nearness by triangle fixing. Returns `(x, distortion, violations)`.
#[pyfunction]
#[pyo3(signature = (d, symmetric = true, max_iters = 400, tol = 1e-10))]
fn triangle_fix(d: Vec<Vec<f64>>, symmetric: bool, max_iters: usize, tol: f64) -> PyResult<(Vec<Vec<f64>>, f64, u64)> {
    let problem = NearnessProblem::new(matrix(d, symmetric)?, symmetric, 0).map_err(err)?;
    let sol = nearness::triangle_fix(&problem, TriangleFixing { max_iters, tol }).map_err(err)?;
    Ok((rows(&sol.x), sol.distortion, sol.violations))
}

#[pyfunction]
#[pyo3(signature = (m, tol = 1e-9))]
fn count_triangle_violations(m: Vec<Vec<f64>>, tol: f64) -> PyResult<u64> {
    axioms::count_triangle_violations(&matrix(m, false)?, tol).map_err(err)
}

/// Runs a TOML experiment config into `out` and returns the report as JSON.
#[pyfunction]
fn run_experiment(config: &str, out: PathBuf) -> PyResult<String> {
    let mut cfg = ExperimentConfig::from_toml(config).map_err(err)?;
    cfg.out = out;
    cfg.validate().map_err(err)?;
    let report = cli::run(&cfg).map_err(err)?;
    serde_json::to_string(&report).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pymodule]
fn triq_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyNorm>()?;
    m.add_function(wrap_pyfunction!(triangle_fix, m)?)?;
    m.add_function(wrap_pyfunction!(count_triangle_violations, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
