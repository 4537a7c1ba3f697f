//! Python bindings for the `cmvsde` solver.

use pyo3::exceptions::{PyIOError, PyIndexError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use cmvsde::config::RunConfig;
use cmvsde::fixed_point::{self, FixedPointReport};
use cmvsde::grid::{sample_observation, IncrementLaw, SamplePath, TimeGrid};
use cmvsde::measures::{self, DiscreteMeasure, MeasurePath};
use cmvsde::oracles::{self, KalmanSpec, TreeInstance};
use cmvsde::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::IndexOutOfRange { .. } => PyIndexError::new_err(e.to_string()),
        Error::Io(_) => PyIOError::new_err(e.to_string()),
        Error::NonConvergence { .. } | Error::LevelExhausted { .. } | Error::NumericOverflow { .. } => {
            PyRuntimeError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse_law(law: &str) -> PyResult<IncrementLaw> {
    match law {
        "gaussian" => Ok(IncrementLaw::Gaussian),
        "rademacher" => Ok(IncrementLaw::Rademacher),
        other => Err(PyValueError::new_err(format!("unknown increment law `{other}`"))),
    }
}

fn load_config(config_json: &str, seed: Option<u64>) -> PyResult<RunConfig> {
    let mut cfg = RunConfig::from_json(config_json).map_err(py_err)?;
    if let Some(s) = seed {
        cfg.sim.master_seed = s;
    }
    Ok(cfg)
}

/// Uniform time grid on `[0, horizon]`.
#[pyclass(name = "TimeGrid", module = "pycmvsde", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyTimeGrid(TimeGrid);

#[pymethods]
impl PyTimeGrid {
    #[new]
    fn new(horizon: f64, n_steps: usize) -> PyResult<Self> {
        TimeGrid::new(horizon, n_steps).map(Self).map_err(py_err)
    }

    #[getter]
    fn horizon(&self) -> f64 {
        self.0.horizon()
    }

    #[getter]
    fn n_steps(&self) -> usize {
        self.0.n_steps()
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.0.dt()
    }

    fn times(&self) -> Vec<f64> {
        self.0.times()
    }

    fn __repr__(&self) -> String {
        format!("TimeGrid(horizon={}, n_steps={})", self.0.horizon(), self.0.n_steps())
    }
}

/// Weighted point masses on the real line.
#[pyclass(name = "DiscreteMeasure", module = "pycmvsde", frozen, from_py_object)]
#[derive(Clone)]
struct PyMeasure(DiscreteMeasure);

#[pymethods]
impl PyMeasure {
    /// Normalizes `weights` and merges duplicate atoms.
    #[new]
    #[pyo3(signature = (atoms, weights=None))]
    fn new(atoms: Vec<f64>, weights: Option<Vec<f64>>) -> PyResult<Self> {
        let m = match weights {
            Some(w) => DiscreteMeasure::normalize(atoms, w),
            None => DiscreteMeasure::empirical(&atoms),
        };
        m.map(Self).map_err(py_err)
    }

    #[staticmethod]
    fn dirac(x: f64) -> Self {
        Self(DiscreteMeasure::dirac(x))
    }

    #[getter]
    fn atoms(&self) -> Vec<f64> {
        self.0.atoms().to_vec()
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.0.weights().to_vec()
    }

    fn mean(&self) -> f64 {
        self.0.mean()
    }

    fn variance(&self) -> f64 {
        self.0.variance()
    }

    fn quantile(&self, q: f64) -> PyResult<f64> {
        self.0.quantile(q).map_err(py_err)
    }

    fn effective_sample_size(&self) -> f64 {
        self.0.effective_sample_size()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __repr__(&self) -> String {
        format!("DiscreteMeasure(n_atoms={}, mean={})", self.0.len(), self.0.mean())
    }
}

/// One measure per grid node.
#[pyclass(name = "MeasurePath", module = "pycmvsde", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyMeasurePath(MeasurePath);

#[pymethods]
impl PyMeasurePath {
    #[new]
    fn new(grid: &PyTimeGrid, measures: Vec<PyMeasure>) -> PyResult<Self> {
        let ms = measures.into_iter().map(|m| m.0).collect();
        MeasurePath::new(grid.0, ms).map(Self).map_err(py_err)
    }

    #[staticmethod]
    fn constant(grid: &PyTimeGrid, mu: &PyMeasure) -> Self {
        Self(MeasurePath::constant(grid.0, mu.0.clone()))
    }

    #[getter]
    fn grid(&self) -> PyTimeGrid {
        PyTimeGrid(*self.0.grid())
    }

    fn at(&self, node: usize) -> PyResult<PyMeasure> {
        let n = self.0.grid().n_steps();
        if node > n {
            return Err(py_err(Error::IndexOutOfRange { index: node, max: n }));
        }
        Ok(PyMeasure(self.0.at(node).clone()))
    }

    fn means(&self) -> Vec<f64> {
        self.0.means()
    }

    /// JSON lines, one measure per node.
    fn to_jsonl(&self) -> PyResult<String> {
        cmvsde::io::measure_path_jsonl(&self.0, None).map_err(py_err)
    }

    #[staticmethod]
    fn from_jsonl(text: &str) -> PyResult<Self> {
        match cmvsde::io::parse_measure_file(text).map_err(py_err)? {
            cmvsde::io::MeasureFile::Path(p) => Ok(Self(p)),
            cmvsde::io::MeasureFile::Measure(_) => Err(PyValueError::new_err("expected a measure path")),
        }
    }

    fn __len__(&self) -> usize {
        self.0.measures().len()
    }
}

/// Outcome of the localized Picard iteration.
#[pyclass(name = "FixedPointResult", module = "pycmvsde", frozen)]
struct PyFixedPoint(FixedPointReport);

#[pymethods]
impl PyFixedPoint {
    #[getter]
    fn converged(&self) -> bool {
        self.0.converged
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.0.total_iterations()
    }

    #[getter]
    fn tau_ladder(&self) -> Vec<usize> {
        self.0.tau_ladder()
    }

    #[getter]
    fn distances(&self) -> Vec<f64> {
        self.0.distances()
    }

    #[getter]
    fn path(&self) -> PyMeasurePath {
        PyMeasurePath(self.0.final_path.clone())
    }

    /// The full report as JSON.
    fn to_json(&self) -> PyResult<String> {
        cmvsde::io::to_json_string(&self.0, false).map_err(py_err)
    }
}

/// Exact W1 distance between two discrete measures.
#[pyfunction]
fn w1(mu: &PyMeasure, nu: &PyMeasure) -> f64 {
    measures::exact_w1(&mu.0, &nu.0)
}

/// W1 by midpoint quadrature of the cdf difference.
#[pyfunction]
#[pyo3(signature = (mu, nu, resolution=100_000))]
fn cdf_w1(mu: &PyMeasure, nu: &PyMeasure, resolution: usize) -> f64 {
    oracles::cdf_integral_w1(&mu.0, &nu.0, resolution)
}

/// Largest nodewise W1 distance over nodes `0..=up_to` (default: all).
#[pyfunction]
#[pyo3(signature = (a, b, up_to=None))]
fn sup_w1(a: &PyMeasurePath, b: &PyMeasurePath, up_to: Option<usize>) -> PyResult<f64> {
    let n = up_to.unwrap_or(a.0.grid().n_steps());
    measures::sup_w1_path(&a.0, &b.0, n).map_err(py_err)
}

/// Observation path values drawn from `seed`.
#[pyfunction]
#[pyo3(signature = (grid, seed, law="gaussian"))]
fn sample_observation_path(grid: &PyTimeGrid, seed: u64, law: &str) -> PyResult<Vec<f64>> {
    Ok(sample_observation(&grid.0, parse_law(law)?, seed).into_values())
}

/// Solves the run described by a JSON configuration.
#[pyfunction]
#[pyo3(signature = (config_json, seed=None, y=None))]
fn solve(py: Python<'_>, config_json: &str, seed: Option<u64>, y: Option<Vec<f64>>) -> PyResult<PyFixedPoint> {
    let cfg = load_config(config_json, seed)?;
    let grid = cfg.time_grid().map_err(py_err)?;
    let y_path = match y {
        Some(v) => SamplePath::new(grid, v).map_err(py_err)?,
        None => cfg.observation_path(None).map_err(py_err)?,
    };
    let ctx = cfg.context(y_path).map_err(py_err)?;
    let mu0 = cfg.initial_path().map_err(py_err)?;
    let report = py
        .detach(|| fixed_point::solve(&ctx, &mu0, &cfg.localization, cfg.fixed_point.tol, cfg.fixed_point.max_iter))
        .map_err(py_err)?;
    Ok(PyFixedPoint(report))
}

/// Exact fixed point on the Rademacher tree for the configured scenario.
#[pyfunction]
#[pyo3(signature = (config_json, y=None))]
fn tree_fixed_point(config_json: &str, y: Option<Vec<f64>>) -> PyResult<PyMeasurePath> {
    let cfg = load_config(config_json, None)?;
    let grid = cfg.time_grid().map_err(py_err)?;
    let y_path = match y {
        Some(v) => SamplePath::new(grid, v).map_err(py_err)?,
        None => cfg.observation_path(None).map_err(py_err)?,
    };
    let inst = TreeInstance::new(cfg.coefficients().map_err(py_err)?, y_path).map_err(py_err)?;
    oracles::tree_fixed_point(&inst, cfg.fixed_point.tol, cfg.fixed_point.max_iter)
        .map(|fp| PyMeasurePath(fp.path))
        .map_err(py_err)
}

/// Kalman-Bucy posterior mean and variance along an observation path.
#[pyfunction]
#[pyo3(signature = (grid, y, sigma0=1.0, c=0.5, x0=0.0, p0=0.0))]
fn kalman_posterior(
    grid: &PyTimeGrid,
    y: Vec<f64>,
    sigma0: f64,
    c: f64,
    x0: f64,
    p0: f64,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let spec = KalmanSpec::new(sigma0, c, x0, p0).map_err(py_err)?;
    let y_path = SamplePath::new(grid.0, y).map_err(py_err)?;
    let (m, v) = oracles::kalman_posterior(&spec, &y_path).map_err(py_err)?;
    Ok((m.into_values(), v.into_values()))
}

#[pymodule]
fn pycmvsde(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTimeGrid>()?;
    m.add_class::<PyMeasure>()?;
    m.add_class::<PyMeasurePath>()?;
    m.add_class::<PyFixedPoint>()?;
    m.add_function(wrap_pyfunction!(w1, m)?)?;
    m.add_function(wrap_pyfunction!(cdf_w1, m)?)?;
    m.add_function(wrap_pyfunction!(sup_w1, m)?)?;
    m.add_function(wrap_pyfunction!(sample_observation_path, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(tree_fixed_point, m)?)?;
    m.add_function(wrap_pyfunction!(kalman_posterior, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
