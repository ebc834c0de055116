//! Python bindings. Matrices cross the boundary as lists of rows.

use ::flowci::citest::{self, Direction, TestConfig};
use ::flowci::depmeasure::{self, MeasureKind};
use ::flowci::flow::{self, FlowConfig};
use ::flowci::simlab::{self, SimModel, SimSpec, VelocityMode};
use ::flowci::{oracle, DataTriplet, Dims, Error, Matrix};
use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;

fn to_py(err: Error) -> PyErr {
    let msg = err.to_string();
    match err.root() {
        Error::Numeric { .. } | Error::Degenerate(_) => PyArithmeticError::new_err(msg),
        Error::Io { .. } => PyIOError::new_err(msg),
        _ => PyValueError::new_err(msg),
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Matrix> {
    Matrix::from_rows(&rows).map_err(to_py)
}

fn measure(name: &str) -> PyResult<MeasureKind> {
    name.parse().map_err(to_py)
}

#[pyfunction]
fn dcov2(u: Vec<Vec<f64>>, v: Vec<Vec<f64>>) -> PyResult<f64> {
    depmeasure::dcov2(&matrix(u)?, &matrix(v)?).map_err(to_py)
}

#[pyfunction]
fn dcorr2(u: Vec<Vec<f64>>, v: Vec<Vec<f64>>) -> PyResult<f64> {
    depmeasure::dcorr2(&matrix(u)?, &matrix(v)?).map_err(to_py)
}

#[pyfunction]
fn ipcov2(u: Vec<Vec<f64>>, v: Vec<Vec<f64>>) -> PyResult<f64> {
    depmeasure::ipcov2(&matrix(u)?, &matrix(v)?).map_err(to_py)
}

#[pyfunction]
fn ipcorr2(u: Vec<Vec<f64>>, v: Vec<Vec<f64>>) -> PyResult<f64> {
    depmeasure::ipcorr2(&matrix(u)?, &matrix(v)?).map_err(to_py)
}

/// Returns `(statistic, p_value)`.
#[pyfunction]
#[pyo3(signature = (u, v, permutations=100, measure="dc", seed=0))]
fn permutation_pvalue(
    py: Python<'_>,
    u: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    permutations: usize,
    measure: &str,
    seed: u64,
) -> PyResult<(f64, f64)> {
    let (u, v, kind) = (matrix(u)?, matrix(v)?, self::measure(measure)?);
    py.detach(|| citest::permutation_pvalue(&u, &v, permutations, kind, seed))
        .map_err(to_py)
}

#[pyfunction]
fn cauchy_combine(ps: Vec<f64>) -> PyResult<f64> {
    citest::cauchy_combine(&ps).map_err(to_py)
}

#[pyfunction]
fn gaussian_velocity(t: f64, x: f64, z: f64) -> f64 {
    oracle::gaussian_velocity(t, x, z)
}

#[pyfunction]
fn gaussian_transport(x: f64, z: f64) -> f64 {
    oracle::gaussian_transport(x, z)
}

/// Trained conditional velocity field.
#[pyclass(name = "VelocityNet", frozen)]
struct PyVelocityNet {
    inner: ::flowci::VelocityNet,
}

#[pymethods]
impl PyVelocityNet {
    /// Fits a velocity field for `side` given `cond` by flow matching.
    #[staticmethod]
    #[pyo3(signature = (side, cond, hidden=32, epochs=200, batch_size=128, learning_rate=1e-3, seed=0))]
    fn fit(
        py: Python<'_>,
        side: Vec<Vec<f64>>,
        cond: Vec<Vec<f64>>,
        hidden: usize,
        epochs: usize,
        batch_size: usize,
        learning_rate: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let (side, cond) = (matrix(side)?, matrix(cond)?);
        let cfg = FlowConfig {
            hidden,
            epochs,
            batch_size,
            learning_rate,
            seed,
            ..FlowConfig::default()
        };
        let inner = py.detach(|| flow::fit_velocity(&side, &cond, &cfg)).map_err(to_py)?;
        Ok(Self { inner })
    }

    fn velocity(&self, t: f64, state: Vec<Vec<f64>>, cond: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        self.inner
            .velocity(t, &matrix(state)?, &matrix(cond)?)
            .map(|m| m.to_rows())
            .map_err(to_py)
    }

    /// Latents of each row, integrating from t = 1 back to t = 0.
    #[pyo3(signature = (side, cond, steps=100))]
    fn transport(&self, side: Vec<Vec<f64>>, cond: Vec<Vec<f64>>, steps: usize) -> PyResult<Vec<Vec<f64>>> {
        flow::transport_rows(&self.inner, &matrix(side)?, &matrix(cond)?, steps)
            .map(|m| m.to_rows())
            .map_err(to_py)
    }

    #[getter]
    fn layer_dims(&self) -> [usize; 4] {
        self.inner.layer_dims()
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.inner.num_parameters()
    }
}

#[pyclass(name = "TestReport", frozen)]
struct PyTestReport {
    inner: citest::TestReport,
}

#[pymethods]
impl PyTestReport {
    #[getter]
    fn combined_p(&self) -> f64 {
        self.inner.combined_p
    }

    #[getter]
    fn p_values(&self) -> Vec<f64> {
        self.inner.p_values()
    }

    #[getter]
    fn statistics(&self) -> Vec<f64> {
        self.inner.statistics()
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n
    }

    #[getter]
    fn n2(&self) -> usize {
        self.inner.n2
    }

    #[pyo3(signature = (alpha=0.05))]
    fn rejects(&self, alpha: f64) -> bool {
        self.inner.rejects(alpha)
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn __repr__(&self) -> String {
        format!(
            "TestReport(n={}, n2={}, splits={}, combined_p={})",
            self.inner.n,
            self.inner.n2,
            self.inner.splits.len(),
            self.inner.combined_p
        )
    }
}

/// Tests `X` independent of `Y` given `Z`.
#[pyfunction]
#[pyo3(signature = (
    x, y, z, permutations=100, splits=1, n2=None, measure="dc", direction="dc1",
    hidden=32, steps=100, epochs=200, batch_size=128, learning_rate=1e-3, seed=0
))]
#[allow(clippy::too_many_arguments)]
fn flowcit(
    py: Python<'_>,
    x: Vec<Vec<f64>>,
    y: Vec<Vec<f64>>,
    z: Vec<Vec<f64>>,
    permutations: usize,
    splits: usize,
    n2: Option<usize>,
    measure: &str,
    direction: &str,
    hidden: usize,
    steps: usize,
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    seed: u64,
) -> PyResult<PyTestReport> {
    let data = DataTriplet::new(matrix(x)?, matrix(y)?, matrix(z)?).map_err(to_py)?;
    let cfg = TestConfig {
        permutations,
        n2,
        splits,
        measure: self::measure(measure)?,
        direction: direction.parse::<Direction>().map_err(to_py)?,
        flow: FlowConfig {
            hidden,
            steps,
            epochs,
            batch_size,
            learning_rate,
            ..FlowConfig::default()
        },
        seed,
    };
    let inner = py.detach(|| citest::flowcit(&data, &cfg)).map_err(to_py)?;
    Ok(PyTestReport { inner })
}

fn sim_spec(model: &str, setting: Option<u8>, psi: f64, n: Option<usize>, reps: usize, seed: u64) -> PyResult<SimSpec> {
    let model: SimModel = model.parse().map_err(to_py)?;
    let mut spec = SimSpec::new(model, setting, psi, reps, seed);
    if let Some(n) = n {
        spec.n = n;
    }
    Ok(spec)
}

/// One simulated `(x, y, z)` draw.
#[pyfunction]
#[pyo3(signature = (model, setting=None, psi=0.0, n=None, seed=0, dims=None))]
fn generate(
    model: &str,
    setting: Option<u8>,
    psi: f64,
    n: Option<usize>,
    seed: u64,
    dims: Option<(usize, usize, usize)>,
) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let mut spec = sim_spec(model, setting, psi, n, 1, seed)?;
    if let Some((x, y, z)) = dims {
        spec.dims = Dims::new(x, y, z);
    }
    let g = simlab::generate(&spec, seed).map_err(to_py)?;
    Ok((g.data.x().to_rows(), g.data.y().to_rows(), g.data.z().to_rows()))
}

/// Monte Carlo rejection rate; returns `(p_values, rejection_rate)`.
#[pyfunction]
#[pyo3(signature = (
    model, setting=None, psi=0.0, n=None, reps=200, seed=0, alpha=0.05, oracle=false,
    permutations=100, splits=None, measure="dc", direction="dc1", hidden=None, steps=100, epochs=200
))]
#[allow(clippy::too_many_arguments)]
fn simulate(
    py: Python<'_>,
    model: &str,
    setting: Option<u8>,
    psi: f64,
    n: Option<usize>,
    reps: usize,
    seed: u64,
    alpha: f64,
    oracle: bool,
    permutations: usize,
    splits: Option<usize>,
    measure: &str,
    direction: &str,
    hidden: Option<usize>,
    steps: usize,
    epochs: usize,
) -> PyResult<(Vec<f64>, f64)> {
    let spec = sim_spec(model, setting, psi, n, reps, seed)?;
    let cfg = TestConfig {
        permutations,
        splits: splits.unwrap_or(spec.model.default_splits()),
        measure: self::measure(measure)?,
        direction: direction.parse::<Direction>().map_err(to_py)?,
        flow: FlowConfig {
            hidden: hidden.unwrap_or(spec.model.default_width()),
            steps,
            epochs,
            ..FlowConfig::default()
        },
        ..TestConfig::default()
    };
    let mode = if oracle { VelocityMode::Oracle } else { VelocityMode::Learned };
    let res = py
        .detach(|| simlab::run_experiment(&spec, &cfg, alpha, mode))
        .map_err(to_py)?;
    Ok((res.p_values, res.rejection_rate))
}

#[pyfunction]
fn ks_statistic(ps: Vec<f64>) -> PyResult<f64> {
    simlab::ks_statistic(&ps).map_err(to_py)
}

#[pymodule]
fn flowci(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyVelocityNet>()?;
    m.add_class::<PyTestReport>()?;
    m.add_function(wrap_pyfunction!(dcov2, m)?)?;
    m.add_function(wrap_pyfunction!(dcorr2, m)?)?;
    m.add_function(wrap_pyfunction!(ipcov2, m)?)?;
    m.add_function(wrap_pyfunction!(ipcorr2, m)?)?;
    m.add_function(wrap_pyfunction!(permutation_pvalue, m)?)?;
    m.add_function(wrap_pyfunction!(cauchy_combine, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_velocity, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_transport, m)?)?;
    m.add_function(wrap_pyfunction!(flowcit, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(ks_statistic, m)?)?;
    Ok(())
}
