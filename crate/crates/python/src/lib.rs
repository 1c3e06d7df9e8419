//! Python bindings. Matrices are nested lists of rows of complex numbers,
//! states are lists of complex numbers.

use num_complex::Complex64;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use collapse_core::diffusion::{integrate_with, DiffusionModel, DiffusionOptions, Scheme};
use collapse_core::dilation::{build_dilation, Flavor};
use collapse_core::linalg::{outer, trace_distance, Operator, StateVector};
use collapse_core::master::{dyson_series, integrate_master};
use collapse_core::trajectory::{ensemble_average, evolve_state, sample_jumps, JumpRecord};
use collapse_core::verify::{run_all, Scale, VerifyConfig};
use collapse_core::zeno::{zeno_sweep, ZenoConfig};
use collapse_core::{Error, ModelSpec, ValidatedModel};

type Rows = Vec<Vec<Complex64>>;

fn err(e: Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_matrix(rows: &Rows) -> PyResult<Operator> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err(format!("matrix must be square with {n} rows of {n} entries")));
    }
    Ok(Operator::from_fn(n, n, |i, j| rows[i][j]))
}

fn from_matrix(m: &Operator) -> Rows {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

fn to_state(v: &[Complex64]) -> StateVector {
    StateVector::from_column_slice(v)
}

fn from_state(v: &StateVector) -> Vec<Complex64> {
    v.iter().copied().collect()
}

/// Validated model: Hamiltonian `h`, collapse `c` and/or rate `r`, intensity `lam`.
#[pyclass(name = "Model", frozen)]
struct PyModel {
    inner: ValidatedModel,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (h, lam, c=None, r=None))]
    fn new(h: Rows, lam: f64, c: Option<Rows>, r: Option<Rows>) -> PyResult<Self> {
        let spec = ModelSpec {
            h: to_matrix(&h)?,
            c: c.as_ref().map(to_matrix).transpose()?,
            r: r.as_ref().map(to_matrix).transpose()?,
            lambda: lam,
        };
        Ok(Self { inner: spec.validate().map_err(err)? })
    }

    /// Reads a model JSON file.
    #[staticmethod]
    fn from_json(path: &str) -> PyResult<Self> {
        let spec = ModelSpec::from_json_file(std::path::Path::new(path)).map_err(err)?;
        Ok(Self { inner: spec.validate().map_err(err)? })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn lam(&self) -> f64 {
        self.inner.lambda()
    }

    #[getter]
    fn collapse(&self) -> Rows {
        from_matrix(self.inner.collapse())
    }

    /// K = iH + λ(I − C).
    fn generator(&self) -> Rows {
        from_matrix(&self.inner.generator())
    }
}

/// Event times of a Poisson process of intensity `lam` on [0, t_max].
#[pyfunction]
fn jump_times(lam: f64, t_max: f64, seed: u64) -> PyResult<Vec<f64>> {
    Ok(sample_jumps(lam, t_max, seed).map_err(err)?.times)
}

/// Unnormalized state χ_t on `grid` for the given event times.
#[pyfunction]
fn trajectory(model: &PyModel, times: Vec<f64>, eta: Vec<Complex64>, grid: Vec<f64>) -> PyResult<Vec<Vec<Complex64>>> {
    let t_max = grid.last().copied().unwrap_or(0.0).max(times.last().map_or(0.0, |s| s + 1.0));
    let jumps = JumpRecord::from_times(model.inner.lambda(), t_max, times).map_err(err)?;
    let path = evolve_state(&model.inner, &jumps, &to_state(&eta), &grid).map_err(err)?;
    Ok(path.chi.iter().map(from_state).collect())
}

/// Ensemble mean density and survival probability over `n` trajectories.
#[pyfunction]
fn ensemble<'py>(
    py: Python<'py>,
    model: &PyModel,
    eta: Vec<Complex64>,
    n: usize,
    grid: Vec<f64>,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let ens = py.detach(|| ensemble_average(&model.inner, &to_state(&eta), n, &grid, seed)).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("grid", grid)?;
    out.set_item("q_bar", ens.q_bar)?;
    out.set_item("q_stderr", ens.q_stderr)?;
    out.set_item("rho_stderr", ens.rho_stderr)?;
    out.set_item("rho", ens.rho_bar.rho.iter().map(from_matrix).collect::<Vec<_>>())?;
    Ok(out)
}

/// Master-equation density matrices on `grid` starting from |η⟩⟨η|.
#[pyfunction]
fn master(model: &PyModel, eta: Vec<Complex64>, grid: Vec<f64>) -> PyResult<Vec<Rows>> {
    let path = integrate_master(&model.inner, &outer(&to_state(&eta)), &grid).map_err(err)?;
    Ok(path.rho.iter().map(from_matrix).collect())
}

/// Dyson series at time `t`; returns (ρ_t, order).
#[pyfunction]
#[pyo3(signature = (model, eta, t, tol=1e-12))]
fn dyson(model: &PyModel, eta: Vec<Complex64>, t: f64, tol: f64) -> PyResult<(Rows, usize)> {
    let res = dyson_series(&model.inner, &outer(&to_state(&eta)), t, tol).map_err(err)?;
    Ok((from_matrix(&res.rho), res.order))
}

/// Trace distance ½‖a − b‖₁.
#[pyfunction]
fn trace_dist(a: Rows, b: Rows) -> PyResult<f64> {
    Ok(trace_distance(&to_matrix(&a)?, &to_matrix(&b)?))
}

/// Unitary dilation of `c`; returns (S, ‖S†S − I‖).
#[pyfunction]
#[pyo3(signature = (c, flavor="hermitian"))]
fn dilation(c: Rows, flavor: &str) -> PyResult<(Rows, f64)> {
    let flavor = match flavor {
        "hermitian" => Flavor::Hermitian,
        "nonhermitian" => Flavor::NonHermitian,
        other => return Err(PyValueError::new_err(format!("unknown flavor {other:?}"))),
    };
    let s = build_dilation(&to_matrix(&c)?, flavor).map_err(err)?;
    Ok((from_matrix(s.matrix()), s.unitarity_residual()))
}

/// One Itô–Schrödinger path; returns (grid, states).
#[pyfunction]
#[pyo3(signature = (h, r, eta, dt, t_max, seed, scheme="euler-maruyama", record_every=1))]
#[allow(clippy::too_many_arguments)]
fn diffusion(
    h: Rows,
    r: Rows,
    eta: Vec<Complex64>,
    dt: f64,
    t_max: f64,
    seed: u64,
    scheme: &str,
    record_every: usize,
) -> PyResult<(Vec<f64>, Vec<Vec<Complex64>>)> {
    let scheme = match scheme {
        "euler-maruyama" => Scheme::EulerMaruyama,
        "milstein" => Scheme::Milstein,
        other => return Err(PyValueError::new_err(format!("unknown scheme {other:?}"))),
    };
    let dm = DiffusionModel::new(&to_matrix(&h)?, &to_matrix(&r)?).map_err(err)?;
    let options = DiffusionOptions { scheme, record_every, ..Default::default() };
    let path = integrate_with(&dm, &to_state(&eta), dt, t_max, seed, &options).map_err(err)?;
    Ok((path.grid, path.psi.iter().map(from_state).collect()))
}

/// λ-sweep rows as dicts; the last row (lambda None) is the diffusion limit.
#[pyfunction]
#[pyo3(signature = (h, r, lambdas, eta, n=10_000, n_diffusion=10_000, seed=4242))]
#[allow(clippy::too_many_arguments)]
fn zeno<'py>(
    py: Python<'py>,
    h: Rows,
    r: Rows,
    lambdas: Vec<f64>,
    eta: Vec<Complex64>,
    n: usize,
    n_diffusion: usize,
    seed: u64,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let (h, r) = (to_matrix(&h)?, to_matrix(&r)?);
    let config = ZenoConfig { n, n_diffusion, seed_base: seed, ..Default::default() };
    let rows = py.detach(|| zeno_sweep(&h, &r, &lambdas, &to_state(&eta), &config)).map_err(err)?;
    rows.iter()
        .map(|row| {
            let d = PyDict::new(py);
            d.set_item("lambda", row.lambda)?;
            d.set_item("sup_err_semigroup", row.sup_err_semigroup)?;
            d.set_item("trace_dist_semigroup", row.trace_dist_semigroup)?;
            d.set_item("trace_dist_diffusion", row.trace_dist_diffusion)?;
            d.set_item("side_condition_ok", row.side_condition_ok)?;
            Ok(d)
        })
        .collect()
}

/// Runs the verification suite on the built-in reference models; returns
/// (id, name, passed, detail) tuples.
#[pyfunction]
#[pyo3(signature = (quick=true))]
fn verify(py: Python<'_>, quick: bool) -> PyResult<Vec<(usize, String, bool, String)>> {
    let config = VerifyConfig { scale: if quick { Scale::Quick } else { Scale::Full }, ..Default::default() };
    let results = py.detach(|| run_all(&config)).map_err(err)?;
    Ok(results.into_iter().map(|r| (r.id, r.name.to_string(), r.passed, r.detail)).collect())
}

#[pymodule]
fn collapse(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(jump_times, m)?)?;
    m.add_function(wrap_pyfunction!(trajectory, m)?)?;
    m.add_function(wrap_pyfunction!(ensemble, m)?)?;
    m.add_function(wrap_pyfunction!(master, m)?)?;
    m.add_function(wrap_pyfunction!(dyson, m)?)?;
    m.add_function(wrap_pyfunction!(trace_dist, m)?)?;
    m.add_function(wrap_pyfunction!(dilation, m)?)?;
    m.add_function(wrap_pyfunction!(diffusion, m)?)?;
    m.add_function(wrap_pyfunction!(zeno, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
