//! Python bindings: `import kslab`.

use kslab::correlator;
use kslab::ksop::{self, CellProblem};
use kslab::model::{self, ModelConfig, Profile};
use kslab::scenario::{self, ScenarioConfig};
use kslab::spectral;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

fn err(e: kslab::Error) -> PyErr {
    match e {
        kslab::Error::InvalidInput(_) | kslab::Error::Config(_) | kslab::Error::OutOfRange { .. } | kslab::Error::Json(_) => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn to_py(py: Python<'_>, v: &serde_json::Value) -> PyResult<PyObject> {
    use serde_json::Value;
    Ok(match v {
        Value::Null => py.None(),
        Value::Bool(b) => b.into_py(py),
        Value::Number(n) => match (n.as_i64(), n.as_f64()) {
            (Some(i), _) => i.into_py(py),
            (None, Some(f)) => f.into_py(py),
            _ => py.None(),
        },
        Value::String(s) => s.into_py(py),
        Value::Array(a) => {
            let items = a.iter().map(|x| to_py(py, x)).collect::<PyResult<Vec<_>>>()?;
            PyList::new_bound(py, items).into_py(py)
        }
        Value::Object(o) => {
            let d = PyDict::new_bound(py);
            for (k, x) in o {
                d.set_item(k, to_py(py, x)?)?;
            }
            d.into_py(py)
        }
    })
}

fn serialize<T: serde::Serialize>(py: Python<'_>, value: &T) -> PyResult<PyObject> {
    let v = serde_json::to_value(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    to_py(py, &v)
}

/// A model instance: background, single-site profile, coupling density, `E_max`.
#[pyclass(name = "ModelSpec", module = "kslab")]
#[derive(Clone)]
struct PyModelSpec {
    inner: model::ModelSpec,
}

#[pymethods]
impl PyModelSpec {
    /// `W₀ = 0`, `f = χ_[-1,0]`, couplings uniform on `[0, 1]`, `E_max = 3`.
    #[staticmethod]
    fn reference() -> Self {
        Self { inner: model::ModelSpec::reference() }
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let c: ModelConfig = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(Self { inner: c.build().map_err(err)? })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(self.inner.config()).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    fn with_e_max(&self, e_max: f64) -> PyResult<Self> {
        Ok(Self { inner: self.inner.with_e_max(e_max).map_err(err)? })
    }

    #[getter]
    fn e_max(&self) -> f64 {
        self.inner.e_max
    }

    /// `N`, the phase-torus winding bound.
    #[getter]
    fn phase_bound_n(&self) -> u32 {
        self.inner.phase_bound_n
    }

    #[getter]
    fn torus_length(&self) -> f64 {
        self.inner.torus_length()
    }

    /// `[(name, passed, detail)]` for every model invariant.
    fn validate(&self) -> Vec<(String, bool, String)> {
        model::validate_model(&self.inner).checks.into_iter().map(|c| (c.name, c.passed, c.detail)).collect()
    }

    fn sample_couplings(&self, count: usize, seed: u64) -> PyResult<Vec<f64>> {
        model::sample_couplings(&self.inner.coupling, count, seed).map_err(err)
    }

    fn potential(&self, omega: Vec<f64>, x: f64) -> PyResult<f64> {
        let l = omega.len() / 2;
        model::evaluate_full_potential(&self.inner, &omega, 1 - l as i64, x).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("ModelSpec(e_max={}, N={})", self.inner.e_max, self.inner.phase_bound_n)
    }
}

#[pyclass(name = "EigenPair", module = "kslab", get_all)]
#[derive(Clone)]
struct PyEigenPair {
    index_k: usize,
    energy: f64,
    grid: Vec<f64>,
    eigenfunction: Vec<f64>,
    l2_norm_check: f64,
    boundary_ambiguous: bool,
}

#[pymethods]
impl PyEigenPair {
    /// `‖χ_[x-1,x] v‖`.
    fn local_norm(&self, x: i64) -> f64 {
        correlator::local_norm(&self.to_core(), x)
    }

    fn __repr__(&self) -> String {
        format!("EigenPair(k={}, E={})", self.index_k, self.energy)
    }
}

impl PyEigenPair {
    fn to_core(&self) -> spectral::EigenPair {
        spectral::EigenPair {
            index_k: self.index_k,
            energy: self.energy,
            grid: self.grid.clone(),
            eigenfunction: self.eigenfunction.clone(),
            l2_norm_check: self.l2_norm_check,
            boundary_ambiguous: self.boundary_ambiguous,
        }
    }
}

impl From<spectral::EigenPair> for PyEigenPair {
    fn from(p: spectral::EigenPair) -> Self {
        Self {
            index_k: p.index_k,
            energy: p.energy,
            grid: p.grid,
            eigenfunction: p.eigenfunction,
            l2_norm_check: p.l2_norm_check,
            boundary_ambiguous: p.boundary_ambiguous,
        }
    }
}

#[pyfunction]
fn find_eigenvalues_in_window(spec: &PyModelSpec, omega: Vec<f64>, l: usize, tol: f64) -> PyResult<Vec<PyEigenPair>> {
    Ok(spectral::find_eigenvalues_in_window(&spec.inner, &omega, l, tol).map_err(err)?.into_iter().map(Into::into).collect())
}

#[pyfunction]
fn count_eigenvalues_below(spec: &PyModelSpec, omega: Vec<f64>, l: usize, e: f64) -> PyResult<usize> {
    spectral::count_eigenvalues_below(&spec.inner, &omega, l, e).map_err(err)
}

#[pyfunction]
fn phase_at_right_end(spec: &PyModelSpec, omega: Vec<f64>, l: usize, e: f64) -> PyResult<f64> {
    spectral::phase_at_right_end(&spec.inner, &omega, l, e).map_err(err)
}

#[pyfunction]
fn dense_oracle_eigenvalues(spec: &PyModelSpec, omega: Vec<f64>, l: usize, mesh_h: f64) -> PyResult<Vec<f64>> {
    spectral::dense_oracle_eigenvalues(&spec.inner, &omega, l, mesh_h).map_err(err)
}

/// `(E_k, j, [θ_{-L+1}, …, θ_{L-1}])`.
#[pyfunction]
fn phase_coordinates(spec: &PyModelSpec, omega: Vec<f64>, l: usize, k: usize) -> PyResult<(f64, u32, Vec<f64>)> {
    let c = ksop::phase_coordinates(&spec.inner, &omega, l, k, 1e-14).map_err(err)?;
    Ok((c.energy, c.branch_j, c.thetas))
}

#[pyfunction]
fn reconstruct_couplings(spec: &PyModelSpec, energy: f64, branch_j: u32, thetas: Vec<f64>) -> PyResult<Vec<f64>> {
    let l = (thetas.len() + 1) / 2;
    let k = branch_j as usize;
    let c = ksop::PhaseCoordinates { l, k, energy, branch_j, thetas };
    ksop::reconstruct_couplings(&spec.inner, &c).map_err(err)
}

/// `(φ, ln R)` at `end` for `-u'' + q u = E u` started with phase `theta0` at
/// `start`; `q` is a profile given as JSON.
#[pyfunction]
#[pyo3(signature = (profile_json, e, start, end, theta0, tol = 1e-10))]
fn integrate_phase(profile_json: &str, e: f64, start: f64, end: f64, theta0: f64, tol: f64) -> PyResult<(f64, f64)> {
    let q: Profile = serde_json::from_str(profile_json).map_err(|x| PyValueError::new_err(x.to_string()))?;
    let t = kslab::prufer::integrate_prufer(&q, e, start, end, theta0, tol).map_err(err)?;
    Ok(t.endpoint)
}

/// One unit cell at energy `E`.
#[pyclass(name = "CellProblem", module = "kslab")]
struct PyCellProblem {
    inner: CellProblem,
}

#[pymethods]
impl PyCellProblem {
    #[new]
    #[pyo3(signature = (spec, cell, energy, tol = 1e-10))]
    fn new(spec: &PyModelSpec, cell: i64, energy: f64, tol: f64) -> Self {
        Self { inner: CellProblem::for_cell(&spec.inner, cell, energy).with_tol(tol) }
    }

    /// `(λ, residual, exists)` for `φ₀(-1, α, λ) ≡ β`.
    fn solve_lambda(&self, beta: f64, alpha: f64) -> PyResult<(f64, f64, bool)> {
        let s = self.inner.lambda(beta, alpha).map_err(err)?;
        Ok((s.lambda, s.residual, s.exists))
    }

    fn kernel_t1(&self, beta: f64, alpha: f64) -> PyResult<f64> {
        self.inner.kernel_t1(beta, alpha).map_err(err)
    }

    fn kernel_k1_k2(&self, beta: f64, alpha: f64) -> PyResult<(f64, f64)> {
        self.inner.kernel_k1_k2(beta, alpha).map_err(err)
    }

    fn boundary_functions(&self, theta: f64, j: u32) -> PyResult<(f64, f64)> {
        self.inner.boundary_functions(theta, j).map_err(err)
    }

    fn large_coupling_amplitude(&self, beta: f64, lambdas: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.large_coupling_amplitude(beta, &lambdas).map_err(err)
    }

    /// The discretized `T₁` on an `m`-point grid, rows indexed by `β`.
    fn t1_matrix(&self, m: usize) -> PyResult<Vec<Vec<f64>>> {
        let k = ksop::assemble_plus(&self.inner, m).map_err(err)?.t1;
        Ok(k.matrix.row_iter().map(|r| r.iter().copied().collect()).collect())
    }

    /// `‖T₀‖₁,₁`, `‖T̃₀‖₁,₁`, `‖T₁‖₂,₂` and the block norms `‖L_j‖`.
    fn norms(&self, py: Python<'_>, m: usize) -> PyResult<PyObject> {
        let plus = ksop::assemble_plus(&self.inner, m).map_err(err)?;
        let minus = ksop::assemble_minus(&self.inner, m).map_err(err)?;
        let blocks = ksop::block_decompose(&plus.t1, self.inner.n).map_err(err)?;
        let d = PyDict::new_bound(py);
        d.set_item("t0_norm_11", ksop::norm_1_to_1(&plus.t0))?;
        d.set_item("t0_tilde_norm_11", ksop::norm_1_to_1(&minus))?;
        d.set_item("t1_norm_22", ksop::norm_2_to_2(&plus.t1))?;
        d.set_item("block_norms", blocks.iter().map(|b| b.norm_2_to_2()).collect::<Vec<_>>())?;
        Ok(d.into_py(py))
    }

    #[getter]
    fn period(&self) -> f64 {
        self.inner.period()
    }
}

/// `(closed form, dense determinant)`.
#[pyfunction]
fn structured_determinant(a: Vec<f64>, b: Vec<f64>) -> PyResult<(f64, f64)> {
    ksop::structured_determinant(&a, &b).map_err(err)
}

#[pyfunction]
fn jacobian_check(py: Python<'_>, spec: &PyModelSpec, omega: Vec<f64>, l: usize, k: usize, h: f64) -> PyResult<PyObject> {
    let j = ksop::jacobian_check(&spec.inner, &omega, l, k, h).map_err(err)?;
    let d = PyDict::new_bound(py);
    d.set_item("numeric_det", j.numeric_det)?;
    d.set_item("analytic_det", j.analytic_det)?;
    d.set_item("rel_error", j.rel_error)?;
    d.set_item("feynman_hellmann_error", j.feynman_hellmann_error())?;
    Ok(d.into_py(py))
}

/// `(mean, std_error)` of `ρ_L(x, y)`.
#[pyfunction]
fn estimate_rho(spec: &PyModelSpec, l: usize, x: i64, y: i64, samples: usize, seed: u64) -> PyResult<(f64, f64)> {
    correlator::estimate_rho(&spec.inner, l, x, y, samples, seed).map_err(err)
}

#[pyfunction]
fn correlator_series(py: Python<'_>, spec: &PyModelSpec, l: usize, distances: Vec<i64>, samples: usize, seed: u64) -> PyResult<PyObject> {
    let s = py.allow_threads(|| correlator::correlator_series(&spec.inner, l, &distances, samples, seed)).map_err(err)?;
    serialize(py, &s)
}

/// Fits `ln mean = ln C - η n` to a series dict from `correlator_series`.
#[pyfunction]
#[pyo3(signature = (series, min_distance = 3))]
fn decay_fit(py: Python<'_>, series: &Bound<'_, PyDict>, min_distance: i64) -> PyResult<PyObject> {
    let json = py.import_bound("json")?.call_method1("dumps", (series,))?.extract::<String>()?;
    let s: correlator::CorrelatorSeries = serde_json::from_str(&json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    serialize(py, &correlator::decay_fit(&s, min_distance).map_err(err)?)
}

#[pyfunction]
fn operator_bound_rate(py: Python<'_>, spec: &PyModelSpec, cells: Vec<i64>, e_grid: Vec<f64>, m: usize) -> PyResult<PyObject> {
    let r = py.allow_threads(|| correlator::operator_bound_rate(&spec.inner, &cells, &e_grid, m)).map_err(err)?;
    serialize(py, &r)
}

#[pyfunction]
fn kunz_souillard_bound_check(py: Python<'_>, spec: &PyModelSpec, l: usize, n: usize, e: f64, m: usize, nodes: usize) -> PyResult<PyObject> {
    let b = py.allow_threads(|| correlator::kunz_souillard_bound_check(&spec.inner, l, n, e, m, nodes)).map_err(err)?;
    serialize(py, &b)
}

/// Runs a scenario from its JSON config and returns the exit report.
#[pyfunction]
fn run_scenario(py: Python<'_>, config_json: &str) -> PyResult<PyObject> {
    let c = ScenarioConfig::from_json_str(config_json).map_err(err)?;
    let r = py.allow_threads(|| scenario::run_scenario(&c)).map_err(err)?;
    serialize(py, &r)
}

#[pymodule]
#[pyo3(name = "kslab")]
fn kslab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModelSpec>()?;
    m.add_class::<PyEigenPair>()?;
    m.add_class::<PyCellProblem>()?;
    m.add_function(wrap_pyfunction!(find_eigenvalues_in_window, m)?)?;
    m.add_function(wrap_pyfunction!(count_eigenvalues_below, m)?)?;
    m.add_function(wrap_pyfunction!(phase_at_right_end, m)?)?;
    m.add_function(wrap_pyfunction!(dense_oracle_eigenvalues, m)?)?;
    m.add_function(wrap_pyfunction!(phase_coordinates, m)?)?;
    m.add_function(wrap_pyfunction!(reconstruct_couplings, m)?)?;
    m.add_function(wrap_pyfunction!(integrate_phase, m)?)?;
    m.add_function(wrap_pyfunction!(structured_determinant, m)?)?;
    m.add_function(wrap_pyfunction!(jacobian_check, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_rho, m)?)?;
    m.add_function(wrap_pyfunction!(correlator_series, m)?)?;
    m.add_function(wrap_pyfunction!(decay_fit, m)?)?;
    m.add_function(wrap_pyfunction!(operator_bound_rate, m)?)?;
    m.add_function(wrap_pyfunction!(kunz_souillard_bound_check, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
