//! Python bindings: parameters, the coefficient field, the particle engine,
//! ensemble statistics, certificates and the maximal function.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use leibenson::maximal::{maximal_surface_bruteforce, maximal_surface_d3, CapGeometry};
use leibenson::quad::certify_all;
use leibenson::{stats, FieldEvaluator, LeibensonError, LeibensonParams, ParticleEnsemble, SDEConfig};

fn to_py(e: LeibensonError) -> PyErr {
    match e {
        LeibensonError::NumericalBlowup { .. } | LeibensonError::Convergence(_) | LeibensonError::Io(_) => {
            PyRuntimeError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Validated `(d, p, q)` with the derived profile constants.
#[pyclass(name = "Params", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyParams {
    inner: LeibensonParams,
}

#[pymethods]
impl PyParams {
    #[new]
    fn new(d: usize, p: f64, q: f64) -> PyResult<Self> {
        Ok(PyParams { inner: LeibensonParams::new(d, p, q).map_err(to_py)? })
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.d()
    }
    #[getter]
    fn p(&self) -> f64 {
        self.inner.p()
    }
    #[getter]
    fn q(&self) -> f64 {
        self.inner.q()
    }
    #[getter]
    fn beta(&self) -> f64 {
        self.inner.beta()
    }
    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma()
    }
    #[getter]
    fn kappa(&self) -> f64 {
        self.inner.kappa()
    }
    #[getter]
    fn c_norm(&self) -> f64 {
        self.inner.c_norm()
    }

    /// Regime predicates as `{name: bool}`.
    fn regime(&self) -> Vec<(&'static str, bool)> {
        let flags = self.inner.regime().flags();
        leibenson::RegimeReport::FLAG_NAMES.iter().copied().zip(flags).collect()
    }

    fn __repr__(&self) -> String {
        format!("Params(d={}, p={}, q={})", self.inner.d(), self.inner.p(), self.inner.q())
    }
}

/// The shifted Barenblatt curve `w_δ(t) = w(t + δ)` and its coefficients.
#[pyclass(name = "Field", frozen)]
struct PyField {
    inner: FieldEvaluator,
}

#[pymethods]
impl PyField {
    #[new]
    fn new(params: &PyParams, delta: f64) -> PyResult<Self> {
        Ok(PyField { inner: FieldEvaluator::new(params.inner, delta).map_err(to_py)? })
    }

    fn density(&self, t: f64, x: Vec<f64>) -> f64 {
        self.inner.density_delta(t, &x)
    }

    fn support_radius(&self, t: f64) -> f64 {
        self.inner.support_radius_delta(t)
    }

    fn rho(&self, t: f64, x: Vec<f64>) -> PyResult<f64> {
        self.inner.rho(t, &x).map_err(to_py)
    }

    fn grad_rho(&self, t: f64, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.grad_rho(t, &x).map_err(to_py)
    }

    fn drift(&self, t: f64, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.drift(t, &x).map_err(to_py)
    }

    fn diffusion(&self, t: f64, x: Vec<f64>) -> PyResult<f64> {
        self.inner.diffusion_scalar(t, &x).map_err(to_py)
    }

    fn radial_cdf(&self, t: f64, r: f64) -> PyResult<f64> {
        self.inner.radial_law(t).and_then(|law| law.cdf(r)).map_err(to_py)
    }

    fn sample_radius(&self, t: f64, u: f64) -> PyResult<f64> {
        self.inner.radial_law(t).and_then(|law| law.sample_radius(u)).map_err(to_py)
    }

    fn second_moment(&self, t: f64) -> PyResult<f64> {
        self.inner.second_moment(t).map_err(to_py)
    }
}

/// A particle snapshot.
#[pyclass(name = "Ensemble", frozen)]
struct PyEnsemble {
    inner: ParticleEnsemble,
}

#[pymethods]
impl PyEnsemble {
    #[getter]
    fn time(&self) -> f64 {
        self.inner.time
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// Positions as a list of `d`-lists.
    fn positions(&self) -> Vec<Vec<f64>> {
        self.inner.positions.chunks_exact(self.inner.d).map(<[f64]>::to_vec).collect()
    }

    fn radii(&self) -> Vec<f64> {
        self.inner.radii()
    }
}

#[allow(clippy::too_many_arguments)]
fn sde_config(
    params: &PyParams,
    delta: f64,
    t_final: f64,
    dt: f64,
    n_particles: usize,
    seed: u64,
    snap_times: Option<Vec<f64>>,
) -> SDEConfig {
    let mut config = SDEConfig::new(params.inner, delta, t_final, dt, n_particles, seed);
    if let Some(times) = snap_times {
        config.snap_times = times;
    }
    config
}

/// Runs the particle system; returns one ensemble per snapshot time.
#[pyfunction]
#[pyo3(signature = (params, delta, t_final, dt, n_particles, seed, snap_times=None))]
fn simulate(
    py: Python<'_>,
    params: &PyParams,
    delta: f64,
    t_final: f64,
    dt: f64,
    n_particles: usize,
    seed: u64,
    snap_times: Option<Vec<f64>>,
) -> PyResult<Vec<PyEnsemble>> {
    let config = sde_config(params, delta, t_final, dt, n_particles, seed, snap_times);
    let snaps = py.detach(|| leibenson::simulate(&config)).map_err(to_py)?;
    Ok(snaps.into_iter().map(|inner| PyEnsemble { inner }).collect())
}

/// Coupled run; returns the diagnostic as a JSON string.
#[pyfunction]
#[pyo3(signature = (params, delta, t_final, dt, n_particles, seed, offset, epsilon))]
fn simulate_coupled(
    py: Python<'_>,
    params: &PyParams,
    delta: f64,
    t_final: f64,
    dt: f64,
    n_particles: usize,
    seed: u64,
    offset: Vec<f64>,
    epsilon: f64,
) -> PyResult<String> {
    let config = sde_config(params, delta, t_final, dt, n_particles, seed, None);
    let diag = py.detach(|| leibenson::simulate_coupled(&config, &offset, epsilon)).map_err(to_py)?;
    serde_json::to_string(&diag).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pyfunction]
fn ks_radial(ensemble: &PyEnsemble, field: &PyField) -> PyResult<f64> {
    stats::ks_radial(&ensemble.inner, &field.inner, ensemble.inner.time).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (ensemble, field, slack=0.05))]
fn support_violation(ensemble: &PyEnsemble, field: &PyField, slack: f64) -> PyResult<f64> {
    stats::support_violation(&ensemble.inner, &field.inner, slack).map_err(to_py)
}

#[pyfunction]
fn moment2_rel_err(ensemble: &PyEnsemble, field: &PyField) -> PyResult<f64> {
    stats::moment2_rel_err(&ensemble.inner, &field.inner).map_err(to_py)
}

/// Certificate report as a JSON string.
#[pyfunction]
#[pyo3(signature = (params, delta, t_final, tol=1e-8))]
fn certify(py: Python<'_>, params: &PyParams, delta: f64, t_final: f64, tol: f64) -> PyResult<String> {
    let report = py.detach(|| certify_all(&params.inner, delta, t_final, tol)).map_err(to_py)?;
    serde_json::to_string(&report).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pyfunction]
fn maximal_surface(radius: f64, x_norm: f64) -> PyResult<f64> {
    CapGeometry::new(radius, x_norm).and_then(|g| maximal_surface_d3(&g)).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (radius, x_norm, grid=4000))]
fn maximal_surface_brute(radius: f64, x_norm: f64, grid: usize) -> PyResult<f64> {
    CapGeometry::new(radius, x_norm).and_then(|g| maximal_surface_bruteforce(&g, grid)).map_err(to_py)
}

#[pymodule]
fn leibenson_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyParams>()?;
    m.add_class::<PyField>()?;
    m.add_class::<PyEnsemble>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_coupled, m)?)?;
    m.add_function(wrap_pyfunction!(ks_radial, m)?)?;
    m.add_function(wrap_pyfunction!(support_violation, m)?)?;
    m.add_function(wrap_pyfunction!(moment2_rel_err, m)?)?;
    m.add_function(wrap_pyfunction!(certify, m)?)?;
    m.add_function(wrap_pyfunction!(maximal_surface, m)?)?;
    m.add_function(wrap_pyfunction!(maximal_surface_brute, m)?)?;
    Ok(())
}
