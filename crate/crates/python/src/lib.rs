//! Python bindings: correlation models, spectra, flow simulation, the radial
//! law and dimension estimates.

use lab::dimension::{correlation_dimension as corr_dim, pointwise_dimension as point_dim, EmpiricalMeasure, RangePolicy};
use lab::flow::{pullback_cloud as pullback, simulate as run_flow};
use lab::radial::{Classification, InvariantLaw};
use lab::spectrum::{closed_form_spectrum as closed_form, estimate_spectrum_qr, lyapunov_dimension as ly_dim, QrOptions};
use lab::{Error, Points, SamplerKind, Scheme, SimConfig};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::InvalidModel(_) | Error::InvalidConfig(_) | Error::NonFinite(_) | Error::UnorderedSpectrum => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn points_from(rows: Vec<Vec<f64>>) -> PyResult<Points> {
    let dim = rows.first().map(Vec::len).ok_or_else(|| PyValueError::new_err("need at least one point"))?;
    Points::from_rows(dim, &rows).map_err(py_err)
}

fn parse_scheme(name: &str) -> PyResult<Scheme> {
    match name {
        "euler_maruyama" => Ok(Scheme::EulerMaruyama),
        "exponential_euler" => Ok(Scheme::ExponentialEuler),
        other => Err(PyValueError::new_err(format!("unknown scheme {other:?}"))),
    }
}

fn parse_sampler(name: &str, modes: usize) -> PyResult<SamplerKind> {
    match name {
        "exact" => Ok(SamplerKind::Exact),
        "spectral" => Ok(SamplerKind::Spectral { modes }),
        other => Err(PyValueError::new_err(format!("unknown sampler {other:?}"))),
    }
}

/// Isotropic covariance model with a linear restoring drift `c`.
#[pyclass(name = "CorrelationModel", module = "ouflow", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyModel {
    inner: lab::CorrelationModel,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    #[pyo3(signature = (length_scale = 1.0, dim = 2, drift = 0.5))]
    fn potential(length_scale: f64, dim: usize, drift: f64) -> PyResult<Self> {
        let inner = lab::CorrelationModel::gaussian_potential(length_scale, dim, drift).map_err(py_err)?;
        Ok(PyModel { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (length_scale = 1.0, dim = 2, drift = 0.5))]
    fn solenoidal(length_scale: f64, dim: usize, drift: f64) -> PyResult<Self> {
        let inner = lab::CorrelationModel::gaussian_solenoidal(length_scale, dim, drift).map_err(py_err)?;
        Ok(PyModel { inner })
    }

    /// `alpha` is the weight of the potential part.
    #[staticmethod]
    #[pyo3(signature = (alpha, length_scale = 1.0, dim = 2, drift = 0.5))]
    fn mixture(alpha: f64, length_scale: f64, dim: usize, drift: f64) -> PyResult<Self> {
        let inner = lab::CorrelationModel::gaussian_mixture(alpha, length_scale, dim, drift).map_err(py_err)?;
        Ok(PyModel { inner })
    }

    #[getter]
    fn beta_l(&self) -> f64 {
        self.inner.beta_l()
    }

    #[getter]
    fn beta_n(&self) -> f64 {
        self.inner.beta_n()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn drift(&self) -> f64 {
        self.inner.drift()
    }

    #[getter]
    fn length_scale(&self) -> f64 {
        self.inner.length_scale()
    }

    fn bl(&self, r: f64) -> f64 {
        self.inner.bl(r)
    }

    fn bn(&self, r: f64) -> f64 {
        self.inner.bn(r)
    }

    /// The covariance tensor `b(x)` as a list of rows.
    fn build_tensor(&self, x: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        let b = self.inner.build_tensor(&x).map_err(py_err)?;
        Ok(b.row_iter().map(|r| r.iter().copied().collect()).collect())
    }

    /// Closed-form Lyapunov exponents, in decreasing order.
    fn spectrum(&self) -> PyResult<Vec<f64>> {
        Ok(lab::spectrum::model_spectrum(&self.inner).map_err(py_err)?.exponents)
    }

    fn lyapunov_dimension(&self) -> PyResult<f64> {
        lab::spectrum::model_spectrum(&self.inner).and_then(|s| s.dimension()).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!("CorrelationModel({})", self.inner.describe())
    }
}

#[pyfunction]
fn closed_form_spectrum(beta_l: f64, beta_n: f64, c: f64, d: usize) -> PyResult<Vec<f64>> {
    Ok(closed_form(beta_l, beta_n, c, d).map_err(py_err)?.exponents)
}

#[pyfunction]
#[pyo3(signature = (exponents, multiplicities = None))]
fn lyapunov_dimension(exponents: Vec<f64>, multiplicities: Option<Vec<usize>>) -> PyResult<f64> {
    let mult = multiplicities.unwrap_or_else(|| vec![1; exponents.len()]);
    ly_dim(&exponents, &mult).map_err(py_err)
}

fn sim_config(model: &PyModel, horizon: f64, dt: Option<f64>, seed: u64, scheme: &str, sampler: &str) -> PyResult<SimConfig> {
    let mut cfg = SimConfig::new(model.inner.clone())
        .with_horizon(horizon)
        .with_seed(seed, 0)
        .with_scheme(parse_scheme(scheme)?)
        .with_sampler(parse_sampler(sampler, 32)?);
    if let Some(dt) = dt {
        cfg = cfg.with_dt(dt);
    }
    Ok(cfg)
}

/// QR (Benettin) estimate of the spectrum: `(exponents, standard_errors)`.
#[pyfunction]
#[pyo3(signature = (model, horizon, replicas, dt = None, seed = 0, stride = 10))]
fn estimate_spectrum(
    py: Python<'_>,
    model: &PyModel,
    horizon: f64,
    replicas: usize,
    dt: Option<f64>,
    seed: u64,
    stride: usize,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let cfg = sim_config(model, horizon, dt, seed, "euler_maruyama", "exact")?;
    let options = QrOptions { reortho_stride: stride, ..QrOptions::default() };
    let (s, _) = py.detach(|| estimate_spectrum_qr(&cfg, replicas, &options)).map_err(py_err)?;
    Ok((s.exponents, s.stderr.unwrap_or_default()))
}

/// Simulates the n-point motion of `points`; returns `[(t, positions), ...]`
/// with a frame every `stride` steps.
#[pyfunction]
#[pyo3(signature = (model, points, horizon, seed = 0, replica = 0, dt = None, stride = 1, scheme = "euler_maruyama", sampler = "exact"))]
#[allow(clippy::too_many_arguments)]
fn simulate(
    py: Python<'_>,
    model: &PyModel,
    points: Vec<Vec<f64>>,
    horizon: f64,
    seed: u64,
    replica: u64,
    dt: Option<f64>,
    stride: usize,
    scheme: &str,
    sampler: &str,
) -> PyResult<Vec<(f64, Vec<Vec<f64>>)>> {
    let initial = points_from(points)?;
    let cfg = sim_config(model, horizon, dt, seed, scheme, sampler)?.with_seed(seed, replica).with_stride(stride);
    let traj = py.detach(|| run_flow(&cfg, &initial)).map_err(py_err)?;
    Ok(traj.frames.into_iter().map(|f| (f.t, f.positions.to_rows())).collect())
}

/// Pullback sample of the statistical equilibrium at horizon `horizon`.
#[pyfunction]
#[pyo3(signature = (model, n, horizon, seed = 0, sampler = "spectral"))]
fn pullback_cloud(py: Python<'_>, model: &PyModel, n: usize, horizon: f64, seed: u64, sampler: &str) -> PyResult<Vec<Vec<f64>>> {
    let cfg = sim_config(model, horizon, None, seed, "euler_maruyama", sampler)?;
    let cloud = py.detach(|| pullback(&cfg, n, horizon)).map_err(py_err)?;
    Ok(cloud.points.to_rows())
}

/// Correlation-dimension fit: dict with `estimate`, `ci_halfwidth`,
/// `fit_r2`, `accepted`, `degenerate`.
#[pyfunction]
#[pyo3(signature = (points, lo_quantile = 0.001, hi_quantile = 0.05))]
fn correlation_dimension<'py>(
    py: Python<'py>,
    points: Vec<Vec<f64>>,
    lo_quantile: f64,
    hi_quantile: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let cloud = EmpiricalMeasure::from_points(points_from(points)?);
    let policy = RangePolicy { lo_quantile, hi_quantile, ..RangePolicy::default() };
    let fit = py.detach(|| corr_dim(&cloud, &policy)).map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("estimate", fit.estimate)?;
    out.set_item("ci_halfwidth", fit.ci_halfwidth)?;
    out.set_item("fit_r2", fit.fit_r2)?;
    out.set_item("accepted", fit.accepted)?;
    out.set_item("degenerate", fit.degenerate)?;
    out.set_item("scaling_range", fit.scaling_range)?;
    Ok(out)
}

/// Fixed-mass pointwise-dimension estimate: `(estimate, ci_halfwidth)`.
#[pyfunction]
#[pyo3(signature = (points, max_centers = 2000))]
fn pointwise_dimension(py: Python<'_>, points: Vec<Vec<f64>>, max_centers: usize) -> PyResult<(f64, f64)> {
    let cloud = EmpiricalMeasure::from_points(points_from(points)?);
    let fit = py.detach(|| point_dim(&cloud, max_centers)).map_err(py_err)?;
    Ok((fit.estimate, fit.ci_halfwidth))
}

/// The distance between two particles as a scalar diffusion.
#[pyclass(name = "RadialLaw", module = "ouflow", frozen)]
struct PyRadialLaw {
    inner: lab::RadialLaw,
}

#[pymethods]
impl PyRadialLaw {
    #[new]
    fn new(model: &PyModel) -> PyResult<Self> {
        Ok(PyRadialLaw { inner: lab::RadialLaw::new(model.inner.clone()).map_err(py_err)? })
    }

    fn drift(&self, r: f64) -> f64 {
        self.inner.drift(r)
    }

    fn diffusion2(&self, r: f64) -> f64 {
        self.inner.diffusion2(r)
    }

    fn scale_function(&self, r: f64) -> PyResult<f64> {
        self.inner.scale_function(r).map_err(py_err)
    }

    fn speed_density(&self, r: f64) -> PyResult<f64> {
        self.inner.speed_density(r).map_err(py_err)
    }

    /// Normalized invariant density, or `None` when the speed measure has
    /// infinite mass.
    fn invariant_density(&self, r: f64) -> PyResult<Option<f64>> {
        self.inner.invariant_density(r).map_err(py_err)
    }

    fn invariant_cdf(&self, r: f64) -> PyResult<Option<f64>> {
        self.inner.invariant_cdf(r).map_err(py_err)
    }

    fn normalizable(&self) -> PyResult<bool> {
        Ok(matches!(self.inner.invariant_law().map_err(py_err)?, InvariantLaw::Normalizable { .. }))
    }

    fn verdict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let v = self.inner.verdict().map_err(py_err)?;
        let out = PyDict::new(py);
        out.set_item("lambda1", v.lambda1)?;
        let class = match v.classification {
            Classification::Recurrent => "recurrent",
            Classification::Transient => "transient",
        };
        out.set_item("classification", class)?;
        out.set_item("normalizable", v.normalizable)?;
        out.set_item("boundary", v.boundary)?;
        out.set_item("small_r_exponent", v.small_r_exponent)?;
        Ok(out)
    }
}

#[pymodule]
fn ouflow(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_class::<PyRadialLaw>()?;
    m.add_function(wrap_pyfunction!(closed_form_spectrum, m)?)?;
    m.add_function(wrap_pyfunction!(lyapunov_dimension, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_spectrum, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(pullback_cloud, m)?)?;
    m.add_function(wrap_pyfunction!(correlation_dimension, m)?)?;
    m.add_function(wrap_pyfunction!(pointwise_dimension, m)?)?;
    Ok(())
}
