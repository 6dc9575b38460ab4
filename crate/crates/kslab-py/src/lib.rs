//! Python bindings for kslab.

use std::sync::Arc;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde::Serialize;
use serde_json::Value;

use kslab::cli::{self, Suite};
use kslab::config;
use kslab::diagnostics;
use kslab::dynamics;
use kslab::operators;
use kslab::profiles::{self, ProfileFamily};
use kslab::{GridSpec, Parity, RadialField, RadialGrid};

fn value_error<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_error<E: std::fmt::Display>(e: E) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match n.as_i64() {
            Some(i) => i.into_pyobject(py)?.into_any(),
            None => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for x in items {
                list.append(to_py(py, x)?)?;
            }
            list.into_any()
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, x) in map {
                dict.set_item(k, to_py(py, x)?)?;
            }
            dict.into_any()
        }
    })
}

fn to_dict<'py, T: Serialize>(py: Python<'py>, x: &T) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &serde_json::to_value(x).map_err(runtime_error)?)
}

/// Stretched radial grid: uniform near the origin, logarithmic beyond.
#[pyclass(name = "Grid", frozen)]
struct PyGrid {
    inner: Arc<RadialGrid>,
}

#[pymethods]
impl PyGrid {
    #[new]
    #[pyo3(signature = (r_max = 1e4, h0 = None, r_uniform = None, nodes_per_decade = None))]
    fn new(r_max: f64, h0: Option<f64>, r_uniform: Option<f64>, nodes_per_decade: Option<f64>) -> PyResult<Self> {
        let mut spec = GridSpec::default().with_r_max(r_max);
        if let Some(h) = h0 {
            spec.h0 = h;
        }
        if let Some(u) = r_uniform {
            spec.r_uniform = u;
        }
        if let Some(n) = nodes_per_decade {
            spec.nodes_per_decade = n;
        }
        Ok(PyGrid { inner: RadialGrid::new(spec).map_err(value_error)? })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn nodes(&self) -> Vec<f64> {
        self.inner.nodes().to_vec()
    }

    #[getter]
    fn r_max(&self) -> f64 {
        self.inner.r_max()
    }

    /// 2 pi int f r dr of an even nodal field.
    fn integrate(&self, values: Vec<f64>) -> PyResult<f64> {
        Ok(self.field(values)?.integrate())
    }

    fn laplacian(&self, values: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self.field(values)?.laplacian().map_err(value_error)?.values)
    }

    /// Gradient of the Poisson potential of a density.
    fn poisson_field(&self, values: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self.field(values)?.poisson_field().values)
    }

    fn log_hls<'py>(&self, py: Python<'py>, values: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
        let rep = diagnostics::check_log_hls(&self.field(values)?).map_err(value_error)?;
        to_dict(py, &rep)
    }

    #[pyo3(signature = (values, alpha = 0.0, gamma = 1.0, r_cut = 50.0))]
    fn hardy<'py>(&self, py: Python<'py>, values: Vec<f64>, alpha: f64, gamma: f64, r_cut: f64) -> PyResult<Bound<'py, PyAny>> {
        let rep = diagnostics::check_hardy_suite(&self.field(values)?, alpha, gamma, r_cut).map_err(value_error)?;
        to_dict(py, &rep)
    }

    /// Free energy of a density paired with its own Poisson field.
    fn free_energy<'py>(&self, py: Python<'py>, values: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
        let pair = diagnostics::with_poisson(&self.field(values)?);
        let rep = diagnostics::free_energy(&pair, kslab::Normalization::LogConvolution).map_err(value_error)?;
        to_dict(py, &rep)
    }

    /// Ground state Q sampled on the nodes.
    fn ground_state(&self) -> Vec<f64> {
        self.inner.sample(kslab::closed::q)
    }
}

impl PyGrid {
    fn field(&self, values: Vec<f64>) -> PyResult<RadialField> {
        RadialField::new(self.inner.clone(), values, Parity::Even).map_err(value_error)
    }
}

/// Localized approximate profile at one value of b.
#[pyclass(name = "Profile", frozen)]
struct PyProfile {
    grid: Arc<RadialGrid>,
    fam: ProfileFamily,
}

#[pymethods]
impl PyProfile {
    #[new]
    #[pyo3(signature = (b, r_max = None))]
    fn new(b: f64, r_max: Option<f64>) -> PyResult<Self> {
        if !(b > 0.0 && b <= profiles::B_STAR) {
            return Err(PyValueError::new_err(format!("b = {b} outside (0, {}]", profiles::B_STAR)));
        }
        let r_max = r_max.unwrap_or_else(|| cli::profile_r_max(b));
        let grid = RadialGrid::new(GridSpec::default().with_r_max(r_max)).map_err(value_error)?;
        let fam = ProfileFamily::build(&grid, b).map_err(value_error)?;
        Ok(PyProfile { grid, fam })
    }

    #[getter]
    fn b(&self) -> f64 {
        self.fam.b
    }

    /// parabolic scale 1/sqrt(b)
    #[getter]
    fn b0(&self) -> f64 {
        self.fam.b0
    }

    /// localization scale |log b|/sqrt(b)
    #[getter]
    fn b1(&self) -> f64 {
        self.fam.b1
    }

    #[getter]
    fn c_b(&self) -> f64 {
        self.fam.rad.consts.c_b
    }

    #[getter]
    fn nodes(&self) -> Vec<f64> {
        self.grid.nodes().to_vec()
    }

    #[getter]
    fn density(&self) -> Vec<f64> {
        self.fam.qb.clone()
    }

    #[getter]
    fn partial_mass(&self) -> Vec<f64> {
        self.fam.mb.clone()
    }

    #[getter]
    fn chem_partial_mass(&self) -> Vec<f64> {
        self.fam.nb.clone()
    }

    fn radiation<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_dict(py, &self.fam.rad.consts)
    }

    fn norms<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_dict(py, &self.fam.norm_report())
    }
}

/// Pairings and coercivity certificates for the cutoff M.
#[pyfunction]
#[pyo3(name = "spectral_check")]
fn py_spectral_check(py: Python<'_>, m: f64) -> PyResult<Bound<'_, PyAny>> {
    if !(m >= operators::M_MIN) {
        return Err(PyValueError::new_err(format!("M = {m} too small: need M >= {}", operators::M_MIN)));
    }
    let (fine, coarse) = cli::spectral_grids(m).map_err(value_error)?;
    let rep = py.detach(|| operators::spectral_check(fine, coarse, m)).map_err(runtime_error)?;
    to_dict(py, &rep)
}

/// Runs one `verify-bounds` suite: "hardy", "loghls", "profiles" or "spectral".
#[pyfunction]
#[pyo3(name = "verify")]
fn py_verify<'py>(py: Python<'py>, suite: &str) -> PyResult<Bound<'py, PyAny>> {
    let s = match suite {
        "hardy" => Suite::Hardy,
        "loghls" => Suite::Loghls,
        "profiles" => Suite::Profiles,
        "spectral" => Suite::Spectral,
        other => return Err(PyValueError::new_err(format!("unknown suite '{other}'"))),
    };
    let v = py.detach(|| cli::verify(s)).map_err(runtime_error)?;
    to_dict(py, &v)
}

/// Parses a config (text or JSON) and returns the resolved settings.
#[pyfunction]
#[pyo3(name = "parse_config")]
fn py_parse_config<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    let cfg = config::parse_config(text).map_err(value_error)?;
    to_dict(py, &cfg)
}

/// Evolves the run described by `text`; returns the summary and the recorded series.
#[pyfunction]
#[pyo3(name = "simulate")]
fn py_simulate<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    let cfg = config::parse_config(text).map_err(value_error)?;
    let run = py.detach(|| dynamics::evolve(&cfg.run)).map_err(runtime_error)?;
    let summary = cli::summarize(&cfg.run, &run);
    let out = serde_json::json!({ "summary": summary, "series": run.series.records });
    to_py(py, &out)
}

/// Records of the closed-form law b_s = -2 b^2/|log b| (or -b^2 without the log).
#[pyfunction]
#[pyo3(name = "synthetic_series", signature = (s0, s1, b0, samples = 400, with_log = true))]
fn py_synthetic_series(py: Python<'_>, s0: f64, s1: f64, b0: f64, samples: usize, with_log: bool) -> PyResult<Bound<'_, PyAny>> {
    let ts = diagnostics::synthetic_series(s0, s1, b0, samples, with_log).map_err(value_error)?;
    to_dict(py, &ts.records)
}

/// Blow-up law fits on series given as columns s, lambda, b.
#[pyfunction]
#[pyo3(name = "fit_rate_law", signature = (s, lam, b, window = 10))]
fn py_fit_rate_law(py: Python<'_>, s: Vec<f64>, lam: Vec<f64>, b: Vec<f64>, window: usize) -> PyResult<Bound<'_, PyAny>> {
    if s.len() != lam.len() || s.len() != b.len() {
        return Err(PyValueError::new_err("s, lam and b must have equal length"));
    }
    let records = (0..s.len())
        .map(|i| dynamics::Record {
            t: f64::NAN,
            s: s[i],
            lambda: lam[i],
            b: b[i],
            b_hat: b[i],
            mass: f64::NAN,
            free_energy: f64::NAN,
            e2_norm: f64::NAN,
            lyapunov: f64::NAN,
            residual_phi: f64::NAN,
            residual_lstar_phi: f64::NAN,
        })
        .collect();
    let fit = diagnostics::fit_rate_law(&dynamics::TimeSeries { records }, window).map_err(value_error)?;
    to_dict(py, &fit)
}

#[pymodule]
fn kslab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGrid>()?;
    m.add_class::<PyProfile>()?;
    m.add_function(wrap_pyfunction!(py_spectral_check, m)?)?;
    m.add_function(wrap_pyfunction!(py_verify, m)?)?;
    m.add_function(wrap_pyfunction!(py_parse_config, m)?)?;
    m.add_function(wrap_pyfunction!(py_simulate, m)?)?;
    m.add_function(wrap_pyfunction!(py_synthetic_series, m)?)?;
    m.add_function(wrap_pyfunction!(py_fit_rate_law, m)?)?;
    m.add("B_STAR", profiles::B_STAR)?;
    Ok(())
}
