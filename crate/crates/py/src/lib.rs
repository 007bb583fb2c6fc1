//! Python bindings: scenarios in, plain dicts and lists out.

use pyo3::exceptions::{PyKeyError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBool, PyDict, PyFloat, PyInt, PyList, PyString};
use pyo3::IntoPyObjectExt;
use serde_json::{json, Value};

use qdelay::cli::{analyze, verify_items};
use qdelay::linalg::{mat_exp as core_mat_exp, Matrix};
use qdelay::quantization::{zoom_quantize, QuantizerSpec, ZoomState};
use qdelay::scenario::{set_path, Prepared};
use qdelay::sim::{run as run_sim, Controller};

fn err(e: qdelay::Error) -> PyErr {
    match e {
        qdelay::Error::Io(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    match v {
        Value::Null => Ok(py.None().into_bound(py)),
        Value::Bool(b) => b.into_bound_py_any(py),
        Value::Number(n) => match n.as_i64() {
            Some(i) => i.into_bound_py_any(py),
            None => n.as_f64().unwrap_or(f64::NAN).into_bound_py_any(py),
        },
        Value::String(s) => s.into_bound_py_any(py),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(to_py(py, item)?)?;
            }
            Ok(list.into_any())
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, item) in map {
                dict.set_item(k, to_py(py, item)?)?;
            }
            Ok(dict.into_any())
        }
    }
}

fn from_py(obj: &Bound<'_, PyAny>) -> PyResult<Value> {
    if obj.is_none() {
        Ok(Value::Null)
    } else if obj.is_instance_of::<PyBool>() {
        Ok(Value::Bool(obj.extract()?))
    } else if obj.is_instance_of::<PyInt>() {
        Ok(json!(obj.extract::<i64>()?))
    } else if obj.is_instance_of::<PyFloat>() {
        Ok(json!(obj.extract::<f64>()?))
    } else if obj.is_instance_of::<PyString>() {
        Ok(Value::String(obj.extract()?))
    } else if let Ok(dict) = obj.cast::<PyDict>() {
        let mut map = serde_json::Map::new();
        for (k, v) in dict.iter() {
            map.insert(k.extract::<String>()?, from_py(&v)?);
        }
        Ok(Value::Object(map))
    } else if let Ok(items) = obj.try_iter() {
        Ok(Value::Array(
            items.map(|i| from_py(&i?)).collect::<PyResult<_>>()?,
        ))
    } else {
        Err(PyValueError::new_err(format!(
            "cannot convert {} to JSON",
            obj.get_type().name()?
        )))
    }
}

/// A simulation scenario.
#[pyclass(name = "Scenario", skip_from_py_object)]
#[derive(Clone)]
struct PyScenario {
    inner: qdelay::Scenario,
}

impl PyScenario {
    fn prepared(&self) -> PyResult<Prepared> {
        self.inner.prepare().map_err(err)
    }
}

#[pymethods]
impl PyScenario {
    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: qdelay::Scenario::load(path).map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: qdelay::Scenario::from_json(text).map_err(err)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(err)
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.to_value().map_err(err)?)
    }

    #[getter]
    fn name(&self) -> &str {
        &self.inner.name
    }

    /// Copy with the value at a dotted path replaced, e.g.
    /// `s.with_value("quantizer.error_delta", 1e-3)`.
    fn with_value(&self, path: &str, value: &Bound<'_, PyAny>) -> PyResult<Self> {
        let mut v = self.inner.to_value().map_err(err)?;
        set_path(&mut v, path, from_py(value)?).map_err(|e| PyKeyError::new_err(e.to_string()))?;
        Ok(Self {
            inner: qdelay::Scenario::from_value(v).map_err(err)?,
        })
    }

    /// Design constants with provenance, the theorem condition and the
    /// switching parameters actually used.
    fn constants<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let p = self.prepared()?;
        let mut v = p.config.consts.manifest();
        v["condition"] = serde_json::to_value(p.condition)
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        v["switching"] = json!({
            "tau": p.config.switching.tau,
            "mu0": p.config.switching.mu0,
            "mode": p.config.switching.mode,
        });
        v["warnings"] = json!(p.warnings);
        to_py(py, &v)
    }

    /// Runs the configured controller (or `controller`: "switched",
    /// "open_loop", or a float for a fixed zoom) and returns the sampled
    /// trajectory plus the analysis report.
    #[pyo3(signature = (controller = None))]
    fn run<'py>(
        &self,
        py: Python<'py>,
        controller: Option<&Bound<'py, PyAny>>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let p = self.prepared()?;
        let ctl = match controller {
            None => p.controller,
            Some(c) => match c.extract::<f64>() {
                Ok(mu) if mu > 0.0 => Controller::FixedMu(mu),
                Ok(mu) => {
                    return Err(PyValueError::new_err(format!(
                        "fixed mu = {mu} must be positive"
                    )))
                }
                Err(_) => match c.extract::<String>()?.as_str() {
                    "switched" => Controller::Switched,
                    "open_loop" => Controller::OpenLoop,
                    other => {
                        return Err(PyValueError::new_err(format!(
                            "unknown controller '{other}'"
                        )))
                    }
                },
            },
        };
        let traj = py.detach(|| run_sim(&p.config, ctl)).map_err(err)?;
        let report = if ctl == Controller::Switched {
            analyze(&p, &traj).map_err(|e| PyRuntimeError::new_err(e.to_string()))?
        } else {
            json!({ "summary": qdelay::cli::summarize(&traj) })
        };
        let s = &traj.samples;
        let v = json!({
            "t": s.iter().map(|s| s.t).collect::<Vec<_>>(),
            "x": s.iter().map(|s| s.x.clone()).collect::<Vec<_>>(),
            "control": s.iter().map(|s| s.control).collect::<Vec<_>>(),
            "mu": s.iter().map(|s| s.mu).collect::<Vec<_>>(),
            "phase": s.iter().map(|s| s.phase.as_str()).collect::<Vec<_>>(),
            "norm": s.iter().map(|s| s.norm).collect::<Vec<_>>(),
            "u_sup": s.iter().map(|s| s.u_sup).collect::<Vec<_>>(),
            "t0": traj.t0,
            "stopped_early": traj.stopped_early,
            "analysis": report,
            "warnings": p.warnings,
        });
        to_py(py, &v)
    }

    /// `(check, passed, detail)` for every item the CLI `verify` reports.
    fn verify(&self) -> PyResult<Vec<(String, bool, String)>> {
        let p = self.prepared()?;
        Ok(verify_items(&p)
            .into_iter()
            .map(|i| (i.check, i.pass, i.detail))
            .collect())
    }

    fn __repr__(&self) -> String {
        format!("Scenario(name={:?})", self.inner.name)
    }
}

/// Uniform quantizer with step `Δ`, deadzone `Δ/2`, range `M`, at zoom `mu`.
#[pyfunction]
#[pyo3(signature = (v, range_m, error_delta, mu = 1.0))]
fn quantize(v: f64, range_m: f64, error_delta: f64, mu: f64) -> PyResult<f64> {
    let spec = QuantizerSpec::uniform(range_m, error_delta).map_err(err)?;
    Ok(zoom_quantize(v, ZoomState::new(mu).map_err(err)?, &spec))
}

/// `e^{At}` for a square matrix given as a list of rows.
#[pyfunction]
fn mat_exp(a: Vec<Vec<f64>>, t: f64) -> PyResult<Vec<Vec<f64>>> {
    let m = Matrix::from_rows(&a).map_err(err)?;
    Ok(core_mat_exp(&m, t).map_err(err)?.to_rows())
}

#[pymodule]
#[pyo3(name = "qdelay")]
fn qdelay_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScenario>()?;
    m.add_function(wrap_pyfunction!(quantize, m)?)?;
    m.add_function(wrap_pyfunction!(mat_exp, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
