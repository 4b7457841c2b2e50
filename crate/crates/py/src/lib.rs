//! Python bindings, imported as `pystripflow._native`. Reports cross the
//! boundary as JSON text; the package in `python/pystripflow` decodes them.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use std::path::{Path, PathBuf};
use stripflow::characteristics::{entry_time, Parametric, StepCtrl};
use stripflow::field::SampledField;
use stripflow::geometry::{Extension, StripDomain};
use stripflow::scenario::{self, Scenario, ScenarioError, Suite};

fn err(e: ScenarioError) -> PyErr {
    match e {
        ScenarioError::Parse { .. } | ScenarioError::Validation(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn json<T: serde::Serialize>(v: &T) -> PyResult<String> {
    serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

fn load(path: &str) -> PyResult<Scenario> {
    scenario::load_scenario(Path::new(path)).map_err(err)
}

/// Validates a scenario file and returns its canonical text.
#[pyfunction]
fn load_scenario(path: &str) -> PyResult<String> {
    Ok(scenario::emit(&load(path)?.config))
}

/// Solves a scenario and runs its checks. Outputs are written when
/// `out_dir` is given. Returns the report as JSON.
#[pyfunction]
#[pyo3(signature = (path, out_dir=None))]
fn run(py: Python<'_>, path: &str, out_dir: Option<PathBuf>) -> PyResult<String> {
    let sc = load(path)?;
    let report = py.detach(|| -> Result<_, ScenarioError> {
        let mut outcome = scenario::run(&sc)?;
        if let Some(dir) = &out_dir {
            scenario::write_outputs(&sc, &mut outcome, dir)?;
        }
        Ok(outcome.report)
    });
    json(&report.map_err(err)?)
}

/// Backward characteristics of every equation through `(t0, x0)`, as JSON.
#[pyfunction]
fn trace(py: Python<'_>, path: &str, t0: f64, x0: Vec<f64>) -> PyResult<String> {
    let sc = load(path)?;
    let rep = py.detach(|| scenario::trace(&sc, t0, &x0)).map_err(err)?;
    json(&rep)
}

/// Upwind comparison with negative control, as JSON.
#[pyfunction]
#[pyo3(signature = (path, levels=3))]
fn oracle_compare(py: Python<'_>, path: &str, levels: usize) -> PyResult<String> {
    let sc = load(path)?;
    let rep = py.detach(|| scenario::oracle_compare(&sc, levels)).map_err(err)?;
    json(&rep)
}

/// Runs one randomized invariant suite, as JSON.
#[pyfunction]
#[pyo3(signature = (suite, seed=1, trials=None))]
fn verify(py: Python<'_>, suite: &str, seed: u64, trials: Option<usize>) -> PyResult<String> {
    let s = Suite::ALL
        .into_iter()
        .find(|s| serde_json::to_value(s).is_ok_and(|v| v == suite))
        .ok_or_else(|| PyValueError::new_err(format!("unknown suite {suite:?}")))?;
    let rep = py.detach(|| scenario::verify(s, seed, trials));
    json(&rep)
}

/// Entry time and entry point for a constant velocity `b` on the strip
/// with a periodic unit window.
#[pyfunction]
#[pyo3(signature = (b, t0, x0, t1=1.0))]
fn entry_time_constant(b: Vec<f64>, t0: f64, x0: Vec<f64>, t1: f64) -> PyResult<(f64, Vec<f64>)> {
    let d = b.len();
    if d == 0 || x0.len() != d {
        return Err(PyValueError::new_err("b and x0 must have the same positive length"));
    }
    let dom = StripDomain::new(d, t1, vec![0.0; d - 1], vec![1.0; d - 1], Extension::Periodic)
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    let field = SampledField::constant(&b);
    let (tau, p) = entry_time(&Parametric::new(&field, None), &dom, t0, &x0, &StepCtrl::default())
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok((tau, p.x))
}

#[pymodule]
#[pyo3(name = "_native")]
fn pystripflow(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(load_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(trace, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_compare, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(entry_time_constant, m)?)?;
    Ok(())
}
