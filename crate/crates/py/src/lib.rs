//! Python bindings: scenario runs, event logs and the erasure code.

use powerstore::erasure::{self, Fragment};
use powerstore::scenario::{self, config_for, summarize, Overrides, Scenario};
use powerstore::simnet::{self, SimConfig};
use powerstore::types::{Mode, PowKind};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyBytes;

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn lookup(name: &str) -> PyResult<Scenario> {
    scenario::scenario(name).ok_or_else(|| err(format!("unknown scenario {name:?}")))
}

#[allow(clippy::too_many_arguments)]
fn overrides(
    mode: Option<&str>,
    pow: Option<&str>,
    t: Option<usize>,
    value_size: Option<usize>,
    delay: Option<&str>,
    faults: Option<Vec<String>>,
    config: Option<&str>,
) -> PyResult<Overrides> {
    Ok(Overrides {
        mode: match mode {
            None => None,
            Some("sw") => Some(Mode::Sw),
            Some("mw") => Some(Mode::Mw),
            Some(m) => return Err(err(format!("mode must be sw or mw, not {m:?}"))),
        },
        pow: match pow {
            None => None,
            Some("hash") => Some(PowKind::Hash),
            Some("shamir") => Some(PowKind::Shamir),
            Some(p) => return Err(err(format!("pow must be hash or shamir, not {p:?}"))),
        },
        t,
        value_size,
        delay: delay.map(str::parse).transpose().map_err(err)?,
        faults: faults.unwrap_or_default().iter().map(|f| f.parse()).collect::<Result<_, _>>().map_err(err)?,
        config: config.map(SimConfig::parse).transpose().map_err(err)?,
    })
}

fn to_py<'py>(py: Python<'py>, json: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (json,))
}

/// `(name, description)` of every built-in scenario.
#[pyfunction]
fn scenarios() -> Vec<(String, String)> {
    scenario::scenarios().into_iter().map(|s| (s.name.to_string(), s.about.to_string())).collect()
}

/// Runs one seed and returns its checked summary as a dict.
#[pyfunction]
#[pyo3(signature = (scenario, seed, *, mode=None, pow=None, t=None, value_size=None, delay=None, faults=None, config=None))]
#[allow(clippy::too_many_arguments)]
fn run<'py>(
    py: Python<'py>,
    scenario: &str,
    seed: u64,
    mode: Option<&str>,
    pow: Option<&str>,
    t: Option<usize>,
    value_size: Option<usize>,
    delay: Option<&str>,
    faults: Option<Vec<String>>,
    config: Option<&str>,
) -> PyResult<Bound<'py, PyAny>> {
    let sc = lookup(scenario)?;
    let ov = overrides(mode, pow, t, value_size, delay, faults, config)?;
    let r = scenario::run_seed(&sc, &ov, seed);
    to_py(py, &serde_json::to_string(&r).map_err(err)?)
}

/// Runs seeds `first..first + seeds` and returns one summary dict per seed.
#[pyfunction]
#[pyo3(signature = (scenario, seeds, first=0, *, mode=None, pow=None, t=None, value_size=None, delay=None, faults=None, config=None))]
#[allow(clippy::too_many_arguments)]
fn sweep<'py>(
    py: Python<'py>,
    scenario: &str,
    seeds: u64,
    first: u64,
    mode: Option<&str>,
    pow: Option<&str>,
    t: Option<usize>,
    value_size: Option<usize>,
    delay: Option<&str>,
    faults: Option<Vec<String>>,
    config: Option<&str>,
) -> PyResult<Bound<'py, PyAny>> {
    let sc = lookup(scenario)?;
    let ov = overrides(mode, pow, t, value_size, delay, faults, config)?;
    let rs = py.detach(|| scenario::sweep(&sc, &ov, first, seeds));
    to_py(py, &serde_json::to_string(&rs).map_err(err)?)
}

/// The event log of one seed as a list of dicts, plus the checked summary.
#[pyfunction]
fn events<'py>(py: Python<'py>, scenario: &str, seed: u64) -> PyResult<(Bound<'py, PyAny>, Bound<'py, PyAny>)> {
    let sc = lookup(scenario)?;
    let cfg = config_for(&sc, &Overrides::default(), seed);
    let report = simnet::run(&cfg).map_err(err)?;
    let summary = summarize(sc.name, &report, cfg.faults.iter().map(|f| f.to_string()).collect());
    Ok((
        to_py(py, &serde_json::to_string(&report.events).map_err(err)?)?,
        to_py(py, &serde_json::to_string(&summary).map_err(err)?)?,
    ))
}

/// Splits `value` into `3t + 1` fragments, any `t + 1` of which rebuild it.
#[pyfunction]
fn encode<'py>(py: Python<'py>, value: &[u8], t: usize) -> PyResult<Vec<Bound<'py, PyBytes>>> {
    let (frs, _) = erasure::encode(value, t + 1, 3 * t + 1).map_err(err)?;
    Ok(frs.iter().map(|f| PyBytes::new(py, &f.to_bytes())).collect())
}

/// Rebuilds a value from encoded fragments.
#[pyfunction]
fn decode<'py>(py: Python<'py>, fragments: Vec<Vec<u8>>, t: usize) -> PyResult<Bound<'py, PyBytes>> {
    let frs: Vec<Fragment> = fragments.iter().map(|b| Fragment::from_bytes(b)).collect::<Result<_, _>>().map_err(err)?;
    let v = erasure::decode(&frs, t + 1, 3 * t + 1).map_err(err)?;
    Ok(PyBytes::new(py, &v))
}

#[pymodule]
fn powerstore_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(scenarios, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(events, m)?)?;
    m.add_function(wrap_pyfunction!(encode, m)?)?;
    m.add_function(wrap_pyfunction!(decode, m)?)?;
    Ok(())
}
