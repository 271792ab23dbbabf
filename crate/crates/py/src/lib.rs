//! Python bindings: scenarios, open- and closed-loop runs, the window filter
//! and the spectral helpers. Structured results come back as plain dicts.

use std::path::PathBuf;

use pulselock_core as core;
use pulselock_core::{Error, RunKind, SampleSeries, ScenarioConfig, Taper};
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: Error) -> PyErr {
    match &e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        _ if e.is_validation() => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Round-trips any serialisable value through `json.loads`.
fn to_py<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn series(samples: Vec<f64>, sample_rate_hz: f64) -> PyResult<SampleSeries> {
    SampleSeries::new(sample_rate_hz, 0.0, samples).map_err(py_err)
}

/// A scenario configuration; `Scenario()` is the default two-beam setup.
#[pyclass(name = "Scenario", module = "pulselock")]
struct Scenario {
    inner: ScenarioConfig,
}

#[pymethods]
impl Scenario {
    #[new]
    fn new() -> Self {
        Self { inner: ScenarioConfig::defaults() }
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        ScenarioConfig::from_json(text).map(|inner| Self { inner }).map_err(py_err)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(py_err)
    }

    fn with_seed(&self, seed: u64) -> Self {
        Self { inner: self.inner.clone().with_seed(seed) }
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn duration_s(&self) -> f64 {
        self.inner.duration_s
    }

    #[setter]
    fn set_duration_s(&mut self, value: f64) {
        self.inner.duration_s = value;
    }

    #[getter]
    fn ad_rate_hz(&self) -> f64 {
        self.inner.ad_rate_hz
    }

    fn __repr__(&self) -> String {
        format!(
            "Scenario(beams={}, seed={}, duration_s={})",
            self.inner.beams.len(),
            self.inner.seed,
            self.inner.duration_s
        )
    }
}

/// Detector samples of the uncontrolled system at the AD rate.
#[pyfunction]
fn simulate_open_loop(scenario: PyRef<'_, Scenario>) -> PyResult<Vec<f64>> {
    core::simulate_open_loop(&scenario.inner).map(SampleSeries::into_samples).map_err(py_err)
}

/// Runs the locked system; returns its traces, pulse peaks and filter report.
#[pyfunction]
fn run_closed_loop<'py>(py: Python<'py>, scenario: PyRef<'_, Scenario>) -> PyResult<Bound<'py, PyDict>> {
    let run = core::run_closed_loop(&scenario.inner).map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("sample_rate_hz", run.intensity.sample_rate_hz())?;
    out.set_item("i_max", run.i_max)?;
    out.set_item("intensity", run.intensity.samples().to_vec())?;
    out.set_item("phase_diff", run.phase_diff.samples().to_vec())?;
    out.set_item("detector", run.detector.samples().to_vec())?;
    out.set_item("filtered", run.filtered.samples().to_vec())?;
    out.set_item("pulse_peaks", to_py(py, &run.pulse_peaks)?)?;
    out.set_item("report", to_py(py, &run.report)?)?;
    out.set_item("phase_cmd_rad", run.final_state.phase_cmd_rad.clone())?;
    Ok(out)
}

/// Window-filters one block with the scenario's detector settings.
#[pyfunction]
fn filter_block<'py>(
    py: Python<'py>,
    samples: Vec<f64>,
    scenario: PyRef<'_, Scenario>,
) -> PyResult<(Vec<f64>, Bound<'py, PyAny>)> {
    let params = scenario
        .inner
        .detector_params()
        .map_err(py_err)?
        .ok_or_else(|| PyValueError::new_err("scenario has no filter section"))?;
    let s = series(samples, scenario.inner.ad_rate_hz)?;
    let state = core::FilterState::new(params).map_err(py_err)?;
    let (y, _, report) = core::process_block(&s, state).map_err(py_err)?;
    Ok((y.into_samples(), to_py(py, &report)?))
}

/// Runs one scenario kind and writes its artifacts; returns the summary.
#[pyfunction]
fn run_scenario<'py>(
    py: Python<'py>,
    kind: &str,
    scenario: PyRef<'_, Scenario>,
    out_dir: PathBuf,
) -> PyResult<Bound<'py, PyAny>> {
    let kind: RunKind = kind.parse().map_err(py_err)?;
    let art = core::run_scenario(kind, &scenario.inner, &out_dir).map_err(py_err)?;
    to_py(py, &art.summary)
}

/// One-sided power spectrum in dB: `(freq_hz, level_db)`.
#[pyfunction]
#[pyo3(signature = (samples, sample_rate_hz, taper = "none"))]
fn power_spectrum_db(samples: Vec<f64>, sample_rate_hz: f64, taper: &str) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let taper: Taper = taper.parse().map_err(py_err)?;
    let spec = core::power_spectrum_db(&series(samples, sample_rate_hz)?, taper).map_err(py_err)?;
    let freqs = (0..spec.levels_db.len()).map(|k| spec.freq_of(k)).collect();
    Ok((freqs, spec.levels_db))
}

/// Phase noise from a random tone bank plus white noise, sampled at `rate_hz`.
#[pyfunction]
#[pyo3(signature = (seed, duration_s, rate_hz, n_components = 8, band_limit_hz = 5e3, max_amplitude_rad = std::f64::consts::TAU / 20.0, white_sigma_rad = 0.0))]
fn synth_phase_noise(
    seed: u64,
    duration_s: f64,
    rate_hz: f64,
    n_components: usize,
    band_limit_hz: f64,
    max_amplitude_rad: f64,
    white_sigma_rad: f64,
) -> PyResult<Vec<f64>> {
    let model = core::random_noise_model(n_components, band_limit_hz, max_amplitude_rad, white_sigma_rad, seed)
        .map_err(py_err)?;
    core::synth_phase_noise(&model, duration_s, rate_hz).map(SampleSeries::into_samples).map_err(py_err)
}

#[pyfunction]
fn pollution_ratio(y_prev: f64, y: f64, y_next: f64, eps: f64) -> f64 {
    core::pollution_ratio(y_prev, y, y_next, eps)
}

#[pyfunction]
#[pyo3(signature = (amplitudes, phases_rad, envelope = 1.0))]
fn combined_intensity(amplitudes: Vec<f64>, phases_rad: Vec<f64>, envelope: f64) -> PyResult<f64> {
    core::combined_intensity(&amplitudes, &phases_rad, envelope).map_err(py_err)
}

/// Phase error of `beam` from one integration period of filtered samples.
#[pyfunction]
fn demodulate_error(samples: Vec<f64>, scenario: PyRef<'_, Scenario>, beam: usize) -> PyResult<f64> {
    let dither = scenario
        .inner
        .controller
        .as_ref()
        .ok_or_else(|| PyValueError::new_err("scenario has no controller section"))?;
    let s = series(samples, scenario.inner.ad_rate_hz)?;
    core::demodulate_error(&s, dither, beam).map_err(py_err)
}

#[pyfunction]
fn wrap_phase(x: f64) -> f64 {
    core::wrap_phase(x)
}

#[pymodule]
fn pulselock(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Scenario>()?;
    m.add_function(wrap_pyfunction!(simulate_open_loop, m)?)?;
    m.add_function(wrap_pyfunction!(run_closed_loop, m)?)?;
    m.add_function(wrap_pyfunction!(filter_block, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(power_spectrum_db, m)?)?;
    m.add_function(wrap_pyfunction!(synth_phase_noise, m)?)?;
    m.add_function(wrap_pyfunction!(pollution_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(combined_intensity, m)?)?;
    m.add_function(wrap_pyfunction!(demodulate_error, m)?)?;
    m.add_function(wrap_pyfunction!(wrap_phase, m)?)?;
    Ok(())
}
