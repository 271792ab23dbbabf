//! Scenario runs that write their results to disk, plus the metrics computed
//! from them.
//!
//! Every run directory holds `config.json` (the exact scenario used, seed
//! included), CSV series and spectra, and `summary.json`. Rerunning the echoed
//! config reproduces the directory byte for byte.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::combiner::{simulate_open_loop, Combiner};
use crate::dither::{run_closed_loop, ClosedLoopRun};
use crate::error::{Error, Result};
use crate::filter::{process_block, FilterReport, FilterState};
use crate::scenario::ScenarioConfig;
use crate::waveform::{peak_in_band, power_spectrum_db, PowerSpectrum, SampleSeries, Taper};

/// Phase error below which the loop counts as locked, in radians.
pub const LOCK_THRESHOLD_RAD: f64 = 0.1;
/// Length of the tail over which the final intensity ratio is averaged.
pub const FINAL_WINDOW_S: f64 = 0.2e-3;
/// Band around the fundamental pulse line.
pub const PULSE_BAND_HZ: (f64, f64) = (8e3, 12e3);
pub const GLOBAL_BAND_HZ: (f64, f64) = (0.0, 500e3);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunKind {
    OpenLoop,
    FilterOnly,
    ClosedLoop,
}

impl fmt::Display for RunKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RunKind::OpenLoop => "open-loop",
            RunKind::FilterOnly => "filter-only",
            RunKind::ClosedLoop => "closed-loop",
        })
    }
}

impl FromStr for RunKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "open-loop" => Ok(RunKind::OpenLoop),
            "filter-only" => Ok(RunKind::FilterOnly),
            "closed-loop" => Ok(RunKind::ClosedLoop),
            other => Err(Error::input(format!(
                "unknown run kind {other:?} (expected open-loop, filter-only or closed-loop)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandPeak {
    pub freq_hz: f64,
    pub level_db: f64,
}

/// Headline numbers of one run. Absent fields do not apply to the run kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub kind: RunKind,
    pub seed: u64,
    pub duration_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub i_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lock_time_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_intensity_ratio: Option<f64>,
    /// Smallest measured/ideal peak ratio among pulses after lock.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_locked_pulse_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detection_latency_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replaced_samples: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pulse_band_peak: Option<BandPeak>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub global_peak: Option<BandPeak>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub filtered_pulse_band_peak: Option<BandPeak>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub filtered_global_peak: Option<BandPeak>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pulse_band_suppression_db: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub global_suppression_db: Option<f64>,
}

impl Summary {
    fn new(kind: RunKind, cfg: &ScenarioConfig) -> Self {
        Self {
            kind,
            seed: cfg.seed,
            duration_s: cfg.duration_s,
            i_max: None,
            lock_time_s: None,
            final_intensity_ratio: None,
            min_locked_pulse_ratio: None,
            detection_latency_s: None,
            replaced_samples: None,
            pulse_band_peak: None,
            global_peak: None,
            filtered_pulse_band_peak: None,
            filtered_global_peak: None,
            pulse_band_suppression_db: None,
            global_suppression_db: None,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("summary serialises");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub out_dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub summary: Summary,
}

/// First time after which `|phase_diff|` stays below `threshold` until the
/// end of the trace; `None` if the last sample is not below it.
pub fn lock_time(phase_diff: &SampleSeries, threshold: f64) -> Option<f64> {
    let s = phase_diff.samples();
    match s.iter().rposition(|x| !(x.abs() < threshold)) {
        None => Some(phase_diff.t0_s()),
        Some(i) if i + 1 == s.len() => None,
        Some(i) => Some(phase_diff.time_of(i + 1)),
    }
}

/// Mean of the last `window_s` of `intensity`, divided by `i_max`.
pub fn final_intensity_ratio(intensity: &SampleSeries, i_max: f64, window_s: f64) -> Result<f64> {
    if intensity.is_empty() {
        return Err(Error::input("empty intensity trace"));
    }
    if !(i_max > 0.0) {
        return Err(Error::input("i_max must be > 0"));
    }
    let n = ((window_s * intensity.sample_rate_hz()).round() as usize).clamp(1, intensity.len());
    let tail = &intensity.samples()[intensity.len() - n..];
    Ok(tail.iter().sum::<f64>() / n as f64 / i_max)
}

/// Peak level in `[f_lo, f_hi]` of `before` minus that of `after`.
pub fn compare_spectra(before: &PowerSpectrum, after: &PowerSpectrum, f_lo: f64, f_hi: f64) -> Result<f64> {
    let same_grid = before.levels_db.len() == after.levels_db.len()
        && (before.freq_resolution_hz - after.freq_resolution_hz).abs()
            <= 1e-9 * before.freq_resolution_hz.abs().max(after.freq_resolution_hz.abs());
    if !same_grid {
        return Err(Error::input(format!(
            "spectra are on different frequency grids ({} bins at {} Hz vs {} bins at {} Hz)",
            before.levels_db.len(),
            before.freq_resolution_hz,
            after.levels_db.len(),
            after.freq_resolution_hz
        )));
    }
    let (_, b) = peak_in_band(before, f_lo, f_hi)?;
    let (_, a) = peak_in_band(after, f_lo, f_hi)?;
    Ok(b - a)
}

fn band_peak(spec: &PowerSpectrum, band: (f64, f64)) -> Result<BandPeak> {
    let (freq_hz, level_db) = peak_in_band(spec, band.0, band.1.min(spec.nyquist_hz))?;
    Ok(BandPeak { freq_hz, level_db })
}

/// Spectrum used for every comparison: mean removed, no taper.
pub fn analysis_spectrum(series: &SampleSeries) -> Result<PowerSpectrum> {
    power_spectrum_db(&series.ac_coupled(), Taper::None)
}

/// Runs the whole open-loop detector trace through a fresh window filter.
pub fn filter_series(cfg: &ScenarioConfig, raw: &SampleSeries) -> Result<(SampleSeries, FilterReport)> {
    let params = cfg.detector_params()?.ok_or_else(|| Error::config("filter-only run needs a filter section"))?;
    let (filtered, _, report) = process_block(raw, FilterState::new(params)?)?;
    Ok((filtered, report))
}

struct Writer {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Writer {
    fn text(&mut self, name: &str, body: &str) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        self.files.push(path);
        Ok(())
    }

    fn series(&mut self, name: &str, s: &SampleSeries, header: &str) -> Result<()> {
        self.text(name, &s.to_csv(header))
    }

    fn spectrum(&mut self, name: &str, s: &PowerSpectrum) -> Result<()> {
        self.text(name, &s.to_csv())
    }
}

fn check_kind(kind: RunKind, cfg: &ScenarioConfig) -> Result<()> {
    cfg.validate()?;
    match kind {
        RunKind::OpenLoop => Ok(()),
        RunKind::FilterOnly => {
            if cfg.filter.is_none() {
                return Err(Error::config("filter-only run needs a filter section"));
            }
            let params = cfg.detector_params()?.expect("filter present");
            let n = (cfg.duration_s * cfg.ad_rate_hz).round() as usize;
            if n < 2 * params.period_samples {
                return Err(Error::config("duration_s must cover at least 2 pulse periods for filtering"));
            }
            Ok(())
        }
        RunKind::ClosedLoop => {
            if cfg.controller.is_none() {
                return Err(Error::config("closed-loop run needs a controller section"));
            }
            Ok(())
        }
    }
}

/// Runs one scenario and writes its artifacts under `out_dir`.
///
/// The config is validated before anything is written, so a rejected config
/// leaves no partial output behind.
pub fn run_scenario(kind: RunKind, cfg: &ScenarioConfig, out_dir: &Path) -> Result<RunArtifacts> {
    check_kind(kind, cfg)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut w = Writer { dir: out_dir.to_path_buf(), files: Vec::new() };
    w.text("config.json", &cfg.to_json())?;
    let mut summary = Summary::new(kind, cfg);

    match kind {
        RunKind::OpenLoop => {
            let mut combiner = Combiner::new(cfg)?;
            for m in 0..combiner.n_beams() {
                let noise = combiner.phase_noise_at_ad(m, cfg.duration_s)?;
                w.series(&format!("noise_beam{m}.csv"), &noise, "rad")?;
                w.spectrum(&format!("noise_beam{m}_spectrum.csv"), &analysis_spectrum(&noise)?)?;
            }
            let raw = simulate_open_loop(cfg)?;
            let spec = analysis_spectrum(&raw)?;
            w.series("detector.csv", &raw, "value")?;
            w.spectrum("detector_spectrum.csv", &spec)?;
            summary.i_max = Some(combiner.i_max());
            summary.pulse_band_peak = Some(band_peak(&spec, PULSE_BAND_HZ)?);
            summary.global_peak = Some(band_peak(&spec, GLOBAL_BAND_HZ)?);
        }
        RunKind::FilterOnly => {
            let raw = simulate_open_loop(cfg)?;
            let (filtered, report) = filter_series(cfg, &raw)?;
            let before = analysis_spectrum(&raw)?;
            let after = analysis_spectrum(&filtered)?;
            w.series("detector.csv", &raw, "value")?;
            w.spectrum("detector_spectrum.csv", &before)?;
            w.series("filtered.csv", &filtered, "value")?;
            w.spectrum("filtered_spectrum.csv", &after)?;
            w.text("filter_report.json", &report_json(&report))?;
            summary.detection_latency_s = report.detection_latency_s;
            summary.replaced_samples = Some(report.replaced_samples());
            summary.pulse_band_peak = Some(band_peak(&before, PULSE_BAND_HZ)?);
            summary.global_peak = Some(band_peak(&before, GLOBAL_BAND_HZ)?);
            summary.filtered_pulse_band_peak = Some(band_peak(&after, PULSE_BAND_HZ)?);
            summary.filtered_global_peak = Some(band_peak(&after, GLOBAL_BAND_HZ)?);
            summary.pulse_band_suppression_db =
                Some(compare_spectra(&before, &after, PULSE_BAND_HZ.0, PULSE_BAND_HZ.1)?);
            summary.global_suppression_db =
                Some(compare_spectra(&before, &after, GLOBAL_BAND_HZ.0, GLOBAL_BAND_HZ.1.min(before.nyquist_hz))?);
        }
        RunKind::ClosedLoop => {
            let run = run_closed_loop(cfg)?;
            write_closed_loop(&mut w, &run)?;
            fill_closed_loop_summary(&mut summary, &run)?;
        }
    }
    w.text("summary.json", &summary.to_json())?;
    Ok(RunArtifacts { out_dir: out_dir.to_path_buf(), files: w.files, summary })
}

fn report_json(report: &FilterReport) -> String {
    let mut s = report.to_json();
    s.push('\n');
    s
}

fn write_closed_loop(w: &mut Writer, run: &ClosedLoopRun) -> Result<()> {
    w.series("intensity.csv", &run.intensity, "value")?;
    w.series("phase_diff.csv", &run.phase_diff, "rad")?;
    w.series("detector.csv", &run.detector, "value")?;
    w.series("filtered.csv", &run.filtered, "value")?;
    w.spectrum("detector_spectrum.csv", &analysis_spectrum(&run.detector)?)?;
    w.spectrum("filtered_spectrum.csv", &analysis_spectrum(&run.filtered)?)?;
    let mut peaks = String::from("t_s,value,ideal\n");
    for p in &run.pulse_peaks {
        peaks.push_str(&format!("{},{},{}\n", p.t_s, p.value, p.ideal));
    }
    w.text("pulse_peaks.csv", &peaks)?;
    w.text("filter_report.json", &report_json(&run.report))
}

/// Fills lock time, final intensity ratio and pulse-peak statistics.
pub fn fill_closed_loop_summary(summary: &mut Summary, run: &ClosedLoopRun) -> Result<()> {
    let lock = lock_time(&run.phase_diff, LOCK_THRESHOLD_RAD);
    summary.i_max = Some(run.i_max);
    summary.lock_time_s = lock;
    summary.final_intensity_ratio = Some(final_intensity_ratio(&run.intensity, run.i_max, FINAL_WINDOW_S)?);
    summary.min_locked_pulse_ratio = lock.and_then(|t_lock| {
        run.pulse_peaks.iter().filter(|p| p.t_s >= t_lock && p.ideal > 0.0).map(|p| p.value / p.ideal).reduce(f64::min)
    });
    summary.detection_latency_s = run.report.detection_latency_s;
    summary.replaced_samples = Some(run.report.replaced_samples());
    Ok(())
}

/// Outcome of one sweep member.
#[derive(Debug)]
pub struct SweepEntry {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub result: Result<Summary>,
}

/// Runs `kind` once per seed, concurrently, each into `out_root/seed_<n>`.
pub fn sweep(kind: RunKind, cfg: &ScenarioConfig, seeds: &[u64], out_root: &Path) -> Vec<SweepEntry> {
    seeds
        .par_iter()
        .map(|&seed| {
            let out_dir = out_root.join(format!("seed_{seed}"));
            let run_cfg = cfg.clone().with_seed(seed);
            let result = run_scenario(kind, &run_cfg, &out_dir).map(|a| a.summary);
            SweepEntry { seed, out_dir, result }
        })
        .collect()
}
