//! Pulsed beams, their coherent sum on the photodetector, and AD sampling.
//!
//! Every beam shares one pulse train. The detector sees
//! `R * S * e(t) * |sum_m A_m exp(j phi_m(t))|^2` where the envelope `e(t)` is
//! the CW pedestal plus the pulse train.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{NoiseModel, WhiteNoise};
use crate::scenario::ScenarioConfig;
use crate::waveform::SampleSeries;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PulseShape {
    #[default]
    Rectangular,
    /// Gaussian whose full width at half maximum is `broadened_width_s`.
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseTrain {
    pub f_rep_hz: f64,
    pub width_s: f64,
    pub broadened_width_s: f64,
    #[serde(default = "default_peak")]
    pub peak: f64,
    pub first_pulse_time_s: f64,
    #[serde(default)]
    pub shape: PulseShape,
    /// Snap `first_pulse_time_s` to the nearest AD sampling instant.
    #[serde(default = "default_true")]
    pub align_to_ad_grid: bool,
}

fn default_peak() -> f64 {
    1.0
}

fn default_true() -> bool {
    true
}

impl PulseTrain {
    pub fn period_s(&self) -> f64 {
        1.0 / self.f_rep_hz
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.f_rep_hz > 0.0) || !self.f_rep_hz.is_finite() {
            return Err(Error::config("pulse_train.f_rep_hz must be > 0"));
        }
        if !(self.width_s > 0.0) {
            return Err(Error::config("pulse_train.width_s must be > 0"));
        }
        if !(self.broadened_width_s >= self.width_s) {
            return Err(Error::config("pulse_train.broadened_width_s must be >= width_s"));
        }
        if !(self.broadened_width_s < self.period_s()) {
            return Err(Error::config("pulse_train.broadened_width_s must be shorter than the pulse period"));
        }
        if !(self.peak >= 0.0) || !self.peak.is_finite() {
            return Err(Error::config("pulse_train.peak must be >= 0"));
        }
        if !(self.first_pulse_time_s >= 0.0) {
            return Err(Error::config("pulse_train.first_pulse_time_s must be >= 0"));
        }
        Ok(())
    }
}

/// Normalised pulse intensity at time `t`. Rectangular pulses hold `peak` on
/// `[t_k, t_k + broadened_width_s]` with `t_k = first + k / f_rep`.
pub fn pulse_envelope(train: &PulseTrain, t: f64) -> f64 {
    let period = train.period_s();
    let since_first = t - train.first_pulse_time_s;
    let tol = 1e-9 * period;
    if since_first < -tol {
        // Gaussian tails of the first pulse still reach back a little.
        if train.shape == PulseShape::Rectangular {
            return 0.0;
        }
    }
    let k = (since_first * train.f_rep_hz).floor().max(0.0);
    let mut best = 0.0f64;
    // the previous pulse can still be on when t sits just past a period boundary
    for kk in [k - 1.0, k, k + 1.0] {
        if kk < 0.0 {
            continue;
        }
        let dt = since_first - kk * period;
        let v = match train.shape {
            PulseShape::Rectangular => {
                if dt >= -tol && dt <= train.broadened_width_s + tol {
                    train.peak
                } else {
                    0.0
                }
            }
            PulseShape::Gaussian => {
                let x = dt - 0.5 * train.broadened_width_s;
                let fwhm = train.broadened_width_s;
                train.peak * (-4.0 * std::f64::consts::LN_2 * x * x / (fwhm * fwhm)).exp()
            }
        };
        best = best.max(v);
    }
    best
}

/// `envelope * |sum A_m e^{j phi_m}|^2`, written as the sum of beam intensities
/// plus pairwise interference terms.
pub fn combined_intensity(amplitudes: &[f64], phases_rad: &[f64], envelope: f64) -> Result<f64> {
    if amplitudes.len() != phases_rad.len() || amplitudes.is_empty() {
        return Err(Error::input(format!(
            "need equal-length non-empty amplitude/phase lists, got {} and {}",
            amplitudes.len(),
            phases_rad.len()
        )));
    }
    if !(envelope >= 0.0) {
        return Err(Error::input("envelope must be >= 0"));
    }
    Ok(envelope * coherent_sum(amplitudes, phases_rad))
}

pub(crate) fn coherent_sum(amplitudes: &[f64], phases: &[f64]) -> f64 {
    let mut total: f64 = amplitudes.iter().map(|a| a * a).sum();
    for m1 in 0..amplitudes.len() {
        for m2 in (m1 + 1)..amplitudes.len() {
            total += 2.0 * amplitudes[m1] * amplitudes[m2] * (phases[m1] - phases[m2]).cos();
        }
    }
    total.max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    pub responsivity: f64,
    pub area: f64,
}

impl Default for DetectorModel {
    fn default() -> Self {
        Self { responsivity: 1.0, area: 1.0 }
    }
}

impl DetectorModel {
    pub fn gain(&self) -> f64 {
        self.responsivity * self.area
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.responsivity > 0.0) || !(self.area > 0.0) {
            return Err(Error::config("detector responsivity and area must both be > 0"));
        }
        Ok(())
    }
}

/// Photocurrent `R_PD * S * P(t)` on the same time base.
pub fn detector_current(power: &SampleSeries, det: &DetectorModel) -> Result<SampleSeries> {
    det.validate().map_err(|e| Error::input(e.to_string()))?;
    if let Some((i, p)) = power.samples().iter().enumerate().find(|(_, p)| !(**p >= 0.0)) {
        return Err(Error::input(format!("optical power sample {i} is negative ({p})")));
    }
    let g = det.gain();
    Ok(power.with_samples(power.samples().iter().map(|p| g * p).collect()))
}

/// Integer ratio `rate_hi / rate_lo`, if it is one.
pub(crate) fn integer_ratio(rate_hi: f64, rate_lo: f64) -> Option<u64> {
    if !(rate_lo > 0.0) || !(rate_hi >= rate_lo) {
        return None;
    }
    let r = rate_hi / rate_lo;
    let rounded = r.round();
    ((r - rounded).abs() <= 1e-9 * r).then_some(rounded as u64)
}

/// Point-picking decimation: keeps every `(rate / f_s)`-th sample from index 0.
/// There is deliberately no anti-alias filter; the converter grabs instantaneous values.
pub fn ad_sample(analog: &SampleSeries, f_s_hz: f64) -> Result<SampleSeries> {
    let ratio = integer_ratio(analog.sample_rate_hz(), f_s_hz).ok_or_else(|| {
        Error::input(format!("analog rate {} Hz is not an integer multiple of {f_s_hz} Hz", analog.sample_rate_hz()))
    })? as usize;
    let picked = analog.samples().iter().step_by(ratio).copied().collect();
    SampleSeries::new(f_s_hz, analog.t0_s(), picked)
}

struct Beam {
    amplitude: f64,
    initial_phase: f64,
    noise: NoiseModel,
    white: WhiteNoise,
}

/// Time-domain model of the combining setup, resolved from a scenario.
///
/// Time is indexed on the internal oversampling grid; AD sample `j` is internal
/// sample `j * ratio`, so evaluating the model only at AD instants is the same
/// as synthesising at the internal rate and decimating.
pub struct Combiner {
    beams: Vec<Beam>,
    amplitudes: Vec<f64>,
    pulse: Option<PulseTrain>,
    cw_level: f64,
    detector: DetectorModel,
    internal_rate_hz: f64,
    ad_rate_hz: f64,
    ratio: u64,
}

impl Combiner {
    pub fn new(cfg: &ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let models = cfg.noise_models()?;
        let beams: Vec<Beam> = cfg
            .beams
            .iter()
            .zip(models)
            .map(|(b, noise)| Beam {
                amplitude: b.amplitude,
                initial_phase: b.initial_phase_rad,
                white: noise.white(),
                noise,
            })
            .collect();
        let ratio = integer_ratio(cfg.internal_rate_hz, cfg.ad_rate_hz)
            .ok_or_else(|| Error::config("internal_rate_hz must be an integer multiple of ad_rate_hz"))?;
        Ok(Self {
            amplitudes: beams.iter().map(|b| b.amplitude).collect(),
            beams,
            pulse: cfg.effective_pulse_train(),
            cw_level: cfg.cw_level,
            detector: cfg.detector,
            internal_rate_hz: cfg.internal_rate_hz,
            ad_rate_hz: cfg.ad_rate_hz,
            ratio,
        })
    }

    pub fn n_beams(&self) -> usize {
        self.beams.len()
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }

    pub fn ad_rate_hz(&self) -> f64 {
        self.ad_rate_hz
    }

    pub fn internal_rate_hz(&self) -> f64 {
        self.internal_rate_hz
    }

    pub fn decimation(&self) -> u64 {
        self.ratio
    }

    pub fn pulse_train(&self) -> Option<&PulseTrain> {
        self.pulse.as_ref()
    }

    /// `R * S * (sum A)^2`: the CW-equivalent intensity at zero phase difference.
    pub fn i_max(&self) -> f64 {
        let s: f64 = self.amplitudes.iter().sum();
        self.detector.gain() * s * s
    }

    pub fn detector_gain(&self) -> f64 {
        self.detector.gain()
    }

    pub fn internal_time(&self, i: u64) -> f64 {
        i as f64 / self.internal_rate_hz
    }

    pub fn ad_time(&self, j: u64) -> f64 {
        self.internal_time(j * self.ratio)
    }

    /// CW pedestal plus pulse train.
    pub fn envelope(&self, t: f64) -> f64 {
        self.cw_level + self.pulse.as_ref().map_or(0.0, |p| pulse_envelope(p, t))
    }

    /// Uncontrolled optical phase of `beam` at internal index `i`: initial phase plus noise.
    pub fn free_phase(&mut self, beam: usize, i: u64) -> f64 {
        let t = self.internal_time(i);
        let b = &mut self.beams[beam];
        b.initial_phase + b.noise.tones_at(t) + b.white.at(i)
    }

    /// Fills `phases` with the free-running phases at internal index `i`.
    pub fn free_phases_into(&mut self, i: u64, phases: &mut Vec<f64>) {
        phases.clear();
        for m in 0..self.beams.len() {
            let p = self.free_phase(m, i);
            phases.push(p);
        }
    }

    /// Detector current for the given total phases at time `t`.
    pub fn detect(&self, phases: &[f64], t: f64) -> f64 {
        self.detector.gain() * self.envelope(t) * coherent_sum(&self.amplitudes, phases)
    }

    /// Full-rate analog detector current, `duration_s` long, with optional extra
    /// phase per beam (e.g. dithers) evaluated at each instant.
    pub fn analog(&mut self, duration_s: f64, mut extra: impl FnMut(usize, f64) -> f64) -> Result<SampleSeries> {
        let n = (duration_s * self.internal_rate_hz).round() as u64;
        let mut phases = Vec::with_capacity(self.beams.len());
        let mut out = Vec::with_capacity(n as usize);
        for i in 0..n {
            let t = self.internal_time(i);
            self.free_phases_into(i, &mut phases);
            for (m, p) in phases.iter_mut().enumerate() {
                *p += extra(m, t);
            }
            out.push(self.detect(&phases, t));
        }
        SampleSeries::new(self.internal_rate_hz, 0.0, out)
    }

    /// Detector current at the AD instants only.
    pub fn sampled(&mut self, duration_s: f64, mut extra: impl FnMut(usize, f64) -> f64) -> Result<SampleSeries> {
        let n = (duration_s * self.ad_rate_hz).round() as u64;
        let mut phases = Vec::with_capacity(self.beams.len());
        let mut out = Vec::with_capacity(n as usize);
        for j in 0..n {
            let i = j * self.ratio;
            let t = self.internal_time(i);
            self.free_phases_into(i, &mut phases);
            for (m, p) in phases.iter_mut().enumerate() {
                *p += extra(m, t);
            }
            out.push(self.detect(&phases, t));
        }
        SampleSeries::new(self.ad_rate_hz, 0.0, out)
    }

    /// Free-running phase of one beam at each AD instant.
    pub fn phase_noise_at_ad(&mut self, beam: usize, duration_s: f64) -> Result<SampleSeries> {
        if beam >= self.beams.len() {
            return Err(Error::input(format!("beam {beam} out of range")));
        }
        let n = (duration_s * self.ad_rate_hz).round() as u64;
        let init = self.beams[beam].initial_phase;
        let out = (0..n).map(|j| self.free_phase(beam, j * self.ratio) - init).collect();
        SampleSeries::new(self.ad_rate_hz, 0.0, out)
    }
}

/// Open-loop detector output at the AD rate: noise and pulses, dither tones if a
/// controller is configured, but no feedback.
pub fn simulate_open_loop(cfg: &ScenarioConfig) -> Result<SampleSeries> {
    let mut combiner = Combiner::new(cfg)?;
    let dither = cfg.controller.clone();
    combiner.sampled(cfg.duration_s, |m, t| {
        dither.as_ref().map_or(0.0, |d| {
            d.tones.get(m).map_or(0.0, |tone| tone.dither_amp_rad * (TAU * tone.dither_freq_hz * t).sin())
        })
    })
}
