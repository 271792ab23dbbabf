//! Full experiment description, shared by every runner and by the JSON files
//! the CLI reads.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::combiner::{integer_ratio, DetectorModel, PulseShape, PulseTrain};
use crate::dither::{DitherConfig, DitherTone};
use crate::error::{Error, Result};
use crate::filter::{DetectorParams, FilterConfig};
use crate::noise::{
    derive_seed, random_noise_model, NoiseModel, DEFAULT_BAND_LIMIT_HZ, DEFAULT_MAX_AMPLITUDE_RAD, DEFAULT_N_COMPONENTS,
};

/// How a beam's phase noise is obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSpec {
    /// Drawn from the scenario seed, one derived stream per beam.
    Random {
        n_components: usize,
        band_limit_hz: f64,
        max_amplitude_rad: f64,
        white_sigma_rad: f64,
    },
    Explicit(NoiseModel),
    None,
}

impl NoiseSpec {
    /// Eight tones below 5 kHz up to lambda/20 in total, plus 2e-3 rad of white noise.
    pub fn standard() -> Self {
        NoiseSpec::Random {
            n_components: DEFAULT_N_COMPONENTS,
            band_limit_hz: DEFAULT_BAND_LIMIT_HZ,
            max_amplitude_rad: DEFAULT_MAX_AMPLITUDE_RAD,
            white_sigma_rad: 2e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamConfig {
    pub amplitude: f64,
    pub noise_model: NoiseSpec,
    #[serde(default)]
    pub initial_phase_rad: f64,
}

fn default_cw_level() -> f64 {
    1.0
}

fn default_internal_rate() -> f64 {
    1e9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub beams: Vec<BeamConfig>,
    /// `null` runs a pure CW beam.
    pub pulse_train: Option<PulseTrain>,
    /// CW pedestal under the pulses, in the same units as the pulse peak.
    #[serde(default = "default_cw_level")]
    pub cw_level: f64,
    #[serde(default)]
    pub detector: DetectorModel,
    pub ad_rate_hz: f64,
    #[serde(default = "default_internal_rate")]
    pub internal_rate_hz: f64,
    /// `null` disables the window filter.
    pub filter: Option<FilterConfig>,
    /// `null` disables dithering and feedback.
    pub controller: Option<DitherConfig>,
    pub duration_s: f64,
    pub seed: u64,
}

impl ScenarioConfig {
    /// Two equal beams, 10 kHz pulses of 10 ns, 10 MHz AD, 100 ns windows,
    /// five confirmation windows, dither lock on beam 1, 2 ms of simulated time.
    pub fn defaults() -> Self {
        Self {
            beams: vec![
                BeamConfig { amplitude: 1.0, noise_model: NoiseSpec::standard(), initial_phase_rad: 0.0 },
                BeamConfig { amplitude: 1.0, noise_model: NoiseSpec::standard(), initial_phase_rad: 1.0 },
            ],
            pulse_train: Some(PulseTrain {
                f_rep_hz: 10e3,
                width_s: 10e-9,
                broadened_width_s: 10e-9,
                peak: 1000.0,
                first_pulse_time_s: 50e-6,
                shape: PulseShape::Rectangular,
                align_to_ad_grid: true,
            }),
            cw_level: 1.0,
            detector: DetectorModel::default(),
            ad_rate_hz: 10e6,
            internal_rate_hz: 1e9,
            filter: Some(FilterConfig::default()),
            controller: Some(DitherConfig {
                tones: vec![
                    DitherTone { dither_freq_hz: 0.0, dither_amp_rad: 0.0 },
                    DitherTone { dither_freq_hz: 312.5e3, dither_amp_rad: 0.2 },
                ],
                integration_period_s: 3.2e-6,
                gain: 1.75,
                reference_beam: 0,
            }),
            duration_s: 2e-3,
            seed: 1,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse { context: "scenario JSON".into(), message: e.to_string() })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Parse { context: path.display().to_string(), message: e.to_string() })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("scenario serialises");
        s.push('\n');
        s
    }

    /// Checks every invariant; the error message names the one that failed.
    pub fn validate(&self) -> Result<()> {
        if self.beams.is_empty() {
            return Err(Error::config("beams must not be empty"));
        }
        for (m, b) in self.beams.iter().enumerate() {
            if !(b.amplitude >= 0.0) || !b.amplitude.is_finite() {
                return Err(Error::config(format!("beams[{m}].amplitude must be >= 0")));
            }
            if !b.initial_phase_rad.is_finite() {
                return Err(Error::config(format!("beams[{m}].initial_phase_rad must be finite")));
            }
        }
        if !(self.ad_rate_hz > 0.0) || !self.ad_rate_hz.is_finite() {
            return Err(Error::config("ad_rate_hz must be > 0"));
        }
        if integer_ratio(self.internal_rate_hz, self.ad_rate_hz).is_none() {
            return Err(Error::config("internal_rate_hz must be an integer multiple of ad_rate_hz"));
        }
        if !(self.cw_level >= 0.0) || !self.cw_level.is_finite() {
            return Err(Error::config("cw_level must be >= 0"));
        }
        self.detector.validate()?;
        if !(self.duration_s > 0.0) || !self.duration_s.is_finite() {
            return Err(Error::config("duration_s must be > 0"));
        }
        if let Some(p) = &self.pulse_train {
            p.validate()?;
            if self.duration_s < 2.0 * p.period_s() * (1.0 - 1e-12) {
                return Err(Error::config(format!(
                    "duration_s ({} s) must cover at least 2 pulse periods ({} s)",
                    self.duration_s,
                    2.0 * p.period_s()
                )));
            }
        }
        if (self.duration_s * self.ad_rate_hz).round() < 1.0 {
            return Err(Error::config("duration_s is shorter than one AD sample"));
        }
        for model in self.noise_models()? {
            model.validate().map_err(|e| Error::config(e.to_string()))?;
            if 2.0 * model.max_freq_hz() >= self.ad_rate_hz {
                return Err(Error::config("phase-noise tones must lie below the AD Nyquist frequency"));
            }
        }
        if self.filter.is_some() {
            self.detector_params()?;
        }
        if let Some(c) = &self.controller {
            c.validate(self.beams.len(), self.ad_rate_hz, self.pulse_train.as_ref().map(|p| p.f_rep_hz))?;
        }
        Ok(())
    }

    /// Resolved per-beam noise models.
    pub fn noise_models(&self) -> Result<Vec<NoiseModel>> {
        self.beams
            .iter()
            .enumerate()
            .map(|(m, b)| match &b.noise_model {
                NoiseSpec::Random { n_components, band_limit_hz, max_amplitude_rad, white_sigma_rad } => {
                    random_noise_model(
                        *n_components,
                        *band_limit_hz,
                        *max_amplitude_rad,
                        *white_sigma_rad,
                        derive_seed(self.seed, m as u64),
                    )
                    .map_err(|e| Error::config(format!("beams[{m}].noise_model: {e}")))
                }
                NoiseSpec::Explicit(model) => Ok(model.clone()),
                NoiseSpec::None => Ok(NoiseModel::silent()),
            })
            .collect()
    }

    /// Pulse train with `first_pulse_time_s` snapped to the AD grid when requested.
    pub fn effective_pulse_train(&self) -> Option<PulseTrain> {
        let mut p = self.pulse_train.clone()?;
        if p.align_to_ad_grid && self.ad_rate_hz > 0.0 {
            p.first_pulse_time_s = (p.first_pulse_time_s * self.ad_rate_hz).round() / self.ad_rate_hz;
        }
        Some(p)
    }

    /// Filter parameters in AD samples, or `None` when the filter is disabled.
    pub fn detector_params(&self) -> Result<Option<DetectorParams>> {
        let Some(fc) = &self.filter else {
            return Ok(None);
        };
        let train =
            self.pulse_train.as_ref().ok_or_else(|| Error::config("filter needs a pulse_train to size its windows"))?;
        DetectorParams::derive(fc, self.ad_rate_hz, train.f_rep_hz, train.broadened_width_s).map(Some)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}
