//! Environmental phase noise: a bank of random sinusoids plus Gaussian white noise.
//!
//! White-noise draws are counter based: the value at sample index `k` depends
//! only on the model seed and `k`, so a waveform can be evaluated at any subset
//! of instants (for example only at the AD sampling instants of a 1 GHz grid)
//! and agree bit for bit with the full-rate synthesis.

use std::f64::consts::TAU;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::waveform::SampleSeries;

/// Sum of tone amplitudes for a lambda/20 path excursion, in radians.
pub const DEFAULT_MAX_AMPLITUDE_RAD: f64 = TAU / 20.0;
pub const DEFAULT_BAND_LIMIT_HZ: f64 = 5e3;
pub const DEFAULT_N_COMPONENTS: usize = 8;

// ChaCha words reserved per white-noise sample; the normal sampler rarely needs more than 2.
const WORDS_PER_SAMPLE: u128 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinusoidComponent {
    pub amplitude_rad: f64,
    pub freq_hz: f64,
    pub phase_rad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub components: Vec<SinusoidComponent>,
    pub white_sigma_rad: f64,
    pub seed: u64,
}

impl NoiseModel {
    /// A model that produces exactly zero.
    pub fn silent() -> Self {
        Self { components: Vec::new(), white_sigma_rad: 0.0, seed: 0 }
    }

    pub fn total_amplitude_rad(&self) -> f64 {
        self.components.iter().map(|c| c.amplitude_rad).sum()
    }

    pub fn max_freq_hz(&self) -> f64 {
        self.components.iter().map(|c| c.freq_hz).fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.white_sigma_rad >= 0.0) {
            return Err(Error::input(format!("white_sigma_rad must be >= 0, got {}", self.white_sigma_rad)));
        }
        for (i, c) in self.components.iter().enumerate() {
            if !(c.amplitude_rad >= 0.0) {
                return Err(Error::input(format!("component {i}: amplitude_rad must be >= 0")));
            }
            if !(c.freq_hz > 0.0) || !c.freq_hz.is_finite() {
                return Err(Error::input(format!("component {i}: freq_hz must be > 0")));
            }
            if !c.phase_rad.is_finite() {
                return Err(Error::input(format!("component {i}: phase_rad must be finite")));
            }
        }
        Ok(())
    }

    /// Deterministic part of the noise at time `t`.
    pub fn tones_at(&self, t: f64) -> f64 {
        self.components.iter().map(|c| c.amplitude_rad * (TAU * c.freq_hz * t + c.phase_rad).sin()).sum()
    }

    pub fn white(&self) -> WhiteNoise {
        WhiteNoise::new(self.seed, self.white_sigma_rad)
    }
}

/// Counter-indexed Gaussian white noise.
pub struct WhiteNoise {
    rng: ChaCha8Rng,
    sigma: f64,
}

impl WhiteNoise {
    pub fn new(seed: u64, sigma: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // stream 0 is used to draw the tone parameters
        rng.set_stream(1);
        Self { rng, sigma }
    }

    /// Draw for sample index `k`.
    pub fn at(&mut self, k: u64) -> f64 {
        if self.sigma == 0.0 {
            return 0.0;
        }
        self.rng.set_word_pos(k as u128 * WORDS_PER_SAMPLE);
        let z: f64 = self.rng.sample(StandardNormal);
        self.sigma * z
    }
}

/// Draws a random tone bank: frequencies uniform in `(0, band_limit_hz]`,
/// phases uniform in `[0, 2pi)`, amplitudes uniform and then scaled so that
/// they sum to `max_amplitude_rad`.
pub fn random_noise_model(
    n_components: usize,
    band_limit_hz: f64,
    max_amplitude_rad: f64,
    white_sigma_rad: f64,
    seed: u64,
) -> Result<NoiseModel> {
    if !(band_limit_hz > 0.0) || !band_limit_hz.is_finite() {
        return Err(Error::input(format!("band_limit_hz must be > 0, got {band_limit_hz}")));
    }
    if !(max_amplitude_rad >= 0.0) || !max_amplitude_rad.is_finite() {
        return Err(Error::input(format!("max_amplitude_rad must be >= 0, got {max_amplitude_rad}")));
    }
    if !(white_sigma_rad >= 0.0) || !white_sigma_rad.is_finite() {
        return Err(Error::input(format!("white_sigma_rad must be >= 0, got {white_sigma_rad}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut components: Vec<SinusoidComponent> = (0..n_components)
        .map(|_| {
            let u_f: f64 = rng.random();
            let u_p: f64 = rng.random();
            // (0, 1] keeps every tone alive before normalisation
            let raw_amp = 1.0 - rng.random::<f64>();
            SinusoidComponent { amplitude_rad: raw_amp, freq_hz: band_limit_hz * (1.0 - u_f), phase_rad: TAU * u_p }
        })
        .collect();
    let raw_sum: f64 = components.iter().map(|c| c.amplitude_rad).sum();
    if raw_sum > 0.0 {
        for c in &mut components {
            c.amplitude_rad *= max_amplitude_rad / raw_sum;
        }
    }
    Ok(NoiseModel { components, white_sigma_rad, seed })
}

/// Per-beam seed derived from a scenario seed.
pub fn derive_seed(scenario_seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(scenario_seed);
    rng.set_stream(stream.wrapping_add(2));
    rng.next_u64()
}

/// Synthesises `duration_s` of phase noise at `sample_rate_hz`, in radians.
pub fn synth_phase_noise(model: &NoiseModel, duration_s: f64, sample_rate_hz: f64) -> Result<SampleSeries> {
    model.validate()?;
    if !(duration_s > 0.0) || !duration_s.is_finite() {
        return Err(Error::input(format!("duration_s must be > 0, got {duration_s}")));
    }
    if !(sample_rate_hz > 2.0 * model.max_freq_hz()) {
        return Err(Error::input(format!(
            "sample rate {sample_rate_hz} Hz is not above twice the highest tone ({} Hz)",
            model.max_freq_hz()
        )));
    }
    let n = (duration_s * sample_rate_hz).round() as usize;
    if n == 0 {
        return Err(Error::input("duration shorter than one sample"));
    }
    let mut white = model.white();
    let samples = (0..n).map(|k| model.tones_at(k as f64 / sample_rate_hz) + white.at(k as u64)).collect();
    SampleSeries::new(sample_rate_hz, 0.0, samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_bank_is_white_only() {
        let m = random_noise_model(0, 5e3, 0.3, 0.01, 7).unwrap();
        assert!(m.components.is_empty());
        assert_eq!(m.white_sigma_rad, 0.01);
    }

    #[test]
    fn same_seed_same_model() {
        let a = random_noise_model(8, 5e3, 0.3142, 0.0, 42).unwrap();
        let b = random_noise_model(8, 5e3, 0.3142, 0.0, 42).unwrap();
        assert_eq!(a, b);
        let c = random_noise_model(8, 5e3, 0.3142, 0.0, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn generator_postconditions() {
        let m = random_noise_model(8, 5e3, 0.3142, 0.0, 42).unwrap();
        assert_eq!(m.components.len(), 8);
        for c in &m.components {
            assert!(c.freq_hz > 0.0 && c.freq_hz <= 5000.0);
            assert!(c.phase_rad >= 0.0 && c.phase_rad < TAU);
            assert!(c.amplitude_rad >= 0.0);
        }
        assert!((m.total_amplitude_rad() - 0.3142).abs() < 1e-12);
    }

    #[test]
    fn negative_parameters_rejected() {
        assert!(random_noise_model(3, 5e3, -0.1, 0.0, 1).is_err());
        assert!(random_noise_model(3, 5e3, 0.1, -0.01, 1).is_err());
        assert!(random_noise_model(3, 0.0, 0.1, 0.0, 1).is_err());
    }

    #[test]
    fn zero_model_synthesises_zeros() {
        let s = synth_phase_noise(&NoiseModel::silent(), 1e-3, 1e6).unwrap();
        assert_eq!(s.len(), 1000);
        assert!(s.samples().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn single_tone_matches_direct_evaluation() {
        let model = NoiseModel {
            components: vec![SinusoidComponent { amplitude_rad: 0.1, freq_hz: 1000.0, phase_rad: 0.0 }],
            white_sigma_rad: 0.0,
            seed: 3,
        };
        let s = synth_phase_noise(&model, 1e-3, 10e6).unwrap();
        assert_eq!(s.len(), 10_000);
        for (j, &x) in s.samples().iter().enumerate() {
            let t = j as f64 / 10e6;
            assert!((x - 0.1 * (TAU * 1000.0 * t).sin()).abs() < 1e-12);
        }
    }

    #[test]
    fn sub_nyquist_rate_rejected() {
        let model = random_noise_model(4, 5e3, 0.3, 0.0, 1).unwrap();
        assert!(synth_phase_noise(&model, 1e-3, 5e3).is_err());
    }

    #[test]
    fn white_noise_statistics() {
        let model = NoiseModel { components: vec![], white_sigma_rad: 0.01, seed: 11 };
        let s = synth_phase_noise(&model, 1.0, 1e6).unwrap();
        let n = s.len() as f64;
        assert_eq!(s.len(), 1_000_000);
        let mean = s.mean();
        let var = s.samples().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() <= 3.0 * 0.01 / n.sqrt(), "mean {mean}");
        assert!((var.sqrt() - 0.01).abs() <= 0.02 * 0.01, "std {}", var.sqrt());
    }

    #[test]
    fn counter_draws_are_position_independent() {
        let mut a = WhiteNoise::new(5, 1.0);
        let mut b = WhiteNoise::new(5, 1.0);
        let forward: Vec<f64> = (0..50).map(|k| a.at(k)).collect();
        let backward: Vec<f64> = (0..50).rev().map(|k| b.at(k)).collect();
        let backward: Vec<f64> = backward.into_iter().rev().collect();
        assert_eq!(forward, backward);
    }

    #[test]
    fn derived_seeds_differ_per_stream() {
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
        assert_eq!(derive_seed(9, 3), derive_seed(9, 3));
    }
}
