//! Multi-dither phase locking.
//!
//! Each non-reference beam carries a small sinusoidal phase dither at its own
//! frequency. Synchronous demodulation of the (filtered) detector current at
//! that frequency yields a signal proportional to `sin(phi_m - phi_ref)`, which
//! an integrator feeds back to the beam's phase modulator.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::combiner::{coherent_sum, integer_ratio, pulse_envelope, Combiner};
use crate::error::{Error, Result};
use crate::filter::{DetectorParams, FilterReport, FilterState, WindowFilter};
use crate::scenario::ScenarioConfig;
use crate::waveform::SampleSeries;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DitherTone {
    /// 0 for the undithered reference beam.
    pub dither_freq_hz: f64,
    pub dither_amp_rad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DitherConfig {
    /// One entry per beam.
    pub tones: Vec<DitherTone>,
    pub integration_period_s: f64,
    pub gain: f64,
    pub reference_beam: usize,
}

impl DitherConfig {
    pub fn validate(&self, n_beams: usize, ad_rate_hz: f64, f_rep_hz: Option<f64>) -> Result<()> {
        if self.tones.len() != n_beams {
            return Err(Error::config(format!(
                "controller.tones has {} entries for {n_beams} beams",
                self.tones.len()
            )));
        }
        if self.reference_beam >= n_beams {
            return Err(Error::config("controller.reference_beam is out of range"));
        }
        if self.tones[self.reference_beam].dither_freq_hz != 0.0 {
            return Err(Error::config("the reference beam must not be dithered (dither_freq_hz = 0)"));
        }
        if !(self.integration_period_s > 0.0) {
            return Err(Error::config("controller.integration_period_s must be > 0"));
        }
        if !self.gain.is_finite() {
            return Err(Error::config("controller.gain must be finite"));
        }
        let t = self.integration_period_s;
        let samples = t * ad_rate_hz;
        if (samples - samples.round()).abs() > 1e-6 * samples.max(1.0) || samples.round() < 1.0 {
            return Err(Error::config("controller.integration_period_s must be an integer number of AD samples"));
        }
        let mut freqs = Vec::new();
        for (m, tone) in self.tones.iter().enumerate() {
            if m == self.reference_beam {
                continue;
            }
            let f = tone.dither_freq_hz;
            if !(f > 0.0) {
                return Err(Error::config(format!("beam {m}: dither_freq_hz must be > 0")));
            }
            if !(tone.dither_amp_rad > 0.0) {
                return Err(Error::config(format!("beam {m}: dither_amp_rad must be > 0")));
            }
            if f >= ad_rate_hz / 2.0 {
                return Err(Error::config(format!("beam {m}: dither tone above the AD Nyquist frequency")));
            }
            let cycles = f * t;
            if (cycles - cycles.round()).abs() > 1e-6 * cycles.max(1.0) || cycles.round() < 1.0 {
                return Err(Error::config(format!(
                    "beam {m}: integration period must hold an integer number of dither cycles"
                )));
            }
            if let Some(f_rep) = f_rep_hz {
                if !(f > f_rep) {
                    return Err(Error::config(format!(
                        "beam {m}: dither frequency {f} Hz must exceed the pulse repetition rate {f_rep} Hz"
                    )));
                }
            }
            freqs.push(f);
        }
        for (a, fa) in freqs.iter().enumerate() {
            for fb in &freqs[a + 1..] {
                if (fa - fb).abs() < 1.0 / t * (1.0 - 1e-9) {
                    return Err(Error::config(
                        "dither frequencies must be separated by at least 1 / integration_period_s",
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn samples_per_period(&self, ad_rate_hz: f64) -> usize {
        (self.integration_period_s * ad_rate_hz).round() as usize
    }
}

/// Controller memory between integration periods.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    /// Phase-modulator command per beam, wrapped to `(-pi, pi]`.
    pub phase_cmd_rad: Vec<f64>,
    /// Running sum of demodulated errors per beam.
    pub integral: Vec<f64>,
    pub reference_beam: usize,
    pub elapsed_samples: u64,
}

impl ControllerState {
    pub fn new(n_beams: usize, reference_beam: usize) -> Self {
        Self { phase_cmd_rad: vec![0.0; n_beams], integral: vec![0.0; n_beams], reference_beam, elapsed_samples: 0 }
    }
}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_phase(x: f64) -> f64 {
    let y = x - TAU * ((x - PI) / TAU).ceil();
    if y <= -PI {
        y + TAU
    } else {
        y
    }
}

pub fn dither_phase(config: &DitherConfig, beam: usize, t: f64) -> Result<f64> {
    let tone = config.tones.get(beam).ok_or_else(|| Error::input(format!("beam {beam} has no dither entry")))?;
    if beam == config.reference_beam || tone.dither_freq_hz == 0.0 {
        return Ok(0.0);
    }
    Ok(tone.dither_amp_rad * (TAU * tone.dither_freq_hz * t).sin())
}

/// Lock-in error for one beam over one integration period.
///
/// Correlates the signal with the beam's dither sine and negates the result,
/// so a positive error means the beam leads the intensity optimum.
pub fn demodulate_error(filtered: &SampleSeries, config: &DitherConfig, beam: usize) -> Result<f64> {
    let tone = config.tones.get(beam).ok_or_else(|| Error::input(format!("beam {beam} has no dither entry")))?;
    if beam == config.reference_beam || tone.dither_freq_hz == 0.0 {
        return Err(Error::input(format!("beam {beam} is not dithered")));
    }
    let n = config.samples_per_period(filtered.sample_rate_hz());
    if filtered.len() != n {
        return Err(Error::input(format!(
            "demodulation needs exactly one integration period ({n} samples), got {}",
            filtered.len()
        )));
    }
    Ok(correlate(filtered.samples(), filtered.t0_s(), filtered.sample_rate_hz(), tone.dither_freq_hz))
}

fn correlate(samples: &[f64], t0: f64, rate: f64, freq: f64) -> f64 {
    let acc: f64 = samples.iter().enumerate().map(|(j, y)| y * (TAU * freq * (t0 + j as f64 / rate)).sin()).sum();
    -2.0 * acc / samples.len() as f64
}

/// Integrator update: `cmd_m <- wrap(cmd_m - gain * error_m)` for every
/// non-reference beam, `errors` listed in beam order without the reference.
pub fn controller_step(state: &ControllerState, errors: &[f64], gain: f64) -> Result<ControllerState> {
    let n = state.phase_cmd_rad.len();
    if n == 0 || errors.len() + 1 != n {
        return Err(Error::input(format!(
            "expected {} errors for {n} beams, got {}",
            n.saturating_sub(1),
            errors.len()
        )));
    }
    let mut next = state.clone();
    let mut errs = errors.iter();
    for m in 0..n {
        if m == state.reference_beam {
            next.phase_cmd_rad[m] = 0.0;
            continue;
        }
        let e = *errs.next().expect("length checked");
        next.integral[m] += e;
        next.phase_cmd_rad[m] = wrap_phase(state.phase_cmd_rad[m] - gain * e);
    }
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulsePeak {
    pub t_s: f64,
    pub value: f64,
    /// Peak the pulse would have with every beam in phase and no dither.
    pub ideal: f64,
}

/// Traces of one closed-loop run.
#[derive(Debug, Clone)]
pub struct ClosedLoopRun {
    /// Combined intensity with the pulse envelope divided out, in detector units.
    pub intensity: SampleSeries,
    /// Residual phase difference (dither excluded) of the worst non-reference beam.
    pub phase_diff: SampleSeries,
    /// Raw AD samples of the detector, pulses included.
    pub detector: SampleSeries,
    /// What the demodulator saw.
    pub filtered: SampleSeries,
    pub pulse_peaks: Vec<PulsePeak>,
    pub report: FilterReport,
    pub i_max: f64,
    pub final_state: ControllerState,
}

/// Simulates the locked system one integration period at a time.
///
/// Each period: synthesise AD samples with noise, dither and the current
/// commands; run them through the window filter (which keeps its state for the
/// whole run); demodulate the most recent filtered period; update the commands.
pub fn run_closed_loop(cfg: &ScenarioConfig) -> Result<ClosedLoopRun> {
    let dither = cfg.controller.clone().ok_or_else(|| Error::config("closed-loop run needs a controller section"))?;
    let mut combiner = Combiner::new(cfg)?;
    let fs = cfg.ad_rate_hz;
    let n_total = (cfg.duration_s * fs).round() as u64;
    let block = dither.samples_per_period(fs) as u64;
    let n_beams = combiner.n_beams();
    let ref_beam = dither.reference_beam;
    let ratio = integer_ratio(cfg.internal_rate_hz, fs).expect("validated");

    let mut filter = match &cfg.filter {
        Some(fc) => {
            let train = cfg
                .effective_pulse_train()
                .ok_or_else(|| Error::config("the window filter needs a pulse train to size its windows"))?;
            let params = DetectorParams::derive(fc, fs, train.f_rep_hz, train.broadened_width_s)?;
            Some(WindowFilter::new(FilterState::new(params)?, fs)?)
        }
        None => None,
    };

    let dithered: Vec<usize> = (0..n_beams).filter(|&m| m != ref_beam).collect();
    let mut ctrl = ControllerState::new(n_beams, ref_beam);
    let gain = combiner.detector_gain();
    let i_max = combiner.i_max();
    let amplitudes = combiner.amplitudes().to_vec();
    let sum_amp: f64 = amplitudes.iter().sum();
    let pulse = combiner.pulse_train().cloned();

    let mut intensity = Vec::with_capacity(n_total as usize);
    let mut phase_diff = Vec::with_capacity(n_total as usize);
    let mut detector = Vec::with_capacity(n_total as usize);
    let mut filtered: Vec<f64> = Vec::with_capacity(n_total as usize);
    let mut peaks: Vec<PulsePeak> = Vec::new();
    let mut current_pulse: Option<(i64, PulsePeak)> = None;

    let mut free = Vec::with_capacity(n_beams);
    let mut total = vec![0.0; n_beams];
    let mut raw_block = Vec::with_capacity(block as usize);

    let mut j = 0u64;
    while j < n_total {
        let stop = (j + block).min(n_total);
        raw_block.clear();
        for jj in j..stop {
            let i = jj * ratio;
            let t = combiner.internal_time(i);
            combiner.free_phases_into(i, &mut free);
            let mut worst = 0.0f64;
            for m in 0..n_beams {
                let controlled = free[m] + ctrl.phase_cmd_rad[m];
                total[m] = controlled + dither_phase(&dither, m, t)?;
                if m != ref_beam {
                    let d = wrap_phase(controlled - (free[ref_beam] + ctrl.phase_cmd_rad[ref_beam]));
                    if d.abs() > worst.abs() {
                        worst = d;
                    }
                }
            }
            let y = combiner.detect(&total, t);
            detector.push(y);
            raw_block.push(y);
            intensity.push(gain * coherent_sum(&amplitudes, &total));
            phase_diff.push(worst);

            if let Some(train) = &pulse {
                let env = pulse_envelope(train, t);
                if env >= 0.5 * train.peak && train.peak > 0.0 {
                    let k = ((t - train.first_pulse_time_s) * train.f_rep_hz).round() as i64;
                    let ideal = gain * combiner.envelope(t) * sum_amp * sum_amp;
                    let candidate = PulsePeak { t_s: t, value: y, ideal };
                    match &mut current_pulse {
                        Some((kk, best)) if *kk == k => {
                            if y > best.value {
                                *best = candidate;
                            }
                        }
                        _ => {
                            if let Some((_, done)) = current_pulse.take() {
                                peaks.push(done);
                            }
                            current_pulse = Some((k, candidate));
                        }
                    }
                }
            }
        }

        match filter.as_mut() {
            Some(f) => filtered.extend(f.push(&raw_block)),
            None => filtered.extend_from_slice(&raw_block),
        }

        let have = filtered.len() as u64;
        if have >= block {
            let start = have - block;
            let window = &filtered[start as usize..];
            let t0 = start as f64 / fs;
            let errors: Vec<f64> =
                dithered.iter().map(|&m| correlate(window, t0, fs, dither.tones[m].dither_freq_hz)).collect();
            ctrl = controller_step(&ctrl, &errors, dither.gain)?;
        }
        ctrl.elapsed_samples = stop;
        j = stop;
    }
    if let Some((_, done)) = current_pulse {
        peaks.push(done);
    }
    let report = match filter {
        Some(mut f) => {
            filtered.extend(f.finish());
            let (_, report) = f.into_parts();
            report
        }
        None => FilterReport::default(),
    };

    Ok(ClosedLoopRun {
        intensity: SampleSeries::new(fs, 0.0, intensity)?,
        phase_diff: SampleSeries::new(fs, 0.0, phase_diff)?,
        detector: SampleSeries::new(fs, 0.0, detector)?,
        filtered: SampleSeries::new(fs, 0.0, filtered)?,
        pulse_peaks: peaks,
        report,
        i_max,
        final_state: ctrl,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> DitherConfig {
        DitherConfig {
            tones: vec![
                DitherTone { dither_freq_hz: 0.0, dither_amp_rad: 0.0 },
                DitherTone { dither_freq_hz: 312.5e3, dither_amp_rad: 0.2 },
            ],
            integration_period_s: 3.2e-6,
            gain: 1.0,
            reference_beam: 0,
        }
    }

    #[test]
    fn dither_values() {
        let c = cfg();
        assert_eq!(dither_phase(&c, 1, 0.0).unwrap(), 0.0);
        assert_eq!(dither_phase(&c, 0, 1.234e-6).unwrap(), 0.0);
        let max = (0..10_000)
            .map(|k| dither_phase(&c, 1, k as f64 / 10_000.0 / 312.5e3).unwrap())
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((max - 0.2).abs() < 1e-9);
        assert!(dither_phase(&c, 2, 0.0).is_err());
    }

    #[test]
    fn wrap_rule() {
        assert!((wrap_phase(PI + 0.05) - (-PI + 0.05)).abs() < 1e-12);
        assert_eq!(wrap_phase(PI), PI);
        assert!((wrap_phase(-PI) - PI).abs() < 1e-15);
        assert!((wrap_phase(7.0) - (7.0 - TAU)).abs() < 1e-12);
        assert_eq!(wrap_phase(0.3), 0.3);
    }

    #[test]
    fn step_examples() {
        let st = ControllerState::new(2, 0);
        assert_eq!(controller_step(&st, &[0.0], 0.1).unwrap(), st);

        let mut st = ControllerState::new(2, 0);
        st.phase_cmd_rad[1] = PI - 0.05;
        let next = controller_step(&st, &[-1.0], 0.1).unwrap();
        assert!((next.phase_cmd_rad[1] - (-PI + 0.05)).abs() < 1e-12);
        assert_eq!(next.phase_cmd_rad[0], 0.0);
        assert!(controller_step(&st, &[0.1, 0.2], 0.1).is_err());
    }

    #[test]
    fn demodulation_length_checked() {
        let c = cfg();
        let s = SampleSeries::new(10e6, 0.0, vec![1.0; 31]).unwrap();
        assert!(demodulate_error(&s, &c, 1).is_err());
        let s = SampleSeries::new(10e6, 0.0, vec![1.0; 32]).unwrap();
        assert!(demodulate_error(&s, &c, 1).unwrap().abs() < 1e-12);
        assert!(demodulate_error(&s, &c, 0).is_err());
    }

    #[test]
    fn validation() {
        let c = cfg();
        assert!(c.validate(2, 10e6, Some(10e3)).is_ok());
        assert!(c.validate(3, 10e6, Some(10e3)).is_err());
        let slow = DitherConfig {
            tones: vec![c.tones[0], DitherTone { dither_freq_hz: 5e3, dither_amp_rad: 0.2 }],
            integration_period_s: 200e-6,
            ..c.clone()
        };
        assert!(slow.validate(2, 10e6, Some(10e3)).is_err());
        let fractional = DitherConfig { integration_period_s: 3.0e-6, ..c };
        assert!(fractional.validate(2, 10e6, Some(10e3)).is_err());
    }
}
