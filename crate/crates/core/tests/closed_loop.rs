//! Closed-loop behaviour of the dither lock on CW and pulsed scenarios.

use std::f64::consts::TAU;

use approx::assert_abs_diff_eq;
use pulselock_core::combiner::combined_intensity;
use pulselock_core::dither::{demodulate_error, run_closed_loop};
use pulselock_core::scenario::{BeamConfig, NoiseSpec, ScenarioConfig};
use pulselock_core::waveform::SampleSeries;

/// Noise-free CW scenario: two unit beams, beam 1 starting `offset` rad away.
fn quiet_cw(offset: f64, duration_s: f64) -> ScenarioConfig {
    let base = ScenarioConfig::defaults();
    let mut beams: Vec<BeamConfig> =
        base.beams.iter().map(|b| BeamConfig { noise_model: NoiseSpec::None, ..b.clone() }).collect();
    beams[1].initial_phase_rad = offset;
    ScenarioConfig { beams, pulse_train: None, filter: None, duration_s, ..base }
}

/// Time after which `|x| < threshold` holds for every remaining sample.
fn settled_after(x: &SampleSeries, threshold: f64) -> Option<f64> {
    let s = x.samples();
    match s.iter().rposition(|v| v.abs() >= threshold) {
        None => Some(0.0),
        Some(i) if i + 1 < s.len() => Some((i + 1) as f64 / x.sample_rate_hz()),
        Some(_) => None,
    }
}

#[test]
fn one_radian_step_settles_within_a_millisecond() {
    let run = run_closed_loop(&quiet_cw(1.0, 1e-3)).unwrap();
    assert_abs_diff_eq!(run.phase_diff.samples()[0], 1.0, epsilon = 1e-12);
    let t = settled_after(&run.phase_diff, 0.01).expect("settles");
    assert!(t < 1e-3, "settled after {t} s");
}

#[test]
fn locked_start_stays_locked_near_full_intensity() {
    let run = run_closed_loop(&quiet_cw(0.0, 0.5e-3)).unwrap();
    let worst = run.phase_diff.samples().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(worst < 1e-9, "drifted by {worst} rad");
    // the dither itself costs about 1 - J0(0.2) of the peak
    assert!(run.intensity.samples().iter().all(|&i| i >= 0.99 * run.i_max - 1e-12 && i <= run.i_max * (1.0 + 1e-12)));
}

#[test]
fn reference_beam_command_never_moves() {
    let run = run_closed_loop(&ScenarioConfig::defaults().with_seed(3)).unwrap();
    assert_eq!(run.final_state.phase_cmd_rad[run.final_state.reference_beam], 0.0);
    assert_eq!(run.final_state.reference_beam, 0);
}

#[test]
fn lock_holds_for_ten_milliseconds_under_default_noise() {
    let cfg = ScenarioConfig { duration_s: 10e-3, ..ScenarioConfig::defaults().with_seed(11) };
    let run = run_closed_loop(&cfg).unwrap();
    let t_lock = settled_after(&run.phase_diff, 0.1).expect("locks");
    assert!(t_lock < 1e-3, "locked only after {t_lock} s");
    let n_lock = (t_lock * cfg.ad_rate_hz).round() as usize;
    let worst = run.phase_diff.samples()[n_lock..].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(worst < 0.3, "excursion {worst} rad after lock");
    assert_eq!(run.report.replaced_ranges.len(), 100, "one window per pulse");
}

#[test]
fn pulses_after_lock_reach_their_ideal_peaks() {
    let run = run_closed_loop(&ScenarioConfig::defaults().with_seed(4)).unwrap();
    let t_lock = settled_after(&run.phase_diff, 0.1).expect("locks");
    let after: Vec<_> = run.pulse_peaks.iter().filter(|p| p.t_s >= t_lock).collect();
    assert_eq!(after.len(), 20);
    for p in after {
        assert!(p.value >= 0.9 * p.ideal, "pulse at {} s: {} of {}", p.t_s, p.value, p.ideal);
    }
}

/// Oracle: `-(2/T) sum y sin(2 pi f t) dt` on the AD grid, written out longhand.
fn direct_error(y: &[f64], fs: f64, f: f64) -> f64 {
    let dt = 1.0 / fs;
    let period = y.len() as f64 * dt;
    -(2.0 / period) * y.iter().enumerate().map(|(j, v)| v * (TAU * f * j as f64 * dt).sin() * dt).sum::<f64>()
}

#[test]
fn demodulated_error_follows_the_phase_lead() {
    let cfg = ScenarioConfig::defaults();
    let dither = cfg.controller.clone().unwrap();
    let tone = dither.tones[1];
    let fs = cfg.ad_rate_hz;
    let n = dither.samples_per_period(fs);
    let block = |dphi: f64| {
        let y: Vec<f64> = (0..n)
            .map(|j| {
                let d = tone.dither_amp_rad * (TAU * tone.dither_freq_hz * j as f64 / fs).sin();
                combined_intensity(&[1.0, 1.0], &[0.0, dphi + d], 1.0).unwrap()
            })
            .collect();
        SampleSeries::new(fs, 0.0, y).unwrap()
    };
    let lead = block(0.1);
    let e = demodulate_error(&lead, &dither, 1).unwrap();
    assert!(e > 0.0);
    assert_abs_diff_eq!(e, direct_error(lead.samples(), fs, tone.dither_freq_hz), epsilon = 1e-12);
    let locked = demodulate_error(&block(0.0), &dither, 1).unwrap();
    assert!(locked.abs() <= 1e-6 * 4.0, "error {locked} at zero offset");
}
