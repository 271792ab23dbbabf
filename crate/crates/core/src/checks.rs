//! The reproduction checks behind `pulselock assert-paper`.
//!
//! Each check runs the default scenario (or a variant of it) and compares the
//! headline number against its target. Results carry the measured values so a
//! failing check explains itself.

use std::f64::consts::TAU;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::combiner::{combined_intensity, pulse_envelope, Combiner};
use crate::dither::{demodulate_error, run_closed_loop, DitherConfig, DitherTone};
use crate::error::Result;
use crate::experiment::{
    analysis_spectrum, compare_spectra, filter_series, final_intensity_ratio, lock_time, run_scenario, RunKind,
    FINAL_WINDOW_S, GLOBAL_BAND_HZ, LOCK_THRESHOLD_RAD, PULSE_BAND_HZ,
};
use crate::filter::{pollution_ratio, process_block, FilterState};
use crate::scenario::{NoiseSpec, ScenarioConfig};
use crate::waveform::{power_spectrum_db, SampleSeries, Taper};

pub const DEFAULT_SEEDS: [u64; 10] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10];

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub id: u32,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    pub fn line(&self) -> String {
        format!("[{}] {:>2} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.id, self.name, self.detail)
    }
}

fn result(id: u32, name: &'static str, passed: bool, detail: String) -> CheckResult {
    CheckResult { id, name, passed, detail }
}

/// Runs all ten checks; `scratch` receives the artifact directories of the determinism check.
pub fn run_all(base: &ScenarioConfig, seeds: &[u64], scratch: &Path) -> Result<Vec<CheckResult>> {
    let mut out = Vec::with_capacity(10);
    let (lock, ratio) = lock_and_efficiency(base, seeds)?;
    out.push(lock);
    out.push(ratio);
    out.push(detection_latency(base)?);
    out.push(spectral_suppression(base)?);
    out.push(non_pollution_identity(base)?);
    out.push(ratio_formula());
    out.push(line_spectrum()?);
    out.push(demodulator_gradient()?);
    out.push(negative_control(base, seeds)?);
    out.push(determinism(base, scratch)?);
    Ok(out)
}

pub fn lock_and_efficiency(base: &ScenarioConfig, seeds: &[u64]) -> Result<(CheckResult, CheckResult)> {
    let started = Instant::now();
    let mut worst_lock: f64 = 0.0;
    let mut unlocked = Vec::new();
    let mut worst_ratio = f64::INFINITY;
    for &seed in seeds {
        let run = run_closed_loop(&base.clone().with_seed(seed))?;
        match lock_time(&run.phase_diff, LOCK_THRESHOLD_RAD) {
            Some(t) if t <= 1e-3 => worst_lock = worst_lock.max(t),
            other => unlocked.push((seed, other)),
        }
        worst_ratio = worst_ratio.min(final_intensity_ratio(&run.intensity, run.i_max, FINAL_WINDOW_S)?);
    }
    let elapsed = started.elapsed().as_secs_f64();
    let lock = result(
        1,
        "lock time",
        unlocked.is_empty() && elapsed < 60.0,
        format!(
            "{} seeds, worst lock {:.1} us (target <= 1000 us), not locked: {:?}, wall {:.2} s (target < 60 s)",
            seeds.len(),
            worst_lock * 1e6,
            unlocked,
            elapsed
        ),
    );
    let ratio = result(
        2,
        "combining efficiency",
        worst_ratio >= 0.9,
        format!("worst final-0.2 ms mean intensity {worst_ratio:.4} I_max (target >= 0.9)"),
    );
    Ok((lock, ratio))
}

pub fn detection_latency(base: &ScenarioConfig) -> Result<CheckResult> {
    let raw = crate::combiner::simulate_open_loop(base)?;
    let (_, report) = filter_series(base, &raw)?;
    let passed = report.detection_latency_s.is_some_and(|t| t <= 1e-4);
    Ok(result(
        3,
        "detection latency",
        passed,
        format!("first replaced window at {:?} s (target <= 1e-4 s)", report.detection_latency_s),
    ))
}

pub fn spectral_suppression(base: &ScenarioConfig) -> Result<CheckResult> {
    let raw = crate::combiner::simulate_open_loop(base)?;
    let (filtered, _) = filter_series(base, &raw)?;
    let before = analysis_spectrum(&raw)?;
    let after = analysis_spectrum(&filtered)?;
    let band = compare_spectra(&before, &after, PULSE_BAND_HZ.0, PULSE_BAND_HZ.1)?;
    let global = compare_spectra(&before, &after, GLOBAL_BAND_HZ.0, GLOBAL_BAND_HZ.1)?;
    Ok(result(
        4,
        "spectral suppression",
        band >= 40.0 && global >= 20.0,
        format!("8-12 kHz drop {band:.1} dB (target >= 40), global drop {global:.1} dB (target >= 20)"),
    ))
}

pub fn non_pollution_identity(base: &ScenarioConfig) -> Result<CheckResult> {
    let params = base.detector_params()?.expect("default scenario has a filter");
    let mut clean_failures = 0;
    let mut dirty_failures = 0;
    for seed in 0..100u64 {
        let cfg =
            ScenarioConfig { pulse_train: None, filter: None, duration_s: 250e-6, seed: 1000 + seed, ..base.clone() };
        let raw = crate::combiner::simulate_open_loop(&cfg)?;
        let (y, _, report) = process_block(&raw, FilterState::new(params.clone())?)?;
        let same = y.samples().iter().zip(raw.samples()).all(|(a, b)| a.to_bits() == b.to_bits());
        if !same || !report.replaced_ranges.is_empty() {
            clean_failures += 1;
        }

        let cfg = ScenarioConfig { duration_s: 250e-6, seed: 2000 + seed, ..base.clone() };
        let raw = crate::combiner::simulate_open_loop(&cfg)?;
        let (y, _, report) = process_block(&raw, FilterState::new(params.clone())?)?;
        let inside = |i: usize| report.replaced_ranges.iter().any(|&(s, e)| (s as usize..=e as usize).contains(&i));
        let outside_same =
            (0..raw.len()).filter(|&i| !inside(i)).all(|i| y.samples()[i].to_bits() == raw.samples()[i].to_bits());
        if !outside_same {
            dirty_failures += 1;
        }
    }
    Ok(result(
        5,
        "non-pollution identity",
        clean_failures == 0 && dirty_failures == 0,
        format!("100 clean blocks changed: {clean_failures}; 100 contaminated blocks changed outside windows: {dirty_failures}"),
    ))
}

pub fn ratio_formula() -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let eps = 1e-9;
    let mut mismatches = 0;
    let mut checked = 0;
    for _ in 0..10_000 {
        let (a, b, c): (f64, f64, f64) =
            (rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0));
        if (b - a).abs() < eps {
            continue;
        }
        checked += 1;
        if pollution_ratio(a, b, c, eps) != ((b - c) / (b - a)).abs() {
            mismatches += 1;
        }
    }
    result(6, "pollution ratio formula", mismatches == 0, format!("{checked} triples, {mismatches} mismatches"))
}

pub fn line_spectrum() -> Result<CheckResult> {
    let cfg = ScenarioConfig {
        beams: ScenarioConfig::defaults()
            .beams
            .into_iter()
            .map(|b| crate::scenario::BeamConfig { noise_model: NoiseSpec::None, initial_phase_rad: 0.0, ..b })
            .collect(),
        controller: None,
        filter: None,
        duration_s: 1e-3,
        ..ScenarioConfig::defaults()
    };
    let combiner = Combiner::new(&cfg)?;
    let train = combiner.pulse_train().cloned().expect("pulsed");
    let fs = cfg.ad_rate_hz;
    let n = (cfg.duration_s * fs).round() as usize;
    let env: Vec<f64> = (0..n).map(|j| pulse_envelope(&train, j as f64 / fs)).collect();
    let spec = power_spectrum_db(&SampleSeries::new(fs, 0.0, env)?, Taper::None)?;
    let harmonic_step = (train.f_rep_hz / spec.freq_resolution_hz).round() as usize;
    let strongest = spec.levels_db.iter().step_by(harmonic_step).skip(1).fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let worst_off = spec
        .levels_db
        .iter()
        .enumerate()
        .filter(|&(k, _)| {
            let r = k % harmonic_step;
            r > 1 && r < harmonic_step - 1
        })
        .fold(f64::NEG_INFINITY, |m, (_, &x)| m.max(x));
    let margin = strongest - worst_off;
    Ok(result(
        7,
        "line spectrum",
        margin >= 80.0,
        format!("off-harmonic bins {margin:.1} dB below the strongest harmonic (target >= 80)"),
    ))
}

fn cw_dither_block(dither: &DitherConfig, phases: &[f64], dithered: &[bool], ad_rate: f64) -> Result<SampleSeries> {
    let n = dither.samples_per_period(ad_rate);
    let amps = vec![1.0; phases.len()];
    let samples = (0..n)
        .map(|j| {
            let t = j as f64 / ad_rate;
            let total: Vec<f64> = phases
                .iter()
                .enumerate()
                .map(|(m, p)| {
                    let tone = dither.tones[m];
                    p + if dithered[m] { tone.dither_amp_rad * (TAU * tone.dither_freq_hz * t).sin() } else { 0.0 }
                })
                .collect();
            combined_intensity(&amps, &total, 1.0)
        })
        .collect::<Result<Vec<f64>>>()?;
    SampleSeries::new(ad_rate, 0.0, samples)
}

// three unit beams at unit gain
const I_MAX_THREE: f64 = 9.0;

pub fn demodulator_gradient() -> Result<CheckResult> {
    let base = ScenarioConfig::defaults();
    let dither = base.controller.clone().expect("default controller");
    let ad = base.ad_rate_hz;
    let mut wrong = Vec::new();
    for d in [-2.0, -1.0, -0.5, -0.2, 0.2, 0.5, 1.0, 2.0f64] {
        let block = cw_dither_block(&dither, &[0.0, d], &[false, true], ad)?;
        let e = demodulate_error(&block, &dither, 1)?;
        if e.signum() != d.sin().signum() {
            wrong.push(d);
        }
    }
    let three = DitherConfig {
        tones: vec![
            DitherTone { dither_freq_hz: 0.0, dither_amp_rad: 0.0 },
            dither.tones[1],
            DitherTone {
                dither_freq_hz: 2.0 * dither.tones[1].dither_freq_hz,
                dither_amp_rad: dither.tones[1].dither_amp_rad,
            },
        ],
        ..dither.clone()
    };
    let mut leak: f64 = 0.0;
    for offsets in [[0.0, 0.3, -0.7], [0.0, 1.2, 0.4], [0.0, -0.5, 2.0]] {
        let only_two = cw_dither_block(&three, &offsets, &[false, false, true], ad)?;
        leak = leak.max(demodulate_error(&only_two, &three, 1)?.abs() / I_MAX_THREE);
        let only_one = cw_dither_block(&three, &offsets, &[false, true, false], ad)?;
        leak = leak.max(demodulate_error(&only_one, &three, 2)?.abs() / I_MAX_THREE);
    }
    Ok(result(
        8,
        "demodulator gradient",
        wrong.is_empty() && leak <= 1e-3,
        format!("sign errors at {wrong:?}; worst cross-tone leakage {leak:.2e} I_max (target <= 1e-3)"),
    ))
}

pub fn negative_control(base: &ScenarioConfig, seeds: &[u64]) -> Result<CheckResult> {
    let mut ratios = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let cfg = ScenarioConfig { filter: None, duration_s: 5e-3, ..base.clone().with_seed(seed) };
        let run = run_closed_loop(&cfg)?;
        ratios.push(final_intensity_ratio(&run.intensity, run.i_max, FINAL_WINDOW_S)?);
    }
    let worst = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let best = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(result(
        9,
        "negative control",
        worst < 0.9,
        format!("filter disabled, 5 ms: final ratios {worst:.4}..{best:.4} I_max (target: efficiency check fails, some ratio < 0.9)"),
    ))
}

pub fn determinism(base: &ScenarioConfig, scratch: &Path) -> Result<CheckResult> {
    let mut differing = Vec::new();
    for kind in [RunKind::OpenLoop, RunKind::FilterOnly, RunKind::ClosedLoop] {
        let a = run_scenario(kind, base, &scratch.join(format!("{kind}_a")))?;
        let b = run_scenario(kind, base, &scratch.join(format!("{kind}_b")))?;
        for (fa, fb) in a.files.iter().zip(&b.files) {
            let same = std::fs::read(fa).ok() == std::fs::read(fb).ok() && fa.file_name() == fb.file_name();
            if !same {
                differing.push(fa.display().to_string());
            }
        }
        if a.files.len() != b.files.len() {
            differing.push(format!("{kind}: file count"));
        }
    }
    Ok(result(
        10,
        "determinism",
        differing.is_empty(),
        format!("artifacts differing between identical runs: {differing:?}"),
    ))
}
