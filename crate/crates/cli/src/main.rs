//! `pulselock`: run pulsed-beam combining scenarios and write their data.
//!
//! Exit codes: 0 success, 1 IO or other runtime failure, 2 invalid input or
//! config, 3 a requested acceptance check failed.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use pulselock_core::checks;
use pulselock_core::experiment::{self, RunKind, Summary, PULSE_BAND_HZ};
use pulselock_core::noise::{random_noise_model, synth_phase_noise};
use pulselock_core::waveform::{peak_in_band, power_spectrum_db, PowerSpectrum, SampleSeries, Taper};
use pulselock_core::ScenarioConfig;

const EXIT_RUNTIME: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_CHECK_FAILED: u8 = 3;

#[derive(Parser)]
#[command(name = "pulselock", version, about = "Pulsed-beam coherent combining simulator")]
struct Cli {
    /// Root directory for run outputs.
    #[arg(long, global = true, env = "PULSELOCK_OUT", default_value = "pulselock-out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the default scenario as JSON.
    Defaults,
    /// Synthesise phase noise from a random tone bank plus white noise.
    SynthNoise(SynthNoiseArgs),
    /// Run one scenario and write its artifacts.
    Run(RunArgs),
    /// Power spectrum of a `t_s,value` CSV.
    Spectrum(SpectrumArgs),
    /// Peak-level drop between two spectrum CSVs within a band.
    Compare(CompareArgs),
    /// Run one scenario kind for several seeds in parallel.
    Sweep(SweepArgs),
    /// Run every reproduction check and report pass/fail per check.
    AssertPaper(AssertPaperArgs),
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario JSON; the built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
}

impl ScenarioArgs {
    fn load(&self) -> Result<ScenarioConfig> {
        let cfg = match &self.config {
            Some(path) => ScenarioConfig::read(path)?,
            None => ScenarioConfig::defaults(),
        };
        Ok(match self.seed {
            Some(seed) => cfg.with_seed(seed),
            None => cfg,
        })
    }
}

#[derive(Args)]
struct SynthNoiseArgs {
    #[arg(long, default_value_t = pulselock_core::noise::DEFAULT_N_COMPONENTS)]
    n_components: usize,
    #[arg(long, default_value_t = pulselock_core::noise::DEFAULT_BAND_LIMIT_HZ)]
    band_limit_hz: f64,
    #[arg(long, default_value_t = pulselock_core::noise::DEFAULT_MAX_AMPLITUDE_RAD)]
    max_amplitude_rad: f64,
    #[arg(long, default_value_t = 0.0)]
    white_sigma_rad: f64,
    #[arg(long, default_value_t = 2e-3)]
    duration_s: f64,
    #[arg(long, default_value_t = 10e6)]
    rate_hz: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output directory; `<out>/noise-seed<seed>` by default.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, value_parser = parse_kind)]
    kind: RunKind,
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Output directory; `<out>/<kind>-seed<seed>` by default.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Exit with code 3 unless the run meets its targets.
    #[arg(long)]
    assert: bool,
}

#[derive(Args)]
struct SpectrumArgs {
    /// `t_s,value` CSV.
    input: PathBuf,
    #[arg(long, default_value = "none")]
    taper: Taper,
    /// Remove the mean before transforming.
    #[arg(long)]
    ac: bool,
    /// Output CSV; `<input stem>_spectrum.csv` next to the input by default.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    before: PathBuf,
    after: PathBuf,
    #[arg(long, default_value_t = PULSE_BAND_HZ.0)]
    f_lo: f64,
    #[arg(long, default_value_t = PULSE_BAND_HZ.1)]
    f_hi: f64,
    /// With `--assert`, the smallest acceptable drop in dB.
    #[arg(long, default_value_t = 40.0)]
    min_drop_db: f64,
    #[arg(long)]
    assert: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_parser = parse_kind)]
    kind: RunKind,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seeds as a list (`1,2,5`) or an inclusive range (`1..10`).
    #[arg(long, default_value = "1..10", value_parser = parse_seeds)]
    seeds: SeedList,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    assert: bool,
}

#[derive(Args)]
struct AssertPaperArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "1..10", value_parser = parse_seeds)]
    seeds: SeedList,
}

#[derive(Clone)]
struct SeedList(Vec<u64>);

fn parse_kind(s: &str) -> std::result::Result<RunKind, String> {
    s.parse().map_err(|e: pulselock_core::Error| e.to_string())
}

fn parse_seeds(s: &str) -> std::result::Result<SeedList, String> {
    let bad = |_| format!("bad seed list {s:?}");
    if let Some((lo, hi)) = s.split_once("..") {
        let lo: u64 = lo.trim().parse().map_err(bad)?;
        let hi: u64 = hi.trim().parse().map_err(bad)?;
        if lo > hi {
            return Err(format!("empty seed range {s:?}"));
        }
        return Ok(SeedList((lo..=hi).collect()));
    }
    let seeds =
        s.split(',').map(|x| x.trim().parse::<u64>().map_err(bad)).collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(SeedList(seeds))
}

/// A requested check did not pass; maps to exit code 3.
#[derive(Debug)]
struct CheckFailed;

impl std::fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("check failed")
    }
}

impl std::error::Error for CheckFailed {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_CHECK_FAILED),
        Err(err) => {
            eprintln!("error: {err:#}");
            let validation =
                err.chain().find_map(|e| e.downcast_ref::<pulselock_core::Error>()).is_some_and(|e| e.is_validation());
            ExitCode::from(if validation { EXIT_VALIDATION } else { EXIT_RUNTIME })
        }
    }
}

/// `Ok(false)` means a requested check failed.
fn dispatch(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::Defaults => {
            print!("{}", ScenarioConfig::defaults().to_json());
            Ok(true)
        }
        Command::SynthNoise(a) => synth_noise(&cli.out, a).map(|_| true),
        Command::Run(a) => run(&cli.out, a),
        Command::Spectrum(a) => spectrum(a).map(|_| true),
        Command::Compare(a) => compare(a),
        Command::Sweep(a) => sweep(&cli.out, a),
        Command::AssertPaper(a) => assert_paper(&cli.out, a),
    }
    .or_else(|e| if e.is::<CheckFailed>() { Ok(false) } else { Err(e) })
}

fn synth_noise(out_root: &Path, a: &SynthNoiseArgs) -> Result<()> {
    let model = random_noise_model(a.n_components, a.band_limit_hz, a.max_amplitude_rad, a.white_sigma_rad, a.seed)?;
    let series = synth_phase_noise(&model, a.duration_s, a.rate_hz)?;
    let dir = a.out_dir.clone().unwrap_or_else(|| out_root.join(format!("noise-seed{}", a.seed)));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let model_json = serde_json::to_string_pretty(&model)? + "\n";
    write(&dir.join("noise_model.json"), &model_json)?;
    series.write_csv(dir.join("noise.csv"), "rad")?;
    power_spectrum_db(&series, Taper::Hann)?.write_csv(dir.join("noise_spectrum.csv"))?;
    println!("{}", dir.display());
    Ok(())
}

fn write(path: &Path, body: &str) -> Result<()> {
    std::fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

/// Targets a single run can be held to.
fn run_targets(summary: &Summary) -> Vec<(String, bool)> {
    let mut out = Vec::new();
    match summary.kind {
        RunKind::OpenLoop => {
            if let (Some(pulse), Some(global)) = (summary.pulse_band_peak, summary.global_peak) {
                out.push((
                    format!(
                        "pulse line {:.1} dB is the strongest feature (global {:.1} dB)",
                        pulse.level_db, global.level_db
                    ),
                    pulse.level_db >= global.level_db - 1.0,
                ));
            }
        }
        RunKind::FilterOnly => {
            let lat = summary.detection_latency_s;
            out.push((format!("detection latency {lat:?} s <= 1e-4 s"), lat.is_some_and(|t| t <= 1e-4)));
            let band = summary.pulse_band_suppression_db.unwrap_or(f64::NEG_INFINITY);
            out.push((format!("8-12 kHz drop {band:.1} dB >= 40 dB"), band >= 40.0));
            let global = summary.global_suppression_db.unwrap_or(f64::NEG_INFINITY);
            out.push((format!("global drop {global:.1} dB >= 20 dB"), global >= 20.0));
        }
        RunKind::ClosedLoop => {
            let lock = summary.lock_time_s;
            out.push((format!("lock time {lock:?} s <= 1e-3 s"), lock.is_some_and(|t| t <= 1e-3)));
            let ratio = summary.final_intensity_ratio.unwrap_or(0.0);
            out.push((format!("final intensity ratio {ratio:.4} >= 0.9"), ratio >= 0.9));
        }
    }
    out
}

fn report_targets(targets: &[(String, bool)]) -> bool {
    for (text, ok) in targets {
        println!("[{}] {text}", if *ok { "PASS" } else { "FAIL" });
    }
    targets.iter().all(|(_, ok)| *ok)
}

fn run(out_root: &Path, a: &RunArgs) -> Result<bool> {
    let cfg = a.scenario.load()?;
    let dir = a.out_dir.clone().unwrap_or_else(|| out_root.join(format!("{}-seed{}", a.kind, cfg.seed)));
    let artifacts = experiment::run_scenario(a.kind, &cfg, &dir)?;
    println!("{}", dir.display());
    print!("{}", artifacts.summary.to_json());
    if a.assert && !report_targets(&run_targets(&artifacts.summary)) {
        return Err(CheckFailed.into());
    }
    Ok(true)
}

fn spectrum(a: &SpectrumArgs) -> Result<()> {
    let series = SampleSeries::read_csv(&a.input)?;
    let series = if a.ac { series.ac_coupled() } else { series };
    let spec = power_spectrum_db(&series, a.taper)?;
    let output = a.output.clone().unwrap_or_else(|| {
        let stem = a.input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        a.input.with_file_name(format!("{stem}_spectrum.csv"))
    });
    spec.write_csv(&output)?;
    let (f, level) = peak_in_band(&spec, 0.0, spec.nyquist_hz)?;
    println!("{}", output.display());
    println!("peak {level:.3} dB at {f} Hz");
    Ok(())
}

fn compare(a: &CompareArgs) -> Result<bool> {
    let before = PowerSpectrum::read_csv(&a.before)?;
    let after = PowerSpectrum::read_csv(&a.after)?;
    let delta = experiment::compare_spectra(&before, &after, a.f_lo, a.f_hi)?;
    println!("{delta}");
    // a NaN drop never meets the target
    let met = delta >= a.min_drop_db;
    if a.assert && !met {
        eprintln!("drop {delta:.3} dB is below {} dB", a.min_drop_db);
        return Err(CheckFailed.into());
    }
    Ok(true)
}

fn sweep(out_root: &Path, a: &SweepArgs) -> Result<bool> {
    let cfg = match &a.config {
        Some(p) => ScenarioConfig::read(p)?,
        None => ScenarioConfig::defaults(),
    };
    let dir = a.out_dir.clone().unwrap_or_else(|| out_root.join(format!("sweep-{}", a.kind)));
    // Reject a bad config once, before any per-seed directory exists.
    cfg.validate()?;
    let entries = experiment::sweep(a.kind, &cfg, &a.seeds.0, &dir);
    let mut rows = Vec::new();
    let mut all_ok = true;
    for e in entries {
        let summary = e.result?;
        let targets = run_targets(&summary);
        let ok = targets.iter().all(|(_, ok)| *ok);
        all_ok &= ok;
        println!("seed {}: {}", e.seed, if ok { "PASS" } else { "FAIL" });
        rows.push(serde_json::json!({
            "seed": e.seed,
            "out_dir": e.out_dir,
            "targets_met": ok,
            "summary": summary,
        }));
    }
    write(&dir.join("sweep_summary.json"), &(serde_json::to_string_pretty(&rows)? + "\n"))?;
    if a.assert && !all_ok {
        return Err(CheckFailed.into());
    }
    Ok(true)
}

fn assert_paper(out_root: &Path, a: &AssertPaperArgs) -> Result<bool> {
    let cfg = match &a.config {
        Some(p) => ScenarioConfig::read(p)?,
        None => ScenarioConfig::defaults(),
    };
    let scratch = out_root.join("assert-paper");
    let results = checks::run_all(&cfg, &a.seeds.0, &scratch)?;
    for r in &results {
        println!("{}", r.line());
    }
    let report = serde_json::to_string_pretty(&results)? + "\n";
    write(&scratch.join("checks.json"), &report)?;
    let passed = results.iter().filter(|r| r.passed).count();
    println!("{passed}/{} checks passed", results.len());
    if passed != results.len() {
        return Err(CheckFailed.into());
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("1..3").unwrap().0, vec![1, 2, 3]);
        assert_eq!(parse_seeds("4, 9").unwrap().0, vec![4, 9]);
        assert!(parse_seeds("3..1").is_err());
        assert!(parse_seeds("x").is_err());
    }

    #[test]
    fn global_band_is_inside_default_nyquist() {
        assert!(experiment::GLOBAL_BAND_HZ.1 < ScenarioConfig::defaults().ad_rate_hz / 2.0);
    }
}
