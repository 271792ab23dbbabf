//! Simulation of coherent combining of low-repetition-rate pulsed beams.
//!
//! The pipeline is: synthetic phase noise per beam ([`noise`]), interference of
//! the pulsed beams on one photodetector and AD sampling ([`combiner`]),
//! window filtering of the pulse contamination ([`filter`]) and a multi-dither
//! phase lock ([`dither`]). [`experiment`] ties them into reproducible runs
//! that write CSV and JSON artifacts.

// `!(x > 0.0)` rejects NaN along with non-positive values; that is intended.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checks;
pub mod combiner;
pub mod dither;
pub mod error;
pub mod experiment;
pub mod filter;
pub mod noise;
pub mod scenario;
pub mod waveform;

pub use combiner::{
    ad_sample, combined_intensity, detector_current, pulse_envelope, simulate_open_loop, Combiner, DetectorModel,
    PulseShape, PulseTrain,
};
pub use dither::{
    controller_step, demodulate_error, dither_phase, run_closed_loop, wrap_phase, ClosedLoopRun, ControllerState,
    DitherConfig, DitherTone, PulsePeak,
};
pub use error::{Error, Result};
pub use experiment::{
    compare_spectra, final_intensity_ratio, lock_time, run_scenario, sweep, RunArtifacts, RunKind, Summary,
};
pub use filter::{
    interpolate_window, is_pulse_width, pollution_ratio, process_block, DetectorParams, FilterConfig, FilterReport,
    FilterState, Level, Mode, WindowFilter,
};
pub use noise::{random_noise_model, synth_phase_noise, NoiseModel, SinusoidComponent};
pub use scenario::{BeamConfig, NoiseSpec, ScenarioConfig};
pub use waveform::{peak_in_band, power_spectrum_db, PowerSpectrum, SampleSeries, Taper};
