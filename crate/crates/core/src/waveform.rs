//! Uniformly sampled signals and their one-sided power spectra.
//!
//! Every signal in the simulator (phase noise, detector current, filtered
//! detector current) is a [`SampleSeries`]. Spectra are magnitude-squared DFTs
//! in dB relative to 1 unit², so before/after comparisons are differences of
//! levels computed the same way.

use std::fmt::Write as _;
use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Level assigned to bins whose linear power is zero or below `10^-30`.
pub const FLOOR_DB: f64 = -300.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSeries {
    sample_rate_hz: f64,
    t0_s: f64,
    samples: Vec<f64>,
}

impl SampleSeries {
    pub fn new(sample_rate_hz: f64, t0_s: f64, samples: Vec<f64>) -> Result<Self> {
        if !(sample_rate_hz > 0.0) || !sample_rate_hz.is_finite() {
            return Err(Error::input(format!("sample rate must be positive and finite, got {sample_rate_hz}")));
        }
        if !t0_s.is_finite() {
            return Err(Error::input("start time must be finite"));
        }
        Ok(Self { sample_rate_hz, t0_s, samples })
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn t0_s(&self) -> f64 {
        self.t0_s
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [f64] {
        &mut self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Time of sample `i`: `t0 + i / fs`.
    pub fn time_of(&self, i: usize) -> f64 {
        self.t0_s + i as f64 / self.sample_rate_hz
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz
    }

    /// Same time base, new values.
    pub fn with_samples(&self, samples: Vec<f64>) -> Self {
        Self { sample_rate_hz: self.sample_rate_hz, t0_s: self.t0_s, samples }
    }

    /// Sub-series `[start, end)` with its own time origin.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start > end || end > self.samples.len() {
            return Err(Error::input(format!(
                "slice [{start}, {end}) out of range for {} samples",
                self.samples.len()
            )));
        }
        Ok(Self {
            sample_rate_hz: self.sample_rate_hz,
            t0_s: self.time_of(start),
            samples: self.samples[start..end].to_vec(),
        })
    }

    pub fn mean(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }

    /// Copy with the mean removed (AC coupling). The DC bin otherwise dominates
    /// the spectrum of an intensity signal.
    pub fn ac_coupled(&self) -> Self {
        let mean = self.mean();
        self.with_samples(self.samples.iter().map(|x| x - mean).collect())
    }

    /// CSV with header `t_s,<value_header>`, one row per sample, LF endings.
    pub fn to_csv(&self, value_header: &str) -> String {
        let mut out = String::with_capacity(self.samples.len() * 32);
        out.push_str("t_s,");
        out.push_str(value_header);
        out.push('\n');
        for (i, v) in self.samples.iter().enumerate() {
            let _ = writeln!(out, "{},{}", self.time_of(i), v);
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>, value_header: &str) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv(value_header)).map_err(|e| Error::io(path, e))
    }

    /// Parses the two-column time-series CSV. The sample rate is recovered from
    /// the time column, rounded to the nearest integer Hz when it is that close.
    pub fn from_csv(text: &str, context: &str) -> Result<Self> {
        let rows = parse_two_columns(text, context)?;
        if rows.len() < 2 {
            return Err(Error::Parse {
                context: context.to_string(),
                message: "need at least two rows to recover the sample rate".into(),
            });
        }
        let dt = (rows[rows.len() - 1].0 - rows[0].0) / (rows.len() - 1) as f64;
        if !(dt > 0.0) {
            return Err(Error::Parse { context: context.to_string(), message: "time column is not increasing".into() });
        }
        let mut rate = 1.0 / dt;
        if (rate - rate.round()).abs() < 1e-6 * rate {
            rate = rate.round();
        }
        Self::new(rate, rows[0].0, rows.into_iter().map(|r| r.1).collect())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text, &path.display().to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Taper {
    #[default]
    None,
    Hann,
}

impl std::str::FromStr for Taper {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Taper::None),
            "hann" => Ok(Taper::Hann),
            other => Err(Error::input(format!("unknown taper {other:?}, expected none|hann"))),
        }
    }
}

/// One-sided power spectrum in dB, bin `k` at `k * freq_resolution_hz`.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSpectrum {
    pub freq_resolution_hz: f64,
    pub levels_db: Vec<f64>,
    pub floor_db: f64,
    /// Half the source sample rate.
    pub nyquist_hz: f64,
}

impl PowerSpectrum {
    pub fn freq_of(&self, bin: usize) -> f64 {
        bin as f64 * self.freq_resolution_hz
    }

    /// Linear power per bin (`10^(dB/10)`), floor bins mapped to 0.
    pub fn linear(&self) -> Vec<f64> {
        self.levels_db.iter().map(|&db| if db <= self.floor_db { 0.0 } else { 10f64.powf(db / 10.0) }).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.levels_db.len() * 32);
        out.push_str("freq_hz,level_db\n");
        for (k, level) in self.levels_db.iter().enumerate() {
            let _ = writeln!(out, "{},{}", self.freq_of(k), level);
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Reads a `freq_hz,level_db` CSV. The Nyquist frequency is taken to be the last bin.
    pub fn from_csv(text: &str, context: &str) -> Result<Self> {
        let rows = parse_two_columns(text, context)?;
        if rows.len() < 2 {
            return Err(Error::Parse {
                context: context.to_string(),
                message: "spectrum needs at least two bins".into(),
            });
        }
        let res = rows[1].0 - rows[0].0;
        let last = rows[rows.len() - 1].0;
        Ok(Self {
            freq_resolution_hz: res,
            levels_db: rows.iter().map(|r| r.1).collect(),
            floor_db: FLOOR_DB,
            nyquist_hz: last,
        })
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text, &path.display().to_string())
    }
}

fn parse_two_columns(text: &str, context: &str) -> Result<Vec<(f64, f64)>> {
    let perr = |line: usize, message: String| Error::Parse { context: format!("{context}:{line}"), message };
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let mut cols = line.split(',');
        let (Some(a), Some(b), None) = (cols.next(), cols.next(), cols.next()) else {
            return Err(perr(n + 1, format!("expected two columns, got {line:?}")));
        };
        let a: f64 = a.trim().parse().map_err(|e| perr(n + 1, format!("{e}")))?;
        let b: f64 = b.trim().parse().map_err(|e| perr(n + 1, format!("{e}")))?;
        rows.push((a, b));
    }
    Ok(rows)
}

/// One-sided power spectrum of `series` in dB re 1 unit².
///
/// Bins are scaled so that, untapered, their linear sum equals the mean square
/// of the series. With a Hann taper the scaling preserves the height of a pure
/// tone instead.
pub fn power_spectrum_db(series: &SampleSeries, taper: Taper) -> Result<PowerSpectrum> {
    let n = series.len();
    if n == 0 {
        return Err(Error::input("power spectrum of an empty series"));
    }
    let weights: Vec<f64> = match taper {
        Taper::None => vec![1.0; n],
        Taper::Hann => (0..n).map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())).collect(),
    };
    let coherent_gain: f64 = weights.iter().sum();
    let mut buf: Vec<Complex<f64>> =
        series.samples().iter().zip(&weights).map(|(x, w)| Complex::new(x * w, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);

    let norm = if coherent_gain > 0.0 { 1.0 / (coherent_gain * coherent_gain) } else { 0.0 };
    let n_bins = n / 2 + 1;
    let levels_db = (0..n_bins)
        .map(|k| {
            // Interior bins fold in their negative-frequency twin.
            let fold = if k == 0 || (n.is_multiple_of(2) && k == n / 2) { 1.0 } else { 2.0 };
            let p = fold * buf[k].norm_sqr() * norm;
            to_db(p)
        })
        .collect();
    Ok(PowerSpectrum {
        freq_resolution_hz: series.sample_rate_hz() / n as f64,
        levels_db,
        floor_db: FLOOR_DB,
        nyquist_hz: series.sample_rate_hz() / 2.0,
    })
}

fn to_db(p: f64) -> f64 {
    if p > 0.0 {
        (10.0 * p.log10()).max(FLOOR_DB)
    } else {
        FLOOR_DB
    }
}

/// Highest bin within `[f_lo, f_hi]`; the lowest frequency wins a tie.
pub fn peak_in_band(spectrum: &PowerSpectrum, f_lo: f64, f_hi: f64) -> Result<(f64, f64)> {
    if !(f_lo < f_hi) || f_lo < 0.0 {
        return Err(Error::InvalidBand(format!("[{f_lo}, {f_hi}] is not a valid band")));
    }
    let tol = 1e-9 * spectrum.freq_resolution_hz;
    if f_hi > spectrum.nyquist_hz + tol {
        return Err(Error::InvalidBand(format!(
            "band upper edge {f_hi} Hz exceeds Nyquist {} Hz",
            spectrum.nyquist_hz
        )));
    }
    let mut best: Option<(usize, f64)> = None;
    for (k, &level) in spectrum.levels_db.iter().enumerate() {
        let f = spectrum.freq_of(k);
        if f < f_lo - tol || f > f_hi + tol {
            continue;
        }
        if best.is_none_or(|(_, b)| level > b) {
            best = Some((k, level));
        }
    }
    best.map(|(k, level)| (spectrum.freq_of(k), level))
        .ok_or_else(|| Error::InvalidBand(format!("no spectrum bin inside [{f_lo}, {f_hi}]")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn tone(freq: f64, amp: f64, rate: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| amp * (2.0 * PI * freq * i as f64 / rate).sin()).collect()
    }

    #[test]
    fn single_tone_has_one_dominant_bin() {
        let s = SampleSeries::new(10e6, 0.0, tone(10e3, 1.0, 10e6, 10_000)).unwrap();
        let spec = power_spectrum_db(&s, Taper::None).unwrap();
        assert_eq!(spec.freq_resolution_hz, 1000.0);
        let (f, level) = peak_in_band(&spec, 0.0, 5e6).unwrap();
        assert_eq!(f, 10e3);
        // amplitude-1 sine carries 0.5 unit² of power
        assert!((level - 10.0 * 0.5f64.log10()).abs() < 1e-9);
        for (k, &l) in spec.levels_db.iter().enumerate() {
            if (k as i64 - 10).abs() >= 2 {
                assert!(l <= level - 60.0, "bin {k} at {l} dB");
            }
        }
    }

    #[test]
    fn zero_series_sits_on_floor() {
        let s = SampleSeries::new(1e3, 0.0, vec![0.0; 64]).unwrap();
        let spec = power_spectrum_db(&s, Taper::Hann).unwrap();
        assert!(spec.levels_db.iter().all(|&l| l == FLOOR_DB));
    }

    #[test]
    fn empty_series_is_rejected() {
        let s = SampleSeries::new(1e3, 0.0, vec![]).unwrap();
        assert!(matches!(power_spectrum_db(&s, Taper::None), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn nonpositive_rate_is_rejected() {
        assert!(SampleSeries::new(0.0, 0.0, vec![1.0]).is_err());
        assert!(SampleSeries::new(-5.0, 0.0, vec![1.0]).is_err());
    }

    #[test]
    fn malformed_band_is_rejected() {
        let s = SampleSeries::new(10e6, 0.0, tone(10e3, 1.0, 10e6, 1000)).unwrap();
        let spec = power_spectrum_db(&s, Taper::None).unwrap();
        assert!(matches!(peak_in_band(&spec, 15e3, 5e3), Err(Error::InvalidBand(_))));
        assert!(matches!(peak_in_band(&spec, 0.0, 6e6), Err(Error::InvalidBand(_))));
    }

    #[test]
    fn tone_in_band() {
        let s = SampleSeries::new(10e6, 0.0, tone(10e3, 1.0, 10e6, 10_000)).unwrap();
        let spec = power_spectrum_db(&s, Taper::None).unwrap();
        let (f, _) = peak_in_band(&spec, 5e3, 15e3).unwrap();
        assert_eq!(f, 10e3);
    }

    #[test]
    fn two_tones_brute_force_peak() {
        // 0 dB tone needs amplitude sqrt(2); -20 dB tone a tenth of that.
        let rate = 10e6;
        let n = 10_000;
        let a = tone(10e3, 2f64.sqrt(), rate, n);
        let b = tone(20e3, 0.1 * 2f64.sqrt(), rate, n);
        let s = SampleSeries::new(rate, 0.0, a.iter().zip(&b).map(|(x, y)| x + y).collect()).unwrap();
        let spec = power_spectrum_db(&s, Taper::None).unwrap();
        let (mut bk, mut bl) = (0, f64::NEG_INFINITY);
        for (k, &l) in spec.levels_db.iter().enumerate() {
            if spec.freq_of(k) <= 500e3 && l > bl {
                bk = k;
                bl = l;
            }
        }
        let (f, level) = peak_in_band(&spec, 0.0, 500e3).unwrap();
        assert_eq!(f, spec.freq_of(bk));
        assert_eq!(level, bl);
        assert_eq!(f, 10e3);
        assert!(level.abs() < 1e-9);
        let l20 = spec.levels_db[20];
        assert!((l20 + 20.0).abs() < 1e-9);
    }

    #[test]
    fn tie_goes_to_lowest_frequency() {
        let spec = PowerSpectrum {
            freq_resolution_hz: 10.0,
            levels_db: vec![-5.0, 3.0, 1.0, 3.0],
            floor_db: FLOOR_DB,
            nyquist_hz: 30.0,
        };
        assert_eq!(peak_in_band(&spec, 0.0, 30.0).unwrap(), (10.0, 3.0));
    }

    #[test]
    fn csv_roundtrip_recovers_rate() {
        let s = SampleSeries::new(10e6, 0.0, vec![0.5, -1.25, 3.0, 7.0]).unwrap();
        let back = SampleSeries::from_csv(&s.to_csv("value"), "mem").unwrap();
        assert_eq!(back.sample_rate_hz(), 10e6);
        assert_eq!(back.samples(), s.samples());
        let spec = power_spectrum_db(&s, Taper::None).unwrap();
        let spec_back = PowerSpectrum::from_csv(&spec.to_csv(), "mem").unwrap();
        assert_eq!(spec_back.levels_db, spec.levels_db);
    }
}
