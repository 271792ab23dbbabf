//! Window filter for periodic pulse contamination.
//!
//! A pulse is recognised by three tests on the sampled detector signal:
//!
//! * an autocorrelation break, `k = |(y_i - y_{i+1}) / (y_i - y_{i-1})| > Th`,
//!   evaluated at the sample just before the candidate;
//! * an amplitude test, the candidate reaching `v_threshold`;
//! * a width test, at least `n_p` consecutive samples at or above `v_threshold`,
//!   falling back below it within one window width (a step never does).
//!
//! Once a pulse is found its neighbourhood is replaced by linear interpolation
//! and a window is predicted one pulse period later. Five consecutive hits move
//! the filter from CONFIRM to TRACK, where every predicted window is replaced
//! whether or not it fires. Repeated misses drop back to ACQUIRE.
//!
//! [`WindowFilter`] is the streaming engine. [`process_block`] wraps it for
//! whole blocks and flushes at the block end.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::waveform::SampleSeries;

/// Samples of history needed before the auto threshold is trusted.
const MIN_THRESHOLD_HISTORY: usize = 16;

/// Steps in the local jitter estimate; the mean absolute step over this span
/// tracks bursts of activity that the period median would average away.
const LOCAL_STEPS: u64 = 16;

/// Gaussian sigma per unit median absolute deviation.
const MAD_TO_SIGMA: f64 = 1.4826;

/// Gaussian sigma per unit mean absolute value, sqrt(pi / 2).
const MEAN_ABS_TO_SIGMA: f64 = 1.2533141373155003;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    /// Previous raw sample plus `mad_factor` robust sigmas of the sample-to-sample
    /// step, estimated from the last pulse period and from the last few samples,
    /// and never below `min_contrast` times the local mean level (0 disables).
    Auto {
        mad_factor: f64,
        #[serde(default = "default_min_contrast")]
        min_contrast: f64,
    },
    Fixed(f64),
}

impl Default for Level {
    fn default() -> Self {
        Level::Auto { mad_factor: 8.0, min_contrast: default_min_contrast() }
    }
}

/// Pulses stand this far above the local mean; squared white phase noise at an
/// interference null exceeds 50 times its mean with probability about 2.5e-12.
fn default_min_contrast() -> f64 {
    50.0
}

/// Filter settings in physical units, as they appear in a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub th: f64,
    /// `None` selects `1e-9 * max|y|` over the recent period.
    pub eps: Option<f64>,
    pub beta: f64,
    pub v_threshold: Level,
    /// Window width `d` in seconds.
    pub window_width_s: f64,
    pub confirm_count: u32,
    pub miss_limit: u32,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            th: 2.0,
            eps: None,
            beta: 0.9,
            v_threshold: Level::default(),
            window_width_s: 100e-9,
            confirm_count: 5,
            miss_limit: 3,
        }
    }
}

/// Detection parameters in sample units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorParams {
    pub th: f64,
    pub eps: Option<f64>,
    pub beta: f64,
    pub v_threshold: Level,
    /// Expected in-pulse sample count, `max(1, floor(beta * f_s * tau_1))`.
    pub n_p: usize,
    pub window_width_samples: usize,
    pub period_samples: usize,
    pub confirm_count: u32,
    pub miss_limit: u32,
}

impl DetectorParams {
    /// Converts physical settings for an AD rate `f_s_hz`, pulse rate and broadened width.
    pub fn derive(cfg: &FilterConfig, f_s_hz: f64, f_rep_hz: f64, broadened_width_s: f64) -> Result<Self> {
        if !(0.8..=1.0).contains(&cfg.beta) {
            return Err(Error::config(format!("filter.beta must lie in [0.8, 1], got {}", cfg.beta)));
        }
        let n_p = ((cfg.beta * f_s_hz * broadened_width_s + 1e-9).floor() as usize).max(1);
        let width = ((cfg.window_width_s * f_s_hz).round() as usize).max(1).max(n_p);
        let period = (f_s_hz / f_rep_hz).round() as usize;
        let params = Self {
            th: cfg.th,
            eps: cfg.eps,
            beta: cfg.beta,
            v_threshold: cfg.v_threshold,
            n_p,
            window_width_samples: width,
            period_samples: period,
            confirm_count: cfg.confirm_count,
            miss_limit: cfg.miss_limit,
        };
        params.validate().map_err(|e| Error::config(e.to_string()))?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.th > 0.0) {
            return Err(Error::input("th must be > 0"));
        }
        if let Some(eps) = self.eps {
            if !(eps > 0.0) {
                return Err(Error::input("eps must be > 0"));
            }
        }
        if self.n_p == 0 {
            return Err(Error::input("n_p must be >= 1"));
        }
        if self.window_width_samples < self.n_p {
            return Err(Error::input(format!(
                "window width ({}) must be at least n_p ({})",
                self.window_width_samples, self.n_p
            )));
        }
        if self.period_samples <= self.window_width_samples {
            return Err(Error::input(format!(
                "pulse period ({} samples) must exceed the window width ({} samples)",
                self.period_samples, self.window_width_samples
            )));
        }
        if self.confirm_count == 0 || self.miss_limit == 0 {
            return Err(Error::input("confirm_count and miss_limit must be >= 1"));
        }
        if let Level::Auto { mad_factor, min_contrast } = self.v_threshold {
            if !(min_contrast >= 0.0 && min_contrast.is_finite()) {
                return Err(Error::input("min_contrast must be finite and >= 0"));
            }
            if !(mad_factor > 0.0) {
                return Err(Error::input("mad_factor must be > 0"));
            }
        }
        Ok(())
    }

    /// Samples left of the window centre.
    fn half_left(&self) -> u64 {
        ((self.window_width_samples - 1) / 2) as u64
    }

    fn half_right(&self) -> u64 {
        (self.window_width_samples - 1) as u64 - self.half_left()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Mode {
    Acquire,
    Confirm,
    Track,
}

/// Carry-over between blocks of one stream.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub mode: Mode,
    /// Stream index of the last accepted (or predicted, after a miss) pulse.
    pub anchor_index: Option<u64>,
    pub confirmations: u32,
    pub misses: u32,
    pub params: DetectorParams,
    /// Total TRACK -> ACQUIRE transitions so far.
    pub reacquisitions: u32,
    /// Stream index of the next sample to arrive.
    pub position: u64,
    /// Raw samples immediately before `position`, at most one period plus two.
    history: Vec<f64>,
    last_output: Option<f64>,
}

impl FilterState {
    pub fn new(params: DetectorParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            mode: Mode::Acquire,
            anchor_index: None,
            confirmations: 0,
            misses: 0,
            params,
            reacquisitions: 0,
            position: 0,
            history: Vec::new(),
            last_output: None,
        })
    }
}

/// What the filter did to one block (or a whole stream).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    /// Inclusive stream-index ranges that were replaced.
    pub replaced_ranges: Vec<(u64, u64)>,
    /// Time from stream start to the first replaced sample.
    pub detection_latency_s: Option<f64>,
    pub reacquisitions: u32,
}

impl FilterReport {
    pub fn replaced_samples(&self) -> u64 {
        self.replaced_ranges.iter().map(|(s, e)| e - s + 1).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

/// Ratio of forward to backward difference around `y`.
///
/// Returns 0 when both differences are below `eps` and `f64::INFINITY` when
/// only the backward one is.
pub fn pollution_ratio(y_prev: f64, y: f64, y_next: f64, eps: f64) -> f64 {
    let back = (y - y_prev).abs();
    let fwd = (y - y_next).abs();
    if back < eps {
        if fwd < eps {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        fwd / back
    }
}

/// True iff `samples` holds at least `n_p` consecutive values `>= v_threshold`.
pub fn is_pulse_width(samples: &[f64], v_threshold: f64, n_p: usize) -> Result<bool> {
    if n_p == 0 {
        return Err(Error::input("n_p must be >= 1"));
    }
    if samples.len() < n_p {
        return Err(Error::input(format!("slice of {} samples is shorter than n_p = {n_p}", samples.len())));
    }
    let mut run = 0;
    for &x in samples {
        if x >= v_threshold {
            run += 1;
            if run >= n_p {
                return Ok(true);
            }
        } else {
            run = 0;
        }
    }
    Ok(false)
}

/// Replaces `[start, end]` by a straight line between the neighbouring samples.
/// Without a left neighbour the right one is held, and vice versa.
pub fn interpolate_window(series: &SampleSeries, start: usize, end: usize) -> Result<SampleSeries> {
    let n = series.len();
    if start > end || end >= n {
        return Err(Error::input(format!("window [{start}, {end}] out of range for {n} samples")));
    }
    let mut out = series.clone();
    fill_linear(out.samples_mut(), start, end, None)?;
    Ok(out)
}

/// In-place interpolation over `[start, end]`. `left_outside` stands in for
/// the sample before index 0.
fn fill_linear(buf: &mut [f64], start: usize, end: usize, left_outside: Option<f64>) -> Result<()> {
    let left = if start > 0 { Some(buf[start - 1]) } else { left_outside };
    let right = buf.get(end + 1).copied();
    match (left, right) {
        (Some(l), Some(r)) => {
            let span = (end - start + 2) as f64;
            for (k, slot) in buf[start..=end].iter_mut().enumerate() {
                let frac = (k + 1) as f64 / span;
                *slot = l + (r - l) * frac;
            }
        }
        (Some(v), None) | (None, Some(v)) => buf[start..=end].fill(v),
        (None, None) => {
            return Err(Error::input("window covers the whole series; nothing to interpolate from"));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
struct Window {
    start: u64,
    end: u64,
    center: u64,
    /// Peak of the first detection inside the window.
    hit: Option<u64>,
}

/// Streaming window filter with a small fixed latency.
///
/// Raw samples go in through [`push`](Self::push); filtered samples come out in
/// order once no future window can touch them. [`finish`](Self::finish)
/// flushes the tail.
pub struct WindowFilter {
    state: FilterState,
    sample_rate_hz: f64,
    // raw and output samples for stream indices [base, base + raw.len())
    base: u64,
    raw: VecDeque<f64>,
    out: VecDeque<f64>,
    cursor: u64,
    emitted: u64,
    last_emitted: Option<f64>,
    pending: Option<Window>,
    last_fired_end: Option<u64>,
    eps_cache: Option<(u64, f64)>,
    report: FilterReport,
}

impl WindowFilter {
    pub fn new(state: FilterState, sample_rate_hz: f64) -> Result<Self> {
        state.params.validate()?;
        if !(sample_rate_hz > 0.0) {
            return Err(Error::input("sample rate must be > 0"));
        }
        let base = state.position - state.history.len() as u64;
        let raw: VecDeque<f64> = state.history.iter().copied().collect();
        let mut filter = Self {
            sample_rate_hz,
            base,
            out: raw.clone(),
            raw,
            cursor: state.position,
            emitted: state.position,
            last_emitted: state.last_output,
            pending: None,
            last_fired_end: None,
            eps_cache: None,
            report: FilterReport::default(),
            state,
        };
        filter.pending = filter.predicted_window();
        Ok(filter)
    }

    pub fn state(&self) -> &FilterState {
        &self.state
    }

    pub fn report(&self) -> &FilterReport {
        &self.report
    }

    /// Stream index of the next sample `push` will hand back.
    pub fn emitted(&self) -> u64 {
        self.emitted
    }

    fn end(&self) -> u64 {
        self.base + self.raw.len() as u64
    }

    fn raw_at(&self, i: u64) -> f64 {
        self.raw[(i - self.base) as usize]
    }

    fn lookahead(&self) -> u64 {
        let p = &self.state.params;
        (p.window_width_samples as u64) + p.half_right() + 1
    }

    fn predicted_window(&self) -> Option<Window> {
        if self.state.mode == Mode::Acquire {
            return None;
        }
        let anchor = self.state.anchor_index?;
        let center = anchor + self.state.params.period_samples as u64;
        Some(Window {
            start: center.saturating_sub(self.state.params.half_left()),
            end: center + self.state.params.half_right(),
            center,
            hit: None,
        })
    }

    /// Feeds raw samples, returns the samples that became final.
    pub fn push(&mut self, samples: &[f64]) -> Vec<f64> {
        self.raw.extend(samples.iter().copied());
        self.out.extend(samples.iter().copied());
        self.advance(false);
        self.emit(false)
    }

    /// Flushes everything still held back and returns it.
    pub fn finish(&mut self) -> Vec<f64> {
        self.advance(true);
        self.emit(true)
    }

    /// Ends the stream and hands back the state for a later block.
    pub fn into_parts(mut self) -> (FilterState, FilterReport) {
        let tail = self.finish();
        debug_assert!(tail.is_empty());
        let end = self.end();
        let keep = (self.state.params.period_samples + 2).min(self.raw.len());
        self.state.history = self.raw.iter().skip(self.raw.len() - keep).copied().collect();
        self.state.position = end;
        self.state.last_output = self.last_emitted;
        self.report.reacquisitions = self.state.reacquisitions;
        (self.state, self.report)
    }

    fn advance(&mut self, flush: bool) {
        let la = self.lookahead();
        loop {
            let end = self.end();
            if self.cursor >= end || (!flush && self.cursor + la >= end) {
                break;
            }
            if let Some(win) = self.pending {
                if self.cursor > win.end {
                    self.finalize_window(win);
                    continue;
                }
            }
            let c = self.cursor;
            if self.last_fired_end.is_some_and(|e| c <= e) {
                self.cursor += 1;
                continue;
            }
            if let Some(peak) = self.candidate(c) {
                match self.state.mode {
                    Mode::Acquire => {
                        self.state.anchor_index = Some(peak);
                        self.state.confirmations = 0;
                        self.state.misses = 0;
                        self.fire_centered(peak);
                        self.state.mode = Mode::Confirm;
                        self.pending = self.predicted_window();
                    }
                    Mode::Confirm | Mode::Track => {
                        let in_window = self.pending.as_mut().filter(|w| c >= w.start && c <= w.end);
                        match in_window {
                            Some(w) => {
                                if w.hit.is_none() {
                                    w.hit = Some(peak);
                                }
                            }
                            None => self.fire_centered(peak),
                        }
                    }
                }
            }
            self.cursor += 1;
        }
        if flush {
            // a window that starts inside the stream is judged on what arrived
            if let Some(win) = self.pending {
                if win.start < self.end() {
                    self.finalize_window(win);
                }
            }
        }
    }

    fn finalize_window(&mut self, win: Window) {
        self.pending = None;
        let st = &mut self.state;
        match (st.mode, win.hit) {
            (Mode::Acquire, _) => return,
            (Mode::Confirm, Some(peak)) => {
                st.anchor_index = Some(peak);
                st.confirmations += 1;
                if st.confirmations >= st.params.confirm_count {
                    st.mode = Mode::Track;
                    st.confirmations = st.params.confirm_count;
                }
                self.fire_centered(peak);
            }
            (Mode::Confirm, None) => {
                // hypothesis not confirmed
                st.mode = Mode::Acquire;
                st.anchor_index = None;
                st.confirmations = 0;
            }
            (Mode::Track, Some(peak)) => {
                st.anchor_index = Some(peak);
                st.misses = 0;
                self.fire_centered(peak);
            }
            (Mode::Track, None) => {
                st.anchor_index = Some(win.center);
                st.misses += 1;
                let lost = st.misses >= st.params.miss_limit;
                if lost {
                    st.mode = Mode::Acquire;
                    st.anchor_index = None;
                    st.misses = 0;
                    st.confirmations = 0;
                    st.reacquisitions += 1;
                }
                self.fire(win.start, win.end);
            }
        }
        self.pending = self.predicted_window();
    }

    /// Candidate test at stream index `c`; returns the pulse peak index.
    fn candidate(&mut self, c: u64) -> Option<u64> {
        if c < self.base + 2 {
            return None;
        }
        let eps = self.eps_at(c)?;
        let y = self.raw_at(c);
        let k = pollution_ratio(self.raw_at(c - 2), self.raw_at(c - 1), y, eps);
        if !(k > self.state.params.th) {
            return None;
        }
        let v = self.level_at(c, eps);
        if y < v {
            return None;
        }
        let end = self.end();
        let n_p = self.state.params.n_p as u64;
        if c + n_p > end {
            return None;
        }
        let width: Vec<f64> = (c..c + n_p).map(|i| self.raw_at(i)).collect();
        if !is_pulse_width(&width, v, n_p as usize).unwrap_or(false) {
            return None;
        }
        let run_end = (c + self.state.params.window_width_samples as u64).min(end);
        let mut peak = c;
        let mut i = c + 1;
        while i < run_end && self.raw_at(i) >= v {
            if self.raw_at(i) > self.raw_at(peak) {
                peak = i;
            }
            i += 1;
        }
        // a pulse drops back below the level within the window; a step does not
        if i >= end || self.raw_at(i) >= v {
            return None;
        }
        Some(peak)
    }

    /// Denominator guard in force at index `c`; `None` until enough history exists.
    fn eps_at(&mut self, c: u64) -> Option<f64> {
        let period = self.state.params.period_samples as u64;
        let lo = c.saturating_sub(period).max(self.base);
        if ((c - lo) as usize) < MIN_THRESHOLD_HISTORY.min(period as usize) {
            return None;
        }
        if let Some(eps) = self.state.params.eps {
            return Some(eps);
        }
        // a young estimate is refreshed as often as its history grows by a quarter
        let refresh = (period / 4).min((c - lo) / 4).max(1);
        if let Some((at, eps)) = self.eps_cache {
            if c >= at && c - at < refresh {
                return Some(eps);
            }
        }
        let max_abs = (lo..c).map(|i| self.raw_at(i).abs()).fold(0.0f64, f64::max);
        let eps = (1e-9 * max_abs).max(f64::MIN_POSITIVE);
        self.eps_cache = Some((c, eps));
        Some(eps)
    }

    /// Amplitude threshold at index `c`, from the raw samples preceding it.
    fn level_at(&self, c: u64, eps: f64) -> f64 {
        match self.state.params.v_threshold {
            Level::Fixed(v) => v,
            Level::Auto { mad_factor, min_contrast } => {
                let lo = c.saturating_sub(self.state.params.period_samples as u64).max(self.base);
                // the jump is judged from the previous sample, which follows drift and
                // the dither swing; the first sample of a pulse still sits on the background
                let baseline = self.raw_at(c - 1);
                // step noise sigma: the period median covers white jitter and drift slope,
                // the local mean covers stretches busier than the period as a whole;
                // both are scaled to be consistent for Gaussian steps
                let step = |i: u64| (self.raw_at(i) - self.raw_at(i - 1)).abs();
                let mut steps: Vec<f64> = (lo + 1..c).map(step).collect();
                let steps_lo = c.saturating_sub(LOCAL_STEPS + 1).max(lo) + 1;
                let local_step = (steps_lo..c).map(step).sum::<f64>() / (c - steps_lo).max(1) as f64;
                let sigma = (MAD_TO_SIGMA * median(&mut steps)).max(MEAN_ABS_TO_SIGMA * local_step);
                let spread = sigma.max(1e-3 * baseline.abs()).max(eps);
                let local_mean = (steps_lo - 1..c).map(|i| self.raw_at(i)).sum::<f64>() / (c - steps_lo + 1) as f64;
                (baseline + mad_factor * spread).max(min_contrast * local_mean)
            }
        }
    }

    fn fire_centered(&mut self, peak: u64) {
        let p = &self.state.params;
        let start = peak.saturating_sub(p.half_left());
        let end = peak + p.half_right();
        self.fire(start, end);
    }

    /// Interpolates `[start, end]`, clipped to keep ranges disjoint and inside the stream.
    fn fire(&mut self, start: u64, end: u64) {
        let start = match self.last_fired_end {
            Some(e) => start.max(e + 1),
            None => start,
        }
        .max(self.emitted);
        let end = end.min(self.end().saturating_sub(1));
        if start > end || start >= self.end() {
            return;
        }
        let lo = (start - self.base) as usize;
        let hi = (end - self.base) as usize;
        let left_outside = if lo == 0 { self.last_emitted } else { None };
        let slice = self.out.make_contiguous();
        fill_linear(slice, lo, hi, left_outside).expect("a window always has a neighbour");
        self.last_fired_end = Some(end);
        if self.report.detection_latency_s.is_none() {
            self.report.detection_latency_s = Some(start as f64 / self.sample_rate_hz);
        }
        self.report.replaced_ranges.push((start, end));
    }

    fn emit(&mut self, flush: bool) -> Vec<f64> {
        let end = self.end();
        let safe = if flush {
            end
        } else {
            let hl = self.state.params.half_left();
            let mut limit = self.cursor.saturating_sub(hl);
            if let Some(w) = self.pending {
                limit = limit.min(w.start);
            }
            limit.min(end)
        };
        let mut emitted = Vec::new();
        while self.emitted < safe {
            let v = self.out[(self.emitted - self.base) as usize];
            emitted.push(v);
            self.last_emitted = Some(v);
            self.emitted += 1;
        }
        // drop what is no longer needed for the edge test or the threshold window
        let keep_from = self.emitted.min(self.cursor).saturating_sub(self.state.params.period_samples as u64 + 2);
        if keep_from > self.base + 4096 {
            let n = (keep_from - self.base) as usize;
            self.raw.drain(..n);
            self.out.drain(..n);
            self.base = keep_from;
        }
        emitted
    }
}

fn median(values: &mut [f64]) -> f64 {
    let n = values.len();
    let mid = n / 2;
    let (_, m, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *m;
    if n % 2 == 1 {
        upper
    } else {
        let lower = values[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

/// Filters one block and returns the output, the carried state and a report.
///
/// The block must cover at least two pulse periods. Ranges in the report are
/// stream indices; for a fresh state they coincide with block indices.
pub fn process_block(series: &SampleSeries, state: FilterState) -> Result<(SampleSeries, FilterState, FilterReport)> {
    let need = 2 * state.params.period_samples;
    if series.len() < need {
        return Err(Error::input(format!(
            "block of {} samples is shorter than two pulse periods ({need})",
            series.len()
        )));
    }
    let mut filter = WindowFilter::new(state, series.sample_rate_hz())?;
    let mut out = filter.push(series.samples());
    out.extend(filter.finish());
    let (state, report) = filter.into_parts();
    debug_assert_eq!(out.len(), series.len());
    Ok((series.with_samples(out), state, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(period: usize, width: usize, n_p: usize) -> DetectorParams {
        DetectorParams {
            th: 2.0,
            eps: Some(1e-9),
            beta: 0.9,
            v_threshold: Level::Fixed(2.0),
            n_p,
            window_width_samples: width,
            period_samples: period,
            confirm_count: 5,
            miss_limit: 3,
        }
    }

    #[test]
    fn ratio_arithmetic() {
        assert!((pollution_ratio(1.0, 1.1, 1.2, 1e-6) - 1.0).abs() < 1e-12);
        assert!((pollution_ratio(0.10, 0.12, 5.00, 1e-6) - 244.0).abs() < 1e-9);
        assert_eq!(pollution_ratio(1.0, 1.0, 1.0, 1e-6), 0.0);
        assert_eq!(pollution_ratio(1.0, 1.0, 3.0, 1e-6), f64::INFINITY);
    }

    #[test]
    fn width_rule() {
        assert!(is_pulse_width(&[0.1, 4.8, 0.1], 2.0, 1).unwrap());
        assert!(!is_pulse_width(&[0.1, 4.8, 0.1, 0.1], 2.0, 3).unwrap());
        assert!(is_pulse_width(&[0.1, 4.8, 4.9, 4.7, 0.1], 2.0, 3).unwrap());
        assert!(is_pulse_width(&[0.1, 4.8], 2.0, 3).is_err());
    }

    #[test]
    fn interpolation_rules() {
        let s = SampleSeries::new(1.0, 0.0, vec![0.5, 9.0, 9.0, 0.5]).unwrap();
        assert_eq!(interpolate_window(&s, 1, 2).unwrap().samples(), &[0.5; 4]);

        let s = SampleSeries::new(1.0, 0.0, vec![0.0, 7.0, 7.0, 7.0, 1.0]).unwrap();
        assert_eq!(interpolate_window(&s, 1, 3).unwrap().samples(), &[0.0, 0.25, 0.5, 0.75, 1.0]);

        let s = SampleSeries::new(1.0, 0.0, vec![5.0, 5.0, 0.7, 0.1]).unwrap();
        assert_eq!(interpolate_window(&s, 0, 1).unwrap().samples(), &[0.7, 0.7, 0.7, 0.1]);

        let s = SampleSeries::new(1.0, 0.0, vec![0.2, 0.3, 5.0]).unwrap();
        assert_eq!(interpolate_window(&s, 2, 2).unwrap().samples(), &[0.2, 0.3, 0.3]);

        let s = SampleSeries::new(1.0, 0.0, vec![1.0, 2.0]).unwrap();
        assert!(interpolate_window(&s, 0, 1).is_err());
        assert!(interpolate_window(&s, 1, 2).is_err());
    }

    #[test]
    fn derive_default_parameters() {
        let p = DetectorParams::derive(&FilterConfig::default(), 10e6, 10e3, 10e-9).unwrap();
        assert_eq!(p.n_p, 1);
        assert_eq!(p.window_width_samples, 1);
        assert_eq!(p.period_samples, 1000);
        let p = DetectorParams::derive(&FilterConfig::default(), 1e9, 10e3, 10e-9).unwrap();
        assert_eq!(p.n_p, 9);
        assert_eq!(p.window_width_samples, 100);
        let bad = FilterConfig { beta: 0.5, ..FilterConfig::default() };
        assert!(DetectorParams::derive(&bad, 10e6, 10e3, 10e-9).is_err());
    }

    #[test]
    fn short_block_rejected() {
        let st = FilterState::new(params(100, 1, 1)).unwrap();
        let s = SampleSeries::new(1.0, 0.0, vec![0.0; 150]).unwrap();
        assert!(matches!(process_block(&s, st), Err(Error::InvalidInput(_))));
    }

    fn baseline(n: usize) -> Vec<f64> {
        (0..n).map(|i| 1.0 + 0.1 * (i as f64 * 0.01).sin()).collect()
    }

    #[test]
    fn clean_block_passes_through() {
        let x = baseline(1000);
        let s = SampleSeries::new(1.0, 0.0, x.clone()).unwrap();
        let (y, st, rep) = process_block(&s, FilterState::new(params(100, 1, 1)).unwrap()).unwrap();
        assert_eq!(y.samples(), &x[..]);
        assert_eq!(st.mode, Mode::Acquire);
        assert!(rep.replaced_ranges.is_empty());
        assert_eq!(rep.detection_latency_s, None);
    }

    #[test]
    fn isolated_pulses_are_replaced() {
        let mut x = baseline(1000);
        for k in 0..9 {
            x[50 + 100 * k] = 40.0;
        }
        let s = SampleSeries::new(1.0, 0.0, x.clone()).unwrap();
        let (y, st, rep) = process_block(&s, FilterState::new(params(100, 1, 1)).unwrap()).unwrap();
        // once tracking, the predicted window at 950 is replaced even without a pulse
        let expected: Vec<(u64, u64)> = (0..10).map(|k| (50 + 100 * k, 50 + 100 * k)).collect();
        assert_eq!(rep.replaced_ranges, expected);
        assert_eq!(st.mode, Mode::Track);
        assert!(y.samples().iter().all(|&v| v < 2.0));
        assert_eq!(rep.detection_latency_s, Some(50.0));
    }

    #[test]
    fn wide_pulse_needs_consecutive_samples() {
        // n_p = 3: a lone spike is phase noise, a 3-sample plateau is a pulse
        let mut x = baseline(600);
        x[120] = 30.0;
        for k in 0..3 {
            x[250 + 100 * k] = 30.0;
            x[251 + 100 * k] = 31.0;
            x[252 + 100 * k] = 29.0;
        }
        let s = SampleSeries::new(1.0, 0.0, x.clone()).unwrap();
        let (y, _, rep) = process_block(&s, FilterState::new(params(100, 7, 3)).unwrap()).unwrap();
        assert_eq!(y.samples()[120], 30.0);
        assert_eq!(rep.replaced_ranges[0], (248, 254));
        assert!(y.samples()[250..253].iter().all(|&v| v < 2.0));
    }

    #[test]
    fn streaming_matches_block_processing() {
        let mut x = baseline(3000);
        for k in 0..29 {
            x[37 + 100 * k] = 25.0;
        }
        let s = SampleSeries::new(1.0, 0.0, x.clone()).unwrap();
        let (whole, _, rep_whole) = process_block(&s, FilterState::new(params(100, 1, 1)).unwrap()).unwrap();

        let mut f = WindowFilter::new(FilterState::new(params(100, 1, 1)).unwrap(), 1.0).unwrap();
        let mut out = Vec::new();
        for chunk in x.chunks(17) {
            out.extend(f.push(chunk));
        }
        out.extend(f.finish());
        assert_eq!(out, whole.samples());
        assert_eq!(f.report().replaced_ranges, rep_whole.replaced_ranges);
    }

    #[test]
    fn state_carries_across_blocks() {
        let mut x = baseline(2000);
        for k in 0..20 {
            x[60 + 100 * k] = 25.0;
        }
        let a = SampleSeries::new(1.0, 0.0, x[..1000].to_vec()).unwrap();
        let b = SampleSeries::new(1.0, 1000.0, x[1000..].to_vec()).unwrap();
        let (_, st, _) = process_block(&a, FilterState::new(params(100, 1, 1)).unwrap()).unwrap();
        assert_eq!(st.mode, Mode::Track);
        assert_eq!(st.anchor_index, Some(960));
        let (yb, st, rep) = process_block(&b, st).unwrap();
        assert_eq!(st.mode, Mode::Track);
        assert_eq!(rep.replaced_ranges.first(), Some(&(1060, 1060)));
        assert!(yb.samples().iter().all(|&v| v < 2.0));
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 3.0, 2.0]), 2.5);
    }
}
