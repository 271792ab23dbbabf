//! State-machine traces of the window filter on hand-built pulse trains.

use pulselock_core::filter::{process_block, DetectorParams, FilterState, Level, Mode};
use pulselock_core::waveform::SampleSeries;

fn params() -> DetectorParams {
    DetectorParams {
        th: 2.0,
        eps: None,
        beta: 0.9,
        v_threshold: Level::Auto { mad_factor: 8.0, min_contrast: 10.0 },
        n_p: 1,
        window_width_samples: 1,
        period_samples: 100,
        confirm_count: 5,
        miss_limit: 3,
    }
}

fn baseline(n: usize) -> Vec<f64> {
    (0..n).map(|i| 1.0 + 0.1 * (i as f64 * 0.01).sin()).collect()
}

/// Ten pulses at 50 + 100k, then ten more shifted by three window widths.
fn shifted_train(n: usize) -> (Vec<f64>, Vec<usize>) {
    let mut x = baseline(n);
    let pulses: Vec<usize> = (0..20).map(|k| if k < 10 { 50 + 100 * k } else { 53 + 100 * k }).collect();
    for &p in pulses.iter().filter(|&&p| p < n) {
        x[p] = 40.0;
    }
    (x, pulses)
}

#[test]
fn shift_forces_one_reacquisition() {
    let (x, pulses) = shifted_train(2000);
    let s = SampleSeries::new(1.0, 0.0, x).unwrap();
    let (y, st, report) = process_block(&s, FilterState::new(params()).unwrap()).unwrap();

    // 50: acquire; 150..550 confirm (track from 550); 650..950 tracked.
    // 1050, 1150: empty predicted windows (misses 1, 2), shifted pulses fired as strays.
    // 1250: third miss, back to acquire; 1253 re-acquired; 1353..1753 confirm; 1853, 1953 tracked.
    let mut expected: Vec<(u64, u64)> = (0..10).map(|k| 50 + 100 * k).map(|i| (i, i)).collect();
    for i in [1050, 1053, 1150, 1153, 1250] {
        expected.push((i, i));
    }
    for k in 12..20u64 {
        let i = 53 + 100 * k;
        expected.push((i, i));
    }
    assert_eq!(report.replaced_ranges, expected);
    assert_eq!(report.reacquisitions, 1);
    assert_eq!(st.mode, Mode::Track);
    assert_eq!(st.anchor_index, Some(1953));
    for p in pulses {
        assert!(y.samples()[p] < 2.0, "pulse at {p} survived");
    }
}

#[test]
fn track_needs_five_consecutive_confirmations() {
    let (x, _) = shifted_train(2000);
    let run = |n: usize| {
        let s = SampleSeries::new(1.0, 0.0, x[..n].to_vec()).unwrap();
        process_block(&s, FilterState::new(params()).unwrap()).unwrap().1
    };
    // the window at 450 is judged once sample 451 is seen
    let st = run(460);
    assert_eq!(st.mode, Mode::Confirm);
    assert_eq!(st.confirmations, 4);
    let st = run(560);
    assert_eq!(st.mode, Mode::Track);
    assert_eq!(st.confirmations, 5);
}

#[test]
fn failed_confirmation_returns_to_acquire_without_reacquisition() {
    let mut x = baseline(600);
    x[50] = 40.0;
    x[150] = 40.0;
    // 250 missing
    let s = SampleSeries::new(1.0, 0.0, x).unwrap();
    let (_, st, report) = process_block(&s, FilterState::new(params()).unwrap()).unwrap();
    assert_eq!(st.mode, Mode::Acquire);
    assert_eq!(report.reacquisitions, 0);
    assert_eq!(report.replaced_ranges, vec![(50, 50), (150, 150)]);
}

#[test]
fn latency_is_time_of_first_replacement() {
    let (x, _) = shifted_train(1000);
    let s = SampleSeries::new(10e6, 0.0, x).unwrap();
    let (_, _, report) = process_block(&s, FilterState::new(params()).unwrap()).unwrap();
    assert_eq!(report.detection_latency_s, Some(50.0 / 10e6));
}
