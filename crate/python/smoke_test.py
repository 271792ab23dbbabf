"""Smoke test of the pulselock extension module.

Build and install first:  pip install --no-build-isolation -e crates/py
Then run:                 python python/smoke_test.py
"""

import json
import math
import sys
import tempfile
from pathlib import Path

import pulselock


def check(cond, what):
    print(("ok   " if cond else "FAIL ") + what)
    return bool(cond)


def main():
    results = []
    sc = pulselock.Scenario()
    results.append(check(sc.seed == 1 and sc.ad_rate_hz == 10e6, "default scenario"))
    round_trip = pulselock.Scenario.from_json(sc.to_json())
    results.append(check(round_trip.to_json() == sc.to_json(), "config JSON round trip"))

    try:
        bad = json.loads(sc.to_json())
        bad["ad_rate_hz"] = -1.0
        pulselock.Scenario.from_json(json.dumps(bad)).validate()
        results.append(check(False, "invalid config raises ValueError"))
    except ValueError:
        results.append(check(True, "invalid config raises ValueError"))

    # two equal beams: I = 4 cos^2(dphi / 2)
    i = pulselock.combined_intensity([1.0, 1.0], [0.0, 1.0])
    results.append(check(abs(i - 4 * math.cos(0.5) ** 2) < 1e-12, "two-beam interference"))
    results.append(check(pulselock.pollution_ratio(1.0, 2.0, 5.0, 1e-9) == 3.0, "pollution ratio"))
    results.append(check(pulselock.wrap_phase(3 * math.pi) == math.pi, "phase wrap"))

    raw = pulselock.simulate_open_loop(sc)
    results.append(check(len(raw) == 20000, "open loop: 2 ms at 10 MHz"))
    filtered, report = pulselock.filter_block(raw, sc)
    ranges = report["replaced_ranges"]
    results.append(check(len(ranges) == 20 and ranges[0] == [500, 500], "filter replaces one window per pulse"))
    untouched = all(a == b for k, (a, b) in enumerate(zip(raw, filtered))
                    if not any(lo <= k <= hi for lo, hi in ranges))
    results.append(check(untouched, "samples outside windows unchanged"))

    mean = sum(raw) / len(raw)
    freqs, before = pulselock.power_spectrum_db([x - mean for x in raw], 10e6)
    fmean = sum(filtered) / len(filtered)
    _, after = pulselock.power_spectrum_db([x - fmean for x in filtered], 10e6)
    band = [k for k, f in enumerate(freqs) if 8e3 <= f <= 12e3]
    drop = max(before[k] for k in band) - max(after[k] for k in band)
    results.append(check(drop >= 40.0, f"8-12 kHz line drops {drop:.1f} dB"))

    run = pulselock.run_closed_loop(sc)
    phase = run["phase_diff"]
    last_bad = max((k for k, v in enumerate(phase) if abs(v) >= 0.1), default=-1)
    lock_s = (last_bad + 1) / run["sample_rate_hz"]
    tail = run["intensity"][-2000:]
    ratio = sum(tail) / len(tail) / run["i_max"]
    results.append(check(lock_s <= 1e-3, f"locks after {lock_s * 1e6:.1f} us"))
    results.append(check(ratio >= 0.9, f"final intensity {ratio:.4f} I_max"))
    results.append(check(run["phase_cmd_rad"][0] == 0.0, "reference command stays 0"))

    noise = pulselock.synth_phase_noise(seed=3, duration_s=1e-4, rate_hz=1e6)
    again = pulselock.synth_phase_noise(seed=3, duration_s=1e-4, rate_hz=1e6)
    results.append(check(len(noise) == 100 and noise == again, "seeded noise is reproducible"))

    with tempfile.TemporaryDirectory() as tmp:
        summary = pulselock.run_scenario("filter-only", sc, tmp)
        written = json.loads((Path(tmp) / "summary.json").read_text())
        results.append(check(summary == written, "run_scenario returns the written summary"))
        results.append(check(summary["detection_latency_s"] == 5e-5, "detection latency 50 us"))

    failed = results.count(False)
    print(f"{len(results) - failed}/{len(results)} smoke checks passed")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
