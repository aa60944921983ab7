"""Regenerate crates/core/tests/data/peak_golden.json.

Runs the `findpeaks` 1-D `peakdetect` path (version 2.7.5) on a fixed list of
series and records the `peak` column it reports. Needs the findpeaks sources on
PYTHONPATH; its optional image dependencies are stubbed out.

    PYTHONPATH=/path/to/findpeaks/findpeaks python3 scripts/gen_peak_golden.py
"""
import json
import sys
import types

import numpy as np

sys.modules.setdefault("xarray", types.ModuleType("xarray"))
import stats  # noqa: E402  (findpeaks/stats.py)
from peakdetect import peakdetect  # noqa: E402


def reference_peaks(values, lookahead, delta):
    x = np.asarray(values, dtype=float)
    max_peaks, min_peaks = peakdetect(x, lookahead=lookahead, delta=delta)
    res = stats._post_processing(x, x, min_peaks, max_peaks, None, lookahead)
    if res["max_peaks_s"] is None:
        return []
    return sorted(int(i) for i in res["max_peaks_s"][:, 0])


HAND = [
    ("spike", [0, 5, 0, 0, 0], 1.0, 2),
    ("spike_after_valley", [1, 0, 5, 0, 0, 0], 1.0, 2),
    ("rise_resets_candidate", [0, 3, 1, 4, 0, 4, 0], 1.0, 1),
    ("rise_resets_candidate_longer", [0, 3, 1, 4, 0, 4, 0, 0], 1.0, 1),
    ("increasing", [0, 1, 2, 3, 4, 5, 6, 7], 0.0, 1),
    ("decreasing", [7, 6, 5, 4, 3, 2, 1, 0], 0.0, 1),
    ("flat", [2, 2, 2, 2, 2, 2], 0.0, 1),
    ("plateau_top", [0, 1, 0, 3, 3, 3, 0, 0, 2, 0, 0], 0.0, 1),
    ("plateau_top_lookahead2", [0, 1, 0, 3, 3, 3, 0, 0, 2, 0, 0], 0.0, 2),
    ("plateau_valley", [3, 0, 0, 0, 4, 1, 1, 5, 0, 0], 0.0, 1),
    ("equal_in_lookahead", [0, 2, 0, 4, 1, 4, 0, 0, 0], 0.0, 2),
    ("trailing_peak_dropped", [0, 2, 0, 1, 0, 0, 3, 0], 0.0, 1),
    ("trailing_peak_lookahead3", [0, 2, 0, 1, 0, 0, 3, 0, 0], 0.0, 3),
    ("last_point_max", [0, 2, 0, 1, 0, 4], 0.0, 1),
    ("eta_filters_ripple", [0, 3, 2.5, 3.2, 0, 1, 0.6, 4, 0, 0], 1.0, 1),
    ("eta_zero_ripple", [0, 3, 2.5, 3.2, 0, 1, 0.6, 4, 0, 0], 0.0, 1),
    ("eta_large", [0, 3, 2.5, 3.2, 0, 1, 0.6, 4, 0, 0], 3.5, 1),
    ("eta_nonmonotone_small", [3, 5, 0, 0], 0.0, 1),
    ("eta_nonmonotone_large", [3, 5, 0, 0], 2.0, 1),
    ("two_points", [0, 1], 0.0, 1),
    ("lookahead_exceeds_length", [0, 5, 0, 0], 0.0, 6),
    ("sawtooth", [0, 2, 1, 3, 2, 4, 3, 5, 4, 6, 0, 0], 0.0, 1),
    ("sawtooth_eta", [0, 2, 1, 3, 2, 4, 3, 5, 4, 6, 0, 0], 1.5, 1),
    ("negative_values", [-5, -1, -4, -6, -2, -7, -3, -8, -8], 0.5, 1),
    ("daily_like", [float(np.cos(2 * np.pi * (h - 19) / 24)) for h in range(80)], 0.0, 3),
]


def main():
    rng = np.random.default_rng(20240611)
    cases = []
    for name, values, delta, lookahead in HAND:
        cases.append(dict(name=name, values=[float(v) for v in values], eta=float(delta),
                          lookahead=int(lookahead), peaks=reference_peaks(values, lookahead, delta)))
    for k in range(20):
        n = int(rng.integers(8, 64))
        values = [float(v) for v in np.round(rng.normal(size=n) * 2.0, 2)]
        if k % 4 == 0:
            values = [float(round(v)) for v in values]  # integer data produces plateaus
        delta = float(round(rng.choice([0.0, 0.0, 0.5, 1.0, 2.0]), 2))
        lookahead = int(rng.integers(1, 6))
        cases.append(dict(name=f"random_{k:02}", values=values, eta=delta, lookahead=lookahead,
                          peaks=reference_peaks(values, lookahead, delta)))
    json.dump({"reference": "findpeaks 2.7.5, method=peakdetect, interpolate=None", "cases": cases},
              sys.stdout, indent=1)
    sys.stdout.write("\n")


if __name__ == "__main__":
    main()
