"""Independent brute-force oracles used only by the test suite.

Everything here is written from the feature definitions using plain Python
loops and :mod:`statistics`, deliberately avoiding the package's own code
paths (and numpy where practical) so agreement is meaningful.
"""

import math
import statistics


def oracle_time_features(intervals_ms):
    nn = [float(v) for v in intervals_ms]
    n = len(nn)
    assert n >= 3
    diffs = [nn[i + 1] - nn[i] for i in range(n - 1)]
    mean_nn = sum(nn) / n
    sdnn = statistics.stdev(nn)
    sdsd = statistics.stdev(diffs)
    rmssd = math.sqrt(sum(d * d for d in diffs) / len(diffs))
    nn50 = sum(1 for d in diffs if abs(d) > 50.0)
    nn20 = sum(1 for d in diffs if abs(d) > 20.0)
    hr = [60000.0 / v for v in nn]
    srt = sorted(nn)
    if n % 2:
        median = srt[n // 2]
    else:
        median = 0.5 * (srt[n // 2 - 1] + srt[n // 2])
    return {
        "mean_nn_ms": mean_nn,
        "sdnn_ms": sdnn,
        "sdsd_ms": sdsd,
        "pnn50_pct": 100.0 * nn50 / len(diffs),
        "pnn20_pct": 100.0 * nn20 / len(diffs),
        "nn50_count": nn50,
        "nn20_count": nn20,
        "rmssd_ms": rmssd,
        "median_nn_ms": median,
        "range_nn_ms": max(nn) - min(nn),
        "cvsd": rmssd / mean_nn,
        "cvnni": sdnn / mean_nn,
        "max_hr_bpm": max(hr),
        "min_hr_bpm": min(hr),
        "std_hr_bpm": statistics.stdev(hr),
    }


def oracle_poincare(intervals_ms):
    t = oracle_time_features(intervals_ms)
    sd1 = t["sdsd_ms"] / math.sqrt(2.0)
    sd2 = math.sqrt(max(2.0 * t["sdnn_ms"] ** 2 - sd1 * sd1, 0.0))
    return {"sd1_ms": sd1, "sd2_ms": sd2}


def oracle_spectral(intervals_ms, onsets_s):
    """Mirror of the pinned spectral estimator, rebuilt step by step.

    Linear interpolation onto a 4 Hz grid, mean removal, Hann-windowed
    averaged periodogram (64-sample segments, 50% overlap, density scaling),
    rectangle band integration. Hand-rolled DFT, no scipy.
    """
    rate = 4.0
    t0, t1 = onsets_s[0], onsets_s[-1]
    n = int(math.floor((t1 - t0) * rate)) + 1
    grid = [t0 + i / rate for i in range(n)]

    def interp(t):
        if t <= onsets_s[0]:
            return intervals_ms[0]
        if t >= onsets_s[-1]:
            return intervals_ms[-1]
        for j in range(len(onsets_s) - 1):
            if onsets_s[j] <= t <= onsets_s[j + 1]:
                w = (t - onsets_s[j]) / (onsets_s[j + 1] - onsets_s[j])
                return intervals_ms[j] * (1 - w) + intervals_ms[j + 1] * w
        raise AssertionError

    x = [interp(t) for t in grid]
    mean = sum(x) / len(x)
    x = [v - mean for v in x]

    nper = min(64, len(x))
    step = nper - nper // 2
    window = [0.5 - 0.5 * math.cos(2 * math.pi * i / nper) for i in range(nper)]
    wsum2 = sum(w * w for w in window)

    segments = []
    start = 0
    while start + nper <= len(x):
        segments.append(x[start:start + nper])
        start += step

    nfreq = nper // 2 + 1
    psd = [0.0] * nfreq
    for seg in segments:
        seg = [s * w for s, w in zip(seg, window)]
        for k in range(nfreq):
            re = sum(seg[i] * math.cos(-2 * math.pi * k * i / nper) for i in range(nper))
            im = sum(seg[i] * math.sin(-2 * math.pi * k * i / nper) for i in range(nper))
            p = (re * re + im * im) / (rate * wsum2)
            if 0 < k < nper / 2:
                p *= 2.0
            psd[k] += p
    psd = [p / len(segments) for p in psd]

    df = rate / nper
    freqs = [k * df for k in range(nfreq)]
    lf = sum(p for f, p in zip(freqs, psd) if 0.04 <= f < 0.15) * df
    hf = sum(p for f, p in zip(freqs, psd) if 0.15 <= f <= 0.40) * df
    ratio = lf / hf if hf > 0 else math.nan
    return {"lf_power": lf, "hf_power": hf, "lf_hf_ratio": ratio}


def oracle_all_features(intervals_ms, onsets_s):
    out = dict(oracle_time_features(intervals_ms))
    span = onsets_s[-1] - onsets_s[0]
    if span >= 10.0:
        out.update(oracle_spectral(intervals_ms, onsets_s))
    else:
        out.update({"lf_power": 0.0, "hf_power": 0.0, "lf_hf_ratio": 0.0})
    out.update(oracle_poincare(intervals_ms))
    return out
