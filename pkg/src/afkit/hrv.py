"""Heart-rate-variability features from an inter-beat-interval series.

Twenty features across three groups: 15 time-domain statistics of the
intervals and their successive differences, LF/HF band powers plus their
ratio from a Welch periodogram of the resampled IBI curve, and the two
Poincare-plot dispersion axes. Conventions are pinned here so every value is
bit-reproducible: sample (n-1) standard deviations, strict inequalities for
the NNx counts, and NNx percentages relative to the number of successive
differences.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, fields

import numpy as np
from scipy.signal import welch

from .errors import InsufficientDataError
from .series import IBISeries, resample_ibi

LF_BAND = (0.04, 0.15)
HF_BAND = (0.15, 0.40)

# Welch estimator knobs, fixed for reproducibility.
SPECTRAL_RESAMPLE_HZ = 4.0
WELCH_SEGMENT = 64
MIN_SPECTRAL_SPAN_S = 10.0

FEATURE_NAMES = (
    "mean_nn_ms", "sdnn_ms", "sdsd_ms", "pnn50_pct", "pnn20_pct",
    "nn50_count", "nn20_count", "rmssd_ms", "median_nn_ms", "range_nn_ms",
    "cvsd", "cvnni", "max_hr_bpm", "min_hr_bpm", "std_hr_bpm",
    "lf_power", "hf_power", "lf_hf_ratio", "sd1_ms", "sd2_ms",
)


@dataclass(frozen=True)
class HRVVector:
    mean_nn_ms: float
    sdnn_ms: float
    sdsd_ms: float
    pnn50_pct: float
    pnn20_pct: float
    nn50_count: int
    nn20_count: int
    rmssd_ms: float
    median_nn_ms: float
    range_nn_ms: float
    cvsd: float
    cvnni: float
    max_hr_bpm: float
    min_hr_bpm: float
    std_hr_bpm: float
    lf_power: float
    hf_power: float
    lf_hf_ratio: float
    sd1_ms: float
    sd2_ms: float
    label: str = ""
    subject_id: int = -1

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def feature_array(self) -> np.ndarray:
        return np.array([float(getattr(self, n)) for n in FEATURE_NAMES])


def time_features(ibi: IBISeries) -> dict:
    """The 15 time-domain statistics."""
    nn = np.asarray(ibi.intervals_ms, dtype=float)
    if nn.size < 3:
        raise InsufficientDataError("need >= 3 intervals for time-domain features")
    d = np.diff(nn)
    mean_nn = float(nn.mean())
    sdnn = float(nn.std(ddof=1))
    sdsd = float(d.std(ddof=1))
    rmssd = float(np.sqrt(np.mean(d**2)))
    nn50 = int(np.sum(np.abs(d) > 50.0))
    nn20 = int(np.sum(np.abs(d) > 20.0))
    hr = 60000.0 / nn
    return {
        "mean_nn_ms": mean_nn,
        "sdnn_ms": sdnn,
        "sdsd_ms": sdsd,
        "pnn50_pct": 100.0 * nn50 / d.size,
        "pnn20_pct": 100.0 * nn20 / d.size,
        "nn50_count": nn50,
        "nn20_count": nn20,
        "rmssd_ms": rmssd,
        "median_nn_ms": float(np.median(nn)),
        "range_nn_ms": float(nn.max() - nn.min()),
        "cvsd": rmssd / mean_nn,
        "cvnni": sdnn / mean_nn,
        "max_hr_bpm": float(hr.max()),
        "min_hr_bpm": float(hr.min()),
        "std_hr_bpm": float(hr.std(ddof=1)),
    }


def spectral_features(ibi: IBISeries) -> dict:
    """LF / HF band powers of the mean-removed, 4 Hz-resampled IBI curve.

    Welch periodogram with Hann windows of 64 samples (or the full series if
    shorter) at 50% overlap; band powers by rectangle integration. A zero HF
    power flags the ratio as NaN rather than dividing to infinity.
    """
    if ibi.span_s < MIN_SPECTRAL_SPAN_S:
        raise InsufficientDataError(
            f"IBI series spans {ibi.span_s:.1f} s; need >= {MIN_SPECTRAL_SPAN_S} s")
    series = resample_ibi(ibi, SPECTRAL_RESAMPLE_HZ)
    x = np.asarray(series.values) - np.mean(series.values)
    nperseg = min(WELCH_SEGMENT, len(x))
    freqs, psd = welch(x, fs=SPECTRAL_RESAMPLE_HZ, window="hann",
                       nperseg=nperseg, noverlap=nperseg // 2, detrend=False)
    df = freqs[1] - freqs[0]
    lf = float(np.sum(psd[(freqs >= LF_BAND[0]) & (freqs < LF_BAND[1])]) * df)
    hf = float(np.sum(psd[(freqs >= HF_BAND[0]) & (freqs <= HF_BAND[1])]) * df)
    ratio = lf / hf if hf > 0 else math.nan
    return {"lf_power": lf, "hf_power": hf, "lf_hf_ratio": ratio}


def poincare_features(ibi: IBISeries) -> dict:
    """Poincare-plot dispersion axes derived from SDSD and SDNN."""
    t = time_features(ibi)
    sd1 = t["sdsd_ms"] / math.sqrt(2.0)
    sd2 = math.sqrt(max(2.0 * t["sdnn_ms"] ** 2 - sd1**2, 0.0))
    return {"sd1_ms": sd1, "sd2_ms": sd2}


def extract(ibi: IBISeries, label: str = "", subject_id: int = -1) -> HRVVector:
    """Assemble the full 20-feature vector for one clip.

    Clips too short for the spectral window get zero LF/HF power and a zero
    ratio instead of an error, so short-clip sweeps still produce rows.
    """
    feats = dict(time_features(ibi))
    try:
        feats.update(spectral_features(ibi))
    except InsufficientDataError:
        feats.update({"lf_power": 0.0, "hf_power": 0.0, "lf_hf_ratio": 0.0})
    feats.update(poincare_features(ibi))
    return HRVVector(label=label, subject_id=subject_id, **feats)


# ---------------------------------------------------------------------------
# feature table I/O
# ---------------------------------------------------------------------------


def write_features_csv(vectors: list[HRVVector], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(FEATURE_NAMES) + ["subject_id", "label"])
        for v in vectors:
            row = [repr(float(getattr(v, n))) for n in FEATURE_NAMES]
            writer.writerow(row + [v.subject_id, v.label])


def read_features_csv(path) -> list[HRVVector]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            kwargs = {n: float(row[n]) for n in FEATURE_NAMES}
            kwargs["nn50_count"] = int(float(row["nn50_count"]))
            kwargs["nn20_count"] = int(float(row["nn20_count"]))
            out.append(HRVVector(label=row["label"],
                                 subject_id=int(row["subject_id"]), **kwargs))
    return out
