"""Sampled-series types, peak extraction, inter-beat intervals, and error metrics.

The four small container types here are the substrate for everything else:
raw pulse signals and model outputs live in :class:`SampledSeries`, normalized
peak-timing targets in :class:`ProbSeries`, detected peak locations in
:class:`PeakTrain`, and beat-to-beat timing in :class:`IBISeries`.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import uniform_filter1d
from scipy.signal import butter, filtfilt, find_peaks, peak_prominences

from .errors import (
    InsufficientDataError,
    InsufficientPeaksError,
    LengthError,
    NormalizationError,
    ShapeError,
    UndefinedCorrelationError,
)

# Physiologic validity window for inter-beat intervals (ms).
IBI_MIN_MS = 250.0
IBI_MAX_MS = 3000.0

# Peak-detector defaults: pass band in Hz (36-240 bpm), refractory gap in s,
# prominence threshold as a fraction of the rolling (3 s) standard deviation.
BAND_LO_HZ = 0.6
BAND_HI_HZ = 4.0
REFRACTORY_S = 0.25
PROMINENCE_FACTOR = 0.3
ROLLING_STD_WINDOW_S = 3.0

IBI_RESAMPLE_HZ = 4.0


def _as_float_array(values, name: str, ndim=(1,)) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim not in ndim:
        raise ShapeError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ShapeError(f"{name} contains non-finite values")
    return arr


@dataclass(frozen=True)
class SampledSeries:
    """Uniformly sampled real-valued series.

    ``values`` is 1D for a single channel or 2D ``(channels, time)`` for a
    multichannel clip. ``t0_s`` is the clip's start offset in seconds.
    """

    values: np.ndarray
    rate_hz: float
    t0_s: float = 0.0

    def __post_init__(self):
        arr = _as_float_array(self.values, "values", ndim=(1, 2))
        if arr.shape[-1] < 1:
            raise LengthError("series must contain at least one sample")
        if not self.rate_hz > 0:
            raise ShapeError("rate_hz must be positive")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    def __len__(self) -> int:
        return self.values.shape[-1]

    @property
    def n_channels(self) -> int:
        return 1 if self.values.ndim == 1 else self.values.shape[0]

    @property
    def duration_s(self) -> float:
        return len(self) / self.rate_hz

    def channel(self, i: int) -> "SampledSeries":
        if self.values.ndim == 1:
            if i != 0:
                raise ShapeError("single-channel series has only channel 0")
            return self
        return SampledSeries(self.values[i], self.rate_hz, self.t0_s)

    def times_s(self) -> np.ndarray:
        return self.t0_s + np.arange(len(self)) / self.rate_hz


@dataclass(frozen=True)
class ProbSeries:
    """Nonnegative series summing to one (a discrete probability over time)."""

    mass: np.ndarray
    rate_hz: float

    def __post_init__(self):
        arr = _as_float_array(self.mass, "mass")
        if arr.shape[0] < 2:
            raise LengthError("probability series needs length >= 2")
        if np.any(arr < 0):
            raise NormalizationError("probability mass must be nonnegative")
        total = float(arr.sum())
        if abs(total - 1.0) > 1e-9:
            raise NormalizationError(f"mass sums to {total!r}, expected 1")
        if not self.rate_hz > 0:
            raise ShapeError("rate_hz must be positive")
        arr.setflags(write=False)
        object.__setattr__(self, "mass", arr)

    def __len__(self) -> int:
        return self.mass.shape[0]

    def as_series(self, t0_s: float = 0.0) -> SampledSeries:
        return SampledSeries(self.mass, self.rate_hz, t0_s)


@dataclass(frozen=True)
class PeakTrain:
    """Ordered systolic-peak sample indices within a clip of ``clip_len`` samples."""

    indices: np.ndarray
    rate_hz: float
    clip_len: int

    def __post_init__(self):
        arr = np.asarray(self.indices, dtype=int)
        if arr.ndim != 1:
            raise ShapeError("indices must be 1-dimensional")
        if self.clip_len < 1:
            raise LengthError("clip_len must be >= 1")
        if arr.size:
            if arr[0] < 0 or arr[-1] >= self.clip_len:
                raise ShapeError("peak indices out of clip bounds")
            if np.any(np.diff(arr) <= 0):
                raise ShapeError("peak indices must be strictly increasing")
        if not self.rate_hz > 0:
            raise ShapeError("rate_hz must be positive")
        arr.setflags(write=False)
        object.__setattr__(self, "indices", arr)

    def __len__(self) -> int:
        return self.indices.shape[0]

    def times_s(self) -> np.ndarray:
        return self.indices / self.rate_hz


@dataclass(frozen=True)
class IBISeries:
    """Inter-beat intervals in ms, each tagged with its onset time in seconds."""

    intervals_ms: np.ndarray
    onsets_s: np.ndarray

    def __post_init__(self):
        iv = _as_float_array(self.intervals_ms, "intervals_ms")
        on = _as_float_array(self.onsets_s, "onsets_s")
        if iv.shape != on.shape:
            raise ShapeError("intervals_ms and onsets_s must have equal length")
        iv.setflags(write=False)
        on.setflags(write=False)
        object.__setattr__(self, "intervals_ms", iv)
        object.__setattr__(self, "onsets_s", on)

    def __len__(self) -> int:
        return self.intervals_ms.shape[0]

    @property
    def span_s(self) -> float:
        if len(self) < 2:
            return 0.0
        return float(self.onsets_s[-1] - self.onsets_s[0])


# ---------------------------------------------------------------------------
# peak extraction and label construction
# ---------------------------------------------------------------------------


def _bandpass(x: np.ndarray, rate_hz: float,
              lo_hz: float = BAND_LO_HZ, hi_hz: float = BAND_HI_HZ) -> np.ndarray:
    """Zero-phase band-pass; falls back to mean removal when the band is invalid."""
    nyq = rate_hz / 2.0
    hi = min(hi_hz, 0.9 * nyq)
    lo = lo_hz
    if not 0 < lo < hi:
        return x - x.mean()
    b, a = butter(2, [lo / nyq, hi / nyq], btype="band")
    padlen = 3 * max(len(a), len(b))
    if len(x) <= padlen:
        return x - x.mean()
    return filtfilt(b, a, x)


def _rolling_std(x: np.ndarray, window: int) -> np.ndarray:
    window = max(3, min(window, len(x)))
    mean = uniform_filter1d(x, size=window, mode="nearest")
    meansq = uniform_filter1d(x * x, size=window, mode="nearest")
    return np.sqrt(np.maximum(meansq - mean * mean, 0.0))


def detect_peaks(signal: SampledSeries,
                 refractory_s: float = REFRACTORY_S,
                 prominence_factor: float = PROMINENCE_FACTOR) -> PeakTrain:
    """Locate systolic peaks as band-limited local maxima.

    The signal is band-passed to 0.6-4.0 Hz (zero phase), candidate maxima are
    spaced by the refractory gap, and each candidate must have prominence of at
    least ``prominence_factor`` times the local rolling standard deviation, so
    low-amplitude beats survive while broadband wiggle does not.
    """
    if signal.values.ndim != 1:
        raise ShapeError("detect_peaks expects a single-channel series")
    x = np.asarray(signal.values, dtype=float)
    n = len(x)
    if n < 2 * signal.rate_hz:
        raise LengthError("need at least 2 s of samples for peak detection")
    if np.ptp(x) == 0.0:
        return PeakTrain(np.empty(0, dtype=int), signal.rate_hz, n)

    filt = _bandpass(x, signal.rate_hz)
    gap = max(1, int(np.ceil(refractory_s * signal.rate_hz)))
    candidates, _ = find_peaks(filt, distance=gap)
    if candidates.size == 0:
        return PeakTrain(np.empty(0, dtype=int), signal.rate_hz, n)

    prominences = peak_prominences(filt, candidates)[0]
    local_std = _rolling_std(filt, int(ROLLING_STD_WINDOW_S * signal.rate_hz))
    keep = prominences >= prominence_factor * local_std[candidates]
    return PeakTrain(candidates[keep], signal.rate_hz, n)


def binarize(peaks: PeakTrain) -> SampledSeries:
    """0/1 series with a one at every peak index."""
    if peaks.clip_len < 2:
        raise LengthError("clip_len must be >= 2 to binarize")
    out = np.zeros(peaks.clip_len)
    out[peaks.indices] = 1.0
    return SampledSeries(out, peaks.rate_hz)


def normalize_to_prob(binary: SampledSeries) -> ProbSeries:
    """Scale a nonnegative series to unit mass."""
    vals = np.asarray(binary.values, dtype=float)
    if vals.ndim != 1:
        raise ShapeError("normalize_to_prob expects a single-channel series")
    if np.any(vals < 0):
        raise NormalizationError("values must be nonnegative")
    total = vals.sum()
    if total <= 0:
        raise NormalizationError("cannot normalize an all-zero series")
    return ProbSeries(vals / total, binary.rate_hz)


def ibi_from_peaks(peaks: PeakTrain) -> IBISeries:
    """Consecutive peak gaps in ms; intervals outside [250, 3000] ms are dropped."""
    if len(peaks) < 2:
        raise InsufficientPeaksError("need at least 2 peaks to form intervals")
    intervals = np.diff(peaks.indices) / peaks.rate_hz * 1000.0
    onsets = peaks.indices[:-1] / peaks.rate_hz
    valid = (intervals >= IBI_MIN_MS) & (intervals <= IBI_MAX_MS)
    return IBISeries(intervals[valid], onsets[valid])


def resample_ibi(ibi: IBISeries, rate_hz: float = IBI_RESAMPLE_HZ) -> SampledSeries:
    """Linearly interpolate (onset, interval) points onto a uniform grid."""
    if len(ibi) < 2:
        raise InsufficientDataError("need at least 2 intervals to resample")
    t0, t1 = float(ibi.onsets_s[0]), float(ibi.onsets_s[-1])
    n = int(np.floor((t1 - t0) * rate_hz)) + 1
    grid = t0 + np.arange(n) / rate_hz
    vals = np.interp(grid, ibi.onsets_s, ibi.intervals_ms)
    return SampledSeries(vals, rate_hz, t0_s=t0)


# ---------------------------------------------------------------------------
# heart-rate / IBI error metrics
# ---------------------------------------------------------------------------


def hr_metrics(pred_hr: np.ndarray, true_hr: np.ndarray) -> dict:
    """MAE / RMSE / Pearson correlation for paired heart-rate estimates (bpm)."""
    p = _as_float_array(pred_hr, "pred_hr")
    t = _as_float_array(true_hr, "true_hr")
    if p.shape != t.shape or p.size == 0:
        raise ShapeError("pred and true HR arrays must have equal nonzero length")
    diff = p - t
    mae = float(np.mean(np.abs(diff)))
    rmse = float(np.sqrt(np.mean(diff**2)))
    if np.ptp(p) == 0.0 or np.ptp(t) == 0.0:
        raise UndefinedCorrelationError("Pearson correlation undefined for constant input")
    r = float(np.corrcoef(p, t)[0, 1])
    return {"mae_bpm": mae, "rmse_bpm": rmse, "pearson_r": r}


def ibi_metrics(pred: IBISeries, true_: IBISeries, clip_len_s: float,
                resample_hz: float = IBI_RESAMPLE_HZ) -> dict:
    """Absolute IBI error on a common resampled grid, plus the per-clip accuracy.

    Accuracy is 1 - AE / (T / (B - 1)) with T the clip length and B the number
    of peaks behind the reference series, clamped to [0, 1].
    """
    if clip_len_s <= 0:
        raise InsufficientDataError("clip_len_s must be positive")
    if len(pred) < 2 or len(true_) < 2:
        raise InsufficientDataError("need >= 2 intervals on both sides")
    t0 = max(float(pred.onsets_s[0]), float(true_.onsets_s[0]))
    t1 = min(float(pred.onsets_s[-1]), float(true_.onsets_s[-1]))
    if t1 <= t0:
        raise InsufficientDataError("prediction and reference do not overlap in time")
    n = int(np.floor((t1 - t0) * resample_hz)) + 1
    grid = t0 + np.arange(n) / resample_hz
    p = np.interp(grid, pred.onsets_s, pred.intervals_ms)
    t = np.interp(grid, true_.onsets_s, true_.intervals_ms)
    ae_ms = float(np.mean(np.abs(p - t)))
    n_peaks = len(true_) + 1
    mean_spacing_s = clip_len_s / (n_peaks - 1)
    ac = 1.0 - (ae_ms / 1000.0) / mean_spacing_s
    return {"ae_ms": ae_ms, "ac_ibi": float(np.clip(ac, 0.0, 1.0))}


# ---------------------------------------------------------------------------
# series I/O: CSV (t_s, value) and the JSON clip container
# ---------------------------------------------------------------------------


def series_to_csv(series: SampledSeries, path) -> None:
    if series.values.ndim != 1:
        raise ShapeError("CSV export is defined for single-channel series")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t_s", "value"])
        for t, v in zip(series.times_s(), series.values):
            writer.writerow([repr(float(t)), repr(float(v))])


def series_from_csv(path) -> SampledSeries:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:2] != ["t_s", "value"]:
            raise ShapeError(f"unexpected CSV header {header!r}")
        rows = [(float(r[0]), float(r[1])) for r in reader]
    if len(rows) < 2:
        raise LengthError("CSV series needs at least 2 rows")
    t = np.array([r[0] for r in rows])
    v = np.array([r[1] for r in rows])
    dt = np.diff(t)
    if np.ptp(dt) > 1e-6:
        raise ShapeError("CSV time column is not uniformly spaced")
    return SampledSeries(v, rate_hz=1.0 / float(dt.mean()), t0_s=float(t[0]))


def clip_to_json(series: SampledSeries, peaks: PeakTrain | None = None,
                 label: str | None = None, subject_id: int | None = None) -> dict:
    doc = {
        "rate_hz": series.rate_hz,
        "t0_s": series.t0_s,
        "values": series.values.tolist(),
    }
    if peaks is not None:
        doc["peaks"] = peaks.indices.tolist()
    if label is not None:
        doc["label"] = label
    if subject_id is not None:
        doc["subject_id"] = subject_id
    return doc


def clip_from_json(doc: dict) -> tuple[SampledSeries, PeakTrain | None, str | None, int | None]:
    series = SampledSeries(np.asarray(doc["values"], dtype=float),
                           float(doc["rate_hz"]), float(doc.get("t0_s", 0.0)))
    peaks = None
    if "peaks" in doc and doc["peaks"] is not None:
        peaks = PeakTrain(np.asarray(doc["peaks"], dtype=int),
                          series.rate_hz, len(series))
    return series, peaks, doc.get("label"), doc.get("subject_id")


def save_clip(path, series: SampledSeries, peaks: PeakTrain | None = None,
              label: str | None = None, subject_id: int | None = None) -> None:
    doc = clip_to_json(series, peaks, label, subject_id)
    Path(path).write_text(json.dumps(doc, sort_keys=True))


def load_clip(path):
    return clip_from_json(json.loads(Path(path).read_text()))
