"""Synthetic rhythm corpus: labeled multichannel pulse clips with ground truth.

Five rhythm classes are modeled at the RR-interval level and rendered to a
3-channel pulse signal with controlled in-band SNR. Sinus-type rhythms follow
an AR(1) interval process; atrial fibrillation draws independent high-variance
intervals with attenuated, variable beat amplitudes; atrial flutter conducts a
fast regular atrial interval at an integer ratio that occasionally switches.
Every clip carries the exact peak-sample ground truth it was built from.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import DomainError
from .series import (
    IBI_MAX_MS,
    IBI_MIN_MS,
    PeakTrain,
    SampledSeries,
    _bandpass,
    save_clip,
)

RHYTHM_KINDS = ("healthy_rest", "healthy_exercise", "sr", "af", "afl")

DEFAULT_RATE_HZ = 30.0
CHANNEL_WEIGHTS = (1.0, 0.7, 0.4)

# Beat morphology (seconds): asymmetric systolic bump plus a smaller, wider
# diastolic bump later in the cycle. The rise is sharp enough that beat timing
# stays resolvable to the sample at the default 30 Hz rate.
SYS_RISE_S = 0.045
SYS_FALL_S = 0.11
DIA_DELAY_FRAC = 0.35
DIA_AMP_FRAC = 0.40
DIA_WIDTH_S = 0.18

WANDER_HZ = 0.1
WANDER_AMP = 0.7


@dataclass(frozen=True)
class RhythmSpec:
    """Generative parameters for one rhythm class."""

    kind: str
    mean_hr_bpm: float
    rr_cv: float
    rr_autocorr: float
    amp_mean: float
    amp_cv: float
    afl_ratio: int = 2

    def __post_init__(self):
        if self.kind not in RHYTHM_KINDS:
            raise DomainError(f"unknown rhythm kind {self.kind!r}")
        if not 40.0 <= self.mean_hr_bpm <= 180.0:
            raise DomainError("mean_hr_bpm must lie in [40, 180]")
        if self.rr_cv < 0:
            raise DomainError("rr_cv must be nonnegative")
        if not 0.0 <= self.rr_autocorr < 1.0:
            raise DomainError("rr_autocorr must lie in [0, 1)")
        if self.amp_mean <= 0 or self.amp_cv < 0:
            raise DomainError("amplitudes must be positive")
        if self.afl_ratio < 1:
            raise DomainError("afl_ratio must be >= 1")


# Class presets. Mean heart rates follow the cohort means of the recording
# sessions each class mimics; AF gets high independent interval variability
# and attenuated, variable amplitudes.
DEFAULT_SPECS = {
    "healthy_rest": RhythmSpec("healthy_rest", 73.6, 0.05, 0.7, 1.0, 0.10),
    "healthy_exercise": RhythmSpec("healthy_exercise", 83.2, 0.04, 0.7, 1.0, 0.10),
    "sr": RhythmSpec("sr", 66.5, 0.05, 0.7, 1.0, 0.10),
    "af": RhythmSpec("af", 78.9, 0.24, 0.0, 0.6, 0.30),
    "afl": RhythmSpec("afl", 150.0, 0.02, 0.0, 0.8, 0.10, afl_ratio=2),
}


@dataclass(frozen=True)
class SynthClip:
    channels: SampledSeries
    true_peaks: PeakTrain
    label: str
    subject_id: int
    snr_db: float


def _lognormal(rng: np.random.Generator, mean: float, cv: float, size) -> np.ndarray:
    if cv == 0:
        return np.full(size, mean)
    sigma2 = np.log1p(cv**2)
    mu = np.log(mean) - sigma2 / 2.0
    return rng.lognormal(mu, np.sqrt(sigma2), size)


def gen_rr_sequence(spec: RhythmSpec, duration_s: float,
                    rng: np.random.Generator) -> np.ndarray:
    """RR intervals (ms) covering at least ``duration_s`` seconds."""
    if duration_s < 10.0:
        raise DomainError("duration must be >= 10 s")
    n = int(np.ceil(duration_s * spec.mean_hr_bpm / 60.0)) + 8

    if spec.kind == "af":
        rr = _lognormal(rng, 60000.0 / spec.mean_hr_bpm, spec.rr_cv, n)
    elif spec.kind == "afl":
        # near-constant conduction at the base ratio with brief excursions to
        # ratio+1 (asymmetric Markov switching keeps the base state dominant)
        flutter_ms = 60000.0 / (spec.mean_hr_bpm * spec.afl_ratio)
        ratios = np.empty(n, dtype=int)
        r = spec.afl_ratio
        for i in range(n):
            ratios[i] = r
            if r == spec.afl_ratio:
                if rng.random() < 0.08:
                    r = spec.afl_ratio + 1
            elif rng.random() < 0.5:
                r = spec.afl_ratio
        jitter = 1.0 + spec.rr_cv * rng.standard_normal(n)
        rr = flutter_ms * ratios * jitter
    else:
        # Sinus-type rhythms: AR(1) fluctuation around the mean interval.
        mu = 60000.0 / spec.mean_hr_bpm
        phi = spec.rr_autocorr
        z = np.empty(n)
        z[0] = rng.standard_normal()
        innov = np.sqrt(1.0 - phi**2) * rng.standard_normal(n - 1)
        for i in range(1, n):
            z[i] = phi * z[i - 1] + innov[i - 1]
        rr = mu * (1.0 + spec.rr_cv * z)

    return np.clip(rr, IBI_MIN_MS, IBI_MAX_MS)


def _render_pulse(peak_times_s: np.ndarray, rr_s: np.ndarray,
                  amps: np.ndarray, n_samples: int, rate_hz: float) -> np.ndarray:
    """Sum of per-beat templates: sharp systolic bump + later diastolic bump."""
    t = np.arange(n_samples) / rate_hz
    pulse = np.zeros(n_samples)
    for tk, rr, a in zip(peak_times_s, rr_s, amps):
        lo = max(0, int((tk - 1.0) * rate_hz))
        hi = min(n_samples, int((tk + 2.0) * rate_hz))
        if lo >= hi:
            continue
        dt = t[lo:hi] - tk
        width = np.where(dt < 0, SYS_RISE_S, SYS_FALL_S)
        beat = a * np.exp(-(dt**2) / (2.0 * width**2))
        dd = dt - DIA_DELAY_FRAC * rr
        beat += DIA_AMP_FRAC * a * np.exp(-(dd**2) / (2.0 * DIA_WIDTH_S**2))
        pulse[lo:hi] += beat
    return pulse


def gen_clip(spec: RhythmSpec, duration_s: float, snr_db: float,
             seed, subject_id: int = -1,
             rate_hz: float = DEFAULT_RATE_HZ) -> SynthClip:
    """Render one labeled clip with exact peak-sample ground truth.

    The noise floor is white Gaussian plus 0.1 Hz baseline wander per channel;
    the white component is scaled so that the 0.6-4 Hz in-band power ratio of
    pulse to noise equals ``snr_db``.
    """
    rng = np.random.default_rng(seed)
    n_samples = int(round(duration_s * rate_hz))
    rr_ms = gen_rr_sequence(spec, duration_s + 3.0, rng)
    rr_s = rr_ms / 1000.0

    start = float(rng.uniform(0.1, 0.9)) * rr_s[0]
    times = start + np.concatenate([[0.0], np.cumsum(rr_s[:-1])])
    in_clip = times < duration_s - 1.0 / rate_hz
    times, rr_s = times[in_clip], rr_s[in_clip]
    amps = _lognormal(rng, spec.amp_mean, spec.amp_cv, times.shape)

    pulse = _render_pulse(times, rr_s, amps, n_samples, rate_hz)
    peak_idx = np.round(times * rate_hz).astype(int)

    t = np.arange(n_samples) / rate_hz
    channels = np.empty((len(CHANNEL_WEIGHTS), n_samples))
    for c, w in enumerate(CHANNEL_WEIGHTS):
        sig = w * pulse
        band_sig_power = np.mean(_bandpass(sig, rate_hz) ** 2)
        noise = _bandpass(rng.standard_normal(n_samples), rate_hz)
        band_noise_power = np.mean(_bandpass(noise, rate_hz) ** 2)
        scale = np.sqrt(band_sig_power / (band_noise_power * 10.0 ** (snr_db / 10.0)))
        wander = WANDER_AMP * np.std(sig) * np.sin(
            2 * np.pi * WANDER_HZ * t + rng.uniform(0, 2 * np.pi))
        channels[c] = sig + scale * noise + wander

    return SynthClip(
        channels=SampledSeries(channels, rate_hz),
        true_peaks=PeakTrain(peak_idx, rate_hz, n_samples),
        label=spec.kind,
        subject_id=subject_id,
        snr_db=snr_db,
    )


# ---------------------------------------------------------------------------
# corpus generation
# ---------------------------------------------------------------------------

# Patients contribute both their pre-treatment (af) and post-treatment (sr)
# recordings under one subject id; all other classes get disjoint id ranges.
_SUBJECT_ID_BASE = {
    "patient": 0,
    "healthy_rest": 1000,
    "healthy_exercise": 2000,
    "afl": 3000,
}

SUBJECT_HR_JITTER = 0.08


def _subject_base(kind: str) -> int:
    if kind in ("af", "sr"):
        return _SUBJECT_ID_BASE["patient"]
    return _SUBJECT_ID_BASE[kind]


def _subject_spec(kind: str, subject_factor: float) -> RhythmSpec:
    base = DEFAULT_SPECS[kind]
    hr = base.mean_hr_bpm * (1.0 + SUBJECT_HR_JITTER * subject_factor)
    hr = float(np.clip(hr, 45.0, 175.0))
    return replace(base, mean_hr_bpm=hr)


def gen_corpus(out_dir, classes=("healthy_rest", "healthy_exercise", "sr", "af"),
               n_subjects_per_class: int = 20, clips_per_subject: int = 4,
               duration_s: float = 30.0, snr_db: float = 0.0, seed: int = 0,
               rate_hz: float = DEFAULT_RATE_HZ) -> dict:
    """Write a corpus directory ``<out>/<class>/<subject>/<clip>.json``.

    Each subject's heart-rate offset is drawn once and reused for all of that
    subject's clips (and, for patients, across their af and sr recordings), so
    subject-independent splits carry real subject structure. Returns the
    manifest, which is also written to ``<out>/manifest.json``.
    """
    if n_subjects_per_class < 1 or clips_per_subject < 1:
        raise DomainError("subject and clip counts must be >= 1")
    for kind in classes:
        if kind not in RHYTHM_KINDS:
            raise DomainError(f"unknown rhythm kind {kind!r}")

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    root_ss = np.random.SeedSequence(seed)

    # One latent factor per subject id, shared across the classes that reuse it.
    factors: dict[int, float] = {}
    entries = []
    for class_idx, kind in enumerate(sorted(classes)):
        base = _subject_base(kind)
        for s in range(n_subjects_per_class):
            subject_id = base + s
            if subject_id not in factors:
                f_rng = np.random.default_rng(
                    np.random.SeedSequence(seed, spawn_key=(9999, subject_id)))
                factors[subject_id] = float(f_rng.standard_normal())
            spec = _subject_spec(kind, factors[subject_id])
            for c in range(clips_per_subject):
                clip_ss = np.random.SeedSequence(seed, spawn_key=(class_idx, s, c))
                clip = gen_clip(spec, duration_s, snr_db, clip_ss,
                                subject_id=subject_id, rate_hz=rate_hz)
                rel = Path(kind) / str(subject_id) / f"{c}.json"
                (out / rel).parent.mkdir(parents=True, exist_ok=True)
                save_clip(out / rel, clip.channels, clip.true_peaks,
                          label=kind, subject_id=subject_id)
                entries.append({
                    "path": str(rel),
                    "label": kind,
                    "subject_id": subject_id,
                    "duration_s": duration_s,
                    "snr_db": snr_db,
                })

    manifest = {
        "clips": entries,
        "seed": seed,
        "rate_hz": rate_hz,
        "classes": sorted(classes),
        "n_subjects_per_class": n_subjects_per_class,
        "clips_per_subject": clips_per_subject,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1))
    return manifest


def load_manifest(corpus_dir) -> dict:
    return json.loads((Path(corpus_dir) / "manifest.json").read_text())
