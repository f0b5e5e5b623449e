"""Corpus assembly and the end-to-end evaluation stages behind the CLI.

A corpus directory (see :mod:`afkit.synth`) is turned into training windows
and held-out clips, a trained model is applied per evaluation window, and the
detected peaks flow through IBI extraction, HRV features, and the classifier
protocols. Everything is seeded from one root seed.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from .classify import CvReport, cross_validate, repeated_holdout
from .errors import AfkitError, DomainError
from .hrv import HRVVector, extract
from .peaknet import EncoderParams, TrainConfig, TrainExample, TrainRecord, infer_peaks, train
from .series import (
    IBISeries,
    PeakTrain,
    SampledSeries,
    hr_metrics,
    ibi_from_peaks,
    ibi_metrics,
    load_clip,
    normalize_to_prob,
    binarize,
)
from .synth import load_manifest

TRAIN_WINDOWS_PER_CLIP = 2
VAL_SUBJECT_FRACTION = 0.25

# Tasks: (positive label, labels kept, relabeling applied before the split)
TASKS = {
    "af-vs-healthy": ("af", ("af", "healthy_rest", "healthy_exercise"),
                      {"healthy_rest": "healthy", "healthy_exercise": "healthy"}),
    "af-vs-sr": ("af", ("af", "sr"), {}),
    "afl-vs-sr": ("afl", ("afl", "sr"), {}),
}


@dataclass(frozen=True)
class CorpusClip:
    channels: SampledSeries
    true_peaks: PeakTrain
    label: str
    subject_id: int


@dataclass(frozen=True)
class ExperimentConfig:
    corpus: str
    out_dir: str
    clip_lengths_s: tuple[float, ...] = (10.0, 20.0, 30.0, 60.0, 120.0)
    loss_kind: str = "ws"
    seed: int = 0
    epochs: int = 60
    learning_rate: float = 1e-3
    batch_size: int = 4
    clip_len_samples: int = 512
    folds: int = 10

    def config_hash(self) -> str:
        # filesystem locations don't define the computation
        doc = {k: v for k, v in self.__dict__.items()
               if k not in ("corpus", "out_dir")}
        payload = json.dumps(doc, sort_keys=True, default=str)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


def load_corpus(corpus_dir) -> list[CorpusClip]:
    root = Path(corpus_dir)
    manifest = load_manifest(root)
    clips = []
    for entry in manifest["clips"]:
        series, peaks, label, subject_id = load_clip(root / entry["path"])
        if peaks is None:
            raise DomainError(f"corpus clip {entry['path']} lacks ground-truth peaks")
        clips.append(CorpusClip(series, peaks, label, int(subject_id)))
    return clips


def split_subjects(clips: list[CorpusClip], seed: int,
                   val_fraction: float = VAL_SUBJECT_FRACTION) -> tuple[set, set]:
    """Subject-independent train/validation split, stratified by label."""
    rng = np.random.default_rng(seed)
    train_subjects, val_subjects = set(), set()
    by_label: dict[str, list[int]] = {}
    for c in clips:
        by_label.setdefault(c.label, [])
        if c.subject_id not in by_label[c.label]:
            by_label[c.label].append(c.subject_id)
    for label in sorted(by_label):
        subjects = sorted(set(by_label[label]) - train_subjects - val_subjects)
        if not subjects:
            continue
        order = rng.permutation(len(subjects))
        n_val = max(1, int(round(val_fraction * len(subjects))))
        for pos, idx in enumerate(order):
            (val_subjects if pos < n_val else train_subjects).add(subjects[idx])
    return train_subjects, val_subjects


def window_starts(total: int, window: int, count: int) -> list[int]:
    """Evenly spread window offsets, collapsing duplicates."""
    if window > total:
        return []
    if count <= 1 or total == window:
        return [0]
    span = total - window
    return sorted({int(round(i * span / (count - 1))) for i in range(count)})


def build_training_set(clips: list[CorpusClip], subjects: set,
                       clip_len_samples: int,
                       windows_per_clip: int = TRAIN_WINDOWS_PER_CLIP) -> list[TrainExample]:
    dataset = []
    for clip in clips:
        if clip.subject_id not in subjects:
            continue
        values = clip.channels.values
        total = values.shape[-1]
        for start in window_starts(total, clip_len_samples, windows_per_clip):
            idx = clip.true_peaks.indices
            local = idx[(idx >= start) & (idx < start + clip_len_samples)] - start
            if len(local) < 2:
                continue
            window = SampledSeries(values[:, start:start + clip_len_samples],
                                   clip.channels.rate_hz)
            peaks = PeakTrain(local, clip.channels.rate_hz, clip_len_samples)
            dataset.append(TrainExample(window, normalize_to_prob(binarize(peaks)),
                                        clip.subject_id))
    return dataset


def train_on_corpus(clips: list[CorpusClip], cfg: TrainConfig,
                    val_fraction: float = VAL_SUBJECT_FRACTION
                    ) -> tuple[EncoderParams, TrainRecord, set, set]:
    """Train on a subject-independent split of the corpus; validation IBI MAE
    is computed on the held-out subjects' full clips.

    The training window never exceeds the corpus clip length, so short-corpus
    runs train on whole clips.
    """
    shortest = min(c.channels.values.shape[-1] for c in clips)
    if cfg.clip_len_samples > shortest:
        cfg = replace(cfg, clip_len_samples=shortest)
    train_subjects, val_subjects = split_subjects(clips, cfg.seed, val_fraction)
    dataset = build_training_set(clips, train_subjects, cfg.clip_len_samples)
    val = [(c.channels, c.true_peaks) for c in clips if c.subject_id in val_subjects]
    params, record = train(dataset, cfg, val=val)
    return params, record, train_subjects, val_subjects


# ---------------------------------------------------------------------------
# per-window evaluation
# ---------------------------------------------------------------------------


@dataclass
class WindowResult:
    label: str
    subject_id: int
    pred_hr_bpm: float | None
    true_hr_bpm: float | None
    ibi_ae_ms: float | None
    ac_ibi: float | None
    features: HRVVector | None


def slice_clip(clip: CorpusClip, start: int, length: int) -> CorpusClip:
    idx = clip.true_peaks.indices
    local = idx[(idx >= start) & (idx < start + length)] - start
    return CorpusClip(
        SampledSeries(clip.channels.values[:, start:start + length],
                      clip.channels.rate_hz),
        PeakTrain(local, clip.channels.rate_hz, length),
        clip.label, clip.subject_id,
    )


def _mean_hr(ibi: IBISeries) -> float | None:
    if len(ibi) == 0:
        return None
    return float(60000.0 / np.mean(ibi.intervals_ms))


def evaluate_window(params: EncoderParams, window: CorpusClip) -> WindowResult:
    true_ibi = ibi_from_peaks(window.true_peaks) if len(window.true_peaks) >= 2 else None
    pred_ibi = None
    try:
        pred_peaks = infer_peaks(params, window.channels)
        if len(pred_peaks) >= 2:
            pred_ibi = ibi_from_peaks(pred_peaks)
    except AfkitError:
        pred_ibi = None

    ae = ac = None
    if pred_ibi is not None and true_ibi is not None and len(pred_ibi) >= 2 and len(true_ibi) >= 2:
        try:
            m = ibi_metrics(pred_ibi, true_ibi, window.channels.duration_s)
            ae, ac = m["ae_ms"], m["ac_ibi"]
        except AfkitError:
            pass

    features = None
    if pred_ibi is not None and len(pred_ibi) >= 3:
        try:
            features = extract(pred_ibi, label=window.label, subject_id=window.subject_id)
        except AfkitError:
            features = None

    return WindowResult(
        label=window.label,
        subject_id=window.subject_id,
        pred_hr_bpm=_mean_hr(pred_ibi) if pred_ibi is not None else None,
        true_hr_bpm=_mean_hr(true_ibi) if true_ibi is not None else None,
        ibi_ae_ms=ae,
        ac_ibi=ac,
        features=features,
    )


def evaluate_at_length(params: EncoderParams, clips: list[CorpusClip],
                       clip_len_s: float) -> list[WindowResult]:
    results = []
    for clip in clips:
        rate = clip.channels.rate_hz
        length = int(round(clip_len_s * rate))
        total = clip.channels.values.shape[-1]
        for w in range(total // length):
            results.append(evaluate_window(params, slice_clip(clip, w * length, length)))
    return results


def monitoring_summary(results: list[WindowResult]) -> dict:
    """Pooled HR error metrics and mean IBI error over evaluable windows."""
    pred_hr = [r.pred_hr_bpm for r in results if r.pred_hr_bpm and r.true_hr_bpm]
    true_hr = [r.true_hr_bpm for r in results if r.pred_hr_bpm and r.true_hr_bpm]
    aes = [r.ibi_ae_ms for r in results if r.ibi_ae_ms is not None]
    acs = [r.ac_ibi for r in results if r.ac_ibi is not None]
    summary = {
        "n_windows": len(results),
        "n_hr_windows": len(pred_hr),
        "n_ibi_windows": len(aes),
        "ibi_mae_ms": float(np.mean(aes)) if aes else None,
        "ibi_std_ms": float(np.std(aes)) if aes else None,
        "ac_ibi": float(np.mean(acs)) if acs else None,
    }
    if len(pred_hr) >= 2 and np.ptp(pred_hr) > 0 and np.ptp(true_hr) > 0:
        summary.update(hr_metrics(np.array(pred_hr), np.array(true_hr)))
    return summary


def task_features(results: list[WindowResult], task: str) -> list[HRVVector]:
    """Feature rows for one classification task, with labels remapped."""
    if task not in TASKS:
        raise DomainError(f"unknown task {task!r}; expected one of {sorted(TASKS)}")
    _, keep, remap = TASKS[task]
    out = []
    for r in results:
        if r.features is None or r.label not in keep:
            continue
        label = remap.get(r.label, r.label)
        if label != r.features.label:
            out.append(HRVVector(**{**r.features.as_dict(), "label": label}))
        else:
            out.append(r.features)
    return out


def classify_task(features: list[HRVVector], task: str, folds: int,
                  seed: int) -> CvReport:
    positive, _, _ = TASKS[task]
    if task == "afl-vs-sr":
        return repeated_holdout(features, n_train_pos=6, n_train_neg=6,
                                repeats=10, seed=seed, positive_label=positive)
    n_subjects = len({f.subject_id for f in features})
    return cross_validate(features, k=min(folds, n_subjects), seed=seed,
                          positive_label=positive)


def provenance(config: ExperimentConfig) -> dict:
    return {
        "seed": config.seed,
        "config_hash": config.config_hash(),
        "version": __version__,
    }
