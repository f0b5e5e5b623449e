"""RBF-kernel SVM over standardized HRV features, with subject-independent CV.

The solver is a sequential-minimal-optimization loop over the soft-margin dual
(pairwise analytic updates with the classic first/second-choice heuristics).
Hyperparameters come from an inner subject-independent grid search so nothing
about the test subjects leaks into training, and every report carries the
fold map that proves it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateTrainingError, DomainError, ShapeError
from .hrv import HRVVector

C_GRID = (0.1, 1.0, 10.0, 100.0)
GAMMA_GRID = (1.0 / 80.0, 1.0 / 20.0, 1.0 / 5.0)
KKT_TOL = 1e-3
INNER_FOLDS = 3

# Used when the training portion is too small for an inner subject-level CV.
FALLBACK_C = 10.0
FALLBACK_GAMMA = 1.0 / 20.0


@dataclass(frozen=True)
class SvmModel:
    support_vectors: np.ndarray  # standardized features, (n_sv, d)
    dual_coefs: np.ndarray  # alpha_i * y_i
    bias: float
    gamma: float
    c: float
    feature_means: np.ndarray
    feature_scales: np.ndarray
    positive_label: str
    negative_label: str

    def decision(self, x: np.ndarray) -> float:
        z = (np.asarray(x, dtype=float) - self.feature_means) / self.feature_scales
        d2 = np.sum((self.support_vectors - z) ** 2, axis=1)
        return float(self.dual_coefs @ np.exp(-self.gamma * d2) + self.bias)


@dataclass
class CvReport:
    per_fold: list[dict]
    pooled: dict
    confusion: dict
    fold_map: dict
    seed: int
    positive_label: str
    negative_label: str
    warnings: int = 0

    def as_dict(self) -> dict:
        return {
            "per_fold": self.per_fold,
            "pooled": self.pooled,
            "confusion": self.confusion,
            "fold_map": {str(k): v for k, v in sorted(self.fold_map.items())},
            "seed": self.seed,
            "positive_label": self.positive_label,
            "negative_label": self.negative_label,
            "warnings": self.warnings,
        }


# ---------------------------------------------------------------------------
# SMO solver on the soft-margin dual
# ---------------------------------------------------------------------------


def rbf_kernel_matrix(x: np.ndarray, gamma: float) -> np.ndarray:
    sq = np.sum(x**2, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    return np.exp(-gamma * np.maximum(d2, 0.0))


def dual_objective(alphas: np.ndarray, y: np.ndarray, kmat: np.ndarray) -> float:
    ay = alphas * y
    return float(alphas.sum() - 0.5 * ay @ kmat @ ay)


class _SmoState:
    def __init__(self, kmat: np.ndarray, y: np.ndarray, c: float, tol: float):
        self.k = kmat
        self.y = y
        self.c = c
        self.tol = tol
        self.n = len(y)
        self.alphas = np.zeros(self.n)
        self.b = 0.0
        # decision(i) - y_i, kept incrementally
        self.errors = -y.astype(float)

    def _take_step(self, i1: int, i2: int) -> bool:
        if i1 == i2:
            return False
        a1, a2 = self.alphas[i1], self.alphas[i2]
        y1, y2 = self.y[i1], self.y[i2]
        e1, e2 = self.errors[i1], self.errors[i2]
        s = y1 * y2
        if s > 0:
            lo, hi = max(0.0, a1 + a2 - self.c), min(self.c, a1 + a2)
        else:
            lo, hi = max(0.0, a2 - a1), min(self.c, self.c + a2 - a1)
        if lo >= hi:
            return False
        k11, k22, k12 = self.k[i1, i1], self.k[i2, i2], self.k[i1, i2]
        eta = k11 + k22 - 2.0 * k12
        if eta > 0:
            a2_new = np.clip(a2 + y2 * (e1 - e2) / eta, lo, hi)
        else:
            # flat direction: pick the better segment endpoint
            f1 = y1 * (e1 + self.b) - a1 * k11 - s * a2 * k12
            f2 = y2 * (e2 + self.b) - s * a1 * k12 - a2 * k22
            l1 = a1 + s * (a2 - lo)
            h1 = a1 + s * (a2 - hi)
            obj_lo = (l1 * f1 + lo * f2 + 0.5 * l1**2 * k11 + 0.5 * lo**2 * k22
                      + s * lo * l1 * k12)
            obj_hi = (h1 * f1 + hi * f2 + 0.5 * h1**2 * k11 + 0.5 * hi**2 * k22
                      + s * hi * h1 * k12)
            if obj_lo < obj_hi - 1e-12:
                a2_new = lo
            elif obj_lo > obj_hi + 1e-12:
                a2_new = hi
            else:
                return False
        if abs(a2_new - a2) < 1e-12 * (a2_new + a2 + 1e-12):
            return False
        a1_new = a1 + s * (a2 - a2_new)

        b_old = self.b
        b1 = e1 + y1 * (a1_new - a1) * k11 + y2 * (a2_new - a2) * k12 + self.b
        b2 = e2 + y1 * (a1_new - a1) * k12 + y2 * (a2_new - a2) * k22 + self.b
        if 0 < a1_new < self.c:
            self.b = b1
        elif 0 < a2_new < self.c:
            self.b = b2
        else:
            self.b = 0.5 * (b1 + b2)

        self.alphas[i1], self.alphas[i2] = a1_new, a2_new
        self.errors += (y1 * (a1_new - a1) * self.k[i1]
                        + y2 * (a2_new - a2) * self.k[i2]
                        + (b_old - self.b))
        self.errors[i1] = self._decision(i1) - y1
        self.errors[i2] = self._decision(i2) - y2
        return True

    def _decision(self, i: int) -> float:
        return float((self.alphas * self.y) @ self.k[i] - self.b)

    def _examine(self, i2: int) -> bool:
        y2, a2, e2 = self.y[i2], self.alphas[i2], self.errors[i2]
        r2 = e2 * y2
        if not ((r2 < -self.tol and a2 < self.c) or (r2 > self.tol and a2 > 0)):
            return False
        non_bound = np.flatnonzero((self.alphas > 0) & (self.alphas < self.c))
        if len(non_bound) > 1:
            i1 = int(non_bound[np.argmax(np.abs(self.errors[non_bound] - e2))])
            if self._take_step(i1, i2):
                return True
        for i1 in np.roll(non_bound, -(i2 % max(1, len(non_bound)))):
            if self._take_step(int(i1), i2):
                return True
        for i1 in np.roll(np.arange(self.n), -(i2 + 1)):
            if self._take_step(int(i1), i2):
                return True
        return False

    def solve(self, max_passes: int = 20000) -> None:
        examine_all = True
        passes = 0
        while passes < max_passes:
            changed = 0
            targets = (range(self.n) if examine_all
                       else np.flatnonzero((self.alphas > 0) & (self.alphas < self.c)))
            for i in targets:
                changed += self._examine(int(i))
            passes += 1
            if examine_all:
                if changed == 0:
                    break
                examine_all = False
            elif changed == 0:
                examine_all = True


def smo_solve(kmat: np.ndarray, y: np.ndarray, c: float,
              tol: float = KKT_TOL) -> tuple[np.ndarray, float]:
    """Solve the soft-margin dual; returns (alphas, bias) with the decision
    function f(x) = sum(alpha_i y_i K(x_i, x)) - bias ... bias folded so that
    f(i) = (alpha*y) @ K[i] - b."""
    state = _SmoState(kmat, y, c, tol)
    state.solve()
    # recompute the bias from non-bound vectors for stability
    nb = np.flatnonzero((state.alphas > 1e-9) & (state.alphas < c - 1e-9))
    ay = state.alphas * y
    if len(nb):
        state.b = float(np.mean(ay @ kmat[:, nb] - y[nb]))
    return state.alphas, state.b


# ---------------------------------------------------------------------------
# fitting with standardization and inner model selection
# ---------------------------------------------------------------------------


def feature_matrix(features: list[HRVVector]) -> np.ndarray:
    return np.stack([f.feature_array() for f in features])


def _standardize_fit(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    means = x.mean(axis=0)
    scales = x.std(axis=0)
    scales = np.where(scales > 0, scales, 1.0)
    return means, scales


def _labels_to_y(features: list[HRVVector], positive_label: str) -> np.ndarray:
    return np.array([1.0 if f.label == positive_label else -1.0 for f in features])


def _fit_fixed(x: np.ndarray, y: np.ndarray, c: float, gamma: float,
               positive_label: str, negative_label: str,
               tol: float = KKT_TOL) -> SvmModel:
    means, scales = _standardize_fit(x)
    z = (x - means) / scales
    kmat = rbf_kernel_matrix(z, gamma)
    alphas, b = smo_solve(kmat, y, c, tol)
    sv = alphas > 1e-9
    return SvmModel(
        support_vectors=z[sv],
        dual_coefs=(alphas * y)[sv],
        bias=-b,
        gamma=gamma,
        c=c,
        feature_means=means,
        feature_scales=scales,
        positive_label=positive_label,
        negative_label=negative_label,
    )


def _subject_folds(subjects: np.ndarray, k: int, rng: np.random.Generator) -> list[np.ndarray]:
    uniq = np.unique(subjects)
    order = rng.permutation(len(uniq))
    return [uniq[order[i::k]] for i in range(k)]


def _grid_search(features: list[HRVVector], x: np.ndarray, y: np.ndarray,
                 positive_label: str, negative_label: str, seed: int) -> tuple[float, float]:
    subjects = np.array([f.subject_id for f in features])
    uniq = np.unique(subjects)
    if len(uniq) < INNER_FOLDS + 1:
        return FALLBACK_C, FALLBACK_GAMMA
    rng = np.random.default_rng(seed)
    folds = _subject_folds(subjects, INNER_FOLDS, rng)
    best = (-1.0, FALLBACK_C, FALLBACK_GAMMA)
    for c in C_GRID:
        for gamma in GAMMA_GRID:
            correct = total = 0
            for test_subjects in folds:
                te = np.isin(subjects, test_subjects)
                tr = ~te
                if len(np.unique(y[tr])) < 2 or not te.any():
                    continue
                model = _fit_fixed(x[tr], y[tr], c, gamma, positive_label, negative_label)
                pred = np.array([np.sign(model.decision(v)) or 1.0 for v in x[te]])
                correct += int(np.sum(pred == y[te]))
                total += int(te.sum())
            acc = correct / total if total else -1.0
            if acc > best[0] + 1e-12:
                best = (acc, c, gamma)
    return best[1], best[2]


def fit(features: list[HRVVector], positive_label: str,
        c: float | None = None, gamma: float | None = None,
        seed: int = 0, tol: float = KKT_TOL) -> SvmModel:
    """Train the classifier; when c/gamma are not given, pick them by an inner
    subject-independent grid search on the training data only."""
    if not features:
        raise DegenerateTrainingError("empty training set")
    x = feature_matrix(features)
    if not np.all(np.isfinite(x)):
        raise ShapeError("training features contain non-finite values")
    y = _labels_to_y(features, positive_label)
    labels = {f.label for f in features}
    if len(labels) < 2 or positive_label not in labels:
        raise DegenerateTrainingError("training set must contain both classes")
    negative_label = sorted(labels - {positive_label})[0]
    if c is None or gamma is None:
        gc, gg = _grid_search(features, x, y, positive_label, negative_label, seed)
        c = c if c is not None else gc
        gamma = gamma if gamma is not None else gg
    return _fit_fixed(x, y, c, gamma, positive_label, negative_label, tol)


def predict(model: SvmModel, x: HRVVector) -> dict:
    """Label and decision score for one feature vector."""
    arr = x.feature_array()
    if not np.all(np.isfinite(arr)):
        raise ShapeError("features contain non-finite values")
    score = model.decision(arr)
    label = model.positive_label if score >= 0 else model.negative_label
    return {"label": label, "score": score}


# ---------------------------------------------------------------------------
# metrics and cross-validation protocols
# ---------------------------------------------------------------------------


def confusion_metrics(tp: int, tn: int, fp: int, fn: int) -> dict:
    total = tp + tn + fp + fn
    return {
        "accuracy": (tp + tn) / total if total else float("nan"),
        "sensitivity": tp / (tp + fn) if tp + fn else float("nan"),
        "specificity": tn / (tn + fp) if tn + fp else float("nan"),
        "f1": 2 * tp / (2 * tp + fp + fn) if 2 * tp + fp + fn else float("nan"),
    }


def auc_score(scores: np.ndarray, y: np.ndarray) -> float:
    """Rank-statistic AUC with midranks for ties."""
    scores = np.asarray(scores, dtype=float)
    y = np.asarray(y)
    n_pos = int(np.sum(y > 0))
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores))
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    rank_sum = float(np.sum(ranks[y > 0]))
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def _evaluate(scores: np.ndarray, y_true: np.ndarray) -> tuple[dict, dict]:
    pred = np.where(scores >= 0, 1.0, -1.0)
    tp = int(np.sum((pred > 0) & (y_true > 0)))
    tn = int(np.sum((pred < 0) & (y_true < 0)))
    fp = int(np.sum((pred > 0) & (y_true < 0)))
    fn = int(np.sum((pred < 0) & (y_true > 0)))
    metrics = confusion_metrics(tp, tn, fp, fn)
    metrics["auc"] = auc_score(scores, y_true)
    return metrics, {"tp": tp, "tn": tn, "fp": fp, "fn": fn}


def cross_validate(features: list[HRVVector], k: int = 10, seed: int = 0,
                   positive_label: str = "af",
                   c: float | None = None, gamma: float | None = None) -> CvReport:
    """Subject-independent k-fold CV: all clips of a subject stay in one fold.

    Patients contributing clips to both classes (the af/sr pairing) are still
    split by subject id, so their two recordings never straddle a fold.
    """
    subjects = np.array([f.subject_id for f in features])
    uniq = np.unique(subjects)
    if len(uniq) < k:
        raise DomainError(f"need at least k={k} subjects, got {len(uniq)}")
    labels = {f.label for f in features}
    negative_label = sorted(labels - {positive_label})[0]

    rng = np.random.default_rng(seed)
    folds = _subject_folds(subjects, k, rng)
    fold_map = {int(s): fi for fi, fold in enumerate(folds) for s in fold}

    y = _labels_to_y(features, positive_label)
    pooled_scores, pooled_y = [], []
    per_fold = []
    for fi, test_subjects in enumerate(folds):
        te = np.isin(subjects, test_subjects)
        tr = ~te
        train_subj = set(subjects[tr].tolist())
        test_subj = set(subjects[te].tolist())
        if train_subj & test_subj:
            raise AssertionError("subject leaked across the fold boundary")
        train_feats = [f for f, m in zip(features, tr) if m]
        model = fit(train_feats, positive_label, c=c, gamma=gamma, seed=seed + fi)
        scores = np.array([model.decision(f.feature_array())
                           for f, m in zip(features, te) if m])
        y_te = y[te]
        metrics, _ = _evaluate(scores, y_te)
        metrics["fold"] = fi
        metrics["n_test"] = int(te.sum())
        per_fold.append(metrics)
        pooled_scores.append(scores)
        pooled_y.append(y_te)

    scores = np.concatenate(pooled_scores)
    y_all = np.concatenate(pooled_y)
    pooled, confusion = _evaluate(scores, y_all)
    return CvReport(per_fold=per_fold, pooled=pooled, confusion=confusion,
                    fold_map=fold_map, seed=seed,
                    positive_label=positive_label, negative_label=negative_label)


def repeated_holdout(features: list[HRVVector], n_train_pos: int, n_train_neg: int,
                     repeats: int = 10, seed: int = 0,
                     positive_label: str = "afl") -> CvReport:
    """Subject-level random train/test splits, averaged over repeats.

    Sampled training subjects never appear in the test split; repeats whose
    test split is single-class are excluded and counted as warnings.
    """
    labels = {f.label for f in features}
    negative_label = sorted(labels - {positive_label})[0]
    subj_pos = sorted({f.subject_id for f in features if f.label == positive_label})
    subj_neg = sorted({f.subject_id for f in features if f.label != positive_label})
    if len(subj_pos) <= n_train_pos or len(subj_neg) <= n_train_neg:
        raise DomainError("not enough subjects per class for the requested split")

    rng = np.random.default_rng(seed)
    y = _labels_to_y(features, positive_label)
    subjects = np.array([f.subject_id for f in features])
    per_repeat = []
    warnings = 0
    agg = {"tp": 0, "tn": 0, "fp": 0, "fn": 0}
    for rep in range(repeats):
        train_subjects = set(rng.choice(subj_pos, n_train_pos, replace=False).tolist())
        train_subjects |= set(rng.choice(subj_neg, n_train_neg, replace=False).tolist())
        tr = np.isin(subjects, sorted(train_subjects))
        te = ~tr
        y_te = y[te]
        if len(np.unique(y_te)) < 2:
            warnings += 1
            continue
        train_feats = [f for f, m in zip(features, tr) if m]
        model = fit(train_feats, positive_label, seed=seed + rep)
        scores = np.array([model.decision(f.feature_array())
                           for f, m in zip(features, te) if m])
        metrics, conf = _evaluate(scores, y_te)
        metrics["repeat"] = rep
        per_repeat.append(metrics)
        for key in agg:
            agg[key] += conf[key]
    if not per_repeat:
        raise DomainError("every repeat had a degenerate test split")
    pooled = {m: float(np.mean([r[m] for r in per_repeat]))
              for m in ("accuracy", "sensitivity", "specificity", "f1", "auc")}
    return CvReport(per_fold=per_repeat, pooled=pooled, confusion=agg,
                    fold_map={}, seed=seed, positive_label=positive_label,
                    negative_label=negative_label, warnings=warnings)


def save_report(report: CvReport, path) -> None:
    Path(path).write_text(json.dumps(report.as_dict(), sort_keys=True, indent=1))
