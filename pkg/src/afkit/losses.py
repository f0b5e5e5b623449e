"""Probability-distance losses over peak-timing distributions, with gradients.

Four candidate distances compare a model's softmax output against a normalized
binary peak target: squared Euclidean distance, KL divergence, JS divergence,
and the 1D Wasserstein distance. Wasserstein has a closed form in 1D: the L1
distance between the two cumulative sums. Each loss returns its value together
with the analytic gradient w.r.t. the first argument, and a fused entry point
chains that gradient back through the softmax to logit space for training.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DomainError, ShapeError
from .series import ProbSeries, SampledSeries

# Smoothing added to the model distribution inside KL's log and gradient so a
# zero-mass bin under a target peak stays finite.
KL_EPS = 1e-8

# Default analysis grid: the coordinate axis spans [-2, 2] over the series.
SWEEP_LENGTH = 1001
COORD_HALF_SPAN = 2.0

LOSS_KINDS = ("sed", "kl", "js", "ws")


@dataclass(frozen=True)
class LossValue:
    """A scalar loss and its gradient w.r.t. the first (model) distribution."""

    value: float
    grad: np.ndarray

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise DomainError("loss value is not finite")


def _check_pair(p: ProbSeries, s: ProbSeries) -> tuple[np.ndarray, np.ndarray]:
    if len(p) != len(s):
        raise ShapeError(f"length mismatch: {len(p)} vs {len(s)}")
    return np.asarray(p.mass, dtype=float), np.asarray(s.mass, dtype=float)


def softmax_head(logits: SampledSeries) -> ProbSeries:
    """Overflow-safe softmax turning a logit series into a probability series."""
    x = np.asarray(logits.values, dtype=float)
    if x.ndim != 1:
        raise ShapeError("softmax_head expects a single-channel series")
    if len(x) < 2:
        raise ShapeError("softmax_head needs length >= 2")
    e = np.exp(x - x.max())
    return ProbSeries(e / e.sum(), logits.rate_hz)


def _softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max())
    return e / e.sum()


def sed(p: ProbSeries, s: ProbSeries) -> LossValue:
    """Squared Euclidean distance sum((p - s)^2)."""
    pm, sm = _check_pair(p, s)
    diff = pm - sm
    return LossValue(float(diff @ diff), 2.0 * diff)


def kl(p: ProbSeries, s: ProbSeries) -> LossValue:
    """KL divergence of the target from the model, KL(s || p).

    Terms where the target has no mass contribute zero; the model mass is
    smoothed by ``KL_EPS`` so target peaks over empty model bins stay finite.
    """
    pm, sm = _check_pair(p, s)
    pos = sm > 0
    value = float(np.sum(sm[pos] * np.log(sm[pos] / (pm[pos] + KL_EPS))))
    grad = -sm / (pm + KL_EPS)
    return LossValue(max(value, 0.0), grad)


def js(p: ProbSeries, s: ProbSeries) -> LossValue:
    """Jensen-Shannon divergence: symmetric, bounded by log 2."""
    pm, sm = _check_pair(p, s)
    m = 0.5 * (pm + sm)
    pp = pm > 0
    sp = sm > 0
    value = 0.5 * float(np.sum(pm[pp] * np.log(pm[pp] / m[pp])))
    value += 0.5 * float(np.sum(sm[sp] * np.log(sm[sp] / m[sp])))
    grad = np.zeros_like(pm)
    grad[pp] = 0.5 * np.log(pm[pp] / m[pp])
    return LossValue(max(value, 0.0), grad)


def wasserstein(p: ProbSeries, s: ProbSeries) -> LossValue:
    """Closed-form 1D Wasserstein distance: sum_t |F_p(t) - F_s(t)|.

    The gradient w.r.t. p[k] is the reverse cumulative sum of the sign of the
    CDF difference; ties take subgradient 0.
    """
    pm, sm = _check_pair(p, s)
    fdiff = np.cumsum(pm) - np.cumsum(sm)
    value = float(np.sum(np.abs(fdiff)))
    grad = np.cumsum(np.sign(fdiff)[::-1])[::-1]
    return LossValue(value, grad)


_LOSS_FNS: dict[str, Callable[[ProbSeries, ProbSeries], LossValue]] = {
    "sed": sed,
    "kl": kl,
    "js": js,
    "ws": wasserstein,
}


def loss_fn(kind: str) -> Callable[[ProbSeries, ProbSeries], LossValue]:
    try:
        return _LOSS_FNS[kind]
    except KeyError:
        raise DomainError(f"unknown loss kind {kind!r}; expected one of {LOSS_KINDS}") from None


def loss_on_logits(logits: np.ndarray, target: ProbSeries, kind: str,
                   rate_hz: float | None = None) -> tuple[float, np.ndarray]:
    """Fused form: softmax the logits, evaluate the loss, and return the
    loss value plus its gradient w.r.t. the logits."""
    x = np.asarray(logits, dtype=float)
    if x.ndim != 1 or len(x) != len(target):
        raise ShapeError("logits must be 1D and match the target length")
    rate = rate_hz if rate_hz is not None else target.rate_hz
    prob = _softmax(x)
    lv = loss_fn(kind)(ProbSeries(prob, rate), target)
    g = lv.grad
    grad_logits = prob * (g - float(g @ prob))
    return lv.value, grad_logits


# ---------------------------------------------------------------------------
# analysis sweeps: misalignment and sharpness response curves
# ---------------------------------------------------------------------------


def truncated_gaussian_peak(length: int, center: int, sigma2: float,
                            rate_hz: float = 1.0,
                            coord_half_span: float = COORD_HALF_SPAN) -> ProbSeries:
    """Smooth unimodal peak: a Gaussian bump sampled on the series' coordinate
    grid (the full series spans ``2 * coord_half_span`` coordinate units) and
    renormalized to unit mass. Truncation is the grid boundary itself."""
    if length < 2:
        raise DomainError("length must be >= 2")
    if not 0 <= center < length:
        raise DomainError("center must lie inside the series")
    if not sigma2 > 0:
        raise DomainError("sigma2 must be positive")
    dx = 2.0 * coord_half_span / (length - 1)
    x = (np.arange(length) - center) * dx
    mass = np.exp(-(x**2) / (2.0 * sigma2))
    return ProbSeries(mass / mass.sum(), rate_hz)


def delta_peak(length: int, index: int, rate_hz: float = 1.0) -> ProbSeries:
    """Unit mass at a single sample (a binary peak target)."""
    if not 0 <= index < length:
        raise DomainError("index must lie inside the series")
    mass = np.zeros(length)
    mass[index] = 1.0
    return ProbSeries(mass, rate_hz)


def loss_vs_shift(kind: str, max_shift: int, sigma2: float = 0.1,
                  length: int = SWEEP_LENGTH) -> tuple[np.ndarray, np.ndarray]:
    """Loss response to peak misalignment.

    The smooth peak stays at the series center while the binary peak slides
    across offsets -max_shift..max_shift; returns (shifts, values).
    """
    if not 0 < max_shift < length / 2:
        raise DomainError("max_shift must lie in (0, length/2)")
    fn = loss_fn(kind)
    center = length // 2
    smooth = truncated_gaussian_peak(length, center, sigma2)
    shifts = np.arange(-max_shift, max_shift + 1)
    values = np.empty(shifts.shape, dtype=float)
    for i, dt in enumerate(shifts):
        values[i] = fn(smooth, delta_peak(length, center + int(dt))).value
    return shifts, values


def loss_vs_sharpness(kind: str, sigma2_grid, length: int = SWEEP_LENGTH
                      ) -> tuple[np.ndarray, np.ndarray]:
    """Loss response to peak sharpness.

    The binary peak sits at the smooth peak's mode; the smooth peak's variance
    sweeps over ``sigma2_grid`` (small variance = sharp peak).
    """
    grid = np.asarray(sigma2_grid, dtype=float)
    if np.any(grid <= 0):
        raise DomainError("all sigma2 grid points must be positive")
    fn = loss_fn(kind)
    center = length // 2
    binary = delta_peak(length, center)
    values = np.empty(grid.shape, dtype=float)
    for i, s2 in enumerate(grid):
        values[i] = fn(truncated_gaussian_peak(length, center, float(s2)), binary).value
    return grid, values
