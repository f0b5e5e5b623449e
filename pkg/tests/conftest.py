import numpy as np
import pytest

from afkit.series import IBISeries, ProbSeries, SampledSeries


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def random_ibi(rng, n=None, mean_ms=None) -> IBISeries:
    """A physiologically plausible random IBI series (helper, not a fixture)."""
    n = n if n is not None else int(rng.integers(8, 60))
    mean_ms = mean_ms if mean_ms is not None else float(rng.uniform(500, 1200))
    intervals = np.clip(mean_ms * (1 + 0.2 * rng.standard_normal(n)), 260, 2900)
    onsets = np.concatenate([[0.0], np.cumsum(intervals[:-1]) / 1000.0])
    return IBISeries(intervals, onsets)


def random_prob(rng, n: int, rate_hz: float = 30.0) -> ProbSeries:
    mass = rng.uniform(0.01, 1.0, n)
    return ProbSeries(mass / mass.sum(), rate_hz)


def random_peak_target(rng, n: int, n_peaks: int, rate_hz: float = 30.0) -> ProbSeries:
    idx = rng.choice(n, size=n_peaks, replace=False)
    mass = np.zeros(n)
    mass[idx] = 1.0 / n_peaks
    return ProbSeries(mass, rate_hz)


def random_logits(rng, n: int, rate_hz: float = 30.0) -> SampledSeries:
    return SampledSeries(rng.uniform(-3, 3, n), rate_hz)
