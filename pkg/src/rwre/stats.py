"""Interval estimates shared by all Monte Carlo estimators."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

CONFIDENCE = 0.99


def _z(confidence: float) -> float:
    return float(stats.norm.ppf(0.5 + confidence / 2))


@dataclass(frozen=True)
class Estimate:
    """A point estimate with a two-sided confidence interval."""

    value: float
    lo: float
    hi: float
    trials: int
    exact: bool = False

    def covers(self, x: float, atol: float = 0.0) -> bool:
        return self.lo - atol <= x <= self.hi + atol

    @classmethod
    def exact_value(cls, value: float) -> "Estimate":
        return cls(float(value), float(value), float(value), 0, True)


def wilson_interval(successes: int, trials: int, confidence: float = CONFIDENCE) -> Estimate:
    """Wilson score interval; a zero count uses the rule-of-three upper bound 3/n."""
    if trials <= 0:
        raise ValueError("trials must be positive")
    if not 0 <= successes <= trials:
        raise ValueError("successes must lie in [0, trials]")
    p = successes / trials
    if successes == 0:
        return Estimate(0.0, 0.0, min(1.0, 3.0 / trials), trials)
    z = _z(confidence)
    z2 = z * z
    denom = 1.0 + z2 / trials
    center = (p + z2 / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z2 / (4 * trials * trials)) / denom
    return Estimate(p, max(0.0, center - half), min(1.0, center + half), trials)


def mean_interval(samples, confidence: float = CONFIDENCE) -> Estimate:
    """Normal-approximation interval for the mean of i.i.d. samples."""
    x = np.asarray(samples, dtype=np.float64)
    n = x.size
    if n == 0:
        raise ValueError("no samples")
    m = float(np.mean(x))
    if n == 1:
        return Estimate(m, m, m, 1)
    half = _z(confidence) * float(np.std(x, ddof=1)) / math.sqrt(n)
    return Estimate(m, m - half, m + half, n)
