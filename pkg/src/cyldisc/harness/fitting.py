"""Least-squares exponent fits with bootstrap confidence intervals."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class Fit:
    slope: float
    intercept: float
    ci_low: float
    ci_high: float
    coords: str
    n_points: int
    level: float

    def excludes_zero(self) -> bool:
        return self.ci_low > 0 or self.ci_high < 0


def transform(Ns, values, coords: str = "loglog", power: float | None = None):
    """Map (N, statistic) to the fit coordinates.

    ``loglog``: (log N, log value).  ``power``: (N^power, log value), the
    natural scale when log T grows like a power of N.
    """
    Ns = np.asarray(Ns, dtype=float)
    v = np.asarray(values, dtype=float)
    if np.any(v <= 0) or np.any(Ns <= 0):
        raise ValueError("N and the statistic must be positive")
    if coords == "loglog":
        return np.log(Ns), np.log(v)
    if coords == "power":
        if power is None:
            raise ValueError("coords='power' needs the exponent")
        return Ns ** power, np.log(v)
    raise ValueError(f"unknown coordinates {coords!r}")


def ols(x, y) -> tuple:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 2 or np.ptp(x) == 0:
        raise ValueError("degenerate design: need at least two distinct abscissae")
    slope, intercept = np.polyfit(x, y, 1)
    return float(slope), float(intercept)


def fit_exponent(samples: dict, coords: str = "loglog", power: float | None = None,
                 statistic=np.median, boot: int = 2000, level: float = 0.90, rng=None) -> Fit:
    """Slope of the statistic against N with a bootstrap percentile interval.

    ``samples`` maps N to either a scalar or an array of per-replica values.
    Arrays are resampled within each N; scalars are kept fixed, so exact
    inputs give a zero-width interval.
    """
    if len(samples) < 3:
        raise ValueError("need at least three values of N")
    Ns = sorted(samples)
    data = [np.atleast_1d(np.asarray(samples[N], dtype=float)) for N in Ns]
    if any(len(a) == 0 for a in data):
        raise ValueError("empty sample")
    point = [float(statistic(a)) if len(a) > 1 else float(a[0]) for a in data]
    x, y = transform(Ns, point, coords, power)
    slope, intercept = ols(x, y)
    rng = np.random.default_rng(0) if rng is None else rng
    slopes = np.empty(boot)
    for b in range(boot):
        stat = []
        for a in data:
            if len(a) > 1:
                stat.append(float(statistic(a[rng.integers(len(a), size=len(a))])))
            else:
                stat.append(float(a[0]))
        xb, yb = transform(Ns, stat, coords, power)
        slopes[b] = ols(xb, yb)[0]
    tail = (1.0 - level) / 2.0
    lo, hi = np.quantile(slopes, [tail, 1.0 - tail])
    return Fit(slope, intercept, float(lo), float(hi), coords, len(Ns), level)


def rank_correlation(x, y) -> float:
    """Spearman correlation (ties get average ranks)."""
    from scipy.stats import spearmanr
    r = spearmanr(x, y).statistic
    return float(r) if not math.isnan(r) else 0.0
