"""Error metric and the hypothesis tests used to compare algorithms."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from isinggame.rng import stream


def marginal_error(estimate, exact) -> float:
    """Mean absolute difference between estimated and exact P(X_i = +1)."""
    a = np.asarray(getattr(estimate, "p", estimate), dtype=np.float64)
    b = np.asarray(getattr(exact, "marginals", exact), dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    return float(np.abs(a - b).mean())


@dataclass(frozen=True)
class ZTest:
    decision: str  # better | worse | indistinguishable  (first algorithm relative to second)
    z: float
    p: float
    mean_diff: float
    degenerate: bool = False


def _decide(mean: float, var_of_mean: float, alpha: float) -> ZTest:
    # mean > 0 means the first algorithm has the smaller error
    if var_of_mean <= 0.0:
        if mean == 0.0:
            return ZTest("indistinguishable", 0.0, 1.0, 0.0, degenerate=True)
        z = math.copysign(math.inf, mean)
        return ZTest("better" if mean > 0 else "worse", z, 0.0, mean, degenerate=True)
    z = mean / math.sqrt(var_of_mean)
    p = float(2.0 * norm.sf(abs(z)))
    if p < alpha:
        return ZTest("better" if z > 0 else "worse", z, p, mean)
    return ZTest("indistinguishable", z, p, mean)


def paired_z_test(errors_a, errors_b, alpha: float = 0.05) -> ZTest:
    """Two-sided paired z-test on ``d = errors_b - errors_a``.

    ``"better"`` means algorithm A has significantly smaller error.  Zero
    sample variance is decided without a test: a zero mean difference is
    indistinguishable, anything else is a degenerate win or loss.
    """
    a = np.asarray(errors_a, dtype=np.float64)
    b = np.asarray(errors_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired samples must be 1-D and of equal length")
    if a.size < 2:
        raise ValueError("need at least two pairs")
    d = b - a
    return _decide(float(d.mean()), float(d.var(ddof=1)) / d.size, alpha)


def stratified_z_test(strata, alpha: float = 0.05) -> ZTest:
    """Paired z-test on the average over strata of per-stratum mean differences.

    ``strata`` is a sequence of ``(errors_a, errors_b)`` pairs, one per
    stratum.  The variance of the pooled mean adds each stratum's own
    variance of its mean, ``sum_q var_q / k_q / Q**2``.
    """
    strata = list(strata)
    if not strata:
        raise ValueError("no strata")
    means, vars_ = [], []
    for a, b in strata:
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        if a.shape != b.shape or a.size < 2:
            raise ValueError("each stratum needs at least two paired samples")
        d = b - a
        means.append(d.mean())
        vars_.append(d.var(ddof=1) / d.size)
    Q = len(strata)
    return _decide(float(np.mean(means)), float(np.sum(vars_)) / Q**2, alpha)


def bootstrap_ci(samples, B: int = 100, alpha: float = 0.05, seed: int = 0) -> tuple[float, float]:
    """Percentile interval for the mean from ``B`` resamples."""
    x = np.asarray(samples, dtype=np.float64)
    if x.size < 2:
        raise ValueError("need at least two samples")
    if B < 1:
        raise ValueError("B must be >= 1")
    rng = stream(seed, "bootstrap")
    idx = rng.integers(0, x.size, size=(B, x.size))
    means = x[idx].mean(axis=1)
    lo, hi = np.quantile(means, [alpha / 2, 1 - alpha / 2])
    return float(lo), float(hi)


@dataclass(frozen=True)
class Proportion:
    value: float
    lo: float
    hi: float
    k: int
    n: int


def wald_proportion(k: int, n: int, alpha: float = 0.05) -> Proportion:
    if n < 1:
        raise ValueError("empty stratum")
    p = k / n
    half = norm.ppf(1 - alpha / 2) * math.sqrt(p * (1 - p) / n)
    return Proportion(p, p - half, p + half, k, n)


def nonconvergence_proportion(records, algorithm: str, stratum=None, alpha: float = 0.05) -> Proportion:
    """Fraction of non-converged runs of ``algorithm`` (optionally restricted to ``stratum``).

    ``stratum`` is a dict of record fields that must match, e.g. ``{"q": 0.5}``.
    """
    rows = [r for r in records if r.algorithm == algorithm
            and all(_field_eq(getattr(r, k), v) for k, v in (stratum or {}).items())]
    if not rows:
        raise ValueError(f"no records for {algorithm!r} in stratum {stratum}")
    k = sum(1 for r in rows if not r.converged)
    return wald_proportion(k, len(rows), alpha)


def _field_eq(a, b) -> bool:
    if isinstance(a, float) or isinstance(b, float):
        try:
            return a is not None and b is not None and math.isclose(float(a), float(b))
        except (TypeError, ValueError):
            return False
    return a == b


def two_proportion_test(k1: int, n1: int, k2: int, n2: int) -> float:
    """One-sided p-value for ``p1 > p2`` (pooled normal approximation)."""
    p = (k1 + k2) / (n1 + n2)
    se = math.sqrt(p * (1 - p) * (1 / n1 + 1 / n2))
    diff = k1 / n1 - k2 / n2
    if se == 0:
        return 0.0 if diff > 0 else 1.0
    return float(norm.sf(diff / se))
