"""Welch and one-sample t-tests, t thresholds, per-epoch t-curves, and
bootstrap confidence intervals.

The t-distribution CDF is evaluated through the regularized incomplete
beta function (continued fraction, Lentz's method), so there is no
statistics-library dependency and values can be checked against published
tables. All p-values are two-tailed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSampleError


@dataclass
class TTestResult:
    t: float
    df: float
    p: float


@dataclass
class TCurve:
    epochs: list[int]
    t_values: list[float]            # nan where a side was degenerate
    thresholds: list[float]          # t at p = alpha for that epoch's df
    alpha: float
    first_significant_epoch: int | None


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (Numerical-Recipes form)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 400):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            break
    return h


def betainc_reg(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b), abs error < 1e-12 on [0, 1]."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def two_tailed_p(t: float, df: float) -> float:
    """P(|T| >= t) for Student's t with ``df`` degrees of freedom."""
    if df <= 0:
        raise ValueError("df must be > 0")
    t = abs(float(t))
    if math.isinf(t):
        return 0.0
    return betainc_reg(df / 2.0, 0.5, df / (df + t * t))


def student_t_cdf(t: float, df: float) -> float:
    p = two_tailed_p(t, df)
    return 1.0 - 0.5 * p if t >= 0 else 0.5 * p


def welch_t(a, b) -> TTestResult:
    """Unequal-variance two-sample t-test with Welch-Satterthwaite df."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise DegenerateSampleError("welch_t needs >= 2 observations per sample")
    va = a.var(ddof=1) / a.size
    vb = b.var(ddof=1) / b.size
    if va + vb == 0.0:
        raise DegenerateSampleError("welch_t: both samples have zero variance")
    t = (a.mean() - b.mean()) / math.sqrt(va + vb)
    df = (va + vb) ** 2 / (va**2 / (a.size - 1) + vb**2 / (b.size - 1))
    return TTestResult(t=float(t), df=float(df), p=two_tailed_p(t, df))


def one_sample_t(values, mu0: float) -> TTestResult:
    values = np.asarray(values, dtype=np.float64)
    if values.size < 2:
        raise DegenerateSampleError("one_sample_t needs >= 2 observations")
    s = values.std(ddof=1)
    if s == 0.0:
        raise DegenerateSampleError("one_sample_t: zero variance")
    t = (values.mean() - mu0) / (s / math.sqrt(values.size))
    df = values.size - 1
    return TTestResult(t=float(t), df=float(df), p=two_tailed_p(t, df))


def t_threshold(df: float, alpha: float) -> float:
    """t such that two_tailed_p(t, df) == alpha, by bisection on the CDF."""
    if df <= 0:
        raise ValueError("df must be > 0")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    lo, hi = 0.0, 1.0
    while two_tailed_p(hi, df) > alpha:
        hi *= 2.0
        if hi > 1e18:
            return hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if two_tailed_p(mid, df) > alpha:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def t_curve(same_by_epoch, other_by_epoch, alpha: float = 0.001) -> TCurve:
    """Per-epoch Welch t of same-author vs other-author loss distributions.

    ``same_by_epoch[e]`` / ``other_by_epoch[e]`` are the loss samples at
    epoch e. Degenerate epochs become nan points. The t is oriented so
    larger other-author losses give positive values.
    """
    if len(same_by_epoch) != len(other_by_epoch):
        raise ValueError("epoch lists differ in length")
    ts, ths = [], []
    first_sig = None
    for e, (same, other) in enumerate(zip(same_by_epoch, other_by_epoch)):
        try:
            r = welch_t(other, same)
            ts.append(r.t)
            ths.append(t_threshold(r.df, alpha))
            if first_sig is None and r.p < alpha:
                first_sig = e
        except DegenerateSampleError:
            ts.append(float("nan"))
            ths.append(float("nan"))
    return TCurve(epochs=list(range(len(ts))), t_values=ts, thresholds=ths,
                  alpha=alpha, first_significant_epoch=first_sig)


def bootstrap_ci(samples, level: float = 0.95, n_resamples: int = 10_000,
                 seed: int = 0) -> tuple[float, float]:
    """Percentile bootstrap interval for the mean; deterministic per seed."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.size == 0:
        raise DegenerateSampleError("bootstrap_ci of empty sample")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, samples.size, size=(n_resamples, samples.size))
    means = samples[idx].mean(axis=1)
    tail = 100.0 * (1.0 - level) / 2.0
    lo, hi = np.percentile(means, [tail, 100.0 - tail])
    return float(lo), float(hi)
