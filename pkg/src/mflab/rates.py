"""Power-law convergence-rate fits with bootstrap confidence intervals.

The theorems being probed are magnitude upper bounds, so fits run on
log |value| against log N with delta-method weights; empirical signs may
oscillate near zero and only trigger a warning flag.  Series in which every
point is statistically consistent with zero are flagged degenerate instead
of fitted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["RateFit", "fit_rate", "bound_consistency"]


@dataclass
class RateFit:
    slope: float
    intercept: float
    slope_ci: tuple[float, float]
    points_used: list[int]
    degenerate: bool
    sign_mixed: bool = False
    n_boot: int = 0


def _wls_slope(logn: np.ndarray, logv: np.ndarray, weights: np.ndarray) -> tuple[float, float]:
    w = weights / weights.sum()
    xbar = float(np.sum(w * logn))
    ybar = float(np.sum(w * logv))
    dx = logn - xbar
    denom = float(np.sum(w * dx * dx))
    slope = float(np.sum(w * dx * (logv - ybar))) / denom
    return slope, ybar - slope * xbar


def _series_arrays(series):
    ns, vals, errs, reps = [], [], [], []
    for item in series:
        if hasattr(item, "value"):
            ns.append(item.n)
            vals.append(item.value)
            errs.append(item.stderr)
            reps.append(getattr(item, "replica_values", None))
        else:
            n, v, e = item[0], item[1], item[2]
            ns.append(n)
            vals.append(v)
            errs.append(e)
            reps.append(item[3] if len(item) > 3 else None)
    return (np.asarray(ns, dtype=np.float64), np.asarray(vals, dtype=np.float64),
            np.asarray(errs, dtype=np.float64), reps)


def fit_rate(series, n_boot: int = 500, seed: int = 12345, min_points: int = 4,
             ci_level: float = 0.95) -> RateFit:
    """Weighted least squares of log|value| on log N.

    Weights come from the relative standard errors (delta method).  The CI
    is a percentile bootstrap; when per-replica values are attached the
    resampling is at replica level (the true independence unit), otherwise
    a Gaussian parametric bootstrap on (value, stderr) is used.
    """
    ns, vals, errs, reps = _series_arrays(series)
    if ns.size < min_points:
        raise ValueError(f"need at least {min_points} points, got {ns.size}")
    if np.any(ns <= 0):
        raise ValueError("N values must be positive")
    degenerate = bool(np.all(np.abs(vals) < 3.0 * errs))
    points = [int(n) for n in ns]
    if degenerate:
        return RateFit(slope=math.nan, intercept=math.nan, slope_ci=(math.nan, math.nan),
                       points_used=points, degenerate=True)
    sign_mixed = bool(np.any(vals > 0) and np.any(vals < 0))

    logn = np.log(ns)
    absv = np.maximum(np.abs(vals), 1e-300)
    rel = np.where(absv > 0, errs / absv, np.inf)
    weights = 1.0 / np.maximum(rel, 1e-12) ** 2
    slope, intercept = _wls_slope(logn, np.log(absv), weights)

    rng = np.random.default_rng(seed)
    slopes = np.empty(n_boot)
    for b in range(n_boot):
        bv = np.empty_like(vals)
        be = np.empty_like(errs)
        for i in range(ns.size):
            rv = reps[i]
            if rv is not None and len(rv) > 1:
                idx = rng.integers(0, len(rv), size=len(rv))
                sample = np.asarray(rv)[idx]
                bv[i] = sample.mean() + (vals[i] - np.asarray(rv).mean())
                be[i] = sample.std(ddof=1) / math.sqrt(len(rv))
            else:
                bv[i] = vals[i] + errs[i] * rng.standard_normal()
                be[i] = errs[i]
        babs = np.maximum(np.abs(bv), 1e-300)
        brel = np.where(babs > 0, be / babs, np.inf)
        bw = 1.0 / np.maximum(brel, 1e-12) ** 2
        slopes[b], _ = _wls_slope(logn, np.log(babs), bw)
    alpha = 0.5 * (1.0 - ci_level)
    ci = (float(np.quantile(slopes, alpha)), float(np.quantile(slopes, 1.0 - alpha)))
    return RateFit(slope=slope, intercept=intercept, slope_ci=ci, points_used=points,
                   degenerate=False, sign_mixed=sign_mixed, n_boot=n_boot)


def bound_consistency(series, exponent: float) -> tuple[bool, float]:
    """Check |value(N)| <= C_hat * N^exponent with C_hat fitted at the
    smallest N; returns (holds at every N, C_hat)."""
    ns, vals, errs, _ = _series_arrays(series)
    order = np.argsort(ns)
    ns, vals, errs = ns[order], vals[order], errs[order]
    c_hat = abs(vals[0]) / ns[0] ** exponent
    # 3 sigma of slack so a noise excursion does not flip the verdict
    ok = bool(np.all(np.abs(vals) <= c_hat * ns ** exponent + 3.0 * errs))
    return ok, float(c_hat)
