"""Frequentist calibration: sandwich standard errors, Wald intervals, CQR.

Sandwich variance of a group effect in a single-level grouped model:

    Var(b_j) = tau (1 - tau) / (n_j C^2)

``C`` is the TKC curvature.  TKC estimates ``f / lam`` (noise density at the
quantile over the AL scale) while the frequentist variance involves ``f``
itself, so the two agree only when ``lam = 1``.  ``sandwich_scale`` selects
between dividing by ``C^2`` as written (``"as_paper"``) or by ``(lam C)^2``
(``"density_scale"``).
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .ald import check_tau
from .curvature import tkc_curvature

SANDWICH_SCALES = ("as_paper", "density_scale")
CQR_MODES = ("standard", "uncertainty_aware")


class UnsupportedDesignError(ValueError):
    pass


@dataclass(frozen=True)
class Interval:
    lower: float
    upper: float
    level: float

    def __post_init__(self):
        if self.lower > self.upper:
            raise ValueError("interval lower bound exceeds upper bound")

    def contains(self, x):
        return self.lower <= x <= self.upper


@dataclass(frozen=True)
class ConformalCalibration:
    t: float
    mode: str
    target_level: float
    infinite: bool = False

    def apply(self, lower, upper, sigma=None):
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        scale = 1.0 if self.mode == "standard" else _check_sigma(sigma, lower.shape)
        return lower - self.t * scale, upper + self.t * scale


def sandwich_variance(tau, n_j, c_hat):
    tau = check_tau(tau)
    n_j = np.asarray(n_j, dtype=float)
    c_hat = np.asarray(c_hat, dtype=float)
    if np.any(n_j < 1):
        raise ValueError("n_j must be at least 1")
    if np.any(c_hat <= 0):
        raise ValueError("curvature must be positive")
    out = tau * (1.0 - tau) / (n_j * c_hat**2)
    return float(out) if out.ndim == 0 else out


def wald_interval(center, se, level):
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must lie in (0, 1), got {level}")
    if se < 0:
        raise ValueError("standard error must be nonnegative")
    z = norm.ppf(0.5 + level / 2.0)
    return Interval(center - z * se, center + z * se, level)


def wald_bounds(center, se, level):
    """Vectorized Wald bounds (lower, upper)."""
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must lie in (0, 1), got {level}")
    z = norm.ppf(0.5 + level / 2.0)
    center = np.asarray(center, dtype=float)
    se = np.asarray(se, dtype=float)
    return center - z * se, center + z * se


def empirical_coverage(intervals, truths):
    """Fraction of truths inside their intervals.

    ``intervals`` is a list of ``Interval`` or a pair of arrays ``(lower, upper)``.
    """
    truths = np.asarray(truths, dtype=float)
    if isinstance(intervals, tuple) and len(intervals) == 2 and np.ndim(intervals[0]) == 1:
        lo, hi = (np.asarray(v, dtype=float) for v in intervals)
    else:
        lo = np.array([iv.lower for iv in intervals], dtype=float)
        hi = np.array([iv.upper for iv in intervals], dtype=float)
    if lo.shape != truths.shape or hi.shape != truths.shape:
        raise ValueError("intervals and truths differ in length")
    if truths.size == 0:
        raise ValueError("no intervals given")
    return float(np.mean((lo <= truths) & (truths <= hi)))


def sandwich_se(fit, scale="as_paper", source="pooled"):
    """Sandwich standard errors of the group effects of a grouped fit.

    Parameters
    ----------
    scale : {"as_paper", "density_scale"}
    source : {"pooled", "group"}
        ``pooled`` uses one TKC curvature from all residuals at the mode;
        ``group`` recomputes TKC from each group's own residuals.
    """
    if scale not in SANDWICH_SCALES:
        raise ValueError(f"sandwich_scale must be one of {SANDWICH_SCALES}")
    model = fit.model
    latent = model.latent
    if latent.kind != "grouped":
        raise UnsupportedDesignError("sandwich standard errors are implemented for grouped designs only")
    tau = model.tau
    lam = fit.lambda_hat
    y = fit.y
    mu = fit.posterior.mu_hat
    if source == "pooled":
        c = np.full(latent.m, tkc_curvature(y, mu, lam, tau, model.tkc).c)
    elif source == "group":
        c = np.empty(latent.m)
        for j in range(latent.m):
            idx = latent.group == j
            c[j] = tkc_curvature(y[idx], mu[idx], lam, tau, model.tkc).c
    else:
        raise ValueError("source must be 'pooled' or 'group'")
    if scale == "density_scale":
        c = c * lam
    counts = np.maximum(latent.counts, 1.0)
    se = np.sqrt(sandwich_variance(tau, counts, c))
    # groups without data carry only prior information
    return np.where(latent.counts > 0, se, np.sqrt(fit.theta_hat[0]))


def posterior_se(fit):
    """Naive posterior standard deviations of the latent effects."""
    return np.sqrt(fit.posterior.precision.covariance_diag())


def _check_sigma(sigma, shape):
    if sigma is None:
        raise ValueError("uncertainty-aware mode needs sigma")
    sigma = np.asarray(sigma, dtype=float)
    if sigma.shape != shape:
        raise ValueError(f"sigma has shape {sigma.shape}, expected {shape}")
    if np.any(sigma <= 0):
        raise ValueError("sigma must be strictly positive")
    return sigma


def cqr_calibrate(y_cal, lower_pred, upper_pred, alpha, sigma=None):
    """Conformal correction t for the intervals [lower - t s, upper + t s].

    ``s = 1`` in standard mode and ``s = sigma`` in uncertainty-aware mode
    (selected by passing ``sigma``).  ``t`` is the ceil((n+1)(1-alpha))-th
    smallest conformity score ``max(lower - y, y - upper) / s``.
    """
    y = np.asarray(y_cal, dtype=float)
    lo = np.asarray(lower_pred, dtype=float)
    hi = np.asarray(upper_pred, dtype=float)
    if y.size == 0:
        raise ValueError("empty calibration set")
    if lo.shape != y.shape or hi.shape != y.shape:
        raise ValueError("calibration arrays differ in length")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    mode = "standard"
    scores = np.maximum(lo - y, y - hi)
    if sigma is not None:
        mode = "uncertainty_aware"
        scores = scores / _check_sigma(sigma, y.shape)
    n = y.size
    k = math.ceil((n + 1) * (1.0 - alpha))
    if k > n:
        warnings.warn(
            f"calibration set of {n} points is too small for level {1 - alpha}; intervals are unbounded",
            RuntimeWarning,
        )
        return ConformalCalibration(math.inf, mode, 1.0 - alpha, infinite=True)
    t = float(np.partition(scores, k - 1)[k - 1])
    return ConformalCalibration(t, mode, 1.0 - alpha)


def binned_coverage(x, y, lower, upper, n_bins=10, x_range=None):
    """Coverage within equal-width bins of x; empty bins give NaN."""
    x = np.asarray(x, dtype=float)
    lo_x, hi_x = x_range if x_range is not None else (x.min(), x.max())
    edges = np.linspace(lo_x, hi_x, n_bins + 1)
    which = np.clip(np.searchsorted(edges, x, side="right") - 1, 0, n_bins - 1)
    hit = (np.asarray(lower) <= y) & (y <= np.asarray(upper))
    cov = np.full(n_bins, np.nan)
    for k in range(n_bins):
        sel = which == k
        if sel.any():
            cov[k] = hit[sel].mean()
    return edges, cov
