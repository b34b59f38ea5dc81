"""Reference log-marginal likelihoods for single-level grouped models.

For one group with residuals ``r_i = y_i - offset_i`` the target is

    log  integral  prod_i AL(r_i | b, lam, tau) N(b; 0, sigma2) db.

Three evaluators are provided:

``agh_group_log_marginal``        adaptive Gauss-Hermite quadrature, nodes centred
                                  at the exact 1-d mode and scaled by a TKC
                                  curvature estimate
``trapezoid_group_log_marginal``  dense trapezoid rule on a fixed grid
``piecewise_group_log_marginal``  closed form: between consecutive sorted
                                  residuals the integrand is exp(quadratic), so
                                  each segment is a Gaussian probability

All accumulate in log space.  Groups combine by compensated summation.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_ndtr, logsumexp

from .ald import check_scale, check_tau, pinball_loss
from .curvature import DegenerateCurvatureError, TkcConfig, tkc_curvature

METHODS = ("piecewise", "agh", "trapezoid")


@dataclass(frozen=True)
class QuadratureConfig:
    nodes: int = 50
    half_width: float = 12.0
    n_grid: int = 20001
    tkc: TkcConfig = field(default_factory=TkcConfig)

    def __post_init__(self):
        if self.nodes < 5:
            raise ValueError("at least 5 quadrature nodes are required")
        if self.n_grid < 3 or self.n_grid % 2 == 0:
            raise ValueError("trapezoid grid size must be odd and >= 3")
        if not self.half_width > 0:
            raise ValueError("half_width must be positive")


def _residuals(y_j, offset):
    r = np.asarray(y_j, dtype=float).ravel()
    if offset is not None:
        r = r - np.broadcast_to(np.asarray(offset, dtype=float), r.shape)
    return r


def _log_integrand(b, r, sigma2, lam, tau):
    """log of prod_i AL(r_i | b) N(b; 0, sigma2) on a vector of b values."""
    b = np.atleast_1d(np.asarray(b, dtype=float))
    out = np.empty(b.size)
    const = r.size * np.log(tau * (1.0 - tau) / lam) - 0.5 * np.log(2.0 * np.pi * sigma2)
    # chunk to bound memory on long grids
    step = max(1, 2_000_000 // max(1, r.size))
    for s in range(0, b.size, step):
        bb = b[s : s + step]
        loss = pinball_loss(r[None, :], bb[:, None], tau).sum(axis=1)
        out[s : s + step] = const - loss / lam - bb * bb / (2.0 * sigma2)
    return out


def group_mode(r, sigma2, lam, tau):
    """Exact maximizer of the 1-d integrand (kinks included)."""
    rs = np.sort(r)
    n = rs.size
    scale = sigma2 / lam
    k = np.arange(n + 1)
    s = scale * (tau * n - k)  # stationary point with k residuals below b
    hi = np.concatenate([rs, [np.inf]])
    lo = np.concatenate([[-np.inf], rs])
    kstar = int(np.argmax(s <= hi))
    return float(np.clip(s[kstar], lo[kstar], hi[kstar]))


def agh_group_log_marginal(y_j, beta_offset, sigma2, lam, tau, config=None):
    """Adaptive Gauss-Hermite log-marginal for one group."""
    config = config or QuadratureConfig()
    tau = check_tau(tau)
    lam = check_scale(lam)
    r = _residuals(y_j, beta_offset)
    if r.size == 0:
        return 0.0
    b_hat = group_mode(r, sigma2, lam, tau)
    try:
        c = tkc_curvature(r, b_hat, lam, tau, config.tkc).c
        sd = 1.0 / math.sqrt(1.0 / sigma2 + r.size * c)
    except DegenerateCurvatureError:
        warnings.warn("curvature estimate failed; quadrature scaled by the prior sd", RuntimeWarning)
        sd = math.sqrt(sigma2)
    x, w = np.polynomial.hermite.hermgauss(config.nodes)
    nodes = b_hat + math.sqrt(2.0) * sd * x
    vals = _log_integrand(nodes, r, sigma2, lam, tau) + x * x
    return float(logsumexp(vals, b=w) + math.log(math.sqrt(2.0) * sd))


def trapezoid_group_log_marginal(y_j, beta_offset, sigma2, lam, tau, config=None):
    """Trapezoid rule over +-half_width prior sds with n_grid points."""
    config = config or QuadratureConfig()
    tau = check_tau(tau)
    lam = check_scale(lam)
    r = _residuals(y_j, beta_offset)
    half = config.half_width * math.sqrt(sigma2)
    grid = np.linspace(-half, half, config.n_grid)
    h = grid[1] - grid[0]
    w = np.ones(grid.size)
    w[0] = w[-1] = 0.5
    if r.size == 0:
        # the prior alone; same rule so the no-data case measures its own error
        pass
    vals = _log_integrand(grid, r, sigma2, lam, tau)
    return float(logsumexp(vals, b=w) + math.log(h))


def _log_phi_diff(a, b):
    """log(Phi(b) - Phi(a)) for a < b, stable in both tails."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    flip = a > 0
    lo = np.where(flip, -b, a)
    hi = np.where(flip, -a, b)
    lhi = log_ndtr(hi)
    llo = log_ndtr(lo)
    with np.errstate(divide="ignore"):
        return lhi + np.log1p(-np.exp(llo - lhi))


def piecewise_group_log_marginal(y_j, beta_offset, sigma2, lam, tau):
    """Closed-form log-marginal for one group.

    With ``k`` residuals below ``b`` the log-integrand is
    ``const - (c0 + c1 b)/lam - b^2/(2 sigma2)``; completing the square gives a
    Gaussian probability of the segment between consecutive sorted residuals.
    """
    tau = check_tau(tau)
    lam = check_scale(lam)
    r = _residuals(y_j, beta_offset)
    n = r.size
    if n == 0:
        return 0.0
    rs = np.sort(r)
    cs = np.concatenate([[0.0], np.cumsum(rs)])
    k = np.arange(n + 1)
    c0 = tau * (cs[-1] - cs) - (1.0 - tau) * cs
    c1 = -tau * (n - k) + (1.0 - tau) * k
    slope = -c1 / lam
    centre = sigma2 * slope
    sd = math.sqrt(sigma2)
    edges = np.concatenate([[-np.inf], rs, [np.inf]])
    lo = (edges[:-1] - centre) / sd
    hi = (edges[1:] - centre) / sd
    keep = hi > lo
    terms = -c0[keep] / lam + 0.5 * sigma2 * slope[keep] ** 2 + _log_phi_diff(lo[keep], hi[keep])
    return float(n * math.log(tau * (1.0 - tau) / lam) + logsumexp(terms))


def group_log_marginal(method, y_j, beta_offset, sigma2, lam, tau, config=None):
    if method == "piecewise":
        return piecewise_group_log_marginal(y_j, beta_offset, sigma2, lam, tau)
    if method == "agh":
        return agh_group_log_marginal(y_j, beta_offset, sigma2, lam, tau, config)
    if method == "trapezoid":
        return trapezoid_group_log_marginal(y_j, beta_offset, sigma2, lam, tau, config)
    raise ValueError(f"unknown quadrature method {method!r}; choose from {METHODS}")


def per_group_log_marginals(model, y, theta, beta, lam, method="piecewise", config=None):
    latent = model.latent
    if latent.kind != "grouped":
        raise ValueError(
            f"reference marginal likelihood is only available for grouped designs, got {latent.kind!r}"
        )
    if model.alpha != 1.0:
        raise ValueError("reference marginal likelihood assumes an untempered likelihood")
    y = np.asarray(y, dtype=float)
    offset = model.offset(beta)
    sigma2 = float(np.atleast_1d(theta)[0])
    order = np.argsort(latent.group, kind="stable")
    bounds = np.concatenate([[0], np.cumsum(latent.counts.astype(np.int64))])
    out = np.empty(latent.m)
    for j in range(latent.m):
        idx = order[bounds[j] : bounds[j + 1]]
        out[j] = group_log_marginal(method, y[idx], offset[idx], sigma2, lam, model.tau, config)
    return out


def exact_log_marginal(model, y, theta, beta, lam, method="piecewise", config=None):
    """Reference log-marginal of a single-level grouped model (sum over groups)."""
    parts = per_group_log_marginals(model, y, theta, beta, lam, method, config)
    return math.fsum(parts)
