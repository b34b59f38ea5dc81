"""Curvature replacements for the (almost everywhere zero) AL Hessian.

All curvatures here are scalars ``c`` applied per observation, so the
curvature matrix is ``W = c Z^T Z``.

* Fisher: ``c = tau (1 - tau) / lam^2``.
* TKC: symmetric second difference of the total log-likelihood,
  ``c = (DLL_U + DLL_L) / (n delta^2)``, where ``DLL_U`` and ``DLL_L`` are the
  log-likelihood drops from shifting every fitted value by ``+delta`` and
  ``-delta``.  Because the second difference of the pinball loss is the tent
  ``(h - |z|)_+``, this equals a triangular-kernel density estimate of the
  residuals at zero divided by ``lam``.
* Population: ``f(mu) / lam`` from a known noise density (test oracle only).
"""

from dataclasses import dataclass

import numpy as np

from .ald import check_scale, check_tau, pinball_loss, total_loglik


class DegenerateCurvatureError(ValueError):
    """Raised when a curvature estimate is not strictly positive."""


@dataclass(frozen=True)
class TkcConfig:
    """Bandwidth search settings.

    Candidates are ``scale * base**k`` for ``k`` in ``[k_min, k_max]`` where
    ``scale`` is the median absolute residual at the mode.
    """

    min_drop_threshold: float = 0.1
    grid_base: float = 2.0
    k_min: int = -8
    k_max: int = 8
    fit_points: tuple = (-1.0, -0.5, 0.5, 1.0)

    def __post_init__(self):
        if not self.min_drop_threshold > 0:
            raise ValueError("min_drop_threshold must be positive")
        if self.k_max < self.k_min:
            raise ValueError("empty bandwidth grid")
        if not self.grid_base > 1:
            raise ValueError("grid_base must exceed 1")


@dataclass(frozen=True)
class CurvatureEstimate:
    method: str
    c: float
    delta_mu: float = None
    r_squared: float = None
    below_threshold: bool = False
    fallback: bool = False

    def as_dict(self):
        return {
            "method": self.method,
            "c": self.c,
            "delta_mu": self.delta_mu,
            "r_squared": self.r_squared,
            "below_threshold": self.below_threshold,
            "fallback": self.fallback,
        }


def fisher_curvature(tau, lam):
    tau = check_tau(tau)
    lam = check_scale(lam)
    return CurvatureEstimate("fisher", tau * (1.0 - tau) / lam**2)


def _resid(y, mu_hat):
    y = np.asarray(y, dtype=float)
    mu_hat = np.asarray(mu_hat, dtype=float)
    if y.shape != np.broadcast_shapes(y.shape, mu_hat.shape):
        raise ValueError(f"dimension mismatch: y {y.shape}, mu_hat {mu_hat.shape}")
    if mu_hat.ndim and mu_hat.shape != y.shape:
        raise ValueError(f"dimension mismatch: y {y.shape}, mu_hat {mu_hat.shape}")
    return y - mu_hat


def dll(y, mu_hat, delta, lam, tau):
    """Log-likelihood drops for shifting every fitted value by +delta and -delta."""
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    y = np.asarray(y, dtype=float)
    mu_hat = np.broadcast_to(np.asarray(mu_hat, dtype=float), y.shape)
    _resid(y, mu_hat)
    base = total_loglik(y, mu_hat, lam, tau)
    upper = base - total_loglik(y, mu_hat + delta, lam, tau)
    lower = base - total_loglik(y, mu_hat - delta, lam, tau)
    return upper, lower


class _SortedResiduals:
    """Log-likelihood drops for many shifts from one sort of the residuals.

    For a shift d > 0 the loss increase is
    ``d (n_neg - tau n) + sum_{0 <= r < d} (d - r)`` and for a shift -e < 0 it
    is ``e (tau n - n_neg) + sum_{-e <= r < 0} (e + r)``.  Partial sums are
    accumulated outward from zero, so only residuals inside the shift are
    ever added and no large totals cancel.
    """

    def __init__(self, r, tau):
        r = np.asarray(r, dtype=float).ravel()
        self.n = r.size
        self.tau = tau
        self.pos = np.sort(r[r >= 0])
        self.neg = np.sort(-r[r < 0])
        self.n_neg = self.neg.size
        self.cpos = np.concatenate([[0.0], np.cumsum(self.pos)])
        self.cneg = np.concatenate([[0.0], np.cumsum(self.neg)])

    def local(self, e):
        """(sum_{0<=r<e} (e - r), sum_{-e<=r<0} (e + r)) for e > 0."""
        kp = np.searchsorted(self.pos, e, side="left")
        kn = np.searchsorted(self.neg, e, side="right")
        return e * kp - self.cpos[kp], e * kn - self.cneg[kn]

    def drops(self, shifts, lam):
        shifts = np.asarray(shifts, dtype=float)
        e = np.abs(shifts)
        lp, ln = self.local(e)
        lin = e * (self.n_neg - self.tau * self.n)
        return np.where(shifts >= 0, lin + lp, -lin + ln) / lam


def _drops(r, deltas, lam, tau):
    """Loss increases sum(rho(r - d) - rho(r)) / lam for every shift d."""
    return _SortedResiduals(r, tau).drops(deltas, lam)


def tkc_estimate(y, mu_hat, delta, lam, tau, n=None):
    """TKC curvature from the symmetric second difference at bandwidth ``delta``."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    lam = check_scale(lam)
    tau = check_tau(tau)
    r = _resid(y, mu_hat).ravel()
    n = r.size if n is None else n
    if n == 0:
        raise DegenerateCurvatureError("no observations")
    # DLL_U + DLL_L summed observation by observation, so the opposite-sign
    # linear parts cancel term-wise rather than between two large totals
    second = pinball_loss(r, delta, tau) + pinball_loss(r, -delta, tau) - 2.0 * pinball_loss(r, 0.0, tau)
    # outside the bandwidth the exact value is 0; drop the rounding residue
    second = np.where(np.abs(r) < delta, second, 0.0)
    c = np.sum(second) / (lam * n * delta**2)
    if not c > 0:
        raise DegenerateCurvatureError(f"all residuals lie outside the bandwidth {delta:g}")
    return CurvatureEstimate("tkc", float(c), delta_mu=float(delta))


def tkc_kde_form(y, mu_hat, h, lam):
    """Triangular-kernel density estimate of the residuals at zero, over lam."""
    if not h > 0:
        raise ValueError("h must be positive")
    lam = check_scale(lam)
    r = _resid(y, mu_hat).ravel()
    if r.size == 0:
        raise DegenerateCurvatureError("no observations")
    w = np.maximum(h - np.abs(r), 0.0)
    c = np.sum(w) / (r.size * lam * h * h)
    if not c > 0:
        raise DegenerateCurvatureError(f"all residuals lie outside the bandwidth {h:g}")
    return CurvatureEstimate("tkc", float(c), delta_mu=float(h))


def candidate_grid(residuals, config):
    r = np.abs(np.asarray(residuals, dtype=float))
    s = float(np.median(r)) if r.size else 0.0
    if not s > 0:
        # many exact ties at the mode (e.g. tiny groups); use the mean instead
        s = float(np.mean(r)) if r.size and np.mean(r) > 0 else 1.0
    ks = np.arange(config.k_min, config.k_max + 1)
    return s * config.grid_base ** ks.astype(float)


def _r_squared(truth, model):
    ss_tot = np.sum((truth - truth.mean()) ** 2)
    if not ss_tot > 0:
        return -np.inf
    return 1.0 - np.sum((truth - model) ** 2) / ss_tot


def bandwidth_table(y, mu_hat, lam, tau, config, candidates=None):
    """Evaluate every candidate bandwidth.

    Returns
    -------
    dict of arrays: ``delta``, ``dll_upper``, ``dll_lower``, ``c``, ``r_squared``.
    """
    lam = check_scale(lam)
    tau = check_tau(tau)
    r = _resid(y, mu_hat).ravel()
    n = r.size
    if n == 0:
        raise DegenerateCurvatureError("no observations")
    if candidates is None:
        candidates = candidate_grid(r, config)
    candidates = np.asarray(candidates, dtype=float)
    if candidates.size == 0:
        raise ValueError("empty bandwidth grid")
    probes = np.asarray(config.fit_points, dtype=float)
    sr = _SortedResiduals(r, tau)
    out = {k: np.empty(candidates.size) for k in ("dll_upper", "dll_lower", "c", "r_squared")}
    for i, delta in enumerate(candidates):
        d = sr.drops(np.concatenate([[delta, -delta], probes * delta]), lam)
        up, lo = d[0], d[1]
        # curvature from the local sums directly (no cancellation)
        c = float(np.sum(sr.local(delta))) / (lam * n * delta**2)
        # log-likelihood relative to the centre is -drop; quadratic is -n c x^2 / 2
        truth = -d[2:]
        quad = -0.5 * n * c * (probes * delta) ** 2
        out["dll_upper"][i] = up
        out["dll_lower"][i] = lo
        out["c"][i] = c
        out["r_squared"][i] = _r_squared(truth, quad)
    out["delta"] = candidates
    return out


def select_bandwidth(y, mu_hat, lam, tau, config=None, candidates=None):
    """Pick the admissible bandwidth whose quadratic best matches the log-likelihood.

    Returns
    -------
    delta : float
    r_squared : float
    below_threshold : bool
        True when no candidate met the minimum drop; the largest candidate is
        returned in that case.
    """
    config = config or TkcConfig()
    tab = bandwidth_table(y, mu_hat, lam, tau, config, candidates)
    admissible = np.minimum(tab["dll_upper"], tab["dll_lower"]) >= config.min_drop_threshold
    if not admissible.any():
        k = int(np.argmax(tab["delta"]))
        return float(tab["delta"][k]), float(tab["r_squared"][k]), True
    r2 = np.where(admissible, tab["r_squared"], -np.inf)
    best = r2.max()
    # smallest delta among ties
    tied = np.flatnonzero(r2 == best)
    k = tied[np.argmin(tab["delta"][tied])]
    return float(tab["delta"][k]), float(tab["r_squared"][k]), False


def tkc_curvature(y, mu_hat, lam, tau, config=None):
    """Bandwidth search followed by the TKC estimate at the chosen bandwidth."""
    config = config or TkcConfig()
    delta, r2, below = select_bandwidth(y, mu_hat, lam, tau, config)
    est = tkc_estimate(y, mu_hat, delta, lam, tau)
    return CurvatureEstimate("tkc", est.c, delta_mu=delta, r_squared=r2, below_threshold=below)


def population_curvature(density_at_quantile, lam):
    f = np.asarray(density_at_quantile, dtype=float)
    lam = check_scale(lam)
    if np.any(f <= 0):
        raise DegenerateCurvatureError("densities must be positive")
    return f / lam
