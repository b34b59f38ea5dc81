"""Asymmetric Laplace (AL) likelihood primitives.

The AL density with location ``mu``, scale ``lam`` and quantile level ``tau`` is

    p(y | mu, lam) = tau (1 - tau) / lam * exp(-rho_tau(y - mu) / lam)

where ``rho_tau`` is the pinball (check) loss.  ``mu`` is the tau-quantile of
the distribution.  Everything here works in log space and broadcasts over
numpy arrays.

Score convention: ``ald_score_mu`` returns d/dmu log p, i.e. ``+tau/lam`` for
``y > mu`` and ``(tau - 1)/lam`` for ``y < mu``.  At the kink ``y == mu`` the
subgradient element 0 is returned.
"""

import numpy as np


def check_tau(tau):
    tau = float(tau)
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie in (0, 1), got {tau}")
    return tau


def check_scale(lam):
    lam = float(lam)
    if not lam > 0.0:
        raise ValueError(f"AL scale must be positive, got {lam}")
    return lam


def pinball_loss(y, q, tau):
    """Pinball loss rho_tau(y - q); elementwise, always >= 0."""
    u = np.subtract(y, q)
    # u * (tau - 1{u < 0}); identical values to the two-branch form
    return u * (tau - (u < 0))


def ald_logpdf(y, mu, lam, tau):
    return np.log(tau * (1.0 - tau) / lam) - pinball_loss(y, mu, tau) / lam


def ald_score_mu(y, mu, lam, tau):
    """Derivative of ``ald_logpdf`` with respect to ``mu`` (0 at ties)."""
    u = np.subtract(y, mu)
    return np.where(u > 0, tau / lam, np.where(u < 0, (tau - 1.0) / lam, 0.0))


def ald_fisher_diag(tau, lam):
    """Per-observation Fisher information tau (1 - tau) / lam**2."""
    return tau * (1.0 - tau) / lam**2


def ald_cdf(y, mu, lam, tau):
    u = np.subtract(y, mu)
    lower = tau * np.exp(np.minimum(u, 0.0) * (1.0 - tau) / lam)
    upper = 1.0 - (1.0 - tau) * np.exp(-np.maximum(u, 0.0) * tau / lam)
    return np.where(u <= 0, lower, upper)


def ald_quantile(u, mu, lam, tau):
    """Inverse CDF of the AL distribution."""
    u = np.asarray(u, dtype=float)
    if np.any((u <= 0.0) | (u >= 1.0)):
        raise ValueError("probabilities must lie in the open interval (0, 1)")
    with np.errstate(divide="ignore"):
        left = mu + lam / (1.0 - tau) * np.log(u / tau)
        right = mu - lam / tau * np.log((1.0 - u) / (1.0 - tau))
    return np.where(u < tau, left, right)


def ald_sample(rng, mu, lam, tau, size=None):
    """Draw AL variates by inverse-CDF sampling (one uniform per draw)."""
    u = rng.uniform(size=size)
    # uniform() is on [0, 1); 0 has probability 2**-53 but would map to -inf
    u = np.where(u == 0.0, np.nextafter(0.0, 1.0), u)
    return ald_quantile(u, mu, lam, tau)


def ald_variance(lam, tau):
    """Variance of AL(mu, lam, tau): lam^2 (1 - 2 tau + 2 tau^2) / (tau^2 (1 - tau)^2)."""
    return lam**2 * (1.0 - 2.0 * tau + 2.0 * tau**2) / (tau**2 * (1.0 - tau) ** 2)


def total_loglik(y, mu, lam, tau):
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if y.shape != mu.shape:
        raise ValueError(f"dimension mismatch: y has shape {y.shape}, mu has {mu.shape}")
    if y.size == 0:
        return 0.0
    return y.size * np.log(tau * (1.0 - tau) / lam) - np.sum(pinball_loss(y, mu, tau)) / lam
