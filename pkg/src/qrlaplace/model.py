"""Model container shared by the mode solver, curvature and Laplace layers."""

from dataclasses import dataclass, field

import numpy as np

from .ald import check_tau
from .curvature import TkcConfig


CURVATURE_METHODS = ("fisher", "tkc")


@dataclass(eq=False)
class QuantileModel:
    """Quantile regression latent Gaussian model.

    Parameters
    ----------
    tau : float
        Quantile level in (0, 1).
    latent : GroupedDesign | CrossedDesign | GpDesign
        Latent structure; ``latent.n`` fixes the number of observations.
    X : ndarray, optional
        n x p fixed-effect matrix (already including any intercept column).
        ``None`` means no fixed effects.
    curvature : {"fisher", "tkc"}
        Curvature used in the Laplace determinant and posterior covariance.
    alpha : float
        Tempering rate in (0, 1]; scales the likelihood and its curvature.
    tkc : TkcConfig, optional
        Bandwidth-search settings; the threshold defaults to 0.1 for grouped
        and crossed designs and 10 for GP designs.
    """

    tau: float
    latent: object
    X: np.ndarray = None
    curvature: str = "tkc"
    alpha: float = 1.0
    tkc: TkcConfig = field(default=None)

    def __post_init__(self):
        self.tau = check_tau(self.tau)
        if self.curvature not in CURVATURE_METHODS:
            raise ValueError(f"curvature must be one of {CURVATURE_METHODS}, got {self.curvature!r}")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"tempering rate must lie in (0, 1], got {self.alpha}")
        n = self.latent.n
        if self.X is None:
            self.X = np.zeros((n, 0))
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim != 2 or self.X.shape[0] != n:
            raise ValueError(f"X must have shape ({n}, p), got {self.X.shape}")
        if not np.all(np.isfinite(self.X)):
            raise ValueError("X contains non-finite entries")
        if self.tkc is None:
            self.tkc = TkcConfig(min_drop_threshold=10.0 if self.latent.kind == "gp" else 0.1)

    @property
    def n(self):
        return self.latent.n

    @property
    def p(self):
        return self.X.shape[1]

    @property
    def m(self):
        return self.latent.m

    def offset(self, beta):
        if self.p == 0:
            return np.zeros(self.n)
        beta = np.asarray(beta, dtype=float)
        if beta.shape != (self.p,):
            raise ValueError(f"beta must have length {self.p}, got shape {beta.shape}")
        return self.X @ beta

    def take(self, idx):
        """Model restricted to a subset of observations (same hyperparameters)."""
        return QuantileModel(
            self.tau, self.latent.take(idx), self.X[idx], self.curvature, self.alpha, self.tkc
        )

    def with_curvature(self, method):
        return QuantileModel(self.tau, self.latent, self.X, method, self.alpha, self.tkc)
