"""Latent designs, prior covariances and posterior precision factorizations.

Three latent structures are supported:

* ``GroupedDesign``  single grouping factor, ``b ~ N(0, sigma2 I_m)``
* ``CrossedDesign``  two crossed factors with one variance each
* ``GpDesign``       a Gaussian process on input coordinates (``Z = I``)

Grouped and crossed designs are stored as index arrays; ``Z`` is never
materialized.  Every design exposes the same small interface used by the mode
solver and the Laplace approximation:

``gather(b)``      Z b
``scatter(v)``     Z^T v
``ztdz(d)``        Z^T diag(d) Z as a scipy.sparse matrix
``prior(theta)``   factorized prior covariance K_theta
``take(idx)``      the design restricted to a subset of observations

Since the curvature matrices used here are always a scalar multiple of
``Z^T Z``, the posterior precision ``K^-1 + c Z^T Z`` is produced by
``prior.posterior(c)``.

Matérn-1.5 convention: ``k(r) = s2 (1 + sqrt(3) r / l) exp(-sqrt(3) r / l)``
with ``r`` the Euclidean distance.  Length-scale estimates depend on this
parameterization.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sps
from scipy.spatial.distance import cdist

LOG_2PI = np.log(2.0 * np.pi)

JITTER_START = 1e-10
JITTER_MAX = 1e-4


class SingularCovarianceError(np.linalg.LinAlgError):
    pass


def make_fixed_design(n, X=None, intercept=True):
    """Return the n x p fixed-effect matrix, prepending an intercept column if asked."""
    cols = []
    if intercept:
        cols.append(np.ones((n, 1)))
    if X is not None:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.shape[0] != n:
            raise ValueError(f"X has {X.shape[0]} rows, expected {n}")
        cols.append(X)
    if not cols:
        return np.zeros((n, 0))
    X = np.hstack(cols)
    if not np.all(np.isfinite(X)):
        raise ValueError("fixed-effect design contains non-finite entries")
    return X


def matern15(coords, sigma2, lengthscale, coords2=None):
    """Matérn-1.5 covariance between rows of ``coords`` (and ``coords2``)."""
    coords = np.atleast_2d(np.asarray(coords, dtype=float))
    other = coords if coords2 is None else np.atleast_2d(np.asarray(coords2, dtype=float))
    r = cdist(coords, other) * (np.sqrt(3.0) / lengthscale)
    return sigma2 * (1.0 + r) * np.exp(-r)


def _woodbury_solver(design, sigma, make_precision):
    """(Z K Z^T + S)^-1 = S^-1 - S^-1 Z (K^-1 + Z^T S^-1 Z)^-1 Z^T S^-1."""
    w = 1.0 / sigma
    post = make_precision(w)

    def solve(v):
        sv = w * v
        return sv - w * design.gather(post.solve(design.scatter(sv)))

    return solve


# --------------------------------------------------------------------------
# Grouped
# --------------------------------------------------------------------------


class GroupedPrior:
    """b ~ N(0, sigma2 I_m) attached to a grouped design."""

    def __init__(self, design, sigma2):
        self.design = design
        self.sigma2 = float(sigma2)
        self.m = design.m
        self.logdet = self.m * np.log(self.sigma2)

    def apply_inv(self, b):
        return np.asarray(b) / self.sigma2

    def apply_cov(self, v):
        return self.sigma2 * np.asarray(v)

    def q_block(self, idx):
        """Z_idx K Z_idx^T as a dense matrix."""
        g = self.design.group[idx]
        return self.sigma2 * (g[:, None] == g[None, :])

    def logdensity(self, b):
        b = np.asarray(b, dtype=float)
        return -0.5 * (b @ b) / self.sigma2 - 0.5 * self.logdet - 0.5 * self.m * LOG_2PI

    def variance_diag(self):
        return np.full(self.m, self.sigma2)

    def posterior(self, c):
        return DiagonalPosterior(c * self.design.counts, self.sigma2)

    def dual_solver(self, sigma):
        """Return v -> (Z K Z^T + diag(sigma))^-1 v."""
        return _woodbury_solver(self.design, sigma, lambda w: DiagonalPosterior(self.design.scatter(w), self.sigma2))


class DiagonalPosterior:
    """Diagonal posterior precision 1/sigma2 + w_j, with w_j the curvature mass of group j."""

    separable = True

    def __init__(self, w, sigma2):
        w = np.asarray(w, dtype=float)
        self.diag = 1.0 / sigma2 + w
        self.sigma2 = sigma2
        self.m = w.size
        self.logdet = float(np.sum(np.log(self.diag)))
        # log det(K P) = sum log(1 + sigma2 w_j); exactly 0 for groups without data
        self.logdet_kp = float(np.sum(np.log1p(sigma2 * w)))

    def solve(self, v):
        return np.asarray(v) / self.diag

    def newton(self, b, a, grad_lik):
        b_new = b + (grad_lik - a) / self.diag
        return b_new, b_new / self.sigma2

    def column(self, k):
        col = np.zeros(self.m)
        col[k] = 1.0 / self.diag[k]
        return col

    def covariance_diag(self):
        return 1.0 / self.diag

    def dense_covariance(self):
        return np.diag(1.0 / self.diag)

    def to_dense(self):
        return np.diag(self.diag)


@dataclass(frozen=True, eq=False)
class GroupedDesign:
    group: np.ndarray
    m: int
    kind = "grouped"
    theta_names = ("sigma2",)
    counts: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        g = np.asarray(self.group)
        if g.ndim != 1 or not np.issubdtype(g.dtype, np.integer):
            raise ValueError("group index must be a 1-d integer array")
        if g.size and (g.min() < 0 or g.max() >= self.m):
            raise ValueError(f"group ids must lie in [0, {self.m})")
        object.__setattr__(self, "group", g)
        object.__setattr__(self, "counts", np.bincount(g, minlength=self.m).astype(float))

    @classmethod
    def from_labels(cls, labels):
        levels, idx = np.unique(np.asarray(labels), return_inverse=True)
        return cls(idx.astype(np.int64), levels.size), levels

    @property
    def n(self):
        return self.group.size

    @property
    def n_theta(self):
        return 1

    def gather(self, b):
        return np.asarray(b)[self.group]

    def scatter(self, v):
        return np.bincount(self.group, weights=np.broadcast_to(v, (self.n,)), minlength=self.m)

    def ztdz(self, d):
        return sps.diags(self.scatter(d)).tocsr()

    def dense_z(self):
        Z = np.zeros((self.n, self.m))
        Z[np.arange(self.n), self.group] = 1.0
        return Z

    def prior(self, theta):
        return GroupedPrior(self, np.atleast_1d(theta)[0])

    def take(self, idx):
        return GroupedDesign(self.group[idx], self.m)

    def default_theta(self, y):
        return np.array([max(np.var(y) / 2.0, 1e-8)])


# --------------------------------------------------------------------------
# Crossed
# --------------------------------------------------------------------------


class CrossedPrior:
    def __init__(self, design, sigma2_1, sigma2_2):
        self.design = design
        self.sigma2 = (float(sigma2_1), float(sigma2_2))
        self.m = design.m
        self._var = np.concatenate(
            [np.full(design.m1, self.sigma2[0]), np.full(design.m2, self.sigma2[1])]
        )
        self.logdet = float(np.sum(np.log(self._var)))

    def apply_inv(self, b):
        return np.asarray(b) / self._var

    def apply_cov(self, v):
        return self._var * np.asarray(v)

    def q_block(self, idx):
        g1 = self.design.group1[idx]
        g2 = self.design.group2[idx]
        s1, s2 = self.sigma2
        return s1 * (g1[:, None] == g1[None, :]) + s2 * (g2[:, None] == g2[None, :])

    def logdensity(self, b):
        b = np.asarray(b, dtype=float)
        return -0.5 * np.sum(b * b / self._var) - 0.5 * self.logdet - 0.5 * self.m * LOG_2PI

    def variance_diag(self):
        return self._var.copy()

    def posterior(self, c):
        return CrossedPosterior(self.design, self._var, c)

    def dual_solver(self, sigma):
        return _woodbury_solver(self.design, sigma, lambda w: CrossedPosterior(self.design, self._var, w))


class CrossedPosterior:
    """Precision [[D1, C], [C^T, D2]] factorized by eliminating the larger factor.

    With ``D_big`` diagonal, the Schur complement on the smaller factor is a
    dense ``m_small x m_small`` matrix.  The co-occurrence block ``C`` is held
    dense (``m1 x m2``), which is cheaper than sparse products at the sizes
    where the dense Schur complement is affordable anyway.
    """

    separable = False

    def __init__(self, design, var, c):
        # c: scalar curvature, or per-observation weights (length n)
        self.m = design.m
        self._var = var
        m1, m2 = design.m1, design.m2
        if np.ndim(c) == 0:
            d = 1.0 / var + c * np.concatenate([design.counts1, design.counts2])
            cross = c * design.dense_cooccurrence()
        else:
            d = 1.0 / var + design.scatter(c)
            cross = design.dense_cooccurrence(c)
        self.diag_precision = d
        if m1 >= m2:
            self._big = np.arange(m1)
            self._small = m1 + np.arange(m2)
            C = cross  # big x small
        else:
            self._big = m1 + np.arange(m2)
            self._small = np.arange(m1)
            C = np.ascontiguousarray(cross.T)
        self._dbig = d[self._big]
        self._C = C
        Cd = C / self._dbig[:, None]
        S = C.T @ Cd
        np.negative(S, out=S)
        S[np.diag_indices_from(S)] += d[self._small]
        self._Cd = Cd
        try:
            self._chol = sla.cho_factor(S, lower=True, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise SingularCovarianceError("crossed posterior precision not positive definite") from exc
        self.logdet = float(np.sum(np.log(self._dbig)) + 2.0 * np.sum(np.log(np.diag(self._chol[0]))))
        self.logdet_kp = self.logdet + float(np.sum(np.log(var)))

    def solve(self, v):
        v = np.asarray(v, dtype=float)
        vb, vs = v[self._big], v[self._small]
        xs = sla.cho_solve(self._chol, vs - self._Cd.T @ vb, check_finite=False)
        xb = (vb - self._C @ xs) / self._dbig
        out = np.empty_like(v)
        out[self._big] = xb
        out[self._small] = xs
        return out

    def newton(self, b, a, grad_lik):
        b_new = b + self.solve(grad_lik - a)
        return b_new, b_new / self._var

    def column(self, k):
        e = np.zeros(self.m)
        e[k] = 1.0
        return self.solve(e)

    def dense_covariance(self):
        return np.column_stack([self.column(k) for k in range(self.m)])

    def covariance_diag(self):
        return np.diag(self.dense_covariance())

    def to_dense(self):
        P = np.diag(self.diag_precision)
        C = self._C
        P[np.ix_(self._big, self._small)] = C
        P[np.ix_(self._small, self._big)] = C.T
        return P


@dataclass(frozen=True, eq=False)
class CrossedDesign:
    group1: np.ndarray
    group2: np.ndarray
    m1: int
    m2: int
    kind = "crossed"
    theta_names = ("sigma2_1", "sigma2_2")
    counts1: np.ndarray = field(init=False, repr=False)
    counts2: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        g1 = np.asarray(self.group1)
        g2 = np.asarray(self.group2)
        if g1.shape != g2.shape or g1.ndim != 1:
            raise ValueError("both factors must index the same observations")
        for g, m in ((g1, self.m1), (g2, self.m2)):
            if not np.issubdtype(g.dtype, np.integer):
                raise ValueError("factor indices must be integers")
            if g.size and (g.min() < 0 or g.max() >= m):
                raise ValueError(f"factor ids must lie in [0, {m})")
        object.__setattr__(self, "group1", g1)
        object.__setattr__(self, "group2", g2)
        object.__setattr__(self, "counts1", np.bincount(g1, minlength=self.m1).astype(float))
        object.__setattr__(self, "counts2", np.bincount(g2, minlength=self.m2).astype(float))

    @property
    def n(self):
        return self.group1.size

    @property
    def m(self):
        return self.m1 + self.m2

    @property
    def n_theta(self):
        return 2

    def gather(self, b):
        b = np.asarray(b)
        return b[: self.m1][self.group1] + b[self.m1 :][self.group2]

    def scatter(self, v):
        v = np.broadcast_to(v, (self.n,))
        return np.concatenate(
            [
                np.bincount(self.group1, weights=v, minlength=self.m1),
                np.bincount(self.group2, weights=v, minlength=self.m2),
            ]
        )

    def cooccurrence(self, d=None):
        w = np.ones(self.n) if d is None else np.broadcast_to(d, (self.n,))
        return sps.coo_matrix((w, (self.group1, self.group2)), shape=(self.m1, self.m2)).tocsr()

    def dense_cooccurrence(self, d=None):
        """m1 x m2 array of summed weights over observations at each level pair."""
        w = None if d is None else np.broadcast_to(np.asarray(d, dtype=float), (self.n,))
        flat = np.bincount(self.group1 * self.m2 + self.group2, weights=w, minlength=self.m1 * self.m2)
        return flat.astype(float).reshape(self.m1, self.m2)

    def ztdz(self, d):
        d = np.broadcast_to(np.asarray(d, dtype=float), (self.n,))
        n12 = self.cooccurrence(d)
        D1 = sps.diags(np.bincount(self.group1, weights=d, minlength=self.m1))
        D2 = sps.diags(np.bincount(self.group2, weights=d, minlength=self.m2))
        return sps.bmat([[D1, n12], [n12.T, D2]]).tocsr()

    def dense_z(self):
        Z = np.zeros((self.n, self.m))
        rows = np.arange(self.n)
        Z[rows, self.group1] = 1.0
        Z[rows, self.m1 + self.group2] = 1.0
        return Z

    def prior(self, theta):
        theta = np.atleast_1d(theta)
        return CrossedPrior(self, theta[0], theta[1])

    def take(self, idx):
        return CrossedDesign(self.group1[idx], self.group2[idx], self.m1, self.m2)

    def default_theta(self, y):
        v = max(np.var(y) / 2.0, 1e-8)
        return np.array([v, v])


# --------------------------------------------------------------------------
# Gaussian process
# --------------------------------------------------------------------------


def jittered_cholesky(K, scale):
    """Cholesky of K + eps I with eps from 1e-10*scale growing x10 up to 1e-4*scale."""
    n = K.shape[0]
    eps = JITTER_START * scale
    while eps <= JITTER_MAX * scale * (1 + 1e-12):
        try:
            L = np.linalg.cholesky(K + eps * np.eye(n))
            return L, eps
        except np.linalg.LinAlgError:
            eps *= 10.0
    raise SingularCovarianceError(
        f"covariance not positive definite even with jitter {JITTER_MAX * scale:g}"
    )


class GpPrior:
    """Matérn-1.5 GP prior, factorized by a symmetric eigendecomposition.

    The eigenbasis turns every posterior precision ``K^-1 + c I`` into a
    diagonal operation, so one decomposition serves every curvature value and
    every AL scale at fixed ``theta``.  Decompositions of the unit-variance
    kernel are cached per length scale on the design; the signal variance only
    rescales the eigenvalues.
    """

    def __init__(self, design, sigma2, lengthscale):
        self.design = design
        self.sigma2 = float(sigma2)
        self.lengthscale = float(lengthscale)
        if not (self.sigma2 > 0 and self.lengthscale > 0):
            raise ValueError("GP hyperparameters must be positive")
        self.m = design.n
        K1, jitter1, evals1, evecs = design._unit_factor(self.lengthscale)
        self._K1 = K1
        self.jitter = jitter1 * self.sigma2
        self.evals = self.sigma2 * evals1
        self.evecs = evecs
        self.logdet = float(np.sum(np.log(self.evals)))

    @property
    def K(self):
        return self.sigma2 * self._K1

    def apply_cov(self, v):
        return self.sigma2 * (self._K1 @ v)

    def q_block(self, idx):
        return self.sigma2 * self._K1[np.ix_(idx, idx)]

    def _apply(self, v, f):
        U = self.evecs
        return U @ (f * (U.T @ v))

    def apply_inv(self, b):
        return self._apply(np.asarray(b, dtype=float), 1.0 / self.evals)

    def logdensity(self, b):
        b = np.asarray(b, dtype=float)
        return -0.5 * b @ self.apply_inv(b) - 0.5 * self.logdet - 0.5 * self.m * LOG_2PI

    def variance_diag(self):
        return np.diag(self.K).copy()

    def posterior(self, c):
        return GpPosterior(self, c)

    def dual_solver(self, sigma):
        A = self.K
        A[np.diag_indices_from(A)] += sigma
        cf = sla.cho_factor(A, lower=True, overwrite_a=True)
        return lambda v: sla.cho_solve(cf, v)


class GpPosterior:
    separable = False

    def __init__(self, prior, c):
        self.prior = prior
        self.c = float(c)
        self.m = prior.m
        ev = prior.evals
        self._cov = ev / (1.0 + self.c * ev)  # eigenvalues of (K^-1 + cI)^-1
        self.logdet = float(np.sum(np.log1p(self.c * ev) - np.log(ev)))
        self.logdet_kp = float(np.sum(np.log1p(self.c * ev)))

    def solve(self, v):
        return self.prior._apply(np.asarray(v, dtype=float), self._cov)

    def newton(self, b, a, grad_lik):
        # b_new = (K^-1 + cI)^-1 (c b + g), expressed without forming K^-1
        rhs = self.c * b + grad_lik
        U = self.prior.evecs
        t = U.T @ rhs
        a_new = U @ (t / (1.0 + self.c * self.prior.evals))
        b_new = U @ (t * self._cov)
        return b_new, a_new

    def column(self, k):
        e = np.zeros(self.m)
        e[k] = 1.0
        return self.solve(e)

    def covariance_diag(self):
        U = self.prior.evecs
        return np.einsum("ij,j,ij->i", U, self._cov, U)

    def dense_covariance(self):
        U = self.prior.evecs
        return (U * self._cov) @ U.T

    def to_dense(self):
        U = self.prior.evecs
        return (U * (1.0 / self.prior.evals + self.c)) @ U.T


@dataclass(frozen=True, eq=False)
class GpDesign:
    coords: np.ndarray
    kernel: str = "matern15"
    kind = "gp"
    theta_names = ("sigma2", "lengthscale")

    def __post_init__(self):
        X = np.asarray(self.coords, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2 or X.shape[1] < 1:
            raise ValueError("coords must be an n x d matrix with d >= 1")
        if self.kernel != "matern15":
            raise ValueError(f"unknown kernel {self.kernel!r}")
        object.__setattr__(self, "coords", X)

    @property
    def n(self):
        return self.coords.shape[0]

    @property
    def m(self):
        return self.n

    @property
    def d(self):
        return self.coords.shape[1]

    @property
    def n_theta(self):
        return 2

    @property
    def counts(self):
        return np.ones(self.n)

    def gather(self, b):
        return np.asarray(b)

    def scatter(self, v):
        return np.array(np.broadcast_to(v, (self.n,)), dtype=float)

    def ztdz(self, d):
        return sps.diags(self.scatter(d)).tocsr()

    def dense_z(self):
        return np.eye(self.n)

    def prior(self, theta):
        theta = np.atleast_1d(theta)
        return GpPrior(self, theta[0], theta[1])

    def _unit_factor(self, lengthscale):
        cache = self.__dict__.setdefault("_cache", {})
        key = float(lengthscale)
        if key not in cache:
            K = matern15(self.coords, 1.0, key)
            _, jitter = jittered_cholesky(K, 1.0)
            K[np.diag_indices_from(K)] += jitter
            evals, evecs = np.linalg.eigh(K)
            evals = np.maximum(evals, jitter * 1e-3)
            if len(cache) >= 8:
                cache.pop(next(iter(cache)))
            cache[key] = (K, jitter, evals, evecs)
        return cache[key]

    def cross_cov(self, new_coords, theta):
        theta = np.atleast_1d(theta)
        return matern15(new_coords, theta[0], theta[1], self.coords)

    def take(self, idx):
        return GpDesign(self.coords[idx], self.kernel)

    def default_theta(self, y):
        span = np.ptp(self.coords, axis=0).max() if self.n > 1 else 1.0
        return np.array([max(np.var(y) / 2.0, 1e-8), 0.2 * max(span, 1e-8)])


def prior_logdensity(b, latent, theta):
    return latent.prior(theta).logdensity(b)


def linear_predictor(X, beta, latent, b):
    """mu = X beta + Z b."""
    b = np.asarray(b, dtype=float)
    if b.shape != (latent.m,):
        raise ValueError(f"latent vector has shape {b.shape}, expected ({latent.m},)")
    mu = latent.gather(b).astype(float)
    if X is not None and X.shape[1] > 0:
        beta = np.asarray(beta, dtype=float)
        if X.shape != (latent.n, beta.size):
            raise ValueError(f"X has shape {X.shape}, beta has length {beta.size}")
        mu = mu + X @ beta
    return mu


def ztdz(latent, d):
    d = np.asarray(d, dtype=float)
    if d.ndim and d.shape != (latent.n,):
        raise ValueError(f"diag has shape {d.shape}, expected ({latent.n},)")
    if np.any(d < 0):
        raise ValueError("diag entries must be nonnegative")
    return latent.ztdz(d)
