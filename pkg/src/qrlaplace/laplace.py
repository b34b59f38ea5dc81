"""Laplace-approximated marginal likelihood, empirical-Bayes fitting and prediction.

With curvature ``c`` (Fisher or TKC), tempering rate ``alpha`` and posterior
mode ``b``:

    log p(y) ~ alpha log p(y | b) + log pi(b) - 1/2 log det(K^-1 + alpha c Z^T Z)
               + m/2 log(2 pi)
             = alpha log p(y | b) - 1/2 b' K^-1 b - 1/2 log det(I + alpha c K Z^T Z)

The second form is what is evaluated; it avoids forming ``log det K`` and
``log det(K^-1 + W)`` separately.
"""

import time
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .ald import check_scale, pinball_loss, total_loglik
from .curvature import CurvatureEstimate, DegenerateCurvatureError, fisher_curvature, tkc_curvature
from .mode import ModeConfig, ModeNotConvergedError, find_mode

SCHEMA_VERSION = 1


class FitError(RuntimeError):
    """Raised when the objective cannot be evaluated at the initial values."""


@dataclass
class PosteriorApprox:
    b_hat: np.ndarray
    a_hat: np.ndarray
    mu_hat: np.ndarray
    precision: object
    log_marginal: float
    curvature: CurvatureEstimate
    mode: object
    prior: object
    warnings: list = field(default_factory=list)

    @property
    def m(self):
        return self.b_hat.size


@dataclass(frozen=True)
class FitConfig:
    max_iter: int = 200
    ftol: float = 1e-8
    gtol: float = 1e-5
    n_restarts: int = 3
    restart_jitter: float = 0.5
    fd_step: float = 1e-5
    # The TKC bandwidth is chosen from a discrete grid, so the objective is only
    # piecewise smooth and FD gradients stay noisy at the optimum.  Stop once
    # `patience` consecutive objective-and-gradient evaluations have failed to
    # raise the best value by stall_tol.
    patience: int = 5
    stall_tol: float = 1e-2
    log_bound: float = 15.0
    seed: int = 0
    fixed_lambda: float = None
    mode: ModeConfig = field(default_factory=ModeConfig)


@dataclass
class FitResult:
    model: object
    y: np.ndarray
    theta_hat: np.ndarray
    beta_hat: np.ndarray
    lambda_hat: float
    posterior: PosteriorApprox
    trace: list
    converged: bool
    message: str = ""
    n_evals: int = 0
    restarts: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def log_marginal(self):
        return self.posterior.log_marginal

    def theta_dict(self):
        return dict(zip(self.model.latent.theta_names, map(float, self.theta_hat)))

    def to_dict(self):
        c = self.posterior.curvature
        return {
            "schema_version": SCHEMA_VERSION,
            "design": self.model.latent.kind,
            "tau": self.model.tau,
            "curvature_method": self.model.curvature,
            "alpha": self.model.alpha,
            "theta_hat": self.theta_dict(),
            "beta_hat": [float(v) for v in self.beta_hat],
            "lambda_hat": float(self.lambda_hat),
            "log_marginal": float(self.log_marginal),
            "curvature": c.as_dict(),
            "trace": [float(v) for v in self.trace],
            "converged": bool(self.converged),
            "message": self.message,
            "n_evals": int(self.n_evals),
            "restarts": [float(v) for v in self.restarts],
            "warnings": list(self.warnings),
            "wall_time_s": float(self.wall_time),
        }


def _curvature(model, y, mu_hat, lam):
    notes = []
    if model.curvature == "fisher":
        return fisher_curvature(model.tau, lam), notes
    try:
        est = tkc_curvature(y, mu_hat, lam, model.tau, model.tkc)
    except DegenerateCurvatureError as exc:
        notes.append(f"TKC degenerate ({exc}); Fisher curvature used")
        fb = fisher_curvature(model.tau, lam)
        return CurvatureEstimate("fisher", fb.c, fallback=True), notes
    if est.below_threshold:
        notes.append("no TKC bandwidth met the drop threshold; Fisher curvature used")
        fb = fisher_curvature(model.tau, lam)
        return CurvatureEstimate("fisher", fb.c, est.delta_mu, est.r_squared, True, True), notes
    return est, notes


def laplace_log_marginal(model, y, theta, beta, lam, start=None, prior=None, mode_config=None):
    """Laplace log-marginal likelihood at (theta, beta, lam).

    Returns
    -------
    value : float
    posterior : PosteriorApprox
    """
    lam = check_scale(lam)
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if np.any(theta <= 0):
        raise ValueError("covariance parameters must be positive")
    y = np.asarray(y, dtype=float)
    if y.shape != (model.n,):
        raise ValueError(f"y has shape {y.shape}, expected ({model.n},)")
    prior = prior if prior is not None else model.latent.prior(theta)
    mode = find_mode(model, y, theta, beta, lam, start=start, config=mode_config, prior=prior)
    curv, notes = _curvature(model, y, mode.mu_hat, lam)
    precision = prior.posterior(model.alpha * curv.c)
    ll = total_loglik(y, mode.mu_hat, lam, model.tau)
    value = model.alpha * ll - 0.5 * float(mode.b_hat @ mode.a_hat) - 0.5 * precision.logdet_kp
    post = PosteriorApprox(
        mode.b_hat, mode.a_hat, mode.mu_hat, precision, float(value), curv, mode, prior, notes
    )
    return float(value), post


def posterior_covariance_column(posterior, k):
    if not 0 <= k < posterior.m:
        raise IndexError(f"column {k} outside [0, {posterior.m})")
    return posterior.precision.column(k)


# --------------------------------------------------------------------------
# fitting
# --------------------------------------------------------------------------


def _intercept_column(X):
    for j in range(X.shape[1]):
        if np.all(X[:, j] == 1.0):
            return j
    return None


def initial_values(model, y):
    """Default starting point (theta, beta, lam).

    ``beta`` is the least-squares fit with the intercept moved to the
    tau-quantile of the residuals.  ``lam`` is the mean pinball loss of the
    resulting residuals: under the AL model rho(eps)/lam is standard
    exponential, so that mean estimates lam directly.
    """
    y = np.asarray(y, dtype=float)
    tau = model.tau
    theta = model.latent.default_theta(y)
    if model.p:
        beta = np.linalg.lstsq(model.X, y, rcond=None)[0]
        res = y - model.X @ beta
        j = _intercept_column(model.X)
        if j is not None:
            beta[j] += np.quantile(res, tau)
        res = y - model.X @ beta
    else:
        beta = np.zeros(0)
        res = y - np.quantile(y, tau)
    lam = float(np.mean(pinball_loss(res, 0.0, tau)))
    lam = max(lam, 1e-8 * max(1.0, float(np.std(y))))
    return theta, beta, lam


class _Stalled(Exception):
    pass


class _Objective:
    """Negative Laplace log-marginal in the transformed space, with FD gradient."""

    def __init__(self, model, y, config, n_theta, fixed_lambda):
        self.model = model
        self.y = y
        self.config = config
        self.n_theta = n_theta
        self.p = model.p
        self.fixed_lambda = fixed_lambda
        self.start = None
        self.n_evals = 0
        self.notes = set()
        self.cache = {}
        self.reset_progress()

    def reset_progress(self):
        self.best_x = None
        self.best_f = -np.inf
        self.since = 0

    def _progress(self, x, v):
        if v > self.best_f + self.config.stall_tol:
            self.since = 0
        else:
            self.since += 1
        if v > self.best_f:
            self.best_f, self.best_x = v, x.copy()
        if self.since >= self.config.patience:
            raise _Stalled

    def unpack(self, x):
        theta = np.exp(x[: self.n_theta])
        beta = x[self.n_theta : self.n_theta + self.p]
        lam = self.fixed_lambda if self.fixed_lambda is not None else float(np.exp(x[-1]))
        return theta, beta, lam

    def value(self, x, start):
        key = x.tobytes()
        if key in self.cache:
            return self.cache[key]
        out = self._value(x, start)
        if len(self.cache) > 64:
            self.cache.clear()
        self.cache[key] = out
        return out

    def _value(self, x, start):
        theta, beta, lam = self.unpack(x)
        self.n_evals += 1
        try:
            v, post = laplace_log_marginal(
                self.model, self.y, theta, beta, lam, start=start, mode_config=self.config.mode
            )
        except (np.linalg.LinAlgError, ValueError, FloatingPointError, ModeNotConvergedError) as exc:
            self.notes.add(f"evaluation failed: {exc}")
            return np.nan, None
        self.notes.update(post.warnings)
        return v, post

    def __call__(self, x):
        v, post = self.value(x, self.start)
        if not np.isfinite(v):
            return 1e300, np.zeros_like(x)
        b0 = post.b_hat
        self.start = b0
        grad = np.empty_like(x)
        for j in range(x.size):
            h = self.config.fd_step * (1.0 + abs(x[j]))
            xp = x.copy()
            xm = x.copy()
            xp[j] += h
            xm[j] -= h
            fp, _ = self.value(xp, b0)
            fm, _ = self.value(xm, b0)
            if not (np.isfinite(fp) and np.isfinite(fm)):
                grad[j] = 0.0
            else:
                grad[j] = (fp - fm) / (2.0 * h)
        self._progress(x, v)
        return -v, -grad


def fit(model, y, init=None, config=None):
    """Empirical-Bayes fit of (theta, beta, lam) by maximizing the Laplace log-marginal.

    Parameters
    ----------
    model : QuantileModel
    y : ndarray
    init : dict, optional
        Any of ``theta``, ``beta``, ``lam`` overriding the defaults.
    config : FitConfig, optional
    """
    config = config or FitConfig()
    t0 = time.perf_counter()
    y = np.asarray(y, dtype=float)
    if y.shape != (model.n,) or not np.all(np.isfinite(y)):
        raise ValueError("y must be a finite vector matching the design")
    theta0, beta0, lam0 = initial_values(model, y)
    init = init or {}
    theta0 = np.asarray(init.get("theta", theta0), dtype=float)
    beta0 = np.asarray(init.get("beta", beta0), dtype=float)
    lam0 = float(init.get("lam", lam0))
    if not (np.all(np.isfinite(theta0)) and np.all(theta0 > 0) and np.all(np.isfinite(beta0)) and np.isfinite(lam0) and lam0 > 0):
        raise FitError(f"initial values must be finite with positive scales: theta={theta0}, beta={beta0}, lambda={lam0}")
    fixed = config.fixed_lambda
    if fixed is not None:
        fixed = check_scale(fixed)

    n_theta = model.latent.n_theta
    x0 = np.concatenate([np.log(theta0), beta0] + ([] if fixed is not None else [[np.log(lam0)]]))
    is_log = np.zeros(x0.size, dtype=bool)
    is_log[:n_theta] = True
    if fixed is None:
        is_log[-1] = True
    bounds = [
        (v - config.log_bound, v + config.log_bound) if lg else (None, None)
        for v, lg in zip(x0, is_log)
    ]

    obj = _Objective(model, y, config, n_theta, fixed)
    f_init, _ = obj.value(x0, None)
    if not np.isfinite(f_init):
        raise FitError(
            f"Laplace objective not finite at the initial values theta={theta0}, "
            f"beta={beta0}, lambda={lam0}: {sorted(obj.notes)}"
        )

    rng = np.random.default_rng(config.seed)
    runs = []
    for r in range(max(1, config.n_restarts)):
        start_x = x0.copy()
        if r > 0:
            start_x[is_log] += config.restart_jitter * rng.standard_normal(is_log.sum())
        obj.start = None
        trace = []

        obj.reset_progress()

        def callback(xk, _trace=trace):
            _trace.append(obj.value(xk, obj.start)[0])

        try:
            res = optimize.minimize(
                obj,
                start_x,
                jac=True,
                method="L-BFGS-B",
                bounds=bounds,
                callback=callback,
                options={"maxiter": config.max_iter, "ftol": config.ftol, "gtol": config.gtol},
            )
        except _Stalled:
            res = optimize.OptimizeResult(x=obj.best_x, fun=-obj.best_f, success=True, message="objective stalled")
            trace.append(obj.best_f)
        runs.append((res, trace))

    objectives = [(-res.fun if res.fun < 1e299 else -np.inf) for res, _ in runs]
    best = int(np.argmax(objectives))
    res, trace = runs[best]
    theta, beta, lam = obj.unpack(res.x)
    value, post = laplace_log_marginal(model, y, theta, beta, lam, mode_config=config.mode)
    notes = sorted(obj.notes | set(post.warnings))
    if not res.success:
        notes.append(f"optimizer: {res.message}")
    return FitResult(
        model=model,
        y=y,
        theta_hat=np.asarray(theta),
        beta_hat=np.asarray(beta),
        lambda_hat=float(lam),
        posterior=post,
        trace=trace,
        converged=bool(res.success),
        message=str(res.message),
        n_evals=obj.n_evals,
        restarts=objectives,
        warnings=notes,
        wall_time=time.perf_counter() - t0,
    )


# --------------------------------------------------------------------------
# prediction
# --------------------------------------------------------------------------


def _fixed_part(fit, X_new, n_new):
    if fit.model.p == 0:
        return np.zeros(n_new)
    if X_new is None:
        raise ValueError("model has fixed effects; X_new is required")
    X_new = np.asarray(X_new, dtype=float)
    if X_new.ndim == 1:
        X_new = X_new[:, None]
    if X_new.shape != (n_new, fit.model.p):
        raise ValueError(f"X_new must have shape ({n_new}, {fit.model.p}), got {X_new.shape}")
    return X_new @ fit.beta_hat


def predict(fit, latent_new, X_new=None):
    """Posterior quantile estimate and latent standard deviation at new points.

    Parameters
    ----------
    latent_new
        Grouped: integer group ids (ids outside ``[0, m)`` are unseen groups).
        Crossed: ``(n, 2)`` integer array of factor ids.
        GP: ``(n, d)`` coordinates.
    X_new : ndarray, optional
        Fixed-effect rows (required when the model has fixed effects).
    """
    latent = fit.model.latent
    post = fit.posterior
    b = post.b_hat
    kind = latent.kind
    if kind == "grouped":
        g = np.asarray(latent_new)
        if g.ndim != 1 or not np.issubdtype(g.dtype, np.integer):
            raise ValueError("grouped prediction needs a 1-d integer array of group ids")
        known = (g >= 0) & (g < latent.m)
        gk = np.where(known, g, 0)
        q = np.where(known, b[gk], 0.0)
        var = np.where(known, post.precision.covariance_diag()[gk], fit.theta_hat[0])
    elif kind == "crossed":
        ids = np.asarray(latent_new)
        if ids.ndim != 2 or ids.shape[1] != 2 or not np.issubdtype(ids.dtype, np.integer):
            raise ValueError("crossed prediction needs an (n, 2) integer array of factor ids")
        m1, m2 = latent.m1, latent.m2
        k1 = (ids[:, 0] >= 0) & (ids[:, 0] < m1)
        k2 = (ids[:, 1] >= 0) & (ids[:, 1] < m2)
        j = np.where(k1, ids[:, 0], 0)
        k = m1 + np.where(k2, ids[:, 1], 0)
        q = np.where(k1, b[j], 0.0) + np.where(k2, b[k], 0.0)
        S = post.precision.dense_covariance()
        v1 = np.where(k1, S[j, j], fit.theta_hat[0])
        v2 = np.where(k2, S[k, k], fit.theta_hat[1])
        cov = np.where(k1 & k2, S[j, k], 0.0)
        var = v1 + v2 + 2.0 * cov
    elif kind == "gp":
        coords = np.asarray(latent_new, dtype=float)
        if coords.ndim == 1:
            coords = coords[:, None]
        if coords.ndim != 2 or coords.shape[1] != latent.d:
            raise ValueError(f"GP prediction needs an (n, {latent.d}) coordinate array")
        kstar = latent.cross_cov(coords, fit.theta_hat)  # n_new x n
        q = kstar @ post.a_hat
        c = post.precision.c
        prior = post.prior
        proj = kstar @ prior.evecs
        with np.errstate(divide="ignore"):
            inv = 1.0 / (prior.evals + (1.0 / c if c > 0 else np.inf))
        var = fit.theta_hat[0] - np.sum(proj * proj * inv, axis=1)
    else:
        raise ValueError(f"unknown latent design {kind!r}")
    n_new = q.shape[0]
    q = q + _fixed_part(fit, X_new, n_new)
    return q, np.sqrt(np.maximum(var, 0.0))
