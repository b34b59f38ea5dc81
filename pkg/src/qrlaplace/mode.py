"""Posterior mode of  alpha * log p(y | b) + log pi(b)  by damped Fisher scoring.

The Newton system uses the Fisher curvature ``tau (1 - tau) / lam^2`` in place
of the (zero almost everywhere) Hessian of the AL log-likelihood:

    (K^-1 + alpha c Z^T Z) step = alpha Z^T s - K^-1 b

followed by Armijo backtracking on the exact, non-smooth objective.  For
grouped designs the objective separates over groups, so the line search runs
per group and a final exact one-dimensional solve places each coordinate on
the true maximizer (kinks included).

The solver tracks ``a = K^-1 b`` alongside ``b`` so GP priors never need an
explicit inverse of the kernel matrix.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .ald import ald_fisher_diag, ald_score_mu, check_scale, pinball_loss


@dataclass(frozen=True)
class ModeConfig:
    max_iter: int = 200
    rel_tol: float = 1e-8
    step_tol: float = 1e-6
    armijo_c: float = 1e-4
    max_halvings: int = 50
    polish: bool = True
    # scoring iterations before the exact finishing step takes over
    polish_after: int = 10


@dataclass
class ModeResult:
    b_hat: np.ndarray
    mu_hat: np.ndarray
    a_hat: np.ndarray
    log_posterior_at_mode: float
    iterations: int
    converged: bool
    trace: list = field(default_factory=list)


class ModeNotConvergedError(RuntimeError):
    def __init__(self, msg, last):
        super().__init__(msg)
        self.last = last


def _objective_parts(y, mu, lam, tau, alpha, b, a, latent):
    """Per-block objective (length m for separable designs, scalar otherwise)."""
    loss = pinball_loss(y, mu, tau) / lam
    if latent.kind == "grouped":
        lik = -latent.scatter(loss)
        return alpha * lik - 0.5 * b * a
    return -alpha * np.sum(loss) - 0.5 * float(b @ a)


def _exact_grouped(latent, r, sigma2, lam, tau, alpha):
    """Exact maximizer of  -alpha/lam sum_i rho(r_i - b) - b^2/(2 sigma2)  per group.

    On the segment with ``k`` residuals below ``b`` the derivative is
    ``(alpha/lam)(tau n_j - k) - b / sigma2``, which vanishes at
    ``s_k = sigma2 (alpha/lam)(tau n_j - k)``.  ``s_k`` decreases and the
    segment bounds increase in ``k``, so the maximizer is ``clip(s_k)`` for the
    first segment whose stationary point does not exceed its right end.
    """
    g = latent.group
    m = latent.m
    counts = latent.counts
    order = np.lexsort((r, g))
    rs = r[order]
    gs = g[order]
    starts = np.concatenate([[0], np.cumsum(counts[:-1])]).astype(np.int64)
    rank = np.arange(r.size) - starts[gs]
    scale = sigma2 * alpha / lam
    s_rank = scale * (tau * counts[gs] - rank)  # stationary point of segment "rank"
    flag = s_rank <= rs  # right end of that segment is rs
    kstar = counts.astype(np.int64).copy()
    np.minimum.at(kstar, gs[flag], rank[flag])
    s_k = scale * (tau * counts - kstar)
    lo = np.full(m, -np.inf)
    hi = np.full(m, np.inf)
    has_lo = kstar > 0
    lo[has_lo] = rs[starts[has_lo] + kstar[has_lo] - 1]
    has_hi = kstar < counts
    hi[has_hi] = rs[starts[has_hi] + kstar[has_hi]]
    return np.clip(s_k, lo, hi)


def _smoothed_loss(z, h, tau):
    """Pinball loss with the kink replaced by a quadratic on |z| < h (C^1)."""
    quad = z * z / (4.0 * h) + z * (tau - 0.5) + h / 4.0
    return np.where(np.abs(z) < h, quad, pinball_loss(z, 0.0, tau))


def _smoothed_psi(z, h, tau):
    inner = z / (2.0 * h) + tau - 0.5
    return np.where(z >= h, tau, np.where(z <= -h, tau - 1.0, inner))


def _active_set_finish(latent, prior, r, lo, hi, res, h, max_iter=25):
    """Exact mode from a near-optimal residual vector by primal-dual active sets.

    Works on the dual box QP  min_u u'Qu/2 - r'u,  lo <= u <= hi,  with
    ``Q = Z K Z^T``.  Observations with ``|res| < h`` start free (zero
    residual, interior dual value); the rest sit at the bound matching their
    residual sign.  Each pass solves ``Q_EE u_E = r_E - Q_EF u_F`` on the free
    set and reassigns indices by the semismooth rule.  Returns ``(b, a)`` only
    when the KKT conditions hold, else ``None``.
    """
    n = r.size
    rscale = max(1.0, float(np.max(np.abs(r))))
    gamma = (hi - lo) / max(float(np.median(np.abs(res))), 1e-300)
    state = np.where(res >= h, 1, np.where(res <= -h, -1, 0))
    for _ in range(max_iter):
        free = np.flatnonzero(state == 0)
        u = np.where(state > 0, hi, lo).astype(float)
        u[free] = 0.0
        fixed_part = latent.gather(prior.apply_cov(latent.scatter(u)))
        if free.size:
            Q = prior.q_block(free)
            try:
                u[free] = sla.cho_solve(sla.cho_factor(Q, lower=True, check_finite=False), r[free] - fixed_part[free])
            except np.linalg.LinAlgError:
                return None
        a = latent.scatter(u)
        b = prior.apply_cov(a)
        resid = r - latent.gather(b)
        eps = 1e-9 * rscale
        width_eps = 1e-9 * (hi - lo)
        kkt = (
            np.all(u[free] >= lo - width_eps)
            and np.all(u[free] <= hi + width_eps)
            and np.all(resid[state > 0] >= -eps)
            and np.all(resid[state < 0] <= eps)
        )
        if kkt:
            if free.size:
                # clipping moves u by rounding noise only
                a = latent.scatter(np.clip(u, lo, hi))
                b = prior.apply_cov(a)
            return b, a
        trial = u + gamma * resid
        new_state = np.where(trial > hi, 1, np.where(trial < lo, -1, 0))
        if np.array_equal(new_state, state):
            return None
        state = new_state
    return None


def _continuation_refine(latent, prior, r, s, tau, b, a, h_min, max_newton=30, max_inner=8):
    """Drive the mode to the exact non-smooth maximizer by smoothing continuation.

    For a decreasing sequence of widths ``h``, Newton's method maximizes
    ``-s sum rho_h(r - Zb) - b'K^-1 b / 2`` where ``rho_h`` is the pinball loss
    with its kink rounded off on ``|z| < h``.  The Hessian is
    ``K^-1 + s Z_S' Z_S / (2h)`` over the band ``S = {|residual| < h}``, so a
    Woodbury solve of size ``|S|`` gives each step without ``K^-1``.  The
    final iterate is within O(h_min) of the exact mode.
    """
    n = r.size
    if n == 0:
        return b, a, True
    ok = True
    res = r - latent.gather(b)
    k = min(n, 2 * min(latent.m, 300)) - 1
    h = float(np.partition(np.abs(res), k)[k])
    h = max(h, 10.0 * h_min)

    def value(bb, aa, hh):
        z = r - latent.gather(bb)
        return -s * np.sum(_smoothed_loss(z, hh, tau)) - 0.5 * float(bb @ aa)

    while True:
        f = value(b, a, h)
        settled = False
        # intermediate widths only need to bring the iterate near the band
        for _ in range(max_newton if h <= h_min else max_inner):
            res = r - latent.gather(b)
            band = np.flatnonzero(np.abs(res) < h)
            v = s * latent.scatter(_smoothed_psi(res, h, tau)) - a
            Kv = prior.apply_cov(v)
            w = v
            if band.size:
                M = prior.q_block(band)
                M[np.diag_indices_from(M)] += 2.0 * h / s
                rhs = latent.gather(Kv)[band]
                try:
                    ys = sla.cho_solve(sla.cho_factor(M, lower=True), rhs)
                except np.linalg.LinAlgError:
                    ys = np.linalg.lstsq(M, rhs, rcond=None)[0]
                e = np.zeros(n)
                e[band] = ys
                w = v - latent.scatter(e)
            d = prior.apply_cov(w)
            slope = float(v @ d)
            if not slope > 1e-14 * max(1.0, abs(f)):
                settled = True
                break
            t = 1.0
            for _ in range(50):
                bt, at = b + t * d, a + t * w
                ft = value(bt, at, h)
                if ft >= f + 1e-4 * t * slope:
                    break
                t *= 0.5
            else:
                break
            b, a, f = bt, at, ft
            if t == 1.0 and np.max(np.abs(d)) < 1e-13 * max(1.0, np.max(np.abs(b))):
                settled = True
                break
        ok = ok and (settled or h > h_min)
        exact = _active_set_finish(latent, prior, r, s * (tau - 1.0), s * tau, r - latent.gather(b), h)
        if exact is not None:
            return exact[0], exact[1], True
        if h <= h_min:
            return b, a, ok
        h = max(h * 0.1, h_min)


def _interior_point_refine(latent, prior, r, lo, hi, res0, tol=1e-13, max_iter=100):
    """Exact mode through the dual box QP with a primal-dual interior-point method.

    Solves  min_u u'Qu/2 - r'u  subject to  lo <= u <= hi  with ``Q = Z K Z^T``
    (Mehrotra predictor-corrector).  The primal mode is ``b = K Z^T u`` and
    ``K^-1 b = Z^T u``.  Each Newton system ``(Q + Sigma) dx = v`` is handled
    by ``prior.dual_solver``, which reduces it to an m x m solve for grouped
    and crossed designs.

    Returns ``(b, a)`` or ``None`` if the iteration fails.
    """
    n = r.size
    width = hi - lo
    scale = float(np.median(np.abs(res0))) or 1.0
    x = lo + width * np.clip(0.5 + 0.5 * np.tanh(res0 / scale), 0.05, 0.95)
    s1, s2 = x - lo, hi - x
    g = latent.gather(prior.apply_cov(latent.scatter(x))) - r
    floor = 0.1 * scale
    z1 = np.maximum(g, 0.0) + floor
    z2 = np.maximum(-g, 0.0) + floor
    gap0 = None
    for _ in range(max_iter):
        mu = (s1 @ z1 + s2 @ z2) / (2.0 * n)
        rd = g - z1 + z2
        gap0 = gap0 or mu
        if mu < tol * max(1.0, gap0) and np.max(np.abs(rd)) < 1e-10 * max(1.0, np.max(np.abs(r))):
            a = latent.scatter(x)
            return prior.apply_cov(a), a
        sigma_diag = z1 / s1 + z2 / s2
        try:
            solve = prior.dual_solver(sigma_diag)
        except np.linalg.LinAlgError:
            return None

        def direction(t1, t2):
            # t1 = s1 z1 target, t2 = s2 z2 target (complementarity right-hand sides)
            rhs = -rd - z1 + z2 + t1 / s1 - t2 / s2
            dx = solve(rhs)
            dz1 = (t1 - z1 * dx) / s1 - z1
            dz2 = (t2 + z2 * dx) / s2 - z2
            return dx, dz1, dz2

        def max_step(v, dv):
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(dv < 0, -v / dv, np.inf)
            return min(1.0, float(ratio.min()))

        dx, dz1, dz2 = direction(np.zeros(n), np.zeros(n))
        alpha = min(max_step(s1, dx), max_step(s2, -dx), max_step(z1, dz1), max_step(z2, dz2))
        mu_aff = ((s1 + alpha * dx) @ (z1 + alpha * dz1) + (s2 - alpha * dx) @ (z2 + alpha * dz2)) / (2.0 * n)
        sig = (mu_aff / mu) ** 3
        dx, dz1, dz2 = direction(sig * mu - dx * dz1, sig * mu + dx * dz2)
        alpha = 0.995 * min(max_step(s1, dx), max_step(s2, -dx), max_step(z1, dz1), max_step(z2, dz2))
        if not np.all(np.isfinite(dx)):
            return None
        x = x + alpha * dx
        # slacks carried separately so they never lose precision to x - lo near a bound
        s1 = s1 + alpha * dx
        s2 = s2 - alpha * dx
        z1 = z1 + alpha * dz1
        z2 = z2 + alpha * dz2
        g = latent.gather(prior.apply_cov(latent.scatter(x))) - r
    return None


def solve_mode(latent, prior, y, offset, lam, tau, alpha=1.0, start=None, config=None, strict=False):
    """Posterior mode for a fixed prior ``prior = latent.prior(theta)``.

    Parameters
    ----------
    offset : ndarray
        Fixed-effect contribution ``X beta`` (length n).
    start : ndarray, optional
        Initial latent vector (defaults to zero).
    strict : bool
        Raise ``ModeNotConvergedError`` instead of returning an unconverged result.
    """
    config = config or ModeConfig()
    lam = check_scale(lam)
    y = np.asarray(y, dtype=float)
    offset = np.asarray(offset, dtype=float)
    m = latent.m
    b = np.zeros(m) if start is None else np.array(start, dtype=float)
    if b.shape != (m,):
        raise ValueError(f"start has shape {b.shape}, expected ({m},)")
    a = prior.apply_inv(b)
    post = prior.posterior(alpha * ald_fisher_diag(tau, lam))
    separable = latent.kind == "grouped"

    if latent.kind == "gp" and config.polish and start is not None and y.size:
        # a start from a nearby problem shares almost all of its zero-residual set
        r = y - offset
        res0 = r - latent.gather(b)
        sc = alpha / lam
        warm = _active_set_finish(latent, prior, r, sc * (tau - 1.0), sc * tau, res0, 1e-3 * float(np.median(np.abs(res0))))
        if warm is not None:
            b, a = warm
            mu = offset + latent.gather(b)
            f = float(_objective_parts(y, mu, lam, tau, alpha, b, a, latent))
            logpost = f - 0.5 * prior.logdet - 0.5 * m * np.log(2 * np.pi)
            logpost += alpha * y.size * np.log(tau * (1.0 - tau) / lam)
            if np.isfinite(logpost):
                return ModeResult(b, mu, a, float(logpost), 0, True, [f])

    mu = offset + latent.gather(b)
    parts = _objective_parts(y, mu, lam, tau, alpha, b, a, latent)
    f = float(np.sum(parts))
    trace = [f]
    converged = False
    it = 0
    n_scoring = min(config.max_iter, config.polish_after) if config.polish else config.max_iter
    if separable and config.polish:
        # the per-group segment search below is exact; scoring would only be discarded
        n_scoring = 0
    for it in range(1, n_scoring + 1):
        glik = alpha * latent.scatter(ald_score_mu(y, mu, lam, tau))
        grad = glik - a
        b_new, a_new = post.newton(b, a, glik)
        d = b_new - b
        da = a_new - a
        if separable:
            t = np.ones(m)
            active = np.ones(m, dtype=bool)
            new_parts = parts
            slope = grad * d
            for _ in range(config.max_halvings + 1):
                bt = b + t * d
                at = a + t * da
                mut = offset + latent.gather(bt)
                cand = _objective_parts(y, mut, lam, tau, alpha, bt, at, latent)
                ok = (cand >= parts + config.armijo_c * t * slope) & (cand >= parts)
                active = ~ok
                if not active.any():
                    break
                t = np.where(active, t * 0.5, t)
            t = np.where(active, 0.0, t)
            b = b + t * d
            a = a + t * da
            mu = offset + latent.gather(b)
            new_parts = _objective_parts(y, mu, lam, tau, alpha, b, a, latent)
            step = np.max(np.abs(t * d)) if m else 0.0
            parts = new_parts
            f_new = float(np.sum(parts))
        else:
            slope = float(grad @ d)
            t = 1.0
            accepted = False
            for _ in range(config.max_halvings + 1):
                bt = b + t * d
                at = a + t * da
                mut = offset + latent.gather(bt)
                cand = _objective_parts(y, mut, lam, tau, alpha, bt, at, latent)
                if cand >= f + config.armijo_c * t * slope and cand >= f:
                    accepted = True
                    break
                t *= 0.5
            if not accepted:
                step = 0.0
                f_new = f
            else:
                b, a, mu = bt, at, mut
                step = t * np.max(np.abs(d)) if m else 0.0
                f_new = float(cand)
        rel = abs(f_new - f) / max(1.0, abs(f))
        f = f_new
        trace.append(f)
        if rel < config.rel_tol and step < config.step_tol:
            converged = True
            break

    if not separable and config.polish:
        r = y - offset
        sc = alpha / lam
        refined = None
        if latent.kind == "gp":
            h_min = 1e-10 * max(1.0, float(np.max(np.abs(r))) if r.size else 1.0)
            b_c, a_c, ok = _continuation_refine(latent, prior, r, sc, tau, b, a, h_min)
            refined = (b_c, a_c) if ok else None
        if refined is None:
            refined = _interior_point_refine(latent, prior, r, sc * (tau - 1.0), sc * tau, y - mu)
        if refined is not None:
            b_ex, a_ex = refined
            mu_ex = offset + latent.gather(b_ex)
            f_ex = float(_objective_parts(y, mu_ex, lam, tau, alpha, b_ex, a_ex, latent))
            if f_ex >= f - 1e-10 * max(1.0, abs(f)):
                b, a, mu, f = b_ex, a_ex, mu_ex, f_ex
                converged = True
                trace.append(f)

    if separable and config.polish:
        b_ex = _exact_grouped(latent, y - offset, prior.sigma2, lam, tau, alpha)
        a_ex = b_ex / prior.sigma2
        mu_ex = offset + latent.gather(b_ex)
        parts_ex = _objective_parts(y, mu_ex, lam, tau, alpha, b_ex, a_ex, latent)
        if np.sum(parts_ex) >= f - 1e-12 * max(1.0, abs(f)):
            b, a, mu = b_ex, a_ex, mu_ex
            f = float(np.sum(parts_ex))
            converged = True
            trace.append(f)

    logpost = f - 0.5 * prior.logdet - 0.5 * m * np.log(2 * np.pi)
    logpost += alpha * y.size * np.log(tau * (1.0 - tau) / lam)
    res = ModeResult(b, mu, a, float(logpost), it, converged, trace)
    if not np.isfinite(logpost):
        raise ModeNotConvergedError("non-finite objective at the mode", res)
    if strict and not converged:
        raise ModeNotConvergedError(f"mode search did not converge in {config.max_iter} iterations", res)
    return res


def find_mode(model, y, theta, beta, lam, start=None, config=None, prior=None, strict=False):
    """Posterior mode for a ``QuantileModel`` at hyperparameters (theta, beta, lam)."""
    prior = prior if prior is not None else model.latent.prior(theta)
    return solve_mode(
        model.latent, prior, y, model.offset(beta), lam, model.tau, model.alpha, start, config, strict
    )
