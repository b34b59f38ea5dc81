import numpy as np
import pytest
from scipy.optimize import lsq_linear

from qrlaplace.ald import pinball_loss
from qrlaplace.design import CrossedDesign, GpDesign, GroupedDesign, make_fixed_design
from qrlaplace.mode import ModeConfig, ModeNotConvergedError, find_mode, solve_mode
from qrlaplace.model import QuantileModel


def objective(model, y, theta, beta, lam, b):
    prior = model.latent.prior(theta)
    mu = model.offset(beta) + model.latent.gather(b)
    return -np.sum(pinball_loss(y, mu, model.tau)) / lam - 0.5 * b @ prior.apply_inv(b)


def grouped_instance(seed, m=5, n_j=50, tau=None):
    rng = np.random.default_rng(seed)
    tau = rng.uniform(0.1, 0.9) if tau is None else tau
    g = np.repeat(np.arange(m), n_j)
    y = rng.normal(size=m)[g] + rng.standard_t(3, g.size)
    model = QuantileModel(tau, GroupedDesign(g, m))
    return model, y, np.array([rng.uniform(0.3, 3)]), np.zeros(0), rng.uniform(0.2, 2)


def test_single_observation_examples():
    model = QuantileModel(0.5, GroupedDesign(np.array([0]), 1))
    assert find_mode(model, np.array([0.0]), [1.0], np.zeros(0), 1.0).b_hat[0] == 0.0
    res = find_mode(model, np.array([10.0]), [1.0], np.zeros(0), 1.0)
    grid = np.arange(-1, 11, 1e-6)
    vals = -np.abs(10 - grid) / 2 - grid**2 / 2
    assert res.b_hat[0] == pytest.approx(grid[np.argmax(vals)], abs=1e-6)
    assert res.b_hat[0] == pytest.approx(0.5, abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_coordinate_perturbation_optimality(seed):
    model, y, theta, beta, lam = grouped_instance(seed)
    b = find_mode(model, y, theta, beta, lam).b_hat
    f0 = objective(model, y, theta, beta, lam, b)
    for k in range(b.size):
        for eps in (1e-4, -1e-4):
            e = np.zeros_like(b)
            e[k] = eps
            assert f0 >= objective(model, y, theta, beta, lam, b + e)


def _starts(model, y, theta, seed):
    """Zero, a prior draw, and first-factor group means of y."""
    rng = np.random.default_rng(seed)
    latent = model.latent
    prior_draw = np.sqrt(latent.prior(theta).variance_diag()) * rng.standard_normal(model.m)
    if latent.kind == "grouped":
        y_based = latent.scatter(y) / np.maximum(latent.counts, 1)
    else:
        means = np.bincount(latent.group1, y, latent.m1) / np.maximum(latent.counts1, 1)
        y_based = np.concatenate([means, np.zeros(latent.m2)])
    return [None, prior_draw, y_based]


@pytest.mark.parametrize("seed", range(5))
def test_multistart_grouped(seed):
    model, y, theta, beta, lam = grouped_instance(seed)
    sols = [find_mode(model, y, theta, beta, lam, start=s).b_hat for s in _starts(model, y, theta, seed)]
    for s in sols[1:]:
        assert np.max(np.abs(s - sols[0])) < 1e-5


def test_multistart_crossed():
    rng = np.random.default_rng(3)
    m1, m2, n_j = 30, 10, 20
    g1 = np.repeat(np.arange(m1), n_j)
    g2 = np.tile(np.arange(n_j) % m2, m1)
    y = rng.normal(size=m1)[g1] + 1.4 * rng.normal(size=m2)[g2] + 0.5 * rng.standard_normal(g1.size)
    model = QuantileModel(0.7, CrossedDesign(g1, g2, m1, m2), make_fixed_design(g1.size))
    theta, beta, lam = np.array([1.0, 2.0]), np.array([0.2]), 0.3
    sols = [find_mode(model, y, theta, beta, lam, start=s).b_hat for s in _starts(model, y, theta, 3)]
    for s in sols[1:]:
        assert np.max(np.abs(s - sols[0])) < 1e-5


def test_multistart_gp():
    rng = np.random.default_rng(4)
    X = rng.uniform(size=(150, 2))
    y = np.sin(4 * X[:, 0]) + 0.3 * rng.standard_normal(150)
    model = QuantileModel(0.3, GpDesign(X))
    theta, lam = np.array([1.0, 0.3]), 0.2
    sols = [find_mode(model, y, theta, np.zeros(0), lam, start=s).b_hat for s in (None, y, -y)]
    for s in sols[1:]:
        assert np.max(np.abs(s - sols[0])) < 1e-5


def _certificate_gap(model, y, theta, beta, lam, res, tol=1e-9):
    """Distance from K^-1 b to the set Z^T s with s an admissible subgradient."""
    tau = model.tau
    r = y - res.mu_hat
    kink = np.abs(r) <= tol * max(1.0, np.max(np.abs(y)))
    s_fixed = np.where(r > 0, tau / lam, (tau - 1) / lam)
    Z = model.latent.dense_z()
    target = res.a_hat - Z[~kink].T @ s_fixed[~kink]
    if not kink.any():
        return float(np.max(np.abs(target)))
    sol = lsq_linear(Z[kink].T, target, bounds=((tau - 1) / lam, tau / lam), tol=1e-12)
    return float(np.max(np.abs(Z[kink].T @ sol.x - target)))


def test_optimality_certificate_grouped():
    model, y, theta, beta, lam = grouped_instance(9)
    res = find_mode(model, y, theta, beta, lam)
    assert _certificate_gap(model, y, theta, beta, lam, res) < 1e-8


def test_optimality_certificate_crossed():
    rng = np.random.default_rng(5)
    g1 = rng.integers(0, 8, 120)
    g2 = rng.integers(0, 5, 120)
    y = rng.standard_normal(120)
    model = QuantileModel(0.6, CrossedDesign(g1, g2, 8, 5))
    res = find_mode(model, y, [1.0, 0.5], np.zeros(0), 0.4)
    assert _certificate_gap(model, y, [1.0, 0.5], None, 0.4, res) < 1e-6


@pytest.mark.parametrize("theta,lam", [([1.0, 0.3], 0.2), ([2.0, 0.08], 0.05)])
def test_optimality_certificate_gp(theta, lam):
    rng = np.random.default_rng(6)
    X = rng.uniform(size=(120, 2))
    y = np.cos(3 * X[:, 1]) + 0.2 * rng.standard_normal(120)
    model = QuantileModel(0.7, GpDesign(X))
    res = find_mode(model, y, np.array(theta), np.zeros(0), lam)
    assert res.converged
    assert _certificate_gap(model, y, theta, None, lam, res) < 1e-6


def test_gp_active_set_finish_matches_interior_point():
    import qrlaplace.mode as mode

    rng = np.random.default_rng(8)
    X = rng.uniform(size=(200, 2))
    y = np.sin(5 * X[:, 0]) + 0.3 * rng.standard_t(3, 200)
    model = QuantileModel(0.25, GpDesign(X))
    theta = np.array([0.8, 0.2])
    prior = model.latent.prior(theta)
    res = find_mode(model, y, theta, np.zeros(0), 0.1)
    sc = 1.0 / 0.1
    b_ipm, _ = mode._interior_point_refine(model.latent, prior, y, sc * (0.25 - 1), sc * 0.25, y - res.mu_hat)
    assert np.max(np.abs(res.b_hat - b_ipm)) < 1e-6
    assert objective(model, y, theta, None, 0.1, res.b_hat) >= objective(model, y, theta, None, 0.1, b_ipm) - 1e-9


def test_mode_shrinks_with_lambda():
    model, y, theta, beta, _ = grouped_instance(2)
    sizes = [np.max(np.abs(find_mode(model, y, theta, beta, lam).b_hat)) for lam in (1.0, 10.0, 100.0)]
    assert sizes[0] > sizes[1] > sizes[2]


def test_scoring_trace_monotone_and_strict_error():
    model, y, theta, beta, lam = grouped_instance(1)
    cfg = ModeConfig(polish=False)
    res = find_mode(model, y, theta, beta, lam, config=cfg)
    assert np.all(np.diff(res.trace) >= -1e-12 * np.abs(res.trace[1:]))
    with pytest.raises(ModeNotConvergedError) as info:
        find_mode(model, y, theta, beta, lam, config=ModeConfig(max_iter=1, polish=False), strict=True)
    assert info.value.last.b_hat.shape == (5,)


def test_mode_result_consistency():
    model, y, theta, beta, lam = grouped_instance(4)
    res = find_mode(model, y, theta, beta, lam)
    np.testing.assert_allclose(res.mu_hat, model.latent.gather(res.b_hat))
    assert np.isfinite(res.log_posterior_at_mode)
    with pytest.raises(ValueError):
        find_mode(model, y, theta, beta, lam, start=np.zeros(3))
