import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from qrlaplace.ald import ald_fisher_diag, ald_sample, pinball_loss, total_loglik
from qrlaplace.curvature import (
    DegenerateCurvatureError,
    TkcConfig,
    bandwidth_table,
    candidate_grid,
    dll,
    fisher_curvature,
    population_curvature,
    select_bandwidth,
    tkc_curvature,
    tkc_estimate,
    tkc_kde_form,
)

PHI0 = 1.0 / math.sqrt(2.0 * math.pi)


def test_fisher_examples(rng):
    assert fisher_curvature(0.5, 2.0).c == 0.0625
    assert fisher_curvature(0.5, 2.0).method == "fisher"
    for tau, lam in zip(rng.uniform(0.01, 0.99, 20), rng.uniform(0.05, 5, 20)):
        assert fisher_curvature(tau, lam).c == ald_fisher_diag(tau, lam)


def test_dll_examples(rng):
    assert dll(np.array([0.0]), np.array([0.0]), 1.0, 1.0, 0.5) == pytest.approx((0.5, 0.5))
    assert dll(np.array([0.3, 1.0]), np.array([0.1, 0.2]), 0.0, 1.0, 0.5) == (0.0, 0.0)
    y, mu = rng.normal(size=30), rng.normal(size=30)
    up, lo = dll(y, mu, 0.37, 0.8, 0.7)
    base = total_loglik(y, mu, 0.8, 0.7)
    assert up == base - total_loglik(y, mu + 0.37, 0.8, 0.7)
    assert lo == base - total_loglik(y, mu - 0.37, 0.8, 0.7)
    with pytest.raises(ValueError):
        dll(y, mu[:5], 0.1, 1.0, 0.5)


def test_tkc_estimate_examples():
    assert tkc_estimate(np.array([0.0]), np.array([0.0]), 1.0, 1.0, 0.5).c == pytest.approx(1.0)
    r = np.array([0.5, -2.0])
    assert tkc_estimate(r, np.zeros(2), 1.0, 1.0, 0.5).c == pytest.approx(0.25)
    assert tkc_kde_form(r, np.zeros(2), 1.0, 1.0).c == pytest.approx(0.25)
    assert tkc_kde_form(np.array([0.0]), np.array([0.0]), 1.0, 1.0).c == 1.0
    with pytest.raises(DegenerateCurvatureError):
        tkc_estimate(np.array([3.0, -2.0]), np.zeros(2), 1.0, 1.0, 0.5)
    with pytest.raises(DegenerateCurvatureError):
        tkc_kde_form(np.array([3.0, 1.0]), np.zeros(2), 1.0, 1.0)


def test_tkc_matches_second_difference_of_dll(rng):
    y, mu = rng.normal(size=200), rng.normal(scale=0.1, size=200)
    up, lo = dll(y, mu, 0.3, 0.9, 0.8)
    assert tkc_estimate(y, mu, 0.3, 0.9, 0.8).c == pytest.approx((up + lo) / (200 * 0.09), rel=1e-10)


def test_tkc_normal_density():
    # one draw has a sampling sd of about 1.8% here, so average a few
    cs = []
    for seed in range(10):
        r = np.random.default_rng(seed).standard_normal(10**5)
        cs.append(tkc_estimate(r, np.zeros_like(r), 0.05, 1.0, 0.5).c)
    assert np.mean(cs) == pytest.approx(PHI0, rel=0.03)


@settings(max_examples=200, deadline=None)
@given(
    arrays(float, st.integers(1, 60), elements=st.floats(-5, 5)),
    st.floats(0.01, 3.0),
    st.floats(0.05, 4.0),
    st.floats(0.02, 0.98),
)
def test_kernel_identity_property(r, h, lam, tau):
    mu = np.zeros_like(r)
    try:
        a = tkc_estimate(r, mu, h, lam, tau).c
    except DegenerateCurvatureError:
        with pytest.raises(DegenerateCurvatureError):
            tkc_kde_form(r, mu, h, lam)
        return
    b = tkc_kde_form(r, mu, h, lam).c
    # each second difference carries rounding of order eps * h, so add that floor
    assert abs(a - b) <= 1e-12 * abs(b) + 1e-14 / (lam * h)


def test_population_curvature_examples():
    assert population_curvature(np.array([PHI0]), 1.0)[0] == pytest.approx(0.39894, abs=1e-5)
    tau, lam = 0.8, 0.3
    f_al = tau * (1 - tau) / lam
    assert population_curvature(np.array([f_al]), lam)[0] == pytest.approx(fisher_curvature(tau, lam).c)
    f = np.array([0.2, 0.7])
    np.testing.assert_allclose(population_curvature(f, 2 * lam), population_curvature(f, lam) / 2)
    with pytest.raises(DegenerateCurvatureError):
        population_curvature(np.array([0.0]), 1.0)


def test_consistency_sweep():
    for sd in (0.5, 1.0, 2.0):
        for tau in (0.5, 0.8):
            zt = stats.norm.ppf(tau)
            target = stats.norm.pdf(zt) / sd
            errs = []
            for n in (10**3, 10**4, 10**5):
                e = []
                for seed in range(20):
                    r = sd * (np.random.default_rng([seed, n]).standard_normal(n) - zt)
                    e.append(abs(tkc_estimate(r, np.zeros(n), sd * n ** -0.2, 1.0, tau).c - target))
                errs.append(np.mean(e))
            assert errs[0] > errs[1] > errs[2], (sd, tau, errs)


def test_select_bandwidth_maximizes_r2(rng):
    r = rng.standard_normal(500)
    cfg = TkcConfig()
    delta, r2, below = select_bandwidth(r, np.zeros(500), 0.5, 0.5, cfg)
    tab = bandwidth_table(r, np.zeros(500), 0.5, 0.5, cfg)
    adm = np.minimum(tab["dll_upper"], tab["dll_lower"]) >= cfg.min_drop_threshold
    assert not below
    assert r2 >= tab["r_squared"][adm].max()
    assert delta in tab["delta"][adm]


def test_table_matches_direct_evaluation(rng):
    y, mu = rng.normal(size=300), rng.normal(scale=0.2, size=300)
    cfg = TkcConfig()
    tab = bandwidth_table(y, mu, 0.7, 0.3, cfg)
    for i in (0, 8, 16):
        d = tab["delta"][i]
        up, lo = dll(y, mu, d, 0.7, 0.3)
        assert tab["dll_upper"][i] == pytest.approx(up, rel=1e-10, abs=1e-12)
        assert tab["dll_lower"][i] == pytest.approx(lo, rel=1e-10, abs=1e-12)
        try:
            want = tkc_estimate(y, mu, d, 0.7, 0.3).c
        except DegenerateCurvatureError:
            want = 0.0
        assert tab["c"][i] == pytest.approx(want, rel=1e-10, abs=1e-300)


def test_single_candidate_and_below_threshold():
    r = np.random.default_rng(2).standard_normal(100)
    delta, _, below = select_bandwidth(r, np.zeros(100), 1.0, 0.5, TkcConfig(), candidates=[0.7])
    assert delta == 0.7 and not below
    delta, _, below = select_bandwidth(r, np.zeros(100), 1.0, 0.5, TkcConfig(1e9), candidates=[0.1, 0.7, 0.3])
    assert delta == 0.7 and below
    with pytest.raises(ValueError):
        select_bandwidth(r, np.zeros(100), 1.0, 0.5, TkcConfig(), candidates=[])


def test_ties_go_to_smallest_delta():
    # a single zero residual at tau = 0.5 makes both curves scale with delta, so R^2
    # is the same for every candidate (powers of two keep the scaling exact)
    delta, _, below = select_bandwidth(np.zeros(1), np.zeros(1), 1.0, 0.5, TkcConfig(1e-3), candidates=[0.5, 0.25])
    tab = bandwidth_table(np.zeros(1), np.zeros(1), 1.0, 0.5, TkcConfig(1e-3), candidates=[0.5, 0.25])
    assert tab["r_squared"][0] == tab["r_squared"][1]
    assert delta == 0.25 and not below


def test_tkc_permutation_invariant_and_fisher_data_free(rng):
    y = rng.normal(size=400)
    mu = rng.normal(scale=0.1, size=400)
    p = rng.permutation(400)
    a = tkc_curvature(y, mu, 0.6, 0.7)
    b = tkc_curvature(y[p], mu[p], 0.6, 0.7)
    assert a.delta_mu == b.delta_mu
    assert a.c == pytest.approx(b.c, rel=1e-13)
    assert fisher_curvature(0.7, 0.6).c == fisher_curvature(0.7, 0.6).c


def _quad_r2(y, mu, lam, tau, c, delta):
    x = np.array([-1.0, -0.5, 0.5, 1.0]) * delta
    base = total_loglik(y, mu, lam, tau)
    truth = np.array([total_loglik(y, mu + s, lam, tau) for s in x]) - base
    quad = -0.5 * y.size * c * x**2
    return 1 - np.sum((truth - quad) ** 2) / np.sum((truth - truth.mean()) ** 2)


def _sample_quantile_mode(y, tau):
    return np.full_like(y, np.quantile(y, tau, method="inverted_cdf"))


def test_quadratic_fit_correct_specification():
    tau, lam = 0.8, 0.1
    y = ald_sample(np.random.default_rng(5), 0.0, lam, tau, 200)
    mu = _sample_quantile_mode(y, tau)
    est = tkc_curvature(y, mu, lam, tau)
    fisher = fisher_curvature(tau, lam).c
    assert est.r_squared > 0.9
    assert 0.5 < est.c / fisher < 2.0
    assert _quad_r2(y, mu, lam, tau, fisher, est.delta_mu) > 0.8


def test_quadratic_fit_misspecification():
    tau = 0.8
    y = 0.1 * np.random.default_rng(6).standard_normal(200)
    mu = _sample_quantile_mode(y, tau)
    lam = float(np.mean(pinball_loss(y, mu, tau)))
    est = tkc_curvature(y, mu, lam, tau)
    fisher = fisher_curvature(tau, lam).c
    assert est.r_squared > _quad_r2(y, mu, lam, tau, fisher, est.delta_mu)
    assert est.r_squared > 0.9


def test_candidate_grid():
    g = candidate_grid(np.array([-1.0, 2.0, 3.0]), TkcConfig())
    assert g.size == 17 and g[8] == 2.0 and g[9] == 4.0
    assert candidate_grid(np.zeros(5), TkcConfig())[8] == 1.0
