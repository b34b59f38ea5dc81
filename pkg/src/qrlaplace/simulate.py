"""Synthetic designs, accuracy metrics and the replication driver.

Noise is always centred so that its tau-quantile is zero; the true
conditional tau-quantile of every observation is then its latent signal.

Signal-to-noise ratio is ``var(signal) / var(noise)``.  Student-t(2) noise has
no variance, so its scale is matched by interquartile range to the Gaussian
noise of the same SNR.
"""

import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import stats

from .ald import ald_sample, ald_variance, check_tau, pinball_loss
from .calibration import binned_coverage, cqr_calibrate, empirical_coverage, posterior_se, sandwich_se, wald_bounds
from .curvature import TkcConfig
from .design import CrossedDesign, GpDesign, GroupedDesign, jittered_cholesky, make_fixed_design, matern15
from .laplace import FitConfig, fit, laplace_log_marginal, predict
from .model import QuantileModel
from .quadrature import exact_log_marginal

NOISE_FAMILIES = ("ald", "gaussian", "student_t2", "hetero_gp")
DESIGNS = ("grouped", "crossed", "gp")

# 0.75-quantiles of N(0, 1) and t(2); their ratio matches the two IQRs
_Z75 = stats.norm.ppf(0.75)
_T75 = stats.t.ppf(0.75, 2)


@dataclass(frozen=True)
class NoiseSpec:
    family: str = "gaussian"
    snr: float = 5.0
    tau: float = 0.5

    def __post_init__(self):
        if self.family not in NOISE_FAMILIES:
            raise ValueError(f"unknown noise family {self.family!r}; choose from {NOISE_FAMILIES}")
        if not self.snr > 0:
            raise ValueError("snr must be positive")
        check_tau(self.tau)


@dataclass
class SimulatedDataset:
    y: np.ndarray
    design: str
    latent: object
    b_true: np.ndarray
    q_true: np.ndarray
    seed: int
    meta: dict = field(default_factory=dict)
    coords: np.ndarray = None

    @property
    def n(self):
        return self.y.size


def noise_scale(noise, signal_var):
    """Scale parameter of the noise family for the requested SNR.

    ALD: ``lam`` with AL variance ``signal_var / snr``.
    Gaussian and heteroscedastic: the standard deviation.
    Student-t(2): scale giving the same IQR as the Gaussian case.
    """
    var = signal_var / noise.snr
    if noise.family == "ald":
        return math.sqrt(var / ald_variance(1.0, noise.tau))
    sd = math.sqrt(var)
    if noise.family == "student_t2":
        return sd * _Z75 / _T75
    return sd


def draw_noise(rng, noise, signal_var, size, log_sd=None):
    """Noise draws whose tau-quantile is zero."""
    s = noise_scale(noise, signal_var)
    tau = noise.tau
    if noise.family == "ald":
        return ald_sample(rng, 0.0, s, tau, size)
    if noise.family == "gaussian":
        return s * (rng.standard_normal(size) - stats.norm.ppf(tau))
    if noise.family == "student_t2":
        return s * (rng.standard_t(2, size) - stats.t.ppf(tau, 2))
    if log_sd is None:
        raise ValueError("heteroscedastic noise needs a log-sd field")
    return s * np.exp(log_sd) * (rng.standard_normal(size) - stats.norm.ppf(tau))


def gen_grouped(m, n_j, sigma2_u, noise, seed):
    if m < 1 or n_j < 1:
        raise ValueError("need at least one group and one observation per group")
    if noise.family == "hetero_gp":
        raise ValueError("heteroscedastic GP noise is defined for GP designs only")
    rng = np.random.default_rng(seed)
    b = math.sqrt(sigma2_u) * rng.standard_normal(m)
    group = np.repeat(np.arange(m), n_j)
    q = b[group]
    y = q + draw_noise(rng, noise, sigma2_u, group.size)
    meta = {"design": "grouped", "m": m, "n_j": n_j, "sigma2_u": sigma2_u, "noise": asdict(noise)}
    return SimulatedDataset(y, "grouped", GroupedDesign(group, m), b, q, seed, meta)


SNR_REFERENCES = ("total", "first")


def gen_crossed(m1, m2, n_j, sigma2_1, sigma2_2, noise, seed, snr_reference="total"):
    """Two crossed factors; factor-2 ids cycle within each factor-1 level.

    ``snr_reference`` picks the signal variance the noise is scaled against:
    ``"total"`` uses ``sigma2_1 + sigma2_2``, ``"first"`` uses ``sigma2_1``
    alone, which keeps the noise of the single-factor design with the same
    first-factor variance.
    """
    if min(m1, m2, n_j) < 1:
        raise ValueError("invalid counts")
    if snr_reference not in SNR_REFERENCES:
        raise ValueError(f"snr_reference must be one of {SNR_REFERENCES}")
    if noise.family == "hetero_gp":
        raise ValueError("heteroscedastic GP noise is defined for GP designs only")
    rng = np.random.default_rng(seed)
    b1 = math.sqrt(sigma2_1) * rng.standard_normal(m1)
    b2 = math.sqrt(sigma2_2) * rng.standard_normal(m2)
    g1 = np.repeat(np.arange(m1), n_j)
    g2 = np.tile(np.arange(n_j) % m2, m1)
    q = b1[g1] + b2[g2]
    signal_var = sigma2_1 + sigma2_2 if snr_reference == "total" else sigma2_1
    y = q + draw_noise(rng, noise, signal_var, g1.size)
    meta = {
        "design": "crossed", "m1": m1, "m2": m2, "n_j": n_j,
        "sigma2_1": sigma2_1, "sigma2_2": sigma2_2, "noise": asdict(noise),
        "snr_reference": snr_reference,
    }
    return SimulatedDataset(y, "crossed", CrossedDesign(g1, g2, m1, m2), np.concatenate([b1, b2]), q, seed, meta)


def default_lengthscale(d):
    """0.25 in two dimensions, scaled by sqrt(d / 2) otherwise."""
    return 0.25 * math.sqrt(d / 2.0)


def _gp_draw(rng, coords, sigma2, lengthscale):
    K = matern15(coords, sigma2, lengthscale)
    L, _ = jittered_cholesky(K, sigma2)
    return L @ rng.standard_normal(coords.shape[0])


def gen_gp(n, d, noise, seed, sigma2=1.0, lengthscale=None):
    if n < 2 or d < 1:
        raise ValueError("need n >= 2 and d >= 1")
    lengthscale = default_lengthscale(d) if lengthscale is None else lengthscale
    rng = np.random.default_rng(seed)
    coords = rng.uniform(size=(n, d))
    f = _gp_draw(rng, coords, sigma2, lengthscale)
    log_sd = _gp_draw(rng, coords, sigma2, lengthscale) if noise.family == "hetero_gp" else None
    y = f + draw_noise(rng, noise, sigma2, n, log_sd)
    meta = {"design": "gp", "n": n, "d": d, "sigma2": sigma2, "lengthscale": lengthscale, "noise": asdict(noise)}
    if log_sd is not None:
        meta["log_sd"] = log_sd.tolist()
    return SimulatedDataset(y, "gp", GpDesign(coords), f, f.copy(), seed, meta, coords=coords)


# --------------------------------------------------------------------------
# metrics
# --------------------------------------------------------------------------


def _pair(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    return a, b


def rmse(q_hat, q_true):
    q_hat, q_true = _pair(q_hat, q_true)
    return float(np.sqrt(np.mean((q_hat - q_true) ** 2)))


def quantile_loss(y, q_hat, tau):
    y, q_hat = _pair(y, q_hat)
    return float(np.mean(pinball_loss(y, q_hat, tau)))


def split_indices(n, seed, rep, train_fraction=0.75):
    """Random train/test split, a pure function of (n, seed, rep)."""
    rng = np.random.default_rng([seed, rep, 0x5EED])
    perm = rng.permutation(n)
    k = int(round(train_fraction * n))
    return np.sort(perm[:k]), np.sort(perm[k:])


def _mean_se(v):
    v = np.asarray(v, dtype=float)
    v = v[np.isfinite(v)]
    if v.size == 0:
        return math.nan, math.nan
    se = float(np.std(v, ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return float(v.mean()), se


# --------------------------------------------------------------------------
# replication driver
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    design: str = "grouped"
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    methods: tuple = ("tkc", "fisher")
    replications: int = 10
    seed: int = 0
    # grouped / crossed
    m: int = 100
    n_j: int = 100
    sigma2_u: float = 1.0
    m2: int = 50
    sigma2_2: float = 2.0
    snr_reference: str = "total"
    # gp
    n: int = 1000
    d: int = 2
    lengthscale: float = None
    intercept: bool = True
    train_fraction: float = 0.75
    tkc: TkcConfig = field(default_factory=TkcConfig)
    fit: FitConfig = field(default_factory=FitConfig)

    def __post_init__(self):
        if self.design not in DESIGNS:
            raise ValueError(f"unknown design {self.design!r}; choose from {DESIGNS}")
        if self.replications < 1:
            raise ValueError("replications must be positive")
        for mth in self.methods:
            if mth not in ("tkc", "fisher"):
                raise ValueError(f"unknown curvature method {mth!r}")


def generate(config, rep):
    seed = int(np.random.SeedSequence([config.seed, rep]).generate_state(1)[0])
    if config.design == "grouped":
        return gen_grouped(config.m, config.n_j, config.sigma2_u, config.noise, seed)
    if config.design == "crossed":
        return gen_crossed(
            config.m, config.m2, config.n_j, config.sigma2_u, config.sigma2_2, config.noise, seed,
            config.snr_reference,
        )
    return gen_gp(config.n, config.d, config.noise, seed, config.sigma2_u, config.lengthscale)


def _latent_ids(ds, idx):
    if ds.design == "grouped":
        return ds.latent.group[idx]
    if ds.design == "crossed":
        return np.column_stack([ds.latent.group1[idx], ds.latent.group2[idx]])
    return ds.coords[idx]


def _true_theta(config):
    if config.design == "grouped":
        return np.array([config.sigma2_u])
    if config.design == "crossed":
        return np.array([config.sigma2_u, config.sigma2_2])
    ls = default_lengthscale(config.d) if config.lengthscale is None else config.lengthscale
    return np.array([config.sigma2_u, ls])


def run_replication(config, rep):
    """One replication: list of dicts (method, rmse, quantile_loss, runtime_s, theta_error, error)."""
    ds = generate(config, rep)
    tr, te = split_indices(ds.n, config.seed, rep, config.train_fraction)
    X_tr = make_fixed_design(tr.size) if config.intercept else None
    X_te = np.ones((te.size, 1)) if config.intercept else None
    out = []
    for method in config.methods:
        rec = {"rep": rep, "method": method}
        try:
            model = QuantileModel(config.noise.tau, ds.latent.take(tr), X_tr, method, tkc=config.tkc)
            t0 = time.perf_counter()
            res = fit(model, ds.y[tr], config=config.fit)
            q_hat, _ = predict(res, _latent_ids(ds, te), X_te)
            rec["runtime_s"] = time.perf_counter() - t0
            rec["rmse"] = rmse(q_hat, ds.q_true[te])
            rec["quantile_loss"] = quantile_loss(ds.y[te], q_hat, config.noise.tau)
            rec["theta_error"] = float(np.max(np.abs(res.theta_hat - _true_theta(config))))
        except (ValueError, ArithmeticError, np.linalg.LinAlgError, RuntimeError) as exc:
            rec["error"] = f"{type(exc).__name__}: {exc}"
        out.append(rec)
    return out


def _run_many(fn, args, threads):
    threads = available_threads() if threads is None else max(1, int(threads))
    if threads == 1 or len(args) == 1:
        return [fn(*a) for a in args]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, *zip(*args)))


def available_threads():
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


REPORT_COLUMNS = ("design", "noise", "m", "n_j", "method", "metric", "mean", "se", "runtime_s")


@dataclass
class ExperimentReport:
    rows: list
    records: list
    failures: list


def run_experiment(config, threads=None):
    """Replicate generate / split / fit / predict and summarize mean and standard error."""
    per_rep = _run_many(run_replication, [(config, r) for r in range(config.replications)], threads)
    records = sorted((rec for recs in per_rep for rec in recs), key=lambda r: (r["rep"], r["method"]))
    failures = [r for r in records if "error" in r]
    m = config.n if config.design == "gp" else config.m
    n_j = 1 if config.design == "gp" else config.n_j
    rows = []
    for method in config.methods:
        ok = [r for r in records if r["method"] == method and "error" not in r]
        runtime = _mean_se([r["runtime_s"] for r in ok])[0]
        for metric in ("rmse", "quantile_loss", "theta_error"):
            mean, se = _mean_se([r[metric] for r in ok])
            rows.append(
                {
                    "design": config.design, "noise": config.noise.family, "m": m, "n_j": n_j,
                    "method": method, "metric": metric, "mean": mean, "se": se, "runtime_s": runtime,
                }
            )
    return ExperimentReport(rows, records, failures)


# --------------------------------------------------------------------------
# marginal-likelihood accuracy
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class MllCheckConfig:
    m: int = 20
    group_sizes: tuple = (100, 1000)
    tau: float = 0.8
    sigma2_u: float = 1.0
    lam: float = 1.0
    datasets: int = 20
    noise: str = "ald"
    methods: tuple = ("fisher", "tkc")
    seed: int = 0
    oracle: str = "piecewise"


def mll_dataset(config, n_j, k):
    """Dataset k at group size n_j; ALD noise uses the scale ``lam``, Gaussian noise unit variance."""
    rng = np.random.default_rng([config.seed, n_j, k])
    b = math.sqrt(config.sigma2_u) * rng.standard_normal(config.m)
    group = np.repeat(np.arange(config.m), n_j)
    if config.noise == "ald":
        eps = ald_sample(rng, 0.0, config.lam, config.tau, group.size)
    elif config.noise == "gaussian":
        eps = rng.standard_normal(group.size) - stats.norm.ppf(config.tau)
    else:
        raise ValueError("mll check supports 'ald' and 'gaussian' noise")
    return b[group] + eps, GroupedDesign(group, config.m)


def log_relative_error(log_approx, log_exact):
    """|z_approx / z - 1| evaluated in log space."""
    return abs(math.expm1(log_approx - log_exact))


def run_mll_check(config, threads=None):
    """Rows (n_j, dataset, method, log_marginal, oracle, relative_error) at the true hyperparameters."""
    args = [(config, n_j, k) for n_j in config.group_sizes for k in range(config.datasets)]
    rows = _run_many(_mll_one, args, threads)
    return [r for chunk in rows for r in chunk]


def _mll_one(config, n_j, k):
    y, latent = mll_dataset(config, n_j, k)
    theta = np.array([config.sigma2_u])
    beta = np.zeros(0)
    base = QuantileModel(config.tau, latent)
    oracle = exact_log_marginal(base, y, theta, beta, config.lam, method=config.oracle)
    out = []
    for method in config.methods:
        v, _ = laplace_log_marginal(base.with_curvature(method), y, theta, beta, config.lam)
        out.append(
            {
                "n_j": n_j, "dataset": k, "noise": config.noise, "method": method,
                "log_marginal": v, "oracle": oracle, "relative_error": log_relative_error(v, oracle),
                "log_relative_error": abs(v - oracle) / abs(oracle),
            }
        )
    return out


# --------------------------------------------------------------------------
# sandwich coverage
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CoverageConfig:
    m: int = 100
    n_j: int = 100
    tau: float = 0.5
    sigma2_u: float = 1.0
    level: float = 0.9
    replications: int = 10
    noise: tuple = ("gaussian", "student_t2")
    snr: float = 5.0
    fixed_lambda: float = 1.0
    sandwich_scale: str = "as_paper"
    curvature_source: str = "pooled"
    seed: int = 0
    tkc: TkcConfig = field(default_factory=TkcConfig)
    fit: FitConfig = field(default_factory=FitConfig)


def _coverage_one(config, family, rep):
    noise = NoiseSpec(family, config.snr, config.tau)
    seed = int(np.random.SeedSequence([config.seed, NOISE_FAMILIES.index(family), rep]).generate_state(1)[0])
    ds = gen_grouped(config.m, config.n_j, config.sigma2_u, noise, seed)
    model = QuantileModel(config.tau, ds.latent, None, "tkc", tkc=config.tkc)
    res = fit(model, ds.y, config=replace(config.fit, fixed_lambda=config.fixed_lambda))
    b = res.posterior.b_hat
    out = []
    for kind, se in (
        ("sandwich", sandwich_se(res, config.sandwich_scale, config.curvature_source)),
        ("naive", posterior_se(res)),
    ):
        cov = empirical_coverage(wald_bounds(b, se, config.level), ds.b_true)
        out.append(
            {
                "design": "grouped", "noise": family, "interval": kind, "level": config.level,
                "coverage": cov, "mean_se": float(np.mean(se)), "rep": rep, "seed": seed,
            }
        )
    return out


def run_coverage(config, threads=None):
    args = [(config, fam, r) for fam in config.noise for r in range(config.replications)]
    rows = _run_many(_coverage_one, args, threads)
    return [r for chunk in rows for r in chunk]


def summarize(rows, keys, value):
    """Mean and standard error of ``value`` grouped by ``keys``."""
    groups = {}
    for r in rows:
        groups.setdefault(tuple(r[k] for k in keys), []).append(r[value])
    out = []
    for key in sorted(groups):
        mean, se = _mean_se(groups[key])
        out.append(dict(zip(keys, key), mean=mean, se=se, count=len(groups[key])))
    return out


# --------------------------------------------------------------------------
# heteroscedastic CQR design
# --------------------------------------------------------------------------


def gen_cqr_data(n, seed):
    """x with density proportional to x^2 on [0, 2]; y ~ N(5 + sin 5x, sd 1 + 0.6 x)."""
    rng = np.random.default_rng(seed)
    x = 2.0 * rng.uniform(size=n) ** (1.0 / 3.0)
    sd = 1.0 + 0.6 * np.abs(x)
    y = 5.0 + np.sin(5.0 * x) + sd * rng.standard_normal(n)
    return x, y


@dataclass(frozen=True)
class CqrConfig:
    alpha: float = 0.1
    n_train: int = 500
    n_cal: int = 500
    n_test: int = 10000
    n_bins: int = 10
    sigma_kind: str = "sd"
    seed: int = 0
    fit: FitConfig = field(default_factory=lambda: FitConfig(n_restarts=1))

    def __post_init__(self):
        if self.sigma_kind not in ("sd", "variance"):
            raise ValueError("sigma_kind must be 'sd' or 'variance'")


def run_cqr(config):
    """Standard and uncertainty-aware CQR with GP quantile fits at alpha/2 and 1 - alpha/2.

    The local scale is the average latent sd of the two quantile fits (or its
    square with ``sigma_kind="variance"``).
    """
    n_all = config.n_train + config.n_cal + config.n_test
    x, y = gen_cqr_data(n_all, config.seed)
    tr = slice(0, config.n_train)
    ca = slice(config.n_train, config.n_train + config.n_cal)
    te = slice(config.n_train + config.n_cal, n_all)
    preds = []
    for tau in (config.alpha / 2.0, 1.0 - config.alpha / 2.0):
        model = QuantileModel(tau, GpDesign(x[tr]), make_fixed_design(config.n_train), "tkc")
        res = fit(model, y[tr], config=config.fit)
        preds.append(
            {k: predict(res, x[s][:, None], np.ones((x[s].size, 1))) for k, s in (("cal", ca), ("test", te))}
        )
    out = {"alpha": config.alpha, "seed": config.seed}
    for mode in ("standard", "uncertainty_aware"):
        (lo_c, sd_lo_c), (hi_c, sd_hi_c) = preds[0]["cal"], preds[1]["cal"]
        (lo_t, sd_lo_t), (hi_t, sd_hi_t) = preds[0]["test"], preds[1]["test"]
        sig_c = sig_t = None
        if mode == "uncertainty_aware":
            sig_c = 0.5 * (sd_lo_c + sd_hi_c)
            sig_t = 0.5 * (sd_lo_t + sd_hi_t)
            if config.sigma_kind == "variance":
                sig_c, sig_t = sig_c**2, sig_t**2
        cal = cqr_calibrate(y[ca], lo_c, hi_c, config.alpha, sig_c)
        lo, hi = cal.apply(lo_t, hi_t, sig_t)
        _, cov = binned_coverage(x[te], y[te], lo, hi, config.n_bins, (0.0, 2.0))
        out[mode] = {
            "t": cal.t,
            "coverage": float(np.mean((lo <= y[te]) & (y[te] <= hi))),
            "bin_coverage": cov.tolist(),
            "bin_sd": float(np.nanstd(cov)),
            "mean_width": float(np.mean(hi - lo)),
        }
    return out
