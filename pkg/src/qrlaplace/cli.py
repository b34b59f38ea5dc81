"""Command-line interface: ``qrlaplace <command> [options]``.

Commands
--------
simulate   generate a synthetic dataset (data CSV, truth CSV, metadata JSON)
fit        fit a model to a CSV and write the result JSON
predict    quantile estimates and latent sds at new rows, from a fit JSON
benchmark  replicated accuracy experiment, summary CSV
mll-check  Laplace log-marginal against the reference value, CSV
coverage   sandwich / naive interval coverage or CQR coverage, CSV

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""

import argparse
import csv
import json
import math
import os
import sys
from datetime import datetime, timezone
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from . import simulate as sim
from .curvature import DegenerateCurvatureError, TkcConfig
from .design import CrossedDesign, GpDesign, GroupedDesign, SingularCovarianceError
from .laplace import SCHEMA_VERSION, FitConfig, FitError, FitResult, fit, laplace_log_marginal, predict
from .mode import ModeConfig, ModeNotConvergedError
from .model import QuantileModel

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4
NA_TOKENS = {"", "na", "nan", "null", "none", "n/a", "-nan", "+nan"}


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


# --------------------------------------------------------------------------
# configuration schemas
# --------------------------------------------------------------------------


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class TkcSettings(_Strict):
    min_drop_threshold: float = Field(0.1, gt=0)
    grid_base: float = Field(2.0, gt=1)
    k_min: int = -8
    k_max: int = 8

    def build(self):
        return TkcConfig(self.min_drop_threshold, self.grid_base, self.k_min, self.k_max)


class OptimizerSettings(_Strict):
    max_iter: int = Field(200, ge=1)
    n_restarts: int = Field(3, ge=1)
    restart_jitter: float = Field(0.5, ge=0)
    seed: int = 0
    fixed_lambda: Optional[float] = Field(None, gt=0)
    mode_max_iter: int = Field(200, ge=1)
    patience: int = Field(5, ge=1)
    stall_tol: float = Field(1e-2, ge=0)

    def build(self, seed=None):
        return FitConfig(
            max_iter=self.max_iter,
            n_restarts=self.n_restarts,
            restart_jitter=self.restart_jitter,
            seed=self.seed if seed is None else seed,
            fixed_lambda=self.fixed_lambda,
            patience=self.patience,
            stall_tol=self.stall_tol,
            mode=ModeConfig(max_iter=self.mode_max_iter),
        )


class NoiseSettings(_Strict):
    family: Literal["ald", "gaussian", "student_t2", "hetero_gp"] = "gaussian"
    snr: float = Field(5.0, gt=0)
    tau: float = Field(0.5, gt=0, lt=1)

    def build(self, tau=None):
        return sim.NoiseSpec(self.family, self.snr, self.tau if tau is None else tau)


class SimulateConfig(_Strict):
    design: Literal["grouped", "crossed", "gp"] = "grouped"
    m: int = Field(100, ge=1)
    n_j: int = Field(100, ge=1)
    m2: int = Field(50, ge=1)
    sigma2_u: float = Field(1.0, gt=0)
    sigma2_2: float = Field(2.0, gt=0)
    snr_reference: Literal["total", "first"] = "total"
    n: int = Field(1000, ge=2)
    d: int = Field(2, ge=1)
    lengthscale: Optional[float] = Field(None, gt=0)
    noise: NoiseSettings = NoiseSettings()
    seed: int = 0


class FitRunConfig(_Strict):
    design: Literal["grouped", "crossed", "gp"] = "grouped"
    tau: float = Field(0.5, gt=0, lt=1)
    curvature: Literal["fisher", "tkc"] = "tkc"
    alpha: float = Field(1.0, gt=0, le=1)
    response: str = "y"
    covariates: Optional[list[str]] = None
    intercept: bool = True
    group_columns: Optional[list[str]] = None
    coord_columns: Optional[list[str]] = None
    tkc: TkcSettings = TkcSettings()
    optimizer: OptimizerSettings = OptimizerSettings()


class BenchmarkConfig(_Strict):
    design: Literal["grouped", "crossed", "gp"] = "grouped"
    noise: NoiseSettings = NoiseSettings()
    methods: list[Literal["fisher", "tkc"]] = ["tkc", "fisher"]
    replications: int = Field(10, ge=1)
    seed: int = 0
    m: int = Field(100, ge=1)
    n_j: int = Field(100, ge=1)
    sigma2_u: float = Field(1.0, gt=0)
    m2: int = Field(50, ge=1)
    sigma2_2: float = Field(2.0, gt=0)
    snr_reference: Literal["total", "first"] = "total"
    n: int = Field(1000, ge=2)
    d: int = Field(2, ge=1)
    lengthscale: Optional[float] = Field(None, gt=0)
    intercept: bool = True
    tkc: TkcSettings = TkcSettings()
    optimizer: OptimizerSettings = OptimizerSettings()


class MllCheckSettings(_Strict):
    m: int = Field(20, ge=1)
    group_sizes: list[int] = [100, 1000]
    tau: float = Field(0.8, gt=0, lt=1)
    sigma2_u: float = Field(1.0, gt=0)
    lam: float = Field(1.0, gt=0)
    datasets: int = Field(20, ge=1)
    noise: Literal["ald", "gaussian"] = "ald"
    methods: list[Literal["fisher", "tkc"]] = ["fisher", "tkc"]
    seed: int = 0
    oracle: Literal["piecewise", "agh", "trapezoid"] = "piecewise"


class CoverageSettings(_Strict):
    experiment: Literal["sandwich", "cqr"] = "sandwich"
    m: int = Field(100, ge=1)
    n_j: int = Field(100, ge=1)
    tau: float = Field(0.5, gt=0, lt=1)
    sigma2_u: float = Field(1.0, gt=0)
    level: float = Field(0.9, gt=0, lt=1)
    replications: int = Field(10, ge=1)
    noise: list[Literal["ald", "gaussian", "student_t2"]] = ["gaussian", "student_t2"]
    snr: float = Field(5.0, gt=0)
    fixed_lambda: Optional[float] = Field(1.0, gt=0)
    sandwich_scale: Literal["as_paper", "density_scale"] = "as_paper"
    curvature_source: Literal["pooled", "group"] = "pooled"
    seed: int = 0
    # CQR
    alpha: float = Field(0.1, gt=0, lt=1)
    n_train: int = Field(500, ge=2)
    n_cal: int = Field(500, ge=1)
    n_test: int = Field(10000, ge=1)
    n_bins: int = Field(10, ge=1)
    sigma_kind: Literal["sd", "variance"] = "sd"
    tkc: TkcSettings = TkcSettings()
    optimizer: OptimizerSettings = OptimizerSettings()


# --------------------------------------------------------------------------
# I/O helpers
# --------------------------------------------------------------------------


def _format_validation(exc, path):
    parts = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        parts.append(f"{loc}: {err['msg']}")
    return f"{path}: invalid configuration: " + "; ".join(parts)


def load_config(schema, path, overrides=None):
    raw = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be a JSON object")
    raw = _merge(raw, overrides or {})
    try:
        return schema.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(_format_validation(exc, path or "<defaults>")) from exc


def _merge(base, overrides):
    out = dict(base)
    for key, value in overrides.items():
        if value is None:
            continue
        if isinstance(value, dict):
            out[key] = _merge(out.get(key, {}) if isinstance(out.get(key), dict) else {}, value)
        else:
            out[key] = value
    return out


def read_csv(path):
    """Read a headed CSV into {column: list of strings}; NA values are rejected."""
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, a header row is required") from None
        header = [h.strip() for h in header]
        if len(set(header)) != len(header) or any(not h for h in header):
            raise DataError(f"{path}: line 1: header has empty or duplicate column names")
        cols = {h: [] for h in header}
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: line {line}: expected {len(header)} fields, found {len(row)}")
            for h, v in zip(header, row):
                v = v.strip()
                if v.lower() in NA_TOKENS:
                    raise DataError(f"{path}: line {line}: missing value in column {h!r}")
                cols[h].append(v)
    if not cols[header[0]]:
        raise DataError(f"{path}: no data rows")
    return cols


def _as_float(cols, name, path):
    if name not in cols:
        raise DataError(f"{path}: missing column {name!r}")
    out = np.empty(len(cols[name]))
    for i, v in enumerate(cols[name]):
        try:
            out[i] = float(v)
        except ValueError:
            raise DataError(f"{path}: line {i + 2}: column {name!r}: not a number: {v!r}") from None
        if not math.isfinite(out[i]):
            raise DataError(f"{path}: line {i + 2}: column {name!r}: non-finite value")
    return out


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, columns, rows):
    _ensure_parent(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c, "")) for c in columns])


def write_json(path, obj):
    _ensure_parent(path)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def _ensure_parent(path):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


def _stamp(doc, args):
    if not args.no_timestamp:
        doc["timestamp"] = datetime.now(timezone.utc).isoformat(timespec="seconds")
    return doc


_VOLATILE = ("wall_time_s", "runtime_s")


def _strip_volatile(obj, args):
    """Drop wall-clock fields when --no-timestamp asks for reproducible output."""
    if not args.no_timestamp:
        return obj
    if isinstance(obj, dict):
        return {k: _strip_volatile(v, args) for k, v in obj.items() if k not in _VOLATILE}
    if isinstance(obj, list):
        return [_strip_volatile(v, args) for v in obj]
    return obj


def _require(value, flag):
    if value is None:
        raise ConfigError(f"{flag} is required")
    return value


# --------------------------------------------------------------------------
# dataset <-> model
# --------------------------------------------------------------------------


def _default_groups(design, header):
    if design == "grouped":
        return ["group1"] if "group1" in header else ["group"]
    return ["group1", "group2"]


def _covariate_columns(cfg, header):
    if cfg.covariates is not None:
        return list(cfg.covariates)
    return sorted((h for h in header if h[:1] == "x" and h[1:].isdigit()), key=lambda h: int(h[1:]))


def build_model(cfg, cols, path, levels=None):
    """Model and response from CSV columns.

    ``levels`` maps stored group labels to ids (prediction against a fit);
    when absent, levels are taken from the data.
    """
    header = list(cols)
    y = _as_float(cols, cfg.response, path)
    n = y.size
    X = [np.ones(n)] if cfg.intercept else []
    X += [_as_float(cols, c, path) for c in _covariate_columns(cfg, header)]
    X = np.column_stack(X) if X else None
    new_levels = []
    if cfg.design in ("grouped", "crossed"):
        gcols = cfg.group_columns or _default_groups(cfg.design, header)
        want = 1 if cfg.design == "grouped" else 2
        if len(gcols) != want:
            raise ConfigError(f"group_columns: {cfg.design} designs need {want} grouping column(s)")
        ids = []
        for k, gc in enumerate(gcols):
            if gc not in cols:
                raise DataError(f"{path}: missing grouping column {gc!r}")
            lab = np.asarray(cols[gc])
            if levels is None:
                lev, idx = np.unique(lab, return_inverse=True)
                new_levels.append(lev.tolist())
                ids.append((idx.astype(np.int64), lev.size))
            else:
                lookup = {v: i for i, v in enumerate(levels[k])}
                ids.append((np.array([lookup.get(v, -1) for v in lab], dtype=np.int64), len(levels[k])))
        if levels is not None:
            return y, X, ids
        latent = (
            GroupedDesign(ids[0][0], ids[0][1])
            if cfg.design == "grouped"
            else CrossedDesign(ids[0][0], ids[1][0], ids[0][1], ids[1][1])
        )
    else:
        ccols = cfg.coord_columns or sorted(
            (h for h in header if h.startswith("coord") and h[5:].isdigit()), key=lambda h: int(h[5:])
        )
        if not ccols:
            raise DataError(f"{path}: no coordinate columns (coord1, coord2, ...) found")
        coords = np.column_stack([_as_float(cols, c, path) for c in ccols])
        if levels is not None:
            return y, X, coords
        latent = GpDesign(coords)
    model = QuantileModel(cfg.tau, latent, X, cfg.curvature, cfg.alpha, tkc=cfg.tkc.build())
    return model, y, new_levels


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_simulate(args):
    cfg = load_config(
        SimulateConfig, args.config, {"seed": args.seed, "noise": {"tau": args.tau}}
    )
    out = _require(args.out, "--out")
    noise = cfg.noise.build()
    if cfg.design == "grouped":
        ds = sim.gen_grouped(cfg.m, cfg.n_j, cfg.sigma2_u, noise, cfg.seed)
        data_cols = {"group1": ds.latent.group}
    elif cfg.design == "crossed":
        ds = sim.gen_crossed(cfg.m, cfg.m2, cfg.n_j, cfg.sigma2_u, cfg.sigma2_2, noise, cfg.seed, cfg.snr_reference)
        data_cols = {"group1": ds.latent.group1, "group2": ds.latent.group2}
    else:
        ds = sim.gen_gp(cfg.n, cfg.d, noise, cfg.seed, cfg.sigma2_u, cfg.lengthscale)
        data_cols = {f"coord{k + 1}": ds.coords[:, k] for k in range(cfg.d)}
    os.makedirs(out, exist_ok=True)
    names = ["y"] + list(data_cols)
    rows = [{"y": ds.y[i], **{k: v[i] for k, v in data_cols.items()}} for i in range(ds.n)]
    write_csv(os.path.join(out, "data.csv"), names, rows)
    zb = ds.latent.gather(ds.b_true)
    write_csv(
        os.path.join(out, "truth.csv"),
        ["b_true", "q_true"],
        [{"b_true": zb[i], "q_true": ds.q_true[i]} for i in range(ds.n)],
    )
    meta = {
        "schema_version": SCHEMA_VERSION,
        "config": cfg.model_dump(),
        "generator_seed": ds.seed,
        "n": ds.n,
        "b_true": ds.b_true.tolist(),
    }
    write_json(os.path.join(out, "meta.json"), _stamp(meta, args))
    return EXIT_OK


def cmd_fit(args):
    cfg = load_config(FitRunConfig, args.config, {"tau": args.tau, "curvature": args.curvature})
    data = _require(args.data, "--data")
    out = _require(args.out, "--out")
    cols = read_csv(data)
    try:
        model, y, levels = build_model(cfg, cols, data)
    except ValueError as exc:
        raise DataError(f"{data}: {exc}") from exc
    base = {
        "schema_version": SCHEMA_VERSION,
        "data_path": os.path.abspath(data),
        "config": cfg.model_dump(),
        "levels": levels,
    }
    try:
        res = fit(model, y, config=cfg.optimizer.build(args.seed))
    except NUMERICAL_ERRORS as exc:
        doc = dict(base, status="error", error=f"{type(exc).__name__}: {exc}")
        write_json(out, _stamp(doc, args))
        raise
    doc = dict(base, status="ok", **res.to_dict())
    doc["b_hat"] = res.posterior.b_hat.tolist()
    write_json(out, _stamp(_strip_volatile(doc, args), args))
    return EXIT_OK


def load_fit(fit_path):
    """Rebuild a FitResult from its JSON by refitting the posterior at the stored hyperparameters."""
    try:
        with open(fit_path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {fit_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{fit_path}: line {exc.lineno}: {exc.msg}") from exc
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"{fit_path}: unsupported schema_version {doc.get('schema_version')!r}")
    if doc.get("status") != "ok":
        raise ConfigError(f"{fit_path}: the stored fit did not succeed")
    try:
        cfg = FitRunConfig.model_validate(doc["config"])
    except (KeyError, ValidationError) as exc:
        raise ConfigError(f"{fit_path}: malformed fit document: {exc}") from exc
    cols = read_csv(doc["data_path"])
    model, y, _ = build_model(cfg, cols, doc["data_path"])
    theta = np.array([doc["theta_hat"][k] for k in model.latent.theta_names])
    beta = np.asarray(doc["beta_hat"], dtype=float)
    lam = float(doc["lambda_hat"])
    _, post = laplace_log_marginal(model, y, theta, beta, lam)
    res = FitResult(model, y, theta, beta, lam, post, list(doc.get("trace", [])), bool(doc.get("converged")))
    return res, cfg, doc


def cmd_predict(args):
    fit_path = _require(args.fit, "--fit")
    data = _require(args.data, "--data")
    out = _require(args.out, "--out")
    res, cfg, doc = load_fit(fit_path)
    cols = read_csv(data)
    if cfg.response not in cols:
        # prediction rows need no response
        cols[cfg.response] = ["0"] * len(next(iter(cols.values())))
    _, X, ids = build_model(cfg, cols, data, levels=doc["levels"] or [[]])
    if cfg.design == "grouped":
        new = ids[0][0]
    elif cfg.design == "crossed":
        new = np.column_stack([ids[0][0], ids[1][0]])
    else:
        new = ids
    try:
        q, sd = predict(res, new, X)
    except ValueError as exc:
        raise DataError(f"{data}: {exc}") from exc
    write_csv(out, ["quantile_estimate", "latent_sd"], [{"quantile_estimate": a, "latent_sd": b} for a, b in zip(q, sd)])
    return EXIT_OK


def cmd_benchmark(args):
    cfg = load_config(BenchmarkConfig, args.config, {"seed": args.seed, "noise": {"tau": args.tau}})
    out = _require(args.out, "--out")
    methods = [args.curvature] if args.curvature else cfg.methods
    exp = sim.ExperimentConfig(
        design=cfg.design, noise=cfg.noise.build(), methods=tuple(methods),
        replications=cfg.replications, seed=cfg.seed, m=cfg.m, n_j=cfg.n_j, sigma2_u=cfg.sigma2_u,
        m2=cfg.m2, sigma2_2=cfg.sigma2_2, snr_reference=cfg.snr_reference, n=cfg.n, d=cfg.d, lengthscale=cfg.lengthscale,
        intercept=cfg.intercept, tkc=cfg.tkc.build(), fit=cfg.optimizer.build(),
    )
    rep = sim.run_experiment(exp, threads=args.threads)
    cols = [c for c in sim.REPORT_COLUMNS if not (args.no_timestamp and c == "runtime_s")]
    write_csv(out, cols, rep.rows)
    for f in rep.failures:
        print(f"replication {f['rep']} ({f['method']}) failed: {f['error']}", file=sys.stderr)
    return EXIT_OK


def cmd_mll_check(args):
    cfg = load_config(MllCheckSettings, args.config, {"seed": args.seed, "tau": args.tau})
    out = _require(args.out, "--out")
    methods = [args.curvature] if args.curvature else cfg.methods
    conf = sim.MllCheckConfig(
        m=cfg.m, group_sizes=tuple(cfg.group_sizes), tau=cfg.tau, sigma2_u=cfg.sigma2_u, lam=cfg.lam,
        datasets=cfg.datasets, noise=cfg.noise, methods=tuple(methods), seed=cfg.seed, oracle=cfg.oracle,
    )
    rows = sim.run_mll_check(conf, threads=args.threads)
    write_csv(out, ["n_j", "dataset", "noise", "method", "log_marginal", "oracle", "relative_error"], rows)
    return EXIT_OK


def cmd_coverage(args):
    cfg = load_config(CoverageSettings, args.config, {"seed": args.seed, "tau": args.tau})
    out = _require(args.out, "--out")
    fitc = cfg.optimizer.build()
    if cfg.experiment == "cqr":
        res = sim.run_cqr(
            sim.CqrConfig(cfg.alpha, cfg.n_train, cfg.n_cal, cfg.n_test, cfg.n_bins, cfg.sigma_kind, cfg.seed, fitc)
        )
        rows = []
        for mode in ("standard", "uncertainty_aware"):
            r = res[mode]
            base = {"mode": mode, "level": 1 - cfg.alpha, "seed": cfg.seed, "t": r["t"]}
            rows.append(dict(base, bin="all", coverage=r["coverage"]))
            rows += [dict(base, bin=k, coverage=c) for k, c in enumerate(r["bin_coverage"])]
        write_csv(out, ["mode", "level", "seed", "t", "bin", "coverage"], rows)
        return EXIT_OK
    conf = sim.CoverageConfig(
        m=cfg.m, n_j=cfg.n_j, tau=cfg.tau, sigma2_u=cfg.sigma2_u, level=cfg.level,
        replications=cfg.replications, noise=tuple(cfg.noise), snr=cfg.snr, fixed_lambda=cfg.fixed_lambda,
        sandwich_scale=cfg.sandwich_scale, curvature_source=cfg.curvature_source, seed=cfg.seed,
        tkc=cfg.tkc.build(), fit=fitc,
    )
    rows = sim.run_coverage(conf, threads=args.threads)
    write_csv(out, ["design", "noise", "interval", "level", "coverage", "mean_se", "rep", "seed"], rows)
    return EXIT_OK


NUMERICAL_ERRORS = (
    FitError,
    ModeNotConvergedError,
    SingularCovarianceError,
    DegenerateCurvatureError,
    np.linalg.LinAlgError,
    FloatingPointError,
    ArithmeticError,
)

COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "benchmark": cmd_benchmark,
    "mll-check": cmd_mll_check,
    "coverage": cmd_coverage,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="qrlaplace", description="Laplace-approximated quantile regression")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--data", help="input CSV")
        p.add_argument("--out", help="output path (a directory for simulate)")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int, help="worker processes (default: available CPUs)")
        p.add_argument("--curvature", choices=("fisher", "tkc"))
        p.add_argument("--tau", type=float)
        p.add_argument("--no-timestamp", action="store_true", help="omit timestamps and wall-clock fields")
        if name == "predict":
            p.add_argument("--fit", help="fit JSON written by the fit command")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.threads is not None and args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
