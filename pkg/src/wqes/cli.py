"""Batch entry point: read a JSON run file, run one command, write CSV artifacts.

Returns are daily log-returns in percent (a 1% move is ``1.0``).

Run file schema (paths are relative to the run file)::

    {
      "command": "simulate" | "fit" | "backtest" | "mcs" | "weights-plot",
      "output_dir": "out",
      "seed": 0,
      "alpha": 0.025,
      "workers": 1,
      "data": ["spx.csv", "ftse.csv"],
      "models": ["WQ-Beta-3-SAV", {"variant": "SA-BC", "M": 5, "alpha1": 0.01, "spec": "AS"}],
      "alpha1": 0.005,
      "rolling": {"in_sample_n": 1500, "out_sample_m": 400, "refit_interval": 20},
      "multistart": {"n_candidates": 1000, "n_refine": 2},
      "simulation": {"form": "AV_GARCH_T", "n_reps": 200, "n": 1900,
                     "variants": ["WQ-Beta", "SA-BC"], "M": [3], "alpha1": [0.015]},
      "mcs": {"level": 0.75, "methods": ["R", "SQ"], "n_boot": 1000,
              "block_length": null, "forecast_dir": null},
      "weights_plot": {"shapes": [[1, 4], [2, 3]], "n_points": 101}
    }

Exit status is 0 on success, 1 for invalid input and 2 for numerical
failures. Errors are written to stderr as one JSON object. ``WQES_WORKERS``
overrides ``workers``.
"""
from __future__ import annotations

import argparse
import csv
import datetime as dt
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from . import backtest as bt
from .core import BetaWeightParams, DomainError, beta_weight
from .optimize import MultiStartConfig, OptimizationError
from .simulate import DgpForm, DgpSpec, run_bias_study
from .wq import EsTag

logger = logging.getLogger(__name__)

COMMANDS = ("simulate", "fit", "backtest", "mcs", "weights-plot")
NUMBER_FORMAT = "%.10g"


class ConfigError(ValueError):
    """Invalid run file or input data."""


class ParseError(ConfigError):
    """Malformed returns file."""


# --------------------------------------------------------------------------
# input data


@dataclass
class ReturnSeries:
    name: str
    dates: list
    values: np.ndarray

    def __len__(self):
        return self.values.size


def _parse_date(text: str):
    try:
        return dt.date.fromisoformat(text)
    except ValueError:
        return None


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def load_returns(path) -> ReturnSeries:
    """Read a ``date,return`` CSV with a header row.

    Dates must be strictly increasing. ISO dates are compared as dates and
    anything else as text.
    """
    path = Path(path)
    if not path.is_file():
        raise ParseError(f"{path}: file not found")
    dates, values = [], []
    prev_key = None
    with open(path, newline="", encoding="utf-8-sig") as fh:
        rows = csv.reader(fh)
        header = next(rows, None)
        if header is not None:
            if len(header) != 2 or _is_number(header[1]):
                raise ParseError(f"{path}:1: expected header 'date,return', got {header!r}")
        for lineno, row in enumerate(rows, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise ParseError(f"{path}:{lineno}: expected 2 fields, got {len(row)}")
            date, raw = row[0].strip(), row[1].strip()
            try:
                value = float(raw)
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-numeric return {raw!r}") from None
            if not np.isfinite(value):
                raise ParseError(f"{path}:{lineno}: non-finite return {raw!r}")
            key = _parse_date(date) or date
            if prev_key is not None:
                if type(key) is not type(prev_key):
                    raise ParseError(f"{path}:{lineno}: mixed date formats ({date!r})")
                if key <= prev_key:
                    raise ParseError(f"{path}:{lineno}: date {date!r} is not after the previous row")
            prev_key = key
            dates.append(date)
            values.append(value)
    if not values:
        raise ParseError(f"{path}: no data rows")
    return ReturnSeries(path.stem, dates, np.array(values))


def write_returns(path, series: ReturnSeries) -> None:
    _write_csv(path, ["date", "return"], zip(series.dates, series.values))


# --------------------------------------------------------------------------
# run configuration


@dataclass
class ModelEntry:
    name: str
    alpha1: float

    @property
    def spec(self) -> bt.ModelSpec:
        return bt.parse_model(self.name, self.alpha1)


@dataclass
class RunConfig:
    command: str
    output_dir: Path
    seed: int = 0
    alpha: float = 0.025
    workers: int = 1
    data: list = field(default_factory=list)
    models: list = field(default_factory=list)
    rolling: Optional[bt.RollingConfig] = None
    multistart: MultiStartConfig = MultiStartConfig(n_candidates=1000)
    simulation: dict = field(default_factory=dict)
    mcs: dict = field(default_factory=dict)
    weights_plot: dict = field(default_factory=dict)


def _model_entry(item, default_alpha1: float) -> ModelEntry:
    if isinstance(item, str):
        entry = ModelEntry(item, default_alpha1)
    elif isinstance(item, dict):
        a1 = float(item.get("alpha1", default_alpha1))
        if "name" in item:
            entry = ModelEntry(str(item["name"]), a1)
        else:
            try:
                name = f"{item['variant']}-{int(item['M'])}-{item.get('spec', 'SAV')}"
            except KeyError as exc:
                raise ConfigError(f"model entry {item!r} lacks {exc.args[0]!r}") from None
            entry = ModelEntry(name, a1)
    else:
        raise ConfigError(f"cannot read model entry {item!r}")
    try:
        entry.spec
    except (ValueError, DomainError) as exc:
        raise ConfigError(str(exc)) from None
    return entry


def _check_grid(alpha: float, alpha1: float, M: int, what: str) -> None:
    if not 0 < alpha1 < alpha:
        raise ConfigError(f"{what}: alpha1={alpha1} must lie in (0, alpha={alpha})")
    if M < 2:
        raise ConfigError(f"{what}: M={M} must be at least 2")


def parse_config(raw: dict, base_dir=".") -> RunConfig:
    """Validate a decoded run file. Nothing is computed here."""
    if not isinstance(raw, dict):
        raise ConfigError("run file must hold a JSON object")
    base = Path(base_dir)
    command = raw.get("command")
    if command not in COMMANDS:
        raise ConfigError(f"command must be one of {COMMANDS}, got {command!r}")
    alpha = float(raw.get("alpha", 0.025))
    if not 0 < alpha < 0.5:
        raise ConfigError(f"alpha={alpha} must lie in (0, 0.5)")
    default_a1 = float(raw.get("alpha1", 0.005))
    cfg = RunConfig(
        command=command,
        output_dir=base / raw.get("output_dir", "out"),
        seed=int(raw.get("seed", 0)),
        alpha=alpha,
        workers=int(raw.get("workers", 1)),
    )
    env = os.environ.get("WQES_WORKERS")
    if env:
        cfg.workers = int(env)
    if cfg.workers < 1:
        raise ConfigError("workers must be at least 1")

    data = raw.get("data", [])
    if isinstance(data, str):
        data = [data]
    cfg.data = [base / p for p in data]
    for p in cfg.data:
        if not p.is_file():
            raise ConfigError(f"data file {p} does not exist")

    cfg.models = [_model_entry(m, default_a1) for m in raw.get("models", [])]
    for m in cfg.models:
        spec = m.spec
        if spec.kind == "wq":
            _check_grid(alpha, spec.alpha1, spec.M, m.name)
    names = [m.name.upper() for m in cfg.models]
    if len(set(names)) != len(names):
        raise ConfigError("model names must be unique")

    ms = dict(raw.get("multistart", {}))
    ms.setdefault("n_candidates", 1000)
    ms.setdefault("rng_seed", cfg.seed)
    try:
        cfg.multistart = MultiStartConfig(**ms)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"multistart: {exc}") from None

    if "rolling" in raw:
        try:
            cfg.rolling = bt.RollingConfig(**raw["rolling"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"rolling: {exc}") from None

    cfg.simulation = dict(raw.get("simulation", {}))
    cfg.mcs = dict(raw.get("mcs", {}))
    cfg.weights_plot = dict(raw.get("weights_plot", {}))

    if command == "simulate":
        sim = cfg.simulation
        try:
            tags = [EsTag.parse(v) for v in sim.get("variants", [t.value for t in EsTag])]
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        sim["variants"] = tags
        sim["M"] = [int(v) for v in sim.get("M", [3])]
        sim["alpha1"] = [float(v) for v in sim.get("alpha1", [0.015])]
        for M in sim["M"]:
            for a1 in sim["alpha1"]:
                _check_grid(alpha, a1, M, "simulation")
    if command in ("fit", "backtest", "mcs"):
        if not cfg.data:
            raise ConfigError(f"{command} needs at least one data file")
        if not cfg.models:
            raise ConfigError(f"{command} needs at least one model")
    if command in ("backtest", "mcs") and cfg.rolling is None:
        raise ConfigError(f"{command} needs a 'rolling' section")
    if command == "mcs":
        methods = [str(v).upper() for v in cfg.mcs.get("methods", ["R", "SQ"])]
        if not set(methods) <= {"R", "SQ"}:
            raise ConfigError(f"unknown MCS method in {methods}")
        cfg.mcs["methods"] = methods
        level = float(cfg.mcs.get("level", 0.75))
        if not 0 < level < 1:
            raise ConfigError("mcs level must lie in (0, 1)")
        fdir = cfg.mcs.get("forecast_dir")
        cfg.mcs["forecast_dir"] = base / fdir if fdir else cfg.output_dir / "forecasts"
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"run file {path} not found")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return parse_config(raw, path.parent)


# --------------------------------------------------------------------------
# output helpers


def fmt(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return NUMBER_FORMAT % x
    return str(x)


def round_sig(x):
    """Round to the precision written to disk, so reloaded values match exactly."""
    arr = np.asarray(x, dtype=float)
    out = np.array([float(NUMBER_FORMAT % v) for v in arr.ravel()]).reshape(arr.shape)
    return out if arr.ndim else float(out)


def _write_csv(path, header: Sequence[str], rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def forecast_path(directory, series: str, model: str) -> Path:
    return Path(directory) / f"{series}__{model}.csv"


def write_forecast(path, dates, var, es) -> Path:
    return _write_csv(path, ["date", "var", "es"], zip(dates, var, es))


def read_forecast(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"forecast file {path} not found")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["date", "var", "es"]:
        raise ParseError(f"{path}:1: expected header 'date,var,es'")
    try:
        dates = [r[0] for r in rows[1:]]
        var = np.array([float(r[1]) for r in rows[1:]])
        es = np.array([float(r[2]) for r in rows[1:]])
    except (IndexError, ValueError) as exc:
        raise ParseError(f"{path}: malformed row ({exc})") from None
    return dates, var, es


# --------------------------------------------------------------------------
# commands


def weights_plot_rows(shapes, n_points: int = 101, normalize: bool = True):
    """(a, b, x, weight) rows on an equally spaced grid over [0, 1].

    With ``normalize`` each curve sums to one over the grid.
    """
    x = np.linspace(0.0, 1.0, n_points)
    rows = []
    for a, b in shapes:
        with np.errstate(divide="ignore"):
            w = beta_weight(x, BetaWeightParams(float(a), float(b)))
        if normalize:
            finite = np.isfinite(w)
            total = w[finite].sum()
            if not total > 0:
                raise DomainError(f"weights for a={a}, b={b} do not sum to a positive value")
            w = np.where(finite, w / total, w)
        rows.extend((float(a), float(b), xi, wi) for xi, wi in zip(x, w))
    return rows


def cmd_weights_plot(cfg: RunConfig) -> list:
    wp = cfg.weights_plot
    shapes = wp.get("shapes", [[1, 4], [1, 8], [4, 1], [8, 1], [2, 5], [5, 2], [3, 3], [6, 6]])
    rows = weights_plot_rows(shapes, int(wp.get("n_points", 101)), bool(wp.get("normalize", True)))
    return [_write_csv(cfg.output_dir / "weights_plot.csv", ["a", "b", "x", "weight"], rows)]


def cmd_simulate(cfg: RunConfig) -> list:
    sim = cfg.simulation
    spec_kw = {k: sim[k] for k in ("omega", "gamma", "delta", "nu", "n", "n_reps") if k in sim}
    spec = DgpSpec(form=DgpForm(sim.get("form", "AV_GARCH_T")), rng_seed=cfg.seed, **spec_kw)
    report = run_bias_study(
        spec, sim["variants"], sim["M"], sim["alpha1"], cfg.alpha,
        caviar_cfg=cfg.multistart, workers=cfg.workers,
    )
    out = [_write_csv(
        cfg.output_dir / "bias_table.csv",
        ["variant", "M", "alpha1", "var_delta", "es_delta"],
        [(r["variant"], r["M"], r["alpha1"], r["var_delta"], r["es_delta"]) for r in report.rows],
    )]
    hist_rows, raw_rows = [], []
    for (M, a1), W in sorted(report.beta_weights.items()):
        edges = np.linspace(0.0, max(1.0, float(W.max())), 21)
        for j in range(W.shape[1]):
            counts, _ = np.histogram(W[:, j], bins=edges)
            hist_rows.extend((M, a1, j + 1, lo, hi, c) for lo, hi, c in zip(edges[:-1], edges[1:], counts))
        ab = report.beta_params[(M, a1)]
        for k in range(W.shape[0]):
            raw_rows.extend((M, a1, k, ab[k, 0], ab[k, 1], j + 1, W[k, j]) for j in range(W.shape[1]))
    if hist_rows:
        out.append(_write_csv(cfg.output_dir / "weight_histogram.csv",
                              ["M", "alpha1", "level", "bin_lo", "bin_hi", "count"], hist_rows))
        out.append(_write_csv(cfg.output_dir / "beta_weights.csv",
                              ["M", "alpha1", "rep", "a", "b", "level", "weight"], raw_rows))
    out.append(_write_csv(
        cfg.output_dir / "bias_summary.csv",
        ["n_ok", "n_failed", "true_var_mean", "true_es_mean", "var_delta"],
        [(report.n_ok, report.n_failed, report.true_var_mean, report.true_es_mean, report.var_delta)],
    ))
    return out


def cmd_fit(cfg: RunConfig) -> list:
    rows = []
    for path in cfg.data:
        series = load_returns(path)
        r = series.values
        if cfg.rolling is not None:
            r = r[-cfg.rolling.in_sample_n:]
        for m in cfg.models:
            fitted = bt.fit_model(m.spec, r, cfg.alpha, cfg.multistart)
            var, es = fitted.forecast_from(r)
            rows.append((series.name, m.name, r.size, var, es))
    return [_write_csv(cfg.output_dir / "fit_summary.csv",
                       ["series", "model", "n", "var_forecast", "es_forecast"], rows)]


def _one_backtest(job):
    r, entry, rolling, alpha, ms = job
    return bt.rolling_forecast(r, entry.spec, rolling, alpha, ms)


def loss_summary_rows(table: dict, models: Sequence[str], series: Sequence[str]):
    """``table[(series, model)]`` -> rows of (model, per-series loss..., avg loss, avg rank).

    Ranks are taken within each series (1 = smallest loss, ties averaged).
    """
    L = np.array([[table[(s, m)] for s in series] for m in models])
    ranks = np.column_stack([rankdata(L[:, j]) for j in range(L.shape[1])])
    return [
        (m, *L[i], L[i].mean(), ranks[i].mean()) for i, m in enumerate(models)
    ]


def cmd_backtest(cfg: RunConfig) -> list:
    rolling = cfg.rolling
    fdir = cfg.output_dir / "forecasts"
    out = []
    qtable, jtable, names = {}, {}, []
    for path in cfg.data:
        series = load_returns(path)
        n, m = rolling.in_sample_n, rolling.out_sample_m
        if n + m > len(series):
            raise ConfigError(f"{path}: need {n + m} returns, file has {len(series)}")
        r = series.values
        r_out = r[n:n + m]
        dates = series.dates[n:n + m]
        names.append(series.name)
        jobs = [(r, e, rolling, cfg.alpha, cfg.multistart) for e in cfg.models]
        if cfg.workers > 1:
            from concurrent.futures import ProcessPoolExecutor
            with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
                results = list(pool.map(_one_backtest, jobs))
        else:
            results = [_one_backtest(j) for j in jobs]
        for entry, fc in zip(cfg.models, results):
            var, es = round_sig(fc.var), round_sig(fc.es)
            out.append(write_forecast(forecast_path(fdir, series.name, entry.name), dates, var, es))
            qtable[(series.name, entry.name)] = bt.aggregate_quantile_loss(r_out, var, cfg.alpha)
            jtable[(series.name, entry.name)] = bt.aggregate_joint_loss(r_out, var, es, cfg.alpha)
            if fc.failures:
                logger.warning("%s/%s: %d refits failed", series.name, entry.name, len(fc.failures))
    models = [e.name for e in cfg.models]
    header = ["model", *names, "avg_loss", "avg_rank"]
    out.append(_write_csv(cfg.output_dir / "loss_summary_quantile.csv", header,
                          loss_summary_rows(qtable, models, names)))
    out.append(_write_csv(cfg.output_dir / "loss_summary_joint.csv", header,
                          loss_summary_rows(jtable, models, names)))
    return out


def load_loss_matrix(series: ReturnSeries, models: Sequence[str], forecast_dir,
                     rolling: bt.RollingConfig, alpha: float) -> bt.LossMatrix:
    """Joint-loss matrix (m x K) rebuilt from forecast files."""
    n, m = rolling.in_sample_n, rolling.out_sample_m
    r_out = series.values[n:n + m]
    dates = series.dates[n:n + m]
    cols = []
    for name in models:
        path = forecast_path(forecast_dir, series.name, name)
        fdates, var, es = read_forecast(path)
        if fdates != dates:
            raise ConfigError(f"{path}: dates do not match the evaluation window of {series.name}")
        cols.append(bt.joint_loss_series(r_out, var, es, alpha))
    return bt.LossMatrix(np.column_stack(cols), list(models))


def cmd_mcs(cfg: RunConfig) -> list:
    opts = cfg.mcs
    methods = opts["methods"]
    level = float(opts.get("level", 0.75))
    n_boot = int(opts.get("n_boot", 1000))
    bl = opts.get("block_length")
    models = [e.name for e in cfg.models]
    member = {m: {} for m in models}
    prow, names = [], []
    for path in cfg.data:
        series = load_returns(path)
        names.append(series.name)
        lm = load_loss_matrix(series, models, opts["forecast_dir"], cfg.rolling, cfg.alpha)
        for meth in methods:
            res = bt.mcs(lm, level, meth, int(bl) if bl else None, n_boot, cfg.seed)
            for name in models:
                member[name][(series.name, meth)] = int(name in res.included)
                prow.append((series.name, meth, name, res.pvalues[name]))
    header = ["model"] + [f"{s}_{meth}" for s in names for meth in methods]
    header += [f"{meth}_total" for meth in methods]
    rows = []
    for name in models:
        cells = [member[name][(s, meth)] for s in names for meth in methods]
        totals = [sum(member[name][(s, meth)] for s in names) for meth in methods]
        rows.append((name, *cells, *totals))
    return [
        _write_csv(cfg.output_dir / "mcs_table.csv", header, rows),
        _write_csv(cfg.output_dir / "mcs_pvalues.csv", ["series", "method", "model", "pvalue"], prow),
    ]


HANDLERS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "backtest": cmd_backtest,
    "mcs": cmd_mcs,
    "weights-plot": cmd_weights_plot,
}


def run(cfg: RunConfig) -> list:
    """Execute ``cfg.command``; returns the paths written."""
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    return HANDLERS[cfg.command](cfg)


def _error(kind: str, exc: BaseException, code: int) -> int:
    payload = {"status": "error", "kind": kind, "type": type(exc).__name__, "message": str(exc)}
    diag = getattr(exc, "diagnostics", None)
    if diag:
        payload["diagnostics"] = {k: v for k, v in diag.items() if isinstance(v, (int, float, str))}
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    ap = argparse.ArgumentParser(prog="wqes", description=__doc__.splitlines()[0])
    ap.add_argument("config", help="JSON run file")
    ap.add_argument("--command", choices=COMMANDS, help="override the run file's command")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        path = Path(args.config)
        if args.command:
            raw = json.loads(path.read_text(encoding="utf-8"))
            raw["command"] = args.command
            cfg = parse_config(raw, path.parent)
        else:
            cfg = load_config(path)
        written = run(cfg)
    except (ConfigError, FileNotFoundError, json.JSONDecodeError) as exc:
        return _error("validation", exc, 1)
    except (OptimizationError, DomainError, ArithmeticError) as exc:
        return _error("numerical", exc, 2)
    for p in written:
        logger.info("wrote %s", p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
