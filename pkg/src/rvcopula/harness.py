"""
Rolling-window backtests of the covariance forecasters.

A run reads (or simulates) a panel, builds daily realized covariance
matrices, and for every out-of-sample day fits each configured model on the
preceding ``window`` days and forecasts the next matrix. Days are processed
in independent blocks on a worker pool; every (model, day) pair draws its
own seed, so results do not depend on the pool size or scheduling.
"""

import json
import logging
import math
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import jsonschema
import numpy as np
import pandas as pd

from . import evalkit
from ._validation import DataError, NumericalError
from .benchmod import DCCForecaster, HARForecaster, HARRegressor, VARFIMAForecaster
from .copulae import copula_from_dict
from .fcopula import MODEL_NAMES, MODEL_SPECS, CopulaForecaster, lag_pair_tau
from .margins import EmpiricalPIT
from .matxform import to_coords
from .rvest import (
    CovarianceSeries,
    read_covariance_csv,
    read_intraday_csv,
    realized_covariance_series,
    simulate_panel,
)

WORKERS_ENV = "RVCOPULA_WORKERS"
logger = logging.getLogger("rvcopula")

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "rvcopula backtest configuration",
    "type": "object",
    "required": ["window"],
    "additionalProperties": False,
    "properties": {
        "window": {"type": "integer", "minimum": 45,
                   "description": "Days in each estimation window."},
        "coord": {"enum": ["cholesky", "logmatrix", "both"], "default": "both"},
        "models": {"type": "array", "items": {"enum": list(MODEL_NAMES)},
                   "minItems": 1, "uniqueItems": True, "default": list(MODEL_NAMES)},
        "B": {"type": "integer", "minimum": 1, "default": 1000,
              "description": "Conditional draws per copula forecast."},
        "seed": {"type": "integer", "minimum": 0, "default": 0},
        "refit_every": {"type": "integer", "minimum": 1, "default": 1},
        "varfima_trunc": {"type": "integer", "minimum": 1, "default": 100},
        "scale": {"type": "number", "exclusiveMinimum": 0, "default": 1e4,
                  "description": "Factor applied to covariances (1e4: percent squared)."},
        "data": {
            "type": "object",
            "additionalProperties": False,
            "default": {},
            "properties": {
                "source": {"enum": ["synthetic", "intraday_csv", "covariance_csv"],
                           "default": "synthetic"},
                "path": {"type": "string"},
                "returns_path": {"type": "string",
                                 "description": "Daily returns CSV for covariance_csv input."},
                "subgrids": {"type": "integer", "minimum": 1, "default": 1},
                "step_seconds": {"type": ["number", "null"], "exclusiveMinimum": 0,
                                 "default": None},
                "tick_seconds": {"type": "number", "exclusiveMinimum": 0, "default": 5},
                "assets": {"type": "integer", "minimum": 1, "default": 6},
                "days": {"type": "integer", "minimum": 46, "default": 900},
                "intervals": {"type": "integer", "minimum": 2, "default": 78},
                "noise_sd": {"type": "number", "minimum": 0, "default": 0.0},
                "sim_seed": {"type": "integer", "minimum": 0, "default": 0},
            },
        },
        "evaluation": {
            "type": "object",
            "additionalProperties": False,
            "default": {},
            "properties": {
                "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1,
                          "default": 0.05},
                "n_boot": {"type": "integer", "minimum": 1, "default": 999},
                "block_len": {"type": ["integer", "null"], "minimum": 1, "default": None},
                "mu_grid": {"type": ["array", "null"], "items": {"type": "number"},
                            "default": None},
                "n_mu": {"type": "integer", "minimum": 2, "default": 40},
                "frontier": {"type": "boolean", "default": True},
                "gmvp": {"type": "boolean", "default": True},
                "min_coverage": {"type": "number", "minimum": 0, "maximum": 1,
                                 "default": 0.95},
                "stein_orientation": {"enum": ["underprediction", "literal"],
                                      "default": "underprediction"},
            },
        },
        "output_dir": {"type": ["string", "null"], "default": None},
    },
}


def _fill_defaults(obj, schema):
    for key, sub in schema.get("properties", {}).items():
        if key not in obj and "default" in sub:
            obj[key] = json.loads(json.dumps(sub["default"]))
        if sub.get("type") == "object" and isinstance(obj.get(key), dict):
            _fill_defaults(obj[key], sub)
    return obj


@dataclass
class BacktestConfig:
    """Validated backtest settings; see :data:`CONFIG_SCHEMA` for every field."""

    window: int
    coord: str = "both"
    models: list = field(default_factory=lambda: list(MODEL_NAMES))
    B: int = 1000
    seed: int = 0
    refit_every: int = 1
    varfima_trunc: int = 100
    scale: float = 1e4
    data: dict = field(default_factory=dict)
    evaluation: dict = field(default_factory=dict)
    output_dir: str = None

    def __post_init__(self):
        raw = {k: getattr(self, k) for k in self.__dataclass_fields__}
        if raw["output_dir"] is None:
            raw.pop("output_dir")
        try:
            jsonschema.validate(raw, CONFIG_SCHEMA)
        except jsonschema.ValidationError as exc:
            path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise DataError(f"invalid backtest config at {path}: {exc.message}") from None
        _fill_defaults(raw, CONFIG_SCHEMA)
        for k, v in raw.items():
            setattr(self, k, v)

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise DataError("backtest config must be a JSON object")
        unknown = set(data) - set(CONFIG_SCHEMA["properties"])
        if unknown:
            raise DataError(f"invalid backtest config: unknown keys {sorted(unknown)}")
        if "window" not in data:
            raise DataError("invalid backtest config: 'window' is required")
        return cls(**data)

    @classmethod
    def from_json(cls, path):
        with open(path, encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}: not valid JSON ({exc})") from None
        return cls.from_dict(data)

    @property
    def coords(self):
        return ["cholesky", "logmatrix"] if self.coord == "both" else [self.coord]

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class BacktestRun:
    """Forecasts, realized targets and evaluation of one backtest.

    ``forecasts[coord][model]`` has shape (T - window, n, n) with NaN
    matrices on failed days.
    """

    config: BacktestConfig
    dates: pd.DatetimeIndex
    assets: list
    realized: np.ndarray
    forecasts: dict
    failures: list
    coverage: dict
    returns: np.ndarray = None
    expected_returns: np.ndarray = None
    reports: dict = field(default_factory=dict)
    frontiers: dict = field(default_factory=dict)
    gmvp_weights: dict = field(default_factory=dict)
    gmvp_summary: dict = field(default_factory=dict)
    all_series: CovarianceSeries = None
    all_returns: np.ndarray = None
    meta: dict = field(default_factory=dict)

    @property
    def n_forecasts(self):
        return len(self.dates)


# ---------------------------------------------------------------- logging

def log_event(event, level=logging.INFO, **fields):
    if logger.isEnabledFor(level):
        logger.log(level, json.dumps({"event": event, **fields}, default=str))


class JsonLineFormatter(logging.Formatter):
    """Pass JSON messages through, wrap anything else as ``{"message": ...}``."""

    def format(self, record):
        msg = record.getMessage()
        try:
            payload = json.loads(msg)
            if not isinstance(payload, dict):
                raise ValueError
        except ValueError:
            payload = {"message": msg}
        payload = {"level": record.levelname.lower(), **payload}
        return json.dumps(payload, default=str)


def configure_logging(level=logging.INFO, stream=None):
    handler = logging.StreamHandler(stream)
    handler.setFormatter(JsonLineFormatter())
    logger.handlers[:] = [handler]
    logger.setLevel(level)
    logger.propagate = False
    logging.captureWarnings(True)
    pyw = logging.getLogger("py.warnings")
    pyw.handlers[:] = [handler]
    pyw.propagate = False
    return logger


# ---------------------------------------------------------------- data

@dataclass
class BacktestData:
    dates: pd.DatetimeIndex
    assets: list
    series: CovarianceSeries
    returns: np.ndarray


def _base_step(grid, step_seconds):
    spacing = float(np.median(np.diff(grid)))
    if step_seconds is None:
        return 1
    ratio = step_seconds / spacing
    if ratio < 1 or abs(ratio - round(ratio)) > 1e-9:
        raise DataError(f"step {step_seconds}s is not a multiple of the grid spacing {spacing}s")
    return int(round(ratio))


def read_returns_csv(path):
    """Daily returns with a ``date`` column followed by one column per asset."""
    frame = pd.read_csv(path, float_precision="round_trip")
    if "date" not in frame.columns:
        raise DataError("returns CSV needs a date column")
    frame["date"] = pd.to_datetime(frame["date"])
    frame = frame.sort_values("date")
    values = frame.drop(columns="date").to_numpy(dtype=float)
    if not np.all(np.isfinite(values)):
        raise DataError("returns CSV has missing values")
    return pd.DatetimeIndex(frame["date"]), list(frame.columns[1:]), values


def write_returns_csv(dates, assets, returns, path):
    frame = pd.DataFrame(np.asarray(returns), columns=list(assets))
    frame.insert(0, "date", pd.DatetimeIndex(dates).strftime("%Y-%m-%d"))
    frame.to_csv(path, index=False, float_format="%.17g")


def load_data(cfg):
    """Realized covariance series (times ``scale``) and matching daily returns.

    Returns are multiplied by ``sqrt(scale)`` so that they share units with
    the covariance matrices.
    """
    d = cfg.data
    src = d["source"]
    root = math.sqrt(cfg.scale)
    if src in ("synthetic", "intraday_csv"):
        if src == "synthetic":
            panel, _ = simulate_panel(d["assets"], d["days"], d["intervals"],
                                      noise_sd=d["noise_sd"], seed=d["sim_seed"])
        else:
            if "path" not in d:
                raise DataError("data.path is required for intraday_csv input")
            panel = read_intraday_csv(d["path"], step_seconds=d["tick_seconds"])
        step = _base_step(panel.grid, d["step_seconds"])
        series = realized_covariance_series(panel, base_step=step, K=d["subgrids"],
                                            scale=cfg.scale)
        return BacktestData(panel.days, list(panel.assets), series,
                            panel.daily_returns() * root)
    if "path" not in d:
        raise DataError("data.path is required for covariance_csv input")
    series = read_covariance_csv(d["path"])
    series = CovarianceSeries(series.dates, series.mats * cfg.scale, check=False)
    assets = [f"A{i + 1}" for i in range(series.n_assets)]
    returns = None
    if "returns_path" in d:
        rdates, rassets, values = read_returns_csv(d["returns_path"])
        if not rdates.equals(series.dates) or values.shape[1] != series.n_assets:
            raise DataError("returns CSV is not aligned with the covariance CSV")
        assets, returns = rassets, values * root
    return BacktestData(series.dates, assets, series, returns)


# ---------------------------------------------------------------- models

def model_seed(seed, model, day):
    """Seed of one (model, day) pair, independent of scheduling."""
    idx = MODEL_NAMES.index(model)
    return int(np.random.SeedSequence([int(seed), idx, int(day)]).generate_state(1)[0])


def make_model(name, coord="cholesky", n_sims=1000, random_state=0, varfima_trunc=100):
    """Unfitted estimator for one of the 13 model names."""
    if name not in MODEL_SPECS:
        raise ValueError(f"unknown model {name!r}; choose from {MODEL_NAMES}")
    kind, approach, family = MODEL_SPECS[name]
    if kind == "dcc":
        return DCCForecaster()
    if kind == "har":
        return HARForecaster(coord=coord)
    if kind == "varfima":
        return VARFIMAForecaster(trunc=varfima_trunc, coord=coord)
    return CopulaForecaster(approach, family, n_sims=n_sims, coord=coord,
                            random_state=random_state)


def _uses_returns(name):
    return MODEL_SPECS[name][0] == "dcc"


def model_to_dict(name, est, coord):
    """JSON-ready description of a fitted forecaster."""
    out = {"model": name, "coord": coord}
    kind = MODEL_SPECS[name][0]
    if kind == "dcc":
        out.update(mu=est.mu_.tolist(), garch=est.garch_params_.tolist(),
                   qbar=est.qbar_.tolist(), theta1=est.theta1_, theta2=est.theta2_)
    elif kind == "har":
        out["coef"] = [m.coef_.tolist() for m in est.models_]
    elif kind == "varfima":
        out.update(trunc=int(est.trunc), c=est.c_.tolist(), d=est.d_, phi=est.phi_,
                   theta=est.theta_)
    else:
        out.update(
            n_sims=int(est.n_sims), random_state=est.random_state,
            marginals=[m.sorted_samples.tolist() for m in est.pit_.marginals_],
            copulas={("all" if k is None else str(k)): c.to_dict()
                     for k, c in est.copulas_.items()},
            har={str(j): m.coef_.tolist() for j, m in est.har_models_.items()},
        )
    return out


def model_from_dict(data):
    """Rebuild a fitted forecaster written by :func:`model_to_dict`."""
    try:
        name, coord = data["model"], data["coord"]
        est = make_model(name, coord, n_sims=data.get("n_sims", 1000),
                         random_state=data.get("random_state", 0),
                         varfima_trunc=data.get("trunc", 100))
        kind = MODEL_SPECS[name][0]
        if kind == "dcc":
            est.mu_ = np.asarray(data["mu"], dtype=float)
            est.garch_params_ = np.asarray(data["garch"], dtype=float)
            est.qbar_ = np.asarray(data["qbar"], dtype=float)
            est.theta1_, est.theta2_ = float(data["theta1"]), float(data["theta2"])
        elif kind == "har":
            est.models_ = [_har_from_coef(c) for c in data["coef"]]
            est.n_features_in_ = len(est.models_)
        elif kind == "varfima":
            est.c_ = np.asarray(data["c"], dtype=float)
            est.d_, est.phi_, est.theta_ = float(data["d"]), float(data["phi"]), float(data["theta"])
        else:
            samples = np.column_stack([np.asarray(s, dtype=float) for s in data["marginals"]])
            est._validate_params()
            est.pit_ = EmpiricalPIT().fit(samples)
            est.n_features_in_ = samples.shape[1]
            est.copulas_ = {(None if k == "all" else int(k)): copula_from_dict(c)
                            for k, c in data["copulas"].items()}
            est.har_models_ = {int(j): _har_from_coef(c) for j, c in data["har"].items()}
            est.copula_idx_ = np.array(sorted(k for k in est.copulas_ if k is not None),
                                       dtype=int)
            est.har_idx_ = np.array(sorted(est.har_models_), dtype=int)
            est.last_obs_ = samples[-1:]
    except (KeyError, TypeError) as exc:
        raise DataError(f"malformed model JSON: {exc}") from None
    return name, coord, est


def _har_from_coef(coef):
    m = HARRegressor()
    m.coef_ = np.asarray(coef, dtype=float)
    return m


def fit_model(name, X=None, returns=None, coord="cholesky", n_sims=1000, random_state=0,
              varfima_trunc=100, tau=None):
    est = make_model(name, coord, n_sims, random_state, varfima_trunc)
    if _uses_returns(name):
        if returns is None:
            raise DataError("DCC-GARCH needs daily returns")
        return est.fit(returns)
    if tau is not None and isinstance(est, CopulaForecaster):
        return est.fit(X, tau=tau)
    return est.fit(X)


def forecast_model(name, est, X=None, returns=None):
    """SPD forecast for the day after the supplied history."""
    if _uses_returns(name):
        if returns is None:
            raise DataError("DCC-GARCH needs daily returns")
        return est.predict(returns)
    return est.predict_matrix(X)


# ---------------------------------------------------------------- backtest

_CTX = {}


def _init_worker(ctx):
    _CTX.clear()
    _CTX.update(ctx)
    warnings.simplefilter("ignore")


def _run_block(block):
    """Fit on the window before ``block[0]`` and forecast every day of the block."""
    ctx = _CTX
    W = ctx["window"]
    t0 = block[0]
    out, failures, n_warn = {}, [], {}
    for coord in ctx["coords"]:
        X = ctx["X"][coord]
        tau = None
        for name in ctx["models"]:
            if _uses_returns(name) and coord != ctx["coords"][0]:
                continue
            key = (None if _uses_returns(name) else coord, name)
            mats = np.full((len(block), ctx["n"], ctx["n"]), np.nan)
            seed = model_seed(ctx["seed"], name, t0)
            try:
                with warnings.catch_warnings(record=True) as caught:
                    warnings.simplefilter("always")
                    share = name in ("T-1", "T-2")
                    if share and tau is None:
                        tau = lag_pair_tau(X[t0 - W:t0])
                    est = fit_model(
                        name, X[t0 - W:t0],
                        None if ctx["returns"] is None else ctx["returns"][t0 - W:t0],
                        coord, ctx["B"], seed, ctx["trunc"], tau if share else None,
                    )
                    for k, t in enumerate(block):
                        hist = X[t - W:t]
                        rets = None if ctx["returns"] is None else ctx["returns"][t - W:t]
                        H = forecast_model(name, est, hist, rets)
                        if not np.all(np.isfinite(H)) or np.linalg.eigvalsh(H)[0] <= 0:
                            raise NumericalError("forecast is not positive definite")
                        mats[k] = H
                if caught:
                    n_warn[key] = n_warn.get(key, 0) + len(caught)
            except Exception as exc:  # skip-and-log: one bad (model, day) must not end the run
                mats[:] = np.nan
                failures.append({"model": name, "coord": key[0], "day": int(t0),
                                 "n_days": len(block), "error": f"{type(exc).__name__}: {exc}"})
            out[key] = mats
    return block, out, failures, n_warn


def resolve_workers(workers=None):
    if workers is None:
        env = os.environ.get(WORKERS_ENV)
        if env is None or env == "":
            return 1
        try:
            workers = int(env)
        except ValueError:
            raise DataError(f"{WORKERS_ENV} must be an integer, got {env!r}") from None
    if workers < 1:
        raise DataError("worker count must be at least 1")
    return int(workers)


def rolling_backtest(cfg, workers=None, data=None, evaluate=True):
    """Run the rolling one-step-ahead backtest described by ``cfg``.

    Parameters
    ----------
    cfg : BacktestConfig or dict
    workers : int, optional
        Pool size; defaults to the ``RVCOPULA_WORKERS`` environment variable
        or 1.
    data : BacktestData, optional
        Preloaded data; by default read or simulated from ``cfg.data``.
    evaluate : bool
        Run the loss, MCS and portfolio evaluation after the forecasts.
    """
    if isinstance(cfg, dict):
        cfg = BacktestConfig.from_dict(cfg)
    workers = resolve_workers(workers)
    started = time.perf_counter()
    data = load_data(cfg) if data is None else data
    T = len(data.series)
    W = cfg.window
    if T <= W:
        raise DataError(f"{T} days leave no out-of-sample day for window {W}")
    if data.returns is None and "DCC-GARCH" in cfg.models:
        raise DataError("DCC-GARCH needs daily returns (data.returns_path)")
    n = data.series.n_assets
    log_event("backtest_start", days=T, window=W, forecasts=T - W, models=cfg.models,
              coords=cfg.coords, workers=workers)

    ctx = {
        "window": W, "coords": cfg.coords, "models": list(cfg.models), "n": n,
        "seed": cfg.seed, "B": cfg.B, "trunc": cfg.varfima_trunc,
        "X": {c: to_coords(data.series.mats, c) for c in cfg.coords},
        "returns": data.returns,
    }
    days = list(range(W, T))
    k = cfg.refit_every
    blocks = [days[i:i + k] for i in range(0, len(days), k)]

    if workers == 1:
        saved = dict(_CTX)
        with warnings.catch_warnings():
            _init_worker(ctx)
            results = [_run_block(b) for b in blocks]
        _CTX.clear()
        _CTX.update(saved)
    else:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker,
                                 initargs=(ctx,)) as pool:
            results = list(pool.map(_run_block, blocks, chunksize=1))

    forecasts = {c: {m: np.full((T - W, n, n), np.nan) for m in cfg.models}
                 for c in cfg.coords}
    failures, warn_counts = [], {}
    for block, out, fails, n_warn in results:
        rows = np.asarray(block) - W
        for (coord, name), mats in out.items():
            for c in ([coord] if coord is not None else cfg.coords):
                forecasts[c][name][rows] = mats
        failures.extend(fails)
        for key, v in n_warn.items():
            warn_counts[key] = warn_counts.get(key, 0) + v

    for f in failures:
        f["date"] = data.dates[f["day"]].date().isoformat()
        log_event("fit_failure", logging.WARNING, **f)
    for (coord, name), count in sorted(warn_counts.items(), key=lambda kv: str(kv[0])):
        log_event("numerical_warnings", model=name, coord=coord, count=count)

    coverage = {c: {m: float(np.mean(np.all(np.isfinite(F), axis=(1, 2))))
                    for m, F in forecasts[c].items()} for c in cfg.coords}
    min_cov = cfg.evaluation["min_coverage"]
    for c in cfg.coords:
        for m, cov in coverage[c].items():
            if cov < 1.0:
                msg = f"{m} ({c}) produced forecasts on {cov:.1%} of days"
                if cov < min_cov:
                    msg += "; its MCS entry is void"
                warnings.warn(msg, RuntimeWarning, stacklevel=2)
                log_event("coverage", logging.WARNING, model=m, coord=c, coverage=cov)

    expected = None
    if data.returns is not None:
        csum = np.vstack([np.zeros(n), np.cumsum(data.returns, axis=0)])
        expected = (csum[W:T] - csum[0:T - W]) / W
    run = BacktestRun(
        config=cfg,
        dates=data.dates[W:T],
        assets=data.assets,
        realized=data.series.mats[W:T],
        forecasts=forecasts,
        failures=failures,
        coverage=coverage,
        returns=None if data.returns is None else data.returns[W:T],
        expected_returns=expected,
        all_series=data.series,
        all_returns=data.returns,
    )
    run.meta["forecast_seconds"] = time.perf_counter() - started
    run.meta["workers"] = workers
    if evaluate:
        evaluate_run(run)
    run.meta["total_seconds"] = time.perf_counter() - started
    log_event("backtest_done", seconds=round(run.meta["total_seconds"], 3),
              failures=len(failures))
    return run


def evaluate_run(run):
    """Loss report, frontier and GMVP paths for every coordinate system."""
    ev = run.config.evaluation
    oracle_frontier = None
    for c in run.config.coords:
        F = run.forecasts[c]
        run.reports[c] = evalkit.loss_report(
            F, run.realized, alpha=ev["alpha"], n_boot=ev["n_boot"],
            block_len=ev["block_len"], seed=run.config.seed, coverage=run.coverage[c],
            min_coverage=ev["min_coverage"], orientation=ev["stein_orientation"],
        )
        if run.expected_returns is None:
            continue
        complete = {m: v for m, v in F.items() if np.all(np.isfinite(v))}
        if ev["frontier"]:
            grid = ev["mu_grid"]
            if grid is None:
                grid = evalkit.default_mu_grid(run.expected_returns, ev["n_mu"])
            frame = evalkit.efficient_frontier(complete, run.realized, run.expected_returns,
                                               grid, include_oracle=oracle_frontier is None)
            if oracle_frontier is None:
                oracle_frontier = frame[frame["model"] == "oracle"]
            else:
                frame = pd.concat([frame, oracle_frontier], ignore_index=True)
            run.frontiers[c] = frame
        if ev["gmvp"]:
            weights, summary = evalkit.gmvp_paths(complete, run.realized, run.returns,
                                                  run.dates, run.assets)
            run.gmvp_weights[c] = weights
            run.gmvp_summary[c] = summary
    return run


# ---------------------------------------------------------------- outputs

def forecast_frame(dates, forecasts):
    """Long ``date,model,i,j,value`` frame of the upper triangles."""
    parts = []
    day_str = pd.DatetimeIndex(dates).strftime("%Y-%m-%d")
    for name, F in forecasts.items():
        n = F.shape[1]
        iu, ju = np.triu_indices(n)
        order = np.lexsort((iu, ju))
        iu, ju = iu[order], ju[order]
        vals = F[:, iu, ju]
        parts.append(pd.DataFrame({
            "date": np.repeat(day_str, iu.size),
            "model": name,
            "i": np.tile(iu + 1, len(F)),
            "j": np.tile(ju + 1, len(F)),
            "value": vals.ravel(),
        }))
    return pd.concat(parts, ignore_index=True)


def write_forecast_csv(dates, forecasts, path):
    forecast_frame(dates, forecasts).to_csv(path, index=False, float_format="%.17g",
                                            na_rep="nan")


def read_forecast_csv(path):
    """Inverse of :func:`write_forecast_csv`: ``(dates, {model: (T, n, n)})``."""
    frame = pd.read_csv(path, float_precision="round_trip")
    missing = {"date", "model", "i", "j", "value"} - set(frame.columns)
    if missing:
        raise DataError(f"forecast CSV lacks columns {sorted(missing)}")
    dates = pd.DatetimeIndex(sorted(pd.to_datetime(frame["date"]).unique()))
    pos = {d: k for k, d in enumerate(dates)}
    n = int(frame["j"].max())
    out = {}
    for name, chunk in frame.groupby("model", sort=False):
        mats = np.full((len(dates), n, n), np.nan)
        di = pd.to_datetime(chunk["date"]).map(pos).to_numpy()
        i, j = chunk["i"].to_numpy() - 1, chunk["j"].to_numpy() - 1
        v = chunk["value"].to_numpy(dtype=float)
        mats[di, i, j] = v
        mats[di, j, i] = v
        out[str(name)] = mats
    return dates, out


def write_run(run, outdir):
    """Write every CSV/JSON artifact of a run into ``outdir``; returns the paths."""
    os.makedirs(outdir, exist_ok=True)
    paths = {}

    def target(name):
        paths[name] = os.path.join(outdir, name)
        return paths[name]

    for c in run.config.coords:
        write_forecast_csv(run.dates, run.forecasts[c], target(f"forecasts_{c}.csv"))
        if c in run.reports:
            evalkit.write_loss_report(run.reports[c], target(f"report_{c}.json"))
        if c in run.frontiers:
            evalkit.write_frontier_csv(run.frontiers[c], target(f"frontier_{c}.csv"))
        if c in run.gmvp_weights:
            evalkit.write_gmvp_csv(run.gmvp_weights[c], target(f"gmvp_{c}.csv"))
            run.gmvp_summary[c].to_csv(target(f"gmvp_summary_{c}.csv"), index=False,
                                       float_format="%.10g")
    if run.all_series is not None:
        from .rvest import write_covariance_csv
        write_covariance_csv(run.all_series, target("realized.csv"))
    if run.all_returns is not None:
        write_returns_csv(run.all_series.dates, run.assets, run.all_returns,
                          target("returns.csv"))
    meta = {
        "config": run.config.to_dict(),
        "n_forecasts": run.n_forecasts,
        "first_target": run.dates[0].date().isoformat(),
        "last_target": run.dates[-1].date().isoformat(),
        "coverage": run.coverage,
        "failures": run.failures,
        "meta": run.meta,
    }
    with open(target("run.json"), "w") as fh:
        json.dump(meta, fh, indent=2, default=str)
        fh.write("\n")
    return paths
