"""Command line interface: ``rvcopula <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

import argparse
import json
import logging
import os
import sys

import numpy as np
import pandas as pd

from . import evalkit, harness
from ._validation import DataError, NumericalError
from .fcopula import MODEL_NAMES
from .matxform import COORDS, to_coords
from .rvest import (
    coordinate_labels,
    read_covariance_csv,
    read_intraday_csv,
    realized_covariance_series,
    simulate_panel,
    summary_table,
    write_covariance_csv,
    write_intraday_csv,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def parse_seconds(text):
    """``"5min"``, ``"300s"``, ``"300"`` -> 300.0 seconds."""
    text = str(text).strip()
    try:
        return float(text)
    except ValueError:
        pass
    try:
        value = pd.Timedelta(text).total_seconds()
    except ValueError:
        raise UsageError(f"cannot parse duration {text!r}") from None
    if value <= 0:
        raise UsageError(f"duration must be positive, got {text!r}")
    return value


def _assets(series, names=None):
    return list(names) if names else [f"A{i + 1}" for i in range(series.n_assets)]


# ---------------------------------------------------------------- commands

def cmd_simulate(args):
    panel, truth = simulate_panel(args.assets, args.days, args.intervals,
                                  noise_sd=args.noise_sd, seed=args.seed, start=args.start)
    os.makedirs(args.out, exist_ok=True)
    write_intraday_csv(panel, os.path.join(args.out, "intraday.csv"))
    write_covariance_csv(truth, os.path.join(args.out, "integrated_cov.csv"))
    harness.log_event("simulate", out=args.out, assets=args.assets, days=args.days)


def cmd_estimate(args):
    tick = parse_seconds(args.tick)
    step = parse_seconds(args.step) if args.step else tick
    panel = read_intraday_csv(args.input, step_seconds=tick)
    ratio = step / tick
    if ratio < 1 or abs(ratio - round(ratio)) > 1e-9:
        raise UsageError(f"--step {args.step} must be a multiple of --tick {args.tick}")
    series = realized_covariance_series(panel, base_step=int(round(ratio)), K=args.subgrids,
                                        scale=args.scale)
    write_covariance_csv(series, args.output)
    if args.returns_output:
        harness.write_returns_csv(panel.days, panel.assets, panel.daily_returns(),
                                  args.returns_output)


def cmd_stats(args):
    series = read_covariance_csv(args.input)
    X = to_coords(series.mats * args.scale, args.coord)
    table = summary_table(X, coordinate_labels(_assets(series, args.assets)))
    if args.output:
        table.to_csv(args.output, float_format="%.6g")
    else:
        sys.stdout.write(table.to_string(float_format=lambda v: f"{v:.4g}") + "\n")


def _history(args):
    series = read_covariance_csv(args.input)
    returns = None
    if args.returns:
        rdates, _, values = harness.read_returns_csv(args.returns)
        if not rdates.equals(series.dates):
            raise DataError("returns CSV is not aligned with the covariance CSV")
        returns = values
    window = getattr(args, "window", None)
    if window:
        if window > len(series):
            raise DataError(f"window {window} exceeds the {len(series)} available days")
        series = series.subset(slice(len(series) - window, None))
        returns = None if returns is None else returns[-window:]
    return series, returns


def cmd_fit(args):
    series, returns = _history(args)
    X = to_coords(series.mats, args.coord)
    est = harness.fit_model(args.model, X, returns, args.coord, args.n_sims, args.seed,
                            args.varfima_trunc)
    payload = harness.model_to_dict(args.model, est, args.coord)
    payload["trained_through"] = series.dates[-1].date().isoformat()
    with open(args.output, "w") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def cmd_forecast(args):
    with open(args.model) as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{args.model}: not valid JSON ({exc})") from None
    name, coord, est = harness.model_from_dict(payload)
    series, returns = _history(args)
    X = to_coords(series.mats, coord)
    H = harness.forecast_model(name, est, X, returns)
    target = series.dates[-1] + pd.offsets.BDay(1)
    frame = harness.forecast_frame(pd.DatetimeIndex([target]), {name: H[None]})
    if args.output:
        frame.to_csv(args.output, index=False, float_format="%.17g")
    else:
        frame.to_csv(sys.stdout, index=False, float_format="%.17g")


def cmd_backtest(args):
    cfg = harness.BacktestConfig.from_json(args.config)
    out = args.out or cfg.output_dir or "backtest_out"
    run = harness.rolling_backtest(cfg, workers=args.workers)
    paths = harness.write_run(run, out)
    harness.log_event("outputs", files=sorted(paths))


def _aligned_realized(forecast_dates, realized_path):
    series = read_covariance_csv(realized_path)
    pos = series.dates.get_indexer(forecast_dates)
    if np.any(pos < 0):
        raise DataError("realized CSV lacks some forecast dates")
    return series, pos


def cmd_report(args):
    dates, forecasts = harness.read_forecast_csv(args.forecasts)
    series, pos = _aligned_realized(dates, args.realized)
    report = evalkit.loss_report(forecasts, series.mats[pos], alpha=args.alpha,
                                 n_boot=args.n_boot, block_len=args.block_len,
                                 seed=args.seed, orientation=args.orientation)
    if args.output:
        evalkit.write_loss_report(report, args.output)
    else:
        sys.stdout.write(json.dumps(report, indent=2) + "\n")


def cmd_frontier(args):
    dates, forecasts = harness.read_forecast_csv(args.forecasts)
    series, pos = _aligned_realized(dates, args.realized)
    rdates, assets, returns = harness.read_returns_csv(args.returns)
    if not rdates.equals(series.dates):
        raise DataError("returns CSV is not aligned with the realized CSV")
    W = args.window
    if pos.min() < W:
        raise DataError(f"the first forecast date has fewer than {W} days of history")
    csum = np.vstack([np.zeros(returns.shape[1]), np.cumsum(returns, axis=0)])
    expected = (csum[pos] - csum[pos - W]) / W
    forecasts = {m: F for m, F in forecasts.items() if np.all(np.isfinite(F))}
    grid = evalkit.default_mu_grid(expected, args.n_mu)
    frame = evalkit.efficient_frontier(forecasts, series.mats[pos], expected, grid)
    evalkit.write_frontier_csv(frame, args.output)
    if args.gmvp_output:
        weights, _ = evalkit.gmvp_paths(forecasts, series.mats[pos], returns[pos], dates, assets)
        evalkit.write_gmvp_csv(weights, args.gmvp_output)


def cmd_heatmap(args):
    series = read_covariance_csv(args.input)
    if args.window:
        series = series.subset(slice(max(0, len(series) - args.window), None))
    X = to_coords(series.mats * args.scale, args.coord)
    evalkit.write_rank_corr_csv(evalkit.rank_corr_matrix(X), args.output)


# ---------------------------------------------------------------- parser

def build_parser():
    p = _Parser(prog="rvcopula",
                description="Copula forecasts of realized covariance matrices.")
    p.add_argument("--log-level", default="INFO",
                   choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="synthetic intraday panel to CSV")
    s.add_argument("--assets", type=int, default=6)
    s.add_argument("--days", type=int, default=300)
    s.add_argument("--intervals", type=int, default=78, help="intraday returns per day")
    s.add_argument("--noise-sd", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--start", default="2000-01-03")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("estimate", help="intraday CSV to daily covariance CSV")
    s.add_argument("--input", required=True)
    s.add_argument("--output", required=True)
    s.add_argument("--subgrids", type=int, default=1, help="number of offset subgrids K")
    s.add_argument("--step", default=None, help="sampling step, e.g. 5min (default: tick)")
    s.add_argument("--tick", default="5s", help="alignment grid of the reader")
    s.add_argument("--scale", type=float, default=1.0)
    s.add_argument("--returns-output", default=None, help="also write daily returns")
    s.set_defaults(func=cmd_estimate)

    s = sub.add_parser("stats", help="descriptive statistics of vech coordinates")
    s.add_argument("--input", required=True)
    s.add_argument("--coord", choices=COORDS, default="cholesky")
    s.add_argument("--scale", type=float, default=1.0)
    s.add_argument("--assets", nargs="*", default=None)
    s.add_argument("--output", default=None)
    s.set_defaults(func=cmd_stats)

    for name, func, hlp in (("fit", cmd_fit, "fit one model, write model JSON"),
                            ("forecast", cmd_forecast, "one-step forecast from model JSON")):
        s = sub.add_parser(name, help=hlp)
        s.add_argument("--input", required=True, help="covariance CSV history")
        s.add_argument("--returns", default=None, help="daily returns CSV (DCC-GARCH)")
        s.add_argument("--window", type=int, default=None, help="use only the last rows")
        if name == "fit":
            s.add_argument("--model", required=True, choices=MODEL_NAMES)
            s.add_argument("--coord", choices=COORDS, default="cholesky")
            s.add_argument("--n-sims", type=int, default=1000)
            s.add_argument("--seed", type=int, default=0)
            s.add_argument("--varfima-trunc", type=int, default=100)
            s.add_argument("--output", required=True)
        else:
            s.add_argument("--model", required=True, help="model JSON written by fit")
            s.add_argument("--output", default=None)
        s.set_defaults(func=func)

    s = sub.add_parser("backtest", help="rolling-window backtest from a JSON config")
    s.add_argument("--config", required=True)
    s.add_argument("--out", default=None, help="output directory")
    s.add_argument("--workers", type=int, default=None,
                   help=f"worker processes (default: ${harness.WORKERS_ENV} or 1)")
    s.set_defaults(func=cmd_backtest)

    s = sub.add_parser("report", help="loss report JSON from forecast and realized CSVs")
    s.add_argument("--forecasts", required=True)
    s.add_argument("--realized", required=True)
    s.add_argument("--alpha", type=float, default=0.05)
    s.add_argument("--n-boot", type=int, default=999)
    s.add_argument("--block-len", type=int, default=None)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--orientation", choices=["underprediction", "literal"],
                   default="underprediction")
    s.add_argument("--output", default=None)
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("frontier", help="efficient frontier CSV")
    s.add_argument("--forecasts", required=True)
    s.add_argument("--realized", required=True)
    s.add_argument("--returns", required=True)
    s.add_argument("--window", type=int, required=True)
    s.add_argument("--n-mu", type=int, default=40)
    s.add_argument("--output", required=True)
    s.add_argument("--gmvp-output", default=None)
    s.set_defaults(func=cmd_frontier)

    s = sub.add_parser("heatmap-data", help="rank correlations of lag pairs")
    s.add_argument("--input", required=True)
    s.add_argument("--coord", choices=COORDS, default="cholesky")
    s.add_argument("--scale", type=float, default=1.0)
    s.add_argument("--window", type=int, default=None)
    s.add_argument("--output", required=True)
    s.set_defaults(func=cmd_heatmap)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    harness.configure_logging(getattr(logging, args.log_level), sys.stderr)
    try:
        args.func(args)
    except UsageError as exc:
        harness.log_event("error", logging.ERROR, kind="usage", detail=str(exc))
        return EXIT_USAGE
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        harness.log_event("error", logging.ERROR, kind="numerical", detail=str(exc))
        return EXIT_NUMERICAL
    except (DataError, OSError, KeyError, pd.errors.ParserError,
            pd.errors.EmptyDataError) as exc:
        harness.log_event("error", logging.ERROR, kind="data", detail=str(exc))
        return EXIT_DATA
    except ValueError as exc:
        harness.log_event("error", logging.ERROR, kind="usage", detail=str(exc))
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
