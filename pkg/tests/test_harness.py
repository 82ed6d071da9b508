import io
import json
import logging

import numpy as np
import pytest

from rvcopula import DataError
from rvcopula.fcopula import MODEL_NAMES
from rvcopula.harness import (
    BacktestConfig,
    BacktestData,
    configure_logging,
    fit_model,
    forecast_model,
    log_event,
    model_from_dict,
    model_seed,
    model_to_dict,
    read_forecast_csv,
    resolve_workers,
    rolling_backtest,
    write_forecast_csv,
    write_run,
)
from rvcopula.matxform import to_coords
from rvcopula.rvest import realized_covariance_series, simulate_panel


def make_data(n, T, seed=0, intervals=20):
    panel, _ = simulate_panel(n, T, intervals, seed=seed)
    series = realized_covariance_series(panel, base_step=1, K=1, scale=1e4)
    return BacktestData(panel.days, list(panel.assets), series, panel.daily_returns() * 100)


@pytest.fixture(scope="module")
def small_data():
    return make_data(2, 330, seed=3)


# ---------------------------------------------------------------- config

def test_config_defaults_filled():
    cfg = BacktestConfig(window=100)
    assert cfg.coord == "both" and cfg.coords == ["cholesky", "logmatrix"]
    assert cfg.models == list(MODEL_NAMES)
    assert cfg.B == 1000 and cfg.scale == 1e4
    assert cfg.data["source"] == "synthetic" and cfg.data["days"] == 900
    assert cfg.evaluation["alpha"] == 0.05
    assert cfg.evaluation["stein_orientation"] == "underprediction"


@pytest.mark.parametrize("bad", [
    {"window": 44},
    {"window": 100, "models": ["HAR", "GARCH"]},
    {"window": 100, "models": []},
    {"window": 100, "coord": "polar"},
    {"window": 100, "B": 0},
    {"window": 100, "data": {"source": "synthetic", "days": 10}},
    {"window": 100, "evaluation": {"alpha": 1.5}},
    {"window": 100, "colour": "red"},
    {"window": 100, "data": {"colour": "red"}},
    {"models": ["HAR"]},
])
def test_config_rejects(bad):
    with pytest.raises(DataError):
        BacktestConfig.from_dict(bad)


def test_config_from_json(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"window": 60, "models": ["HAR"], "coord": "cholesky"}))
    cfg = BacktestConfig.from_json(path)
    assert cfg.window == 60 and cfg.coords == ["cholesky"]
    path.write_text("{not json")
    with pytest.raises(DataError):
        BacktestConfig.from_json(path)


# ---------------------------------------------------------------- rolling window

@pytest.mark.parametrize("W,expected", [(1508, 648), (1000, 1156)])
def test_forecast_count(W, expected):
    data = make_data(2, 2156, seed=1, intervals=8)
    cfg = BacktestConfig(window=W, models=["HAR"], coord="cholesky")
    run = rolling_backtest(cfg, data=data, evaluate=False)
    assert run.n_forecasts == expected
    assert run.forecasts["cholesky"]["HAR"].shape == (expected, 2, 2)
    assert run.dates[0] == data.dates[W]
    assert run.dates[-1] == data.dates[-1]
    assert run.coverage["cholesky"]["HAR"] == 1.0


def test_window_equal_to_length_is_error(small_data):
    cfg = BacktestConfig(window=len(small_data.series), models=["HAR"])
    with pytest.raises(DataError, match="no out-of-sample"):
        rolling_backtest(cfg, data=small_data)


def test_forecast_uses_only_the_window(small_data):
    # day W + k is forecast from rows k .. W + k - 1
    W = 120
    cfg = BacktestConfig(window=W, models=["HAR", "Entry-CL"], coord="logmatrix", B=50,
                         seed=7)
    run = rolling_backtest(cfg, data=small_data, evaluate=False)
    X = to_coords(small_data.series.mats, "logmatrix")
    for k in (0, 17, run.n_forecasts - 1):
        t = W + k
        for name in cfg.models:
            est = fit_model(name, X[t - W:t], coord="logmatrix", n_sims=50,
                            random_state=model_seed(7, name, t))
            H = forecast_model(name, est, X[t - W:t])
            np.testing.assert_allclose(run.forecasts["logmatrix"][name][k], H, rtol=1e-12)


def test_dcc_needs_returns(small_data):
    data = BacktestData(small_data.dates, small_data.assets, small_data.series, None)
    cfg = BacktestConfig(window=300, models=["DCC-GARCH"], coord="cholesky")
    with pytest.raises(DataError, match="returns"):
        rolling_backtest(cfg, data=data)


def test_dcc_shared_across_coordinates(small_data):
    cfg = BacktestConfig(window=300, models=["DCC-GARCH"], B=10)
    run = rolling_backtest(cfg, data=small_data, evaluate=False)
    np.testing.assert_array_equal(run.forecasts["cholesky"]["DCC-GARCH"],
                                  run.forecasts["logmatrix"]["DCC-GARCH"])
    assert np.all(np.linalg.eigvalsh(run.forecasts["cholesky"]["DCC-GARCH"]) > 0)


def test_refit_every_keeps_parameters_within_block(small_data):
    cfg = BacktestConfig(window=100, models=["HAR"], coord="cholesky", refit_every=5)
    run = rolling_backtest(cfg, data=small_data, evaluate=False)
    X = to_coords(small_data.series.mats, "cholesky")
    est = fit_model("HAR", X[0:100])
    for k in range(5):
        H = forecast_model("HAR", est, X[k:100 + k])
        np.testing.assert_allclose(run.forecasts["cholesky"]["HAR"][k], H, rtol=1e-12)


def test_failures_are_skipped_and_logged(small_data, caplog):
    # a truncation longer than half the window makes every VARFIMA fit fail
    cfg = BacktestConfig(window=60, models=["HAR", "VARFIMA"], coord="cholesky",
                         varfima_trunc=100)
    data = BacktestData(small_data.dates[:70], small_data.assets,
                        type(small_data.series)(small_data.dates[:70],
                                                small_data.series.mats[:70]),
                        None)
    with caplog.at_level(logging.WARNING, logger="rvcopula"):
        with pytest.warns(RuntimeWarning, match="VARFIMA"):
            run = rolling_backtest(cfg, data=data, evaluate=True)
    assert run.coverage["cholesky"]["VARFIMA"] == 0.0
    assert run.coverage["cholesky"]["HAR"] == 1.0
    assert len(run.failures) == 10
    assert all(f["model"] == "VARFIMA" and "DataError" in f["error"] for f in run.failures)
    assert np.all(np.isnan(run.forecasts["cholesky"]["VARFIMA"]))
    events = [json.loads(r.getMessage())["event"] for r in caplog.records]
    assert events.count("fit_failure") == 10
    report = run.reports["cholesky"]
    assert report["VARFIMA"]["rmse"] is None
    assert report["HAR"]["rmse"] > 0


def test_seeds_do_not_depend_on_model_subset(small_data):
    base = dict(window=100, coord="cholesky", B=40, seed=3)
    a = rolling_backtest(BacktestConfig(models=["Entry-GB"], **base), data=small_data,
                         evaluate=False)
    b = rolling_backtest(BacktestConfig(models=["HAR", "Entry-T", "Entry-GB"], **base),
                         data=small_data, evaluate=False)
    np.testing.assert_array_equal(a.forecasts["cholesky"]["Entry-GB"],
                                  b.forecasts["cholesky"]["Entry-GB"])


def test_model_seed_distinct():
    seeds = {model_seed(0, m, d) for m in MODEL_NAMES for d in range(50)}
    assert len(seeds) == 13 * 50
    assert model_seed(1, "HAR", 5) != model_seed(0, "HAR", 5)


def test_worker_count_does_not_change_forecasts(small_data, tmp_path):
    cfg = BacktestConfig(window=300, models=["HAR", "Entry-CL", "T-2"], coord="both", B=30,
                         seed=11)
    one = rolling_backtest(cfg, workers=1, data=small_data, evaluate=False)
    two = rolling_backtest(cfg, workers=2, data=small_data, evaluate=False)
    for c in cfg.coords:
        p1, p2 = tmp_path / f"one_{c}.csv", tmp_path / f"two_{c}.csv"
        write_forecast_csv(one.dates, one.forecasts[c], p1)
        write_forecast_csv(two.dates, two.forecasts[c], p2)
        assert p1.read_bytes() == p2.read_bytes()


def test_resolve_workers(monkeypatch):
    monkeypatch.delenv("RVCOPULA_WORKERS", raising=False)
    assert resolve_workers() == 1
    monkeypatch.setenv("RVCOPULA_WORKERS", "3")
    assert resolve_workers() == 3
    assert resolve_workers(2) == 2
    monkeypatch.setenv("RVCOPULA_WORKERS", "many")
    with pytest.raises(DataError):
        resolve_workers()
    with pytest.raises(DataError):
        resolve_workers(0)


# ---------------------------------------------------------------- outputs

def test_forecast_csv_round_trip(small_data, tmp_path):
    rng = np.random.default_rng(0)
    A = rng.normal(size=(6, 3, 3))
    F = {"HAR": A @ np.swapaxes(A, 1, 2), "T-1": np.eye(3)[None].repeat(6, axis=0)}
    F["T-1"][2] = np.nan
    path = tmp_path / "f.csv"
    write_forecast_csv(small_data.dates[:6], F, path)
    dates, back = read_forecast_csv(path)
    assert list(dates) == list(small_data.dates[:6])
    np.testing.assert_array_equal(back["HAR"], F["HAR"])
    np.testing.assert_array_equal(back["T-1"], F["T-1"])
    header = path.read_text().splitlines()[0]
    assert header == "date,model,i,j,value"


def test_write_run_artifacts(small_data, tmp_path):
    cfg = BacktestConfig(window=300, models=["HAR", "DCC-GARCH"], coord="cholesky",
                         evaluation={"n_boot": 50, "n_mu": 5})
    run = rolling_backtest(cfg, data=small_data)
    paths = write_run(run, tmp_path / "out")
    for name in ("forecasts_cholesky.csv", "report_cholesky.json", "frontier_cholesky.csv",
                 "gmvp_cholesky.csv", "run.json", "realized.csv", "returns.csv"):
        assert name in paths
    meta = json.loads((tmp_path / "out" / "run.json").read_text())
    assert meta["n_forecasts"] == 30
    assert meta["config"]["window"] == 300
    report = json.loads((tmp_path / "out" / "report_cholesky.json").read_text())
    assert set(report) >= {"HAR", "DCC-GARCH"}


@pytest.mark.parametrize("name", MODEL_NAMES)
def test_model_json_round_trip(name, small_data):
    X = to_coords(small_data.series.mats[:300], "cholesky")
    est = fit_model(name, X, small_data.returns[:300], "cholesky", n_sims=40, random_state=5,
                    varfima_trunc=50)
    payload = json.loads(json.dumps(model_to_dict(name, est, "cholesky")))
    name2, coord, est2 = model_from_dict(payload)
    assert name2 == name and coord == "cholesky"
    H1 = forecast_model(name, est, X, small_data.returns[:300])
    H2 = forecast_model(name, est2, X, small_data.returns[:300])
    np.testing.assert_allclose(H2, H1, rtol=1e-12)


def test_model_from_dict_malformed():
    with pytest.raises(DataError):
        model_from_dict({"model": "HAR"})


def test_json_log_lines():
    stream = io.StringIO()
    configure_logging(logging.INFO, stream)
    try:
        log_event("hello", day=3)
        logging.getLogger("rvcopula").info("plain text")
    finally:
        configure_logging(logging.WARNING)
    lines = [json.loads(s) for s in stream.getvalue().splitlines()]
    assert lines[0] == {"level": "info", "event": "hello", "day": 3}
    assert lines[1] == {"level": "info", "message": "plain text"}
