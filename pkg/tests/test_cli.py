import json

import numpy as np
import pandas as pd
import pytest

from rvcopula.cli import main, parse_seconds
from rvcopula.fcopula import MODEL_NAMES
from rvcopula.harness import read_forecast_csv, read_returns_csv
from rvcopula.rvest import read_covariance_csv


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Simulated panel, estimated covariances and returns shared by the tests."""
    root = tmp_path_factory.mktemp("cli")
    sim = root / "sim"
    assert main(["simulate", "--assets", "2", "--days", "320", "--intervals", "24",
                 "--seed", "4", "--out", str(sim)]) == 0
    assert main(["estimate", "--input", str(sim / "intraday.csv"), "--output",
                 str(root / "cov.csv"), "--step", "5s", "--scale", "1e4",
                 "--returns-output", str(root / "returns.csv")]) == 0
    return root


def test_parse_seconds():
    assert parse_seconds("5s") == 5
    assert parse_seconds("5min") == 300
    assert parse_seconds("1h") == 3600
    assert parse_seconds("30") == 30


def test_simulate_is_byte_identical(tmp_path):
    args = ["simulate", "--assets", "3", "--days", "30", "--intervals", "10", "--seed", "9"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    for name in ("intraday.csv", "integrated_cov.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert main(args[:-1] + ["10", "--out", str(tmp_path / "c")]) == 0
    assert ((tmp_path / "a" / "intraday.csv").read_bytes()
            != (tmp_path / "c" / "intraday.csv").read_bytes())


def test_estimate_outputs(workdir):
    series = read_covariance_csv(workdir / "cov.csv")
    assert len(series) == 320 and series.n_assets == 2
    assert np.all(np.linalg.eigvalsh(series.mats)[:, 0] > 0)
    dates, assets, returns = read_returns_csv(workdir / "returns.csv")
    assert dates.equals(series.dates) and returns.shape == (320, 2)


def test_estimate_step_must_divide(workdir, tmp_path):
    code = main(["estimate", "--input", str(workdir / "sim" / "intraday.csv"),
                 "--output", str(tmp_path / "x.csv"), "--step", "7s"])
    assert code == 1


def test_stats(workdir, tmp_path, capsys):
    out = tmp_path / "stats.csv"
    assert main(["stats", "--input", str(workdir / "cov.csv"), "--coord", "logmatrix",
                 "--assets", "AAA", "BBB", "--output", str(out)]) == 0
    table = pd.read_csv(out, index_col=0)
    assert len(table) == 3
    assert main(["stats", "--input", str(workdir / "cov.csv")]) == 0
    assert "A1" in capsys.readouterr().out


@pytest.mark.parametrize("model", ["HAR", "Entry-GB", "DCC-GARCH"])
def test_fit_then_forecast(model, workdir, tmp_path):
    mj = tmp_path / "model.json"
    common = ["--input", str(workdir / "cov.csv"), "--returns", str(workdir / "returns.csv"),
              "--window", "300"]
    assert main(["fit", *common, "--model", model, "--n-sims", "50", "--seed", "2",
                 "--output", str(mj)]) == 0
    payload = json.loads(mj.read_text())
    assert payload["model"] == model
    out = tmp_path / "fc.csv"
    assert main(["forecast", *common, "--model", str(mj), "--output", str(out)]) == 0
    frame = pd.read_csv(out)
    assert list(frame.columns) == ["date", "model", "i", "j", "value"]
    assert len(frame) == 3
    last = read_covariance_csv(workdir / "cov.csv").dates[-1]
    assert pd.Timestamp(frame["date"][0]) > last
    out2 = tmp_path / "fc2.csv"
    assert main(["forecast", *common, "--model", str(mj), "--output", str(out2)]) == 0
    assert out.read_bytes() == out2.read_bytes()


@pytest.fixture(scope="module")
def backtest_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("bt")
    cfg = {
        "window": 250, "coord": "cholesky", "B": 40, "seed": 1,
        "data": {"source": "synthetic", "assets": 2, "days": 256, "intervals": 24,
                 "sim_seed": 5},
        "evaluation": {"n_boot": 60, "n_mu": 5},
    }
    (root / "run.json").write_text(json.dumps(cfg))
    assert main(["backtest", "--config", str(root / "run.json"), "--out",
                 str(root / "out")]) == 0
    return root


def test_backtest_lists_every_model(backtest_dir):
    report = json.loads((backtest_dir / "out" / "report_cholesky.json").read_text())
    assert set(report) == set(MODEL_NAMES)
    for entry in report.values():
        assert entry["rmse"] > 0 and entry["mean_stein"] is not None
        assert isinstance(entry["in_mcs_stein"], bool)
    dates, F = read_forecast_csv(backtest_dir / "out" / "forecasts_cholesky.csv")
    assert len(dates) == 6 and set(F) == set(MODEL_NAMES)


def test_report_and_frontier_from_files(backtest_dir, tmp_path):
    out = backtest_dir / "out"
    rep = tmp_path / "report.json"
    assert main(["report", "--forecasts", str(out / "forecasts_cholesky.csv"),
                 "--realized", str(out / "realized.csv"), "--n-boot", "60", "--seed", "1",
                 "--output", str(rep)]) == 0
    ours = json.loads(rep.read_text())
    theirs = json.loads((out / "report_cholesky.json").read_text())
    for name in MODEL_NAMES:
        assert ours[name]["rmse"] == pytest.approx(theirs[name]["rmse"], rel=1e-12)
    fr, gm = tmp_path / "frontier.csv", tmp_path / "gmvp.csv"
    assert main(["frontier", "--forecasts", str(out / "forecasts_cholesky.csv"),
                 "--realized", str(out / "realized.csv"), "--returns",
                 str(out / "returns.csv"), "--window", "250", "--n-mu", "5",
                 "--output", str(fr), "--gmvp-output", str(gm)]) == 0
    frame = pd.read_csv(fr)
    assert {"model", "mu_p", "avg_sd"} <= set(frame.columns)
    assert (frame.groupby("model").size() == 5).all()
    assert set(pd.read_csv(gm)["model"]) == set(MODEL_NAMES)


def test_heatmap_data(workdir, tmp_path):
    out = tmp_path / "heat.csv"
    assert main(["heatmap-data", "--input", str(workdir / "cov.csv"), "--window", "200",
                 "--output", str(out)]) == 0
    frame = pd.read_csv(out)
    assert list(frame.columns) == ["row", "col", "rho"] and len(frame) == 36
    rho = frame["rho"].to_numpy().reshape(6, 6)
    np.testing.assert_allclose(rho, rho.T)
    np.testing.assert_allclose(np.diag(rho), 1.0)


# ---------------------------------------------------------------- exit codes

def test_usage_errors_exit_1(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["no-such-command"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["fit", "--input", "x.csv"])
    assert exc.value.code == 1


def test_data_errors_exit_2(workdir, tmp_path):
    assert main(["stats", "--input", str(tmp_path / "missing.csv")]) == 2
    bad = tmp_path / "bad.csv"
    bad.write_text("date,i,j,value\n2020-01-01,1,1,-1\n")
    assert main(["stats", "--input", str(bad)]) == 2
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"window": 10}))
    assert main(["backtest", "--config", str(cfg)]) == 2
    assert main(["fit", "--input", str(workdir / "cov.csv"), "--window", "9999",
                 "--model", "HAR", "--output", str(tmp_path / "m.json")]) == 2


def test_numerical_errors_exit_3(tmp_path):
    # a constant history leaves the HAR design singular
    dates = pd.bdate_range("2020-01-01", periods=60)
    rows = [(d.strftime("%Y-%m-%d"), i, j, v) for d in dates
            for (i, j, v) in ((1, 1, 2.0), (1, 2, 0.5), (2, 2, 1.0))]
    path = tmp_path / "const.csv"
    pd.DataFrame(rows, columns=["date", "i", "j", "value"]).to_csv(path, index=False)
    assert main(["fit", "--input", str(path), "--model", "HAR",
                 "--output", str(tmp_path / "m.json")]) == 3


def test_log_lines_are_json(workdir, tmp_path, capsys):
    main(["--log-level", "INFO", "heatmap-data", "--input", str(workdir / "cov.csv"),
          "--output", str(tmp_path / "h.csv")])
    main(["stats", "--input", str(tmp_path / "missing.csv")])
    err = capsys.readouterr().err.strip().splitlines()
    assert err
    for line in err:
        json.loads(line)
