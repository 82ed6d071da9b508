"""
Forecast evaluation: losses, model confidence sets and portfolio checks.

Statistical side: Frobenius RMSE over the upper triangle, the Stein
(multivariate QLIKE) loss and a Model Confidence Set with the range statistic
and a circular block bootstrap. Economic side: long-only minimum variance
portfolios solved by a small active-set method, ex-post efficient frontiers
and rank-correlation matrices of lag pairs.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import linalg, stats

from ._validation import DataError, NumericalError, check_matrix, check_spd
from .rvest import CovarianceSeries

TRADING_DAYS = 252
KKT_TOL = 1e-10
FEAS_TOL = 1e-8
STEP_TOL = 1e-10


def _stack(x, name):
    if isinstance(x, CovarianceSeries):
        return x.mats
    x = np.asarray(x, dtype=float)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or x.shape[1] != x.shape[2]:
        raise DataError(f"{name} must have shape (T, n, n), got {x.shape}")
    return x


def _aligned(forecasts, realized):
    if isinstance(forecasts, CovarianceSeries) and isinstance(realized, CovarianceSeries):
        if not forecasts.dates.equals(realized.dates):
            raise DataError("forecast and realized series have different dates")
    F, R = _stack(forecasts, "forecasts"), _stack(realized, "realized")
    if F.shape != R.shape:
        raise DataError(f"misaligned series: {F.shape} vs {R.shape}")
    return F, R


# ---------------------------------------------------------------- losses

def frobenius_errors(forecasts, realized):
    """Per-day root of the summed squared upper-triangle errors."""
    F, R = _aligned(forecasts, realized)
    iu = np.triu_indices(F.shape[1])
    err = (F - R)[:, iu[0], iu[1]]
    return np.sqrt(np.sum(err ** 2, axis=1))


def frobenius_rmse(forecasts, realized):
    """Mean over days of ``sqrt(sum_{i <= j} e_ij^2)``."""
    return float(np.mean(frobenius_errors(forecasts, realized)))


def stein_loss(forecast, realized, orientation="underprediction"):
    """Stein loss between an SPD forecast and the realized matrix.

    With the default orientation the loss is
    ``tr(realized forecast^-1) - ln det(realized forecast^-1) - N``, which
    penalizes a forecast that is too small more than one that is too large.
    ``orientation="literal"`` swaps the roles of the two matrices.

    Evaluated through the generalized eigenvalues ``lam`` of
    ``(realized, forecast)`` as ``sum(lam - ln lam - 1)``, so the result is
    nonnegative up to rounding and exactly zero for equal arguments.
    """
    forecast = check_spd(np.atleast_2d(forecast), name="forecast")
    realized = check_spd(np.atleast_2d(realized), name="realized")
    if forecast.shape != realized.shape:
        raise DataError("forecast and realized matrices differ in shape")
    if orientation == "underprediction":
        a, b = realized, forecast
    elif orientation == "literal":
        a, b = forecast, realized
    else:
        raise ValueError("orientation must be 'underprediction' or 'literal'")
    try:
        lam = linalg.eigh(a, b, eigvals_only=True)
    except linalg.LinAlgError as exc:
        raise NumericalError(f"stein loss: singular matrix ({exc})") from exc
    if np.any(lam <= 0):
        raise NumericalError("stein loss: non-positive generalized eigenvalue")
    return float(max(np.sum(lam - np.log(lam) - 1.0), 0.0))


def stein_losses(forecasts, realized, orientation="underprediction"):
    F, R = _aligned(forecasts, realized)
    return np.array([stein_loss(f, r, orientation) for f, r in zip(F, R)])


# ---------------------------------------------------------------- MCS

@dataclass
class McsResult:
    """Outcome of a model confidence set run.

    ``pvalues`` are the MCS p-values (running maximum along the elimination
    order); ``retained`` lists models with p-value >= ``alpha`` in input order.
    """

    models: list
    retained: list
    eliminated: list
    pvalues: dict
    alpha: float
    n_boot: int
    block_len: int
    statistics: list = field(default_factory=list)

    def in_mcs(self, model):
        return model in self.retained


def circular_block_indices(T, block_len, n_boot, seed=0):
    """Bootstrap index paths of length ``T``; replication ``b`` uses stream ``(seed, b)``."""
    n_blocks = -(-T // block_len)
    offsets = np.arange(block_len)
    out = np.empty((n_boot, T), dtype=np.int64)
    for b in range(n_boot):
        rng = np.random.default_rng([int(seed), b])
        starts = rng.integers(0, T, size=n_blocks)
        out[b] = ((starts[:, None] + offsets) % T).ravel()[:T]
    return out


def _range_stats(means, boot_means):
    """t-statistics and bootstrap range statistics for the current model set."""
    d = means[:, None] - means[None, :]
    dstar = boot_means[:, :, None] - boot_means[:, None, :] - d
    var = np.mean(dstar ** 2, axis=0)
    zero = var <= 1e-14 * max(float(np.max(np.abs(means))), 1e-300) ** 2
    safe = np.where(zero, 1.0, np.sqrt(var))
    # zero-variance pairs: equal models when the mean differential is 0
    t = np.where(zero, np.where(d == 0, 0.0, np.copysign(np.inf, d)), d / safe)
    tstar = np.where(zero[None], 0.0, np.abs(dstar) / safe[None])
    return t, tstar.reshape(len(boot_means), -1).max(axis=1)


def mcs(losses, alpha=0.05, n_boot=999, block_len=None, seed=0, models=None):
    """Model confidence set with the range statistic ``T_R = max |t_ij|``.

    Parameters
    ----------
    losses : dict or ndarray
        ``{model: loss series}`` or an array of shape (T, k).
    alpha : float
    n_boot : int
    block_len : int, optional
        Circular block length; defaults to ``ceil(T ** (1/3))``.
    seed : int
    models : list of str, optional
        Names of the columns when ``losses`` is an array.
    """
    if isinstance(losses, dict):
        models = list(losses)
        L = np.column_stack([np.asarray(losses[k], dtype=float) for k in models])
    else:
        L = check_matrix(losses, name="losses")
        models = list(models) if models is not None else [str(j) for j in range(L.shape[1])]
    if L.shape[1] != len(models):
        raise DataError("number of model names differs from loss columns")
    if not np.all(np.isfinite(L)):
        raise DataError("loss series contain non-finite values")
    T, k = L.shape
    if block_len is None:
        block_len = max(1, math.ceil(T ** (1.0 / 3.0)))
    block_len = int(block_len)
    if k == 1:
        return McsResult(models, list(models), [], {models[0]: 1.0}, alpha, n_boot, block_len)

    idx = circular_block_indices(T, block_len, int(n_boot), seed)
    counts = np.zeros((int(n_boot), T))
    np.add.at(counts, (np.arange(int(n_boot))[:, None], idx), 1.0)
    boot = counts @ L / T
    means = L.mean(axis=0)

    alive = list(range(k))
    eliminated, pvals, statistics = [], {}, []
    running = 0.0
    while len(alive) > 1:
        t, tstar = _range_stats(means[alive], boot[:, alive])
        TR = float(np.max(np.abs(t)))
        p = float(np.mean(tstar >= TR)) if np.isfinite(TR) else 0.0
        running = max(running, p)
        # worst model: largest max_j t_ij, ties to the lowest index
        worst = alive[int(np.argmax(np.max(t, axis=1)))]
        statistics.append({"models": [models[i] for i in alive], "T_R": TR, "pvalue": p})
        pvals[models[worst]] = running
        eliminated.append(models[worst])
        alive.remove(worst)
    pvals[models[alive[0]]] = 1.0
    retained = [m for m in models if pvals[m] >= alpha]
    return McsResult(models, retained, eliminated, pvals, alpha, int(n_boot),
                     block_len, statistics)


# ---------------------------------------------------------------- GMVP

@dataclass
class GmvpResult:
    """Solution of one long-only minimum variance problem.

    ``weights`` is None when the target return is infeasible. ``multipliers``
    holds the equality multipliers (budget, then return) and ``bound_mult``
    the multipliers of the active lower bounds.
    """

    feasible: bool
    weights: np.ndarray = None
    mu_p: float = None
    variance: float = None
    multipliers: np.ndarray = None
    bound_mult: np.ndarray = None
    active: np.ndarray = None
    n_iter: int = 0
    realized_return: float = None
    realized_sd: float = None


def _kkt_solve(S, A, rhs_top, rhs_bottom):
    k = A.shape[0]
    K = np.block([[2.0 * S, A.T], [A, np.zeros((k, k))]])
    rhs = np.concatenate([rhs_top, rhs_bottom])
    try:
        return np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(K, rhs, rcond=None)[0]


def _start_point(mu, mu_p):
    n = mu.size
    if mu_p is None:
        return np.full(n, 1.0 / n)
    lo, hi = int(np.argmin(mu)), int(np.argmax(mu))
    w = np.zeros(n)
    if mu[hi] - mu[lo] <= FEAS_TOL * max(1.0, abs(mu_p)):
        w[lo] = 1.0
        return w
    w[lo] = (mu[hi] - mu_p) / (mu[hi] - mu[lo])
    w[hi] = 1.0 - w[lo]
    return w


def gmvp(forecast, expected_returns=None, mu_p=None, realized=None,
         realized_returns=None, max_iter=200):
    """Minimize ``w' S w`` subject to ``sum w = 1``, ``w >= 0`` and optionally ``w' mu = mu_p``.

    Primal active-set method started from a feasible point (equal weights,
    or a mix of the lowest and highest expected-return assets when a target
    is given). Bounds enter and leave the working set by lowest index.

    Parameters
    ----------
    forecast : ndarray, shape (n, n)
        SPD covariance forecast.
    expected_returns : ndarray, shape (n,), optional
        Needed when ``mu_p`` is given.
    mu_p : float, optional
        Target expected return. ``None`` drops the return constraint.
    realized, realized_returns : optional
        Realized covariance and return vector used for the ex-post
        ``realized_sd`` and ``realized_return``.

    Returns
    -------
    GmvpResult
    """
    S = check_spd(np.atleast_2d(forecast), name="forecast")
    n = S.shape[0]
    if mu_p is not None:
        if expected_returns is None:
            raise DataError("a target return needs expected_returns")
        mu = np.asarray(expected_returns, dtype=float).ravel()
        if mu.size != n:
            raise DataError(f"expected_returns has {mu.size} entries for {n} assets")
        tol = FEAS_TOL * max(1.0, abs(mu_p))
        if mu_p < mu.min() - tol or mu_p > mu.max() + tol:
            return GmvpResult(feasible=False, mu_p=mu_p)
        if mu.max() - mu.min() <= tol:
            # all assets share the target return: the constraint is the budget
            A = np.ones((1, n))
        else:
            A = np.vstack([np.ones(n), mu])
    else:
        mu = None
        A = np.ones((1, n))

    w = _start_point(mu if mu is not None else np.zeros(n), mu_p if A.shape[0] == 2 else None)
    active = w <= 0.0
    w[active] = 0.0
    scale = max(float(np.max(np.abs(S))), 1e-300)
    for it in range(1, max_iter + 1):
        free = np.flatnonzero(~active)
        Sf, Af = S[np.ix_(free, free)], A[:, free]
        sol = _kkt_solve(Sf, Af, -2.0 * Sf @ w[free], np.zeros(A.shape[0]))
        step = sol[:free.size]
        if np.max(np.abs(step), initial=0.0) <= STEP_TOL:
            grad = 2.0 * S @ w
            lam = np.linalg.lstsq(Af.T, grad[free], rcond=None)[0]
            s = grad - A.T @ lam
            s_act = np.where(active, s, 0.0)
            neg = np.flatnonzero(active & (s < -KKT_TOL * scale))
            if neg.size == 0:
                res = GmvpResult(True, w, mu_p, float(w @ S @ w), lam, s_act,
                                 np.flatnonzero(active), it)
                return _attach_realized(res, realized, realized_returns)
            active[neg[0]] = False
            continue
        shrinking = step < 0
        ratios = np.full(free.size, np.inf)
        ratios[shrinking] = -w[free][shrinking] / step[shrinking]
        block = int(np.argmin(ratios))
        if ratios[block] < 1.0:
            w[free] += ratios[block] * step
            w[free[block]] = 0.0
            active[free[block]] = True
        else:
            w[free] += step
        w = np.maximum(w, 0.0)
    raise NumericalError(f"active-set GMVP did not converge in {max_iter} iterations")


def _attach_realized(res, realized, realized_returns):
    if realized is not None:
        G = np.atleast_2d(np.asarray(realized, dtype=float))
        res.realized_sd = float(np.sqrt(max(res.weights @ G @ res.weights, 0.0)))
    if realized_returns is not None:
        res.realized_return = float(res.weights @ np.asarray(realized_returns, dtype=float))
    return res


def kkt_residual(result, forecast, expected_returns=None):
    """Largest violation of stationarity, sign and complementarity conditions."""
    S = np.atleast_2d(np.asarray(forecast, dtype=float))
    w = result.weights
    n = w.size
    A = np.ones((1, n))
    if result.multipliers.size == 2:
        A = np.vstack([A, np.asarray(expected_returns, dtype=float)])
    grad = 2.0 * S @ w
    s = np.zeros(n)
    s[result.active] = result.bound_mult[result.active]
    stationarity = np.max(np.abs(grad - A.T @ result.multipliers - s))
    sign = max(0.0, -float(np.min(s)))
    compl = float(np.max(np.abs(s * w)))
    primal = max(abs(w.sum() - 1.0), max(0.0, -float(w.min())))
    if A.shape[0] == 2:
        primal = max(primal, abs(float(A[1] @ w) - result.mu_p))
    return float(max(stationarity, sign, compl, primal))


def default_mu_grid(expected_returns, n_points=40):
    """Evenly spaced targets between the 10th and 90th percentiles of the mean returns."""
    mu = np.asarray(expected_returns, dtype=float).ravel()
    lo, hi = np.percentile(mu, [10, 90])
    return np.linspace(lo, hi, n_points)


def _realized_sd_unit(annualize):
    return math.sqrt(TRADING_DAYS) if annualize else 1.0


def efficient_frontier(forecasts, realized, expected_returns, mu_grid=None,
                       include_oracle=True, annualize=True):
    """Average ex-post portfolio sd per model and target return.

    Parameters
    ----------
    forecasts : dict
        ``{model: (T, n, n)}`` covariance forecasts.
    realized : ndarray, shape (T, n, n)
    expected_returns : ndarray, shape (T, n)
        In-window mean returns used by the return constraint on each day.
    mu_grid : array_like, optional
        Target returns; see :func:`default_mu_grid`.
    include_oracle : bool
        Add an ``"oracle"`` model that uses the realized matrix as forecast.
    annualize : bool
        Multiply daily sd by ``sqrt(252)``.

    Returns
    -------
    pandas.DataFrame
        Columns ``model, mu_p, avg_sd, n_feasible_days, n_infeasible_days``.
    """
    R = _stack(realized, "realized")
    mu = check_matrix(expected_returns, name="expected_returns")
    if mu.shape != R.shape[:2]:
        raise DataError("expected_returns must be (T, n) aligned with realized")
    grid = default_mu_grid(mu) if mu_grid is None else np.asarray(mu_grid, dtype=float)
    models = dict(forecasts)
    if include_oracle:
        models["oracle"] = R
    unit = _realized_sd_unit(annualize)
    rows = []
    for name, F in models.items():
        F = _stack(F, name)
        if F.shape != R.shape:
            raise DataError(f"forecasts of {name} are not aligned with realized")
        for target in grid:
            sds = []
            for t in range(len(R)):
                res = gmvp(F[t], mu[t], target, realized=R[t])
                if res.feasible:
                    sds.append(res.realized_sd)
            n_ok = len(sds)
            rows.append({
                "model": name,
                "mu_p": float(target),
                "avg_sd": float(np.mean(sds)) * unit if n_ok else float("nan"),
                "n_feasible_days": n_ok,
                "n_infeasible_days": len(R) - n_ok,
            })
    return pd.DataFrame(rows)


def gmvp_paths(forecasts, realized, realized_returns, dates=None, assets=None,
               annualize=True):
    """Daily GMVP weights (no return constraint) and their ex-post performance.

    Returns
    -------
    weights : pandas.DataFrame
        Long format ``date, model, asset, weight``.
    summary : pandas.DataFrame
        Per model: annualized mean realized return and realized sd.
    """
    R = _stack(realized, "realized")
    r = check_matrix(realized_returns, name="realized_returns")
    T, n = r.shape
    dates = pd.RangeIndex(T) if dates is None else pd.Index(dates)
    assets = [str(j + 1) for j in range(n)] if assets is None else list(assets)
    unit = _realized_sd_unit(annualize)
    rows, summary = [], []
    for name, F in forecasts.items():
        F = _stack(F, name)
        rets, sds = [], []
        for t in range(T):
            res = gmvp(F[t], realized=R[t], realized_returns=r[t])
            rets.append(res.realized_return)
            sds.append(res.realized_sd)
            day = dates[t].date().isoformat() if hasattr(dates[t], "date") else dates[t]
            rows.extend({"date": day, "model": name, "asset": assets[j],
                         "weight": float(res.weights[j])} for j in range(n))
        summary.append({
            "model": name,
            "mean_return": float(np.mean(rets)) * (TRADING_DAYS if annualize else 1),
            "avg_sd": float(np.mean(sds)) * unit,
            "return_sd": float(np.std(rets, ddof=1)) * unit if T > 1 else float("nan"),
        })
    return pd.DataFrame(rows), pd.DataFrame(summary)


# ---------------------------------------------------------------- heatmap data

def rank_corr_matrix(X):
    """Spearman correlations of the stacked lag matrix ``[X_{t-1}, X_t]``.

    Returns a (2m, 2m) array; entries involving a constant column are NaN.
    """
    X = check_matrix(X, min_rows=30)
    Z = np.hstack([X[:-1], X[1:]])
    ranks = stats.rankdata(Z, axis=0)
    ranks -= ranks.mean(axis=0)
    norm = np.sqrt(np.sum(ranks ** 2, axis=0))
    const = norm == 0
    norm[const] = 1.0
    rho = (ranks.T @ ranks) / np.outer(norm, norm)
    rho = np.clip(rho, -1.0, 1.0)
    rho[const, :] = np.nan
    rho[:, const] = np.nan
    return rho


# ---------------------------------------------------------------- outputs

def loss_report(forecasts, realized, alpha=0.05, n_boot=999, block_len=None, seed=0,
                coverage=None, min_coverage=0.95, orientation="underprediction"):
    """Per-model RMSE, mean Stein loss and Stein-loss MCS membership.

    ``forecasts`` maps models to (T, n, n) arrays that may contain NaN
    matrices on failed days. Models whose coverage falls below
    ``min_coverage`` keep their losses but get no MCS entry; the MCS itself
    runs on the days every remaining model covers.
    """
    R = _stack(realized, "realized")
    report, stein_series = {}, {}
    common = np.ones(len(R), dtype=bool)
    for name, F in forecasts.items():
        F = _stack(F, name)
        ok = np.all(np.isfinite(F), axis=(1, 2))
        cov = float(ok.mean()) if coverage is None else float(coverage[name])
        entry = {"rmse": None, "mean_stein": None, "in_mcs_stein": None,
                 "mcs_pvalue": None, "coverage": cov}
        if ok.any():
            entry["rmse"] = frobenius_rmse(F[ok], R[ok])
            losses = np.full(len(R), np.nan)
            losses[ok] = stein_losses(F[ok], R[ok], orientation)
            entry["mean_stein"] = float(np.nanmean(losses))
            if cov >= min_coverage:
                stein_series[name] = losses
                common &= ok
        report[name] = entry
    if stein_series and common.any():
        res = mcs({k: v[common] for k, v in stein_series.items()}, alpha=alpha,
                  n_boot=n_boot, block_len=block_len, seed=seed)
        for name in stein_series:
            report[name]["in_mcs_stein"] = res.in_mcs(name)
            report[name]["mcs_pvalue"] = res.pvalues[name]
    return report


def write_loss_report(report, path):
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=False)
        fh.write("\n")


def write_frontier_csv(frame, path):
    frame[["model", "mu_p", "avg_sd", "n_feasible_days"]].to_csv(
        path, index=False, float_format="%.10g")


def write_gmvp_csv(frame, path):
    frame[["date", "model", "asset", "weight"]].to_csv(path, index=False, float_format="%.10g")


def write_rank_corr_csv(rho, path):
    """Long format ``row,col,rho`` with 1-based indices; undefined entries as ``nan``."""
    k = rho.shape[0]
    r, c = np.meshgrid(np.arange(1, k + 1), np.arange(1, k + 1), indexing="ij")
    pd.DataFrame({"row": r.ravel(), "col": c.ravel(), "rho": rho.ravel()}).to_csv(
        path, index=False, float_format="%.10g", na_rep="nan")
