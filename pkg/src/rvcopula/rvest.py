"""
Daily realized covariance matrices from intraday log prices.

Includes the plain realized covariance, the subgrid-averaged estimator, a
synthetic intraday generator (multivariate diffusion with stochastic
log-variance plus i.i.d. microstructure noise), descriptive statistics with a
rescaled-range Hurst exponent, and CSV readers/writers for intraday panels,
covariance series and summary tables.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import signal, stats

from ._validation import DataError, SingularCovarianceWarning
from .matxform import vech_index

SESSION_OPEN = "09:30"
SESSION_CLOSE = "16:00"
SESSION_SECONDS = 6.5 * 3600
DEFAULT_TZ = "America/New_York"


@dataclass
class IntradayPanel:
    """Aligned intraday log prices.

    Attributes
    ----------
    assets : list of str
        Symbols, one per column.
    days : pandas.DatetimeIndex
        Trading dates (normalized, timezone naive).
    grid : ndarray, shape (M + 1,)
        Seconds after the session open of every grid point; strictly increasing.
    logprices : ndarray, shape (T, M + 1, n)
    """

    assets: list
    days: pd.DatetimeIndex
    grid: np.ndarray
    logprices: np.ndarray

    def __post_init__(self):
        self.days = pd.DatetimeIndex(self.days)
        self.grid = np.asarray(self.grid, dtype=float)
        self.logprices = np.asarray(self.logprices, dtype=float)
        T, npts, n = self.logprices.shape
        if len(self.assets) != n:
            raise DataError(f"{len(self.assets)} symbols for {n} price columns")
        if len(self.days) != T:
            raise DataError(f"{len(self.days)} dates for {T} days of prices")
        if self.grid.shape != (npts,):
            raise DataError("grid length must match the number of intraday points")
        if np.any(np.diff(self.grid) <= 0):
            raise DataError("intraday grid must be strictly increasing")
        if not np.all(np.isfinite(self.logprices)):
            raise DataError("panel contains missing or non-finite log prices")

    @property
    def n_assets(self):
        return self.logprices.shape[2]

    @property
    def n_days(self):
        return self.logprices.shape[0]

    @property
    def n_intervals(self):
        return self.logprices.shape[1] - 1

    def day_index(self, day):
        if isinstance(day, (int, np.integer)):
            if not 0 <= day < self.n_days:
                raise KeyError(f"day index {day} outside panel of {self.n_days} days")
            return int(day)
        key = pd.Timestamp(day).normalize()
        try:
            return int(self.days.get_loc(key))
        except KeyError:
            raise KeyError(f"day {key.date()} not in panel") from None

    def daily_returns(self):
        """Close-to-close log returns, shape (T, n); day one is open-to-close."""
        close = self.logprices[:, -1, :]
        prev = np.vstack([self.logprices[:1, 0, :], close[:-1]])
        return close - prev


@dataclass
class CovarianceSeries:
    """Dated sequence of SPD matrices, ``mats`` of shape (T, n, n)."""

    dates: pd.DatetimeIndex
    mats: np.ndarray
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        self.dates = pd.DatetimeIndex(self.dates)
        self.mats = np.asarray(self.mats, dtype=float)
        if self.mats.ndim != 3 or self.mats.shape[1] != self.mats.shape[2]:
            raise DataError(f"covariance stack must be (T, n, n), got {self.mats.shape}")
        if len(self.dates) != len(self.mats):
            raise DataError("dates and matrices differ in length")
        if self.check:
            if not np.allclose(self.mats, np.swapaxes(self.mats, 1, 2), rtol=1e-10, atol=0):
                raise DataError("covariance series contains asymmetric matrices")
            mins = np.linalg.eigvalsh(self.mats)[:, 0]
            bad = np.flatnonzero(mins <= 0)
            if bad.size:
                raise DataError(
                    f"{bad.size} matrices are not positive definite "
                    f"(first at {self.dates[bad[0]].date()})"
                )

    def __len__(self):
        return len(self.mats)

    @property
    def n_assets(self):
        return self.mats.shape[1]

    def subset(self, idx):
        return CovarianceSeries(self.dates[idx], self.mats[idx], check=False)


def intraday_returns(panel, day):
    """M x n matrix of intraday returns for one day of the panel."""
    t = panel.day_index(day)
    return np.diff(panel.logprices[t], axis=0)


def realized_cov(returns):
    """Realized covariance: sum over intraday returns of ``r_j r_j'``.

    Emits :class:`SingularCovarianceWarning` when there are no more returns
    than assets or the result is numerically singular.
    """
    r = np.asarray(returns, dtype=float)
    if r.ndim == 1:
        r = r[:, None]
    M, n = r.shape
    g = r.T @ r
    g = 0.5 * (g + g.T)
    if M <= n:
        warnings.warn(
            f"{M} returns for {n} assets: positive definiteness not guaranteed",
            SingularCovarianceWarning,
            stacklevel=2,
        )
    elif _is_singular(g):
        warnings.warn(
            "realized covariance is numerically singular",
            SingularCovarianceWarning,
            stacklevel=2,
        )
    return g


def _is_singular(g):
    w = np.linalg.eigvalsh(g)
    return w[0] <= g.shape[0] * np.finfo(float).eps * max(w[-1], 0.0)


def subsampled_realized_cov(panel, day, base_step, K):
    """Average of ``K`` realized covariances on offset sparse grids.

    Subgrid ``k`` samples every ``base_step``-th grid point starting at offset
    ``k`` (in finest-grid ticks), ``k = 0, ..., K - 1``.
    """
    base_step = int(base_step)
    K = int(K)
    if K < 1 or base_step < 1:
        raise DataError("base_step and K must be positive integers")
    prices = panel.logprices[panel.day_index(day)]
    npts = prices.shape[0]
    if base_step * K > npts - 1 or base_step > npts - 1:
        raise DataError(
            f"grid of {npts - 1} intervals too short for base_step={base_step}, K={K}"
        )
    acc = np.zeros((panel.n_assets, panel.n_assets))
    for k in range(K):
        sub = prices[k::base_step]
        if len(sub) < 2:
            raise DataError(f"subgrid at offset {k} has fewer than two points")
        acc += realized_cov(np.diff(sub, axis=0))
    return acc / K


def realized_covariance_series(panel, base_step=1, K=1, scale=1.0):
    """Subsampled realized covariance for every day of ``panel``.

    ``scale`` multiplies every matrix (1e4 converts squared log returns to
    squared percent returns).
    """
    mats = np.stack(
        [subsampled_realized_cov(panel, t, base_step, K) for t in range(panel.n_days)]
    )
    return CovarianceSeries(panel.days, scale * mats)


@dataclass
class VolParams:
    """Stochastic-volatility settings for :func:`simulate_panel` (daily units).

    The log spot variance of asset ``i`` follows an Ornstein-Uhlenbeck process
    ``dh = kappa (log(mean_var_i) - h) dt + volvol dW``; spot covariances are
    ``D R D`` with ``D = diag(exp(h / 2))`` and constant correlation ``R``.
    """

    mean_var: object = 2e-4
    kappa: float = 0.05
    volvol: float = 0.15
    corr: object = 0.4
    drift: float = 0.0
    spread: float = 0.5

    def mean_vars(self, n):
        mv = np.asarray(self.mean_var, dtype=float)
        if mv.ndim == 0:
            # spread mean variances geometrically so assets are distinguishable
            factors = np.exp(np.linspace(-self.spread, self.spread, n) / 2) if n > 1 else np.ones(1)
            mv = mv * factors
        if mv.shape != (n,) or np.any(mv <= 0):
            raise DataError("mean_var must be positive, scalar or one value per asset")
        return mv

    def correlation(self, n):
        c = np.asarray(self.corr, dtype=float)
        if c.ndim == 0:
            c = np.full((n, n), float(c))
            np.fill_diagonal(c, 1.0)
        if c.shape != (n, n) or np.linalg.eigvalsh(c)[0] <= 0:
            raise DataError("corr must be a scalar or an n x n positive-definite matrix")
        return c


def simulate_panel(n, T, M, vol_params=None, noise_sd=0.0, seed=0,
                   start="2000-01-03", return_latent=False):
    """Simulate noisy intraday log prices and the true integrated covariances.

    Parameters
    ----------
    n, T, M : int
        Assets, trading days and intraday intervals per day (``M + 1`` grid
        points spanning 09:30 to 16:00).
    vol_params : VolParams, optional
    noise_sd : float
        Standard deviation of the additive Gaussian observation noise.
    seed : int
        Every day draws from its own Philox stream spawned from ``seed``, so
        output is bit-identical across runs.
    return_latent : bool
        Also return the noise-free latent log prices.

    Returns
    -------
    panel : IntradayPanel
    truth : CovarianceSeries
        Integrated covariance of each day (Riemann sum of the spot
        covariances used by the Euler scheme).
    """
    if n < 1 or T < 30 or M < n + 1:
        raise DataError("simulate_panel needs n >= 1, T >= 30 and M >= n + 1")
    vp = vol_params if vol_params is not None else VolParams()
    mean_logvar = np.log(vp.mean_vars(n))
    corr = vp.correlation(n)
    corr_chol = np.linalg.cholesky(corr)
    dt = 1.0 / M
    phi = np.exp(-vp.kappa * dt)
    if vp.kappa > 0:
        step_sd = vp.volvol * np.sqrt((1 - phi ** 2) / (2 * vp.kappa))
        stat_sd = vp.volvol / np.sqrt(2 * vp.kappa)
    else:
        step_sd = vp.volvol * np.sqrt(dt)
        stat_sd = 0.0

    root = np.random.SeedSequence(seed)
    init_seq, *day_seqs = root.spawn(T + 1)
    init_rng = np.random.Generator(np.random.Philox(init_seq))
    h = mean_logvar + stat_sd * init_rng.standard_normal(n)
    level = np.zeros(n)

    latent = np.empty((T, M + 1, n))
    observed = np.empty((T, M + 1, n))
    truth = np.empty((T, n, n))
    for t in range(T):
        rng = np.random.Generator(np.random.Philox(day_seqs[t]))
        shocks = rng.standard_normal((M, n))
        eta = rng.standard_normal((M, n))
        noise = rng.standard_normal((M + 1, n))
        # exact AR(1) discretization of the OU log-variance, h[k] is the
        # spot level used over interval k
        drive = (1 - phi) * mean_logvar + step_sd * eta[:-1]
        hpath = np.empty((M, n))
        hpath[0] = h
        if M > 1:
            hpath[1:], _ = signal.lfilter([1.0], [1.0, -phi], drive, axis=0,
                                          zi=(phi * h)[None, :])
        h = phi * hpath[-1] + (1 - phi) * mean_logvar + step_sd * eta[-1]
        sd = np.exp(hpath / 2)
        incr = vp.drift * dt + np.sqrt(dt) * sd * (shocks @ corr_chol.T)
        path = level + np.vstack([np.zeros(n), np.cumsum(incr, axis=0)])
        latent[t] = path
        level = path[-1]
        observed[t] = path + noise_sd * noise if noise_sd > 0 else path
        truth[t] = corr * ((sd.T @ sd) * dt)

    days = pd.bdate_range(start=start, periods=T)
    grid = np.linspace(0.0, SESSION_SECONDS, M + 1)
    assets = [f"A{i + 1}" for i in range(n)]
    panel = IntradayPanel(assets, days, grid, observed)
    out = (panel, CovarianceSeries(days, truth))
    if return_latent:
        out = out + (latent,)
    return out


@dataclass
class SummaryStats:
    """Descriptive statistics of one series; ``None`` marks unavailable values."""

    mean: float
    max: float
    min: float
    std: float
    skewness: object
    kurtosis: object
    hurst: object

    COLUMNS = ("Mean", "Max", "Min", "Std", "Skewness", "Kurtosis", "Hurst-Exponent")

    def row(self):
        return [self.mean, self.max, self.min, self.std,
                self.skewness, self.kurtosis, self.hurst]


def hurst_rs(x, min_block=8):
    """Rescaled-range Hurst exponent.

    Block sizes are ``min_block * 2**k`` up to ``len(x) // 2``; the exponent
    is the OLS slope of log mean(R/S) on log block size.
    """
    x = np.asarray(x, dtype=float)
    N = len(x)
    if N < 4 * min_block:
        raise DataError(f"Hurst estimate needs at least {4 * min_block} observations")
    sizes = []
    s = min_block
    while s <= N // 2:
        sizes.append(s)
        s *= 2
    rs = []
    for s in sizes:
        k = N // s
        blocks = x[: k * s].reshape(k, s)
        dev = np.cumsum(blocks - blocks.mean(axis=1, keepdims=True), axis=1)
        r = dev.max(axis=1) - dev.min(axis=1)
        sd = blocks.std(axis=1)
        ok = sd > 0
        if not np.any(ok):
            return None
        rs.append(np.mean(r[ok] / sd[ok]))
    slope = np.polyfit(np.log(sizes), np.log(rs), 1)[0]
    return float(slope)


def summary_stats(series):
    x = np.asarray(series, dtype=float)
    if x.ndim != 1 or len(x) < 2:
        raise DataError("summary_stats needs a 1-D series of length >= 2")
    if not np.all(np.isfinite(x)):
        raise DataError("series contains non-finite values")
    sd = float(np.std(x, ddof=1))
    constant = np.ptp(x) == 0
    skew = None if constant else float(stats.skew(x))
    kurt = None if constant else float(stats.kurtosis(x, fisher=False))
    hurst = hurst_rs(x) if len(x) >= 32 and not constant else None
    return SummaryStats(float(np.mean(x)), float(np.max(x)), float(np.min(x)),
                        sd, skew, kurt, hurst)


def coordinate_labels(assets):
    """Labels of vech positions: the asset name on the diagonal, ``A-B`` above it."""
    rows, cols = vech_index(len(assets))
    return [assets[i] if i == j else f"{assets[i]}-{assets[j]}" for i, j in zip(rows, cols)]


def summary_table(vech_series, labels):
    """DataFrame with one row of :class:`SummaryStats` per vech coordinate."""
    vech_series = np.asarray(vech_series, dtype=float)
    rows = [summary_stats(vech_series[:, j]).row() for j in range(vech_series.shape[1])]
    return pd.DataFrame(rows, index=pd.Index(labels, name="element"),
                        columns=list(SummaryStats.COLUMNS))


# --- CSV interfaces ---------------------------------------------------------

def write_intraday_csv(panel, path, tz=DEFAULT_TZ, open_time=SESSION_OPEN):
    """Write ``timestamp,symbol,logprice`` rows sorted by timestamp."""
    T, npts, n = panel.logprices.shape
    opens = pd.DatetimeIndex(
        [pd.Timestamp(f"{d.date()} {open_time}") for d in panel.days]
    ).tz_localize(tz)
    offsets = pd.to_timedelta(panel.grid, unit="s")
    stamps = opens.repeat(npts) + np.tile(offsets, T)
    iso = np.array([ts.isoformat() for ts in stamps])
    frame = pd.DataFrame({
        "timestamp": np.repeat(iso, n),
        "symbol": np.tile(np.asarray(panel.assets), T * npts),
        "logprice": panel.logprices.reshape(-1),
    })
    frame.to_csv(path, index=False, float_format="%.17g", encoding="utf-8")


def read_intraday_csv(path, step_seconds=5, tz=DEFAULT_TZ,
                      open_time=SESSION_OPEN, close_time=SESSION_CLOSE):
    """Read ``timestamp,symbol,logprice`` rows and align them to a regular grid.

    Every grid point takes the last observed price at or before it
    (previous-tick rule); grid points before a symbol's first tick of the day
    take that first tick.
    """
    frame = pd.read_csv(path, encoding="utf-8", float_precision="round_trip")
    missing = {"timestamp", "symbol", "logprice"} - set(frame.columns)
    if missing:
        raise DataError(f"intraday CSV lacks columns {sorted(missing)}")
    if frame["logprice"].isna().any():
        raise DataError("intraday CSV has empty logprice values")
    ts = pd.to_datetime(frame["timestamp"], utc=True, format="ISO8601").dt.tz_convert(tz)
    frame = frame.assign(ts=ts.dt.tz_localize(None), symbol=frame["symbol"].astype(str))
    frame = frame.sort_values(["ts", "symbol"], kind="mergesort")
    assets = sorted(frame["symbol"].unique())
    t_open = pd.Timedelta(f"{open_time}:00")
    t_close = pd.Timedelta(f"{close_time}:00")
    span = (t_close - t_open).total_seconds()
    if span <= 0 or span % step_seconds:
        raise DataError("session length must be a positive multiple of the step")
    grid = np.arange(0.0, span + step_seconds / 2, step_seconds)

    frame["day"] = frame["ts"].dt.normalize()
    days = pd.DatetimeIndex(sorted(frame["day"].unique()))
    out = np.empty((len(days), len(grid), len(assets)))
    for di, (day, chunk) in enumerate(frame.groupby("day", sort=True)):
        targets = pd.DataFrame({"ts": day + t_open + pd.to_timedelta(grid, unit="s")})
        for ai, sym in enumerate(assets):
            ticks = chunk.loc[chunk["symbol"] == sym, ["ts", "logprice"]]
            if ticks.empty:
                raise DataError(f"no ticks for {sym} on {day.date()}")
            aligned = pd.merge_asof(targets, ticks, on="ts", direction="backward")
            vals = aligned["logprice"].to_numpy()
            vals = np.where(np.isnan(vals), ticks["logprice"].iloc[0], vals)
            out[di, :, ai] = vals
    return IntradayPanel(assets, days, grid, out)


def write_covariance_csv(series, path, float_format="%.17g"):
    """Write ``date,i,j,value`` rows (1-based indices, upper triangle)."""
    n = series.n_assets
    rows, cols = vech_index(n)
    T = len(series)
    frame = pd.DataFrame({
        "date": np.repeat(series.dates.strftime("%Y-%m-%d"), len(rows)),
        "i": np.tile(rows + 1, T),
        "j": np.tile(cols + 1, T),
        "value": series.mats[:, rows, cols].ravel(),
    })
    frame.to_csv(path, index=False, float_format=float_format)


def read_covariance_csv(path):
    frame = pd.read_csv(path, float_precision="round_trip")
    missing = {"date", "i", "j", "value"} - set(frame.columns)
    if missing:
        raise DataError(f"covariance CSV lacks columns {sorted(missing)}")
    if (frame["i"] > frame["j"]).any():
        raise DataError("covariance CSV must list the upper triangle only (i <= j)")
    n = int(frame["j"].max())
    dates = pd.DatetimeIndex(sorted(pd.to_datetime(frame["date"]).unique()))
    pos = {d: k for k, d in enumerate(dates)}
    mats = np.full((len(dates), n, n), np.nan)
    di = pd.to_datetime(frame["date"]).map(pos).to_numpy()
    i = frame["i"].to_numpy() - 1
    j = frame["j"].to_numpy() - 1
    mats[di, i, j] = frame["value"].to_numpy()
    mats[di, j, i] = frame["value"].to_numpy()
    if np.isnan(mats).any():
        raise DataError("covariance CSV is missing entries for some dates")
    return CovarianceSeries(dates, mats)
