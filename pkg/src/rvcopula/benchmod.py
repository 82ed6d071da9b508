"""
Benchmark forecasters: HAR per coordinate, scalar VARFIMA(1, d, 1) on the
vech vector, and DCC-GARCH(1, 1) on daily returns.
"""

import warnings

import numpy as np
from scipy import optimize, signal
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import BoundaryWarning, DataError, NumericalError, check_matrix
from .matxform import from_coords

HAR_LAGS = 22
HAR_MIN_LENGTH = 45


def har_design(series):
    """Regressors ``[1, x_{t-1}, weekly mean, monthly mean]`` and targets.

    Rows correspond to targets ``t = 22, ..., T - 1`` (0-based).
    """
    x = np.asarray(series, dtype=float)
    csum = np.concatenate([[0.0], np.cumsum(x)])
    t = np.arange(HAR_LAGS, len(x))
    daily = x[t - 1]
    weekly = (csum[t] - csum[t - 5]) / 5.0
    monthly = (csum[t] - csum[t - HAR_LAGS]) / HAR_LAGS
    design = np.column_stack([np.ones(t.size), daily, weekly, monthly])
    return design, x[t]


class HARRegressor(BaseEstimator):
    """Heterogeneous autoregression of one series on its daily, weekly (5-day)
    and monthly (22-day) lagged averages, fitted by OLS.

    Attributes
    ----------
    coef_ : ndarray of shape (4,)
        ``beta0, beta_d, beta_w, beta_m``.
    resid_sd_ : float
    """

    def fit(self, series):
        x = np.asarray(series, dtype=float).ravel()
        if x.size < HAR_MIN_LENGTH:
            raise DataError(f"HAR needs at least {HAR_MIN_LENGTH} observations, got {x.size}")
        if not np.all(np.isfinite(x)):
            raise DataError("series contains non-finite values")
        design, target = har_design(x)
        scale = np.max(np.abs(design), axis=0)
        scale[scale == 0] = 1.0
        coef, _, rank, sv = np.linalg.lstsq(design / scale, target, rcond=None)
        if rank < design.shape[1] or sv[-1] <= 1e-10 * sv[0]:
            raise NumericalError("singular HAR design: lagged averages are collinear")
        self.coef_ = coef / scale
        resid = target - design @ self.coef_
        self.resid_ = resid
        self.resid_sd_ = float(np.sqrt(resid @ resid / max(resid.size - 4, 1)))
        return self

    def predict(self, recent):
        """One-step forecast from exactly the last 22 observations."""
        check_is_fitted(self, "coef_")
        r = np.asarray(recent, dtype=float).ravel()
        if r.size != HAR_LAGS:
            raise DataError(f"HAR forecast needs the last {HAR_LAGS} observations, got {r.size}")
        b0, bd, bw, bm = self.coef_
        return float(b0 + bd * r[-1] + bw * r[-5:].mean() + bm * r.mean())


def har_fit(series):
    return HARRegressor().fit(series)


def har_forecast(model, recent22):
    return model.predict(recent22)


class HARForecaster(BaseEstimator):
    """Independent HAR regressions on every vech coordinate.

    Parameters
    ----------
    coord : {"cholesky", "logmatrix"}
        Coordinate system of the history; used to rebuild the SPD forecast.
    """

    def __init__(self, coord="cholesky"):
        self.coord = coord

    def fit(self, X, y=None):
        X = check_matrix(X, min_rows=HAR_MIN_LENGTH)
        self.models_ = [HARRegressor().fit(X[:, j]) for j in range(X.shape[1])]
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "models_")
        X = check_matrix(X, min_rows=HAR_LAGS)
        recent = X[-HAR_LAGS:]
        return np.array([m.predict(recent[:, j]) for j, m in enumerate(self.models_)])

    def predict_matrix(self, X):
        return from_coords(self.predict(X), self.coord)


# --- VARFIMA(1, d, 1) ---------------------------------------------------------

D_BOUNDS = (0.01, 0.49)
ARMA_BOUNDS = (-0.95, 0.95)
START_GRID = (0.1, 0.25, 0.4), (-0.5, 0.0, 0.5), (-0.5, 0.0, 0.5)


def fracdiff_coeffs(d, K):
    """Coefficients ``pi_0..pi_K`` of the binomial expansion of ``(1 - L)**d``."""
    K = int(K)
    if K < 1:
        raise DataError("K must be at least 1")
    k = np.arange(1, K + 1)
    return np.concatenate([[1.0], np.cumprod((k - 1 - d) / k)])


def varfima_residuals(Z, d, phi, theta, trunc):
    """Residuals of ``(1 - phi L)(1 - L)^d z_t = (1 - theta L) e_t``.

    Fractional differencing is truncated at ``trunc`` lags; residuals are
    returned for ``t = trunc, ..., T - 1`` with the MA recursion started at
    zero, so the array has shape ``(T - trunc, m)``.
    """
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    T = Z.shape[0]
    if not 1 <= trunc < T:
        raise DataError(f"trunc must lie in [1, {T - 1}], got {trunc}")
    # fractional filter at t = trunc - 1 .. T - 1; the zero row stands in for
    # the lag that falls before the sample at t = trunc - 1
    padded = np.vstack([np.zeros((1, Z.shape[1])), Z])
    w = signal.fftconvolve(padded, fracdiff_coeffs(d, trunc)[:, None], mode="valid", axes=0)
    e = w[1:] - phi * w[:-1]
    return signal.lfilter([1.0], [1.0, -theta], e, axis=0)


def varfima_rss(Z, params, trunc):
    eps = varfima_residuals(Z, *params, trunc)
    return float(np.sum(eps * eps))


def ar_inf_coeffs(d, phi, theta, K):
    """First ``K + 1`` coefficients of the AR(infinity) operator
    ``(1 - theta L)^{-1} (1 - phi L) (1 - L)^d``."""
    b = np.convolve(fracdiff_coeffs(d, K), [1.0, -phi])[: K + 1]
    return signal.lfilter([1.0], [1.0, -theta], b)


class VARFIMAForecaster(BaseEstimator):
    """Scalar-parameter VARFIMA(1, d, 1) on vech coordinates.

    ``c`` is the sample mean; ``(d, phi, theta)`` minimize the pooled residual
    sum of squares (grid of starts, then bounded Nelder-Mead from the
    ``n_refine`` best of them).

    Parameters
    ----------
    trunc : int
        Lag truncation of the fractional filter and of the AR(infinity)
        forecast representation.
    coord : {"cholesky", "logmatrix"}
    n_refine : int
        Number of grid starts refined by Nelder-Mead.
    """

    def __init__(self, trunc=100, coord="cholesky", n_refine=1):
        self.trunc = trunc
        self.coord = coord
        self.n_refine = n_refine

    def fit(self, X, y=None):
        X = check_matrix(X, min_rows=4)
        T = X.shape[0]
        trunc = int(self.trunc)
        if trunc < 1 or trunc > T // 2:
            raise DataError(f"trunc must lie in [1, T/2] = [1, {T // 2}], got {trunc}")
        self.c_ = X.mean(axis=0)
        Z = X - self.c_
        bounds = [D_BOUNDS, ARMA_BOUNDS, ARMA_BOUNDS]

        def rss(p):
            return varfima_rss(Z, p, trunc)

        starts = np.array(np.meshgrid(*START_GRID, indexing="ij")).reshape(3, -1).T
        start_rss = np.array([rss(p) for p in starts])
        order = np.argsort(start_rss, kind="stable")[: max(1, int(self.n_refine))]
        best, trace = None, []
        for idx in order:
            try:
                res = optimize.minimize(
                    rss, starts[idx], method="Nelder-Mead", bounds=bounds,
                    options={"xatol": 1e-7, "fatol": 1e-12 * max(start_rss[idx], 1e-300),
                             "maxiter": 4000, "maxfev": 8000},
                )
            except (ValueError, FloatingPointError) as exc:
                trace.append(f"start {starts[idx]}: {exc}")
                continue
            trace.append(f"start {starts[idx]}: rss={res.fun:.6g} ({res.message})")
            if np.isfinite(res.fun) and (best is None or res.fun < best.fun):
                best = res
        if best is None:
            raise NumericalError("VARFIMA optimization failed at every start:\n" + "\n".join(trace))
        self.d_, self.phi_, self.theta_ = (float(v) for v in best.x)
        self.rss_ = float(best.fun)
        self.n_resid_ = Z.shape[1] * (T - trunc)
        self.sigma_ = np.cov(varfima_residuals(Z, *best.x, trunc), rowvar=False)
        self.trace_ = trace
        return self

    @property
    def params_(self):
        return np.array([self.d_, self.phi_, self.theta_])

    def predict(self, X):
        check_is_fitted(self, "c_")
        X = check_matrix(X)
        K = min(int(self.trunc), X.shape[0])
        a = ar_inf_coeffs(self.d_, self.phi_, self.theta_, K)
        Z = X[::-1][:K] - self.c_
        return self.c_ - a[1:K + 1] @ Z

    def predict_matrix(self, X):
        return from_coords(self.predict(X), self.coord)


def varfima_fit(X, trunc=100):
    return VARFIMAForecaster(trunc=trunc).fit(X)


def varfima_forecast(model, X):
    return model.predict(X)


# --- DCC-GARCH(1, 1) ---------------------------------------------------------

_PERSIST_MAX = 0.9999
DCC_MIN_LENGTH = 250


def _logistic(x):
    return 1.0 / (1.0 + np.exp(-x))


def _logit(p):
    return np.log(p / (1.0 - p))


def garch_variance(eps, omega, alpha, beta, d0=None):
    """Conditional variances ``d_t = omega + alpha eps_{t-1}^2 + beta d_{t-1}``.

    ``d_0`` defaults to the sample variance of ``eps``. Returns ``T + 1``
    values; the last is the one-step-ahead forecast.
    """
    eps = np.asarray(eps, dtype=float)
    d0 = float(np.mean(eps * eps)) if d0 is None else d0
    drive = omega + alpha * eps * eps
    rest, _ = signal.lfilter([1.0], [1.0, -beta], drive, zi=[beta * d0])
    return np.concatenate([[d0], rest])


def _garch_unpack(z, var):
    omega = var * np.exp(z[0])
    persist = _PERSIST_MAX * _logistic(z[1])
    share = _logistic(z[2])
    return omega, persist * share, persist * (1.0 - share)


def _garch_negll(z, eps, var):
    omega, alpha, beta = _garch_unpack(z, var)
    d = garch_variance(eps, omega, alpha, beta, d0=var)[:-1]
    if np.any(d <= 0) or not np.all(np.isfinite(d)):
        return 1e300
    return 0.5 * float(np.sum(np.log(d) + eps * eps / d))


def fit_garch11(eps):
    """Gaussian quasi-MLE of GARCH(1, 1) on demeaned returns.

    Returns ``(omega, alpha, beta)`` and a flag that is True when the estimate
    sits on the boundary of the admissible region.
    """
    eps = np.asarray(eps, dtype=float)
    var = float(np.mean(eps * eps))
    if var <= 0:
        raise DataError("cannot fit GARCH to a constant return series")
    best = None
    for alpha0, beta0 in ((0.05, 0.90), (0.10, 0.80), (0.02, 0.97)):
        persist = alpha0 + beta0
        z0 = np.array([np.log(1 - persist), _logit(persist / _PERSIST_MAX),
                       _logit(alpha0 / persist)])
        res = optimize.minimize(_garch_negll, z0, args=(eps, var), method="L-BFGS-B",
                                bounds=[(-30, 5), (-15, 15), (-15, 15)])
        if np.isfinite(res.fun) and (best is None or res.fun < best.fun):
            best = res
    if best is None or best.fun >= 1e300:
        raise NumericalError("GARCH(1,1) likelihood maximization failed")
    omega, alpha, beta = _garch_unpack(best.x, var)
    boundary = bool(alpha < 1e-4 or beta < 1e-4 or alpha + beta > 0.999 * _PERSIST_MAX)
    return (float(omega), float(alpha), float(beta)), boundary


def dcc_correlations(u, qbar, a, b):
    """``Q_t`` recursion (``Q_0 = Qbar``) and normalized ``R_t``, ``T + 1`` each."""
    T, n = u.shape
    outer = u[:, :, None] * u[:, None, :]
    drive = ((1.0 - a - b) * qbar)[None] + a * outer
    zi = (b * qbar).reshape(1, -1)
    rest, _ = signal.lfilter([1.0], [1.0, -b], drive.reshape(T, -1), axis=0, zi=zi)
    Q = np.concatenate([qbar[None], rest.reshape(T, n, n)])
    s = np.sqrt(np.einsum("tii->ti", Q))
    R = Q / (s[:, :, None] * s[:, None, :])
    idx = np.arange(n)
    R[:, idx, idx] = 1.0
    return Q, R


def _dcc_negll(z, u, qbar):
    persist = _PERSIST_MAX * _logistic(z[0])
    share = _logistic(z[1])
    a, b = persist * share, persist * (1.0 - share)
    _, R = dcc_correlations(u, qbar, a, b)
    R = R[:-1]
    sign, logdet = np.linalg.slogdet(R)
    if np.any(sign <= 0):
        return 1e300
    quad = np.einsum("ti,ti->t", u, np.linalg.solve(R, u[:, :, None])[:, :, 0])
    return 0.5 * float(np.sum(logdet + quad - np.einsum("ti,ti->t", u, u)))


class DCCForecaster(BaseEstimator):
    """DCC-GARCH(1, 1) two-step quasi-MLE on daily returns.

    ``fit`` expects a (T, n) array of daily returns; ``predict`` returns the
    one-step-ahead conditional covariance ``H_{T+1} = D R D``.
    """

    def fit(self, returns, y=None):
        r = check_matrix(returns, name="returns", min_rows=DCC_MIN_LENGTH)
        T, n = r.shape
        self.mu_ = r.mean(axis=0)
        eps = r - self.mu_
        params, flags = [], []
        for i in range(n):
            p, flag = fit_garch11(eps[:, i])
            params.append(p)
            flags.append(flag)
        self.garch_params_ = np.array(params)
        self.garch_boundary_ = np.array(flags)
        var = np.column_stack([
            garch_variance(eps[:, i], *self.garch_params_[i], d0=np.mean(eps[:, i] ** 2))
            for i in range(n)
        ])
        u = eps / np.sqrt(var[:-1])
        self.qbar_ = np.cov(u, rowvar=False, bias=True).reshape(n, n)
        if n == 1:
            self.theta1_, self.theta2_ = 0.0, 0.0
            self.dcc_boundary_ = False
        else:
            best = None
            for a0, b0 in ((0.02, 0.95), (0.05, 0.90), (0.01, 0.50)):
                z0 = np.array([_logit((a0 + b0) / _PERSIST_MAX), _logit(a0 / (a0 + b0))])
                res = optimize.minimize(_dcc_negll, z0, args=(u, self.qbar_),
                                        method="L-BFGS-B", bounds=[(-15, 15), (-15, 15)])
                if np.isfinite(res.fun) and (best is None or res.fun < best.fun):
                    best = res
            if best is None or best.fun >= 1e300:
                raise NumericalError("DCC correlation likelihood maximization failed")
            persist = _PERSIST_MAX * _logistic(best.x[0])
            share = _logistic(best.x[1])
            self.theta1_ = float(persist * share)
            self.theta2_ = float(persist * (1.0 - share))
            self.dcc_boundary_ = bool(self.theta1_ < 1e-4 or persist > 0.999 * _PERSIST_MAX)
        if np.any(self.garch_boundary_) or self.dcc_boundary_:
            warnings.warn("DCC-GARCH estimate on the parameter boundary", BoundaryWarning,
                          stacklevel=2)
        return self

    def _filter(self, returns):
        r = check_matrix(returns, name="returns")
        eps = r - self.mu_
        var = np.column_stack([
            garch_variance(eps[:, i], *self.garch_params_[i], d0=np.mean(eps[:, i] ** 2))
            for i in range(r.shape[1])
        ])
        u = eps / np.sqrt(var[:-1])
        _, R = dcc_correlations(u, self.qbar_, self.theta1_, self.theta2_)
        return var, R

    def conditional_covariances(self, returns):
        """In-sample ``H_t`` for every day plus the forecast, shape (T + 1, n, n)."""
        check_is_fitted(self, "qbar_")
        var, R = self._filter(returns)
        sd = np.sqrt(var)
        return sd[:, :, None] * R * sd[:, None, :]

    def predict(self, returns):
        H = self.conditional_covariances(returns)[-1]
        return 0.5 * (H + H.T)


def dcc_fit(returns):
    return DCCForecaster().fit(returns)


def dcc_forecast(model, returns):
    return model.predict(returns)

