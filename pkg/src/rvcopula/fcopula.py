"""
Copula forecasters for vech series of realized covariance matrices.

All four approaches share one recipe. Marginals of every coordinate are
estimated by the empirical CDF, a copula links yesterday's pseudo-observations
with today's, and the one-step forecast is the average of ``n_sims``
conditional draws pushed back through the inverse empirical CDFs.

=============  ============================================  ==================
approach       copulas                                       families
=============  ============================================  ==================
``mc1``        one 2m-dim copula on ``(X_{t-1}, X_t)``       t, clayton
``mc2``        m copulas of dim m+1 on ``(X_{t-1}, X_jt)``   t, clayton
``entry``      m bivariate copulas on ``(X_j,t-1, X_jt)``    t, gumbel, clayton
``copula_har`` bivariate on diagonal coordinates, HAR on     t, gumbel, clayton
               the rest
=============  ============================================  ==================
"""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import DataError, check_matrix
from .benchmod import HAR_LAGS, HAR_MIN_LENGTH, HARRegressor
from .copulae import kendall_tau_matrix, make_copula
from .margins import EmpiricalPIT
from .matxform import COORDS, diagonal_positions, dim_from_vech, from_coords

APPROACHES = ("mc1", "mc2", "entry", "copula_har")
ALLOWED_FAMILIES = {
    "mc1": ("t", "clayton"),
    "mc2": ("t", "clayton"),
    "entry": ("t", "gumbel", "clayton"),
    "copula_har": ("t", "gumbel", "clayton"),
}
MIN_HISTORY = 30

# the 13 named models: name -> (kind, approach, family)
MODEL_SPECS = {
    "DCC-GARCH": ("dcc", None, None),
    "HAR": ("har", None, None),
    "VARFIMA": ("varfima", None, None),
    "T-1": ("copula", "mc1", "t"),
    "T-2": ("copula", "mc2", "t"),
    "CL-1": ("copula", "mc1", "clayton"),
    "CL-2": ("copula", "mc2", "clayton"),
    "Entry-T": ("copula", "entry", "t"),
    "Entry-GB": ("copula", "entry", "gumbel"),
    "Entry-CL": ("copula", "entry", "clayton"),
    "T-HAR": ("copula", "copula_har", "t"),
    "Gb-HAR": ("copula", "copula_har", "gumbel"),
    "Cl-HAR": ("copula", "copula_har", "clayton"),
}
MODEL_NAMES = tuple(MODEL_SPECS)


def _min_pairs(family, dim):
    return 10 * dim if family == "t" else 20


class CopulaForecaster(BaseEstimator):
    """One-step-ahead copula forecaster of a vech series.

    Parameters
    ----------
    approach : {"mc1", "mc2", "entry", "copula_har"}
    family : {"t", "clayton", "gumbel"}
    n_sims : int
        Number of conditional draws averaged into the forecast.
    coord : {"cholesky", "logmatrix"}
        Coordinates of the history, used for the diagonal index set of
        ``copula_har`` and to rebuild the SPD forecast.
    random_state : int or None
        Seed of the conditional simulation; ``predict`` restarts from it on
        every call, so repeated calls give identical forecasts.
    """

    def __init__(self, approach="mc1", family="t", n_sims=1000, coord="cholesky",
                 random_state=0):
        self.approach = approach
        self.family = family
        self.n_sims = n_sims
        self.coord = coord
        self.random_state = random_state

    def _validate_params(self):
        if self.approach not in APPROACHES:
            raise ValueError(f"approach must be one of {APPROACHES}, got {self.approach!r}")
        if self.family not in ALLOWED_FAMILIES[self.approach]:
            raise ValueError(
                f"family {self.family!r} not available for approach {self.approach!r}; "
                f"use one of {ALLOWED_FAMILIES[self.approach]}"
            )
        if self.coord not in COORDS:
            raise ValueError(f"coord must be one of {COORDS}, got {self.coord!r}")
        if int(self.n_sims) < 1:
            raise ValueError("n_sims must be positive")

    def _copula_dim(self, m):
        return {"mc1": 2 * m, "mc2": m + 1}.get(self.approach, 2)

    def fit(self, X, y=None, tau=None):
        """Fit marginals on all rows of ``X`` (T, m) and the copula(s) on lag pairs.

        ``tau`` optionally supplies the (2m, 2m) Kendall tau matrix of the
        stacked pseudo-observations (see :func:`lag_pair_tau`), letting
        several t-family forecasters share one computation.
        """
        self._validate_params()
        X = check_matrix(X, min_rows=MIN_HISTORY)
        T, m = X.shape
        dim_from_vech(m)
        need = max(MIN_HISTORY, _min_pairs(self.family, self._copula_dim(m)))
        if self.approach == "copula_har":
            need = max(need, HAR_MIN_LENGTH)
        if T < need:
            raise DataError(
                f"{self.approach}/{self.family} with m={m} needs at least {need} "
                f"observations, got {T}"
            )
        self.pit_ = EmpiricalPIT().fit(X)
        U = self.pit_.transform(X)
        lag, cur = U[:-1], U[1:]
        self.n_features_in_ = m

        if self.approach == "copula_har":
            self.copula_idx_ = diagonal_positions(dim_from_vech(m))
            self.har_idx_ = np.setdiff1d(np.arange(m), self.copula_idx_)
            self.har_models_ = {int(j): HARRegressor().fit(X[:, j]) for j in self.har_idx_}
        else:
            self.copula_idx_ = np.arange(m)
            self.har_idx_ = np.array([], dtype=int)
            self.har_models_ = {}

        stacked = np.hstack([lag, cur])
        # one tau matrix serves every multivariate t fit of the day
        share = self.family == "t" and self.approach in ("mc1", "mc2")
        if not share:
            tau = None
        elif tau is None:
            tau = kendall_tau_matrix(stacked)
        elif np.shape(tau) != (2 * m, 2 * m):
            raise DataError(f"tau must have shape {(2 * m, 2 * m)}, got {np.shape(tau)}")
        copulas = {}
        if self.approach == "mc1":
            copulas[None] = self._fit_one(stacked, tau)
        elif self.approach == "mc2":
            lag_idx = list(range(m))
            for j in range(m):
                idx = lag_idx + [m + j]
                copulas[j] = self._fit_one(stacked[:, idx], _sub(tau, idx))
        else:
            for j in self.copula_idx_:
                idx = [int(j), m + int(j)]
                copulas[int(j)] = self._fit_one(stacked[:, idx], _sub(tau, idx))
        self.copulas_ = copulas
        self.last_obs_ = X[-HAR_LAGS:].copy() if T >= HAR_LAGS else X.copy()
        return self

    def _fit_one(self, U, tau):
        cop = make_copula(self.family, U.shape[1])
        if self.family == "t":
            return cop.fit(U, tau=tau)
        return cop.fit(U)

    def _stream(self, j):
        if self.random_state is None:
            return np.random.default_rng()
        key = [int(self.random_state)] + ([] if j is None else [int(j) + 1])
        return np.random.default_rng(key)

    def predict(self, X=None):
        """Vech forecast for the day after the last row of ``X``.

        Only the last row is used by the copula parts (the last 22 rows by the
        HAR parts of ``copula_har``). ``X`` defaults to the fitted history.
        """
        check_is_fitted(self, "copulas_")
        X = self.last_obs_ if X is None else check_matrix(X)
        if X.shape[1] != self.n_features_in_:
            raise DataError(f"expected {self.n_features_in_} coordinates, got {X.shape[1]}")
        m = self.n_features_in_
        B = int(self.n_sims)
        # a conditioning value below the window minimum would map to 0
        n_obs = self.pit_.marginals_[0].n_samples
        u = np.clip(self.pit_.transform(X[-1]), 1 / (n_obs + 1), n_obs / (n_obs + 1))
        out = np.empty(m)
        margins = self.pit_.marginals_
        if self.approach == "mc1":
            draws = self.copulas_[None].conditional_sample(u, B, self._stream(None))
            for j in range(m):
                out[j] = margins[j].quantile(draws[:, j]).mean()
        elif self.approach == "mc2":
            for j in range(m):
                draws = self.copulas_[j].conditional_sample(u, B, self._stream(j))
                out[j] = margins[j].quantile(draws[:, 0]).mean()
        else:
            for j in self.copula_idx_:
                j = int(j)
                draws = self.copulas_[j].conditional_sample(u[j:j + 1], B, self._stream(j))
                out[j] = margins[j].quantile(draws[:, 0]).mean()
            if self.har_models_:
                if X.shape[0] < HAR_LAGS:
                    raise DataError(f"copula_har forecasts need the last {HAR_LAGS} rows")
                for j, model in self.har_models_.items():
                    out[j] = model.predict(X[-HAR_LAGS:, j])
        return out

    def predict_matrix(self, X=None):
        return from_coords(self.predict(X), self.coord)

    def forecast(self, X=None):
        """``(vech forecast, SPD matrix forecast)``."""
        v = self.predict(X)
        return v, from_coords(v, self.coord)


def lag_pair_tau(X):
    """Kendall tau matrix of ``[F(X_{t-1}), F(X_t)]`` with empirical marginals."""
    X = check_matrix(X, min_rows=MIN_HISTORY)
    U = EmpiricalPIT().fit(X).transform(X)
    return kendall_tau_matrix(np.hstack([U[:-1], U[1:]]))


def _sub(tau, idx):
    return None if tau is None else tau[np.ix_(idx, idx)]


def fit_mc1(X, family="t", n_sims=1000, random_state=0, coord="cholesky"):
    return CopulaForecaster("mc1", family, n_sims, coord, random_state).fit(X)


def fit_mc2(X, family="t", n_sims=1000, random_state=0, coord="cholesky"):
    return CopulaForecaster("mc2", family, n_sims, coord, random_state).fit(X)


def fit_entry(X, family="t", n_sims=1000, random_state=0, coord="cholesky"):
    return CopulaForecaster("entry", family, n_sims, coord, random_state).fit(X)


def fit_copula_har(X, family="t", n_sims=1000, random_state=0, coord="cholesky"):
    return CopulaForecaster("copula_har", family, n_sims, coord, random_state).fit(X)


def forecast_one(forecaster, X):
    return forecaster.forecast(X)
