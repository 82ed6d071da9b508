"""Empirical marginal distributions with the 1/(T+1) scaling."""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import DataError, check_matrix


class EmpiricalMarginal:
    """Empirical CDF ``F(x) = #{X_t <= x} / (T + 1)`` of one coordinate.

    ``F`` is a right-continuous step function with range
    ``{0, 1/(T+1), ..., T/(T+1)}``, so probability integral transforms of
    the sample stay strictly inside (0, 1).
    """

    def __init__(self, samples):
        x = np.asarray(samples, dtype=float).ravel()
        if x.size < 2:
            raise DataError("an empirical marginal needs at least two samples")
        if not np.all(np.isfinite(x)):
            raise DataError("samples contain NaN or infinite values")
        self.sorted_samples = np.sort(x)
        self.sorted_samples.setflags(write=False)

    @property
    def n_samples(self):
        return self.sorted_samples.size

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        count = np.searchsorted(self.sorted_samples, x, side="right")
        return count / (self.n_samples + 1)

    def quantile(self, u):
        """Generalized inverse ``inf{x in sample : F(x) >= u}``.

        Levels above ``T/(T+1)`` return the sample maximum and levels at or
        below ``1/(T+1)`` the minimum; nothing is extrapolated.
        """
        u = np.asarray(u, dtype=float)
        T = self.n_samples
        levels = np.arange(1, T + 1) / (T + 1)
        k = np.searchsorted(levels, u, side="left")
        return self.sorted_samples[np.clip(k, 0, T - 1)]


def fit_empirical(samples):
    return EmpiricalMarginal(samples)


class EmpiricalPIT(TransformerMixin, BaseEstimator):
    """Column-wise probability integral transform with empirical marginals."""

    def fit(self, X, y=None):
        X = check_matrix(X, min_rows=2)
        self.marginals_ = [EmpiricalMarginal(X[:, j]) for j in range(X.shape[1])]
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "marginals_")
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.shape[1] != self.n_features_in_:
            raise DataError(f"expected {self.n_features_in_} columns, got {X.shape[1]}")
        out = np.column_stack([m.cdf(X[:, j]) for j, m in enumerate(self.marginals_)])
        return out[0] if single else out

    def inverse_transform(self, U):
        check_is_fitted(self, "marginals_")
        U = np.asarray(U, dtype=float)
        single = U.ndim == 1
        U = np.atleast_2d(U)
        out = np.column_stack([m.quantile(U[:, j]) for j, m in enumerate(self.marginals_)])
        return out[0] if single else out
