"""Copula-based forecasting of realized covariance matrices.

Modules
-------
matxform
    Cholesky and matrix-log coordinates of SPD matrices.
rvest
    Realized covariance estimators, synthetic panels, descriptive statistics.
margins
    Empirical marginal CDFs and the column-wise PIT transformer.
copulae
    Student-t, Clayton and Gumbel copulas.
fcopula
    The four copula forecasting approaches.
benchmod
    HAR, VARFIMA(1, d, 1) and DCC-GARCH benchmarks.
evalkit
    Losses, model confidence sets, minimum variance portfolios.
harness
    Rolling-window backtests and their configuration.
"""

from ._validation import (
    BoundaryWarning,
    DataError,
    NumericalError,
    NumericalWarning,
    SingularCovarianceWarning,
)
from .benchmod import DCCForecaster, HARForecaster, HARRegressor, VARFIMAForecaster
from .copulae import ClaytonCopula, GumbelCopula, StudentTCopula, fit_copula, make_copula
from .evalkit import frobenius_rmse, gmvp, mcs, stein_loss
from .fcopula import MODEL_NAMES, CopulaForecaster
from .harness import BacktestConfig, rolling_backtest
from .margins import EmpiricalMarginal, EmpiricalPIT
from .matxform import VechTransformer, chol_vech, expm_vech, logm_vech, unvech_chol
from .rvest import CovarianceSeries, IntradayPanel, realized_cov, simulate_panel

__version__ = "0.1.0"

__all__ = [
    "BacktestConfig",
    "BoundaryWarning",
    "ClaytonCopula",
    "CopulaForecaster",
    "CovarianceSeries",
    "DCCForecaster",
    "DataError",
    "EmpiricalMarginal",
    "EmpiricalPIT",
    "GumbelCopula",
    "HARForecaster",
    "HARRegressor",
    "IntradayPanel",
    "MODEL_NAMES",
    "NumericalError",
    "NumericalWarning",
    "SingularCovarianceWarning",
    "StudentTCopula",
    "VARFIMAForecaster",
    "VechTransformer",
    "chol_vech",
    "expm_vech",
    "fit_copula",
    "frobenius_rmse",
    "gmvp",
    "logm_vech",
    "make_copula",
    "mcs",
    "realized_cov",
    "rolling_backtest",
    "simulate_panel",
    "stein_loss",
    "unvech_chol",
]
