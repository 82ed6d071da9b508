"""
Copula families used by the forecasting models.

* :class:`StudentTCopula` -- multivariate, correlation matrix plus degrees of
  freedom.
* :class:`ClaytonCopula` -- exchangeable multivariate Clayton, one parameter.
* :class:`GumbelCopula` -- bivariate only.

Each family supports fitting on pseudo-observations, density evaluation,
unconditional sampling and sampling of the trailing coordinates given the
leading ones (``conditional_sample``).
"""

import math
import warnings

import numpy as np
from scipy import linalg, optimize, special

from ._validation import (
    BoundaryWarning,
    DataError,
    NumericalError,
    check_interior_point,
    check_pseudo_obs,
)
from .matxform import unvech_sym, vech

FAMILIES = ("t", "clayton", "gumbel")

NU_BOUNDS = (2.1, 200.0)
CLAYTON_BOUNDS = (1e-4, 50.0)
GUMBEL_BOUNDS = (1.0, 50.0)
CORR_EIG_FLOOR = 1e-6
ROOT_TOL = 1e-10


def _rng(random_state):
    if isinstance(random_state, np.random.Generator):
        return random_state
    return np.random.default_rng(random_state)


def _check_not_degenerate(U):
    flat = np.ptp(U, axis=0) == 0
    if np.any(flat):
        cols = np.flatnonzero(flat).tolist()
        raise DataError(f"cannot fit a copula: constant column(s) {cols}")


def kendall_tau_matrix(U, chunk=None):
    """Pairwise Kendall tau-b of the columns of ``U``.

    Uses ``tau_ab = <S_a, S_b> / sqrt(<S_a, S_a><S_b, S_b>)`` with ``S_a`` the
    N x N matrix of pairwise signs of column ``a``; accumulated in row chunks
    so memory stays bounded.
    """
    U = np.asarray(U, dtype=float)
    N, d = U.shape
    if chunk is None:
        chunk = max(1, int(4e6 // max(N * d, 1)))
    gram = np.zeros((d, d))
    for start in range(0, N, chunk):
        block = U[start:start + chunk]
        s = np.sign(block[:, None, :] - U[None, :, :]).astype(np.float32)
        s = s.reshape(-1, d)
        gram += (s.T @ s).astype(float)
    diag = np.sqrt(np.diag(gram))
    with np.errstate(invalid="ignore", divide="ignore"):
        tau = gram / np.outer(diag, diag)
    np.fill_diagonal(tau, 1.0)
    return np.clip(tau, -1.0, 1.0)


def nearest_correlation(R, floor=CORR_EIG_FLOOR):
    """Clip eigenvalues at ``floor`` and rescale to unit diagonal.

    Returns the repaired matrix and whether any eigenvalue was clipped.
    """
    R = 0.5 * (np.asarray(R, dtype=float) + np.asarray(R, dtype=float).T)
    w, q = np.linalg.eigh(R)
    clipped = bool(w[0] < floor)
    if clipped:
        R = (q * np.maximum(w, floor)) @ q.T
        s = np.sqrt(np.diag(R))
        R = R / np.outer(s, s)
        R = 0.5 * (R + R.T)
    np.fill_diagonal(R, 1.0)
    return R, clipped


class _TQuantileTable:
    """``t_nu^{-1}(U)`` evaluated once per distinct level.

    PIT data repeats a small set of levels, and the quantile is odd about
    1/2, so only the distinct values of ``min(u, 1 - u)`` are inverted.
    """

    def __init__(self, U):
        U = np.asarray(U, dtype=float)
        tail = np.round(np.minimum(U, 1.0 - U), 15)
        self.levels, inv = np.unique(tail, return_inverse=True)
        self.inv = inv.reshape(U.shape)
        self.sign = np.where(U > 0.5, -1.0, 1.0)

    def __call__(self, nu):
        return self.sign * special.stdtrit(nu, self.levels)[self.inv]


def _t_quantiles(U, nu):
    U = np.asarray(U, dtype=float)
    if U.size < 64:
        return special.stdtrit(nu, U)
    return _TQuantileTable(U)(nu)


def _bounded_min(fn, lo, hi, xtol):
    res = optimize.minimize_scalar(fn, bounds=(lo, hi), method="bounded",
                                   options={"xatol": xtol})
    # the bounded search never evaluates the endpoints themselves
    best_x, best_f = res.x, res.fun
    for x in (lo, hi):
        f = fn(x)
        if f < best_f:
            best_x, best_f = x, f
    return best_x, best_f


class Copula:
    """Common interface; subclasses implement the family specifics."""

    family = None

    def _check_fitted(self):
        if not self.is_fitted:
            raise RuntimeError(f"{type(self).__name__} has no parameters; call fit first")

    def pdf(self, u):
        return np.exp(self.logpdf(u))

    def density(self, u):
        return self.pdf(u)

    def loglik(self, U):
        return float(np.sum(self.logpdf(U)))

    def _prep(self, u):
        self._check_fitted()
        u = np.asarray(u, dtype=float)
        single = u.ndim == 1
        u = np.atleast_2d(u)
        if u.shape[1] != self.dim:
            raise DataError(f"expected points of dimension {self.dim}, got {u.shape[1]}")
        if np.any(u <= 0) or np.any(u >= 1) or not np.all(np.isfinite(u)):
            raise DataError("copula density is only defined strictly inside (0, 1)^d")
        return u, single

    def _prep_cond(self, u_cond):
        self._check_fitted()
        u_cond = check_interior_point(u_cond, name="u_cond")
        d1 = u_cond.shape[-1]
        if not 1 <= d1 < self.dim:
            raise DataError(f"conditioning block must have 1..{self.dim - 1} coordinates")
        return u_cond

    def conditional_draw(self, u_cond, random_state=None):
        """One draw of the trailing coordinates per row of ``u_cond`` (N, d1)."""
        u_cond = np.atleast_2d(self._prep_cond(u_cond))
        return self._conditional_draw(u_cond, _rng(random_state))

    def conditional_sample(self, u_cond, n, random_state=None):
        """``n`` draws of the last ``d - len(u_cond)`` coordinates given the first ones."""
        u_cond = self._prep_cond(u_cond)
        if u_cond.ndim != 1:
            raise DataError("u_cond must be a single point; use conditional_draw for rows")
        rows = np.broadcast_to(u_cond, (int(n), u_cond.size))
        return self._conditional_draw(rows, _rng(random_state))

    def to_dict(self):
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}({self._param_repr()})"


class StudentTCopula(Copula):
    """Student-t copula with correlation ``corr`` and ``df`` degrees of freedom."""

    family = "t"

    def __init__(self, corr=None, df=None):
        self.corr = None if corr is None else np.asarray(corr, dtype=float)
        self.df = None if df is None else float(df)
        if self.corr is not None:
            self._set_corr(self.corr)

    def _set_corr(self, corr):
        if corr.ndim != 2 or corr.shape[0] != corr.shape[1] or corr.shape[0] < 2:
            raise DataError("correlation matrix must be d x d with d >= 2")
        if not np.allclose(np.diag(corr), 1.0):
            raise DataError("correlation matrix must have unit diagonal")
        try:
            self._chol = np.linalg.cholesky(corr)
        except np.linalg.LinAlgError:
            raise DataError("correlation matrix is not positive definite") from None
        self.corr = corr
        self._logdet = 2.0 * np.sum(np.log(np.diag(self._chol)))

    @property
    def is_fitted(self):
        return self.corr is not None and self.df is not None

    @property
    def dim(self):
        return None if self.corr is None else self.corr.shape[0]

    def _param_repr(self):
        return f"dim={self.dim}, df={self.df}"

    def fit(self, U, tau=None, xtol=1e-2):
        """Kendall-tau inversion for the correlation, profile likelihood for df.

        Parameters
        ----------
        U : ndarray, shape (N, d)
            Pseudo-observations.
        tau : ndarray, optional
            Precomputed Kendall tau matrix of ``U``.
        """
        U = check_pseudo_obs(U)
        N, d = U.shape
        if d < 2:
            raise DataError("a copula needs at least two dimensions")
        _check_not_degenerate(U)
        if tau is None:
            tau = kendall_tau_matrix(U)
        R0 = np.sin(np.pi * np.asarray(tau) / 2)
        R, clipped = nearest_correlation(R0)
        if clipped:
            warnings.warn(
                "tau-implied correlation matrix was not positive definite; "
                "eigenvalues clipped at 1e-6",
                BoundaryWarning,
                stacklevel=2,
            )
        self._set_corr(R)
        self.n_obs_ = N

        chol, logdet = self._chol, self._logdet
        table = _TQuantileTable(U)

        def negll(nu):
            return -_t_copula_loglik(table(nu), nu, chol, logdet)

        nu, f = _bounded_min(negll, *NU_BOUNDS, xtol=xtol)
        self.df = float(nu)
        self.loglik_ = -float(f)
        self.gaussian_like_ = self.df >= NU_BOUNDS[1] - 1.0
        return self

    def logpdf(self, u):
        u, single = self._prep(u)
        x = _t_quantiles(u, self.df)
        out = _t_copula_logpdf(x, self.df, self._chol, self._logdet)
        return out[0] if single else out

    def sample(self, n, random_state=None):
        self._check_fitted()
        rng = _rng(random_state)
        z = rng.standard_normal((n, self.dim)) @ self._chol.T
        w = rng.chisquare(self.df, size=(n, 1))
        x = z / np.sqrt(w / self.df)
        return _clip_open(special.stdtr(self.df, x))

    def conditional_params(self, u_cond):
        """Location, scale matrix and df of the trailing block given ``u_cond``."""
        u_cond = self._prep_cond(u_cond)
        loc, factor, schur, df_c = self._conditional_parts(np.atleast_2d(u_cond))
        return loc[0], factor[0] * schur, df_c

    def _conditional_parts(self, u_cond):
        d1 = u_cond.shape[1]
        nu = self.df
        x1 = _t_quantiles(u_cond, nu)
        R11 = self.corr[:d1, :d1]
        R21 = self.corr[d1:, :d1]
        R22 = self.corr[d1:, d1:]
        c11 = linalg.cho_factor(R11, lower=True)
        a = linalg.cho_solve(c11, x1.T)
        loc = (R21 @ a).T
        schur = R22 - R21 @ linalg.cho_solve(c11, R21.T)
        schur = 0.5 * (schur + schur.T)
        factor = (nu + np.einsum("ij,ji->i", x1, a)) / (nu + d1)
        return loc, factor, schur, nu + d1

    def _conditional_draw(self, u_cond, rng):
        loc, factor, schur, df_c = self._conditional_parts(u_cond)
        n, d2 = loc.shape
        L = np.linalg.cholesky(schur)
        z = rng.standard_normal((n, d2)) @ L.T
        w = rng.chisquare(df_c, size=(n, 1))
        x = loc + np.sqrt(factor)[:, None] * z / np.sqrt(w / df_c)
        return _clip_open(special.stdtr(self.df, x))

    def kendall_tau(self):
        self._check_fitted()
        return 2.0 / np.pi * np.arcsin(self.corr)

    def to_dict(self):
        self._check_fitted()
        return {"family": "t", "dim": int(self.dim), "nu": self.df,
                "correlation": vech(self.corr).tolist()}


def _t_copula_loglik(x, nu, chol, logdet):
    return float(np.sum(_t_copula_logpdf(x, nu, chol, logdet)))


def _t_copula_logpdf(x, nu, chol, logdet):
    d = x.shape[1]
    y = linalg.solve_triangular(chol, x.T, lower=True, check_finite=False)
    q = np.einsum("ij,ij->j", y, y)
    joint = (special.gammaln((nu + d) / 2) - special.gammaln(nu / 2)
             - 0.5 * d * math.log(nu * math.pi) - 0.5 * logdet
             - 0.5 * (nu + d) * np.log1p(q / nu))
    marg = (special.gammaln((nu + 1) / 2) - special.gammaln(nu / 2)
            - 0.5 * math.log(nu * math.pi)
            - 0.5 * (nu + 1) * np.log1p(x * x / nu))
    return joint - marg.sum(axis=1)


def _clip_open(u):
    tiny = np.finfo(float).eps
    return np.clip(u, tiny, 1.0 - tiny)


class ClaytonCopula(Copula):
    """Exchangeable Clayton copula, generator ``(u**-theta - 1) / theta``."""

    family = "clayton"

    def __init__(self, theta=None, dim=2):
        self.theta = None if theta is None else float(theta)
        self._dim = int(dim)
        if self._dim < 2:
            raise DataError("a copula needs at least two dimensions")
        if self.theta is not None and self.theta <= 0:
            raise DataError("Clayton theta must be positive")

    @property
    def is_fitted(self):
        return self.theta is not None

    @property
    def dim(self):
        return self._dim

    def _param_repr(self):
        return f"theta={self.theta}, dim={self.dim}"

    def fit(self, U, xtol=1e-6):
        U = check_pseudo_obs(U)
        if U.shape[1] < 2:
            raise DataError("a copula needs at least two dimensions")
        _check_not_degenerate(U)
        self._dim = U.shape[1]
        logu = np.log(U)

        def negll(log_theta):
            return -np.sum(_clayton_logpdf(logu, math.exp(log_theta)))

        lo, hi = (math.log(b) for b in CLAYTON_BOUNDS)
        s, f = _bounded_min(negll, lo, hi, xtol=xtol)
        self.theta = float(math.exp(s))
        self.loglik_ = -float(f)
        self.n_obs_ = U.shape[0]
        if s - lo < 1e-3:
            warnings.warn(
                "Clayton parameter pinned at its lower bound (no positive dependence)",
                BoundaryWarning,
                stacklevel=2,
            )
        return self

    def logpdf(self, u):
        u, single = self._prep(u)
        out = _clayton_logpdf(np.log(u), self.theta)
        return out[0] if single else out

    def cdf(self, u):
        u, single = self._prep(u)
        th = self.theta
        s = 1.0 + np.sum(np.expm1(-th * np.log(u)), axis=1)
        out = np.exp(-np.log(s) / th)
        return out[0] if single else out

    def sample(self, n, random_state=None):
        self._check_fitted()
        rng = _rng(random_state)
        th = self.theta
        v = rng.gamma(1.0 / th, 1.0, size=(n, 1))
        e = rng.exponential(size=(n, self.dim))
        return _clip_open(np.exp(-np.log1p(e / v) / th))

    def conditional_cdf(self, v, u_prev):
        """``P(U_{k+1} <= v | U_1..U_k = u_prev)`` for each row of ``u_prev``."""
        th = self.theta
        u_prev = np.atleast_2d(u_prev)
        k = u_prev.shape[1]
        a = 1.0 + np.sum(np.expm1(-th * np.log(u_prev)), axis=1)
        ratio = (a + np.expm1(-th * np.log(v))) / a
        return np.exp(-(1.0 / th + k) * np.log(ratio))

    def _conditional_draw(self, u_cond, rng):
        # sequential inversion of the conditional CDFs; closed form for Clayton
        n, d1 = u_cond.shape
        d2 = self.dim - d1
        th = self.theta
        w = _clip_open(rng.uniform(size=(n, d2)))
        a = 1.0 + np.sum(np.expm1(-th * np.log(u_cond)), axis=1)
        out = np.empty((n, d2))
        for i in range(d2):
            k = d1 + i
            expo = th / (1.0 + k * th)
            inc = a * np.expm1(-expo * np.log(w[:, i]))
            out[:, i] = np.exp(-np.log1p(inc) / th)
            a = a + inc
        return _clip_open(out)

    def kendall_tau(self):
        self._check_fitted()
        return self.theta / (self.theta + 2.0)

    def to_dict(self):
        self._check_fitted()
        return {"family": "clayton", "dim": int(self.dim), "theta": self.theta}


def _clayton_logpdf(logu, th):
    d = logu.shape[1]
    s = 1.0 + np.sum(np.expm1(-th * logu), axis=1)
    const = np.sum(np.log1p(th * np.arange(d)))
    return const - (1.0 + th) * logu.sum(axis=1) - (d + 1.0 / th) * np.log(s)


class GumbelCopula(Copula):
    """Bivariate Gumbel copula, ``theta >= 1``."""

    family = "gumbel"

    def __init__(self, theta=None, dim=2):
        if dim != 2:
            raise DataError("the Gumbel copula is only available in two dimensions")
        self.theta = None if theta is None else float(theta)
        if self.theta is not None and self.theta < 1:
            raise DataError("Gumbel theta must be >= 1")

    dim = 2

    @property
    def is_fitted(self):
        return self.theta is not None

    def _param_repr(self):
        return f"theta={self.theta}"

    def fit(self, U, xtol=1e-6):
        U = check_pseudo_obs(U)
        if U.shape[1] != 2:
            raise DataError("the Gumbel copula is bivariate")
        _check_not_degenerate(U)
        mlog = -np.log(U)

        def negll(log_theta):
            return -np.sum(_gumbel_logpdf(mlog, math.exp(log_theta)))

        lo, hi = (math.log(b) for b in GUMBEL_BOUNDS)
        s, f = _bounded_min(negll, lo, hi, xtol=xtol)
        self.theta = float(math.exp(s))
        self.loglik_ = -float(f)
        self.n_obs_ = U.shape[0]
        if s - lo < 1e-3:
            warnings.warn(
                "Gumbel parameter pinned at its lower bound (no positive dependence)",
                BoundaryWarning,
                stacklevel=2,
            )
        return self

    def logpdf(self, u):
        u, single = self._prep(u)
        out = _gumbel_logpdf(-np.log(u), self.theta)
        return out[0] if single else out

    def cdf(self, u):
        u, single = self._prep(u)
        mlog = -np.log(u)
        out = np.exp(-np.sum(mlog ** self.theta, axis=1) ** (1.0 / self.theta))
        return out[0] if single else out

    def sample(self, n, random_state=None):
        self._check_fitted()
        rng = _rng(random_state)
        alpha = 1.0 / self.theta
        v = _positive_stable(alpha, n, rng)[:, None]
        e = rng.exponential(size=(n, 2))
        return _clip_open(np.exp(-((e / v) ** alpha)))

    def conditional_cdf(self, v, u):
        """``dC(u, v)/du``, the distribution of the second coordinate given the first."""
        th = self.theta
        x = -np.log(u)
        y = -np.log(v)
        s = x ** th + y ** th
        a = s ** (1.0 / th)
        # exp(-a) * s^(1/th - 1) * x^(th - 1) / u, evaluated in logs
        logh = -a + (1.0 / th - 1.0) * np.log(s) + (th - 1.0) * np.log(x) + x
        return np.exp(logh)

    def _conditional_draw(self, u_cond, rng):
        u = u_cond[:, 0]
        w = _clip_open(rng.uniform(size=u.shape[0]))
        v = invert_increasing(lambda vv: self.conditional_cdf(vv, u), w)
        return _clip_open(v)[:, None]

    def kendall_tau(self):
        self._check_fitted()
        return 1.0 - 1.0 / self.theta

    def to_dict(self):
        self._check_fitted()
        return {"family": "gumbel", "dim": 2, "theta": self.theta}


def _gumbel_logpdf(mlog, th):
    x, y = mlog[:, 0], mlog[:, 1]
    lx, ly = np.log(x), np.log(y)
    s = np.exp(th * lx) + np.exp(th * ly)
    a = s ** (1.0 / th)
    return (-a + x + y + (th - 1.0) * (lx + ly)
            + (1.0 / th - 2.0) * np.log(s) + np.log(a + th - 1.0))


def _positive_stable(alpha, n, rng):
    """Kanter/Chambers-Mallows-Stuck draw with Laplace transform exp(-s**alpha)."""
    if alpha >= 1.0:
        return np.ones(n)
    theta = rng.uniform(0.0, np.pi, size=n)
    w = rng.exponential(size=n)
    part1 = np.sin(alpha * theta) / np.sin(theta) ** (1.0 / alpha)
    part2 = (np.sin((1.0 - alpha) * theta) / w) ** ((1.0 - alpha) / alpha)
    return part1 * part2


def invert_increasing(fn, target, lo=0.0, hi=1.0, tol=ROOT_TOL, max_iter=200):
    """Vectorized bracketed bisection solving ``fn(x) = target`` on (lo, hi).

    Raises :class:`NumericalError` if any root is not located to ``tol`` in the
    function value or to a bracket narrower than ``tol**2``.
    """
    target = np.asarray(target, dtype=float)
    a = np.full(target.shape, lo, dtype=float)
    b = np.full(target.shape, hi, dtype=float)
    x = 0.5 * (a + b)
    for _ in range(max_iter):
        x = 0.5 * (a + b)
        with np.errstate(all="ignore"):
            f = fn(x) - target
        done = (np.abs(f) <= tol) | (b - a <= tol * tol)
        if np.all(done):
            break
        up = f < 0
        a = np.where(up & ~done, x, a)
        b = np.where(~up & ~done, x, b)
    else:
        with np.errstate(all="ignore"):
            resid = np.abs(fn(x) - target)
        bad = ~((resid <= tol) | (b - a <= tol * tol))
        if np.any(bad):
            raise NumericalError(
                f"root finding did not converge for {int(bad.sum())} draws; "
                f"max residual {np.nanmax(resid[bad]):.3e}"
            )
    if not np.all(np.isfinite(x)):
        raise NumericalError("root finding produced non-finite values")
    return x


_CLASSES = {"t": StudentTCopula, "clayton": ClaytonCopula, "gumbel": GumbelCopula}


def make_copula(family, dim=2):
    if family not in _CLASSES:
        raise ValueError(f"unknown copula family {family!r}; use one of {FAMILIES}")
    if family == "t":
        return StudentTCopula()
    return _CLASSES[family](dim=dim)


def fit_copula(family, U, **kwargs):
    U = check_pseudo_obs(U)
    return make_copula(family, U.shape[1]).fit(U, **kwargs)


def copula_from_dict(data):
    family = data.get("family")
    if family == "t":
        corr = unvech_sym(np.asarray(data["correlation"], dtype=float))
        if corr.shape[0] != int(data["dim"]):
            raise DataError("correlation size does not match dim")
        return StudentTCopula(corr=corr, df=data["nu"])
    if family == "clayton":
        return ClaytonCopula(theta=data["theta"], dim=int(data["dim"]))
    if family == "gumbel":
        return GumbelCopula(theta=data["theta"])
    raise DataError(f"unknown copula family {family!r}")


def tau_from_param(family, param):
    """Closed-form Kendall tau of a bivariate family."""
    if family == "t":
        return 2.0 / np.pi * np.arcsin(param)
    if family == "clayton":
        return param / (param + 2.0)
    if family == "gumbel":
        return 1.0 - 1.0 / param
    raise ValueError(f"unknown copula family {family!r}")

