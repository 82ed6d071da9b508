"""
Bijections between SPD matrices and unconstrained vech coordinates.

Two coordinate systems are supported:

``cholesky``
    vech of the upper-triangular factor ``P`` with positive diagonal such
    that ``P.T @ P == G``.
``logmatrix``
    vech of the symmetric matrix logarithm ``logm(G)``.

Both use the same column-major ordering of the upper triangle: position 1 is
(1, 1), 2 is (1, 2), 3 is (2, 2), 4 is (1, 3) and so on, so that the diagonal
entries of a 6 x 6 matrix sit at 1-based positions 1, 3, 6, 10, 15, 21.
"""

import warnings
from functools import lru_cache

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import DataError, NumericalWarning, check_spd

COORDS = ("cholesky", "logmatrix")
EIG_FLOOR = 1e-12


def vech_size(n):
    return n * (n + 1) // 2


def dim_from_vech(m):
    """Matrix dimension ``n`` with ``n (n + 1) / 2 == m``."""
    n = int(round((np.sqrt(8 * m + 1) - 1) / 2))
    if n < 1 or vech_size(n) != m:
        raise DataError(f"vech length {m} does not correspond to any matrix size")
    return n


@lru_cache(maxsize=64)
def _vech_index(n):
    rows, cols = [], []
    for j in range(n):
        for i in range(j + 1):
            rows.append(i)
            cols.append(j)
    rows = np.array(rows)
    cols = np.array(cols)
    rows.setflags(write=False)
    cols.setflags(write=False)
    return rows, cols


def vech_index(n):
    """Row and column indices (0-based) of the upper triangle in vech order."""
    return _vech_index(int(n))


def diagonal_positions(n):
    """0-based vech positions holding diagonal entries."""
    j = np.arange(n)
    return j * (j + 1) // 2 + j


def vech(a):
    """Stack the upper triangle of ``a`` (or of each matrix in a stack)."""
    a = np.asarray(a, dtype=float)
    rows, cols = vech_index(a.shape[-1])
    return a[..., rows, cols]


def unvech_upper(v):
    """Upper-triangular matrix whose vech is ``v``."""
    v = np.asarray(v, dtype=float)
    n = dim_from_vech(v.shape[-1])
    rows, cols = vech_index(n)
    out = np.zeros(v.shape[:-1] + (n, n))
    out[..., rows, cols] = v
    return out


def unvech_sym(v):
    """Symmetric matrix whose upper triangle has vech ``v``."""
    v = np.asarray(v, dtype=float)
    n = dim_from_vech(v.shape[-1])
    rows, cols = vech_index(n)
    out = np.zeros(v.shape[:-1] + (n, n))
    out[..., rows, cols] = v
    out[..., cols, rows] = v
    return out


def chol_vech(g):
    """vech of the upper Cholesky factor ``P`` with ``P.T @ P == g``.

    Raises
    ------
    DataError
        If ``g`` is asymmetric beyond tolerance or not positive definite.
    """
    g = check_spd(g)
    lower = np.linalg.cholesky(g)
    return vech(lower.T)


def unvech_chol(x):
    """Rebuild ``P.T @ P`` from Cholesky coordinates.

    Non-positive diagonal entries are replaced by their absolute values (and
    exact zeros by a tiny positive floor) with a ``NumericalWarning``; the
    result is always SPD.
    """
    x = np.array(x, dtype=float, copy=True)
    n = dim_from_vech(x.shape[-1])
    diag = diagonal_positions(n)
    d = x[..., diag]
    if np.any(d <= 0):
        warnings.warn(
            "non-positive diagonal entries in Cholesky coordinates repaired "
            "by absolute value",
            NumericalWarning,
            stacklevel=2,
        )
        d = np.abs(d)
        floor = EIG_FLOOR * max(np.max(d), 1.0)
        d = np.where(d > 0, d, floor)
        x[..., diag] = d
    p = unvech_upper(x)
    g = np.swapaxes(p, -1, -2) @ p
    return 0.5 * (g + np.swapaxes(g, -1, -2))


def _eigh_apply(a, fn):
    w, q = np.linalg.eigh(a)
    return (q * fn(w)[..., None, :]) @ np.swapaxes(q, -1, -2)


def logm_spd(g):
    """Symmetric matrix logarithm with eigenvalues floored at 1e-12 x max."""
    g = check_spd(g) if np.ndim(g) == 2 else np.asarray(g, dtype=float)
    w, q = np.linalg.eigh(g)
    floor = EIG_FLOOR * w[..., -1:]
    if np.any(w < floor):
        warnings.warn(
            "eigenvalues below 1e-12 x largest eigenvalue clamped before log",
            NumericalWarning,
            stacklevel=2,
        )
        w = np.maximum(w, floor)
    out = (q * np.log(w)[..., None, :]) @ np.swapaxes(q, -1, -2)
    return 0.5 * (out + np.swapaxes(out, -1, -2))


def expm_sym(a):
    out = _eigh_apply(a, np.exp)
    return 0.5 * (out + np.swapaxes(out, -1, -2))


def logm_vech(g):
    """vech of the symmetric matrix logarithm of an SPD matrix."""
    return vech(logm_spd(g))


def expm_vech(a):
    """SPD matrix ``expm(A)`` for the symmetric ``A`` with vech ``a``."""
    return expm_sym(unvech_sym(a))


def to_coords(mats, coord):
    """Map a stack of SPD matrices to vech coordinates of kind ``coord``."""
    mats = np.asarray(mats, dtype=float)
    single = mats.ndim == 2
    if single:
        mats = mats[None]
    if coord == "cholesky":
        out = np.stack([chol_vech(g) for g in mats])
    elif coord == "logmatrix":
        out = np.stack([logm_vech(g) for g in mats])
    else:
        raise ValueError(f"unknown coordinate system {coord!r}; use one of {COORDS}")
    return out[0] if single else out


def from_coords(x, coord):
    """Inverse of :func:`to_coords`; always returns SPD matrices."""
    if coord == "cholesky":
        return unvech_chol(x)
    if coord == "logmatrix":
        return expm_vech(x)
    raise ValueError(f"unknown coordinate system {coord!r}; use one of {COORDS}")


class VechTransformer(TransformerMixin, BaseEstimator):
    """Transform stacks of SPD matrices (T, n, n) into vech rows (T, m).

    Parameters
    ----------
    coord : {"cholesky", "logmatrix"}
        Coordinate system.
    """

    def __init__(self, coord="cholesky"):
        self.coord = coord

    def fit(self, X, y=None):
        if self.coord not in COORDS:
            raise ValueError(f"coord must be one of {COORDS}, got {self.coord!r}")
        X = np.asarray(X, dtype=float)
        self.n_assets_ = X.shape[-1]
        self.n_coords_ = vech_size(self.n_assets_)
        return self

    def transform(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 2:
            X = X[None]
        return to_coords(X, self.coord)

    def inverse_transform(self, X):
        return from_coords(np.atleast_2d(X), self.coord)
