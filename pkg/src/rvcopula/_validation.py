"""Input validation helpers, warning categories and exception types."""

import numpy as np


class DataError(ValueError):
    """Input data violates a shape, domain or alignment requirement."""


class NumericalError(RuntimeError):
    """A numerical routine failed (non-convergence, singular system)."""


class NumericalWarning(RuntimeWarning):
    """A value was repaired or clamped to keep a computation well defined."""


class SingularCovarianceWarning(NumericalWarning):
    """A realized covariance matrix is numerically singular."""


class BoundaryWarning(RuntimeWarning):
    """An estimated parameter sits on the boundary of its search interval."""


SYM_RTOL = 1e-12


def check_square(a, name="matrix"):
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DataError(f"{name} must be a square 2-D array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DataError(f"{name} contains non-finite entries")
    return a


def check_symmetric(a, rtol=SYM_RTOL, name="matrix"):
    """Return the symmetrized matrix, raising if asymmetry exceeds ``rtol``."""
    a = check_square(a, name)
    scale = max(np.max(np.abs(a)), np.finfo(float).tiny)
    asym = np.max(np.abs(a - a.T))
    if asym > rtol * scale:
        raise DataError(
            f"{name} is not symmetric: max |a - a.T| = {asym:.3e} "
            f"exceeds {rtol:g} x max|a| = {rtol * scale:.3e}"
        )
    return 0.5 * (a + a.T)


def check_spd(a, name="matrix"):
    """Validate a symmetric positive-definite matrix; returns a symmetrized copy."""
    a = check_symmetric(a, name=name)
    eig = np.linalg.eigvalsh(a)
    if eig[0] <= 0:
        raise DataError(
            f"{name} is not positive definite: smallest eigenvalue {eig[0]:.3e}"
        )
    return a


def check_spd_stack(mats, name="matrices"):
    mats = np.asarray(mats, dtype=float)
    if mats.ndim == 2:
        mats = mats[None]
    if mats.ndim != 3 or mats.shape[1] != mats.shape[2]:
        raise DataError(f"{name} must have shape (T, n, n), got {mats.shape}")
    return np.stack([check_spd(g, name=f"{name}[{t}]") for t, g in enumerate(mats)])


def check_matrix(x, name="X", min_rows=1):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise DataError(f"{name} must be 2-D, got shape {x.shape}")
    if x.shape[0] < min_rows:
        raise DataError(f"{name} needs at least {min_rows} rows, got {x.shape[0]}")
    if not np.all(np.isfinite(x)):
        raise DataError(f"{name} contains NaN or infinite values")
    return x


def check_pseudo_obs(u, name="U"):
    u = check_matrix(u, name=name)
    if np.any(u <= 0) or np.any(u >= 1):
        raise DataError(f"{name} entries must lie strictly inside (0, 1)")
    return u


def check_interior_point(u, dim=None, name="u"):
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if dim is not None and u.shape[-1] != dim:
        raise DataError(f"{name} must have {dim} coordinates, got {u.shape[-1]}")
    if not np.all(np.isfinite(u)) or np.any(u <= 0) or np.any(u >= 1):
        raise DataError(f"{name} must lie strictly inside the unit hypercube")
    return u
