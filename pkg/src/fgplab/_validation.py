"""Input validation helpers shared by the public modules."""

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import ValidationError

WEIGHT_SUM_TOL = 1e-10


def as_finite(x, name, ndim=None, dtype=float):
    """Return ``x`` as a float ndarray, rejecting nonfinite entries."""
    arr = np.asarray(x, dtype=dtype)
    if ndim is not None and arr.ndim not in np.atleast_1d(ndim):
        raise ValidationError(f"{name} must have ndim in {ndim}, got {arr.ndim}", field=name)
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains nonfinite values", field=name)
    return arr


def as_matrix(x, name):
    """2-D finite float array via scikit-learn's ``check_array``."""
    try:
        return check_array(x, dtype=np.float64, ensure_2d=True, ensure_min_samples=1)
    except ValueError as exc:
        raise ValidationError(f"{name}: {exc}", field=name) from exc


def as_path_array(logs, name="logs"):
    """Coerce a log-price array to shape (n_paths, M + 1, n)."""
    arr = as_finite(logs, name)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise ValidationError(f"{name} must be (M+1, n) or (paths, M+1, n)", field=name)
    if arr.shape[1] < 2:
        raise ValidationError(f"{name} needs at least two time points", field=name)
    return arr


def check_weights(w, name="weights", tol=WEIGHT_SUM_TOL):
    """Ensure the last axis of ``w`` sums to one."""
    w = as_finite(w, name)
    err = np.max(np.abs(w.sum(axis=-1) - 1.0)) if w.size else 0.0
    if err > tol:
        raise ValidationError(f"{name} must sum to 1 (max deviation {err:.3g})", field=name)
    return w


def check_positive_int(x, name, minimum=1):
    if isinstance(x, bool) or int(x) != x or x < minimum:
        raise ValidationError(f"{name} must be an integer >= {minimum}, got {x!r}", field=name)
    return int(x)
