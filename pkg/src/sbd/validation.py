"""Input-validation helpers used by both the function and estimator APIs."""

import numpy as np

from .errors import DomainError, ParameterError, ValidationError


def as_image_array(x, name="image"):
    """Coerce ``x`` (2-D array-like, or anything with a ``.data`` array such as
    :class:`sbd.image.Image`) to a validated float64 array."""
    data = getattr(x, "data", x)
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise ValidationError(f"{name} must be a non-empty 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    return arr


def check_nonnegative(arr, name="image"):
    if np.any(arr < 0):
        raise DomainError(f"{name} must be non-negative")
    return arr


def check_positive(value, name):
    if not float(value) > 0:
        raise ParameterError(f"{name} must be positive, got {value!r}")
    return float(value)


def check_odd(value, name):
    v = int(value)
    if v != value or v < 1 or v % 2 == 0:
        raise ParameterError(f"{name} must be a positive odd integer, got {value!r}")
    return v


def check_in(value, allowed, name):
    if value not in allowed:
        raise ParameterError(f"{name} must be one of {sorted(allowed)}, got {value!r}")
    return value


def check_counts(arr, name="counts", tol=1e-6):
    """Validate that ``arr`` holds non-negative integers (within ``tol``)."""
    check_nonnegative(arr, name)
    rounded = np.rint(arr)
    if np.max(np.abs(arr - rounded)) > tol:
        raise DomainError(f"{name} must be integer-valued within {tol}")
    return rounded
