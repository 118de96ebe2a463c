"""Input validation helpers shared by the estimators and functional API."""

import numbers

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import ConfigurationError, InputError


def check_trials(X, *, name="X", min_frames=1):
    """Coerce ``X`` to a float64 array of shape (n_trials, T, p).

    A 2-D array is treated as a single trial of shape (T, p).
    """
    if hasattr(X, "data") and hasattr(X, "agent_split") and not isinstance(X, np.ndarray):
        X = X.data
    try:
        arr = check_array(X, dtype=np.float64, ensure_2d=False, allow_nd=True,
                          ensure_all_finite=True, input_name=name)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    if arr.ndim == 2:
        arr = arr[np.newaxis]
    if arr.ndim != 3:
        raise InputError(f"{name} must have shape (n_trials, T, p) or (T, p); got {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[2] < 1:
        raise InputError(f"{name} has no trials or no channels: shape {arr.shape}")
    if arr.shape[1] < min_frames:
        raise InputError(f"{name} has {arr.shape[1]} frames; at least {min_frames} required")
    return arr


def check_positive_int(value, name, minimum=1):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise ConfigurationError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise ConfigurationError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_nonnegative(value, name):
    value = float(value)
    if not np.isfinite(value) or value < 0:
        raise ConfigurationError(f"{name} must be a finite value >= 0, got {value!r}")
    return value


def check_positive(value, name):
    value = float(value)
    if not np.isfinite(value) or value <= 0:
        raise ConfigurationError(f"{name} must be a finite value > 0, got {value!r}")
    return value


def check_agent_split(agent_split, p):
    split = check_positive_int(agent_split, "agent_split")
    if not 0 < split < p:
        raise ConfigurationError(f"agent_split must lie in (0, {p}), got {split}")
    return split
