"""Input validation helpers shared by the estimators and the command line."""

from __future__ import annotations

import numbers

import numpy as np
from sklearn.utils.validation import check_scalar

from .channels import ChannelSet
from .exceptions import ConfigError, InvalidChannelError
from .model import SystemParams


def check_channels(X, n_subcarriers=None):
    """Return a :class:`ChannelSet` built from ``X``.

    ``X`` may already be a ChannelSet, a complex tap array of shape
    (J, M, L) or (J, L), or a mapping in the JSON channel format.  Arrays
    need ``n_subcarriers``.
    """
    if isinstance(X, ChannelSet):
        if n_subcarriers is not None and X.n_subcarriers != n_subcarriers:
            raise InvalidChannelError(
                f"channel set has N={X.n_subcarriers}, expected {n_subcarriers}")
        return X
    if isinstance(X, dict):
        return check_channels(ChannelSet.from_dict(X), n_subcarriers)
    if n_subcarriers is None:
        raise InvalidChannelError("n_subcarriers is required when passing raw taps")
    taps = np.asarray(X)
    if taps.dtype == object or not np.issubdtype(taps.dtype, np.number):
        raise InvalidChannelError("taps must be numeric")
    return ChannelSet(taps=taps.astype(complex), n_subcarriers=int(n_subcarriers))


def _scalar(value, name, kind, **bounds):
    # sklearn raises TypeError/ValueError; the package reports ConfigError
    try:
        return check_scalar(value, name, kind, **bounds)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def check_positive_int(value, name, min_val=1):
    return _scalar(value, name, numbers.Integral, min_val=min_val)


def check_nonneg_float(value, name, include_zero=True):
    return float(_scalar(value, name, numbers.Real, min_val=0.0,
                         include_boundaries="both" if include_zero else "right"))


def check_dc_requirements(values, n_receivers):
    """Broadcast a scalar or sequence of DC requirements to one value per receiver."""
    arr = np.atleast_1d(np.asarray(values, dtype=float))
    if arr.size == 1:
        arr = np.repeat(arr, n_receivers)
    if arr.shape != (n_receivers,):
        raise ConfigError(f"expected {n_receivers} DC requirements, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise ConfigError("DC requirements must be finite")
    return tuple(float(v) for v in arr)


def params_for(channels, **fields):
    """System parameters sized from ``channels``; remaining fields passed through."""
    fields = dict(fields)
    fields["dc_requirements"] = check_dc_requirements(
        fields.get("dc_requirements", 0.0), channels.n_receivers)
    return SystemParams(
        n_subcarriers=channels.n_subcarriers,
        n_receivers=channels.n_receivers,
        n_antennas=channels.n_antennas,
        **fields,
    )


def check_sorted_finite(values, name):
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise ConfigError(f"{name} must be a non-empty list of numbers")
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"{name} must be finite")
    if np.any(np.diff(arr) < 0):
        raise ConfigError(f"{name} must be sorted in increasing order")
    return arr
