"""Input validation helpers shared by the estimators."""

import numbers

import numpy as np


def check_positive(value, name):
    if not isinstance(value, numbers.Real) or not np.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be a finite positive number, got {value!r}")
    return value


def check_channels(channels):
    """Validate an :class:`~mbmimo.channel.EquivalentChannelSet`."""
    H = getattr(channels, "H_tilde", None)
    if H is None:
        raise TypeError("expected an EquivalentChannelSet")
    H = np.asarray(H)
    if H.ndim != 3:
        raise ValueError(f"H_tilde must have shape (S, K, N), got {H.shape}")
    if H.shape[0] != channels.grid.size:
        raise ValueError("H_tilde does not match the subcarrier grid")
    if not np.all(np.isfinite(H)):
        raise ValueError("H_tilde contains non-finite entries")
    s2 = np.asarray(channels.sigma2)
    if s2.shape != (H.shape[0],) or np.any(~(s2 > 0)):
        raise ValueError("sigma2 must hold one positive variance per subcarrier")
    return channels


def check_interval(lo, hi, name="domain"):
    lo, hi = float(lo), float(hi)
    if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
        raise ValueError(f"{name} must satisfy lo < hi, got [{lo}, {hi}]")
    return lo, hi
