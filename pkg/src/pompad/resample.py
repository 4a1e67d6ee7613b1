"""Systematic resampling and off-parameter index selection.

Resampling happens at every observation time.  One shared uniform offset
per step (the classic systematic scheme) keeps the resampling variance
minimal, and the count of copies of particle ``m`` is always within one of
``J * w_m`` for normalized weights ``w``.
"""

from __future__ import annotations

import numpy as np

from . import prng
from .errors import DegenerateFilterError

__all__ = ["systematic_resample", "offparam_indices", "offparam_indices_log"]


def systematic_resample(log_weights: np.ndarray, u: float) -> np.ndarray:
    """Select ``J`` ancestor indices against the weight CDF.

    Weights are normalized by max-subtraction before exponentiation so a
    long run of accumulated log-weights cannot overflow.  Grid points sit
    at ``(j + u) / J``; a grid point exactly on a cumulative-weight
    boundary resolves to the lower index, which pins the output bitwise.

    Args:
        log_weights: unnormalized log-weights, length J, at least one finite.
        u: shared offset in [0, 1).

    Returns:
        Nondecreasing integer array of length J.
    """
    lw = np.asarray(log_weights, dtype=float)
    m = np.max(lw)
    if not np.isfinite(m):
        raise DegenerateFilterError(-1, "all log-weights are -inf")
    w = np.exp(lw - m)
    cum = np.cumsum(w)
    total = cum[-1]
    if not np.isfinite(total) or total <= 0.0:
        raise DegenerateFilterError(-1, "weights sum to zero")
    J = lw.shape[0]
    grid = (np.arange(J) + u) * (total / J)
    return np.searchsorted(cum, grid, side="left").astype(np.intp)


def offparam_indices_log(log_g_phi: np.ndarray, key: prng.StreamKey) -> np.ndarray:
    """Index selection proportional to baseline measurement densities,
    taking log-densities directly (the filter's native scale)."""
    return systematic_resample(log_g_phi, prng.uniform(key, 0))


def offparam_indices(g_phi: np.ndarray, key: prng.StreamKey) -> np.ndarray:
    """Index selection with selection probability proportional to the
    baseline-parameter measurement density of each particle.

    The densities must already be detached from any derivative tracking:
    index selection contributes no gradient.
    """
    g = np.asarray(g_phi, dtype=float)
    with np.errstate(divide="ignore"):
        return offparam_indices_log(np.log(g), key)
