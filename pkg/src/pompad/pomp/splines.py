"""Periodic cubic B-spline basis for seasonal forcing.

Six normalized basis functions with equally spaced knots over one year.
They are the periodic wrap of the cardinal cubic B-spline, so they form a
partition of unity, are nonnegative, and have period one in time.
"""

from __future__ import annotations

import numpy as np

from ..errors import UsageError

N_BASIS = 6
_SUPPORT = 4  # knot-span support of the cardinal cubic B-spline


def _bspline3(x):
    """Cardinal cubic B-spline on [0, 4)."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    m = (x >= 0) & (x < 1)
    out = np.where(m, x ** 3 / 6.0, out)
    m = (x >= 1) & (x < 2)
    out = np.where(m, (-3 * x ** 3 + 12 * x ** 2 - 12 * x + 4) / 6.0, out)
    m = (x >= 2) & (x < 3)
    out = np.where(m, (3 * x ** 3 - 24 * x ** 2 + 60 * x - 44) / 6.0, out)
    m = (x >= 3) & (x < 4)
    out = np.where(m, (4 - x) ** 3 / 6.0, out)
    return out


def spline_basis(t, j: int):
    """Value of the ``j``-th periodic basis function (``j`` in 1..6).

    ``t`` is time in years; the basis has period one year.  Scalars in,
    scalar out; arrays in, arrays out.
    """
    if not 1 <= j <= N_BASIS:
        raise UsageError(f"spline index {j} outside 1..{N_BASIS}")
    u = (np.asarray(t, dtype=float) * N_BASIS) % N_BASIS
    x = (u - (j - 1)) % N_BASIS
    v = _bspline3(x)
    return float(v) if v.ndim == 0 else v


def spline_values(t: float) -> np.ndarray:
    """All six basis values at a scalar time, shape (6,)."""
    return np.array([spline_basis(t, j) for j in range(1, N_BASIS + 1)])
