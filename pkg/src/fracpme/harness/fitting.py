"""Least-squares rate fits on log-transformed data."""
from __future__ import annotations

import numpy as np


def fit_rate(xs, ys) -> tuple[float, float]:
    """Slope and ``r^2`` of the OLS line through ``(x, log y)``.

    Pass ``log(h)`` as ``xs`` to read an algebraic order off the slope.
    """
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("xs and ys must be one-dimensional and of equal length")
    if x.size < 3:
        raise ValueError(f"need at least 3 points, got {x.size}")
    if not np.all(y > 0):
        raise ValueError("all ys must be positive")
    ly = np.log(y)
    A = np.stack([x, np.ones_like(x)], axis=1)
    (slope, icpt), *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - (slope * x + icpt)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - float(np.sum(resid**2)) / ss_tot
    return float(slope), r2
