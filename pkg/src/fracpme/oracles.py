"""Closed-form reference solutions used by the comparison experiments."""
from __future__ import annotations

import math

import numpy as np
from scipy import integrate

from .geometry import EvolvingGeometry
from .manifold import SpectralField, ManifoldSnapshot


def heat_flow_exact(geo: EvolvingGeometry, initial: SpectralField, t: float) -> np.ndarray:
    """Pulled-back coefficients of the linear (m = 1) flow at time ``t``.

    Mode ``k`` evolves as ``a_k(0) (r0/r)^d exp(-sqrt(c_k) int_0^t ds / r(s))``
    where ``c_k`` is the unit-radius eigenvalue; the time integral is done by
    adaptive quadrature.
    """
    unit = ManifoldSnapshot(geo.family, 1.0, geo.mode_count)
    root = np.sqrt(unit.eigenvalues)
    if t == 0:
        return initial.coeffs.copy()
    inv_r, _ = integrate.quad(lambda s: 1.0 / geo.radius(s), 0.0, t, epsabs=0.0, epsrel=1e-13, limit=200)
    damp = (geo.r0 / geo.radius(t)) ** geo.dimension
    return initial.coeffs * damp * np.exp(-root * inv_r)


def constant_datum_exact(geo: EvolvingGeometry, c: float, t: float) -> float:
    """Value of the spatially constant solution: ``c (r0 / r(t))^d``."""
    return c * (geo.r0 / geo.radius(t)) ** geo.dimension


def static_heat_step(alpha: np.ndarray, eigenvalues: np.ndarray, dt: float) -> np.ndarray:
    """One backward Euler step of ``a' = -sqrt(lambda) a``."""
    return alpha / (1.0 + dt * np.sqrt(eigenvalues))


def l2_on_surface(geo: EvolvingGeometry, t: float, alpha_diff: np.ndarray) -> float:
    """``L^2(Gamma(t))`` norm of a pulled-back coefficient difference."""
    return math.sqrt((geo.radius(t) / geo.r0) ** geo.dimension * float(np.sum(alpha_diff**2)))
