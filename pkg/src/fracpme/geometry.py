"""Prescribed evolution of the surface by uniform dilation.

``Gamma(t) = (r(t) / r0) * Gamma_0`` with one of three radius laws. The
flow map sends the angle (or colatitude) on ``Gamma_0`` to the same angle on
``Gamma(t)``, so pushforward and pullback are coefficient rescalings and the
velocity divergence ``d r'(t) / r(t)`` is constant in space.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import optimize

from .errors import DomainError, SnapshotMismatchError
from .manifold import CIRCLE, FAMILIES, ManifoldSnapshot, SpectralField, transform

LAWS = ("constant", "linear", "sinusoidal")


@dataclass(frozen=True)
class EvolvingGeometry:
    family: str
    r0: float
    horizon: float
    mode_count: int
    law: str = "constant"
    amplitude: float = 0.0
    omega: float = 0.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.law not in LAWS:
            raise ValueError(f"unknown radius law {self.law!r}; expected one of {LAWS}")
        if not self.r0 > 0:
            raise ValueError("r0 must be positive")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if self.law == "constant" and self.amplitude != 0.0:
            raise ValueError("constant law takes no amplitude")
        r_min, _ = self.radius_range()
        if not r_min > 0:
            raise ValueError(f"radius law reaches r = {r_min:.6g} <= 0 on [0, T]")

    @property
    def dimension(self) -> int:
        return 1 if self.family == CIRCLE else 2

    @property
    def eigen_constant(self) -> float:
        """First nonzero eigenvalue of the unit manifold."""
        return 1.0 if self.family == CIRCLE else 2.0

    def radius(self, t: float) -> float:
        a, w = self.amplitude, self.omega
        if self.law == "constant":
            return self.r0
        if self.law == "linear":
            return self.r0 * (1.0 + a * t)
        return self.r0 * (1.0 + a * math.sin(w * t))

    def radius_rate(self, t: float) -> float:
        a, w = self.amplitude, self.omega
        if self.law == "constant":
            return 0.0
        if self.law == "linear":
            return self.r0 * a
        return self.r0 * a * w * math.cos(w * t)

    def radius_range(self) -> tuple[float, float]:
        """``(min, max)`` of ``r`` on ``[0, T]`` in closed form."""
        T = self.horizon
        ends = [self.radius(0.0), self.radius(T)]
        if self.law != "sinusoidal" or self.omega == 0.0 or self.amplitude == 0.0:
            return min(ends), max(ends)
        # interior extrema of sin(w t) sit where w t = pi/2 + j pi
        lo_j = math.ceil((min(0.0, self.omega * T) - math.pi / 2) / math.pi)
        hi_j = math.floor((max(0.0, self.omega * T) - math.pi / 2) / math.pi)
        vals = list(ends)
        for j in range(lo_j, hi_j + 1):
            s = 1.0 if j % 2 == 0 else -1.0
            vals.append(self.r0 * (1.0 + self.amplitude * s))
        return min(vals), max(vals)

    @property
    def eigenvalue_floor(self) -> float:
        """Uniform lower bound for the first nonzero eigenvalue over ``[0, T]``."""
        return self.eigen_constant / self.radius_range()[1] ** 2

    @property
    def divergence_bound(self) -> float:
        """``max_t |d r'(t) / r(t)|``; also the exponential rate in the max principle."""
        if self.law == "constant":
            return 0.0
        ts = np.linspace(0.0, self.horizon, 2049)
        vals = np.abs([div_w(self, t) for t in ts])
        i = int(np.argmax(vals))
        lo, hi = ts[max(i - 1, 0)], ts[min(i + 1, ts.size - 1)]
        res = optimize.minimize_scalar(
            lambda t: -abs(div_w(self, t)), bounds=(lo, hi), method="bounded",
            options={"xatol": 1e-13},
        )
        return float(max(vals[i], -res.fun))


def _check_time(geo: EvolvingGeometry, t: float) -> None:
    if not (-1e-12 <= t <= geo.horizon * (1 + 1e-12) + 1e-12):
        raise DomainError(f"t = {t} outside [0, {geo.horizon}]")


def snapshot_at(geo: EvolvingGeometry, t: float) -> ManifoldSnapshot:
    _check_time(geo, t)
    return ManifoldSnapshot(geo.family, geo.radius(t), geo.mode_count)


def div_w(geo: EvolvingGeometry, t: float) -> float:
    return geo.dimension * geo.radius_rate(t) / geo.radius(t)


def div_w_grid(geo: EvolvingGeometry, t: float, nodes: np.ndarray) -> np.ndarray:
    """Velocity divergence pulled back to ``Gamma_0`` at the given grid nodes."""
    return np.full(np.shape(nodes), div_w(geo, t))


def jacobian(geo: EvolvingGeometry, t: float) -> float:
    """Area ratio ``|Gamma(t)| / |Gamma_0|`` of the flow map."""
    return (geo.radius(t) / geo.r0) ** geo.dimension


def surface_area(geo: EvolvingGeometry, t: float) -> float:
    return snapshot_at(geo, t).area


def _scale(geo: EvolvingGeometry, t: float) -> float:
    return (geo.radius(t) / geo.r0) ** (geo.dimension / 2)


def pushforward(geo: EvolvingGeometry, t: float, fld: SpectralField) -> SpectralField:
    """``u o Phi^t_0`` written in the eigenbasis of ``Gamma(t)``."""
    src = snapshot_at(geo, 0.0)
    if fld.snapshot != src:
        raise SnapshotMismatchError(f"expected a field on {src}, got {fld.snapshot}")
    return SpectralField(snapshot_at(geo, t), fld.coeffs * _scale(geo, t))


def pullback(geo: EvolvingGeometry, t: float, fld: SpectralField) -> SpectralField:
    dst = snapshot_at(geo, t)
    if fld.snapshot != dst:
        raise SnapshotMismatchError(f"expected a field on {dst}, got {fld.snapshot}")
    return SpectralField(snapshot_at(geo, 0.0), fld.coeffs / _scale(geo, t))


def divergence_matrix(geo: EvolvingGeometry, t: float, grid_size: int | None = None) -> np.ndarray:
    """``W_ij = int_{Gamma_0} b_i b_j (div w)(Phi^0_t)`` by quadrature."""
    s0 = snapshot_at(geo, 0.0)
    g = s0.padded_grid_size(2) if grid_size is None else grid_size
    tr = transform(s0, g)
    from .manifold import grid_nodes

    dw = div_w_grid(geo, t, grid_nodes(s0, g))
    return tr.synthesis.T @ ((tr.weights * dw)[:, None] * tr.synthesis)


def transport_residual(
    geo: EvolvingGeometry,
    traj,
    f: Callable[[np.ndarray], np.ndarray],
    F: Callable[[np.ndarray], np.ndarray],
    grid_size: int | None = None,
) -> float:
    """Discrete defect of the transport identity for ``F' = f``.

    ``int_0^T <du/dt, f(u)> = int F(u(T)) - int F(u_0) - int_0^T int F(u) div w``
    evaluated with backward differences in time and grid quadrature on
    ``Gamma_0``. The defect is ``O(dt)`` for smooth trajectories.
    """
    times = np.asarray(traj.times, dtype=float)
    alphas = np.asarray(traj.alphas, dtype=float)
    if times.size < 2:
        raise ValueError("transport residual needs at least two time nodes")
    s0 = snapshot_at(geo, 0.0)
    g = s0.padded_grid_size(3) if grid_size is None else grid_size
    tr = transform(s0, g)
    from .manifold import grid_nodes

    nodes = grid_nodes(s0, g)
    u = alphas @ tr.synthesis.T
    lhs = 0.0
    flux = 0.0
    for n in range(1, times.size):
        t1 = times[n]
        dt = t1 - times[n - 1]
        J = jacobian(geo, t1)
        lhs += J * float(tr.weights @ ((u[n] - u[n - 1]) * f(u[n])))
        flux += dt * J * float(tr.weights @ (F(u[n]) * div_w_grid(geo, t1, nodes)))
    rhs = jacobian(geo, times[-1]) * float(tr.weights @ F(u[-1])) - float(tr.weights @ F(u[0])) - flux
    return lhs - rhs
