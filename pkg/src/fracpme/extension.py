"""Harmonic extensions into the cylinder ``M x [0, inf)`` and Dirichlet-to-Neumann maps.

Extensions are kept symbolic: the boundary coefficients plus the kind of
y-profile. Mode ``k`` with ``a = sqrt(lambda_k) > 0`` carries

* full cylinder: ``exp(-a y)``
* truncated at ``R``: ``sinh(a (R - y)) / sinh(a R)`` on ``[0, R]``, zero beyond

and the mean mode is constant (full) or ``(R - y) / R`` (truncated).
All integrals over ``y`` below are closed forms.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .errors import DomainError
from .manifold import (
    CIRCLE,
    SpectralField,
    hm_seminorm,
    l2_norm,
    transform,
)

FULL = "full"
TRUNCATED = "truncated"


def _coth(x):
    x = np.asarray(x, dtype=float)
    e = np.exp(-2.0 * x)
    return (1.0 + e) / -np.expm1(-2.0 * x)


def _csch2(x):
    x = np.asarray(x, dtype=float)
    return 4.0 * np.exp(-2.0 * x) / np.expm1(-2.0 * x) ** 2


@dataclass(frozen=True)
class ExtensionField:
    boundary: SpectralField
    kind: str = FULL
    R: float | None = None

    def __post_init__(self):
        if self.kind not in (FULL, TRUNCATED):
            raise ValueError(f"unknown extension kind {self.kind!r}")
        if self.kind == TRUNCATED:
            if self.R is None or not self.R > 0:
                raise ValueError(f"truncated extension needs R > 0, got {self.R}")
            object.__setattr__(self, "R", float(self.R))

    @property
    def snapshot(self):
        return self.boundary.snapshot


def extend_full(u: SpectralField) -> ExtensionField:
    return ExtensionField(u, FULL)


def extend_truncated(u: SpectralField, R: float) -> ExtensionField:
    if R is None or not R > 0:
        raise ValueError(f"truncation height must be positive, got {R}")
    return ExtensionField(u, TRUNCATED, R)


def profiles(ext: ExtensionField, y: float) -> np.ndarray:
    """Per-mode y-profile values at height ``y``."""
    if y < 0:
        raise DomainError(f"height must be nonnegative, got {y}")
    a = np.sqrt(ext.snapshot.eigenvalues)
    if ext.kind == FULL:
        return np.exp(-a * y)
    R = ext.R
    if y > R:
        return np.zeros_like(a)
    p = np.empty_like(a)
    p[0] = (R - y) / R
    ak = a[1:]
    # sinh(a(R-y))/sinh(aR) written with decaying exponentials only
    p[1:] = np.exp(-ak * y) * -np.expm1(-2.0 * ak * (R - y)) / -np.expm1(-2.0 * ak * R)
    return p


def profile_slopes(ext: ExtensionField, y: float) -> np.ndarray:
    """Per-mode ``d/dy`` of the profiles at ``y`` (one-sided from below at ``y = R``)."""
    a = np.sqrt(ext.snapshot.eigenvalues)
    if ext.kind == FULL:
        return -a * np.exp(-a * y)
    R = ext.R
    if y > R:
        return np.zeros_like(a)
    d = np.empty_like(a)
    d[0] = -1.0 / R
    ak = a[1:]
    # -a cosh(a(R-y))/sinh(aR)
    d[1:] = -ak * np.exp(-ak * y) * (1.0 + np.exp(-2.0 * ak * (R - y))) / -np.expm1(-2.0 * ak * R)
    return d


def evaluate_at_height(ext: ExtensionField, y: float) -> SpectralField:
    return SpectralField(ext.snapshot, ext.boundary.coeffs * profiles(ext, y))


def grad_energy(ext: ExtensionField) -> float:
    """``||grad v||^2`` over the (truncated) cylinder."""
    c2 = ext.boundary.coeffs**2
    a = np.sqrt(ext.snapshot.eigenvalues)
    if ext.kind == FULL:
        return float(np.sum(a * c2))
    R = ext.R
    return float(np.sum(a[1:] * _coth(a[1:] * R) * c2[1:]) + c2[0] / R)


def l2_norm_meanzero(ext: ExtensionField, atol: float = 1e-14) -> float:
    """Squared ``L^2`` norm of the extension over the cylinder.

    The full extension of a field with nonzero mean is not square integrable,
    so that case is rejected.
    """
    c2 = ext.boundary.coeffs**2
    a = np.sqrt(ext.snapshot.eigenvalues[1:])
    if ext.kind == FULL:
        if abs(ext.boundary.coeffs[0]) > atol * max(1.0, l2_norm(ext.boundary)):
            raise DomainError(
                "full extension of a field with nonzero mean is constant at infinity "
                "and has infinite L2 norm on the cylinder"
            )
        return float(np.sum(c2[1:] / (2.0 * a)))
    R = ext.R
    x = a * R
    per_mode = _coth(x) / (2.0 * a) - 0.5 * R * _csch2(x)
    return float(np.sum(per_mode * c2[1:]) + R * c2[0] / 3.0)


def dtn_multipliers(snapshot, kind: str = FULL, R: float | None = None) -> np.ndarray:
    """Symbol of ``u -> -d/dy (extension of u)|_{y=0}`` per mode."""
    a = np.sqrt(snapshot.eigenvalues)
    if kind == FULL:
        return a.copy()
    if kind != TRUNCATED:
        raise ValueError(f"unknown extension kind {kind!r}")
    if R is None or not R > 0:
        raise ValueError("truncated DtN map needs R > 0")
    m = np.empty_like(a)
    m[0] = 1.0 / R
    m[1:] = a[1:] * _coth(a[1:] * R)
    return m


def dtn(u: SpectralField, kind: str = FULL, R: float | None = None) -> SpectralField:
    return SpectralField(u.snapshot, u.coeffs * dtn_multipliers(u.snapshot, kind, R))


def fractional_laplacian(u: SpectralField, s: float = 0.5) -> SpectralField:
    if s not in (0.25, 0.5):
        raise DomainError(f"only s in {{1/4, 1/2}} is supported, got {s}")
    lam = u.snapshot.eigenvalues
    return SpectralField(u.snapshot, u.coeffs * lam**s)


def duality_pairing(u: SpectralField, v: SpectralField) -> float:
    """``<(-Delta)^{1/2} u, v>`` for ``u, v`` in ``H(M)``."""
    if u.snapshot != v.snapshot:
        from .errors import SnapshotMismatchError

        raise SnapshotMismatchError(f"{u.snapshot} vs {v.snapshot}")
    return float(np.sum(np.sqrt(u.snapshot.eigenvalues) * u.coeffs * v.coeffs))


def _meanfree(u: SpectralField) -> SpectralField:
    c = u.coeffs.copy()
    c[0] = 0.0
    return SpectralField(u.snapshot, c)


def decay_gap(u: SpectralField, R: float) -> tuple[float, float]:
    """``||grad(E u - Z_R E_R u)||^2`` on the full cylinder, and the a priori bound.

    Returns ``(exact, bound)``.
    """
    if not R > 0:
        raise ValueError("R must be positive")
    c2 = u.coeffs**2
    a = np.sqrt(u.snapshot.eigenvalues[1:])
    # [0, R] part a e^{-2aR} coth(aR), tail a e^{-2aR}
    exact = float(np.sum(a * np.exp(-2.0 * a * R) * (1.0 + _coth(a * R)) * c2[1:]) + c2[0] / R)
    u0 = _meanfree(u)
    s1 = math.sqrt(u.snapshot.first_eigenvalue)
    bound = (
        3.0 * math.exp(-R * s1) * hm_seminorm(u0) ** 2
        + 2.0 / R * math.exp(-2.0 * R * s1) * l2_norm(u0) ** 2
        + 2.0 * c2[0] / R
    )
    return exact, float(bound)


def _require_meanzero(u: SpectralField, atol: float = 1e-14) -> None:
    if abs(u.coeffs[0]) > atol * max(1.0, l2_norm(u)):
        raise DomainError("operation requires a mean-zero field")


def truncation_l2_gap(u: SpectralField, R: float) -> tuple[float, float]:
    """``||Z_R E_R u - E u||^2_{L^2}`` for mean-zero ``u``, and the a priori bound."""
    _require_meanzero(u)
    if not R > 0:
        raise ValueError("R must be positive")
    c2 = u.coeffs[1:] ** 2
    if not np.any(c2):
        return 0.0, 0.0
    a = np.sqrt(u.snapshot.eigenvalues[1:])
    x = a * R
    inner = np.exp(-2.0 * x) * (_coth(x) / (2.0 * a) - 0.5 * R * _csch2(x))
    tail = np.exp(-2.0 * x) / (2.0 * a)
    exact = float(np.sum((inner + tail) * c2))
    lam1 = u.snapshot.first_eigenvalue
    s1 = math.sqrt(lam1)
    poincare = 1.0 / lam1
    l2sq = float(np.sum(c2))
    bound = poincare * (
        3.0 * math.exp(-R * s1) * hm_seminorm(u) ** 2 + 2.0 / R * math.exp(-2.0 * R * s1) * l2sq
    ) + math.exp(-2.0 * R * s1) * l2sq / (2.0 * s1)
    return exact, float(bound)


def continuous_convergence_gap(u: SpectralField, R: float, scale: float | None = None) -> float:
    """``||Z_R E_R u_R - E u||^2_{L^2}`` with ``u_R = (1 + 1/R) u`` (or ``scale * u``)."""
    _require_meanzero(u)
    eps = 1.0 / R if scale is None else scale - 1.0
    c2 = u.coeffs[1:] ** 2
    a = np.sqrt(u.snapshot.eigenvalues[1:])
    x = a * R
    ss = _coth(x) / (2.0 * a) - 0.5 * R * _csch2(x)
    se = 1.0 / (2.0 * a) - R * np.exp(-2.0 * x) / -np.expm1(-2.0 * x)
    ee = -np.expm1(-2.0 * x) / (2.0 * a)
    # int_0^R ((1+eps)s - e)^2 + int_R^inf e^2
    inner = (1.0 + eps) ** 2 * ss - 2.0 * (1.0 + eps) * se + ee
    tail = np.exp(-2.0 * x) / (2.0 * a)
    return float(np.sum((inner + tail) * c2))


def harmonic_residual(
    ext: ExtensionField,
    heights: np.ndarray,
    grid_size: int,
    h: float | None = None,
) -> np.ndarray:
    """``v_yy + Delta_M v`` sampled on ``grid x heights``.

    ``v_yy`` uses the fourth-order central difference with spacing ``h``
    (default: the spacing of ``heights``); ``Delta_M v`` is applied spectrally.
    """
    heights = np.asarray(heights, dtype=float)
    if h is None:
        h = float(heights[1] - heights[0])
    tr = transform(ext.snapshot, grid_size)
    lam = ext.snapshot.eigenvalues
    c = ext.boundary.coeffs
    out = np.empty((heights.size, grid_size))
    for i, y in enumerate(heights):
        p = [profiles(ext, y + j * h) for j in (-2, -1, 0, 1, 2)]
        pyy = (-p[0] + 16 * p[1] - 30 * p[2] + 16 * p[3] - p[4]) / (12.0 * h * h)
        out[i] = tr.synthesis @ (c * (pyy - lam * p[2]))
    return out


def richardson_limit(values, ratio: float = 2.0) -> float | np.ndarray:
    """Extrapolate ``values[i] = f(h0 / ratio**i)`` with error series ``h, h^2, ...``."""
    level = [np.asarray(v, dtype=float) for v in values]
    for m in range(1, len(level)):
        fac = ratio**m
        level = [(fac * hi - lo) / (fac - 1.0) for lo, hi in zip(level[:-1], level[1:])]
    return level[0]


def dtn_finite_difference(ext: ExtensionField, h0: float = 0.05, levels: int = 6) -> SpectralField:
    """Richardson-extrapolated one-sided difference ``-(v(h) - v(0)) / h``."""
    v0 = evaluate_at_height(ext, 0.0).coeffs
    seq = []
    for i in range(levels):
        h = h0 / 2.0**i
        seq.append(-(evaluate_at_height(ext, h).coeffs - v0) / h)
    return SpectralField(ext.snapshot, richardson_limit(seq))


def profile_energy(profile, slope, lam: float, upper: float = np.inf) -> float:
    """``int_0^upper (lam p^2 + p'^2) dy`` by adaptive quadrature."""
    val, _ = integrate.quad(
        lambda y: lam * profile(y) ** 2 + slope(y) ** 2, 0.0, upper, epsabs=1e-14, epsrel=1e-12, limit=400
    )
    return val


def gagliardo_seminorm(u: SpectralField) -> float:
    """Sobolev-Slobodeckii seminorm ``(int int |u(x)-u(y)|^2 / |x-y|^{d+1})^{1/2}``.

    Both families are rotation invariant, so the double integral is diagonal in
    the eigenbasis; each mode's weight is a one-dimensional integral of the
    kernel against ``1 - (zonal eigenfunction)``.
    """
    s = u.snapshot
    r = s.radius
    k = s.frequencies
    w = np.zeros(s.n_coeffs)
    if s.family == CIRCLE:
        for i, n in enumerate(k):
            if n == 0:
                continue
            val, _ = integrate.quad(
                lambda d: (1.0 - math.cos(n * d)) / math.sin(0.5 * d) ** 2, 0.0, 2 * math.pi, limit=400
            )
            w[i] = val / (2.0 * r)
    else:
        from scipy.special import eval_legendre

        for i, l in enumerate(k):
            if l == 0:
                continue
            val, _ = integrate.quad(
                lambda t: (1.0 - eval_legendre(l, t)) / (2.0 * (1.0 - t)) ** 1.5,
                -1.0, 1.0, limit=400,
            )
            # 2 * 2 pi r^2 * r^{-3} from |x - y|^3 = (2 r^2 (1 - t))^{3/2}
            w[i] = 4.0 * math.pi * val / r
    return math.sqrt(float(np.sum(w * u.coeffs**2)))


def empirical_trace_constant(fields) -> float:
    """Largest observed ratio ``|Tv|_{W^{1/2,2}} / ||grad v||`` over harmonic extensions."""
    best = 0.0
    for u in fields:
        g = grad_energy(extend_full(u))
        if g > 0:
            best = max(best, gagliardo_seminorm(u) / math.sqrt(g))
    return best
