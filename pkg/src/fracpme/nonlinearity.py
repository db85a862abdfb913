"""Monotone nonlinearities: the porous-medium power, its regularisations and user maps.

All evaluation functions accept scalars or arrays. Regularised and custom
maps are only defined on their working interval ``[-A, A]``; values outside
raise :class:`DomainError`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate

from .errors import ConstructionError, DomainError

GRID_POINTS = 10_000


@dataclass(frozen=True)
class NonlinearitySpec:
    """Common base; see :class:`PowerLaw`, :class:`Regularized`, :class:`Custom`."""

    @property
    def working_interval(self) -> float | None:
        return None

    @property
    def degree(self) -> float:
        """Polynomial degree used to size dealiasing grids."""
        return 2.0


@dataclass(frozen=True)
class PowerLaw(NonlinearitySpec):
    m: float = 1.0

    def __post_init__(self):
        if not self.m >= 1:
            raise ConstructionError(f"power law needs m >= 1, got {self.m}")

    @property
    def degree(self) -> float:
        return float(self.m)


@dataclass(frozen=True)
class Regularized(NonlinearitySpec):
    """``(r^2 + delta^2)^{(m-1)/2} r + c r`` with realised constants on ``[-A, A]``.

    Build with :func:`make_regularized`, which checks the conditions.
    """

    m: float
    k: float
    A: float
    delta: float
    c: float
    C_k: float = 0.0
    max_slope: float = 0.0
    C1: float = 1.0
    C2: float = 0.0
    inv_curvature: float = 0.0
    uniform_gap: float = 0.0

    @property
    def working_interval(self) -> float:
        return self.A

    @property
    def degree(self) -> float:
        return float(self.m)


@dataclass(frozen=True)
class Custom(NonlinearitySpec):
    beta: Callable = field(repr=False, compare=False, default=None)
    beta_prime: Callable = field(repr=False, compare=False, default=None)
    beta_inv: Callable | None = field(repr=False, compare=False, default=None)
    A: float = 1.0
    c_beta: float = 0.0
    c_beta_inv: float = 0.0
    max_slope: float = 0.0
    C1: float = 0.0
    C2: float = 0.0
    inv_curvature: float = 0.0
    name: str = "custom"

    @property
    def working_interval(self) -> float:
        return self.A

    @property
    def degree(self) -> float:
        return 3.0


def _check_domain(spec, r, *, values: bool = False):
    A = spec.working_interval
    if A is None:
        return
    lim = A if not values else float(max(abs(_psi_raw(spec, A)), abs(_psi_raw(spec, -A))))
    bad = np.abs(r) > lim * (1 + 1e-12) + 1e-300
    if np.any(bad):
        off = float(np.asarray(r)[bad].flat[0]) if np.ndim(r) else float(r)
        raise DomainError(f"value {off:.6g} outside working interval [-{lim:.6g}, {lim:.6g}]")


def _psi_raw(spec, r):
    r = np.asarray(r, dtype=float)
    if isinstance(spec, PowerLaw):
        if spec.m == 1:
            return r.copy()
        return np.abs(r) ** (spec.m - 1) * r
    if isinstance(spec, Regularized):
        return (r * r + spec.delta**2) ** (0.5 * (spec.m - 1)) * r + spec.c * r
    if isinstance(spec, Custom):
        return _apply(spec.beta, r)
    raise TypeError(f"unsupported nonlinearity {spec!r}")


def _dpsi_raw(spec, r):
    r = np.asarray(r, dtype=float)
    if isinstance(spec, PowerLaw):
        if spec.m == 1:
            return np.ones_like(r)
        return spec.m * np.abs(r) ** (spec.m - 1)
    if isinstance(spec, Regularized):
        q = r * r + spec.delta**2
        return q ** (0.5 * (spec.m - 3)) * (spec.m * r * r + spec.delta**2) + spec.c
    if isinstance(spec, Custom):
        return _apply(spec.beta_prime, r)
    raise TypeError(f"unsupported nonlinearity {spec!r}")


def _apply(fn, r):
    """Call a user map on an array, falling back to elementwise evaluation."""
    try:
        out = np.asarray(fn(r), dtype=float)
        if out.shape == r.shape:
            return out
    except (TypeError, ValueError):
        pass
    return np.asarray(np.vectorize(fn, otypes=[float])(r), dtype=float)


def _d2psi_regularized(m, delta, r):
    q = r * r + delta**2
    return (m - 1) * r * q ** (0.5 * (m - 5)) * (m * r * r + 3 * delta**2)


def psi(spec: NonlinearitySpec, r):
    _check_domain(spec, r)
    return _ret(_psi_raw(spec, r), r)


def psi_prime(spec: NonlinearitySpec, r):
    _check_domain(spec, r)
    return _ret(_dpsi_raw(spec, r), r)


def psi_inv(spec: NonlinearitySpec, v):
    _check_domain(spec, v, values=True)
    v = np.asarray(v, dtype=float)
    if isinstance(spec, PowerLaw):
        if spec.m == 1:
            return _ret(v.copy(), v)
        return _ret(np.sign(v) * np.abs(v) ** (1.0 / spec.m), v)
    if isinstance(spec, Custom) and spec.beta_inv is not None:
        return _ret(_apply(spec.beta_inv, v), v)
    return _ret(_newton_inverse(spec, v), v)


def _ret(out, like):
    return float(out) if np.ndim(like) == 0 else out


def _newton_inverse(spec, v, tol: float = 1e-15, max_iter: int = 200):
    """Safeguarded Newton on ``psi(x) = v`` inside the bracket ``[-A, A]``."""
    A = spec.working_interval
    shape = np.shape(v)
    v = np.atleast_1d(v).astype(float)
    lo = np.full_like(v, -A)
    hi = np.full_like(v, A)
    x = np.clip(v / max(float(_dpsi_raw(spec, 0.0)), 1e-300), -A, A)
    for _ in range(max_iter):
        f = _psi_raw(spec, x) - v
        done = np.abs(f) <= tol * np.maximum(1.0, np.abs(v))
        if np.all(done):
            break
        lo = np.where(f < 0, x, lo)
        hi = np.where(f > 0, x, hi)
        step = f / _dpsi_raw(spec, x)
        xn = x - step
        outside = (xn <= lo) | (xn >= hi)
        xn = np.where(outside, 0.5 * (lo + hi), xn)
        x = np.where(done, x, xn)
    return x.reshape(shape)


def antiderivative_H(spec: NonlinearitySpec, r):
    """``H(r) = int_0^r psi``."""
    _check_domain(spec, r)
    ra = np.asarray(r, dtype=float)
    if isinstance(spec, PowerLaw):
        return _ret(np.abs(ra) ** (spec.m + 1) / (spec.m + 1), r)
    if isinstance(spec, Regularized):
        e = 0.5 * (spec.m + 1)
        d2 = spec.delta**2
        out = ((ra * ra + d2) ** e - d2**e) / (spec.m + 1) + 0.5 * spec.c * ra * ra
        return _ret(out, r)
    return _ret(_quad_vec(lambda s: float(_psi_raw(spec, s)), ra), r)


def antiderivative_G(spec: NonlinearitySpec, v):
    """``G(v) = int_0^v psi^{-1}``."""
    _check_domain(spec, v, values=True)
    va = np.asarray(v, dtype=float)
    if isinstance(spec, PowerLaw):
        p = 1.0 / spec.m + 1.0
        return _ret(np.abs(va) ** p / p, v)
    # the inverse of a regularised power has a corner of width ~psi(delta) at 0
    brk = float(abs(_psi_raw(spec, getattr(spec, "delta", 0.0)))) if isinstance(spec, Regularized) else None
    return _ret(_quad_vec(lambda s: float(psi_inv(spec, s)), va, brk), v)


def _quad_vec(fn, arr, brk=None):
    out = np.empty(arr.shape)
    for idx, x in np.ndenumerate(arr):
        pts = [brk, -brk] if brk and abs(x) > brk else None
        if pts is not None:
            pts = [p for p in pts if min(0, x) < p < max(0, x)] or None
        val, _ = integrate.quad(fn, 0.0, float(x), points=pts, epsabs=1e-13, epsrel=1e-11, limit=200)
        out[idx] = val
    return out


def energy_density(spec: NonlinearitySpec, u: np.ndarray) -> np.ndarray:
    """Vectorised ``H(u)``; custom maps use a 64-point Gauss rule on ``[0, u]``."""
    if isinstance(spec, (PowerLaw, Regularized)):
        return np.asarray(antiderivative_H(spec, np.asarray(u, dtype=float)))
    x, w = np.polynomial.legendre.leggauss(64)
    u = np.asarray(u, dtype=float)
    s = 0.5 * (x[:, None] + 1.0) * u[None, :]
    return 0.5 * u * (w @ _psi_raw(spec, s))


def truncate_at_height(r, k: float):
    if not k > 0:
        raise ValueError(f"truncation height must be positive, got {k}")
    return _ret(np.clip(np.asarray(r, dtype=float), -k, k), r)


def _grid(A: float) -> np.ndarray:
    # an even point count would skip r = 0, where slopes degenerate
    return np.union1d(np.linspace(-A, A, GRID_POINTS), [0.0])


def make_regularized(m: float, k: float, A: float) -> Regularized:
    """Smooth, strictly monotone approximation of ``|r|^{m-1} r`` at index ``k``.

    ``delta = 1/k``; the linear coefficient is ``1/k`` unless that would push
    the slope above ``k`` on ``[-A, A]``, in which case it is lowered to the
    largest admissible value.
    """
    if not m >= 1:
        raise ConstructionError(f"m must be >= 1, got {m}")
    if not k >= 1:
        raise ConstructionError(f"k must be >= 1, got {k}")
    if not A > 0:
        raise ConstructionError(f"working interval half-width must be positive, got {A}")
    delta = 1.0 / k
    r = _grid(A)
    q = r * r + delta**2
    main_slope = q ** (0.5 * (m - 3)) * (m * r * r + delta**2)
    top = float(main_slope.max())
    c = min(1.0 / k, k - top)
    if c < 0:
        raise ConstructionError(
            f"slope condition psi_k' <= k fails: the power part alone reaches slope "
            f"{top:.6g} > k = {k} on [-{A}, {A}]"
        )
    slope = main_slope + c
    lo = float(slope.min())
    if not lo > 0:
        raise ConstructionError("positivity of psi_k' fails on the working interval")
    if float(slope.max()) > k * (1 + 1e-14):
        raise ConstructionError(f"slope {slope.max():.6g} exceeds k = {k}")
    vals = q ** (0.5 * (m - 1)) * r + c * r
    if not np.all(np.diff(vals) > 0):
        raise ConstructionError("psi_k is not strictly increasing on the grid")
    base = np.abs(r) ** (m - 1) * r
    # |psi^{-1}(v)| <= |v| + C2 with v = psi(s) on the grid
    C2 = float(max(0.0, np.max(np.abs(r) - np.abs(vals))))
    curv = float(np.max(np.abs(_d2psi_regularized(m, delta, r)) / slope**3))
    return Regularized(
        m=float(m), k=float(k), A=float(A), delta=delta, c=c,
        C_k=1.0 / lo, max_slope=float(slope.max()), C1=1.0, C2=C2,
        inv_curvature=curv, uniform_gap=float(np.max(np.abs(vals - base))),
    )


def make_custom(
    beta: Callable[[float], float],
    beta_prime: Callable[[float], float],
    A: float,
    beta_inv: Callable[[float], float] | None = None,
    *,
    c_beta: float | None = None,
    c_beta_inv: float | None = None,
    name: str = "custom",
) -> Custom:
    """Validate a non-degenerate nonlinearity on ``[-A, A]``.

    Stated constants, when given, must hold at every grid point; otherwise the
    realised ones are stored.
    """
    if not A > 0:
        raise ConstructionError("working interval half-width must be positive")
    r = _grid(A)
    b = _apply(beta, r)
    db = _apply(beta_prime, r)
    if abs(float(beta(0.0))) > 1e-14:
        raise ConstructionError(f"beta(0) = {beta(0.0):.3g}, expected 0")
    if not np.all(np.isfinite(db)):
        raise ConstructionError("beta' is not finite on the working interval")
    lo, hi = float(db.min()), float(db.max())
    if not lo > 0:
        raise ConstructionError(f"beta' >= C > 0 fails: min slope {lo:.6g}")
    if c_beta is not None and lo < c_beta * (1 - 1e-12):
        raise ConstructionError(f"beta' >= {c_beta} fails: min slope {lo:.6g}")
    inv_lo = 1.0 / hi
    if c_beta_inv is not None and inv_lo < c_beta_inv * (1 - 1e-12):
        raise ConstructionError(f"(beta^-1)' >= {c_beta_inv} fails: min {inv_lo:.6g}")
    fd = np.diff(b) / np.diff(r)
    mid = 0.5 * (db[1:] + db[:-1])
    if np.max(np.abs(fd - mid)) > 1e-4 * max(1.0, hi):
        raise ConstructionError("beta' is inconsistent with finite differences of beta")
    d2 = np.gradient(db, r)
    curv = float(np.max(np.abs(d2) / db**3))
    spec = Custom(
        beta=beta, beta_prime=beta_prime, beta_inv=beta_inv, A=float(A),
        c_beta=lo if c_beta is None else float(c_beta),
        c_beta_inv=inv_lo if c_beta_inv is None else float(c_beta_inv),
        max_slope=hi, C1=1.0 / lo, C2=0.0, inv_curvature=curv, name=name,
    )
    if beta_inv is not None:
        back = _apply(beta_inv, b)
        if np.max(np.abs(back - r)) > 1e-10 * max(1.0, A):
            raise ConstructionError("beta_inv is not the inverse of beta on the working interval")
    return spec


def arctan_example(A: float = 4.0) -> Custom:
    """``beta(r) = r + arctan(r)/2``: slopes in ``[1 + 1/(2(1+A^2)), 3/2]``."""
    return make_custom(
        lambda r: r + 0.5 * np.arctan(r),
        lambda r: 1.0 + 0.5 / (1.0 + r * r),
        A,
        name="arctan",
    )
