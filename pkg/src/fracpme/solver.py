"""Spectral Galerkin time integration of the fractional porous medium flow.

The unknown is the coefficient vector ``alpha`` of the pulled-back solution in
the eigenbasis of ``Gamma_0``. For uniform dilations the Galerkin system is

    alpha' = -W(t) alpha - mu(t) * P beta(S alpha)

with ``W`` the divergence matrix, ``mu`` the DtN multipliers of ``Gamma(t)``
and ``S``/``P`` the synthesis/analysis pair of a dealiasing grid on
``Gamma_0``. Multipliers act coefficientwise because pulling back only
rescales each eigenfunction.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import integrate, linalg

from .errors import DomainError, SnapshotMismatchError, StepError
from .extension import FULL, TRUNCATED, dtn_multipliers
from .geometry import (
    EvolvingGeometry,
    div_w,
    div_w_grid,
    divergence_matrix,
    jacobian,
    pushforward,
    snapshot_at,
)
from .manifold import (
    SpectralField,
    _dense_matrix,
    grid_nodes,
    positive_part_integral,
    sup_norm,
    transform,
)
from .nonlinearity import (
    Custom,
    NonlinearitySpec,
    PowerLaw,
    Regularized,
    _dpsi_raw,
    _psi_raw,
    energy_density,
    make_regularized,
)

NEWTON_SHIFT = 1e-12
MAX_HALVINGS = 4
THREADS_ENV = "FRACPME_THREADS"


@dataclass(frozen=True)
class Cylinder:
    kind: str = FULL
    R: float | None = None

    def __post_init__(self):
        if self.kind not in (FULL, TRUNCATED):
            raise ValueError(f"unknown cylinder kind {self.kind!r}")
        if self.kind == TRUNCATED and (self.R is None or not self.R >= 1):
            raise ValueError(f"truncated cylinder needs R >= 1, got {self.R}")


@dataclass(frozen=True)
class ImplicitEuler:
    """Backward Euler on the diffusion term.

    ``transport="exact"`` propagates the ``-W alpha`` term with its exact
    flow over the step (mass is then conserved to round-off on moving
    surfaces); ``"plain"`` treats it implicitly like the diffusion term.
    """

    newton_tol: float = 1e-10
    max_iter: int = 30
    transport: str = "exact"

    def __post_init__(self):
        if self.transport not in ("exact", "plain"):
            raise ValueError(f"unknown transport treatment {self.transport!r}")


@dataclass(frozen=True)
class ExplicitRK:
    rtol: float = 1e-10
    atol: float = 1e-12
    method: str = "RK45"


@dataclass(frozen=True)
class SolverConfig:
    geometry: EvolvingGeometry
    nonlinearity: NonlinearitySpec
    initial_data: SpectralField
    dt: float
    cylinder: Cylinder = Cylinder()
    stepper: ImplicitEuler | ExplicitRK = ImplicitEuler()
    horizon: float | None = None
    linf_bound: float | None = None
    grid_size: int | None = None

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"time step must be positive, got {self.dt}")
        s0 = snapshot_at(self.geometry, 0.0)
        if self.initial_data.snapshot != s0:
            raise SnapshotMismatchError(f"initial data lives on {self.initial_data.snapshot}, expected {s0}")
        T = self.geometry.horizon if self.horizon is None else float(self.horizon)
        if not 0 < T <= self.geometry.horizon * (1 + 1e-12):
            raise ValueError(f"horizon {T} outside (0, {self.geometry.horizon}]")
        object.__setattr__(self, "horizon", T)
        if self.linf_bound is None:
            object.__setattr__(self, "linf_bound", sup_norm(self.initial_data))
        g = self.grid_size
        if g is None:
            g = s0.padded_grid_size(self.nonlinearity.degree)
        object.__setattr__(self, "grid_size", int(g))

    @property
    def modes(self) -> int:
        return self.geometry.mode_count

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.horizon / self.dt)))

    @property
    def shift(self) -> float:
        """Exponential rate ``lambda = max |div w|`` of the maximum principle."""
        return self.geometry.divergence_bound


@dataclass(frozen=True)
class SolverState:
    t: float
    alpha: np.ndarray
    newton_iterations: int = 0
    newton_residual: float = 0.0
    substeps: int = 1


@dataclass
class Trajectory:
    geometry: EvolvingGeometry
    times: np.ndarray
    alphas: np.ndarray
    mass: np.ndarray
    linf: np.ndarray
    energy: np.ndarray
    dissipation: np.ndarray
    linf_bound: float
    shift: float
    newton_iterations: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def __len__(self) -> int:
        return self.times.size

    def field(self, i: int) -> SpectralField:
        """Solution at output ``i`` on ``Gamma(t_i)``."""
        s0 = snapshot_at(self.geometry, 0.0)
        return pushforward(self.geometry, float(self.times[i]), SpectralField(s0, self.alphas[i]))

    def fields(self):
        return [self.field(i) for i in range(len(self))]


class _Operators:
    """Per-config cached matrices."""

    def __init__(self, cfg: SolverConfig):
        self.cfg = cfg
        geo = cfg.geometry
        self.s0 = snapshot_at(geo, 0.0)
        tr = transform(self.s0, cfg.grid_size)
        self.S = tr.synthesis
        self.P = tr.analysis
        self.weights = tr.weights
        self.n = self.s0.n_coeffs
        self.static = geo.law == "constant"
        self._gl = np.polynomial.legendre.leggauss(4)
        gram = self.S.T @ (self.weights[:, None] * self.S)
        self.gram = gram
        self.gram_is_identity = bool(np.max(np.abs(gram - np.eye(self.n))) < 1e-13)
        nodes = grid_nodes(self.s0, cfg.grid_size)
        probe = div_w_grid(geo, 0.0, nodes)
        self.uniform_divergence = bool(np.all(probe == probe[0]))
        self._nodes = nodes

    def mu(self, t: float) -> np.ndarray:
        c = self.cfg.cylinder
        return dtn_multipliers(snapshot_at(self.cfg.geometry, t), c.kind, c.R)

    def W(self, t: float) -> np.ndarray:
        if self.static:
            return np.zeros((self.n, self.n))
        return divergence_matrix(self.cfg.geometry, t, self.cfg.grid_size)

    def propagator(self, t0: float, t1: float) -> np.ndarray:
        """``expm(-int_{t0}^{t1} W)``; the time integral by 4-point Gauss rule."""
        if self.static:
            return np.eye(self.n)
        x, w = self._gl
        h = 0.5 * (t1 - t0)
        ts = [t0 + h * (xi + 1.0) for xi in x]
        if self.uniform_divergence:
            # W(t) = div_w(t) * Gram, so only a scalar integral is needed
            c = h * sum(wi * div_w(self.cfg.geometry, ti) for ti, wi in zip(ts, w))
            if self.gram_is_identity:
                return math.exp(-c) * np.eye(self.n)
            return linalg.expm(-c * self.gram)
        acc = sum(wi * self.W(ti) for ti, wi in zip(ts, w)) * h
        return linalg.expm(-acc)

    def beta(self, u: np.ndarray, t: float) -> np.ndarray:
        return _guarded(self.cfg.nonlinearity, u, t, _psi_raw)

    def dbeta(self, u: np.ndarray, t: float) -> np.ndarray:
        return _guarded(self.cfg.nonlinearity, u, t, _dpsi_raw)


def _guarded(spec, u, t, fn):
    A = spec.working_interval
    if A is not None:
        bad = np.abs(u) > A * (1 + 1e-12)
        if np.any(bad):
            off = float(u[bad][np.argmax(np.abs(u[bad]))])
            raise StepError(
                f"solution value {off:.6g} left the working interval [-{A:.6g}, {A:.6g}] at t={t:.6g}",
                t=t, offending=off,
            )
    out = fn(spec, u)
    if not np.all(np.isfinite(out)):
        off = float(u[~np.isfinite(out)][0])
        raise StepError(f"nonlinearity not finite at value {off:.6g}", t=t, offending=off)
    return out


_OPS_CACHE: dict[int, _Operators] = {}


def _ops(cfg: SolverConfig) -> _Operators:
    key = id(cfg)
    op = _OPS_CACHE.get(key)
    if op is None or op.cfg is not cfg:
        op = _Operators(cfg)
        if len(_OPS_CACHE) > 64:
            _OPS_CACHE.clear()
        _OPS_CACHE[key] = op
    return op


def rhs(cfg: SolverConfig, t: float, alpha: np.ndarray) -> np.ndarray:
    """``-W(t) alpha - a(t, alpha)`` for the Galerkin system."""
    op = _ops(cfg)
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape != (op.n,):
        raise ValueError(f"expected {op.n} coefficients, got shape {alpha.shape}")
    a_term = op.mu(t) * (op.P @ op.beta(op.S @ alpha, t))
    return -(op.W(t) @ alpha) - a_term


def _implicit_substep(op: _Operators, t0: float, dt: float, alpha: np.ndarray):
    st: ImplicitEuler = op.cfg.stepper
    t1 = t0 + dt
    mu = op.mu(t1)
    if st.transport == "exact":
        base = op.propagator(t0, t1) @ alpha
        Wdt = None
    else:
        base = alpha
        Wdt = dt * op.W(t1)
    x = base.copy()
    eye = np.eye(op.n)
    history = []

    def residual(z):
        F = z - base + dt * mu * (op.P @ op.beta(op.S @ z, t1))
        if Wdt is not None:
            F = F + Wdt @ z
        return F

    F = residual(x)
    for it in range(st.max_iter + 1):
        res = float(np.max(np.abs(F)))
        history.append(res)
        if res <= st.newton_tol:
            return x, it, res
        if it == st.max_iter:
            break
        d = op.dbeta(op.S @ x, t1) + NEWTON_SHIFT
        J = eye + dt * mu[:, None] * ((op.P * d) @ op.S)
        if Wdt is not None:
            J = J + Wdt
        dx = linalg.solve(J, -F, check_finite=False)
        lam = 1.0
        while True:
            try:
                Fn = residual(x + lam * dx)
                ok = float(np.max(np.abs(Fn))) <= (1.0 - 1e-4 * lam) * res
            except StepError:
                ok = False
            if ok or lam < 1.0 / 64:
                break
            lam *= 0.5
        x = x + lam * dx
        F = residual(x)
    raise StepError(
        f"Newton did not reach {st.newton_tol:.1e} in {st.max_iter} iterations at t={t1:.6g}",
        t=t1, residuals=history,
    )


def step(cfg: SolverConfig, state: SolverState, dt: float | None = None) -> SolverState:
    """Advance one step; a failing implicit step is retried with 2, 4, ... substeps."""
    h = cfg.dt if dt is None else dt
    if state.t + h > cfg.horizon * (1 + 1e-12) + 1e-14:
        raise DomainError(f"step to t={state.t + h:.6g} passes the horizon {cfg.horizon}")
    op = _ops(cfg)
    alpha = np.asarray(state.alpha, dtype=float)
    if isinstance(cfg.stepper, ExplicitRK):
        st = cfg.stepper
        sol = integrate.solve_ivp(
            lambda t, y: rhs(cfg, t, y), (state.t, state.t + h), alpha,
            method=st.method, rtol=st.rtol, atol=st.atol,
        )
        if not sol.success:
            raise StepError(f"explicit integrator failed: {sol.message}", t=state.t)
        return SolverState(state.t + h, sol.y[:, -1])
    last = None
    for halvings in range(MAX_HALVINGS + 1):
        n_sub = 2**halvings
        sub = h / n_sub
        try:
            x = alpha
            t = state.t
            iters = 0
            for j in range(n_sub):
                x, it, res = _implicit_substep(op, t, sub, x)
                iters += it
                t = state.t + (j + 1) * sub
            return SolverState(state.t + h, x, iters, res, n_sub)
        except StepError as err:
            last = err
            if err.offending is not None and halvings == MAX_HALVINGS:
                raise
    raise StepError(
        f"step from t={state.t:.6g} failed after {MAX_HALVINGS} halvings: {last}",
        t=state.t, residuals=last.residuals if last else (), offending=last.offending if last else None,
    )


def _record(op: _Operators, t: float, alpha: np.ndarray):
    geo = op.cfg.geometry
    fld = pushforward(geo, t, SpectralField(op.s0, alpha))
    mass = float(fld.coeffs[0] * math.sqrt(fld.snapshot.area))
    linf = sup_norm(fld)
    u = op.S @ alpha
    energy = jacobian(geo, t) * float(op.weights @ energy_density(op.cfg.nonlinearity, u))
    return mass, linf, energy


def _dissipation(op: _Operators, t: float, alpha: np.ndarray) -> float:
    """Extension gradient energy of ``Psi(u)`` on ``Gamma(t)``."""
    geo = op.cfg.geometry
    c = op.P @ _psi_raw(op.cfg.nonlinearity, op.S @ alpha)
    c = c * (geo.radius(t) / geo.r0) ** (geo.dimension / 2)
    return float(np.sum(op.mu(t) * c * c))


def solve(cfg: SolverConfig) -> Trajectory:
    """Integrate from ``t = 0`` to the horizon with fixed output step ``dt``."""
    op = _ops(cfg)
    n = cfg.n_steps
    times = np.array([cfg.horizon * i / n for i in range(n + 1)])
    alphas = np.empty((n + 1, op.n))
    alphas[0] = cfg.initial_data.coeffs
    diag = np.empty((n + 1, 3))
    diag[0] = _record(op, 0.0, alphas[0])
    diss = np.zeros(n + 1)
    iters = np.zeros(n + 1, dtype=int)
    if isinstance(cfg.stepper, ExplicitRK):
        st = cfg.stepper
        sol = integrate.solve_ivp(
            lambda t, y: rhs(cfg, t, y), (0.0, cfg.horizon), alphas[0],
            method=st.method, rtol=st.rtol, atol=st.atol, t_eval=times, dense_output=False,
        )
        if not sol.success:
            raise StepError(f"explicit integrator failed: {sol.message}", t=float(sol.t[-1]))
        alphas[:] = sol.y.T
        for i in range(1, n + 1):
            diag[i] = _record(op, times[i], alphas[i])
            diss[i] = diss[i - 1] + (times[i] - times[i - 1]) * _dissipation(op, times[i], alphas[i])
    else:
        state = SolverState(0.0, alphas[0])
        for i in range(1, n + 1):
            state = step(cfg, state, times[i] - times[i - 1])
            state = replace(state, t=times[i])
            alphas[i] = state.alpha
            iters[i] = state.newton_iterations
            diag[i] = _record(op, times[i], alphas[i])
            diss[i] = diss[i - 1] + (times[i] - times[i - 1]) * _dissipation(op, times[i], alphas[i])
    return Trajectory(
        geometry=cfg.geometry, times=times, alphas=alphas,
        mass=diag[:, 0].copy(), linf=diag[:, 1].copy(), energy=diag[:, 2].copy(),
        dissipation=diss, linf_bound=float(cfg.linf_bound), shift=cfg.shift,
        newton_iterations=iters,
    )


def solve_nondegenerate(cfg: SolverConfig) -> Trajectory:
    """Solve with a validated non-degenerate nonlinearity."""
    spec = cfg.nonlinearity
    if not isinstance(spec, (Custom, Regularized)):
        raise DomainError("non-degenerate solve needs a validated custom or regularised nonlinearity")
    need = cfg.linf_bound * math.exp(cfg.shift * cfg.horizon)
    if spec.working_interval < need * (1 - 1e-12):
        raise DomainError(
            f"working interval {spec.working_interval:.6g} does not cover the "
            f"maximum-principle box {need:.6g}"
        )
    return solve(cfg)


def thread_count() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return min(4, os.cpu_count() or 1)
    try:
        n = int(raw)
    except ValueError as exc:
        raise ValueError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from exc
    if n < 1:
        raise ValueError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return n


def solve_many(cfgs) -> list[Trajectory]:
    """Independent solves run concurrently; results keep input order."""
    cfgs = list(cfgs)
    workers = min(thread_count(), max(1, len(cfgs)))
    if workers == 1:
        return [solve(c) for c in cfgs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(solve, cfgs))


@dataclass
class FPMEResult:
    direct: Trajectory
    ks: tuple = ()
    regularized: list = field(default_factory=list)
    gaps: list = field(default_factory=list)
    gap_to_direct: float | None = None


def solve_fpme(cfg: SolverConfig, ks=None, margin: float = 1.1) -> FPMEResult:
    """Direct solve with the power law; optionally the regularised sweep over ``ks``.

    ``gaps[i]`` is the L2-in-time distance between the ``ks[i]`` and
    ``ks[i+1]`` solutions; ``gap_to_direct`` compares the last one with the
    direct solve.
    """
    spec = cfg.nonlinearity
    if not isinstance(spec, PowerLaw):
        raise DomainError("solve_fpme needs a power-law nonlinearity")
    if ks is None:
        return FPMEResult(direct=solve(cfg))
    ks = tuple(sorted(ks))
    A = margin * cfg.linf_bound * math.exp(cfg.shift * cfg.horizon)
    cfgs = [cfg] + [replace(cfg, nonlinearity=make_regularized(spec.m, k, A)) for k in ks]
    trajs = solve_many(cfgs)
    direct, reg = trajs[0], trajs[1:]
    gaps = [l2_time_gap(a, b) for a, b in zip(reg[:-1], reg[1:])]
    return FPMEResult(direct, ks, reg, gaps, l2_time_gap(reg[-1], direct))


def _check_pair(a: Trajectory, b: Trajectory) -> None:
    if a.geometry != b.geometry:
        raise ValueError("trajectories live on different geometries")
    if a.times.shape != b.times.shape or np.max(np.abs(a.times - b.times)) > 1e-12:
        raise ValueError("trajectories use different time grids")
    if a.alphas.shape != b.alphas.shape:
        raise ValueError("trajectories use different mode counts")


def l2_time_gap(a: Trajectory, b: Trajectory) -> float:
    """``(sum_n dt_n ||u_a(t_n) - u_b(t_n)||^2_{L2(Gamma(t_n))})^{1/2}``."""
    _check_pair(a, b)
    geo = a.geometry
    dt = np.diff(a.times)
    J = np.array([jacobian(geo, t) for t in a.times[1:]])
    d2 = np.sum((a.alphas[1:] - b.alphas[1:]) ** 2, axis=1)
    return math.sqrt(float(np.sum(dt * J * d2)))


def diagnostics_mass(traj: Trajectory) -> np.ndarray:
    return traj.mass.copy()


def diagnostics_maxprinciple(traj: Trajectory) -> float:
    """``max_t ||u(t)||_inf e^{-lambda t} - M``; nonpositive when the principle holds."""
    return float(np.max(traj.linf * np.exp(-traj.shift * traj.times)) - traj.linf_bound)


def diagnostics_contraction(a: Trajectory, b: Trajectory, method: str = "exact"):
    """``t -> int (u_a - u_b)^+`` and its largest increase over any earlier value."""
    _check_pair(a, b)
    series = np.array([positive_part_integral(fa - fb, method) for fa, fb in zip(a.fields(), b.fields())])
    running_min = np.minimum.accumulate(series)
    violation = float(np.max(np.concatenate([[0.0], series[1:] - running_min[:-1]])))
    return series, violation


def diagnostics_comparison(low: Trajectory, high: Trajectory, oversample: int = 16) -> float:
    """Smallest value of ``u_high - u_low`` over a dense grid and all output times."""
    _check_pair(low, high)
    s0 = snapshot_at(low.geometry, 0.0)
    _, S = _dense_matrix(s0.family, s0.mode_count, oversample)
    # values on Gamma(t) equal the pulled-back values on Gamma_0 at the same angle
    d = (high.alphas - low.alphas) @ S.T * s0.radius ** (-s0.dimension / 2)
    return float(np.min(d))


def diagnostics_energy(traj: Trajectory):
    """``int H(u(t)) + int_0^t |grad E Psi(u)|^2`` and its largest step increase."""
    total = traj.energy + traj.dissipation
    inc = float(np.max(np.concatenate([[0.0], np.diff(total)])))
    return total, inc
