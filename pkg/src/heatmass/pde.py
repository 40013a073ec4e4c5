"""Finite-difference oracle for the rod / point-mass / rod system.

Nothing here uses spectral information.  The spatial operator is written as
``M y' = -K y + g(t)`` over the unknowns

    [u_1 .. u_{n-1}, z, v_1 .. v_{n-1}]        (Dirichlet control, v_n = f)
    [u_1 .. u_{n-1}, z, v_1 .. v_{n-1}, v_n]   (Neumann control)

with ``u_0 = 0`` and z shared by both rods, so ``u(0) = v(0) = z`` holds
exactly.  Two spatial discretizations are available:

* ``order=4``: a compact (Numerov type) scheme, symmetric M and K, fourth
  order in h including the point-mass row and the Neumann end;
* ``order=2``: identity mass, three-point interior stencils, one-sided second
  order differences for the fluxes at x = 0 and a ghost point at x = 1.

Time stepping is Backward Euler, Crank-Nicolson or the 3-stage Radau IIA
method (order 5, stiffly accurate); each factorizes its matrix once.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import trapezoid

from .spectrum import BoundaryCase
from .state import HybridState, h_norm

__all__ = [
    "Scheme",
    "FdConfig",
    "Trajectory",
    "FdSolveError",
    "InconsistentDataError",
    "ResolutionError",
    "operators",
    "solve_pointmass",
    "solve_epsilon",
    "epsilon_error",
    "observe_boundary",
]

SCHEMES = ("backward_euler", "crank_nicolson", "radau")
_ALIASES = {
    "be": "backward_euler", "backwardeuler": "backward_euler", "backward_euler": "backward_euler",
    "cn": "crank_nicolson", "cranknicolson": "crank_nicolson", "crank_nicolson": "crank_nicolson",
    "radau": "radau", "radauiia": "radau", "radau_iia": "radau",
}


class Scheme:
    @staticmethod
    def parse(name: str) -> str:
        key = str(name).strip().lower().replace("-", "_")
        if key not in _ALIASES:
            raise ValueError(f"unknown scheme {name!r}; choose from {', '.join(SCHEMES)}")
        return _ALIASES[key]


_S6 = math.sqrt(6.0)
RADAU_A = np.array([
    [(88 - 7 * _S6) / 360, (296 - 169 * _S6) / 1800, (-2 + 3 * _S6) / 225],
    [(296 + 169 * _S6) / 1800, (88 + 7 * _S6) / 360, (-2 - 3 * _S6) / 225],
    [(16 - _S6) / 36, (16 + _S6) / 36, 1 / 9],
])
RADAU_C = np.array([(4 - _S6) / 10, (4 + _S6) / 10, 1.0])


class FdSolveError(RuntimeError):
    def __init__(self, message, step=None):
        super().__init__(message if step is None else f"step {step}: {message}")
        self.step = step


class InconsistentDataError(ValueError):
    pass


class ResolutionError(ValueError):
    pass


@dataclass(frozen=True)
class FdConfig:
    mesh_n: int = 256
    dt: float = 1e-3
    scheme: str = "radau"
    T: float = 1.0
    order: int = 4

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme.parse(self.scheme))
        if int(self.mesh_n) != self.mesh_n or self.mesh_n < 16:
            raise ValueError(f"mesh_n must be an integer >= 16, got {self.mesh_n}")
        if not 0 < self.dt <= 0.1:
            raise ValueError(f"dt must lie in (0, 0.1], got {self.dt}")
        if not self.T > 0:
            raise ValueError(f"T must be positive, got {self.T}")
        if self.order not in (2, 4):
            raise ValueError(f"order must be 2 or 4, got {self.order}")

    @property
    def steps(self) -> int:
        return max(1, math.ceil(self.T / self.dt - 1e-9))

    def with_T(self, T: float) -> "FdConfig":
        return FdConfig(self.mesh_n, self.dt, self.scheme, T, self.order)


@dataclass
class Trajectory:
    times: np.ndarray
    states: list
    boundary_flux_record: np.ndarray
    energy: np.ndarray
    case: BoundaryCase | None = None
    order: int = 2
    eps: float | None = None
    meta: dict = field(default_factory=dict)

    @property
    def final(self) -> HybridState:
        return self.states[-1]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "norm_H", "z", "trace"])
            for t, y, tr in zip(self.times, self.states, self.boundary_flux_record):
                w.writerow([f"{t:.17g}", f"{h_norm(y):.17g}", f"{y.z:.17g}", f"{tr:.17g}"])


@dataclass(frozen=True)
class _Operator:
    M: sp.csr_matrix
    K: sp.csr_matrix
    size: int
    iz: int
    n: int
    case: BoundaryCase
    order: int

    def forcing(self, f, t) -> np.ndarray | None:
        """Boundary forcing vector g(t), None when f is absent."""
        if f is None:
            return None
        n, h = self.n, 1.0 / self.n
        g = np.zeros(self.size)
        fv = float(f(t))
        if self.order == 4:
            fd = float(f.derivative(t))
            if self.case is BoundaryCase.DIRICHLET:
                g[-1] = fv / h - h / 12 * fd
            else:
                g[-1] = fv + h * h / 12 * fd
        else:
            if self.case is BoundaryCase.DIRICHLET:
                g[-1] = fv / (h * h)
            else:
                g[-1] = 2 * fv / h
        return g


def operators(case, n: int, order: int = 4) -> _Operator:
    """Assemble the sparse pair (M, K) for ``M y' = -K y + g``."""
    case = BoundaryCase.parse(case)
    h = 1.0 / n
    neu = case is BoundaryCase.NEUMANN
    m = 2 * n - 1 + (1 if neu else 0)
    iz = n - 1
    M = sp.lil_matrix((m, m))
    K = sp.lil_matrix((m, m))
    if order == 4:
        for i in range(m):
            if neu and i == m - 1:
                K[i, i], K[i, i - 1] = 1 / h, -1 / h
                M[i, i], M[i, i - 1] = 5 * h / 12, h / 12
                continue
            K[i, i], M[i, i] = 2 / h, 10 * h / 12
            if i > 0:
                K[i, i - 1], M[i, i - 1] = -1 / h, h / 12
            if i < m - 1:
                K[i, i + 1], M[i, i + 1] = -1 / h, h / 12
        # point-mass row: unit capacity plus the half cells of both rods
        beta = h / 6 * (1 + h / 2) / (1 + h)
        M[iz, iz] = 1 + h - 2 * beta
        M[iz, iz - 1] = M[iz, iz + 1] = beta
    else:
        M = sp.identity(m, format="lil")
        h2 = h * h
        for i in range(m):
            if i == iz:
                continue
            if neu and i == m - 1:
                K[i, i], K[i, i - 1] = 2 / h2, -2 / h2
                continue
            K[i, i] = 2 / h2
            if i > 0:
                K[i, i - 1] = -1 / h2
            if i < m - 1:
                K[i, i + 1] = -1 / h2
        # zdot = v'(0+) - u'(0-) with one-sided second order differences
        K[iz, iz] = 3 / h
        K[iz, iz + 1], K[iz, iz + 2] = -2 / h, 1 / (2 * h)
        K[iz, iz - 1], K[iz, iz - 2] = -2 / h, 1 / (2 * h)
    return _Operator(M.tocsr(), K.tocsr(), m, iz, n, case, order)


def _pack(case, y: HybridState) -> np.ndarray:
    n = y.mesh_n
    parts = [y.u[1:n], [y.z], y.v[1:n]]
    if case is BoundaryCase.NEUMANN:
        parts.append([y.v[n]])
    return np.concatenate(parts)


def _unpack(case, Y, n, f, t) -> HybridState:
    z = Y[n - 1]
    u = np.concatenate([[0.0], Y[: n - 1], [z]])
    if case is BoundaryCase.NEUMANN:
        v = np.concatenate([[z], Y[n:]])
    else:
        vend = float(f(t)) if f is not None else 0.0
        v = np.concatenate([[z], Y[n:], [vend]])
    return HybridState(u, v, z, n)


class _Stepper:
    """One-step map ``Y_k -> Y_{k+1}`` for ``M Y' = A Y + g(t)``."""

    def __init__(self, M, A, dt, scheme, forcing):
        self.M, self.A, self.dt, self.scheme = M, A, dt, scheme
        self.forcing = forcing
        self.m = M.shape[0]
        if scheme == "backward_euler":
            mat = M - dt * A
        elif scheme == "crank_nicolson":
            mat = M - 0.5 * dt * A
            self.rhs_mat = (M + 0.5 * dt * A).tocsr()
        else:
            mat = sp.kron(sp.identity(3), M) - dt * sp.kron(sp.csr_matrix(RADAU_A), A)
        self.lu = spla.splu(sp.csc_matrix(mat))

    def _g(self, t):
        g = self.forcing(t)
        return 0.0 if g is None else g

    def step(self, Y, t):
        dt = self.dt
        if self.scheme == "backward_euler":
            return self.lu.solve(self.M @ Y + dt * self._g(t + dt))
        if self.scheme == "crank_nicolson":
            g = 0.5 * dt * (self._g(t) + self._g(t + dt))
            return self.lu.solve(self.rhs_mat @ Y + g)
        AY = self.A @ Y
        rhs = np.concatenate([AY + self._g(t + c * dt) for c in RADAU_C])
        k = self.lu.solve(rhs).reshape(3, self.m)
        return Y + dt * (RADAU_A[2] @ k)


def _trace(case, y: HybridState, order: int) -> float:
    h = y.dx
    v = y.v
    if case is BoundaryCase.NEUMANN:
        return float(v[-1])
    if order == 4:
        return float((25 * v[-1] - 48 * v[-2] + 36 * v[-3] - 16 * v[-4] + 3 * v[-5]) / (12 * h))
    return float((3 * v[-1] - 4 * v[-2] + v[-3]) / (2 * h))


def _check_consistent(y0: HybridState, tol: float):
    scale = max(1.0, float(np.max(np.abs(y0.u))), float(np.max(np.abs(y0.v))), abs(y0.z))
    bad = max(abs(y0.u[0]), y0.coupling_defect())
    if bad > tol * scale:
        raise InconsistentDataError(
            f"initial state violates u(-1) = 0 or u(0) = v(0) = z by {bad:.3e}")


def solve_pointmass(case, y0: HybridState, f, cfg: FdConfig, record_every: int = 1,
                    consistency_tol: float = 1e-8) -> Trajectory:
    """Time-step the controlled hybrid system from ``y0`` to ``cfg.T``.

    ``f`` is a control with ``__call__`` and ``derivative`` (see
    :class:`heatmass.moment.ControlSignal`) or None for the homogeneous
    problem.  Only every ``record_every``-th step is kept, plus the last.
    """
    case = BoundaryCase.parse(case)
    if y0.mesh_n != cfg.mesh_n:
        raise ValueError(f"initial state has mesh_n={y0.mesh_n}, config has {cfg.mesh_n}")
    _check_consistent(y0, consistency_tol)
    if f is not None and getattr(f, "T", cfg.T) + 1e-12 < cfg.T:
        raise ValueError(f"control horizon {f.T} shorter than T={cfg.T}")
    op = operators(case, cfg.mesh_n, cfg.order)
    steps = cfg.steps
    dt = cfg.T / steps
    stepper = _Stepper(op.M, -op.K, dt, cfg.scheme, lambda t: op.forcing(f, t))
    Y = _pack(case, y0)
    times, states = [0.0], [_unpack(case, Y, cfg.mesh_n, f, 0.0)]
    for k in range(steps):
        t = k * dt
        try:
            Y = stepper.step(Y, t)
        except Exception as exc:  # splu failures surface as RuntimeError/ValueError
            raise FdSolveError(str(exc), step=k + 1) from exc
        if not np.all(np.isfinite(Y)):
            raise FdSolveError("non-finite values in the solution", step=k + 1)
        if (k + 1) % record_every == 0 or k + 1 == steps:
            tn = cfg.T if k + 1 == steps else (k + 1) * dt
            times.append(tn)
            states.append(_unpack(case, Y, cfg.mesh_n, f, tn))
    trace = np.array([_trace(case, s, cfg.order) for s in states])
    energy = np.array([h_norm(s) for s in states])
    return Trajectory(np.array(times), states, trace, energy, case, cfg.order,
                      meta={"dt": dt, "steps": steps, "scheme": cfg.scheme})


def observe_boundary(traj: Trajectory, case=None) -> np.ndarray:
    """``v'(t, 1)`` (Dirichlet) or ``v(t, 1)`` (Neumann) at the stored times."""
    case = BoundaryCase.parse(case if case is not None else traj.case)
    return np.array([_trace(case, s, traj.order) for s in traj.states])


def _epsilon_grid(eps: float, n: int) -> int:
    if not 0 < eps < 0.5:
        raise ValueError(f"eps must lie in (0, 0.5), got {eps}")
    j = eps * n
    if abs(j - round(j)) > 1e-9:
        raise ResolutionError(f"eps={eps} is not a grid point for mesh_n={n}; "
                              "choose mesh_n with eps*mesh_n an integer")
    j = int(round(j))
    if 2 * j - 1 < 4:
        raise ResolutionError(f"eps={eps} leaves {2 * j - 1} interior points at mesh_n={n}; "
                              "need at least 4")
    return j


def solve_epsilon(eps: float, y0: HybridState, cfg: FdConfig, record_every: int = 1) -> Trajectory:
    """Heat equation on (-1, 1) with density 1/(2 eps) on (-eps, eps).

    Conservative second order scheme: node i carries the density integrated
    over its dual cell, fluxes are plain differences, so value and flux
    continuity at +-eps hold by construction and ``sum m_i y_i^2`` cannot
    grow.  The recorded states hold the solution on [-1, 0] and [0, 1] with
    z set to the mean over (-eps, eps); ``energy`` is ``int rho y^2``.
    """
    n = cfg.mesh_n
    j = _epsilon_grid(eps, n)
    h = 1.0 / n
    if y0.mesh_n != n:
        raise ValueError(f"initial state has mesh_n={y0.mesh_n}, config has {n}")
    if max(abs(y0.u[0]), abs(y0.v[-1])) > 1e-8 * max(1.0, float(np.max(np.abs(y0.u)))):
        raise InconsistentDataError("the eps-system needs u(-1) = v(1) = 0")
    x = np.linspace(-1.0, 1.0, 2 * n + 1)[1:-1]
    y_full = np.concatenate([y0.u[:-1], y0.v])[1:-1]
    rho_hi = 1.0 / (2 * eps)
    # dual-cell integrated density; +-eps nodes get half a cell of each
    mass = np.full(x.size, h)
    ic = n - 1  # index of x = 0 among the interior nodes
    mass[ic - j + 1: ic + j] = rho_hi * h
    mass[ic - j] = mass[ic + j] = 0.5 * h * (1 + rho_hi)
    m = x.size
    K = sp.diags([-np.ones(m - 1), 2 * np.ones(m), -np.ones(m - 1)], [-1, 0, 1]) / h
    M = sp.diags(mass)
    steps = cfg.steps
    dt = cfg.T / steps
    stepper = _Stepper(M.tocsr(), -K.tocsr(), dt, cfg.scheme, lambda t: None)

    def view(Y):
        full = np.concatenate([[0.0], Y, [0.0]])
        u, v = full[: n + 1], full[n:]
        inner = full[n - j: n + j + 1]
        z = float(trapezoid(inner, dx=h) / (2 * eps))
        return HybridState(u, v, z, n)

    Y = y_full.copy()
    times, states, energy = [0.0], [view(Y)], [float(mass @ (Y * Y))]
    for k in range(steps):
        try:
            Y = stepper.step(Y, k * dt)
        except Exception as exc:
            raise FdSolveError(str(exc), step=k + 1) from exc
        if (k + 1) % record_every == 0 or k + 1 == steps:
            times.append(cfg.T if k + 1 == steps else (k + 1) * dt)
            states.append(view(Y))
            energy.append(float(mass @ (Y * Y)))
    trace = np.array([_trace(BoundaryCase.DIRICHLET, s, 2) for s in states])
    return Trajectory(np.array(times), states, trace, np.array(energy), BoundaryCase.DIRICHLET,
                      2, eps, meta={"dt": dt, "steps": steps, "scheme": cfg.scheme})


def epsilon_error(eps: float, y0: HybridState, cfg: FdConfig) -> float:
    """H-distance at ``cfg.T`` between the eps-system and the point-mass model."""
    ye = solve_epsilon(eps, y0, cfg).final
    yp = solve_pointmass(BoundaryCase.DIRICHLET, y0, None, cfg).final
    return h_norm(ye - yp)
