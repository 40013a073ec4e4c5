"""Grid states of the hybrid system and their modal representation.

A state is the triple ``(u, v, z)``: temperature on [-1, 0], temperature on
[0, 1] and the temperature of the point mass.  The energy space pairs the two
L2 products with the plain product of the z components.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.integrate import simpson

from .spectrum import BoundaryCase, EigenPair, eigenpair, eigenpairs, eval_eigenfunction

__all__ = [
    "HybridState",
    "SpectralCoeffs",
    "MeshMismatchError",
    "BoundaryConditionWarning",
    "DUHAMEL_SIGN",
    "sample_eigenfunction",
    "state_from_modes",
    "inner_product",
    "h_norm",
    "w_norm_sq",
    "project",
    "reconstruct",
    "evolve_free",
    "evolve_controlled",
]

# a_n(T) = e^{lam T} a_n(0) + DUHAMEL_SIGN * b_n * int_0^T e^{lam (T-s)} f(s) ds.
# Fixed by the FD smoke test in verify.calibrate_sign.
DUHAMEL_SIGN = {BoundaryCase.DIRICHLET: -1.0, BoundaryCase.NEUMANN: -1.0}


class MeshMismatchError(ValueError):
    pass


class BoundaryConditionWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class HybridState:
    """Samples of ``(u, v, z)`` on uniform meshes of [-1, 0] and [0, 1].

    Both sample arrays hold ``mesh_n + 1`` values including the interval
    endpoints, so ``u[-1]`` and ``v[0]`` are the values at x = 0.
    """

    u: np.ndarray
    v: np.ndarray
    z: float
    mesh_n: int

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        v = np.asarray(self.v, dtype=float)
        if u.shape != (self.mesh_n + 1,) or v.shape != (self.mesh_n + 1,):
            raise ValueError(f"expected {self.mesh_n + 1} samples per interval, "
                             f"got {u.shape} and {v.shape}")
        u.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "z", float(self.z))

    @property
    def dx(self) -> float:
        return 1.0 / self.mesh_n

    @property
    def x_u(self) -> np.ndarray:
        return np.linspace(-1.0, 0.0, self.mesh_n + 1)

    @property
    def x_v(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.mesh_n + 1)

    @classmethod
    def zeros(cls, mesh_n: int) -> "HybridState":
        return cls(np.zeros(mesh_n + 1), np.zeros(mesh_n + 1), 0.0, mesh_n)

    @classmethod
    def from_functions(cls, u_fun, v_fun, z: float, mesh_n: int) -> "HybridState":
        x_u = np.linspace(-1.0, 0.0, mesh_n + 1)
        x_v = np.linspace(0.0, 1.0, mesh_n + 1)
        return cls(np.broadcast_to(u_fun(x_u), x_u.shape).copy(),
                   np.broadcast_to(v_fun(x_v), x_v.shape).copy(), z, mesh_n)

    def _check(self, other: "HybridState"):
        if self.mesh_n != other.mesh_n:
            raise MeshMismatchError(f"mesh_n {self.mesh_n} != {other.mesh_n}")

    def __add__(self, other: "HybridState") -> "HybridState":
        self._check(other)
        return HybridState(self.u + other.u, self.v + other.v, self.z + other.z, self.mesh_n)

    def __sub__(self, other: "HybridState") -> "HybridState":
        return self + (-1.0) * other

    def __mul__(self, c: float) -> "HybridState":
        return HybridState(c * self.u, c * self.v, c * self.z, self.mesh_n)

    __rmul__ = __mul__

    def coupling_defect(self) -> float:
        """max(|u(0) - z|, |v(0) - z|)."""
        return max(abs(self.u[-1] - self.z), abs(self.v[0] - self.z))


@dataclass(frozen=True, eq=False)
class SpectralCoeffs:
    """Pairings ``a_n = <y, phi_n>`` for n = 1..N.

    These are not expansion coefficients; the expansion coefficient of mode n
    is ``a_n / |phi_n|^2``.
    """

    a: np.ndarray
    case: BoundaryCase

    def __post_init__(self):
        a = np.array(self.a, dtype=float).reshape(-1)
        if not np.all(np.isfinite(a)):
            raise ValueError("spectral coefficients must be finite")
        a.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "case", BoundaryCase.parse(self.case))

    @property
    def N(self) -> int:
        return self.a.size

    def pairs(self) -> list[EigenPair]:
        return eigenpairs(self.case, self.N)

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([p.lam for p in self.pairs()])

    @property
    def norms_sq(self) -> np.ndarray:
        return np.array([p.norm_sq for p in self.pairs()])


def sample_eigenfunction(pair: EigenPair, mesh_n: int) -> HybridState:
    x_u = np.linspace(-1.0, 0.0, mesh_n + 1)
    x_v = np.linspace(0.0, 1.0, mesh_n + 1)
    u, _, z = eval_eigenfunction(pair, x_u)
    _, v, _ = eval_eigenfunction(pair, x_v)
    return HybridState(u, v, z, mesh_n)


def state_from_modes(case, modes, mesh_n: int) -> HybridState:
    """Sample ``sum c * phi_n`` for ``modes = [(n, c), ...]``."""
    y = HybridState.zeros(mesh_n)
    for n, c in modes:
        y = y + float(c) * sample_eigenfunction(eigenpair(case, int(n)), mesh_n)
    return y


def inner_product(y1: HybridState, y2: HybridState) -> float:
    y1._check(y2)
    return float(simpson(y1.u * y2.u, dx=y1.dx) + simpson(y1.v * y2.v, dx=y1.dx)
                 + y1.z * y2.z)


def h_norm(y: HybridState) -> float:
    return float(np.sqrt(max(inner_product(y, y), 0.0)))


def w_norm_sq(y: HybridState, case, bc_tol: float = 1e-8) -> float:
    """``|u'|^2 + |v'|^2`` integrated over both rods.

    Derivatives use second order differences, one-sided at the interval ends.
    A :class:`BoundaryConditionWarning` is issued when the state violates
    the essential conditions of ``case`` by more than ``bc_tol``.
    """
    case = BoundaryCase.parse(case)
    scale = max(1.0, float(np.max(np.abs(y.u))), float(np.max(np.abs(y.v))), abs(y.z))
    defects = [abs(y.u[0]), y.coupling_defect()]
    if case is BoundaryCase.DIRICHLET:
        defects.append(abs(y.v[-1]))
    if max(defects) > bc_tol * scale:
        warnings.warn(f"state violates the {case.value} boundary/coupling conditions "
                      f"by {max(defects):.3e}", BoundaryConditionWarning, stacklevel=2)
    du = np.gradient(y.u, y.dx, edge_order=2)
    dv = np.gradient(y.v, y.dx, edge_order=2)
    return float(simpson(du * du, dx=y.dx) + simpson(dv * dv, dx=y.dx))


def project(y: HybridState, case, N: int) -> SpectralCoeffs:
    case = BoundaryCase.parse(case)
    if N < 1:
        raise ValueError("N must be >= 1")
    a = [inner_product(y, sample_eigenfunction(p, y.mesh_n)) for p in eigenpairs(case, N)]
    return SpectralCoeffs(np.array(a), case)


def reconstruct(c: SpectralCoeffs, mesh_n: int) -> HybridState:
    y = HybridState.zeros(mesh_n)
    for p, a in zip(c.pairs(), c.a):
        if a != 0.0:
            y = y + (a / p.norm_sq) * sample_eigenfunction(p, mesh_n)
    return y


def evolve_free(c: SpectralCoeffs, t: float) -> SpectralCoeffs:
    """Apply the semigroup: ``a_n -> a_n e^{lambda_n t}``."""
    if t < 0:
        raise ValueError("t must be non-negative")
    return SpectralCoeffs(c.a * np.exp(c.lambdas * t), c.case)


def evolve_controlled(c: SpectralCoeffs, f, T: float, b=None) -> SpectralCoeffs:
    """Modal Duhamel solution at time T under boundary control f.

    ``f`` must provide ``response_integrals(lambdas, T)`` returning
    ``int_0^T e^{lambda (T-s)} f(s) ds`` for each eigenvalue (see
    :class:`heatmass.moment.ControlSignal`); ``f=None`` means no control.
    ``b`` overrides the input coefficients (used to test sign conventions).
    """
    free = evolve_free(c, T)
    if f is None:
        return free
    lams = c.lambdas
    if b is None:
        b = np.array([p.b for p in c.pairs()])
    forced = np.asarray(f.response_integrals(lams, T), dtype=float)
    return SpectralCoeffs(free.a + DUHAMEL_SIGN[c.case] * np.asarray(b) * forced, c.case)
