"""Eigenvalues and eigenvectors of the rod / point-mass / rod operator.

Two boundary conventions at x = 1 are supported.  In the Dirichlet case the
spectrum interlaces the roots of ``mu = 2 cot(mu)`` with the plain sine modes
``-(k pi)^2``; in the Neumann case every mode comes from ``mu = 2 cot(2 mu)``.
Modes are indexed from 1 in order of decreasing eigenvalue.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = [
    "BoundaryCase",
    "ModeKind",
    "EigenPair",
    "PoleError",
    "RootFindingError",
    "characteristic_value",
    "characteristic_derivative",
    "root_bracket",
    "find_root",
    "bisect_root",
    "eigenpair",
    "eigenpairs",
    "eval_eigenfunction",
    "eval_eigenfunction_dx",
    "boundary_trace",
    "leading_asymptotic",
    "asymptotic_deviation",
    "fit_neumann_coefficient",
    "gap_table",
]

# Offset from the cotangent poles at bracket endpoints.
BRACKET_OFFSET = 1e-9
POLE_TOL = 1e-15
SQRT2 = math.sqrt(2.0)


class BoundaryCase(enum.Enum):
    DIRICHLET = "dirichlet"
    NEUMANN = "neumann"

    @classmethod
    def parse(cls, value) -> "BoundaryCase":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ValueError(f"unknown boundary case {value!r}; "
                             "expected 'dirichlet' or 'neumann'") from None


class ModeKind(enum.Enum):
    DIRICHLET_EVEN = "DirichletEven"
    DIRICHLET_ODD = "DirichletOdd"
    NEUMANN_ODD = "NeumannOdd"
    NEUMANN_EVEN = "NeumannEven"


class PoleError(ValueError):
    """Raised when the characteristic function is evaluated at a cotangent pole."""


class RootFindingError(RuntimeError):
    def __init__(self, message, bracket, last_iterate):
        super().__init__(f"{message} (bracket={bracket}, last iterate={last_iterate!r})")
        self.bracket = bracket
        self.last_iterate = last_iterate


@dataclass(frozen=True)
class EigenPair:
    """One mode of the hybrid operator.

    ``mu`` is ``None`` for the Dirichlet sine modes, where the frequency is
    exactly ``k*pi``.  ``b`` is the control input coefficient: the modal
    Duhamel formula reads ``a_n(T) = e^{lambda T} a_n(0) - b * int e^{lambda (T-s)} f(s) ds``.
    """

    case: BoundaryCase
    n: int
    k: int
    kind: ModeKind
    mu: float | None
    lam: float
    norm_sq: float
    b: float

    @property
    def frequency(self) -> float:
        return self.mu if self.mu is not None else self.k * math.pi


def characteristic_value(case, mu: float) -> float:
    """``2 cot(mu) - mu`` (Dirichlet) or ``2 cot(2 mu) - mu`` (Neumann)."""
    case = BoundaryCase.parse(case)
    arg = mu if case is BoundaryCase.DIRICHLET else 2.0 * mu
    s = math.sin(arg)
    if abs(s) < POLE_TOL:
        raise PoleError(f"mu={mu!r} sits on a pole of the characteristic function; "
                        "evaluate inside an open bracket only")
    return 2.0 * math.cos(arg) / s - mu


def characteristic_derivative(case, mu: float) -> float:
    case = BoundaryCase.parse(case)
    if case is BoundaryCase.DIRICHLET:
        s = math.sin(mu)
        return -2.0 / (s * s) - 1.0
    s = math.sin(2.0 * mu)
    return -4.0 / (s * s) - 1.0


def root_bracket(case, k: int) -> tuple[float, float]:
    """Open interval holding exactly the k-th characteristic root."""
    if k < 1:
        raise ValueError("k must be >= 1")
    case = BoundaryCase.parse(case)
    width = math.pi if case is BoundaryCase.DIRICHLET else math.pi / 2.0
    return ((k - 1) * width, k * width)


def bisect_root(case, k: int, tol: float = 1e-12, maxiter: int = 200) -> float:
    """Plain bisection on the shrunken bracket; the reference root finder."""
    lo, hi = root_bracket(case, k)
    lo += BRACKET_OFFSET
    hi -= BRACKET_OFFSET
    flo = characteristic_value(case, lo)
    for _ in range(maxiter):
        mid = 0.5 * (lo + hi)
        if hi - lo <= tol:
            return mid
        fmid = characteristic_value(case, mid)
        if fmid == 0.0:
            return mid
        if (fmid > 0.0) == (flo > 0.0):
            lo, flo = mid, fmid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def find_root(case, k: int, tol: float = 1e-12, maxiter: int = 100) -> float:
    """k-th positive root of the characteristic equation.

    Safeguarded Newton: a Newton step is taken only while it stays inside the
    current bisection bracket, otherwise the bracket is halved.  F decreases
    strictly on the bracket, which keeps the sign bookkeeping trivial.

    The result satisfies ``|F(mu)| <= tol*(1+mu)`` unless that is finer than
    the resolution of a double near ``mu``, in which case ``mu`` is the
    representable root (residual within one ulp times ``|F'|``).
    """
    case = BoundaryCase.parse(case)
    if tol < 1e-14:
        raise ValueError("tol below the double precision floor (1e-14)")
    bracket = root_bracket(case, k)
    lo, hi = bracket[0] + BRACKET_OFFSET, bracket[1] - BRACKET_OFFSET
    # Start from the asymptotic guess, which is close for all but tiny k.
    if case is BoundaryCase.DIRICHLET:
        x = lo + math.atan(2.0 / max(lo, 1.0))
    else:
        x = lo + 0.5 * math.atan(2.0 / max(lo, 0.5))
    if not lo < x < hi:
        x = 0.5 * (lo + hi)
    for _ in range(maxiter):
        fx = characteristic_value(case, x)
        if fx == 0.0:
            return x
        if fx > 0.0:
            lo = x
        else:
            hi = x
        x_new = x - fx / characteristic_derivative(case, x)
        if not lo < x_new < hi:
            x_new = 0.5 * (lo + hi)
        done = abs(x_new - x) <= math.ulp(x)
        x = x_new
        if done:
            break
    x = min((x, math.nextafter(x, lo), math.nextafter(x, hi)),
            key=lambda y: abs(characteristic_value(case, y)))
    fx = characteristic_value(case, x)
    # Near large roots F is steep; one ulp in mu can exceed tol*(1+mu).
    floor = abs(characteristic_derivative(case, x)) * math.ulp(x)
    if abs(fx) <= max(tol * (1.0 + x), floor):
        return x
    raise RootFindingError("characteristic root did not converge", bracket, x)


def _norm_sq(case: BoundaryCase, kind: ModeKind, mu: float) -> float:
    s2 = math.sin(2.0 * mu) / (4.0 * mu)
    if kind is ModeKind.DIRICHLET_EVEN:
        return 1.0
    if kind is ModeKind.DIRICHLET_ODD:
        return 1.0 - 2.0 * s2 + math.sin(mu) ** 2
    if kind is ModeKind.NEUMANN_ODD:
        t = math.tan(mu)
        return 2.0 * ((0.5 - s2) + t * t * (0.5 + s2) + math.sin(mu) ** 2)
    c = 1.0 / math.tan(mu)
    return 2.0 * (c * c * (0.5 - s2) + (0.5 + s2) + math.cos(mu) ** 2)


@lru_cache(maxsize=4096)
def _eigenpair(case: BoundaryCase, n: int) -> EigenPair:
    if case is BoundaryCase.DIRICHLET:
        k = (n + 1) // 2
        if n % 2 == 0:
            return EigenPair(case, n, k, ModeKind.DIRICHLET_EVEN, None,
                             -(k * math.pi) ** 2, 1.0, (-1) ** k * k * math.pi)
        mu = find_root(case, k)
        return EigenPair(case, n, k, ModeKind.DIRICHLET_ODD, mu, -mu * mu,
                         _norm_sq(case, ModeKind.DIRICHLET_ODD, mu), -mu)
    mu = find_root(case, n)
    k = (n + 1) // 2
    if n % 2:
        kind, b = ModeKind.NEUMANN_ODD, -SQRT2 * math.tan(mu)
    else:
        kind, b = ModeKind.NEUMANN_EVEN, -SQRT2
    return EigenPair(case, n, k, kind, mu, -mu * mu, _norm_sq(case, kind, mu), b)


def eigenpair(case, n: int) -> EigenPair:
    """The n-th mode (1-based, decreasing eigenvalue)."""
    if n < 1:
        raise ValueError("mode index n must be >= 1")
    return _eigenpair(BoundaryCase.parse(case), int(n))


def eigenpairs(case, N: int) -> list[EigenPair]:
    return [eigenpair(case, n) for n in range(1, N + 1)]


def eval_eigenfunction(pair: EigenPair, x):
    """Components ``(U(x), V(x), Z)`` of the eigenvector.

    ``x`` may be a scalar or an array; U is meaningful on [-1, 0] and V on
    [0, 1], but both closed forms are evaluated wherever asked.
    """
    x = np.asarray(x, dtype=float)
    w = pair.frequency
    kind = pair.kind
    if kind is ModeKind.DIRICHLET_EVEN:
        u = np.sin(w * x)
        return u, u.copy(), 0.0
    if kind is ModeKind.DIRICHLET_ODD:
        return np.sin((1.0 + x) * w), np.sin((1.0 - x) * w), math.sin(w)
    if kind is ModeKind.NEUMANN_ODD:
        return (SQRT2 * np.sin(w * (x + 1.0)),
                SQRT2 * math.tan(w) * np.cos(w * (x - 1.0)),
                SQRT2 * math.sin(w))
    cot = 1.0 / math.tan(w)
    return (SQRT2 * cot * np.sin(w * (x + 1.0)),
            SQRT2 * np.cos(w * (x - 1.0)),
            SQRT2 * math.cos(w))


def eval_eigenfunction_dx(pair: EigenPair, x):
    """Spatial derivatives ``(U'(x), V'(x))`` in closed form."""
    x = np.asarray(x, dtype=float)
    w = pair.frequency
    kind = pair.kind
    if kind is ModeKind.DIRICHLET_EVEN:
        du = w * np.cos(w * x)
        return du, du.copy()
    if kind is ModeKind.DIRICHLET_ODD:
        return w * np.cos((1.0 + x) * w), -w * np.cos((1.0 - x) * w)
    if kind is ModeKind.NEUMANN_ODD:
        return (SQRT2 * w * np.cos(w * (x + 1.0)),
                -SQRT2 * w * math.tan(w) * np.sin(w * (x - 1.0)))
    cot = 1.0 / math.tan(w)
    return (SQRT2 * w * cot * np.cos(w * (x + 1.0)),
            -SQRT2 * w * np.sin(w * (x - 1.0)))


def boundary_trace(pair: EigenPair) -> float:
    """Observed quantity at x = 1: V'(1) for Dirichlet, V(1) for Neumann."""
    if pair.case is BoundaryCase.DIRICHLET:
        return float(eval_eigenfunction_dx(pair, 1.0)[1])
    return float(eval_eigenfunction(pair, 1.0)[1])


def leading_asymptotic(case, k: int, neumann_coeff: float = 2.0) -> float:
    """Two-term asymptotic for the k-th characteristic root.

    Dirichlet: ``(k-1) pi + 2/(k pi)``.  Neumann: ``(k-1) pi/2 + c/(k pi)``
    where ``c`` defaults to 2, the value the root data support.
    """
    case = BoundaryCase.parse(case)
    if case is BoundaryCase.DIRICHLET:
        return (k - 1) * math.pi + 2.0 / (k * math.pi)
    return (k - 1) * math.pi / 2.0 + neumann_coeff / (k * math.pi)


def asymptotic_deviation(case, k: int, neumann_coeff: float = 2.0) -> float:
    return find_root(case, k) - leading_asymptotic(case, k, neumann_coeff)


def fit_neumann_coefficient(k_min: int = 10, k_max: int = 50) -> float:
    """Estimate c in ``mu_k - (k-1) pi/2 = c/(k pi) + d/k^2``.

    The second basis function soaks up the O(1/k^2) remainder so that c is
    not biased by the finite fitting window.
    """
    ks = np.arange(k_min, k_max + 1, dtype=float)
    eps = np.array([find_root(BoundaryCase.NEUMANN, int(k)) - (k - 1) * math.pi / 2
                    for k in ks])
    basis = np.column_stack([1.0 / (ks * math.pi), 1.0 / ks**2])
    coef, *_ = np.linalg.lstsq(basis, eps, rcond=None)
    return float(coef[0])


def gap_table(case, n_max: int) -> list[tuple[int, float]]:
    """Consecutive gaps ``(n, |lambda_{n+1} - lambda_n|)`` for n < n_max.

    Eigenvalues decrease with n, so the magnitude ``lambda_n - lambda_{n+1}``
    is what gets reported; every entry is strictly positive.
    """
    if n_max < 2:
        raise ValueError("n_max must be >= 2")
    lams = [eigenpair(case, n).lam for n in range(1, n_max + 1)]
    return [(n, lams[n - 1] - lams[n]) for n in range(1, n_max)]
