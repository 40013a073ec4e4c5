"""Moment problem for the boundary null control.

A control f on [0, T] drives the first N modal pairings to zero when

    int_0^T f(T - tau) exp(lambda_n tau) dtau = m_n,   m_n = (a_n / b_n) exp(lambda_n T).

The control is sought in reversed time as ``f(T - tau) = rho(tau) * sum_j c_j
exp(lambda_j tau)`` where ``rho(tau) = tau^p (T - tau)^q`` is an optional
polynomial weight (``p = q = 0`` gives the plain exponential span).  The
coefficients solve ``G c = m`` with the weighted Gram matrix

    G_jn = int_0^T rho(tau) exp((lambda_j + lambda_n) tau) dtau,

which is the minimum-norm solution in ``L2(rho^-1)`` over that span.  Every
integral of this form has the closed form ``T^(p+q+1) B(p+1, q+1)
1F1(p+1; p+q+2; s T)``.  Gram matrices of real exponentials are violently
ill-conditioned, so an extended precision mode runs the solve in mpmath.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field

import mpmath as mp
import numpy as np
import scipy.linalg as sla
from scipy.integrate import IntegrationWarning, quad
from scipy.interpolate import CubicSpline

from .spectrum import BoundaryCase, eigenpairs
from .state import SpectralCoeffs

__all__ = [
    "Weight",
    "MomentSystem",
    "ControlSignal",
    "GramSolve",
    "Biorthogonal",
    "DecayFit",
    "ConditioningError",
    "DOUBLE_CONDITION_CAP",
    "DEFAULT_DPS",
    "VERIFY_WEIGHT",
    "assemble",
    "exponential_moment",
    "gram",
    "spd_solve",
    "resolve_precision",
    "biorthogonal",
    "biorthogonal_family",
    "fit_growth",
    "solve_min_norm",
    "quadrature_residuals",
    "decay_check",
]

DOUBLE_CONDITION_CAP = 1e14
DEFAULT_DPS = 50
DEFAULT_SAMPLE_N = 1000
DOUBLE_MAX_N = 10


class ConditioningError(RuntimeError):
    """The Gram system is too ill-conditioned for the requested precision."""

    def __init__(self, message, condition=None, precision=None):
        super().__init__(message)
        self.condition = condition
        self.precision = precision


@dataclass(frozen=True)
class Weight:
    """Polynomial weight ``tau^p (T - tau)^q`` on the reversed time axis.

    ``q > 0`` makes f vanish at t = 0, keeping the controlled problem
    compatible with the initial data; ``p > 0`` makes f vanish at t = T.
    """

    p: int = 0
    q: int = 0

    def __post_init__(self):
        if int(self.p) != self.p or int(self.q) != self.q or self.p < 0 or self.q < 0:
            raise ValueError(f"weight exponents must be non-negative integers, got {self.p}, {self.q}")

    @property
    def trivial(self) -> bool:
        return self.p == 0 and self.q == 0

    def __call__(self, tau, T):
        tau = np.asarray(tau, dtype=float)
        return tau ** self.p * (T - tau) ** self.q

    def derivative(self, tau, T):
        tau = np.asarray(tau, dtype=float)
        p, q = self.p, self.q
        d = np.zeros_like(tau)
        if p:
            d = d + p * tau ** (p - 1) * (T - tau) ** q
        if q:
            d = d - q * tau ** p * (T - tau) ** (q - 1)
        return d


# Weight used by the verification pipeline: smooth at both ends of [0, T].
VERIFY_WEIGHT = Weight(8, 4)


def exponential_moment(s, T, weight: Weight | None = None, dps: int | None = None):
    """``int_0^T tau^p (T - tau)^q exp(s tau) dtau``.

    Returns a float when ``dps`` is None, otherwise an mpmath number
    computed at ``dps`` digits.
    """
    weight = weight or Weight()
    if dps is None:
        if weight.trivial:
            s = float(s)
            if s == 0.0:
                return float(T)
            return math.expm1(s * T) / s
        return float(exponential_moment(s, T, weight, dps=30))
    with mp.workdps(dps):
        s = mp.mpf(s)
        T = mp.mpf(T)
        p, q = weight.p, weight.q
        if weight.trivial:
            return T if s == 0 else mp.expm1(s * T) / s
        return T ** (p + q + 1) * mp.beta(p + 1, q + 1) * mp.hyp1f1(p + 1, p + q + 2, s * T)


def gram(lambdas, T: float, weight: Weight | None = None, dps: int | None = None):
    """Weighted Gram matrix of ``exp(lambda_j tau)`` on [0, T].

    Float ndarray when ``dps`` is None, mpmath matrix otherwise.
    """
    lambdas = [float(x) for x in np.asarray(lambdas, dtype=float).reshape(-1)]
    if T <= 0:
        raise ValueError("T must be positive")
    if any(x >= 0 for x in lambdas):
        raise ValueError("all exponents must be negative")
    N = len(lambdas)
    if dps is None:
        G = np.empty((N, N))
        for i in range(N):
            for j in range(i, N):
                G[i, j] = G[j, i] = exponential_moment(lambdas[i] + lambdas[j], T, weight)
        return G
    with mp.workdps(dps):
        G = mp.matrix(N, N)
        for i in range(N):
            for j in range(i, N):
                G[i, j] = G[j, i] = exponential_moment(
                    mp.mpf(lambdas[i]) + mp.mpf(lambdas[j]), T, weight, dps)
        return G


def resolve_precision(precision: str | None, N: int, weight: Weight | None) -> str:
    """Map ``auto`` to ``double`` or ``extended``."""
    precision = (precision or "auto").lower()
    if precision not in ("auto", "double", "extended"):
        raise ValueError(f"unknown precision mode {precision!r}")
    if precision == "auto":
        trivial = weight is None or weight.trivial
        return "double" if trivial and N <= DOUBLE_MAX_N else "extended"
    return precision


@dataclass(frozen=True)
class GramSolve:
    """Solution of ``G X = R`` plus the conditioning diagnostics."""

    x: np.ndarray
    condition: float
    precision: str
    x_mp: object = None


def _cond1(A, Ainv) -> float:
    """1-norm condition number from a matrix and its inverse (lists or arrays)."""
    n = len(A)
    a = max(sum(abs(A[i][j]) for i in range(n)) for j in range(n))
    b = max(sum(abs(Ainv[i][j]) for i in range(n)) for j in range(n))
    return float(a * b)


def spd_solve(lambdas, T, rhs, weight: Weight | None = None, precision: str = "double",
              dps: int = DEFAULT_DPS, cap: float | None = None) -> GramSolve:
    """Solve the Gram system by Cholesky with iterative refinement.

    ``rhs`` may be a vector or a matrix of right-hand sides.  The Gram matrix
    is Jacobi-scaled first and the reported condition is the 1-norm condition
    number of the scaled matrix, computed from its Cholesky factor.
    :class:`ConditioningError` is raised when it exceeds ``cap`` (1e14 in
    double, ``10^(dps/2)`` in extended mode) or the factorization breaks down.
    """
    rhs = np.asarray(rhs, dtype=float)
    vec = rhs.ndim == 1
    R = rhs.reshape(len(rhs), -1)
    if precision == "double":
        cap = DOUBLE_CONDITION_CAP if cap is None else cap
        G = gram(lambdas, T, weight)
        s = 1.0 / np.sqrt(np.diag(G))
        Gs = G * np.outer(s, s)
        try:
            L = np.linalg.cholesky(Gs)
        except np.linalg.LinAlgError:
            raise ConditioningError("Gram matrix is not numerically positive definite in "
                                    "double precision; reduce N or use extended precision",
                                    math.inf, precision) from None
        inv = sla.cho_solve((L, True), np.eye(len(s)))
        cond = _cond1(Gs, inv)
        if not cond <= cap:
            raise ConditioningError(f"Gram condition estimate {cond:.3e} exceeds the double "
                                    f"precision cap {cap:.1e}; reduce N, increase T or use "
                                    "extended precision", cond, precision)
        factor = (L, True)
        Rs = R * s[:, None]
        y = sla.cho_solve(factor, Rs)
        Gl = Gs.astype(np.longdouble)
        for _ in range(3):
            res = (Rs.astype(np.longdouble) - Gl @ y.astype(np.longdouble)).astype(float)
            y = y + sla.cho_solve(factor, res)
        x = y * s[:, None]
        return GramSolve(x[:, 0] if vec else x, cond, precision)
    if precision != "extended":
        raise ValueError(f"unknown precision mode {precision!r}")
    cap = 10.0 ** (dps / 2) if cap is None else cap
    with mp.workdps(dps):
        G = gram(lambdas, T, weight, dps)
        N = G.rows
        s = [1 / mp.sqrt(G[i, i]) for i in range(N)]
        Gs = mp.matrix(N, N)
        for i in range(N):
            for j in range(N):
                Gs[i, j] = G[i, j] * s[i] * s[j]
        try:
            L = mp.cholesky(Gs)
        except (ValueError, ZeroDivisionError):
            raise ConditioningError(f"Gram matrix is not positive definite at {dps} digits; "
                                    "the horizon is too short for this N, reduce N or "
                                    "increase T", math.inf, precision) from None
        inv = [_mp_chol_solve(L, mp.matrix([1 if i == k else 0 for i in range(N)]))
               for k in range(N)]
        cond = _cond1([[Gs[i, j] for j in range(N)] for i in range(N)],
                      [[inv[j][i] for j in range(N)] for i in range(N)])
        if not cond <= cap:
            raise ConditioningError(f"Gram condition estimate {cond:.3e} exceeds the "
                                    f"{dps}-digit cap {cap:.1e}; reduce N or increase T",
                                    cond, precision)
        cols = []
        for k in range(R.shape[1]):
            b = mp.matrix([R[i, k] * s[i] for i in range(N)])
            y = _mp_chol_solve(L, b)
            cols.append([y[i] * s[i] for i in range(N)])
        x_mp = [[cols[k][i] for k in range(len(cols))] for i in range(N)]
        x = np.array([[float(v) for v in row] for row in x_mp])
        if vec:
            x = x[:, 0]
            x_mp = [row[0] for row in x_mp]
        return GramSolve(x, cond, precision, x_mp)


def _mp_chol_solve(L, b):
    N = L.rows
    y = mp.matrix(N, 1)
    for i in range(N):
        y[i] = (b[i] - mp.fsum(L[i, k] * y[k] for k in range(i))) / L[i, i]
    x = mp.matrix(N, 1)
    for i in reversed(range(N)):
        x[i] = (y[i] - mp.fsum(L[k, i] * x[k] for k in range(i + 1, N))) / L[i, i]
    return x


@dataclass(frozen=True, eq=False)
class MomentSystem:
    """Targets ``m_n`` of the moment problem for the first N modes."""

    case: BoundaryCase
    T: float
    lambdas: np.ndarray
    b: np.ndarray
    targets: np.ndarray
    a: np.ndarray

    @property
    def N(self) -> int:
        return len(self.lambdas)


def assemble(case, a: SpectralCoeffs, T: float, b=None) -> MomentSystem:
    """Moment targets ``m_n = (a_n / b_n) exp(lambda_n T)``.

    ``b`` overrides the input coefficients from the spectrum module.
    """
    case = BoundaryCase.parse(case)
    if T <= 0:
        raise ValueError("T must be positive")
    if a.case is not case:
        raise ValueError(f"coefficients are for {a.case.value}, system is {case.value}")
    pairs = eigenpairs(case, a.N)
    lams = np.array([p.lam for p in pairs])
    b = np.array([p.b for p in pairs]) if b is None else np.asarray(b, dtype=float)
    targets = a.a / b * np.exp(lams * T)
    return MomentSystem(case, float(T), lams, b, targets, a.a.copy())


@dataclass(frozen=True, eq=False)
class ControlSignal:
    """Boundary control on [0, T].

    With ``coeffs`` present, ``f(T - tau) = weight(tau) * sum_j c_j
    exp(lambda_j tau)`` is evaluated exactly.  Without them the control is
    the cubic spline through ``samples`` on the uniform grid.
    """

    T: float
    lambdas: np.ndarray | None
    coeffs: np.ndarray | None
    samples: np.ndarray
    sample_n: int
    weight: Weight = field(default_factory=Weight)
    condition: float | None = None
    residuals: np.ndarray | None = None
    precision: str | None = None

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.sample_n + 1)

    @property
    def has_coeffs(self) -> bool:
        return self.coeffs is not None

    @classmethod
    def from_coeffs(cls, T, lambdas, coeffs, weight: Weight | None = None, sample_n=DEFAULT_SAMPLE_N,
                    condition=None, residuals=None, precision=None) -> "ControlSignal":
        lambdas = np.asarray(lambdas, dtype=float).copy()
        coeffs = np.asarray(coeffs, dtype=float).copy()
        proto = cls(float(T), lambdas, coeffs, np.zeros(sample_n + 1), sample_n,
                    weight or Weight(), condition, residuals, precision)
        samples = proto(proto.times)
        return cls(float(T), lambdas, coeffs, samples, sample_n, weight or Weight(),
                   condition, residuals, precision)

    @classmethod
    def from_samples(cls, T, samples) -> "ControlSignal":
        samples = np.asarray(samples, dtype=float).copy()
        if samples.ndim != 1 or samples.size < 4:
            raise ValueError("need at least 4 uniform samples")
        return cls(float(T), None, None, samples, samples.size - 1)

    @classmethod
    def from_function(cls, T, fun, sample_n=DEFAULT_SAMPLE_N) -> "ControlSignal":
        t = np.linspace(0.0, T, sample_n + 1)
        return cls.from_samples(T, np.array([fun(s) for s in t], dtype=float))

    @classmethod
    def zero(cls, T, sample_n=DEFAULT_SAMPLE_N) -> "ControlSignal":
        return cls.from_coeffs(T, [], [], sample_n=sample_n)

    def _spline(self) -> CubicSpline:
        sp = self.__dict__.get("_spline_cache")
        if sp is None:
            sp = CubicSpline(self.times, self.samples)
            object.__setattr__(self, "_spline_cache", sp)
        return sp

    def reversed(self, tau):
        """``f(T - tau)``."""
        tau = np.asarray(tau, dtype=float)
        if not self.has_coeffs:
            return self._spline()(self.T - tau)
        if self.coeffs.size == 0:
            return np.zeros_like(tau)
        S = np.exp(np.multiply.outer(tau, self.lambdas)) @ self.coeffs
        return self.weight(tau, self.T) * S

    def __call__(self, t):
        return self.reversed(self.T - np.asarray(t, dtype=float))

    def derivative(self, t):
        """``df/dt``."""
        t = np.asarray(t, dtype=float)
        if not self.has_coeffs:
            return self._spline()(t, 1)
        if self.coeffs.size == 0:
            return np.zeros_like(t)
        tau = self.T - t
        E = np.exp(np.multiply.outer(tau, self.lambdas))
        S = E @ self.coeffs
        dS = E @ (self.coeffs * self.lambdas)
        return -(self.weight.derivative(tau, self.T) * S + self.weight(tau, self.T) * dS)

    def response_integrals(self, lams, T=None) -> np.ndarray:
        """``int_0^T exp(lambda (T - s)) f(s) ds`` for each ``lambda``.

        Exponential sums are integrated in closed form at 40 digits; sampled
        signals by adaptive quadrature of the spline.
        """
        T = self.T if T is None else T
        if abs(T - self.T) > 1e-14 * self.T:
            raise ValueError(f"signal horizon {self.T} does not match T={T}")
        lams = np.asarray(lams, dtype=float)
        if self.has_coeffs:
            out = []
            with mp.workdps(40):
                for lam in lams:
                    acc = mp.fsum(mp.mpf(c) * exponential_moment(mp.mpf(lam) + mp.mpf(lj), T,
                                                                 self.weight, 40)
                                  for lj, c in zip(self.lambdas, self.coeffs))
                    out.append(float(acc))
            return np.array(out)
        sp = self._spline()
        return np.array([quad(lambda tau, l=lam: math.exp(l * tau) * float(sp(T - tau)), 0.0, T,
                              epsabs=1e-13, epsrel=1e-12, limit=400)[0] for lam in lams])

    def l2_norm(self) -> float:
        if self.has_coeffs:
            if self.coeffs.size == 0:
                return 0.0
            w2 = Weight(2 * self.weight.p, 2 * self.weight.q)
            with mp.workdps(40):
                acc = mp.fsum(mp.mpf(ci) * mp.mpf(cj) * exponential_moment(
                    mp.mpf(li) + mp.mpf(lj), self.T, w2, 40)
                    for li, ci in zip(self.lambdas, self.coeffs)
                    for lj, cj in zip(self.lambdas, self.coeffs))
                return float(mp.sqrt(max(acc, 0)))
        sp = self._spline()
        return math.sqrt(quad(lambda t: float(sp(t)) ** 2, 0.0, self.T, limit=400)[0])

    def descriptor(self) -> dict:
        return {
            "T": self.T,
            "lambdas": None if self.lambdas is None else [float(x) for x in self.lambdas],
            "coeffs": None if self.coeffs is None else [float(x) for x in self.coeffs],
            "weight": {"p": self.weight.p, "q": self.weight.q},
            "precision": self.precision,
            "condition": self.condition,
            "residuals": None if self.residuals is None else [float(x) for x in self.residuals],
            "sample_n": self.sample_n,
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.descriptor(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "f"])
            for t, f in zip(self.times, self.samples):
                w.writerow([f"{t:.17g}", f"{f:.17g}"])


def _exact_residuals(lambdas, coeffs, T, weight, targets, dps=40):
    """``G c - m`` evaluated at ``dps`` digits for the stored coefficients."""
    with mp.workdps(dps):
        out = []
        for ln, mn in zip(lambdas, targets):
            acc = mp.fsum(mp.mpf(c) * exponential_moment(mp.mpf(ln) + mp.mpf(lj), T, weight, dps)
                          for lj, c in zip(lambdas, coeffs))
            out.append(float(acc - mp.mpf(mn)))
        return np.array(out)


def solve_min_norm(sys: MomentSystem, weight: Weight | None = None, precision: str | None = None,
                   dps: int = DEFAULT_DPS, sample_n: int = DEFAULT_SAMPLE_N,
                   max_N: int = 40) -> ControlSignal:
    """Minimum-norm control in the (weighted) exponential span.

    Residuals are ``int_0^T f(T - tau) exp(lambda_n tau) dtau - m_n`` for the
    coefficients as stored in double precision.
    """
    weight = weight or Weight()
    if sys.N > max_N:
        raise ValueError(f"N={sys.N} exceeds the cap {max_N}")
    precision = resolve_precision(precision, sys.N, weight)
    if not np.any(sys.targets):
        # no solve needed; the condition is left unknown
        return ControlSignal.from_coeffs(sys.T, sys.lambdas, np.zeros(sys.N), weight, sample_n,
                                         None, np.zeros(sys.N), precision)
    sol = spd_solve(sys.lambdas, sys.T, sys.targets, weight, precision, dps)
    res = _exact_residuals(sys.lambdas, sol.x, sys.T, weight, sys.targets)
    return ControlSignal.from_coeffs(sys.T, sys.lambdas, sol.x, weight, sample_n,
                                     sol.condition, res, precision)


def quadrature_residuals(f: ControlSignal, sys: MomentSystem) -> np.ndarray:
    """Moment residuals by adaptive quadrature, independent of the closed forms."""
    T = sys.T
    out = []
    for lam, m in zip(sys.lambdas, sys.targets):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", IntegrationWarning)
            val = quad(lambda tau, l=lam: float(f.reversed(tau)) * math.exp(l * tau), 0.0, T,
                       epsabs=1e-14, epsrel=1e-13, limit=500)[0]
        out.append(val - m)
    return np.array(out)


@dataclass(frozen=True)
class Biorthogonal:
    """``theta_j(tau) = weight(tau) * sum_n coeffs[n] exp(lambda_n tau)``."""

    j: int
    lambdas: np.ndarray
    coeffs: np.ndarray
    residual: float
    degraded: bool
    l2_norm: float
    condition: float
    precision: str

    def __call__(self, tau, T, weight: Weight | None = None):
        tau = np.asarray(tau, dtype=float)
        w = (weight or Weight())(tau, T)
        return w * (np.exp(np.multiply.outer(tau, self.lambdas)) @ self.coeffs)


def biorthogonal_family(lambdas, T, weight: Weight | None = None, precision: str = "double",
                        dps: int = DEFAULT_DPS, degraded_at: float = 1e10) -> list[Biorthogonal]:
    """All ``theta_j``, j = 1..N, from one factorization.

    The residual ``max_n |int theta_j exp(lambda_n tau) - delta_jn|`` is
    evaluated in high precision for the coefficients as returned: double
    coefficients in double mode, the unrounded ``dps``-digit coefficients in
    extended mode.  ``degraded`` is set when the condition estimate exceeds
    ``degraded_at``.
    """
    lambdas = np.asarray(lambdas, dtype=float)
    N = lambdas.size
    weight = weight or Weight()
    sol = spd_solve(lambdas, T, np.eye(N), weight, precision, dps, cap=math.inf)
    rdps = max(dps, 40) + 20
    with mp.workdps(rdps):
        G = gram(lambdas, T, weight, rdps)
        if sol.x_mp is not None:
            X = mp.matrix(sol.x_mp)
        else:
            X = mp.matrix(sol.x.tolist())
        GX = G * X
        out = []
        for j in range(N):
            r = max(abs(GX[n, j] - (1 if n == j else 0)) for n in range(N))
            nrm = mp.sqrt(abs(X[j, j]))  # |theta_j|^2 = (G^-1)_jj in L2(rho^-1)
            out.append(Biorthogonal(j + 1, lambdas.copy(), sol.x[:, j].copy(), float(r),
                                    sol.condition > degraded_at, float(nrm), sol.condition,
                                    precision))
    return out


def biorthogonal(lambdas, T, j: int, weight: Weight | None = None, precision: str = "double",
                 dps: int = DEFAULT_DPS) -> Biorthogonal:
    N = len(lambdas)
    if not 1 <= j <= N:
        raise ValueError(f"j must lie in 1..{N}")
    return biorthogonal_family(lambdas, T, weight, precision, dps)[j - 1]


def fit_growth(norms, j_max: int | None = None) -> tuple[float, float, float]:
    """Fit ``log |theta_j| = log M1 + M2 j``; returns (M1, M2, r_squared).

    The last members of a truncated family carry fewer constraints and come
    out artificially small, so ``j_max`` (default N/2) limits the fit.
    """
    norms = np.asarray(norms, dtype=float)
    norms = norms[: (j_max or max(2, norms.size // 2))]
    j = np.arange(1, norms.size + 1, dtype=float)
    y = np.log(norms)
    A = np.column_stack([np.ones_like(j), j])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    pred = A @ coef
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(np.exp(coef[0])), float(coef[1]), r2


@dataclass(frozen=True)
class DecayFit:
    K: float
    delta: float
    ok: bool
    note: str = ""


def decay_check(sys: MomentSystem, zero_rel: float = 1e-12) -> DecayFit:
    """Least-squares fit of ``log |m_n| = log K - delta n^2``.

    Targets below ``zero_rel * max |m|`` count as zero and are skipped.
    """
    if sys.N < 4:
        raise ValueError("decay_check needs N >= 4")
    m = np.abs(sys.targets)
    top = m.max()
    if top == 0.0:
        return DecayFit(0.0, 0.0, True, "all targets vanish")
    keep = m > zero_rel * top
    n = np.arange(1, sys.N + 1, dtype=float)[keep]
    if keep.sum() < 2:
        return DecayFit(float(top), 0.0, True, "degenerate fit: fewer than two nonzero targets")
    A = np.column_stack([np.ones_like(n), -n ** 2])
    coef, *_ = np.linalg.lstsq(A, np.log(m[keep]), rcond=None)
    delta = float(coef[1])
    note = "" if keep.all() else f"skipped {int((~keep).sum())} zero targets"
    return DecayFit(float(np.exp(coef[0])), delta, delta > 0, note)
