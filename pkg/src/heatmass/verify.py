"""Closing the loop: duality identity, observability estimates, null control.

The duality identity pairs the controlled forward solution with a free
backward solution ``y~(t) = T_{T-t} y~^T``:

    <y(T), y~^T> = <y0, T_T y~^T> + s * int_0^T f(t) w(t) dt

with ``w = v~(t, 1)``, ``s = +1`` for Neumann control and ``w = v~'(t, 1)``,
``s = -1`` for Dirichlet control.  The left side uses the modal Duhamel
formula (input coefficients and sign convention); the right side uses the
closed-form boundary traces of the eigenfunctions and an independent
quadrature, so agreement pins every constant in the repo.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.integrate import IntegrationWarning, quad, simpson

from . import moment as mom
from .pde import FdConfig, observe_boundary, solve_pointmass
from .spectrum import BoundaryCase, boundary_trace, eigenpairs
from .state import (
    DUHAMEL_SIGN,
    HybridState,
    SpectralCoeffs,
    evolve_controlled,
    evolve_free,
    h_norm,
    inner_product,
    project,
    reconstruct,
    sample_eigenfunction,
)

__all__ = [
    "DualityResult",
    "NullControlReport",
    "ObservabilityEstimate",
    "VerificationError",
    "TRACE_SIGN",
    "MODAL_TOL",
    "FD_TOL",
    "DUALITY_TOL",
    "duality_gap",
    "calibrate_sign",
    "null_control_verify",
    "observability_constant",
    "random_polynomial_control",
]

MODAL_TOL = 1e-6
FD_TOL = 1e-3
DUALITY_TOL = 1e-6
TRACE_SIGN = {BoundaryCase.NEUMANN: 1.0, BoundaryCase.DIRICHLET: -1.0}
X_NOTE = ("Dirichlet-controlled solutions live in a space of distributions and are "
          "defined by transposition; the final state is measured here in the H-norm "
          "of the grid solution, which is a classical function.")


class VerificationError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class DualityResult:
    lhs: float
    rhs: float
    gap: float


def _trace_series(pairs, beta, T):
    """Closed-form ``t -> sum beta_n exp(lambda_n (T - t)) trace_n``."""
    lam = np.array([p.lam for p in pairs])
    tr = np.array([boundary_trace(p) for p in pairs]) * np.asarray(beta)

    def w(t):
        return float(np.exp(lam * (T - t)) @ tr)
    return w


def duality_gap(case, y0: HybridState, f, yT_test: HybridState, T: float, N: int = 10,
                b_sign: float = 1.0) -> DualityResult:
    """Both sides of the duality identity and ``|lhs - rhs| / (1 + |lhs|)``.

    ``f`` is a :class:`heatmass.moment.ControlSignal` or None.  ``b_sign``
    multiplies the input coefficients on the left side (a debugging hook:
    -1 must break the identity).
    """
    case = BoundaryCase.parse(case)
    pairs = eigenpairs(case, N)
    cT = project(yT_test, case, N)
    beta = cT.a / cT.norms_sq
    # left: modal Duhamel solution paired with the terminal data
    a0 = project(y0, case, N)
    b = b_sign * np.array([p.b for p in pairs])
    aT = evolve_controlled(a0, f, T, b=b)
    lhs = float(beta @ aT.a)
    # right: grid pairing with the free backward solution, plus the trace term
    back = reconstruct(evolve_free(cT, T), y0.mesh_n)
    rhs = inner_product(y0, back)
    if f is not None:
        w = _trace_series(pairs, beta, T)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", IntegrationWarning)
            integral = quad(lambda t: float(f(t)) * w(t), 0.0, T, epsabs=1e-13, epsrel=1e-12,
                            limit=400)[0]
        rhs += TRACE_SIGN[case] * integral
    return DualityResult(lhs, rhs, abs(lhs - rhs) / (1 + abs(lhs)))


def random_polynomial_control(T: float, rng: np.random.Generator, degree: int = 3,
                              sample_n: int = 400) -> mom.ControlSignal:
    """Random polynomial of the given degree on [0, T], stored as samples.

    The cubic spline through the samples reproduces cubics exactly.
    """
    coef = rng.normal(size=degree + 1)
    return mom.ControlSignal.from_function(T, lambda t: np.polyval(coef, t / T), sample_n)


def calibrate_sign(case, mesh_n: int = 128, T: float = 0.2, n_modes: int = 3) -> dict:
    """Fix the Duhamel sign with a finite-difference smoke test.

    Zero initial data is driven by ``f(t) = t^2 (T - t)``.  The pairings of
    the FD final state with the first modes are compared with
    ``+-b_n int exp(lambda_n (T - s)) f(s) ds``; the better sign wins and
    ``ratio`` (FD over modal magnitude) checks the constant factor of b_n.
    """
    case = BoundaryCase.parse(case)
    f = mom.ControlSignal.from_function(T, lambda t: t * t * (T - t), 400)
    traj = solve_pointmass(case, HybridState.zeros(mesh_n), f,
                           FdConfig(mesh_n, min(1e-3, T / 50), "radau", T, 4), record_every=10 ** 9)
    fd = project(traj.final, case, n_modes).a
    pairs = eigenpairs(case, n_modes)
    forced = np.array([p.b for p in pairs]) * f.response_integrals([p.lam for p in pairs], T)
    err = {s: float(np.max(np.abs(fd - s * forced))) for s in (1.0, -1.0)}
    sign = min(err, key=err.get)
    return {"case": case.value, "sign": sign, "err_plus": err[1.0], "err_minus": err[-1.0],
            "ratio": float(np.max(np.abs(fd)) / np.max(np.abs(forced)))}


@dataclass
class NullControlReport:
    case: str
    T: float
    N: int
    initial_norm: float
    final_norm_fd: float
    final_modal: list
    moment_residuals: list
    gram_condition: float | None
    control_norm: float
    passed: bool
    duality_gap: float | None = None
    duhamel_sign: float = -1.0
    weight: dict = field(default_factory=dict)
    precision: str = ""
    seed: int = 0
    mesh_n: int = 0
    dt: float = 0.0
    scheme: str = ""
    order: int = 4
    tolerances: dict = field(default_factory=dict)
    note: str = X_NOTE

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pass"] = d.pop("passed")
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())


def null_control_verify(case, y0: HybridState, T: float, N: int, cfg: FdConfig | None = None,
                        weight: mom.Weight | None = mom.VERIFY_WEIGHT, precision: str = "auto",
                        seed: int = 0, modal_tol: float = MODAL_TOL, fd_tol: float = FD_TOL,
                        duality_tol: float = DUALITY_TOL, b_sign: float = 1.0) -> NullControlReport:
    """Synthesize the control for ``y0`` and check it with the FD solver.

    Stages: project, assemble, solve, simulate, duality.  Failures are
    re-raised as :class:`VerificationError` tagged with the stage.  The
    duality check pairs the spectral final state with seeded random terminal
    data in the first N modes.
    """
    case = BoundaryCase.parse(case)
    if T <= 0 or N < 1:
        raise ValueError("need T > 0 and N >= 1")
    cfg = (cfg or FdConfig(mesh_n=y0.mesh_n, T=T)).with_T(T)
    weight = weight or mom.Weight()

    def stage(name, fn):
        try:
            return fn()
        except Exception as exc:
            raise VerificationError(name, exc) from exc

    a0 = stage("project", lambda: project(y0, case, N))
    b = b_sign * np.array([p.b for p in a0.pairs()])
    sysm = stage("assemble", lambda: mom.assemble(case, a0, T, b=b))
    f = stage("solve", lambda: mom.solve_min_norm(sysm, weight=weight, precision=precision))
    traj = stage("simulate", lambda: solve_pointmass(case, y0, f, cfg, record_every=10 ** 9))
    yT = traj.final
    final_modal = project(yT, case, N).a
    rng = np.random.default_rng(seed)
    pairs = a0.pairs()
    test = SpectralCoeffs(rng.normal(size=N) * np.array([p.norm_sq for p in pairs]), case)
    yT_test = reconstruct(test, y0.mesh_n)
    dual = stage("duality", lambda: duality_gap(case, y0, f, yT_test, T, N, b_sign))
    n0 = h_norm(y0)
    nT = h_norm(yT)
    ok = (nT <= fd_tol * n0 and float(np.max(np.abs(final_modal))) <= modal_tol * n0
          and dual.gap <= duality_tol)
    return NullControlReport(
        case=case.value, T=float(T), N=int(N), initial_norm=n0, final_norm_fd=nT,
        final_modal=[float(x) for x in final_modal],
        moment_residuals=[float(x) for x in f.residuals],
        gram_condition=None if f.condition is None else float(f.condition), control_norm=f.l2_norm(), passed=bool(ok),
        duality_gap=dual.gap, duhamel_sign=DUHAMEL_SIGN[case],
        weight={"p": weight.p, "q": weight.q}, precision=f.precision or "", seed=int(seed),
        mesh_n=cfg.mesh_n, dt=cfg.T / cfg.steps, scheme=cfg.scheme, order=cfg.order,
        tolerances={"modal": modal_tol, "fd": fd_tol, "duality": duality_tol},
    )


@dataclass(frozen=True)
class ObservabilityEstimate:
    C: float
    samples: int
    C_sup: float
    norm: str
    C_fd: float | None = None


def _trace_gram(pairs, T):
    lam = np.array([p.lam for p in pairs])
    tr = np.array([boundary_trace(p) for p in pairs])
    s = lam[:, None] + lam[None, :]
    return np.outer(tr, tr) * np.expm1(s * T) / s


def observability_constant(case, N: int, T: float, mesh_n: int | None = None, samples: int = 2000,
                           seed: int = 0) -> ObservabilityEstimate:
    """Empirical constant in ``|boundary trace|_L2(0,T) <= C |y~^T|``.

    Terminal data are random unit vectors, isotropic in the H-norm (Neumann)
    or the W-norm (Dirichlet), supported on the first k modes; ``samples``
    of them are drawn for every k <= N.  The trace is ``v~(t, 1)``
    or ``v~'(t, 1)``; its L2 norm is a quadratic form in the mode weights,
    evaluated in closed form.  ``C_sup`` is the exact supremum over the span.
    With ``mesh_n`` set, the trace form is also assembled from FD free runs
    of each eigenfunction, giving ``C_fd`` for the same samples.
    """
    case = BoundaryCase.parse(case)
    if N < 1:
        raise ValueError("N must be >= 1")
    pairs = eigenpairs(case, N)
    ns = np.array([p.norm_sq for p in pairs])
    if case is BoundaryCase.DIRICHLET:
        wts, label = ns * np.array([-p.lam for p in pairs]), "W"
    else:
        wts, label = ns, "H"
    Q = _trace_gram(pairs, T)
    # isotropic unit vectors on the first k modes for every k <= N; the sets
    # are nested in N so the estimate cannot decrease with N
    blocks = []
    for k in range(1, N + 1):
        g = np.random.default_rng([seed, k]).normal(size=(samples, k))
        g /= np.linalg.norm(g, axis=1)[:, None]
        blk = np.zeros((samples, N))
        blk[:, :k] = g / np.sqrt(wts[:k])
        blocks.append(blk)
    B = np.vstack(blocks)

    def best(Qm):
        return float(np.sqrt(max(np.max(np.einsum("ij,jk,ik->i", B, Qm, B)), 0.0)))

    D = 1.0 / np.sqrt(wts)
    C_sup = float(np.sqrt(max(np.linalg.eigvalsh(D[:, None] * Q * D[None, :]).max(), 0.0)))
    C_fd = None
    if mesh_n is not None:
        cfg = FdConfig(mesh_n, min(1e-3, T / 100), "radau", T, 4)
        series = []
        for p in pairs:
            tr = solve_pointmass(case, sample_eigenfunction(p, mesh_n), None, cfg)
            series.append(observe_boundary(tr, case))
        S = np.array(series)
        t = tr.times
        Qfd = np.array([[simpson(S[i] * S[j], x=t) for j in range(N)] for i in range(N)])
        C_fd = best(Qfd)
    return ObservabilityEstimate(best(Q), B.shape[0], C_sup, label, C_fd)

