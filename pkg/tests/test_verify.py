import json
import math

import numpy as np
import pytest

from heatmass import spectrum as S
from heatmass.moment import ControlSignal
from heatmass.pde import FdConfig
from heatmass.state import DUHAMEL_SIGN, HybridState, sample_eigenfunction, state_from_modes
from heatmass.verify import (
    VerificationError,
    calibrate_sign,
    duality_gap,
    null_control_verify,
    observability_constant,
    random_polynomial_control,
)

from conftest import STANDARD_MODES


def phi(case, n, mesh_n=512):
    return sample_eigenfunction(S.eigenpair(case, n), mesh_n)


def test_calibrated_sign_matches_table(case):
    cal = calibrate_sign(case)
    assert cal["sign"] == DUHAMEL_SIGN[S.BoundaryCase.parse(case)]
    # the chosen sign fits the FD run far better than the opposite one
    assert cal["err_minus"] < 1e-3 * cal["err_plus"]


def test_duality_free_eigen(case):
    T = 0.3
    p = S.eigenpair(case, 2)
    d = duality_gap(case, phi(case, 2), None, phi(case, 2), T)
    assert d.lhs == pytest.approx(math.exp(p.lam * T) * p.norm_sq, rel=1e-9)
    assert d.gap <= 1e-9
    d = duality_gap(case, phi(case, 2), None, phi(case, 3), T)
    assert abs(d.lhs) < 1e-10 and abs(d.rhs) < 1e-8


def test_duality_random_control(case):
    rng = np.random.default_rng(11)
    for _ in range(3):
        f = random_polynomial_control(0.5, rng)
        d = duality_gap(case, phi(case, 1), f, phi(case, 1), 0.5)
        assert d.gap <= 1e-6


def test_duality_flip_breaks(case):
    f = random_polynomial_control(0.5, np.random.default_rng(2))
    d = duality_gap(case, phi(case, 1), f, phi(case, 1), 0.5, b_sign=-1.0)
    assert d.gap > 1e-4


def test_verify_zero_initial(case):
    rep = null_control_verify(case, HybridState.zeros(64), 0.5, 6, FdConfig(mesh_n=64))
    assert rep.passed and rep.final_norm_fd == 0 and rep.gram_condition is None


def test_verify_standard(case):
    y0 = state_from_modes(case, STANDARD_MODES, 256)
    rep = null_control_verify(case, y0, 0.5, 10)
    assert rep.passed, rep.to_json()
    assert max(abs(x) for x in rep.final_modal) <= 1e-6 * rep.initial_norm
    assert rep.final_norm_fd <= 1e-3 * rep.initial_norm


def test_verify_flip_fails():
    y0 = state_from_modes("dirichlet", STANDARD_MODES, 128)
    rep = null_control_verify("dirichlet", y0, 0.5, 6, b_sign=-1.0)
    assert not rep.passed


def test_verify_report_deterministic(tmp_path):
    y0 = state_from_modes("neumann", STANDARD_MODES, 64)
    a = null_control_verify("neumann", y0, 0.5, 4, seed=3)
    b = null_control_verify("neumann", y0, 0.5, 4, seed=3)
    assert a.to_json() == b.to_json()
    a.write(tmp_path / "r.json")
    d = json.loads((tmp_path / "r.json").read_text())
    assert "pass" in d and "passed" not in d


def test_verify_stage_error():
    y0 = state_from_modes("dirichlet", STANDARD_MODES, 64)
    with pytest.raises(VerificationError) as ei:
        null_control_verify("dirichlet", y0, 0.01, 10, weight=None, precision="double")
    assert ei.value.stage == "solve"


def test_observability_single_mode(case):
    T = 0.5
    p = S.eigenpair(case, 1)
    wt = p.norm_sq * (-p.lam if case == "dirichlet" else 1.0)
    expect = abs(S.boundary_trace(p)) / math.sqrt(wt) * math.sqrt((1 - math.exp(2 * p.lam * T)) / (-2 * p.lam))
    est = observability_constant(case, 1, T, samples=10)
    assert est.C == pytest.approx(expect, rel=1e-12)
    assert est.C_sup == pytest.approx(expect, rel=1e-12)


def test_observability_stable_and_monotone(case):
    a = observability_constant(case, 8, 0.5, samples=1000).C
    b = observability_constant(case, 8, 0.5, samples=2000).C
    assert abs(a - b) <= 0.1 * b
    cs = [observability_constant(case, N, 0.5, samples=500).C for N in (2, 4, 6, 8)]
    assert all(math.isfinite(c) for c in cs)
    assert all(y >= x for x, y in zip(cs, cs[1:]))


def test_observability_fd_agrees(case):
    est = observability_constant(case, 4, 0.5, mesh_n=128, samples=300)
    assert est.C_fd == pytest.approx(est.C, rel=0.02)


def test_control_signal_zero_duality(case):
    f = ControlSignal.zero(0.4)
    d0 = duality_gap(case, phi(case, 1), None, phi(case, 1), 0.4)
    d1 = duality_gap(case, phi(case, 1), f, phi(case, 1), 0.4)
    assert d0.lhs == d1.lhs and d1.rhs == pytest.approx(d0.rhs, abs=1e-15)
