import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as hst

from heatmass import spectrum as S
from heatmass.moment import ControlSignal, Weight
from heatmass.state import (
    BoundaryConditionWarning,
    HybridState,
    MeshMismatchError,
    SpectralCoeffs,
    evolve_controlled,
    evolve_free,
    h_norm,
    inner_product,
    project,
    reconstruct,
    sample_eigenfunction,
    state_from_modes,
    w_norm_sq,
)


def phi(case, n, mesh_n=256):
    return sample_eigenfunction(S.eigenpair(case, n), mesh_n)


def test_state_shape_validation():
    with pytest.raises(ValueError):
        HybridState(np.zeros(5), np.zeros(4), 0.0, 4)
    y = HybridState.zeros(16)
    assert y.u.size == 17 and y.dx == 1 / 16


def test_inner_product_basic():
    y = phi("dirichlet", 1)
    assert inner_product(y, y) > 0
    assert inner_product(HybridState.zeros(256), HybridState.zeros(256)) == 0
    with pytest.raises(MeshMismatchError):
        inner_product(phi("dirichlet", 1, 32), phi("dirichlet", 1, 64))


def test_orthogonality_and_unit_norm():
    assert abs(inner_product(phi("dirichlet", 1, 2000), phi("dirichlet", 2, 2000))) < 1e-8
    assert inner_product(phi("dirichlet", 2, 2000), phi("dirichlet", 2, 2000)) == pytest.approx(1, abs=1e-12)


def test_w_norm():
    assert w_norm_sq(HybridState.zeros(64), "dirichlet") == 0
    y = phi("dirichlet", 2, 2000)
    assert w_norm_sq(y, "dirichlet") == pytest.approx(math.pi ** 2, abs=1e-4)
    assert w_norm_sq(3.0 * y, "dirichlet") == pytest.approx(9 * w_norm_sq(y, "dirichlet"), rel=1e-12)


def test_w_norm_eigen_identity(case):
    # |phi_n|_W^2 = -lambda_n |phi_n|^2
    for n in (1, 3, 4):
        p = S.eigenpair(case, n)
        y = sample_eigenfunction(p, 4000)
        assert w_norm_sq(y, case) == pytest.approx(-p.lam * p.norm_sq, rel=1e-5)


def test_w_norm_warns_on_violation():
    y = HybridState(np.ones(17), np.ones(17), 1.0, 16)
    with pytest.warns(BoundaryConditionWarning):
        w_norm_sq(y, "dirichlet")
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        w_norm_sq(phi("neumann", 3, 64), "neumann")


def test_project_examples(case):
    p3 = S.eigenpair(case, 3)
    c = project(phi(case, 3, 4000), case, 5)
    expect = np.zeros(5)
    expect[2] = p3.norm_sq
    assert np.allclose(c.a, expect, atol=1e-8)
    assert not np.any(project(HybridState.zeros(64), case, 4).a)
    y = phi(case, 1, 4000) + 2.0 * phi(case, 2, 4000)
    c = project(y, case, 2)
    assert np.allclose(c.a, [S.eigenpair(case, 1).norm_sq, 2 * S.eigenpair(case, 2).norm_sq], atol=1e-8)


def test_reconstruct_roundtrip(case):
    y = phi(case, 2, 512)
    back = reconstruct(project(y, case, 4), 512)
    assert np.max(np.abs(back.u - y.u)) < 1e-6 and np.max(np.abs(back.v - y.v)) < 1e-6
    assert h_norm(reconstruct(SpectralCoeffs(np.zeros(3), case), 64)) == 0


def test_reconstruct_span_roundtrip_fine_mesh(case):
    y = state_from_modes(case, [(1, 0.3), (4, -1.0), (7, 0.6)], 4000)
    back = reconstruct(project(y, case, 8), 4000)
    assert h_norm(back - y) <= 1e-6


def test_parseval_tail_decreases(case):
    # smooth data satisfying the essential conditions
    y = HybridState.from_functions(lambda x: np.sin(np.pi * (1 + x) / 2),
                                   lambda x: np.cos(np.pi * x / 2), 1.0, 1000)
    errs = [h_norm(reconstruct(project(y, case, N), 1000) - y) for N in (2, 4, 8, 16)]
    assert all(b < a for a, b in zip(errs, errs[1:]))


def test_evolve_free():
    c = SpectralCoeffs(np.ones(4), "dirichlet")
    assert np.array_equal(evolve_free(c, 0.0).a, c.a)
    assert evolve_free(c, 0.1).a[1] == pytest.approx(0.3727, abs=1e-4)
    assert np.allclose(evolve_free(evolve_free(c, 0.2), 0.3).a, evolve_free(c, 0.5).a, rtol=1e-15)
    with pytest.raises(ValueError):
        evolve_free(c, -1)


def test_free_decay_bound(case):
    rng = np.random.default_rng(3)
    c = SpectralCoeffs(rng.normal(size=10), case)
    lam1 = S.eigenpair(case, 1).lam
    for t in (0.01, 0.1, 1.0):
        assert np.linalg.norm(evolve_free(c, t).a) <= math.exp(lam1 * t) * np.linalg.norm(c.a) * (1 + 1e-14)


def test_evolve_controlled_zero_is_free(case):
    c = SpectralCoeffs(np.arange(1.0, 7.0), case)
    assert np.array_equal(evolve_controlled(c, None, 0.7).a, evolve_free(c, 0.7).a)
    zero = ControlSignal.zero(0.7)
    assert np.array_equal(evolve_controlled(c, zero, 0.7).a, evolve_free(c, 0.7).a)


def test_evolve_controlled_linear(case):
    T = 0.4
    f1 = ControlSignal.from_coeffs(T, [-1.0, -3.0], [0.5, -0.2], Weight(1, 1))
    f2 = ControlSignal.from_coeffs(T, [-1.0, -3.0], [1.5, 0.7], Weight(1, 1))
    f12 = ControlSignal.from_coeffs(T, [-1.0, -3.0], [2.0, 0.5], Weight(1, 1))
    c = SpectralCoeffs(np.zeros(5), case)
    a = evolve_controlled(c, f1, T).a + evolve_controlled(c, f2, T).a
    assert np.allclose(evolve_controlled(c, f12, T).a, a, rtol=1e-12, atol=1e-15)


@settings(max_examples=25, deadline=None)
@given(c=hst.floats(min_value=-50, max_value=50, allow_nan=False))
def test_w_norm_homogeneity_property(c):
    y = phi("neumann", 2, 64)
    assert w_norm_sq(c * y, "neumann") == pytest.approx(c * c * w_norm_sq(y, "neumann"), rel=1e-12, abs=1e-300)


@settings(max_examples=25, deadline=None)
@given(s=hst.floats(min_value=0, max_value=2), t=hst.floats(min_value=0, max_value=2))
def test_semigroup_property(s, t):
    c = SpectralCoeffs(np.linspace(1, 2, 6), "neumann")
    assert np.allclose(evolve_free(evolve_free(c, s), t).a, evolve_free(c, s + t).a, rtol=1e-13, atol=0)
