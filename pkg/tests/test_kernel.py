import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from kwcopt.fem import assemble_operators, build_grid
from kwcopt.kernel import (
    BallMarker,
    BoxConstraint,
    default_bundle,
    gamma_eps,
    grad_gamma_eps,
    hess_gamma_eps,
    in_sgr,
    kwc_energy,
    project_box,
    sgr,
    tabulated_bundle,
)
from kwcopt.params import ProblemParams, interval_embedding_constant

eps_st = st.floats(1e-3, 10.0)
vec_st = arrays(np.float64, st.integers(1, 3), elements=st.floats(-50, 50))


# ---------------------------------------------------------------------------
# length kernel
# ---------------------------------------------------------------------------


def test_gamma_examples():
    assert gamma_eps(1.0, [0.0]) == 1.0
    assert gamma_eps(0.0, [3.0, 4.0]) == 5.0
    assert gamma_eps(0.5, [0.0, 0.0]) - gamma_eps(0.0, [0.0, 0.0]) == 0.5
    with pytest.raises(ValueError):
        gamma_eps(-1.0, [1.0])


def test_gradient_examples():
    np.testing.assert_allclose(grad_gamma_eps(1.0, [1.0, 0.0]), [2**-0.5, 0.0])
    np.testing.assert_array_equal(grad_gamma_eps(0.3, [0.0, 0.0]), [0.0, 0.0])
    with pytest.raises(ValueError):
        grad_gamma_eps(0.0, [1.0])


def test_hessian_examples():
    np.testing.assert_allclose(hess_gamma_eps(0.25, [0.0, 0.0]), 4 * np.eye(2))
    ev = np.linalg.eigvalsh(hess_gamma_eps(1.0, [1.0, 0.0]))
    np.testing.assert_allclose(sorted(ev), [2**-1.5, 2**-0.5])
    with pytest.raises(ValueError):
        hess_gamma_eps(0.0, [1.0])


@given(eps_st, vec_st)
def test_kernel_bounds(eps, y):
    g = grad_gamma_eps(eps, y)
    H = hess_gamma_eps(eps, y)
    gap = gamma_eps(eps, y) - gamma_eps(0.0, y)
    assert np.linalg.norm(g) <= 1.0 + 1e-15
    assert np.abs(H).max() <= (1.0 / eps) * (1 + 1e-12)
    assert -1e-12 <= gap <= eps * (1 + 1e-12)
    # Hessian is positive semidefinite (gamma is convex)
    assert np.linalg.eigvalsh(H).min() >= -1e-12 / eps


@given(st.floats(0.1, 5.0), arrays(np.float64, 2, elements=st.floats(-3, 3)))
def test_gradient_matches_central_differences(eps, y):
    h = 1e-6
    fd = np.array([(gamma_eps(eps, y + h * e) - gamma_eps(eps, y - h * e)) / (2 * h) for e in np.eye(2)])
    np.testing.assert_allclose(grad_gamma_eps(eps, y), fd, atol=1e-6)


@given(st.floats(0.1, 5.0), arrays(np.float64, 2, elements=st.floats(-3, 3)))
def test_hessian_matches_central_differences(eps, y):
    h = 1e-6
    fd = np.stack([(grad_gamma_eps(eps, y + h * e) - grad_gamma_eps(eps, y - h * e)) / (2 * h) for e in np.eye(2)])
    np.testing.assert_allclose(hess_gamma_eps(eps, y), fd, atol=1e-5)


def test_vectorized_over_leading_axes(rng):
    y = rng.standard_normal((5, 4, 2))
    G = grad_gamma_eps(0.3, y)
    H = hess_gamma_eps(0.3, y)
    assert G.shape == (5, 4, 2) and H.shape == (5, 4, 2, 2)
    np.testing.assert_allclose(H[2, 1], hess_gamma_eps(0.3, y[2, 1]))


# ---------------------------------------------------------------------------
# subdifferential
# ---------------------------------------------------------------------------


def test_sgr_examples():
    np.testing.assert_allclose(sgr([3.0, 4.0]), [0.6, 0.8])
    s = sgr([0.0, 0.0])
    assert isinstance(s, BallMarker) and s == BallMarker(2)
    assert in_sgr([0.0, 0.0], [0.5, 0.0])
    assert not in_sgr([0.0, 0.0], [1.5, 0.0])
    assert in_sgr([3.0, 4.0], [0.6, 0.8])
    assert not in_sgr([3.0, 4.0], [0.8, 0.6])


@given(arrays(np.float64, 2, elements=st.floats(-10, 10)).filter(lambda y: np.linalg.norm(y) > 1e-3),
       st.floats(1e-6, 1.0))
def test_regularized_gradient_approaches_sgr(y, eps):
    err = np.linalg.norm(grad_gamma_eps(eps, y) - sgr(y))
    assert err <= eps / np.linalg.norm(y) * (1 + 1e-9)


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------


def test_default_bundle_values_and_validation():
    b = default_bundle()
    assert b.validate() is b
    assert b.g(np.array(0.0)) == -1.0
    assert b.G(np.array(1.0)) == 0.0
    assert b.alpha(np.array(1.0)) == 2.0
    assert b.dalpha(np.array(0.0)) == 0.0
    assert b.alpha0(np.array(0.0)) == b.delta_star == 1.0


def test_validation_rejects_broken_bundle():
    b = default_bundle()
    from dataclasses import replace

    with pytest.raises(ValueError, match="alpha0 >= delta_star"):
        replace(b, delta_star=2.0).validate()
    with pytest.raises(ValueError, match="G' = g"):
        replace(b, g=lambda s: np.asarray(s, float)).validate()
    with pytest.raises(ValueError):
        replace(b, delta_star=0.0).validate()


def test_tabulated_bundle_reproduces_default():
    s = np.linspace(-3, 3, 241)
    ref = default_bundle()
    tab = tabulated_bundle(s, ref.G(s), ref.alpha0(s), ref.alpha(s), 1.0).validate()
    q = np.linspace(-2.5, 2.5, 57)
    for name in ("g", "dg", "G", "alpha0", "dalpha0", "alpha", "dalpha", "ddalpha"):
        np.testing.assert_allclose(getattr(tab, name)(q), getattr(ref, name)(q), atol=1e-9, err_msg=name)


def test_tabulated_bundle_rejects_bad_tables():
    with pytest.raises(ValueError):
        tabulated_bundle([0, 1, 1, 2], [0] * 4, [1] * 4, [1] * 4, 1.0)
    with pytest.raises(ValueError):
        tabulated_bundle([0, 1, 2], [0] * 3, [1] * 3, [1] * 3, 1.0)


# ---------------------------------------------------------------------------
# energy
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def ops17():
    return assemble_operators(build_grid(1, 17))


def test_energy_closed_forms(ops17):
    ops = ops17
    one = np.ones(ops.n)
    theta = np.full(ops.n, 0.3)
    b = default_bundle()
    assert math.isclose(kwc_energy(ops, 0.5, b, one, theta), 1.0)
    assert kwc_energy(ops, 0.0, b, one, theta) == 0.0
    from dataclasses import replace

    no_potential = replace(b, G=lambda s: np.zeros_like(np.asarray(s, float)))
    x = ops.grid.nodes[:, 0]
    assert math.isclose(kwc_energy(ops, 0.0, no_potential, x, theta), 0.5)


@given(st.floats(0.0, 2.0), st.floats(0.0, 2.0))
def test_energy_monotone_in_eps(e1, e2):
    ops = assemble_operators(build_grid(1, 9))
    x = ops.grid.nodes[:, 0]
    b = default_bundle()
    lo, hi = sorted((e1, e2))
    eta, theta = 0.5 + 0.3 * np.cos(np.pi * x), np.sin(3 * x)
    assert kwc_energy(ops, hi, b, eta, theta) >= kwc_energy(ops, lo, b, eta, theta)


# ---------------------------------------------------------------------------
# box constraint
# ---------------------------------------------------------------------------


def test_projection_examples():
    box = BoxConstraint(-1.0, 1.0)
    assert project_box(box, 2.0) == 1.0
    assert project_box(box, 0.5) == 0.5
    assert project_box(box, -3.0) == -1.0


@given(arrays(np.float64, 6, elements=st.floats(-5, 5)))
def test_projection_is_idempotent_and_feasible(u):
    box = BoxConstraint(np.full(6, -1.0), np.linspace(0.0, 2.0, 6))
    p = project_box(box, u)
    assert box.contains(p)
    np.testing.assert_array_equal(project_box(box, p), p)


def test_box_validation_and_sampling(rng):
    with pytest.raises(ValueError):
        BoxConstraint(1.0, 0.0)
    box = BoxConstraint(-2.0, 3.0)
    s = box.sample((100,), rng)
    assert box.contains(s)
    assert not box.contains(np.array([3.5]))


# ---------------------------------------------------------------------------
# constants
# ---------------------------------------------------------------------------


def test_params_coupling_gate():
    ProblemParams(L_u=0.0, M_u=0.0)
    for bad in ({"L_u": 0.0}, {"M_v": 0.0}, {"mu": 0.0}, {"eps": -1.0}, {"T": float("nan")}):
        with pytest.raises(ValueError):
            ProblemParams(**bad)


def test_params_replace_and_coercivity():
    p = ProblemParams().replace(mu=0.1, nu=2.0)
    assert math.isclose(p.coercivity, 0.01)
    assert ProblemParams().coercivity == 1.0


def test_interval_embedding_constant(rng):
    c = interval_embedding_constant(1.0)
    assert math.isclose(c, (1 / math.tanh(1.0)) ** 0.25)
    with pytest.raises(ValueError):
        interval_embedding_constant(0.0)
    # |w|_{L4} <= c |w|_{H1} on random smooth fields (fine-grid quadrature)
    x = np.linspace(0, 1, 4001)
    for _ in range(20):
        a = rng.standard_normal(6)
        w = sum(a[j] * np.cos(j * np.pi * x + a[-1] * j) for j in range(5)) + 3 * a[5]
        dw = np.gradient(w, x)
        l4 = np.trapezoid(w**4, x) ** 0.25
        h1 = math.sqrt(np.trapezoid(w**2 + dw**2, x))
        assert l4 <= c * h1
