import math

import numpy as np
import pytest
import scipy.sparse.linalg as spla
from hypothesis import given, settings, strategies as st

from kwcopt.experiments import SeptupletFamily, _random_data, consistent_step
from kwcopt.fem import TimeGrid, assemble_operators, build_grid
from kwcopt.linear import (
    Septuplet,
    SeptupletError,
    StepSizeError,
    forcing_dual_norm,
    gronwall_diagnostic,
    isomorphism_constants,
    data_norm,
    residual_forcing,
    solution_norm,
    solve_linear,
    stability_check,
    step_linear,
    step_matrices,
    tau1,
    tau2,
    validate_septuplet,
)
from kwcopt.oracles import _dense_step_blocks, assemble_spacetime
from kwcopt.params import ProblemParams


def constant_septuplet(ops, tg, a=1.0, b=0.0, c=0.0, lam=0.0, xi=0.0, omega=0.0, A=1.0, delta_a=1.0):
    n1, nn, E, d = tg.n_steps + 1, ops.n, ops.grid.n_elements, ops.dim
    full = lambda v: np.full((n1, nn), float(v))  # noqa: E731
    om = np.zeros((n1, E, d))
    om[..., 0] = omega
    return Septuplet(tg, a=full(a), b=full(b), c=full(c), lam=full(lam), xi=full(xi), omega=om,
                     A=A * np.broadcast_to(np.eye(d), (n1, E, d, d)).copy(), delta_a=delta_a)


# ---------------------------------------------------------------------------
# admissibility and step-size bounds
# ---------------------------------------------------------------------------


def test_validation_examples(ops_small):
    tg = TimeGrid(1.0, 0.5)
    S = validate_septuplet(constant_septuplet(ops_small, tg), ops_small)
    assert S.norms["omega_inf"] == 0.0 and S.norms["a_C"] == 1.0
    with pytest.raises(SeptupletError, match="delta_a"):
        validate_septuplet(constant_septuplet(ops_small, tg, a=0.5), ops_small)
    if ops_small.dim == 2:
        S = constant_septuplet(ops_small, tg)
        S.A[2, 3, 0, 1] += 1e-3
        with pytest.raises(SeptupletError, match="symmetric"):
            validate_septuplet(S, ops_small)
        S = constant_septuplet(ops_small, tg)
        S.A[1, 0] = np.diag([1.0, -1.0])
        with pytest.raises(SeptupletError, match="indefinite"):
            validate_septuplet(S, ops_small)
    S = constant_septuplet(ops_small, tg)
    S.b = S.b[:, :-1]
    with pytest.raises(SeptupletError, match="shape"):
        validate_septuplet(S, ops_small)
    S = constant_septuplet(ops_small, tg)
    S.lam[0, 0] = np.inf
    with pytest.raises(SeptupletError, match="non-finite"):
        validate_septuplet(S, ops_small)


def test_step_size_bound_examples(ops1d):
    tg = TimeGrid(1.0, 0.5)
    p = ProblemParams(C_emb=1.0)
    S = validate_septuplet(constant_septuplet(ops1d, tg), ops1d)
    assert math.isclose(tau1(S, p), 1 / 16)
    assert math.isclose(tau2(S, p), 1 / 64)
    S = validate_septuplet(constant_septuplet(ops1d, tg, omega=1.0), ops1d)
    assert math.isclose(tau1(S, p), 1 / 32)
    S = validate_septuplet(constant_septuplet(ops1d, tg), ops1d)
    assert math.isclose(tau1(S, p.replace(mu=0.1)), 0.000625)


@given(st.floats(0, 10), st.floats(0, 10), st.floats(0, 10), st.floats(0.1, 3))
def test_tau2_below_tau1_and_monotone(lam, b, omega, scale):
    ops = assemble_operators(build_grid(1, 5))
    tg = TimeGrid(1.0, 0.5)
    p = ProblemParams()
    S1 = validate_septuplet(constant_septuplet(ops, tg, lam=lam, b=b, omega=omega), ops)
    S2 = validate_septuplet(constant_septuplet(ops, tg, lam=lam * (1 + scale), b=b * (1 + scale),
                                               omega=omega * (1 + scale), xi=scale), ops)
    assert tau2(S1, p) <= tau1(S1, p)
    assert tau2(S2, p) <= tau2(S1, p)
    assert tau1(S2, p) <= tau1(S1, p)


def test_step_above_bound_is_rejected(ops1d):
    tg = TimeGrid(1.0, 0.5)
    S = validate_septuplet(constant_septuplet(ops1d, tg), ops1d)
    z = np.zeros(ops1d.n)
    with pytest.raises(StepSizeError) as info:
        step_linear(S, 1, z, z, z, z, ProblemParams(C_emb=1.0), ops1d, 0.0625)
    assert info.value.bound == pytest.approx(1 / 16)
    with pytest.raises(StepSizeError):
        solve_linear(S, z, z, None, None, ProblemParams(C_emb=1.0), ops1d)


# ---------------------------------------------------------------------------
# time stepping
# ---------------------------------------------------------------------------


def test_zero_data_gives_zero_step(ops_small):
    tg = TimeGrid(0.1, 0.01)
    S = validate_septuplet(constant_septuplet(ops_small, tg), ops_small)
    z = np.zeros(ops_small.n)
    p, q = step_linear(S, 1, z, z, z, z, ProblemParams(), ops_small, 0.01)
    assert not np.any(p) and not np.any(q)


def test_decoupled_step_matches_scalar_solve(ops_small):
    ops = ops_small
    tau = 0.01
    tg = TimeGrid(0.1, tau)
    params = ProblemParams(mu=0.8)
    S = validate_septuplet(constant_septuplet(ops, tg), ops)
    r = np.cos(np.pi * ops.grid.nodes[:, 0])
    z = np.zeros(ops.n)
    p, q = step_linear(S, 1, z, z, r, z, params, ops, tau)
    A = ((ops.M + params.mu**2 * ops.K) / tau + ops.K).tocsc()
    np.testing.assert_allclose(p, spla.spsolve(A, ops.M @ r), atol=1e-13)
    np.testing.assert_allclose(q, 0.0, atol=1e-14)


def _random_septuplet(seed, dim=1, T=0.05):
    rng = np.random.default_rng(seed)
    ops = assemble_operators(build_grid(dim, 9 if dim == 1 else 4))
    params = ProblemParams(T=T)
    fam = SeptupletFamily.random(rng, dim)
    tau, S, _ = consistent_step(fam, ops, params, T, 0.5, tau1)
    return rng, ops, params, S


@pytest.mark.parametrize("dim", [1, 2])
@pytest.mark.parametrize("seed", range(3))
def test_step_matrices_match_elementwise_oracle(dim, seed):
    rng, ops, params, S = _random_septuplet(seed, dim)
    sl = S.slice(1)
    system, P_p, P_z, M_xi, M_c = step_matrices(sl, params, ops, S.tgrid.tau)
    ref_system, coupling, _ = _dense_step_blocks(sl, params, ops, S.tgrid.tau)
    n = ops.n
    np.testing.assert_allclose(system.toarray(), ref_system, atol=1e-10 * np.abs(ref_system).max())
    np.testing.assert_allclose(P_p.toarray(), coupling[:n, :n], atol=1e-12)
    np.testing.assert_allclose(P_z.toarray(), coupling[n:, n:], atol=1e-12)
    np.testing.assert_allclose(-M_xi.toarray(), coupling[:n, n:], atol=1e-14)
    np.testing.assert_allclose(-M_c.toarray(), coupling[n:, :n], atol=1e-14)


@pytest.mark.parametrize("seed", range(20))
def test_marching_matches_monolithic_oracle(seed):
    rng = np.random.default_rng(seed)
    dim = 1 + seed % 2
    ops = assemble_operators(build_grid(dim, 9 if dim == 1 else 4))
    params = ProblemParams(T=0.05)
    fam = SeptupletFamily.random(rng, dim)
    tau, _, _ = consistent_step(fam, ops, params, 0.05, 0.5, tau1)
    # at most 8 steps for the dense oracle; a shorter horizon only lowers the norms
    S = fam.sample(TimeGrid(min(0.05, 8 * tau), tau), ops)
    params = params.replace(T=S.tgrid.T)
    assert S.tgrid.n_steps <= 8 and tau < tau1(S, params)
    p0, z0, h, k = _random_data(rng, ops, S.tgrid)
    st_ = solve_linear(S, p0, z0, h, k, params, ops)
    ms = assemble_spacetime(S, params, ops, p0, z0, h, k)
    P, Z = ms.unpack(ms.solve(), p0, z0)
    np.testing.assert_allclose(st_.p, P, atol=1e-10)
    np.testing.assert_allclose(st_.z, Z, atol=1e-10)


def test_slice_residual_against_basis_functions():
    rng, ops, params, S = _random_septuplet(7)
    tau = S.tgrid.tau
    p0, z0, h, k = _random_data(rng, ops, S.tgrid)
    st_ = solve_linear(S, p0, z0, h, k, params, ops)
    i = 1
    system, coupling, M = _dense_step_blocks(S.slice(i), params, ops, tau)
    x = np.concatenate([st_.p[i], st_.z[i]])
    prev = np.concatenate([st_.p[i - 1], st_.z[i - 1]])
    rhs = coupling @ prev + np.concatenate([M @ h[i], M @ k[i]])
    assert np.max(np.abs(system @ x - rhs)) <= 1e-10 * max(1.0, np.abs(rhs).max())


def test_zero_data_gives_zero_state():
    rng, ops, params, S = _random_septuplet(3)
    st_ = solve_linear(S, 0.0, 0.0, None, None, params, ops)
    assert not np.any(st_.p) and not np.any(st_.z)
    rep = stability_check(st_, S, params, ops)
    assert rep.passed and rep.est2_lhs == 0.0 and rep.est3_lhs == 0.0
    h, k = residual_forcing(st_, S, params, ops)
    assert not np.any(h) and not np.any(k)


@settings(max_examples=10)
@given(st.integers(0, 1000), st.floats(-2, 2), st.floats(-2, 2))
def test_superposition(seed, alpha, beta):
    rng, ops, params, S = _random_septuplet(seed % 5)
    d1 = _random_data(rng, ops, S.tgrid)
    d2 = _random_data(rng, ops, S.tgrid)
    s1 = solve_linear(S, *d1, params, ops)
    s2 = solve_linear(S, *d2, params, ops)
    s3 = solve_linear(S, *(alpha * a + beta * b for a, b in zip(d1, d2)), params, ops)
    scale = 1 + np.abs(s1.p).max() + np.abs(s2.p).max() + np.abs(s1.z).max() + np.abs(s2.z).max()
    np.testing.assert_allclose(s3.p, alpha * s1.p + beta * s2.p, atol=1e-10 * scale)
    np.testing.assert_allclose(s3.z, alpha * s1.z + beta * s2.z, atol=1e-10 * scale)


def test_callable_forcings_are_step_averages():
    rng, ops, params, S = _random_septuplet(2)
    x = ops.grid.nodes[:, 0]
    st_ = solve_linear(S, 0.0, 0.0, lambda t: np.cos(np.pi * x) * t, None, params, ops)
    tau = S.tgrid.tau
    mids = (np.arange(1, S.tgrid.n_steps + 1) - 0.5) * tau
    expected = np.outer(np.minimum(mids, 1e9), np.cos(np.pi * x))
    # last step may extend beyond T and is truncated; compare the interior ones
    np.testing.assert_allclose(st_.h[1:-1], expected[:-1], atol=1e-13)


# ---------------------------------------------------------------------------
# round trip and stability
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("seed", range(5))
def test_round_trip_and_two_sided_bound(seed):
    rng, ops, params, S = _random_septuplet(seed)
    tau = S.tgrid.tau
    p0, z0, h, k = _random_data(rng, ops, S.tgrid)
    st_ = solve_linear(S, p0, z0, h, k, params, ops)
    hr, kr = residual_forcing(st_, S, params, ops)
    size = math.hypot(forcing_dual_norm(ops, st_.h, tau), forcing_dual_norm(ops, st_.k, tau))
    err = math.hypot(forcing_dual_norm(ops, hr - st_.h, tau), forcing_dual_norm(ops, kr - st_.k, tau))
    assert err <= 1e-9 * size
    M0, M1 = isomorphism_constants(S, params, ops)
    sol, dat = solution_norm(st_, ops, tau), data_norm(st_, ops, tau)
    assert M0 * dat <= sol <= M1 * dat


@pytest.mark.parametrize("seed", range(5))
def test_stability_estimates_hold_below_tau2(seed):
    rng = np.random.default_rng(seed)
    ops = assemble_operators(build_grid(1, 9))
    params = ProblemParams(T=0.01)
    fam = SeptupletFamily.random(rng, 1)
    tau, S, bound = consistent_step(fam, ops, params, 0.01, 0.9, tau2)
    assert tau < bound
    st_ = solve_linear(S, *_random_data(rng, ops, S.tgrid), params, ops)
    rep = stability_check(st_, S, params, ops)
    assert rep.passed, rep.as_dict()
    assert rep.as_dict()["passed"] is True
    assert np.max(rep.est1_lhs) <= rep.est1_rhs


# ---------------------------------------------------------------------------
# continuous dependence
# ---------------------------------------------------------------------------


def _pair(seed, perturb_forcing=0.0, perturb_lam=0.0):
    rng, ops, params, S1 = _random_septuplet(seed, T=0.01)
    data = _random_data(rng, ops, S1.tgrid)
    S2 = S1.map(lambda a: a.copy())
    S2.lam = S2.lam + perturb_lam
    validate_septuplet(S2, ops)
    d2 = (data[0], data[1], data[2] + perturb_forcing, data[3])
    return (solve_linear(S1, *data, params, ops), solve_linear(S2, *d2, params, ops), S1, S2, params, ops)


def test_gronwall_identical_inputs():
    st1, st2, S1, S2, params, ops = _pair(0)
    g = gronwall_diagnostic(st1, st2, S1, S2, params, ops)
    assert not np.any(g.J) and np.all(g.bound >= 0) and g.passed


def test_gronwall_perturbed_forcing():
    st1, st2, S1, S2, params, ops = _pair(1, perturb_forcing=0.1)
    g = gronwall_diagnostic(st1, st2, S1, S2, params, ops)
    assert g.J[0] == 0.0 and np.any(g.J > 0)
    assert not np.any(g.R1)
    assert g.passed


def test_gronwall_perturbed_reaction_coefficient():
    st1, st2, S1, S2, params, ops = _pair(2, perturb_lam=0.5)
    g = gronwall_diagnostic(st1, st2, S1, S2, params, ops)
    assert np.all(g.R1[1:] > 0)
    assert g.passed
    assert g.as_dict()["max_ratio"] <= 1.0
