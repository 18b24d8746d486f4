import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st

from kwcopt.fem import (
    SingularSystemError,
    TimeGrid,
    Trajectory,
    _assemble_local,
    assemble_operators,
    build_grid,
    dual_norm,
    field_dual_norm,
    h_norm,
    interval_averages,
    sample_nodes,
    solve_sparse,
    step_norm,
    time_inner,
    time_interpolate,
    time_norm,
    v_norm,
)


# ---------------------------------------------------------------------------
# grids
# ---------------------------------------------------------------------------


def test_three_node_interval_grid():
    g = build_grid(1, 3)
    assert g.nodes[:, 0].tolist() == [0.0, 0.5, 1.0]
    assert g.elements.tolist() == [[0, 1], [1, 2]]
    assert g.boundary.tolist() == [True, False, True]


def test_square_grid_counts_and_measures():
    g = build_grid(2, 4)
    assert g.n_nodes == 16
    assert g.n_elements == 2 * 3 * 3
    np.testing.assert_allclose(g.element_measures(), 1 / 18)
    assert g.boundary.sum() == 12


def test_grid_extents_and_per_axis_resolution():
    g = build_grid(2, (3, 5), [(0.0, 2.0), (-1.0, 1.0)])
    assert g.n_nodes == 15
    assert math.isclose(g.element_measures().sum(), 4.0)
    assert g.volume == 4.0


@pytest.mark.parametrize(
    "args",
    [(3, 5), (1, 1), (1, [4, 4]), (2, 1)],
)
def test_grid_rejects_bad_arguments(args):
    with pytest.raises(ValueError):
        build_grid(*args)


def test_grid_rejects_degenerate_extent():
    with pytest.raises(ValueError):
        build_grid(1, 4, [(1.0, 1.0)])


# ---------------------------------------------------------------------------
# time grids and interpolation
# ---------------------------------------------------------------------------


def test_time_grid_covers_horizon():
    tg = TimeGrid(1.0, 0.3)
    assert tg.n_steps == 4
    assert math.isclose(tg.length, 1.2)
    assert TimeGrid(1.0, 0.1).n_steps == 10
    assert TimeGrid(1.0, 1e-3).n_steps == 1000


@pytest.mark.parametrize("T,tau", [(0.0, 0.1), (1.0, 0.0), (1.0, -1.0), (float("inf"), 0.1)])
def test_time_grid_rejects_nonpositive(T, tau):
    with pytest.raises(ValueError):
        TimeGrid(T, tau)


@given(st.floats(0.05, 5.0), st.floats(1e-3, 1.0))
def test_time_grid_smallest_covering_step_count(T, tau):
    tg = TimeGrid(T, tau)
    n = tg.n_steps
    assert n * tau >= T * (1 - 1e-12)
    assert n == 1 or (n - 1) * tau < T


def test_interpolants_on_two_node_sequence():
    traj = Trajectory(TimeGrid(1.0, 1.0), np.array([[0.0], [1.0]]))
    assert time_interpolate(traj, "forward", 0.7)[0] == 1.0
    assert time_interpolate(traj, "backward", 0.7)[0] == 0.0
    assert time_interpolate(traj, "linear", 0.5)[0] == 0.5
    for kind in ("forward", "backward", "linear"):
        assert time_interpolate(traj, kind, 0.0)[0] == 0.0
        assert time_interpolate(traj, kind, 1.0)[0] == 1.0


def test_interpolation_errors():
    traj = Trajectory(TimeGrid(1.0, 0.5), np.zeros((3, 2)))
    with pytest.raises(ValueError):
        time_interpolate(traj, "forward", 1.5)
    with pytest.raises(ValueError):
        time_interpolate(traj, "cubic", 0.2)
    with pytest.raises(ValueError):
        Trajectory(TimeGrid(1.0, 0.5), np.zeros((2, 2)))


@given(st.integers(1, 6), st.floats(0.0, 1.0))
def test_linear_interpolant_between_piecewise_constants(n, t):
    rng = np.random.default_rng(n)
    vals = np.cumsum(rng.random((n + 1, 3)), axis=0)  # increasing in time
    traj = Trajectory(TimeGrid(1.0, 1.0 / n), vals)
    lo = time_interpolate(traj, "backward", t)
    hi = time_interpolate(traj, "forward", t)
    mid = time_interpolate(traj, "linear", t)
    assert np.all(lo <= mid + 1e-12) and np.all(mid <= hi + 1e-12)


def test_interval_averages_of_linear_function():
    tg = TimeGrid(1.0, 0.25)
    avg = interval_averages(lambda t: np.array([t]), tg)
    np.testing.assert_allclose(avg[1:, 0], [0.125, 0.375, 0.625, 0.875], atol=1e-15)
    assert avg[0, 0] == 0.0


def test_interval_averages_truncate_beyond_horizon():
    tg = TimeGrid(1.0, 0.4)  # last step covers [0.8, 1.2]
    avg = interval_averages(lambda t: np.array([1.0]), tg)
    np.testing.assert_allclose(avg[1:, 0], [1.0, 1.0, 0.5])


def test_sample_nodes_holds_last_value_beyond_horizon():
    tg = TimeGrid(1.0, 0.4)
    s = sample_nodes(lambda t: np.array([t]), tg)
    np.testing.assert_allclose(s[:, 0], [0.0, 0.4, 0.8, 0.8])


# ---------------------------------------------------------------------------
# matrices
# ---------------------------------------------------------------------------


def test_three_node_mass_and_stiffness():
    ops = assemble_operators(build_grid(1, 3))
    h = 0.5
    M = h / 6 * np.array([[2, 1, 0], [1, 4, 1], [0, 1, 2]])
    K = 1 / h * np.array([[1, -1, 0], [-1, 2, -1], [0, -1, 1]])
    np.testing.assert_allclose(ops.M.toarray(), M, atol=1e-15)
    np.testing.assert_allclose(ops.K.toarray(), K, atol=1e-15)
    np.testing.assert_allclose(ops.lumped, [0.25, 0.5, 0.25])


def test_matrix_invariants(ops_small):
    ops = ops_small
    one = np.ones(ops.n)
    np.testing.assert_allclose(ops.K @ one, 0.0, atol=1e-12)
    assert math.isclose(ops.M.sum(), 1.0)
    assert math.isclose(ops.lumped.sum(), 1.0)
    M, K = ops.M.toarray(), ops.K.toarray()
    np.testing.assert_allclose(M, M.T)
    np.testing.assert_allclose(K, K.T)
    assert np.linalg.eigvalsh(M).min() > 0
    assert np.linalg.eigvalsh(K).min() > -1e-12


def test_linear_fields_are_integrated_exactly(ops_small):
    ops = ops_small
    X = ops.grid.nodes
    x = X[:, 0]
    assert math.isclose(x @ ops.K @ x, 1.0)
    assert math.isclose(x @ ops.M @ x, 1 / 3)
    if ops.dim == 2:
        y = X[:, 1]
        w = x + 2 * y
        assert math.isclose(w @ ops.K @ w, 5.0)
        assert math.isclose(x @ ops.M @ y, 1 / 4)


def test_gradients_and_midpoints_of_linear_field(ops_small):
    ops = ops_small
    X = ops.grid.nodes
    w = 3 * X[:, 0] - (X[:, 1] if ops.dim == 2 else 0)
    g = ops.gradients(w)
    expected = [3.0] if ops.dim == 1 else [3.0, -1.0]
    np.testing.assert_allclose(g, np.broadcast_to(expected, g.shape), atol=1e-12)
    mids = ops.grid.midpoints()
    np.testing.assert_allclose(ops.midpoint_values(w), 3 * mids[:, 0] - (mids[:, 1] if ops.dim == 2 else 0))


def test_nodal_average_of_constant(ops_small):
    np.testing.assert_allclose(ops_small.nodal_average(np.full(ops_small.grid.n_elements, 2.5)), 2.5)


@given(st.integers(0, 2**31 - 1))
def test_pattern_assembly_matches_coordinate_assembly(seed):
    rng = np.random.default_rng(seed)
    dim = 1 + seed % 2
    ops = assemble_operators(build_grid(dim, 6 if dim == 1 else 4))
    local = rng.standard_normal((ops.grid.n_elements, dim + 1, dim + 1))
    np.testing.assert_allclose(ops.assemble(local).toarray(), _assemble_local(ops.grid, local).toarray(), atol=1e-14)


def test_weighted_matrices_reduce_to_plain_ones(ops_small):
    ops = ops_small
    E, d = ops.grid.n_elements, ops.dim
    np.testing.assert_allclose(ops.weighted_mass(np.ones(E)).toarray(), ops.M.toarray(), atol=1e-15)
    eye = np.broadcast_to(np.eye(d), (E, d, d))
    np.testing.assert_allclose(ops.weighted_stiffness(eye).toarray(), ops.K.toarray(), atol=1e-12)
    np.testing.assert_allclose(ops.lumped_mass(np.ones(ops.n)).toarray(), np.diag(ops.lumped))


def test_convection_matrix_paths_agree(ops_small, rng):
    ops = ops_small
    om = rng.standard_normal((ops.grid.n_elements, ops.dim))
    C = ops.convection(om).toarray()
    np.testing.assert_allclose(ops.assemble(ops.local_convection(om)).toarray(), C, atol=1e-14)
    # (omega . grad z, 1) for a linear z with constant omega: omega . grad z
    X = ops.grid.nodes
    z = X[:, 0]
    const = np.zeros((ops.grid.n_elements, ops.dim))
    const[:, 0] = 2.0
    assert math.isclose(np.ones(ops.n) @ ops.convection(const) @ z, 2.0)


def test_block_assembler_matches_bmat(ops_small, rng):
    ops = ops_small
    E, k = ops.grid.n_elements, ops.dim + 1
    blocks = [rng.standard_normal((E, k, k)) for _ in range(4)]
    data = [ops.pattern_data(b) for b in blocks]
    mats = [ops.assemble(b) for b in blocks]
    ref = sp.bmat([[mats[0], mats[1]], [mats[2], mats[3]]]).toarray()
    np.testing.assert_allclose(ops.block_assembler()(*data).toarray(), ref)


def test_transpose_and_diagonal_positions(ops_small, rng):
    ops = ops_small
    E, k = ops.grid.n_elements, ops.dim + 1
    local = rng.standard_normal((E, k, k))
    A = ops.assemble(local)
    d = ops.pattern_data(local)
    indptr, indices, _ = ops._pattern()
    At = sp.csc_matrix((d[ops.transpose_positions()], indices, indptr), shape=A.shape)
    np.testing.assert_allclose(At.toarray(), A.toarray().T)
    np.testing.assert_allclose(d[ops.diagonal_positions()], A.diagonal())


# ---------------------------------------------------------------------------
# norms
# ---------------------------------------------------------------------------


def test_constant_field_norms(ops_small):
    one = np.ones(ops_small.n)
    assert math.isclose(h_norm(ops_small, one), 1.0)
    assert math.isclose(v_norm(ops_small, one), 1.0)
    # the constant is its own Riesz representative: |1|_{V*} = |1|_H
    assert math.isclose(field_dual_norm(ops_small, one), 1.0)


@given(st.integers(0, 2**31 - 1))
def test_norm_ordering_against_dense_oracle(seed):
    rng = np.random.default_rng(seed)
    dim = 1 + seed % 2
    ops = assemble_operators(build_grid(dim, 7 if dim == 1 else 4))
    w = rng.standard_normal(ops.n)
    M, K = ops.M.toarray(), ops.K.toarray()
    f = M @ w
    dual = math.sqrt(f @ np.linalg.solve(M + K, f))
    assert math.isclose(field_dual_norm(ops, w), dual, rel_tol=1e-10)
    assert math.isclose(dual_norm(ops, f), dual, rel_tol=1e-10)
    assert field_dual_norm(ops, w) <= h_norm(ops, w) * (1 + 1e-12) <= v_norm(ops, w) * (1 + 1e-12)


def test_time_norms_use_left_and_right_rules(ops1d):
    tau = 0.25
    series = np.stack([np.full(ops1d.n, float(i)) for i in range(5)])
    # left rule: nodes 0..3
    assert math.isclose(time_norm(ops1d, series, tau) ** 2, tau * (0 + 1 + 4 + 9))
    assert math.isclose(time_inner(ops1d, series, series, tau), tau * 14)
    # piecewise constant held on (t_{i-1}, t_i]: nodes 1..4
    assert math.isclose(step_norm(ops1d, series, tau) ** 2, tau * (1 + 4 + 9 + 16))
    assert math.isclose(step_norm(ops1d, series, tau, "V") ** 2, tau * 30)


# ---------------------------------------------------------------------------
# linear solves
# ---------------------------------------------------------------------------


def test_solve_sparse_against_dense_inverse(rng):
    A = sp.random(30, 30, density=0.2, random_state=1) + 10 * sp.eye(30)
    b = rng.standard_normal(30)
    np.testing.assert_allclose(solve_sparse(A, b), np.linalg.inv(A.toarray()) @ b, rtol=1e-10, atol=1e-12)


def test_solve_sparse_errors():
    with pytest.raises(SingularSystemError):
        solve_sparse(sp.csc_matrix(np.array([[1.0, 1.0], [1.0, 1.0]])), np.ones(2))
    with pytest.raises(ValueError):
        solve_sparse(sp.csc_matrix(np.ones((2, 3))), np.ones(2))


def test_two_by_two_square_grid():
    g = build_grid(2, 2)
    assert g.n_nodes == 4 and g.n_elements == 2
    assert math.isclose(g.element_measures().sum(), 1.0)


def test_zero_field_norms(ops_small):
    z = np.zeros(ops_small.n)
    assert h_norm(ops_small, z) == v_norm(ops_small, z) == field_dual_norm(ops_small, z) == 0.0


def test_solve_sparse_simple_systems(ops1d):
    b = np.arange(5.0)
    np.testing.assert_array_equal(solve_sparse(sp.eye(5), b), b)
    np.testing.assert_allclose(solve_sparse(ops1d.M, ops1d.M @ np.ones(ops1d.n)), 1.0, rtol=1e-12)


def test_solve_sparse_spd_against_dense_inverse(rng):
    B = rng.standard_normal((8, 8))
    A = B @ B.T + 8 * np.eye(8)
    b = rng.standard_normal(8)
    np.testing.assert_allclose(solve_sparse(sp.csc_matrix(A), b), np.linalg.inv(A) @ b, rtol=1e-10)


def test_rectangle_rule_time_norm_converges_at_first_order(ops1d):
    errs = []
    for n in (10, 20, 40, 80):
        tg = TimeGrid(1.0, 1.0 / n)
        series = np.outer(tg.times, np.ones(ops1d.n))
        errs.append(abs(time_norm(ops1d, series, tg.tau) ** 2 - 1 / 3))
    rates = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
    assert all(0.9 <= r <= 1.1 for r in rates)
