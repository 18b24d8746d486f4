"""Spatial grids, P1 finite elements, discrete norms and time interpolation.

Everything here works on uniform structured grids in one or two space
dimensions.  Fields are plain numpy arrays:

* scalar fields hold one value per node, shape ``(n_nodes,)``;
* vector fields hold one N-vector per element, shape ``(n_elements, N)``;
* matrix fields hold one symmetric N x N matrix per element,
  shape ``(n_elements, N, N)``.

Time series of fields stack these along a leading axis of length
``n_steps + 1`` (the values at ``t_0, ..., t_n``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class SingularSystemError(RuntimeError):
    """Raised when a sparse factorization fails or its residual is too large."""


# ---------------------------------------------------------------------------
# grids
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform simplicial grid of an interval or a rectangle.

    ``nodes`` has shape ``(n_nodes, dim)``; ``elements`` holds the node
    indices of each simplex, shape ``(n_elements, dim + 1)``.
    """

    dim: int
    shape: tuple[int, ...]
    extents: tuple[tuple[float, float], ...]
    nodes: np.ndarray
    elements: np.ndarray
    boundary: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def volume(self) -> float:
        return float(np.prod([b - a for a, b in self.extents]))

    def element_measures(self) -> np.ndarray:
        verts = self.nodes[self.elements]  # (E, dim+1, dim)
        edges = verts[:, 1:, :] - verts[:, :1, :]
        return np.abs(np.linalg.det(edges)) / math.factorial(self.dim)

    def midpoints(self) -> np.ndarray:
        return self.nodes[self.elements].mean(axis=1)


def build_grid(
    dimension: int,
    resolution: int | Sequence[int],
    extents: Sequence[tuple[float, float]] | None = None,
) -> SpatialGrid:
    """Build a uniform grid with ``resolution`` nodes per axis.

    In 2D every cell ``[x_i, x_{i+1}] x [y_j, y_{j+1}]`` is split along the
    diagonal from its lower-left to its upper-right corner.
    """
    if dimension not in (1, 2):
        raise ValueError(f"dimension must be 1 or 2, got {dimension}")
    if isinstance(resolution, (int, np.integer)):
        res = (int(resolution),) * dimension
    else:
        res = tuple(int(r) for r in resolution)
    if len(res) != dimension:
        raise ValueError("one resolution entry per axis is required")
    if any(r < 2 for r in res):
        raise ValueError(f"need at least 2 nodes per axis, got {res}")
    if extents is None:
        extents = [(0.0, 1.0)] * dimension
    ext = tuple((float(a), float(b)) for a, b in extents)
    if len(ext) != dimension:
        raise ValueError("one extent pair per axis is required")
    for a, b in ext:
        if not (math.isfinite(a) and math.isfinite(b)) or b <= a:
            raise ValueError(f"extent ({a}, {b}) must be finite with positive length")

    axes = [np.linspace(a, b, r) for (a, b), r in zip(ext, res)]
    if dimension == 1:
        nodes = axes[0][:, None]
        n = res[0]
        elements = np.stack([np.arange(n - 1), np.arange(1, n)], axis=1)
        boundary = np.zeros(n, dtype=bool)
        boundary[[0, -1]] = True
    else:
        nx, ny = res
        X, Y = np.meshgrid(axes[0], axes[1], indexing="xy")
        nodes = np.stack([X.ravel(), Y.ravel()], axis=1)  # node id = j*nx + i

        def nid(i, j):
            return j * nx + i

        ii, jj = np.meshgrid(np.arange(nx - 1), np.arange(ny - 1), indexing="xy")
        ii, jj = ii.ravel(), jj.ravel()
        ll, lr = nid(ii, jj), nid(ii + 1, jj)
        ul, ur = nid(ii, jj + 1), nid(ii + 1, jj + 1)
        lower = np.stack([ll, lr, ur], axis=1)
        upper = np.stack([ll, ur, ul], axis=1)
        elements = np.empty((2 * lower.shape[0], 3), dtype=np.int64)
        elements[0::2] = lower
        elements[1::2] = upper
        ix, iy = np.arange(nodes.shape[0]) % nx, np.arange(nodes.shape[0]) // nx
        boundary = (ix == 0) | (ix == nx - 1) | (iy == 0) | (iy == ny - 1)

    grid = SpatialGrid(
        dim=dimension,
        shape=res,
        extents=ext,
        nodes=nodes,
        elements=np.asarray(elements, dtype=np.int64),
        boundary=boundary,
    )
    meas = grid.element_measures()
    if np.any(meas <= 0):
        raise ValueError("degenerate element produced")
    return grid


@dataclass(frozen=True)
class TimeGrid:
    """Uniform time grid ``t_i = i * tau`` covering ``[0, T]``.

    ``n_steps`` is the smallest integer n with ``n * tau >= T``.
    """

    T: float
    tau: float

    def __post_init__(self):
        if not (self.T > 0 and math.isfinite(self.T)):
            raise ValueError(f"horizon T must be positive, got {self.T}")
        if not (self.tau > 0 and math.isfinite(self.tau)):
            raise ValueError(f"step tau must be positive, got {self.tau}")

    @property
    def n_steps(self) -> int:
        n = max(1, math.ceil(self.T / self.tau - 1e-12))
        # guard against floating fuzz in the ceiling
        while n * self.tau < self.T * (1 - 1e-14):
            n += 1
        while n > 1 and (n - 1) * self.tau >= self.T:
            n -= 1
        return n

    @property
    def times(self) -> np.ndarray:
        return self.tau * np.arange(self.n_steps + 1)

    @property
    def length(self) -> float:
        """Length ``n_steps * tau`` of the discrete horizon (``>= T``)."""
        return self.n_steps * self.tau


@dataclass(frozen=True)
class Trajectory:
    """Fields at the time nodes ``t_0, ..., t_n`` of a time grid."""

    tgrid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape[0] != self.tgrid.n_steps + 1:
            raise ValueError(
                f"trajectory has {self.values.shape[0]} entries, "
                f"expected {self.tgrid.n_steps + 1}"
            )

    def __getitem__(self, i):
        return self.values[i]

    def __len__(self):
        return self.values.shape[0]


# ---------------------------------------------------------------------------
# operators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DiscreteOperators:
    """Assembled P1 matrices and the helpers needed to build weighted ones.

    ``grad`` maps nodal values to elementwise gradients (stacked as
    ``(n_elements * dim,)``); ``incidence`` is the element/node incidence
    matrix, so ``incidence @ w / (dim + 1)`` gives element-midpoint values of
    a P1 field.
    """

    grid: SpatialGrid
    M: sp.csc_matrix
    K: sp.csc_matrix
    grad: sp.csr_matrix
    incidence: sp.csr_matrix
    measures: np.ndarray
    lumped: np.ndarray
    local_grads: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def dim(self) -> int:
        return self.grid.dim

    @property
    def n(self) -> int:
        return self.grid.n_nodes

    # -- elementwise helpers -------------------------------------------------
    def gradients(self, w: np.ndarray) -> np.ndarray:
        """Elementwise gradient of a nodal field, shape ``(n_elements, dim)``."""
        return (self.grad @ w).reshape(-1, self.dim)

    def midpoint_values(self, w: np.ndarray) -> np.ndarray:
        """Value of the P1 interpolant at each element barycentre."""
        return (self.incidence @ w) / (self.dim + 1)

    def nodal_average(self, f_elem: np.ndarray) -> np.ndarray:
        """Lumped L2 projection of an elementwise constant onto P1 nodes."""
        return (self.incidence.T @ (self.measures * f_elem)) / (self.dim + 1) / self.lumped

    # -- weighted matrices ---------------------------------------------------
    def local_mass(self, c_elem: np.ndarray) -> np.ndarray:
        """Element mass matrices weighted by an elementwise constant, ``(E, d+1, d+1)``."""
        k = self.dim + 1
        # P1 element mass: |e| (1 + delta_ij) / ((d+1)(d+2))
        ref = (np.ones((k, k)) + np.eye(k)) / (k * (k + 1))
        return (self.measures * np.asarray(c_elem, float))[:, None, None] * ref[None]

    def local_stiffness(self, A_elem: np.ndarray) -> np.ndarray:
        """Element matrices of ``(A grad z, grad psi)``, ``(E, d+1, d+1)``."""
        d = self.dim
        A = np.asarray(A_elem, float).reshape(-1, d, d)
        G = self.local_grads
        return np.einsum("eki,eij,elj->ekl", G, A, G) * self.measures[:, None, None]

    def assemble(self, local: np.ndarray) -> sp.csc_matrix:
        """Sum element matrices into a global matrix on the fixed P1 pattern.

        The pattern and the scatter map are computed once per grid, so
        repeated assembly (inside Newton loops) is a single ``bincount``.
        """
        indptr, indices, _ = self._pattern()
        n = self.n
        return sp.csc_matrix((self.pattern_data(local), indices, indptr), shape=(n, n))

    def _pattern(self):
        if "pattern" not in self._cache:
            self._cache["pattern"] = _element_pattern(self.grid)
        return self._cache["pattern"]

    def pattern_data(self, local: np.ndarray) -> np.ndarray:
        """Entries of the assembled matrix in the order of the fixed P1 pattern."""
        indptr, indices, scatter = self._pattern()
        return np.bincount(scatter, weights=np.asarray(local, float).ravel(), minlength=indices.size)

    def diagonal_positions(self) -> np.ndarray:
        """Positions of the diagonal entries within the pattern data."""
        if "diag_pos" not in self._cache:
            indptr, indices, _ = self._pattern()
            cols = np.repeat(np.arange(self.n), np.diff(indptr))
            self._cache["diag_pos"] = np.flatnonzero(indices == cols)
        return self._cache["diag_pos"]

    def transpose_positions(self) -> np.ndarray:
        """Permutation ``q`` with ``data_T = data[q]`` (the pattern is symmetric)."""
        if "transpose_pos" not in self._cache:
            indptr, indices, _ = self._pattern()
            n = self.n
            cols = np.repeat(np.arange(n), np.diff(indptr))
            key = cols.astype(np.int64) * n + indices
            tkey = indices.astype(np.int64) * n + cols
            self._cache["transpose_pos"] = np.searchsorted(key, tkey)
        return self._cache["transpose_pos"]

    def local_convection(self, omega_elem: np.ndarray) -> np.ndarray:
        """Element matrices of ``(omega . grad z, phi)``: ``|e| / (d+1) omega . grad phi_s``."""
        d = self.dim
        om = np.asarray(omega_elem, float).reshape(-1, d)
        row = np.einsum("esi,ei->es", self.local_grads, om) * (self.measures / (d + 1))[:, None]
        return np.broadcast_to(row[:, None, :], (om.shape[0], d + 1, d + 1))

    def block_assembler(self):
        """Fill function for 2x2 block matrices whose blocks share the P1 pattern.

        Returns ``fill(d00, d01, d10, d11) -> csc`` taking pattern data of the
        four blocks.
        """
        if "block" not in self._cache:
            indptr, indices, _ = self._pattern()
            n, nnz = self.n, indices.size
            code = [sp.csc_matrix((np.arange(nnz) + 1.0 + b * nnz, indices, indptr), shape=(n, n)) for b in range(4)]
            big = sp.bmat([[code[0], code[1]], [code[2], code[3]]], format="csc")
            order = big.data.astype(np.int64) - 1
            b_indices, b_indptr = big.indices.copy(), big.indptr.copy()

            def fill(d00, d01, d10, d11):
                data = np.concatenate([d00, d01, d10, d11])[order]
                return sp.csc_matrix((data, b_indices, b_indptr), shape=(2 * n, 2 * n))

            self._cache["block"] = fill
        return self._cache["block"]

    def weighted_mass(self, c_elem: np.ndarray) -> sp.csc_matrix:
        """Consistent mass matrix with an elementwise constant coefficient."""
        return self.assemble(self.local_mass(c_elem))

    def lumped_mass(self, c_nodal: np.ndarray) -> sp.dia_matrix:
        """Diagonal (nodally lumped) mass matrix weighted by nodal values."""
        return sp.diags(self.lumped * np.asarray(c_nodal, float))

    def weighted_stiffness(self, A_elem: np.ndarray) -> sp.csc_matrix:
        """Stiffness matrix for ``(A grad z, grad psi)`` with elementwise A."""
        return self.assemble(self.local_stiffness(A_elem))

    def convection(self, omega_elem: np.ndarray) -> sp.csc_matrix:
        """Matrix of the form ``(omega . grad z, phi)`` (rows phi, cols z).

        The matrix of ``(p omega, grad psi)`` (rows psi, cols p) is its
        transpose.
        """
        d = self.dim
        om = np.asarray(omega_elem, float).reshape(-1, d)
        E = om.shape[0]
        rows = np.repeat(np.arange(E), d)
        cols = np.arange(E * d)
        W = sp.csr_matrix((om.ravel(), (rows, cols)), shape=(E, E * d))
        scale = sp.diags(self.measures / (d + 1))
        return (self.incidence.T @ scale @ W @ self.grad).tocsc()

    @property
    def grad_t(self) -> sp.csr_matrix:
        """``grad.T`` in CSR form (maps element fluxes to nodal functionals)."""
        if "grad_t" not in self._cache:
            self._cache["grad_t"] = self.grad.T.tocsr()
        return self._cache["grad_t"]

    # -- cached factorizations ----------------------------------------------
    def riesz_factor(self):
        """Factorization of ``M + K`` (the discrete V inner product)."""
        if "riesz" not in self._cache:
            self._cache["riesz"] = spla.splu((self.M + self.K).tocsc())
        return self._cache["riesz"]

    def mass_factor(self):
        if "mass" not in self._cache:
            self._cache["mass"] = spla.splu(self.M.tocsc())
        return self._cache["mass"]


def _assemble_local(grid: SpatialGrid, local: np.ndarray) -> sp.csc_matrix:
    """Sum elementwise (d+1)x(d+1) matrices into a global sparse matrix."""
    k = grid.dim + 1
    el = grid.elements
    rows = np.repeat(el, k, axis=1).ravel()
    cols = np.tile(el, (1, k)).ravel()
    n = grid.n_nodes
    return sp.csc_matrix((np.asarray(local).ravel(), (rows, cols)), shape=(n, n))


def _element_pattern(grid: SpatialGrid):
    """CSC structure of the P1 element graph and the map from local entries to it."""
    k = grid.dim + 1
    el = grid.elements
    rows = np.repeat(el, k, axis=1).ravel()
    cols = np.tile(el, (1, k)).ravel()
    n = grid.n_nodes
    key = cols.astype(np.int64) * n + rows  # column-major order
    uniq, scatter = np.unique(key, return_inverse=True)
    indices = (uniq % n).astype(np.int32)
    counts = np.bincount(uniq // n, minlength=n)
    indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int32)
    return indptr, indices, scatter.ravel()


def _assemble_mass(grid: SpatialGrid, weights: np.ndarray) -> sp.csc_matrix:
    k = grid.dim + 1
    # P1 element mass: |e| (1 + delta_ij) / ((d+1)(d+2))
    local = (np.ones((k, k)) + np.eye(k)) / (k * (k + 1))
    return _assemble_local(grid, weights[:, None, None] * local[None])


def _local_gradients(grid: SpatialGrid) -> np.ndarray:
    """Gradients of the local P1 basis functions, shape (E, d+1, d)."""
    d = grid.dim
    verts = grid.nodes[grid.elements]  # (E, d+1, d)
    B = verts[:, 1:, :] - verts[:, :1, :]  # rows: edge vectors
    Binv = np.linalg.inv(B)  # (E, d, d)
    # reference gradients of barycentric functions
    ref = np.vstack([-np.ones((1, d)), np.eye(d)])  # (d+1, d)
    return np.einsum("eij,kj->eki", Binv, ref)


def _gradient_operator(grid: SpatialGrid) -> sp.csr_matrix:
    d = grid.dim
    G = _local_gradients(grid)
    E = grid.n_elements
    rows = (np.arange(E)[:, None, None] * d + np.arange(d)[None, None, :])
    rows = np.broadcast_to(rows, (E, d + 1, d))
    cols = np.broadcast_to(grid.elements[:, :, None], (E, d + 1, d))
    return sp.csr_matrix(
        (G.ravel(), (rows.ravel(), cols.ravel())), shape=(E * d, grid.n_nodes)
    )


def assemble_operators(grid: SpatialGrid) -> DiscreteOperators:
    """Assemble mass, stiffness, gradient and incidence matrices."""
    meas = grid.element_measures()
    M = _assemble_mass(grid, meas)
    grad = _gradient_operator(grid)
    d = grid.dim
    K = (grad.T @ sp.diags(np.repeat(meas, d)) @ grad).tocsc()
    E, k = grid.elements.shape
    incidence = sp.csr_matrix(
        (np.ones(E * k), (np.repeat(np.arange(E), k), grid.elements.ravel())),
        shape=(E, grid.n_nodes),
    )
    lumped = np.asarray(M.sum(axis=1)).ravel()
    return DiscreteOperators(
        grid=grid,
        M=M,
        K=K,
        grad=grad,
        incidence=incidence,
        measures=meas,
        lumped=lumped,
        local_grads=_local_gradients(grid),
    )


# ---------------------------------------------------------------------------
# norms
# ---------------------------------------------------------------------------


def h_norm(ops: DiscreteOperators, w: np.ndarray) -> float:
    """L2 norm of a P1 field."""
    return math.sqrt(max(float(w @ (ops.M @ w)), 0.0))


def v_norm(ops: DiscreteOperators, w: np.ndarray) -> float:
    """H1 norm of a P1 field."""
    return math.sqrt(max(float(w @ (ops.M @ w) + w @ (ops.K @ w)), 0.0))


def dual_norm(ops: DiscreteOperators, f: np.ndarray) -> float:
    """Norm in V* of the functional with coefficient vector ``f``.

    ``f[j]`` is the action on the j-th basis function; for an L2 field w the
    functional is ``ops.M @ w``.
    """
    x = ops.riesz_factor().solve(np.asarray(f, float))
    return math.sqrt(max(float(f @ x), 0.0))


def field_dual_norm(ops: DiscreteOperators, w: np.ndarray) -> float:
    """V* norm of the L2 field ``w`` viewed as the functional ``(w, .)_H``."""
    return dual_norm(ops, ops.M @ w)


def time_norm(ops: DiscreteOperators, values: np.ndarray, tau: float) -> float:
    """L2(0,T;H) norm of a nodal series by the left rectangle rule."""
    vals = np.asarray(values, float)
    s = sum(float(w @ (ops.M @ w)) for w in vals[:-1])
    return math.sqrt(tau * max(s, 0.0))


def time_inner(ops: DiscreteOperators, a: np.ndarray, b: np.ndarray, tau: float) -> float:
    """L2(0,T;H) inner product by the left rectangle rule."""
    return tau * float(sum(x @ (ops.M @ y) for x, y in zip(a[:-1], b[:-1])))


def step_norm(ops: DiscreteOperators, values: np.ndarray, tau: float, kind: str = "H") -> float:
    """L2-in-time norm of the piecewise constant series ``values[1:]``.

    This is the norm of the forward interpolant: the value with index i is
    held on ``(t_{i-1}, t_i]``.  ``kind`` selects the spatial norm
    (``"H"``, ``"V"`` or ``"V*"`` for H-fields viewed as functionals).
    """
    fn = {"H": h_norm, "V": v_norm, "V*": field_dual_norm}[kind]
    return math.sqrt(tau * sum(fn(ops, w) ** 2 for w in np.asarray(values)[1:]))


# ---------------------------------------------------------------------------
# time interpolation
# ---------------------------------------------------------------------------


def time_interpolate(traj: Trajectory, kind: str, t: float) -> np.ndarray:
    """Evaluate the forward, backward or linear interpolant at time t.

    * forward: ``w_i`` on ``(t_{i-1}, t_i]``, and ``w_0`` for ``t <= 0``
      (the initial element stands in for the value at and before 0);
    * at a time node ``t_i`` every kind returns ``w_i`` (the piecewise
      constant interpolants are only defined up to these single instants);
    * backward: ``w_i`` on ``(t_i, t_{i+1})``;
    * linear: the continuous piecewise linear interpolant.
    """
    T = traj.tgrid.length
    if not (0.0 <= t <= T * (1 + 1e-14)):
        raise ValueError(f"t={t} outside [0, {T}]")
    tau = traj.tgrid.tau
    n = traj.tgrid.n_steps
    vals = traj.values
    s = t / tau
    k = int(round(s))
    on_node = abs(s - k) <= 1e-12 * max(1.0, abs(s))
    if kind == "forward":
        if on_node:
            return vals[min(k, n)].copy()
        return vals[min(int(math.ceil(s)), n)].copy()
    if kind == "backward":
        if on_node:
            return vals[min(k, n)].copy()
        return vals[min(int(math.floor(s)), n)].copy()
    if kind == "linear":
        if on_node:
            return vals[min(k, n)].copy()
        i = min(int(math.floor(s)), n - 1)
        lam = s - i
        return (1 - lam) * vals[i] + lam * vals[i + 1]
    raise ValueError(f"unknown interpolation kind {kind!r}")


def sample_nodes(fn: Callable[[float], np.ndarray], tgrid: TimeGrid) -> np.ndarray:
    """Sample a time-dependent field at the nodes (values at ``t > T`` are
    replaced by the last node inside ``[0, T]``)."""
    out = []
    for i, t in enumerate(tgrid.times):
        if t <= tgrid.T * (1 + 1e-14):
            out.append(np.asarray(fn(t), float))
        else:
            out.append(np.asarray(fn(tgrid.times[i - 1]), float))
    return np.stack(out)


def interval_averages(
    fn: Callable[[float], np.ndarray], tgrid: TimeGrid, order: int = 6
) -> np.ndarray:
    """Averages ``(1/tau) int_{t_{i-1}}^{t_i} w`` of a time-dependent field.

    Index 0 holds ``w(0)`` (unused by the schemes).  The field is extended by
    zero beyond ``T``.  Gauss-Legendre quadrature of the given order.
    """
    xg, wg = np.polynomial.legendre.leggauss(order)
    tau = tgrid.tau
    out = [np.asarray(fn(0.0), float)]
    for i in range(1, tgrid.n_steps + 1):
        a, b = (i - 1) * tau, min(i * tau, tgrid.T)
        if b <= a:
            out.append(np.zeros_like(out[0]))
            continue
        ts = 0.5 * (b - a) * xg + 0.5 * (a + b)
        acc = sum(w * np.asarray(fn(t), float) for w, t in zip(wg, ts))
        out.append(0.5 * (b - a) * acc / tau)
    return np.stack(out)


# ---------------------------------------------------------------------------
# linear solves
# ---------------------------------------------------------------------------


def solve_sparse(A, b: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
    """Solve ``A x = b`` by a sparse direct LU factorization.

    The residual is checked: ``|A x - b|_inf <= rtol * (1 + |b|_inf)``
    scaled by the matrix magnitude.
    """
    A = sp.csc_matrix(A)
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"matrix must be square, got {A.shape}")
    b = np.asarray(b, float)
    try:
        lu = spla.splu(A)
    except RuntimeError as exc:  # "Factor is exactly singular"
        raise SingularSystemError(f"sparse factorization failed: {exc}") from exc
    x = lu.solve(b)
    if not np.all(np.isfinite(x)):
        raise SingularSystemError("factorization produced non-finite values")
    res = np.max(np.abs(A @ x - b)) if b.size else 0.0
    scale = 1.0 + np.max(np.abs(b)) if b.size else 1.0
    anorm = max(1.0, float(abs(A).max()) * (np.max(np.abs(x)) if x.size else 1.0))
    if res > rtol * scale * anorm:
        raise SingularSystemError(f"ill-conditioned solve: residual {res:.3e}")
    return x
