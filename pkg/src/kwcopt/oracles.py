"""Brute-force reference computations for tests.

Nothing here is meant to be fast: the space-time system is assembled as one
dense matrix, and finite differences call the full state solver.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import root

from .control import state_cost
from .fem import DiscreteOperators
from .linear import Septuplet, discretize_forcing
from .params import ProblemParams
from .kernel import NonlinearityBundle, gamma_eps, grad_gamma_eps
from .state import StateInstance, solve_state

MAX_NODES = 16
MAX_STEPS = 8


def _dense(A) -> np.ndarray:
    return A.toarray() if hasattr(A, "toarray") else np.asarray(A)


def _dense_step_blocks(sl, params: ProblemParams, ops: DiscreteOperators, tau: float):
    """Step matrices rebuilt entry by entry from elementwise integrals."""
    grid = ops.grid
    n, d = ops.n, ops.dim
    M = _dense(ops.M)
    K = _dense(ops.K)
    G = ops.local_grads
    meas = ops.measures
    Ma = np.zeros((n, n))
    KA = np.zeros((n, n))
    C = np.zeros((n, n))
    a_mid = sl["a"][grid.elements].mean(axis=1)
    k = d + 1
    mass_local = (np.ones((k, k)) + np.eye(k)) / (k * (k + 1))
    for e, nodes in enumerate(grid.elements):
        for r, i in enumerate(nodes):
            for s, j in enumerate(nodes):
                Ma[i, j] += a_mid[e] * meas[e] * mass_local[r, s]
                KA[i, j] += meas[e] * G[e, r] @ sl["A"][e] @ G[e, s]
                # (omega . grad phi_j, phi_i): grad phi_j constant, int phi_i = |e|/(d+1)
                C[i, j] += meas[e] / k * sl["omega"][e] @ G[e, s]
    lump = M.sum(axis=1)
    P_p = (M + params.mu**2 * K) / tau
    P_z = (Ma + params.nu**2 * K) / tau
    top_left = P_p + K + np.diag(lump * sl["lam"])
    bottom_right = P_z + np.diag(lump * sl["b"]) + KA
    system = np.block([[top_left, C], [C.T, bottom_right]])
    coupling = np.block([[P_p, -np.diag(lump * sl["xi"])], [-np.diag(lump * sl["c"]), P_z]])
    return system, coupling, M


@dataclass
class MonolithicSystem:
    """Dense space-time system ``L X = rhs`` for ``X = [p_1, z_1, ..., p_n, z_n]``.

    ``forcing_map`` is block diagonal with the mass matrix, so that
    ``rhs = forcing_map @ F + initial`` with ``F = [h_1, k_1, ..., h_n, k_n]``.
    """

    matrix: np.ndarray
    rhs: np.ndarray
    forcing_map: np.ndarray
    initial: np.ndarray
    n_nodes: int
    n_steps: int

    def index(self, step: int, fld: int, node: int) -> int:
        """Row of unknown ``fld`` (0 = p, 1 = z) at ``node`` and time step ``step >= 1``."""
        return ((step - 1) * 2 + fld) * self.n_nodes + node

    def unpack(self, X: np.ndarray, p0, z0):
        n, m = self.n_nodes, self.n_steps
        blocks = X.reshape(m, 2, n)
        p = np.vstack([p0[None, :], blocks[:, 0, :]])
        z = np.vstack([z0[None, :], blocks[:, 1, :]])
        return p, z

    def solve(self) -> np.ndarray:
        return np.linalg.solve(self.matrix, self.rhs)


def assemble_spacetime(S: Septuplet, params: ProblemParams, ops: DiscreteOperators, p0, z0, h, k) -> MonolithicSystem:
    """Assemble the block-bidiagonal space-time matrix of the coupled scheme."""
    n, m = ops.n, S.tgrid.n_steps
    if n > MAX_NODES or m > MAX_STEPS:
        raise ValueError(f"oracle limited to {MAX_NODES} nodes x {MAX_STEPS} steps (got {n} x {m})")
    tau = S.tgrid.tau
    hh = discretize_forcing(h, S.tgrid, n)
    kk = discretize_forcing(k, S.tgrid, n)
    p0 = np.broadcast_to(np.asarray(p0, float), (n,))
    z0 = np.broadcast_to(np.asarray(z0, float), (n,))
    N2 = 2 * n
    L = np.zeros((m * N2, m * N2))
    B = np.zeros((m * N2, m * N2))
    init = np.zeros(m * N2)
    F = np.zeros(m * N2)
    for i in range(1, m + 1):
        system, coupling, M = _dense_step_blocks(S.slice(i), params, ops, tau)
        r = slice((i - 1) * N2, i * N2)
        L[r, r] = system
        if i > 1:
            L[r, slice((i - 2) * N2, (i - 1) * N2)] = -coupling
        else:
            init[r] = coupling @ np.concatenate([p0, z0])
        B[r, r] = np.block([[M, np.zeros((n, n))], [np.zeros((n, n)), M]])
        F[r] = np.concatenate([hh[i], kk[i]])
    return MonolithicSystem(L, B @ F + init, B, init, n, m)


def exact_adjoint_pairing(system: MonolithicSystem, ops: DiscreteOperators, tau: float, u, v, h, k) -> float:
    """Pairing ``((u, v), Pbar(h, k))`` evaluated through the transposed system.

    With the left-rectangle weight ``W`` (``tau M`` on nodes ``1..n-1``) and
    zero initial data, ``(U, L^{-1} B F)_W = (L^{-T} W U) . (B F)``.
    """
    n, m = system.n_nodes, system.n_steps
    M = _dense(ops.M)
    WU = np.zeros(m * 2 * n)
    for i in range(1, m):  # node m carries zero weight in the left rule
        WU[system.index(i, 0, 0): system.index(i, 0, 0) + n] = tau * M @ u[i]
        WU[system.index(i, 1, 0): system.index(i, 1, 0) + n] = tau * M @ v[i]
    Y = np.linalg.solve(system.matrix.T, WU)
    F = np.zeros(m * 2 * n)
    for i in range(1, m + 1):
        F[system.index(i, 0, 0): system.index(i, 0, 0) + n] = h[i]
        F[system.index(i, 1, 0): system.index(i, 1, 0) + n] = k[i]
    return float(Y @ (system.forcing_map @ F))


@dataclass
class FDResult:
    value: float
    value_half: float

    @property
    def richardson_gap(self) -> float:
        return abs(self.value - self.value_half)


def fd_gradient(inst: StateInstance, direction, delta: float = 1e-4) -> FDResult:
    """Central difference of the cost along ``direction = (h, k)`` at the
    controls of ``inst``, with steps ``delta`` and ``delta / 2``."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    h, k = direction

    def J(s):
        trial = inst.with_controls(inst.u + s * h, inst.v + s * k)
        return state_cost(trial, solve_state(trial))

    def central(dl):
        return (J(dl) - J(-dl)) / (2 * dl)

    if not (np.any(h) or np.any(k)):
        return FDResult(0.0, 0.0)
    return FDResult(central(delta), central(delta / 2))


def _element_geometry(ops: DiscreteOperators):
    """Per element: vertex list, measure and basis gradients from coordinates."""
    grid = ops.grid
    d = grid.dim
    out = []
    for nodes in grid.elements:
        X = grid.nodes[nodes]  # (d+1, d)
        # barycentric coordinates: [1, x] @ coef = identity
        V = np.hstack([np.ones((d + 1, 1)), X])
        coef = np.linalg.inv(V)  # column j: coefficients of phi_j
        grads = coef[1:, :].T  # (d+1, d)
        vol = abs(np.linalg.det(X[1:] - X[0])) / math.factorial(d)
        out.append((nodes, vol, grads))
    return out


def dense_state_step(eta_prev, theta_prev, u_i, v_i, params: ProblemParams, bundle: NonlinearityBundle,
                     ops: DiscreteOperators, tau: float):
    """One state step solved with a general-purpose root finder on dense residuals.

    The residuals are rebuilt from element loops and vertex coordinates, so
    this is independent of the sparse Newton implementation.
    """
    if ops.n > MAX_NODES:
        raise ValueError(f"oracle limited to {MAX_NODES} nodes (got {ops.n})")
    geo = _element_geometry(ops)
    n, d = ops.n, ops.dim
    k = d + 1
    M = np.zeros((n, n))
    K = np.zeros((n, n))
    ref = (np.ones((k, k)) + np.eye(k)) / (k * (k + 1))
    for nodes, vol, G in geo:
        M[np.ix_(nodes, nodes)] += vol * ref
        K[np.ix_(nodes, nodes)] += vol * G @ G.T
    lump = M.sum(axis=1)
    eps = params.eps

    def grad_of(w, nodes, G):
        return G.T @ w[nodes]

    Gam = np.zeros(n)
    for nodes, vol, G in geo:
        Gam[nodes] += vol / k * float(gamma_eps(eps, grad_of(theta_prev, nodes, G)))
    Gam /= lump

    def res_eta(e):
        return ((M + params.mu**2 * K) @ (e - eta_prev) / tau + K @ e
                + lump * (bundle.g(e) + bundle.dalpha(e) * Gam) - params.L_u * M @ u_i)

    sol = root(res_eta, eta_prev, method="hybr", options={"xtol": 1e-14})
    eta = sol.x

    Ma = np.zeros((n, n))
    for nodes, vol, G in geo:
        Ma[np.ix_(nodes, nodes)] += np.mean(bundle.alpha0(eta[nodes])) * vol * ref

    def res_theta(th):
        r = (Ma + params.nu**2 * K) @ (th - theta_prev) / tau - params.L_v * M @ v_i
        for nodes, vol, G in geo:
            a = float(bundle.alpha(np.mean(eta[nodes])))
            r[nodes] += vol * a * G @ grad_gamma_eps(eps, grad_of(th, nodes, G))
        return r

    sol2 = root(res_theta, theta_prev, method="hybr", options={"xtol": 1e-14})
    return eta, sol2.x
