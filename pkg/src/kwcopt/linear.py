"""Linear pseudo-parabolic system with a coefficient septuplet.

The system couples two scalar unknowns p, z through coefficients
``[a, b, c, lam, xi, omega, A]``::

    d_t p - div grad(p + mu^2 d_t p) + lam p + xi z + omega . grad z = h
    a d_t z + b z + c p - div(A grad z + nu^2 grad d_t z + p omega) = k

with homogeneous Neumann conditions.  Time stepping (step i, size tau)::

    (1/tau)(M + mu^2 K)(p_i - p_{i-1}) + K p_i + M_lam p_i + M_xi z_{i-1}
        + C_omega z_i = M h_i
    (1/tau)(M_a + nu^2 K)(z_i - z_{i-1}) + M_b z_i + M_c p_{i-1}
        + K_A z_i + C_omega^T p_i = M k_i

where ``M_lam``, ``M_xi``, ``M_b``, ``M_c`` are nodally lumped, ``M_a`` is the
consistent mass matrix with the element-midpoint value of ``a`` and
``C_omega`` is the matrix of ``(omega . grad z, phi)``.  Each step solves the
coupled 2n x 2n block system by one sparse LU factorization.

Coefficients are sampled at the time nodes (index i is used in step i);
forcings given as functions of time are averaged over each step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fem import (
    DiscreteOperators,
    SingularSystemError,
    TimeGrid,
    field_dual_norm,
    h_norm,
    interval_averages,
    v_norm,
)
from .params import ProblemParams


class SeptupletError(ValueError):
    """A coefficient septuplet violates the admissibility conditions."""


class StepSizeError(ValueError):
    """The time step is too large for the coupled scheme."""

    def __init__(self, tau: float, bound: float):
        super().__init__(f"time step {tau:.6g} is not below the admissible bound tau1 = {bound:.6g}")
        self.tau = tau
        self.bound = bound


# ---------------------------------------------------------------------------
# septuplets
# ---------------------------------------------------------------------------


@dataclass
class Septuplet:
    """Coefficient series on the time nodes ``0..n``.

    Scalar entries have shape ``(n+1, n_nodes)``; ``omega`` has shape
    ``(n+1, n_elements, dim)`` and ``A`` ``(n+1, n_elements, dim, dim)``.
    ``norms`` is filled by :func:`validate_septuplet`.
    """

    tgrid: TimeGrid
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    lam: np.ndarray
    xi: np.ndarray
    omega: np.ndarray
    A: np.ndarray
    delta_a: float
    norms: dict = field(default_factory=dict)

    def slice(self, i: int) -> dict:
        return {k: getattr(self, k)[i] for k in ("a", "b", "c", "lam", "xi", "omega", "A")}

    def map(self, fn) -> "Septuplet":
        """Apply ``fn`` to every coefficient series (e.g. time reversal)."""
        return Septuplet(
            self.tgrid,
            *(fn(getattr(self, k)) for k in ("a", "b", "c", "lam", "xi", "omega", "A")),
            delta_a=self.delta_a,
        )


def septuplet_norms(S: Septuplet, ops: DiscreteOperators) -> dict:
    """Norms entering the step-size bounds and stability constants.

    Time norms are those of the piecewise constant interpolant that holds
    slice i on ``(t_{i-1}, t_i]``, so only slices ``1..n`` contribute;
    ``dta`` uses the difference quotients ``(a_i - a_{i-1}) / tau``.
    """
    tau = S.tgrid.tau

    def hh(series):
        return math.sqrt(tau * sum(h_norm(ops, w) ** 2 for w in series[1:]))

    dta = math.sqrt(tau * sum(h_norm(ops, (S.a[i] - S.a[i - 1]) / tau) ** 2 for i in range(1, len(S.a))))
    om = float(np.max(np.linalg.norm(S.omega[1:], axis=-1))) if S.omega.size else 0.0
    Anorm = float(np.max(np.abs(np.linalg.eigvalsh(S.A[1:])))) if S.A.size else 0.0
    return {
        "a_C": max(h_norm(ops, w) for w in S.a),
        "a0_H": h_norm(ops, S.a[0]),
        "dta": dta,
        "b": hh(S.b),
        "c": hh(S.c),
        "lam": hh(S.lam),
        "xi": hh(S.xi),
        "omega_inf": om,
        "A_inf": Anorm,
    }


def validate_septuplet(S: Septuplet, ops: DiscreteOperators) -> Septuplet:
    """Check the admissibility conditions and cache the norms."""
    n1 = S.tgrid.n_steps + 1
    nn, E, d = ops.n, ops.grid.n_elements, ops.dim
    shapes = {
        "a": (n1, nn), "b": (n1, nn), "c": (n1, nn), "lam": (n1, nn), "xi": (n1, nn),
        "omega": (n1, E, d), "A": (n1, E, d, d),
    }
    for k, shp in shapes.items():
        arr = np.asarray(getattr(S, k), float)
        if arr.shape != shp:
            raise SeptupletError(f"{k} has shape {arr.shape}, expected {shp}")
        if not np.all(np.isfinite(arr)):
            raise SeptupletError(f"{k} contains non-finite values")
        setattr(S, k, arr)
    if not S.delta_a > 0:
        raise SeptupletError("delta_a must be positive")
    amin = float(S.a.min())
    if amin < S.delta_a:
        i, j = np.unravel_index(np.argmin(S.a), S.a.shape)
        raise SeptupletError(f"a = {amin:.6g} < delta_a = {S.delta_a} at time index {i}, node {j}")
    asym = np.abs(S.A - np.swapaxes(S.A, -1, -2))
    scale = 1.0 + np.abs(S.A).max()
    if asym.max() > 1e-12 * scale:
        i, e = np.unravel_index(np.argmax(asym.max(axis=(-1, -2))), asym.shape[:2])
        raise SeptupletError(f"A is not symmetric (defect {asym.max():.3e}) at time index {i}, element {e}")
    eig = np.linalg.eigvalsh(0.5 * (S.A + np.swapaxes(S.A, -1, -2)))
    if eig.min() < -1e-12 * scale:
        i, e = np.unravel_index(np.argmin(eig.min(axis=-1)), eig.shape[:2])
        raise SeptupletError(f"A is indefinite (eigenvalue {eig.min():.3e}) at time index {i}, element {e}")
    S.norms = septuplet_norms(S, ops)
    if not all(math.isfinite(v) for v in S.norms.values()):
        raise SeptupletError("septuplet norms are not finite")
    return S


def _coercivity(S: Septuplet, params: ProblemParams) -> float:
    return min(1.0, S.delta_a, params.mu**2, params.nu**2)


def tau1(S: Septuplet, params: ProblemParams) -> float:
    """Largest admissible time step of the coupled scheme."""
    n = S.norms
    C2 = params.C_emb**2
    return _coercivity(S, params) / (8 * (C2 + 1) * (n["lam"] + n["b"] + n["omega_inf"] + 1))


def tau2(S: Septuplet, params: ProblemParams) -> float:
    """Time step below which the discrete stability estimates are proven."""
    n = S.norms
    C2 = params.C_emb**2
    num = min(1.0, S.delta_a**2, params.mu**4, params.nu**4)
    s = n["lam"] + n["xi"] + n["b"] + n["c"] + n["dta"] + n["omega_inf"] + 1
    return min(num / (16 * (C2 + 1) ** 2 * s**2), tau1(S, params))


# ---------------------------------------------------------------------------
# time stepping
# ---------------------------------------------------------------------------


def step_matrices(sl: dict, params: ProblemParams, ops: DiscreteOperators, tau: float):
    """Block matrices of one step.

    Returns ``(system, P_p, P_z, M_xi, M_c)`` where ``system`` is the
    2n x 2n matrix acting on ``[p_i; z_i]``, ``P_p = (M + mu^2 K)/tau`` and
    ``P_z = (M_a + nu^2 K)/tau``.
    """
    key = ("linear_base", tau, params.mu, params.nu)
    if key not in ops._cache:
        eye = np.broadcast_to(np.eye(ops.dim), (ops.grid.n_elements, ops.dim, ops.dim))
        ones = np.ones(ops.grid.n_elements)
        d_M = ops.pattern_data(ops.local_mass(ones))
        d_K = ops.pattern_data(ops.local_stiffness(eye))
        d_Pp = (d_M + params.mu**2 * d_K) / tau
        ops._cache[key] = (d_K, d_Pp, ops.assemble(ops.local_mass(ones) + params.mu**2 * ops.local_stiffness(eye)) / tau)
    d_K, d_Pp, P_p = ops._cache[key]
    diag = ops.diagonal_positions()
    d_Mz = ops.pattern_data(ops.local_mass(ops.midpoint_values(sl["a"])))
    d_Pz = (d_Mz + params.nu**2 * d_K) / tau
    d_C = ops.pattern_data(ops.local_convection(sl["omega"]))
    d_tl = d_Pp + d_K
    d_tl[diag] += ops.lumped * sl["lam"]
    d_br = d_Pz + ops.pattern_data(ops.local_stiffness(sl["A"]))
    d_br[diag] += ops.lumped * sl["b"]
    system = ops.block_assembler()(d_tl, d_C, d_C[ops.transpose_positions()], d_br)
    indptr, indices, _ = ops._pattern()
    P_z = sp.csc_matrix((d_Pz, indices, indptr), shape=(ops.n, ops.n))
    return system, P_p, P_z, ops.lumped_mass(sl["xi"]), ops.lumped_mass(sl["c"])


def step_linear(
    S: Septuplet,
    i: int,
    p_prev: np.ndarray,
    z_prev: np.ndarray,
    h_i: np.ndarray,
    k_i: np.ndarray,
    params: ProblemParams,
    ops: DiscreteOperators,
    tau: float,
    check_residual: bool = True,
):
    """One step of the coupled scheme using coefficient slice i."""
    bound = tau1(S, params)
    if not tau < bound:
        raise StepSizeError(tau, bound)
    system, P_p, P_z, M_xi, M_c = step_matrices(S.slice(i), params, ops, tau)
    M = ops.M
    rhs = np.concatenate([
        P_p @ p_prev - M_xi @ z_prev + M @ h_i,
        P_z @ z_prev - M_c @ p_prev + M @ k_i,
    ])
    try:
        lu = spla.splu(system)
    except RuntimeError as exc:
        raise SingularSystemError(f"block system of step {i} is singular: {exc}") from exc
    x = lu.solve(rhs)
    if check_residual:
        res = np.max(np.abs(system @ x - rhs))
        scale = abs(system).max() * max(1.0, np.max(np.abs(x))) + np.max(np.abs(rhs))
        if not res <= 1e-10 * scale:
            raise SingularSystemError(f"block system of step {i}: residual {res:.3e}")
    n = ops.n
    return x[:n], x[n:]


@dataclass
class LinearState:
    p: np.ndarray
    z: np.ndarray
    h: np.ndarray
    k: np.ndarray

    @property
    def p0(self):
        return self.p[0]

    @property
    def z0(self):
        return self.z[0]


def discretize_forcing(f, tgrid: TimeGrid, n_nodes: int) -> np.ndarray:
    """Forcing series ``(n+1, n_nodes)``: arrays are taken as node values,
    callables ``t -> field`` are averaged over each step; ``None`` is zero."""
    if f is None:
        return np.zeros((tgrid.n_steps + 1, n_nodes))
    if callable(f):
        return interval_averages(f, tgrid)
    arr = np.broadcast_to(np.asarray(f, float), (tgrid.n_steps + 1, n_nodes))
    return arr.copy()


def solve_linear(
    S: Septuplet,
    p0: np.ndarray,
    z0: np.ndarray,
    h,
    k,
    params: ProblemParams,
    ops: DiscreteOperators,
) -> LinearState:
    """March the coupled scheme over the septuplet's time grid."""
    tg = S.tgrid
    tau = tg.tau
    if not S.norms:
        validate_septuplet(S, ops)
    bound = tau1(S, params)
    if not tau < bound:
        raise StepSizeError(tau, bound)
    hh = discretize_forcing(h, tg, ops.n)
    kk = discretize_forcing(k, tg, ops.n)
    n = tg.n_steps
    p = np.empty((n + 1, ops.n))
    z = np.empty_like(p)
    p[0] = np.broadcast_to(np.asarray(p0, float), (ops.n,))
    z[0] = np.broadcast_to(np.asarray(z0, float), (ops.n,))
    for i in range(1, n + 1):
        p[i], z[i] = step_linear(S, i, p[i - 1], z[i - 1], hh[i], kk[i], params, ops, tau)
    return LinearState(p=p, z=z, h=hh, k=kk)


def residual_forcing(state: LinearState, S: Septuplet, params: ProblemParams, ops: DiscreteOperators):
    """Recover the forcings from a trajectory by applying the step equations.

    Returns ``(h, k)`` as H-fields, index 0 set to zero.
    """
    p, z = state.p, state.z
    if p.shape[0] < 2:
        raise ValueError("need at least two time nodes")
    tau = S.tgrid.tau
    lu = ops.mass_factor()
    h = np.zeros_like(p)
    k = np.zeros_like(z)
    for i in range(1, p.shape[0]):
        sl = S.slice(i)
        _, P_p, P_z, M_xi, M_c = step_matrices(sl, params, ops, tau)
        C = ops.convection(sl["omega"])
        fh = P_p @ (p[i] - p[i - 1]) + ops.K @ p[i] + ops.lumped_mass(sl["lam"]) @ p[i] + M_xi @ z[i - 1] + C @ z[i]
        fk = (
            P_z @ (z[i] - z[i - 1])
            + ops.lumped_mass(sl["b"]) @ z[i]
            + M_c @ p[i - 1]
            + ops.weighted_stiffness(sl["A"]) @ z[i]
            + C.T @ p[i]
        )
        h[i] = lu.solve(fh)
        k[i] = lu.solve(fk)
    return h, k


# ---------------------------------------------------------------------------
# stability and continuous dependence diagnostics
# ---------------------------------------------------------------------------


def forcing_dual_norm(ops: DiscreteOperators, series: np.ndarray, tau: float) -> float:
    """L2(0,T;V*) norm of the forcing series (slices 1..n)."""
    return math.sqrt(tau * sum(field_dual_norm(ops, w) ** 2 for w in series[1:]))


def energies(state: LinearState, S: Septuplet, params: ProblemParams, ops: DiscreteOperators) -> np.ndarray:
    """``X_i = |p_i|^2 + mu^2 |grad p_i|^2 + |sqrt(a_i) z_i|^2 + nu^2 |grad z_i|^2``."""
    out = []
    for i, (p, z) in enumerate(zip(state.p, state.z)):
        Ma = ops.weighted_mass(ops.midpoint_values(S.a[i]))
        out.append(
            p @ (ops.M @ p) + params.mu**2 * p @ (ops.K @ p) + z @ (Ma @ z) + params.nu**2 * z @ (ops.K @ z)
        )
    return np.array(out)


@dataclass
class StabilityReport:
    C1: float
    C2: float
    X: np.ndarray
    est1_lhs: np.ndarray
    est1_rhs: float
    est2_lhs: float
    est2_rhs: float
    est3_lhs: float
    est3_rhs: float
    slack: float = -1e-9

    def _ok(self, lhs, rhs) -> bool:
        lhs = np.max(lhs)
        return bool(rhs - lhs >= self.slack * max(abs(rhs), abs(lhs), 1e-300))

    @property
    def est1_ok(self) -> bool:
        return self._ok(self.est1_lhs, self.est1_rhs)

    @property
    def est2_ok(self) -> bool:
        return self._ok(self.est2_lhs, self.est2_rhs)

    @property
    def est3_ok(self) -> bool:
        return self._ok(self.est3_lhs, self.est3_rhs)

    @property
    def passed(self) -> bool:
        return self.est1_ok and self.est2_ok and self.est3_ok

    def as_dict(self) -> dict:
        return {
            "C1": self.C1, "C2": self.C2,
            "est1_lhs_max": float(np.max(self.est1_lhs)), "est1_rhs": self.est1_rhs,
            "est2_lhs": self.est2_lhs, "est2_rhs": self.est2_rhs,
            "est3_lhs": self.est3_lhs, "est3_rhs": self.est3_rhs,
            "passed": self.passed,
        }


def stability_constants(S: Septuplet, params: ProblemParams, ops: DiscreteOperators):
    """``(C1, C2)`` for the discrete energy estimates."""
    nrm = S.norms
    C = params.C_emb
    Tl = S.tgrid.length
    coer = _coercivity(S, params)
    C1 = 8 * (C**2 + 1) / coer * (
        nrm["dta"] + nrm["b"] + nrm["c"] + nrm["lam"] + nrm["xi"] + nrm["omega_inf"] + 1
    )
    C2 = (
        17 * (C**4 + 1) * (Tl + 1) * (1 + params.mu**2 + params.nu**2 + C**2 * nrm["a0_H"])
        / min(1.0, S.delta_a**2, params.mu**4, params.nu**4)
    )
    return C1, C2


def stability_check(state: LinearState, S: Septuplet, params: ProblemParams, ops: DiscreteOperators) -> StabilityReport:
    """Evaluate both sides of the three discrete energy estimates."""
    tau = S.tgrid.tau
    Tl = S.tgrid.length
    C1, C2 = stability_constants(S, params, ops)
    X = energies(state, S, params, ops)
    hn2 = forcing_dual_norm(ops, state.h, tau) ** 2
    kn2 = forcing_dual_norm(ops, state.k, tau) ** 2
    data = v_norm(ops, state.p[0]) ** 2 + v_norm(ops, state.z[0]) ** 2 + hn2 + kn2
    with np.errstate(over="ignore"):
        e4 = math.exp(min(4 * C1 * (Tl + 1), 700))
        e5 = math.exp(min(5 * C1 * (Tl + 1), 700))
    est1_rhs = e4 * X[0] + 2 * (hn2 + kn2)
    dp = sum(v_norm(ops, state.p[i] - state.p[i - 1]) ** 2 for i in range(1, len(X)))
    dz = sum(v_norm(ops, state.z[i] - state.z[i - 1]) ** 2 for i in range(1, len(X)))
    est2_lhs = min(1.0, params.mu**2) / (4 * tau) * dp
    est3_lhs = min(S.delta_a, params.nu**2) / (4 * tau) * dz
    est2_rhs = C2 * e5 * data
    est3_rhs = C2 * e5 * (S.norms["A_inf"] ** 2 + 1) * data
    return StabilityReport(C1, C2, X, X[1:], est1_rhs, est2_lhs, est2_rhs, est3_lhs, est3_rhs)


def solution_norm(state: LinearState, ops: DiscreteOperators, tau: float) -> float:
    """``|[p,z]|_{W^{1,2}(0,T;V)} + |[p,z]|_{C([0,T];V)}`` of the piecewise
    linear interpolants."""
    def vip(x, y):
        return float(x @ (ops.M @ y) + x @ (ops.K @ y))

    l2 = 0.0
    d2 = 0.0
    for w in (state.p, state.z):
        for i in range(1, w.shape[0]):
            a, b = w[i - 1], w[i]
            l2 += tau / 3.0 * (vip(a, a) + vip(a, b) + vip(b, b))
            d2 += vip(b - a, b - a) / tau
    cmax = max(math.sqrt(vip(p, p) + vip(z, z)) for p, z in zip(state.p, state.z))
    return math.sqrt(l2 + d2) + cmax


def data_norm(state: LinearState, ops: DiscreteOperators, tau: float) -> float:
    """``|[[p0, z0], [h, k]]|`` in ``V^2 x (L2(0,T;V*))^2``."""
    return math.sqrt(
        v_norm(ops, state.p[0]) ** 2
        + v_norm(ops, state.z[0]) ** 2
        + forcing_dual_norm(ops, state.h, tau) ** 2
        + forcing_dual_norm(ops, state.k, tau) ** 2
    )


def isomorphism_constants(S: Septuplet, params: ProblemParams, ops: DiscreteOperators):
    """Lower and upper constants ``(M0, M1)`` of the two-sided bound
    ``M0 |data| <= ||[p,z]|| <= M1 |data|``."""
    nrm = S.norms
    C = params.C_emb
    Tl = S.tgrid.length
    C1, C2 = stability_constants(S, params, ops)
    coer = _coercivity(S, params)
    with np.errstate(over="ignore"):
        e5 = math.exp(min(5 * C1 * (Tl + 1), 700))
    M1 = math.sqrt(
        48 * (1 + params.mu**2 + params.nu**2 + C**2) * nrm["a0_H"] / coer * C2 * e5 * (nrm["A_inf"] + 1)
    )
    C4 = 4 * math.sqrt(2) * (1 + params.mu**2 + params.nu**2) * (1 + C**2)
    total = nrm["a_C"] + nrm["b"] + nrm["c"] + nrm["lam"] + nrm["xi"] + nrm["A_inf"] + nrm["omega_inf"] + 1
    M0 = 2 ** -0.5 / (C4 + 1) / total
    return M0, M1


@dataclass
class GronwallDiagnostic:
    J: np.ndarray
    R0: np.ndarray
    R1: np.ndarray
    bound: np.ndarray
    rel_slack: float = 1e-6

    @property
    def passed(self) -> bool:
        return bool(np.all(self.J <= self.bound * (1 + self.rel_slack) + 1e-300))

    def as_dict(self) -> dict:
        ratio = np.where(self.bound > 0, self.J / np.where(self.bound > 0, self.bound, 1), 0.0)
        return {"max_J": float(self.J.max()), "max_ratio": float(ratio.max()), "passed": self.passed}


def gronwall_diagnostic(
    st1: LinearState,
    st2: LinearState,
    S1: Septuplet,
    S2: Septuplet,
    params: ProblemParams,
    ops: DiscreteOperators,
) -> GronwallDiagnostic:
    """Continuous-dependence bound for two solutions of the coupled system.

    Rates are evaluated at the right end of each step and integrated by the
    matching rectangle rule.
    """
    tau = S1.tgrid.tau
    C = params.C_emb
    coer = _coercivity(S1, params)
    n1 = st1.p.shape[0]
    dp, dz = st1.p - st2.p, st1.z - st2.z
    J = np.array([
        dp[i] @ (ops.M @ dp[i]) + params.mu**2 * dp[i] @ (ops.K @ dp[i])
        + dz[i] @ (ops.weighted_mass(ops.midpoint_values(S1.a[i])) @ dz[i])
        + params.nu**2 * dz[i] @ (ops.K @ dz[i])
        for i in range(n1)
    ])
    R0 = np.zeros(n1)
    R1 = np.zeros(n1)
    F = np.zeros(n1)
    for i in range(1, n1):
        dta = h_norm(ops, (S1.a[i] - S1.a[i - 1]) / tau)
        R0[i] = 12 * (C**2 + 1) / coer * (
            h_norm(ops, S1.lam[i]) + h_norm(ops, S1.xi[i]) + dta + h_norm(ops, S1.b[i])
            + h_norm(ops, S1.c[i]) + float(np.max(np.linalg.norm(S1.omega[i], axis=-1))) + 1
        )
        p2, z2 = st2.p[i], st2.z[i]
        gz2 = ops.gradients(z2)
        dom = S1.omega[i] - S2.omega[i]
        dA = S1.A[i] - S2.A[i]
        R1[i] = (
            v_norm(ops, p2) ** 2 * (h_norm(ops, S1.lam[i] - S2.lam[i]) ** 2 + h_norm(ops, S1.c[i] - S2.c[i]) ** 2)
            + v_norm(ops, z2) ** 2 * (
                h_norm(ops, S1.xi[i] - S2.xi[i]) ** 2
                + h_norm(ops, S1.a[i] - S2.a[i]) ** 2
                + h_norm(ops, S1.b[i] - S2.b[i]) ** 2
            )
            + float(ops.measures @ np.sum(gz2 * dom, axis=-1) ** 2)
            + float(ops.measures @ np.sum(np.einsum("eij,ej->ei", dA, gz2) ** 2, axis=-1))
            + float(p2 @ (ops.weighted_mass(np.sum(dom**2, axis=-1)) @ p2))
        )
        F[i] = field_dual_norm(ops, st1.h[i] - st2.h[i]) ** 2 + field_dual_norm(ops, st1.k[i] - st2.k[i]) ** 2
    cum = lambda arr: tau * np.cumsum(arr)  # noqa: E731  (R[0] = 0 by construction)
    with np.errstate(over="ignore"):
        bound = np.exp(np.minimum(cum(R0), 700)) * (J[0] + cum(F) + (C**2 + 1) * cum(R1))
    return GronwallDiagnostic(J=J, R0=R0, R1=R1, bound=bound)
