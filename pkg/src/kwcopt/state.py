"""Time stepping for the nonlinear state system.

Each step first advances the order parameter ``eta`` by backward Euler with
the orientation ``theta`` frozen at its previous value, then advances
``theta`` by minimizing a strictly convex functional with ``eta`` fixed at
its new value.  Both substeps use damped Newton iterations.

The eta step solves, for nodal ``eta``::

    (1/tau)(M + mu^2 K)(eta - eta_prev) + K eta
        + m * g(eta) + m * alpha'(eta) * Gamma  =  L_u M u_i

where ``m`` is the lumped mass and ``Gamma`` the lumped nodal projection of
``gamma_eps(grad theta_prev)``.  The theta step minimizes::

    1/(2 tau) (th - th_prev)^T (M_a + nu^2 K) (th - th_prev)
        + sum_e |e| alpha(eta_mid) gamma_eps(grad th) - L_v (M v_i)^T th

with ``M_a`` the mass matrix weighted by ``alpha0(eta)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fem import DiscreteOperators, TimeGrid, dual_norm
from .kernel import NonlinearityBundle, gamma_eps, grad_gamma_eps, hess_gamma_eps, kwc_energy
from .params import ProblemParams

NEWTON_TOL = 1e-10
NEWTON_MAXITER = 50
MAX_HALVINGS = 30


class StateSolveError(RuntimeError):
    """Newton failure inside a state step."""

    def __init__(self, message: str, step: int | None = None, residual: float | None = None):
        super().__init__(message)
        self.step = step
        self.residual = residual


@dataclass
class StateInstance:
    """Everything needed to march the state system.

    Controls are trajectories ``(n_steps + 1, n_nodes)`` (scalars and single
    fields broadcast); targets may be single fields or trajectories.
    """

    ops: DiscreteOperators
    tgrid: TimeGrid
    params: ProblemParams
    bundle: NonlinearityBundle
    eta0: np.ndarray
    theta0: np.ndarray
    eta_ad: np.ndarray
    theta_ad: np.ndarray
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        n, nn = self.tgrid.n_steps + 1, self.ops.n
        self.eta0 = np.asarray(self.eta0, float)
        self.theta0 = np.asarray(self.theta0, float)
        self.u = np.broadcast_to(np.asarray(self.u, float), (n, nn)).copy()
        self.v = np.broadcast_to(np.asarray(self.v, float), (n, nn)).copy()
        # targets are static fields (one value per node) or trajectories
        for name in ("eta_ad", "theta_ad"):
            arr = np.asarray(getattr(self, name), float)
            shape = (n, nn) if arr.ndim == 2 else (nn,)
            try:
                arr = np.broadcast_to(arr, shape).copy()
            except ValueError:
                raise ValueError(f"{name} must have shape ({nn},) or ({n}, {nn}), got {arr.shape}") from None
            setattr(self, name, arr)
        for name in ("eta0", "theta0"):
            arr = getattr(self, name)
            if arr.shape != (nn,):
                raise ValueError(f"{name} must have one value per node")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be finite")
        if self.params.T != self.tgrid.T:
            raise ValueError("params.T and the time grid horizon differ")

    def with_controls(self, u, v) -> "StateInstance":
        return StateInstance(
            self.ops, self.tgrid, self.params, self.bundle, self.eta0, self.theta0,
            self.eta_ad, self.theta_ad, u, v,
        )


@dataclass
class StepInfo:
    eta_iterations: int
    eta_residual: float
    theta_iterations: int
    theta_residual: float


@dataclass
class StateTrajectory:
    eta: np.ndarray
    theta: np.ndarray
    energy: np.ndarray
    steps: list[StepInfo] = field(default_factory=list)


def _newton(residual, jacobian, x0, merit, step_index, label):
    """Damped Newton: halve the update until the merit value decreases."""
    x = x0.copy()
    r = residual(x)
    val = merit(x, r)
    for it in range(NEWTON_MAXITER + 1):
        if val <= NEWTON_TOL:
            return x, it, val
        if it == NEWTON_MAXITER:
            break
        dx = spla.spsolve(jacobian(x), -r)
        s = 1.0
        for _ in range(MAX_HALVINGS + 1):
            xn = x + s * dx
            rn = residual(xn)
            vn = merit(xn, rn)
            if vn < val or not np.isfinite(val):
                break
            s *= 0.5
        else:
            # no decrease possible: accept only if already at round-off level
            if val <= 1e3 * NEWTON_TOL:
                return x, it, val
            raise StateSolveError(
                f"{label} line search failed at step {step_index} (residual {val:.3e})",
                step_index, val,
            )
        x, r, val = xn, rn, vn
    raise StateSolveError(
        f"{label} Newton did not converge at step {step_index} (residual {val:.3e})",
        step_index, val,
    )


def step_state(
    eta_prev: np.ndarray,
    theta_prev: np.ndarray,
    u_i: np.ndarray,
    v_i: np.ndarray,
    params: ProblemParams,
    bundle: NonlinearityBundle,
    ops: DiscreteOperators,
    tau: float,
    step_index: int = 0,
):
    """Advance the state by one time step; returns ``(eta, theta, info)``."""
    eps = params.eps
    if not eps > 0:
        raise ValueError("state solves need eps > 0 (reach eps = 0 by continuation)")
    if not tau > 0:
        raise ValueError("tau must be positive")
    M, K, m = ops.M, ops.K, ops.lumped
    mu2, nu2 = params.mu**2, params.nu**2

    def vstar(x, r):
        return dual_norm(ops, r)

    # -- eta step (theta lagged) -------------------------------------------
    Gam = ops.nodal_average(gamma_eps(eps, ops.gradients(theta_prev)))
    key = ("state_eta", tau, mu2)
    if key not in ops._cache:
        P = ((M + mu2 * K) / tau).tocsc()
        ops._cache[key] = (P, (P + K).tocsc())
    P_eta, A_eta = ops._cache[key]
    f_eta = params.L_u * (M @ u_i)

    # the time-difference term is applied to the increment, which keeps the
    # residual free of cancellation when tau is small
    def res_eta(e):
        return P_eta @ (e - eta_prev) + K @ e + m * (bundle.g(e) + bundle.dalpha(e) * Gam) - f_eta

    def jac_eta(e):
        J = A_eta.copy()
        J.setdiag(J.diagonal() + m * (bundle.dg(e) + bundle.ddalpha(e) * Gam))
        return J

    eta, it_e, r_e = _newton(res_eta, jac_eta, eta_prev, vstar, step_index, "eta")

    # -- theta step (convex minimization with eta fixed) --------------------
    mid = ops.midpoint_values(eta)
    a_elem = ops.midpoint_values(bundle.alpha0(eta))
    alpha_elem = bundle.alpha(mid)
    local_B = (ops.local_mass(a_elem) + nu2 * ops.local_stiffness(np.broadcast_to(np.eye(ops.dim), (len(a_elem), ops.dim, ops.dim)))) / tau
    B_theta = ops.assemble(local_B)
    f_theta = params.L_v * (M @ v_i)
    w = ops.measures * alpha_elem
    d = ops.dim

    def res_theta(th):
        flux = grad_gamma_eps(eps, ops.gradients(th)) * w[:, None]
        return B_theta @ (th - theta_prev) + ops.grad_t @ flux.ravel() - f_theta

    def jac_theta(th):
        H = hess_gamma_eps(eps, ops.gradients(th)) * (alpha_elem[:, None, None])
        return ops.assemble(local_B + ops.local_stiffness(H.reshape(-1, d, d)))

    theta, it_t, r_t = _newton(res_theta, jac_theta, theta_prev, vstar, step_index, "theta")
    return eta, theta, StepInfo(it_e, r_e, it_t, r_t)


def energy_trace(ops, eps, bundle, eta: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Free energy at every time node."""
    return np.array([kwc_energy(ops, eps, bundle, e, t) for e, t in zip(eta, theta)])


def solve_state(inst: StateInstance) -> StateTrajectory:
    """March the state system over the whole time grid."""
    p = inst.params
    if not p.eps > 0:
        raise ValueError("state solves need eps > 0 (reach eps = 0 by continuation)")
    n = inst.tgrid.n_steps
    tau = inst.tgrid.tau
    eta = np.empty((n + 1, inst.ops.n))
    theta = np.empty_like(eta)
    eta[0], theta[0] = inst.eta0, inst.theta0
    infos = []
    for i in range(1, n + 1):
        eta[i], theta[i], info = step_state(
            eta[i - 1], theta[i - 1], inst.u[i], inst.v[i], p, inst.bundle, inst.ops, tau, i
        )
        infos.append(info)
    energy = energy_trace(inst.ops, p.eps, inst.bundle, eta, theta)
    return StateTrajectory(eta=eta, theta=theta, energy=energy, steps=infos)
