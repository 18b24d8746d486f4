"""Cost functional, adjoint gradients and the projected-gradient optimizer.

The adjoint is obtained by writing the continuous adjoint equations as an
instance of the linear coupled system in reversed time ``s = T - t`` and
discretizing that with the same scheme as the forward linearization.  It
therefore agrees with the exact derivative of the discrete cost up to
``O(tau)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .fem import DiscreteOperators, TimeGrid, time_inner, time_norm
from .kernel import (
    BoxConstraint,
    NonlinearityBundle,
    gamma_eps,
    grad_gamma_eps,
    hess_gamma_eps,
    project_box,
)
from .linear import Septuplet, solve_linear, validate_septuplet
from .params import ProblemParams
from .state import StateInstance, StateTrajectory, solve_state


# ---------------------------------------------------------------------------
# cost
# ---------------------------------------------------------------------------


def cost(ops: DiscreteOperators, tau: float, params: ProblemParams, eta, theta, eta_ad, theta_ad, u, v) -> float:
    """Tracking plus control cost with left-rectangle time quadrature."""
    p = params
    terms = 0.0
    if p.M_eta:
        terms += 0.5 * p.M_eta * time_norm(ops, np.asarray(eta) - eta_ad, tau) ** 2
    if p.M_theta:
        terms += 0.5 * p.M_theta * time_norm(ops, np.asarray(theta) - theta_ad, tau) ** 2
    if p.M_u:
        terms += 0.5 * p.M_u * time_norm(ops, u, tau) ** 2
    if p.M_v:
        terms += 0.5 * p.M_v * time_norm(ops, v, tau) ** 2
    return terms


def state_cost(inst: StateInstance, traj: StateTrajectory) -> float:
    return cost(
        inst.ops, inst.tgrid.tau, inst.params, traj.eta, traj.theta,
        inst.eta_ad, inst.theta_ad, inst.u, inst.v,
    )


# ---------------------------------------------------------------------------
# septuplets of the linearized and adjoint problems
# ---------------------------------------------------------------------------


def time_derivative(series: np.ndarray, tau: float) -> np.ndarray:
    """Backward differences at nodes ``1..n`` and a forward one at node 0."""
    d = np.empty_like(series)
    d[1:] = (series[1:] - series[:-1]) / tau
    d[0] = d[1]
    return d


def time_reverse(series: np.ndarray) -> np.ndarray:
    """``w_i -> w_{n-i}``."""
    return np.asarray(series)[::-1].copy()


def _coefficient_fields(eta, theta, params, bundle, ops, tau):
    eps = params.eps
    d = ops.dim
    n1 = eta.shape[0]
    E = ops.grid.n_elements
    lam = np.empty_like(eta)
    omega = np.empty((n1, E, d))
    A = np.empty((n1, E, d, d))
    for i in range(n1):
        gth = ops.gradients(theta[i])
        mid = ops.midpoint_values(eta[i])
        lam[i] = bundle.dg(eta[i]) + bundle.ddalpha(eta[i]) * ops.nodal_average(gamma_eps(eps, gth))
        omega[i] = bundle.dalpha(mid)[:, None] * grad_gamma_eps(eps, gth)
        A[i] = bundle.alpha(mid)[:, None, None] * hess_gamma_eps(eps, gth)
    return {
        "a": bundle.alpha0(eta),
        "da0": bundle.dalpha0(eta),
        "dt_eta": time_derivative(eta, tau),
        "dt_theta": time_derivative(theta, tau),
        "lam": lam,
        "omega": omega,
        "A": A,
    }


def build_linearized_septuplet(eta, theta, params, bundle: NonlinearityBundle, ops, tgrid: TimeGrid) -> Septuplet:
    """Coefficients of the linearization of the state system around ``(eta, theta)``."""
    if not params.eps > 0:
        raise ValueError("linearization needs eps > 0")
    f = _coefficient_fields(eta, theta, params, bundle, ops, tgrid.tau)
    zero = np.zeros_like(eta)
    S = Septuplet(
        tgrid, a=f["a"], b=zero, c=f["da0"] * f["dt_theta"], lam=f["lam"], xi=zero.copy(),
        omega=f["omega"], A=f["A"], delta_a=bundle.delta_star,
    )
    return validate_septuplet(S, ops)


def build_adjoint_septuplet(eta, theta, params, bundle: NonlinearityBundle, ops, tgrid: TimeGrid) -> Septuplet:
    """Coefficients of the adjoint system written forward in ``s = T - t``.

    The adjoint equations are backward in time with ``-alpha0 d_t z`` and
    ``-alpha0' d_t eta z``; substituting ``s = T - t`` turns the first into
    ``+alpha0 d_s z`` and leaves the reaction coefficient
    ``b = -alpha0'(eta) d_t eta``.  The coupling roles of ``c`` and ``xi``
    swap relative to the linearization.
    """
    if not params.eps > 0:
        raise ValueError("adjoint needs eps > 0")
    f = _coefficient_fields(eta, theta, params, bundle, ops, tgrid.tau)
    R = time_reverse
    zero = np.zeros_like(eta)
    S = Septuplet(
        tgrid,
        a=R(f["a"]),
        b=R(-f["da0"] * f["dt_eta"]),
        c=zero,
        lam=R(f["lam"]),
        xi=R(f["da0"] * f["dt_theta"]),
        omega=R(f["omega"]),
        A=R(f["A"]),
        delta_a=bundle.delta_star,
    )
    return validate_septuplet(S, ops)


# ---------------------------------------------------------------------------
# adjoint, gradient, conjugacy
# ---------------------------------------------------------------------------


@dataclass
class AdjointState:
    p: np.ndarray
    z: np.ndarray

    @property
    def terminal(self) -> tuple[float, float]:
        return float(np.max(np.abs(self.p[-1]))), float(np.max(np.abs(self.z[-1])))


def apply_adjoint(S_adj: Septuplet, h, k, params, ops) -> AdjointState:
    """Reverse the forcings, march the coupled scheme, reverse the result."""
    st = solve_linear(S_adj, 0.0, 0.0, time_reverse(h), time_reverse(k), params, ops)
    return AdjointState(p=time_reverse(st.p), z=time_reverse(st.z))


def solve_adjoint(inst: StateInstance, traj: StateTrajectory, S_adj: Septuplet | None = None) -> AdjointState:
    """Adjoint state driven by the tracking residuals of ``traj``."""
    p = inst.params
    if S_adj is None:
        S_adj = build_adjoint_septuplet(traj.eta, traj.theta, p, inst.bundle, inst.ops, inst.tgrid)
    h = p.M_eta * (traj.eta - inst.eta_ad)
    k = p.M_theta * (traj.theta - inst.theta_ad)
    return apply_adjoint(S_adj, h, k, p, inst.ops)


def gateaux_gradient(u, v, adj: AdjointState, params: ProblemParams):
    """``(L_u p + M_u u, L_v z + M_v v)``."""
    return params.L_u * adj.p + params.M_u * np.asarray(u), params.L_v * adj.z + params.M_v * np.asarray(v)


@dataclass
class ConjugacyResult:
    lhs: float
    rhs: float
    scale: float

    @property
    def gap(self) -> float:
        return abs(self.lhs - self.rhs)

    @property
    def relative(self) -> float:
        return self.gap / self.scale if self.scale > 0 else 0.0


def check_conjugacy(eta, theta, params, bundle, ops, tgrid, uv, hk) -> ConjugacyResult:
    """Compare ``(P*(u,v), (h,k))`` with ``((u,v), Pbar(h,k))`` in ``L2(0,T;H)^2``.

    ``Pbar`` solves the linearized system with zero initial data and
    forcings ``(h, k)``; ``P*`` is the time-reversed adjoint solve.  The
    scale is ``|P*(u,v)| |(h,k)| + |(u,v)| |Pbar(h,k)|``.
    """
    u, v = uv
    h, k = hk
    tau = tgrid.tau
    S_lin = build_linearized_septuplet(eta, theta, params, bundle, ops, tgrid)
    S_adj = build_adjoint_septuplet(eta, theta, params, bundle, ops, tgrid)
    fwd = solve_linear(S_lin, 0.0, 0.0, h, k, params, ops)
    adj = apply_adjoint(S_adj, u, v, params, ops)
    lhs = time_inner(ops, adj.p, h, tau) + time_inner(ops, adj.z, k, tau)
    rhs = time_inner(ops, u, fwd.p, tau) + time_inner(ops, v, fwd.z, tau)

    def nrm(a, b):
        return math.hypot(time_norm(ops, a, tau), time_norm(ops, b, tau))

    scale = nrm(adj.p, adj.z) * nrm(h, k) + nrm(u, v) * nrm(fwd.p, fwd.z)
    return ConjugacyResult(lhs, rhs, scale)


# ---------------------------------------------------------------------------
# optimization
# ---------------------------------------------------------------------------


@dataclass
class OptimizerOptions:
    tol: float = 1e-6
    max_iter: int = 500
    initial_step: float = 1.0
    shrink: float = 0.5
    armijo: float = 1e-4
    max_halvings: int = 40
    vi_samples: int = 100
    seed: int = 0


class LineSearchError(RuntimeError):
    def __init__(self, message, gradient_norm):
        super().__init__(message)
        self.gradient_norm = gradient_norm


@dataclass
class OCPReport:
    u: np.ndarray
    v: np.ndarray
    costs: list[float]
    steps: list[float]
    residuals: list[float]
    converged: bool
    fixed_point_residual: float = float("nan")
    linear_residual: float = float("nan")
    vi_slack: float = float("nan")
    trajectory: StateTrajectory | None = None
    adjoint: AdjointState | None = None
    message: str = ""
    history: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)


def optimality_residuals(u, v, adj: AdjointState, params: ProblemParams, box: BoxConstraint, ops, tau, samples=100, seed=0):
    """Fixed-point residual, linear residual and sampled VI slack."""
    p = params
    if p.M_u > 0:
        target = project_box(box, -(p.L_u / p.M_u) * adj.p)
        fp = time_norm(ops, np.asarray(u) - target, tau)
    else:
        fp = 0.0
    lin = time_norm(ops, p.L_v * adj.z + p.M_v * np.asarray(v), tau)
    gu = p.L_u * adj.p + p.M_u * np.asarray(u)
    rng = np.random.default_rng(seed)
    slack = math.inf
    if p.L_u > 0 or p.M_u > 0:
        for _ in range(samples):
            hs = box.sample(np.shape(u), rng)
            slack = min(slack, time_inner(ops, gu, hs - u, tau))
    else:
        slack = 0.0
    return fp, lin, slack


def _evaluate(inst: StateInstance, u, v):
    trial = inst.with_controls(u, v)
    traj = solve_state(trial)
    return trial, traj, state_cost(trial, traj)


def solve_ocp(inst: StateInstance, box: BoxConstraint, options: OptimizerOptions | None = None,
              u0=None, v0=None, keep_history: bool = False) -> OCPReport:
    """Projected gradient descent with Armijo backtracking.

    ``u <- proj(u - s g_u)``, ``v <- v - s g_v``; a step is accepted when
    ``J_new <= J - c / s * |(u_new, v_new) - (u, v)|^2``.  Iteration stops
    when ``|u - proj(u - g_u)| + |g_v| <= tol``.
    """
    opt = options or OptimizerOptions()
    p = inst.params
    ops, tau = inst.ops, inst.tgrid.tau
    shape = (inst.tgrid.n_steps + 1, ops.n)
    use_u = p.L_u > 0
    use_v = p.L_v > 0
    u = project_box(box, np.zeros(shape)) if u0 is None else project_box(box, np.broadcast_to(u0, shape))
    v = np.zeros(shape) if v0 is None else np.broadcast_to(np.asarray(v0, float), shape).copy()
    if not use_u:
        u = np.zeros(shape)
    if not use_v:
        v = np.zeros(shape)
    trial, traj, J = _evaluate(inst, u, v)
    costs, steps, residuals, history = [J], [], [], []
    converged = False
    message = ""
    s = opt.initial_step
    for it in range(opt.max_iter + 1):
        adj = solve_adjoint(trial, traj)
        gu, gv = gateaux_gradient(u, v, adj, p)
        if not use_u:
            gu = np.zeros(shape)
        if not use_v:
            gv = np.zeros(shape)
        res = time_norm(ops, u - project_box(box, u - gu), tau) + time_norm(ops, gv, tau)
        residuals.append(res)
        if keep_history:
            history.append((u.copy(), v.copy()))
        if res <= opt.tol:
            converged = True
            break
        if it == opt.max_iter:
            message = f"maximum iterations reached (residual {res:.3e})"
            break
        s = opt.initial_step
        accepted = False
        for _ in range(opt.max_halvings + 1):
            un = project_box(box, u - s * gu) if use_u else u
            vn = v - s * gv if use_v else v
            step2 = time_norm(ops, un - u, tau) ** 2 + time_norm(ops, vn - v, tau) ** 2
            t_new, traj_new, J_new = _evaluate(inst, un, vn)
            if J_new <= J - opt.armijo / s * step2:
                accepted = True
                break
            s *= opt.shrink
        if not accepted:
            gnorm = math.hypot(time_norm(ops, gu, tau), time_norm(ops, gv, tau))
            message = f"line search failed after {opt.max_halvings} halvings (gradient norm {gnorm:.3e}, residual {res:.3e})"
            break
        u, v, trial, traj, J = un, vn, t_new, traj_new, J_new
        costs.append(J)
        steps.append(s)
    fp, lin, slack = optimality_residuals(u, v, adj, p, box, ops, tau, opt.vi_samples, opt.seed)
    return OCPReport(
        u=u, v=v, costs=costs, steps=steps, residuals=residuals, converged=converged,
        fixed_point_residual=fp, linear_residual=lin, vi_slack=slack,
        trajectory=traj, adjoint=adj, message=message, history=history,
    )


# ---------------------------------------------------------------------------
# eps continuation
# ---------------------------------------------------------------------------


@dataclass
class EpsLevel:
    eps: float
    report: OCPReport
    cost: float
    varpi_max: float
    sgr_gap: float
    alignment_defect: float
    alignment_bound: float
    xi: np.ndarray
    sigma: np.ndarray


@dataclass
class Eps0Diagnostics:
    levels: list[EpsLevel]
    control_distances: list[float]
    cost_gaps: list[float]
    error: str = ""


def epsilon_continuation(inst: StateInstance, box: BoxConstraint, eps_list, options: OptimizerOptions | None = None,
                         grad_floor: float = 0.1) -> Eps0Diagnostics:
    """Solve the control problem along a decreasing list of ``eps``.

    Each level is warm-started from the previous optimum.  Reported per
    level: ``varpi = grad gamma_eps(grad theta)``, ``xi = d_t theta * z``,
    ``sigma = varpi . grad z``; the largest ``|varpi|``; and the largest
    deviation of ``varpi`` from ``grad theta / |grad theta|`` where
    ``|grad theta| >= grad_floor`` (bounded by ``eps / grad_floor``).
    """
    eps_list = [float(e) for e in eps_list]
    if not eps_list:
        raise ValueError("empty eps list")
    if any(e <= 0 for e in eps_list) or any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps list must be strictly decreasing and positive")
    ops, tau = inst.ops, inst.tgrid.tau
    levels: list[EpsLevel] = []
    u0 = v0 = None
    error = ""
    for eps in eps_list:
        lvl_inst = StateInstance(
            ops, inst.tgrid, inst.params.replace(eps=eps), inst.bundle, inst.eta0, inst.theta0,
            inst.eta_ad, inst.theta_ad, inst.u, inst.v,
        )
        try:
            rep = solve_ocp(lvl_inst, box, options, u0=u0, v0=v0)
        except Exception as exc:  # keep partial results
            error = f"eps={eps}: {exc}"
            break
        u0, v0 = rep.u, rep.v
        traj, adj = rep.trajectory, rep.adjoint
        dt_theta = time_derivative(traj.theta, tau)
        vmax, defect = 0.0, 0.0
        sigma = []
        for i in range(traj.theta.shape[0]):
            gth = ops.gradients(traj.theta[i])
            varpi = grad_gamma_eps(eps, gth)
            vmax = max(vmax, float(np.max(np.linalg.norm(varpi, axis=-1))))
            r = np.linalg.norm(gth, axis=-1)
            mask = r >= grad_floor
            if np.any(mask):
                unit = gth[mask] / r[mask, None]
                defect = max(defect, float(np.max(np.linalg.norm(varpi[mask] - unit, axis=-1))))
            sigma.append(np.sum(varpi * ops.gradients(adj.z[i]), axis=-1))
        levels.append(EpsLevel(
            eps=eps, report=rep, cost=rep.costs[-1], varpi_max=vmax, sgr_gap=vmax - 1.0,
            alignment_defect=defect, alignment_bound=eps / grad_floor,
            xi=dt_theta * adj.z, sigma=np.array(sigma),
        ))
    dists = [
        math.hypot(time_norm(ops, b.report.u - a.report.u, tau), time_norm(ops, b.report.v - a.report.v, tau))
        for a, b in zip(levels, levels[1:])
    ]
    gaps = [abs(b.cost - a.cost) for a, b in zip(levels, levels[1:])]
    return Eps0Diagnostics(levels=levels, control_distances=dists, cost_gaps=gaps, error=error)
