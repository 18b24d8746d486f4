"""Regularized length kernel, its subdifferential, nonlinearities and energy.

The kernel functions are vectorized: ``y`` may be a single N-vector or an
array of shape ``(..., N)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.interpolate import CubicSpline

from .fem import DiscreteOperators


# ---------------------------------------------------------------------------
# gamma_eps and derivatives
# ---------------------------------------------------------------------------


def gamma_eps(eps: float, y) -> np.ndarray:
    """``sqrt(eps^2 + |y|^2)`` along the last axis."""
    if eps < 0:
        raise ValueError(f"eps must be nonnegative, got {eps}")
    y = np.asarray(y, float)
    return np.sqrt(eps * eps + np.sum(y * y, axis=-1))


def grad_gamma_eps(eps: float, y) -> np.ndarray:
    """Gradient ``y / sqrt(eps^2 + |y|^2)``; requires ``eps > 0``."""
    if not eps > 0:
        raise ValueError("grad_gamma_eps needs eps > 0; use sgr for eps = 0")
    y = np.asarray(y, float)
    return y / gamma_eps(eps, y)[..., None]


def hess_gamma_eps(eps: float, y) -> np.ndarray:
    """Hessian ``(g^2 I - y y^T) / g^3`` with ``g = gamma_eps(eps, y)``."""
    if not eps > 0:
        raise ValueError("hess_gamma_eps needs eps > 0")
    y = np.asarray(y, float)
    g = gamma_eps(eps, y)[..., None, None]
    d = y.shape[-1]
    eye = np.eye(d)
    outer = y[..., :, None] * y[..., None, :]
    return (g * g * eye - outer) / g**3


class BallMarker:
    """The closed unit ball, returned by :func:`sgr` at the origin."""

    def __init__(self, dim: int):
        self.dim = dim

    def contains(self, w, tol: float = 1e-12) -> bool:
        w = np.asarray(w, float)
        return w.shape[-1] == self.dim and float(np.linalg.norm(w)) <= 1.0 + tol

    def __repr__(self):
        return f"BallMarker(dim={self.dim})"

    def __eq__(self, other):
        return isinstance(other, BallMarker) and other.dim == self.dim


def sgr(y):
    """Subdifferential of the Euclidean norm at ``y``.

    Returns the unit vector ``y / |y|`` for ``y != 0`` and a
    :class:`BallMarker` for ``y = 0``.
    """
    y = np.asarray(y, float)
    r = float(np.linalg.norm(y))
    if r == 0.0:
        return BallMarker(y.shape[-1])
    return y / r


def in_sgr(y, w, tol: float = 1e-12) -> bool:
    """Membership test ``w in Sgr(y)``."""
    s = sgr(y)
    if isinstance(s, BallMarker):
        return s.contains(w, tol)
    return bool(np.linalg.norm(np.asarray(w, float) - s) <= tol)


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------


Scalar = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class NonlinearityBundle:
    """Scalar nonlinearities of the state system.

    ``g`` is the derivative of the potential ``G``; ``alpha0`` weights the
    orientation relaxation, ``alpha`` the orientation energy.  ``delta_star``
    is the declared lower bound of ``alpha0``.
    """

    g: Scalar
    dg: Scalar
    G: Scalar
    alpha0: Scalar
    dalpha0: Scalar
    alpha: Scalar
    dalpha: Scalar
    ddalpha: Scalar
    delta_star: float
    name: str = "custom"

    def validate(self, lo: float = -3.0, hi: float = 3.0, n: int = 2001, tol: float = 1e-6):
        """Spot-check the structural assumptions on ``n`` samples of [lo, hi].

        Checks ``G >= 0``, ``G' = g`` and ``g' = dg`` (central differences),
        ``alpha'' >= 0``, ``alpha'(0) = 0`` and ``alpha0 >= delta_star``.
        Raises ``ValueError`` listing the first violation.
        """
        if not self.delta_star > 0:
            raise ValueError("delta_star must be positive")
        s = np.linspace(lo, hi, n)
        h = 1e-5
        checks = {
            "G >= 0": np.all(self.G(s) >= -tol),
            "G' = g": np.allclose((self.G(s + h) - self.G(s - h)) / (2 * h), self.g(s), atol=1e-5, rtol=1e-5),
            "g' = dg": np.allclose((self.g(s + h) - self.g(s - h)) / (2 * h), self.dg(s), atol=1e-5, rtol=1e-5),
            "alpha0' = dalpha0": np.allclose(
                (self.alpha0(s + h) - self.alpha0(s - h)) / (2 * h), self.dalpha0(s), atol=1e-5, rtol=1e-5
            ),
            "alpha' = dalpha": np.allclose(
                (self.alpha(s + h) - self.alpha(s - h)) / (2 * h), self.dalpha(s), atol=1e-5, rtol=1e-5
            ),
            "alpha'' = ddalpha": np.allclose(
                (self.dalpha(s + h) - self.dalpha(s - h)) / (2 * h), self.ddalpha(s), atol=1e-5, rtol=1e-5
            ),
            "alpha'' >= 0": np.all(self.ddalpha(s) >= -tol),
            "alpha'(0) = 0": abs(float(self.dalpha(np.array(0.0)))) <= tol,
            "alpha0 >= delta_star": np.all(self.alpha0(s) >= self.delta_star - tol),
            "alpha >= 0": np.all(self.alpha(s) >= -tol),
        }
        bad = [k for k, ok in checks.items() if not ok]
        if bad:
            raise ValueError(f"nonlinearity bundle {self.name!r} violates: {', '.join(bad)}")
        return self


def default_bundle(delta_star: float = 1.0) -> NonlinearityBundle:
    """``g = eta - 1``, ``G = (eta - 1)^2 / 2``, ``alpha0 = delta* + eta^2``,
    ``alpha = 1 + eta^2``."""
    ds = float(delta_star)
    return NonlinearityBundle(
        g=lambda s: np.asarray(s, float) - 1.0,
        dg=lambda s: np.ones_like(np.asarray(s, float)),
        G=lambda s: 0.5 * (np.asarray(s, float) - 1.0) ** 2,
        alpha0=lambda s: ds + np.asarray(s, float) ** 2,
        dalpha0=lambda s: 2.0 * np.asarray(s, float),
        alpha=lambda s: 1.0 + np.asarray(s, float) ** 2,
        dalpha=lambda s: 2.0 * np.asarray(s, float),
        ddalpha=lambda s: 2.0 * np.ones_like(np.asarray(s, float)),
        delta_star=ds,
        name="default",
    )


def tabulated_bundle(s, G, alpha0, alpha, delta_star: float, name: str = "tabulated") -> NonlinearityBundle:
    """Bundle interpolating tabulated ``G``, ``alpha0``, ``alpha`` by cubic splines.

    ``g``, ``dg``, ``dalpha0``, ``dalpha`` and ``ddalpha`` are spline
    derivatives.  Outside the table the splines are extrapolated, so tables
    should cover the range the state visits.
    """
    s = np.asarray(s, float)
    if s.ndim != 1 or s.size < 4 or np.any(np.diff(s) <= 0):
        raise ValueError("table abscissae must be strictly increasing with at least 4 entries")
    sG = CubicSpline(s, np.asarray(G, float))
    sa0 = CubicSpline(s, np.asarray(alpha0, float))
    sa = CubicSpline(s, np.asarray(alpha, float))
    return NonlinearityBundle(
        g=sG.derivative(1), dg=sG.derivative(2), G=sG,
        alpha0=sa0, dalpha0=sa0.derivative(1),
        alpha=sa, dalpha=sa.derivative(1), ddalpha=sa.derivative(2),
        delta_star=float(delta_star), name=name,
    )


# ---------------------------------------------------------------------------
# energy
# ---------------------------------------------------------------------------


def kwc_energy(
    ops: DiscreteOperators,
    eps: float,
    bundle: NonlinearityBundle,
    eta: np.ndarray,
    theta: np.ndarray,
) -> float:
    """Free energy ``1/2 int |grad eta|^2 + int G(eta) + int alpha(eta) gamma_eps(grad theta)``.

    Gradients are exact per element; ``G(eta)`` and ``alpha(eta)`` are
    evaluated at element midpoints.
    """
    eta = np.asarray(eta, float)
    grad_term = 0.5 * float(eta @ (ops.K @ eta))
    mid = ops.midpoint_values(eta)
    gam = gamma_eps(eps, ops.gradients(np.asarray(theta, float)))
    local = bundle.G(mid) + bundle.alpha(mid) * gam
    return grad_term + float(ops.measures @ local)


# ---------------------------------------------------------------------------
# box constraint
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoxConstraint:
    """Pointwise bounds ``lower <= u <= upper`` (arrays or scalars that
    broadcast against the control layout)."""

    lower: np.ndarray | float
    upper: np.ndarray | float

    def __post_init__(self):
        if np.any(np.asarray(self.lower) > np.asarray(self.upper)):
            raise ValueError("box constraint needs lower <= upper everywhere")

    def contains(self, u, tol: float = 0.0) -> bool:
        u = np.asarray(u, float)
        return bool(np.all(u >= np.asarray(self.lower) - tol) and np.all(u <= np.asarray(self.upper) + tol))

    def sample(self, shape, rng: np.random.Generator) -> np.ndarray:
        """Uniform random element of the box (finite bounds required)."""
        lo = np.broadcast_to(np.asarray(self.lower, float), shape)
        hi = np.broadcast_to(np.asarray(self.upper, float), shape)
        return lo + (hi - lo) * rng.random(shape)


def project_box(constraint: BoxConstraint, u) -> np.ndarray:
    """Nodewise projection ``max(lower, min(upper, u))``."""
    return np.maximum(np.asarray(constraint.lower, float), np.minimum(np.asarray(constraint.upper, float), np.asarray(u, float)))
