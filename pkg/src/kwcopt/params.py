"""Scalar model and cost constants."""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict


@dataclass(frozen=True)
class ProblemParams:
    """Model, cost and embedding constants.

    ``mu`` and ``nu`` weight the pseudo-parabolic terms, ``eps`` regularizes
    the length kernel.  ``L_u``/``L_v`` scale the controls in the state
    equations; ``M_eta``, ``M_theta``, ``M_u``, ``M_v`` weight the cost.
    ``C_emb`` is an upper bound for the embedding constant of H1 into L4;
    overestimating it only makes step-size bounds more conservative.
    """

    mu: float = 1.0
    nu: float = 1.0
    eps: float = 0.5
    L_u: float = 1.0
    L_v: float = 1.0
    M_eta: float = 1.0
    M_theta: float = 1.0
    M_u: float = 1.0
    M_v: float = 1.0
    T: float = 1.0
    C_emb: float = 2.0

    def __post_init__(self):
        for name in ("mu", "nu", "T", "C_emb"):
            val = getattr(self, name)
            if not (val > 0 and math.isfinite(val)):
                raise ValueError(f"{name} must be positive and finite, got {val}")
        for name in ("eps", "L_u", "L_v", "M_eta", "M_theta", "M_u", "M_v"):
            val = getattr(self, name)
            if not (val >= 0 and math.isfinite(val)):
                raise ValueError(f"{name} must be nonnegative and finite, got {val}")
        # a control either enters both the state and the cost, or neither
        for L, M, tag in ((self.L_u, self.M_u, "u"), (self.L_v, self.M_v, "v")):
            if L * M == 0 and L + M > 0:
                raise ValueError(
                    f"L_{tag} and M_{tag} must be both positive or both zero "
                    f"(got L_{tag}={L}, M_{tag}={M})"
                )

    def replace(self, **changes) -> "ProblemParams":
        d = asdict(self)
        d.update(changes)
        return ProblemParams(**d)

    @property
    def coercivity(self) -> float:
        """``min(1, mu^2, nu^2)``."""
        return min(1.0, self.mu**2, self.nu**2)


def interval_embedding_constant(length: float = 1.0) -> float:
    """Embedding constant of H1(0, L) into L4(0, L).

    ``sup |w|^2 <= coth(L) |w|_{H1}^2`` (maximum of the Neumann Green's
    function of ``-w'' + w`` on the diagonal), hence
    ``int w^4 <= sup|w|^2 int w^2 <= coth(L) |w|_{H1}^4``.
    """
    if not length > 0:
        raise ValueError("interval length must be positive")
    return (1.0 / math.tanh(length)) ** 0.25
