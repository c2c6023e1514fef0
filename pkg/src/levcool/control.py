"""Feedback laws: double-phase parametric, cold damping, and bang-bang plans
chosen by enumerating every sign sequence over one measurement interval."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
import math

import numpy as np

from . import _kernels as K
from .core import HBAR, K_B, GaussianMoments, PhysicalParams
from .emulate import param_vector

MAX_ENUMERATION_STEPS = 12


class ControlInfeasible(RuntimeError):
    """Every candidate plan predicted a non-finite state."""


class ControllerKind(str, Enum):
    OFF = "off"
    DOUBLE_PHASE = "double_phase"
    COLD_DAMPING = "cold_damping"
    OPTIMAL_QUADRATIC = "optimal_quadratic"
    OPTIMAL_LINEAR = "optimal_linear"
    OPTIMAL_COMBINED = "optimal_combined"

    @property
    def code(self) -> int:
        return _CODES[self]

    @property
    def is_optimal(self) -> bool:
        return self.name.startswith("OPTIMAL")

    @property
    def uses_u(self) -> bool:
        return self in (ControllerKind.DOUBLE_PHASE, ControllerKind.OPTIMAL_QUADRATIC,
                        ControllerKind.OPTIMAL_COMBINED)

    @property
    def uses_v(self) -> bool:
        return self in (ControllerKind.COLD_DAMPING, ControllerKind.OPTIMAL_LINEAR,
                        ControllerKind.OPTIMAL_COMBINED)


_CODES = {
    ControllerKind.OFF: K.OFF,
    ControllerKind.DOUBLE_PHASE: K.DOUBLE_PHASE,
    ControllerKind.COLD_DAMPING: K.COLD_DAMPING,
    ControllerKind.OPTIMAL_QUADRATIC: K.OPT_QUAD,
    ControllerKind.OPTIMAL_LINEAR: K.OPT_LIN,
    ControllerKind.OPTIMAL_COMBINED: K.OPT_COMB,
}


@dataclass(frozen=True)
class ControlPlan:
    """Controls for the N sub-steps of one measurement interval.

    ``cost`` is the predicted mean energy at the end of the horizon and
    ``branches`` the number of candidate plans that were evaluated.
    """

    horizon: float
    sub_steps: int
    u_seq: tuple
    v_seq: tuple
    cost: float = math.nan
    branches: int = 0

    def __post_init__(self):
        if len(self.u_seq) != self.sub_steps or len(self.v_seq) != self.sub_steps:
            raise ValueError("plan sequences must have one entry per sub-step")

    @classmethod
    def null(cls, horizon: float, sub_steps: int) -> "ControlPlan":
        z = (0.0,) * sub_steps
        return cls(horizon, sub_steps, z, z)


def _tuple(x):
    if hasattr(x, "moments"):
        x = x.moments
    if isinstance(x, GaussianMoments):
        return (x.mean_z, x.mean_p, x.var_z, x.var_p, x.cov)
    return tuple(float(v) for v in np.asarray(x, dtype=float))


def double_phase(x, m: float, omega: float, e_floor: float | None = None) -> float:
    """Parametric signal ``omega * z * p / E`` from the estimated means.

    Bounded by 1 (AM-GM); zero below ``e_floor`` (default 1e-3 hbar omega).
    """
    z, p = _tuple(x)[:2]
    if e_floor is None:
        e_floor = 1e-3 * HBAR * omega
    return float(K.double_phase_u(z, p, m, omega, e_floor))


def thermal_velocity(p: PhysicalParams) -> float:
    return math.sqrt(K_B * p.temperature / p.mass)


def cold_damping(x, m: float, v_scale: float) -> float:
    """Velocity-opposing signal ``-p / (m v_scale)`` clipped to [-1, 1]."""
    if not v_scale > 0:
        raise ValueError("v_scale: must be positive")
    return float(K.cold_damping_v(_tuple(x)[1], m, v_scale))


def lookahead_propagate(x, plan: ControlPlan, p: PhysicalParams) -> float:
    """Predicted mean energy after applying ``plan`` from the estimate ``x``.

    The future current is unknown, so the tracker equations are run without
    innovation. Returns ``inf`` if the prediction is non-finite.
    """
    dtc = plan.horizon / plan.sub_steps
    return float(K.lookahead(_tuple(x), np.asarray(plan.u_seq, float),
                             np.asarray(plan.v_seq, float), param_vector(p), p.beta, dtc))


def enumerate_optimal(x, p: PhysicalParams, timing, kind: ControllerKind,
                      prev: ControlPlan | None = None) -> ControlPlan:
    """Best sign plan over one interval by exhaustive enumeration.

    ``timing`` provides the interval ``dt`` and the sub-step count ``N``.
    Quadratic and linear modes enumerate 2**N plans, the combined mode 4**N.
    Near-ties are broken toward fewer switches from the end of ``prev``,
    then lexicographically with +1 first.
    """
    kind = ControllerKind(kind)
    if not kind.is_optimal:
        raise ValueError(f"kind: {kind.value} is not an enumerated controller")
    n = int(timing.N)
    if not 1 <= n <= MAX_ENUMERATION_STEPS:
        raise ValueError(f"N: enumeration supports 1..{MAX_ENUMERATION_STEPS} sub-steps")
    last_u = last_v = 1.0
    if prev is not None and prev.sub_steps:
        if prev.u_seq[-1] != 0:
            last_u = float(prev.u_seq[-1])
        if prev.v_seq[-1] != 0:
            last_v = float(prev.v_seq[-1])
    us = np.zeros(n)
    vs = np.zeros(n)
    costs = np.empty(4**n if kind is ControllerKind.OPTIMAL_COMBINED else 2**n)
    cost, total = K.enumerate_plans(_tuple(x), param_vector(p), p.beta, kind.code, n,
                                    timing.dt / n, last_u, last_v, us, vs, costs)
    if not math.isfinite(cost):
        raise ControlInfeasible("every candidate plan diverged")
    return ControlPlan(timing.dt, n, tuple(us.tolist()), tuple(vs.tolist()), float(cost), int(total))
