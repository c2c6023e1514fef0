"""Model-based tracker turning the homodyne current into a state estimate."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
import math

import numpy as np
from scipy import linalg, optimize

from . import _kernels as K
from .core import HBAR, K_B, ControlInput, GaussianMoments, PhysicalParams, gas_decoherence_rate
from .emulate import param_vector


class TrackingLost(RuntimeError):
    """The tracker state became non-finite."""


class SteadyStateError(RuntimeError):
    pass


class TrackingMode(str, Enum):
    MODULATED = "modulated"
    UNMODULATED = "unmodulated"

    def beta(self, p: PhysicalParams) -> float:
        """Modulation depth the tracker equations are evaluated with."""
        return p.beta if self is TrackingMode.MODULATED else 0.0


@dataclass(frozen=True)
class TrackerState:
    moments: GaussianMoments
    mode: TrackingMode = TrackingMode.MODULATED
    time: float = 0.0


def step_tracking(x: TrackerState, J: float, c: ControlInput, p: PhysicalParams,
                  dt: float) -> TrackerState:
    """Advance the tracker by ``dt`` using the held current sample ``J``.

    RK4 on the full right-hand side; the innovation pulls the mean position
    and momentum toward ``J`` with gain 8 eta k times Vz and C.
    """
    m = x.moments
    out = K.track_step(
        (m.mean_z, m.mean_p, m.var_z, m.var_p, m.cov), c.u, c.v, float(J),
        param_vector(p), x.mode.beta(p), True, dt,
    )
    t = x.time + dt
    if not all(math.isfinite(v) for v in out):
        raise TrackingLost(f"non-finite tracker state at t={t:.6g} s")
    return TrackerState(GaussianMoments(*out), x.mode, t)


def predict(x: TrackerState, c: ControlInput, p: PhysicalParams, duration: float,
            dt: float) -> TrackerState:
    """Propagate the tracker without measurement updates (zero innovation)."""
    n = max(1, int(round(duration / dt)))
    m = x.moments
    out = K.track_propagate((m.mean_z, m.mean_p, m.var_z, m.var_p, m.cov), c.u, c.v, 0.0,
                            param_vector(p), x.mode.beta(p), False, duration / n, n)
    t = x.time + duration
    if not all(math.isfinite(v) for v in out):
        raise TrackingLost(f"non-finite tracker state at t={t:.6g} s")
    return TrackerState(GaussianMoments(*out), x.mode, t)


def _scales(p: PhysicalParams):
    return math.sqrt(HBAR / (p.mass * p.omega)), math.sqrt(HBAR * p.mass * p.omega)


def _scaled_system(p: PhysicalParams, b: float):
    z0, p0 = _scales(p)
    w, gc = p.omega, p.gamma_c
    k = p.alpha * (1 + b)
    A = np.array([[-gc, w], [-w * (1 + b), -gc]])
    posdiff = HBAR**2 * gc / (4 * p.mass * K_B * p.temperature)
    Q = np.diag([posdiff / z0**2, (HBAR**2 * gas_decoherence_rate(p) + 2 * HBAR**2 * k) / p0**2])
    g = 8 * p.eta * k * z0**2
    return A, Q, g


def _residual(s, A, Q, g):
    S = np.array([[s[0], s[2]], [s[2], s[1]]])
    R = A @ S + S @ A.T + Q - g * S[:, :1] @ S[:1, :]
    return np.array([R[0, 0], R[1, 1], R[0, 1]])


def steady_state_variances(p: PhysicalParams, u_const: float = 0.0,
                           mode: TrackingMode = TrackingMode.MODULATED):
    """Stable fixed point (Vz, Vp, C) of the tracker variance equations.

    Solved as a filter Riccati equation in oscillator units, then polished
    with a Newton iteration. Raises :class:`SteadyStateError` on failure.
    """
    if abs(u_const) > 1:
        raise ValueError("u_const: must satisfy |u| <= 1")
    b = (p.beta if mode is TrackingMode.MODULATED else 0.0) * u_const
    A, Q, g = _scaled_system(p, b)
    if g <= 0:
        raise SteadyStateError("no measurement: the variance equations have no stable root")
    try:
        S = linalg.solve_continuous_are(A.T, np.array([[1.0], [0.0]]), Q, np.array([[1.0 / g]]))
    except (linalg.LinAlgError, ValueError) as exc:
        raise SteadyStateError(f"Riccati solver failed: {exc}") from exc
    s0 = np.array([S[0, 0], S[1, 1], 0.5 * (S[0, 1] + S[1, 0])])
    sol = optimize.root(_residual, s0, args=(A, Q, g), method="hybr", tol=1e-14)
    s = sol.x if sol.success else s0
    scale = np.abs(s).max()
    if not (np.all(np.isfinite(s)) and s[0] > 0 and s[1] > 0
            and np.abs(_residual(s, A, Q, g)).max() <= 1e-8 * max(1.0, g * scale**2)):
        raise SteadyStateError("Riccati root did not converge to a positive solution")
    z0, p0 = _scales(p)
    return float(s[0] * z0**2), float(s[1] * p0**2), float(s[2] * HBAR)
