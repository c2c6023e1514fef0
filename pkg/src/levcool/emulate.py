"""Stochastic emulation of the monitored particle and its homodyne record.

The emulator stands in for the experiment: it integrates Ito SDEs for the
five Gaussian moments, driven by detected-photon (dW), undetected-photon (dV)
and gas-collision (dZ) Wiener increments, and produces the measured current.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np

from . import _kernels as K
from .core import (
    HBAR,
    K_B,
    ControlInput,
    GaussianMoments,
    PhysicalParams,
    gas_decoherence_rate,
)


class ParticleLost(RuntimeError):
    """The emulated state became non-finite."""


@dataclass(frozen=True)
class ModelOptions:
    """Switches for the ambiguous damping terms of the emulation model.

    ``gas_sign=+1`` damps the position variance (-2 gamma_c Vz); ``-1``
    reproduces the anti-damped form. ``y5_damping`` adds -2 gamma_c C to the
    covariance equation, as in the tracker.
    """

    gas_sign: int = 1
    y5_damping: bool = False

    def __post_init__(self):
        if self.gas_sign not in (1, -1):
            raise ValueError("gas_sign: must be +1 or -1")


@dataclass(frozen=True)
class NoiseIncrements:
    dW: float = 0.0
    dV: float = 0.0
    dZ: float = 0.0


@dataclass(frozen=True)
class EmulationState:
    moments: GaussianMoments
    time: float = 0.0


@dataclass
class RngStreams:
    """Independent generators for dW, dV, dZ and Brownian-bridge refinement.

    The four streams are spawned from one 64-bit seed with
    :class:`numpy.random.SeedSequence`, so equal seeds give bit-identical
    sequences on every platform.
    """

    seed: int
    w: np.random.Generator = field(init=False, repr=False)
    v: np.random.Generator = field(init=False, repr=False)
    z: np.random.Generator = field(init=False, repr=False)
    bridge: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed: must be an unsigned 64-bit integer")
        ss = np.random.SeedSequence(int(self.seed)).spawn(4)
        self.w, self.v, self.z, self.bridge = (
            np.random.Generator(np.random.PCG64(s)) for s in ss
        )

    def draw(self, dt: float) -> NoiseIncrements:
        s = math.sqrt(dt)
        return NoiseIncrements(
            s * self.w.standard_normal(),
            s * self.v.standard_normal(),
            s * self.z.standard_normal(),
        )


def derive_seed(seed: int, *key: int) -> int:
    """Deterministic child seed for (point, repeat) style indices."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, np.uint64)[0])


def param_vector(p: PhysicalParams, options: ModelOptions | None = None) -> np.ndarray:
    options = options or ModelOptions()
    P = np.zeros(K.N_PARAMS)
    P[K.I_M] = p.mass
    P[K.I_W] = p.omega
    P[K.I_ETA] = p.eta
    P[K.I_ALPHA] = p.alpha
    P[K.I_GC] = p.gamma_c
    P[K.I_GAMMA] = gas_decoherence_rate(p)
    P[K.I_BETA] = p.beta
    P[K.I_DELTA] = p.delta
    P[K.I_HBAR] = HBAR
    # gamma_c^2 / Gamma with Gamma substituted
    P[K.I_POSDIFF] = HBAR**2 * p.gamma_c / (4 * p.mass * K_B * p.temperature)
    P[K.I_GAS_SIGN] = options.gas_sign
    P[K.I_Y5_DAMP] = 1.0 if options.y5_damping else 0.0
    return P


def _moments(y) -> tuple:
    if isinstance(y, EmulationState):
        y = y.moments
    if isinstance(y, GaussianMoments):
        return (y.mean_z, y.mean_p, y.var_z, y.var_p, y.cov)
    a = np.asarray(y, dtype=float)
    return tuple(float(v) for v in a)


def _time(y) -> float:
    return y.time if isinstance(y, EmulationState) else 0.0


def _finish(y, t: float) -> EmulationState:
    if not all(math.isfinite(v) for v in y):
        raise ParticleLost(f"non-finite emulated state at t={t:.6g} s")
    return EmulationState(GaussianMoments(*y), t)


def drift(y, c: ControlInput, p: PhysicalParams, options: ModelOptions | None = None) -> np.ndarray:
    """Deterministic part of the emulation SDEs (5 components, per second)."""
    return np.array(K.emu_drift(_moments(y), c.u, c.v, param_vector(p, options)))


def diffusion(y, p: PhysicalParams, c: ControlInput = ControlInput(),
              options: ModelOptions | None = None) -> np.ndarray:
    """5x3 matrix of noise coefficients against (dW, dV, dZ).

    Rows for the variances are identically zero.
    """
    G = gas_decoherence_rate(p)
    if G == 0 and p.gamma_c > 0:
        raise ValueError("gas coupling: Gamma vanishes while gamma_c > 0")
    g = K.emu_diffusion(_moments(y), c.u, param_vector(p, options))
    out = np.zeros((5, 3))
    out[0] = g[:3]
    out[1] = g[3:]
    return out


def step_euler_maruyama(y, c: ControlInput, noise: NoiseIncrements, dt: float,
                        p: PhysicalParams, options: ModelOptions | None = None) -> EmulationState:
    if not dt > 0:
        raise ValueError("dt: must be positive")
    out = K.emu_step_em(_moments(y), c.u, c.v, param_vector(p, options), dt,
                        noise.dW, noise.dV, noise.dZ)
    return _finish(out, _time(y) + dt)


def step_srk4(y, c: ControlInput, noise: NoiseIncrements, dt: float,
              p: PhysicalParams, options: ModelOptions | None = None,
              bridge: np.random.Generator | None = None) -> EmulationState:
    """Drift by classical RK4, noise added with coefficients at the midpoint.

    Steps that are stiff for the variance equations (the collapse from a
    thermal state) are sub-divided; ``bridge`` then supplies the normals for
    splitting the increments. It defaults to a fixed-seed generator.
    """
    if not dt > 0:
        raise ValueError("dt: must be positive")
    if bridge is None:
        bridge = np.random.default_rng(0)
    out = K.emu_step_srk4(_moments(y), c.u, c.v, param_vector(p, options), dt,
                          noise.dW, noise.dV, noise.dZ, bridge)
    return _finish(out, _time(y) + dt)


def propagate_deterministic(y, p: PhysicalParams, dt: float, n_steps: int,
                            c: ControlInput = ControlInput(),
                            options: ModelOptions | None = None) -> EmulationState:
    """Noise-free RK4 propagation of the emulation model."""
    if not dt > 0:
        raise ValueError("dt: must be positive")
    out = K.emu_propagate(_moments(y), c.u, c.v, param_vector(p, options), dt, int(n_steps))
    return _finish(out, _time(y) + n_steps * dt)


def homodyne_sample(window, eta: float, k, dt_total: float) -> float:
    """Window-averaged homodyne current.

    ``window`` is an (M, 2) array of (mean position at the start of each
    emulation step, dW used for that step); ``k`` is the monitoring strength
    per step (scalar or length-M). Returns
    ``(1/dt) * sum(z_i dt_E + dW_i / sqrt(8 eta k_i))``.
    """
    w = np.asarray(window, dtype=float)
    if w.ndim != 2 or w.shape[1] != 2:
        raise ValueError("window: expected shape (M, 2)")
    M = w.shape[0]
    k = np.broadcast_to(np.asarray(k, dtype=float), (M,))
    if not eta > 0:
        raise ValueError("eta: must be positive")
    if np.any(k <= 0):
        raise ValueError("k: monitoring strength must be positive")
    dt_e = dt_total / M
    return float(np.sum(w[:, 0] * dt_e + w[:, 1] / np.sqrt(8 * eta * k)) / dt_total)
