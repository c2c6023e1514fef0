"""Physical parameters, Gaussian moments and the observables built on them.

All quantities are SI. The five moments of a Gaussian state are stored in
the order (mean position, mean momentum, position variance, momentum
variance, symmetrised covariance), which is also the column order used by
the numerical kernels.
"""
from __future__ import annotations

from dataclasses import dataclass, fields, asdict
import math

import numpy as np

HBAR = 1.054571817e-34  # J s (CODATA 2018, exact)
K_B = 1.380649e-23  # J/K (exact)
N_A = 6.02214076e23  # 1/mol (exact)

MBAR = 100.0  # Pa per mbar

# Free-molecular (Epstein) drag with diffuse reflection and full thermal
# accommodation: F = (32/3)(1 + pi/8) r^2 P v / v_th.
EPSTEIN_DIFFUSE = 32.0 / 3.0 * (1.0 + math.pi / 8.0)
AIR_MOLAR_MASS = 0.02897  # kg/mol


def _check(cond: bool, name: str, msg: str) -> None:
    if not cond:
        raise ValueError(f"{name}: {msg}")


@dataclass(frozen=True)
class PhysicalParams:
    """Particle, trap, gas and feedback constants.

    ``alpha`` is the monitoring coupling at full (unmodulated) laser power;
    the instantaneous monitoring strength is ``alpha * (1 + beta * u)``.
    ``delta`` is the force (N) produced by a unit linear feedback signal.
    """

    mass: float
    omega: float
    temperature: float
    eta: float
    alpha: float
    gamma_c: float = 0.0
    beta: float = 0.0
    delta: float = 0.0

    def __post_init__(self):
        _check(self.mass > 0, "mass", "must be positive")
        _check(self.omega > 0, "omega", "must be positive")
        _check(self.temperature > 0, "temperature", "must be positive")
        _check(0 < self.eta <= 1, "eta", "must lie in (0, 1]")
        _check(self.alpha >= 0, "alpha", "must be non-negative")
        _check(self.gamma_c >= 0, "gamma_c", "must be non-negative")
        _check(0 <= self.beta < 1, "beta", "must satisfy 0 <= beta < 1")
        _check(self.delta >= 0, "delta", "must be non-negative")
        for f in fields(self):
            _check(math.isfinite(getattr(self, f.name)), f.name, "must be finite")

    @property
    def hbar(self) -> float:
        return HBAR

    @property
    def k_B(self) -> float:
        return K_B

    @property
    def Gamma(self) -> float:
        return gas_decoherence_rate(self)

    def replace(self, **changes) -> "PhysicalParams":
        d = asdict(self)
        d.update(changes)
        return PhysicalParams(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def paper_params(**overrides) -> PhysicalParams:
    """Silica nanoparticle (r ~ 50 nm) in a 70 kHz trap at room temperature."""
    base = dict(
        mass=9.42e-19,
        omega=2 * math.pi * 70e3,
        temperature=300.0,
        eta=0.003,
        alpha=4.04e25,
        gamma_c=0.0,
        beta=0.0,
        delta=0.0,
    )
    base.update(overrides)
    return PhysicalParams(**base)


@dataclass(frozen=True)
class LaserParams:
    wavelength: float
    power: float
    cross_section: float
    waist: float
    omega_laser: float

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            _check(math.isfinite(v) and v > 0, f.name, "must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class GaussianMoments:
    mean_z: float
    mean_p: float
    var_z: float
    var_p: float
    cov: float

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.mean_z, self.mean_p, self.var_z, self.var_p, self.cov], dtype=float
        )

    @classmethod
    def from_array(cls, a) -> "GaussianMoments":
        a = np.asarray(a, dtype=float)
        if a.shape != (5,):
            raise ValueError(f"expected 5 moments, got shape {a.shape}")
        return cls(*(float(v) for v in a))

    def uncertainty_product(self) -> float:
        return self.var_z * self.var_p - self.cov**2

    def is_physical(self, rtol: float = 1e-6) -> bool:
        return (
            self.var_z > 0
            and self.var_p > 0
            and self.uncertainty_product() >= HBAR**2 / 4 * (1 - rtol)
        )


@dataclass(frozen=True)
class ControlInput:
    """Dimensionless feedback signals; the actuators apply beta*u and delta*v."""

    u: float = 0.0
    v: float = 0.0

    def __post_init__(self):
        _check(abs(self.u) <= 1, "u", "must satisfy |u| <= 1")
        _check(abs(self.v) <= 1, "v", "must satisfy |v| <= 1")


def gas_decoherence_rate(params: PhysicalParams) -> float:
    """Position decoherence rate from gas collisions, 4 m k_B T gamma_c / hbar^2."""
    return 4 * params.mass * K_B * params.temperature * params.gamma_c / HBAR**2


def monitoring_strength(alpha: float, beta: float, u: float) -> float:
    """Laser monitoring strength ``alpha * (1 + beta*u)`` under intensity modulation."""
    if not 0 <= beta < 1:
        raise ValueError("beta: must satisfy 0 <= beta < 1")
    if abs(u) > 1:
        raise ValueError("u: must satisfy |u| <= 1")
    return alpha * (1 + beta * u)


def coupling_from_laser(lp: LaserParams) -> float:
    """Monitoring coupling alpha (1/(m^2 s)) from beam and particle optics.

    Scattered photon rate ``sigma P / (pi w0^2 hbar omega_L)`` times
    ``12 pi^2 / (5 lambda^2)``.
    """
    return (
        12 * math.pi**2 / (5 * lp.wavelength**2)
        * lp.cross_section * lp.power
        / (math.pi * lp.waist**2 * HBAR * lp.omega_laser)
    )


def pressure_to_gamma(
    pressure: float,
    particle_radius: float,
    gas_molar_mass: float,
    temperature: float,
    mass: float,
    c_drag: float = EPSTEIN_DIFFUSE,
) -> float:
    """Gas damping rate (1/s) of a sphere in the free-molecular regime.

    ``gamma_c = c_drag * P * r^2 / (m * v_th)`` with the mean molecular speed
    ``v_th = sqrt(8 k_B T / (pi m_gas))``. Pressure is in Pa.
    """
    if pressure < 0:
        raise ValueError("pressure: must be non-negative")
    m_gas = gas_molar_mass / N_A
    v_th = math.sqrt(8 * K_B * temperature / (math.pi * m_gas))
    return c_drag * pressure * particle_radius**2 / (mass * v_th)


def thermal_state(params: PhysicalParams) -> GaussianMoments:
    x = HBAR * params.omega / (2 * K_B * params.temperature)
    coth = 1.0 / math.tanh(x)
    m, w = params.mass, params.omega
    return GaussianMoments(
        0.0, 0.0, HBAR / (2 * m * w) * coth, HBAR * m * w / 2 * coth, 0.0
    )


def mean_energy(s, m: float, omega: float):
    """Mean oscillator energy <p^2>/2m + m w^2 <z^2>/2.

    ``s`` is a :class:`GaussianMoments` or an array whose last axis holds the
    five moments, in which case an array of energies is returned.
    """
    if isinstance(s, GaussianMoments):
        return (s.mean_p**2 + s.var_p) / (2 * m) + m * omega**2 / 2 * (
            s.mean_z**2 + s.var_z
        )
    a = np.asarray(s, dtype=float)
    return (a[..., 1] ** 2 + a[..., 3]) / (2 * m) + m * omega**2 / 2 * (
        a[..., 0] ** 2 + a[..., 2]
    )


def phonon_number(E, omega: float):
    """Occupation E/(hbar w) - 1/2, clamped at zero."""
    n = np.asarray(E, dtype=float) / (HBAR * omega) - 0.5
    n = np.maximum(n, 0.0)
    return float(n) if n.ndim == 0 else n
