import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from levcool.core import (
    HBAR,
    K_B,
    MBAR,
    N_A,
    ControlInput,
    GaussianMoments,
    LaserParams,
    PhysicalParams,
    coupling_from_laser,
    gas_decoherence_rate,
    mean_energy,
    monitoring_strength,
    paper_params,
    phonon_number,
    pressure_to_gamma,
    thermal_state,
)

P0 = paper_params()
C_LIGHT = 299792458.0


def test_gas_rate_zero_without_gas():
    assert gas_decoherence_rate(P0) == 0.0


def test_gas_rate_linear_in_gamma_and_temperature():
    p = P0.replace(gamma_c=10.0)
    assert gas_decoherence_rate(p.replace(gamma_c=20.0)) == pytest.approx(2 * gas_decoherence_rate(p), rel=1e-15)
    assert gas_decoherence_rate(p.replace(temperature=600.0)) == pytest.approx(2 * gas_decoherence_rate(p), rel=1e-15)


def test_gas_rate_reference_value():
    p = P0.replace(gamma_c=1e3)
    by_hand = 4 * 9.42e-19 * 1.380649e-23 * 300 * 1e3 / 1.0546e-34**2
    assert gas_decoherence_rate(p) == pytest.approx(by_hand, rel=1e-3)
    assert gas_decoherence_rate(p) == pytest.approx(1.40e33, rel=5e-3)


def test_monitoring_strength_examples():
    assert monitoring_strength(4.04e25, 0.01, 0.0) == 4.04e25
    assert monitoring_strength(4.04e25, 0.01, 1.0) == pytest.approx(4.0804e25, rel=1e-12)
    assert monitoring_strength(4.04e25, 0.01, -1.0) == pytest.approx(3.9996e25, rel=1e-12)
    with pytest.raises(ValueError, match="beta"):
        monitoring_strength(1.0, 1.0, 0.0)
    with pytest.raises(ValueError, match="u"):
        monitoring_strength(1.0, 0.1, 1.5)


def _laser(**kw):
    lam = kw.pop("wavelength", 1550e-9)
    base = dict(wavelength=lam, power=0.67, cross_section=2.455e-18, waist=1e-6,
                omega_laser=2 * math.pi * C_LIGHT / lam)
    base.update(kw)
    return LaserParams(**base)


def test_coupling_scales_with_power_and_wavelength():
    a = coupling_from_laser(_laser())
    assert coupling_from_laser(_laser(power=1.34)) == pytest.approx(2 * a, rel=1e-14)
    lp = _laser()
    doubled = LaserParams(2 * lp.wavelength, lp.power, lp.cross_section, lp.waist, lp.omega_laser)
    assert coupling_from_laser(doubled) == pytest.approx(a / 4, rel=1e-14)


def test_coupling_reference_set_reproduces_alpha():
    # Rayleigh cross-section of a 50 nm silica sphere (n = 1.44) at 1550 nm,
    # 1 um waist; power from the scattered-photon picture, computed independently.
    lam, r, n = 1550e-9, 50e-9, 1.44
    k = 2 * math.pi / lam
    sigma = 8 * math.pi / 3 * k**4 * r**6 * ((n**2 - 1) / (n**2 + 2)) ** 2
    photon_energy = HBAR * 2 * math.pi * C_LIGHT / lam
    flux_per_power = 1 / (math.pi * 1e-6**2 * photon_energy)
    power = 4.04e25 / (12 * math.pi**2 / (5 * lam**2) * sigma * flux_per_power)
    assert 0.1 < power < 2.0  # a laboratory-scale trapping beam
    alpha = coupling_from_laser(_laser(power=power, cross_section=sigma))
    assert float(f"{alpha:.3g}") == 4.04e25


def test_pressure_to_gamma_basics():
    args = (50e-9, 0.02897, 300.0, 9.42e-19)
    assert pressure_to_gamma(0.0, *args) == 0.0
    assert pressure_to_gamma(2.0, *args) == pytest.approx(2 * pressure_to_gamma(1.0, *args), rel=1e-15)
    with pytest.raises(ValueError, match="pressure"):
        pressure_to_gamma(-1.0, *args)


def test_pressure_to_gamma_matches_epstein_drag():
    # Epstein drag F = delta (4 pi/3) r^2 n m_g vbar v, delta = 1 + pi/8 (diffuse reflection)
    P, r, T, m = 1e-2 * MBAR, 50e-9, 300.0, 9.42e-19
    m_g = 0.02897 / N_A
    vbar = math.sqrt(8 * K_B * T / (math.pi * m_g))
    n_gas = P / (K_B * T)
    gamma = (1 + math.pi / 8) * 4 * math.pi / 3 * r**2 * n_gas * m_g * vbar / m
    assert pressure_to_gamma(P, r, 0.02897, T, m) == pytest.approx(gamma, rel=1e-12)
    # pinned regression value
    assert pressure_to_gamma(P, r, 0.02897, T, m) == pytest.approx(84.19, rel=1e-3)


def test_thermal_state_ground_state_limit():
    s = thermal_state(P0.replace(temperature=1e-9))
    m, w = P0.mass, P0.omega
    assert s.var_z == pytest.approx(HBAR / (2 * m * w), rel=1e-12)
    assert s.var_p == pytest.approx(HBAR * m * w / 2, rel=1e-12)


def test_thermal_state_classical_limit():
    s = thermal_state(P0)
    assert s.var_z == pytest.approx(K_B * 300 / (P0.mass * P0.omega**2), rel=1e-6)
    assert s.var_z == pytest.approx(2.27e-14, rel=5e-3)
    assert mean_energy(s, P0.mass, P0.omega) == pytest.approx(K_B * 300, rel=1e-6)
    assert phonon_number(mean_energy(s, P0.mass, P0.omega), P0.omega) == pytest.approx(
        K_B * 300 / (HBAR * P0.omega), rel=1e-6)
    assert phonon_number(K_B * 300, P0.omega) == pytest.approx(8.9e7, rel=5e-3)


@given(st.floats(1e-6, 1e4))
def test_thermal_state_is_physical(T):
    s = thermal_state(P0.replace(temperature=T))
    assert s.uncertainty_product() >= HBAR**2 / 4 * (1 - 1e-12)


def test_energy_and_phonon_examples():
    m, w = P0.mass, P0.omega
    g = GaussianMoments(0.0, 0.0, HBAR / (2 * m * w), HBAR * m * w / 2, 0.0)
    assert mean_energy(g, m, w) == pytest.approx(HBAR * w / 2, rel=1e-14)
    z0 = 1e-9
    d = GaussianMoments(z0, 0.0, g.var_z, g.var_p, 0.0)
    assert mean_energy(d, m, w) == pytest.approx(HBAR * w / 2 + m * w**2 * z0**2 / 2, rel=1e-14)
    assert phonon_number(HBAR * w / 2, w) == pytest.approx(0.0, abs=1e-12)
    assert phonon_number(1.5 * HBAR * w, w) == pytest.approx(1.0, rel=1e-12)


def test_mean_energy_vectorised():
    a = np.array([thermal_state(P0).as_array()] * 3)
    e = mean_energy(a, P0.mass, P0.omega)
    assert e.shape == (3,)
    assert np.allclose(e, mean_energy(thermal_state(P0), P0.mass, P0.omega))


@pytest.mark.parametrize("field,value", [("mass", -1.0), ("beta", 1.0), ("beta", -0.1),
                                         ("eta", 0.0), ("eta", 1.5), ("gamma_c", -1.0),
                                         ("delta", -1.0), ("omega", math.nan)])
def test_params_validation_names_field(field, value):
    with pytest.raises(ValueError, match=field):
        P0.replace(**{field: value})


def test_control_input_bounds():
    ControlInput(1.0, -1.0)
    with pytest.raises(ValueError):
        ControlInput(1.01, 0.0)


def test_moments_round_trip():
    g = GaussianMoments(1.0, 2.0, 3.0, 4.0, 0.5)
    assert GaussianMoments.from_array(g.as_array()) == g
    assert g.uncertainty_product() == 3.0 * 4.0 - 0.25
