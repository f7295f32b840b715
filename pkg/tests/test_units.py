import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from viscarl.units import (AMU, HBAR, K_B, C_LIGHT, TWO_PI, ParameterError, PhysicalParams,
                           alpha_to_power, beat_to_velocity, check_good_cavity, derive_scales,
                           power_to_alpha, velocity_to_beat)


def test_zero_temperature_has_no_spread():
    s = derive_scales(PhysicalParams(temperature=0.0, u0=-0.08))
    assert s.sigma == 0.0
    assert s.diffusion_D == 0.0


def test_rubidium_scales_at_200_microkelvin():
    s = derive_scales(PhysicalParams(u0=-0.08))
    k = TWO_PI / 795e-9
    m = 85 * AMU
    # independent evaluation of the defining formulas
    assert s.sigma == pytest.approx(2 * k * math.sqrt(K_B * 200e-6 / m), rel=1e-12)
    assert s.sigma == pytest.approx(2.21e6, rel=2e-3)
    assert s.epsilon == pytest.approx(HBAR * k * k / m, rel=1e-12)
    assert s.epsilon == pytest.approx(4.67e4, rel=2e-3)


def test_four_watts_in_photons():
    p = PhysicalParams(u0=-0.08, pump_power=4.0)
    a2 = power_to_alpha(4.0, p) ** 2
    assert a2 == pytest.approx(4.0 / (HBAR * TWO_PI * C_LIGHT / 795e-9 * 3.5e9), rel=1e-12)
    assert a2 == pytest.approx(4.57e9, rel=2e-3)


def test_fsr_factor_override():
    p = PhysicalParams(u0=-0.08)
    q = p.replace(fsr_factor=TWO_PI)
    assert power_to_alpha(4.0, q) ** 2 == pytest.approx(power_to_alpha(4.0, p) ** 2 / TWO_PI, rel=1e-14)


@given(st.floats(min_value=0.0, max_value=1e3, allow_nan=False))
def test_power_alpha_round_trip(power):
    p = PhysicalParams(u0=-0.08)
    back = alpha_to_power(power_to_alpha(power, p), p)
    assert back == pytest.approx(power, rel=1e-14, abs=1e-300)


def test_light_shift_from_rabi_frequency():
    p = PhysicalParams(rabi_g=TWO_PI * 150e3, detuning_a=-TWO_PI * 1.7e12)
    s = derive_scales(p)
    assert s.u0 == pytest.approx((TWO_PI * 150e3) ** 2 / (-TWO_PI * 1.7e12), rel=1e-14)
    assert np.sign(s.u0) == np.sign(p.detuning_a)


def test_direct_light_shift_wins():
    s = derive_scales(PhysicalParams(rabi_g=1.0, u0=-0.5))
    assert s.u0 == -0.5


@pytest.mark.parametrize("field,value", [
    ("wavelength", 0.0), ("atomic_mass", -1.0), ("kappa", 0.0), ("fsr", -1.0),
    ("atom_number", 0), ("pump_power", 0.0), ("temperature", -1.0), ("gamma_fr", -1.0),
])
def test_invariants_rejected_with_field_name(field, value):
    with pytest.raises(ParameterError) as info:
        PhysicalParams(u0=-0.08, **{field: value})
    assert info.value.field == field


def test_zero_detuning_with_rabi_coupling_rejected():
    with pytest.raises(ParameterError) as info:
        PhysicalParams(rabi_g=1.0, detuning_a=0.0)
    assert info.value.field == "detuning_a"


def test_missing_coupling_rejected():
    with pytest.raises(ParameterError):
        derive_scales(PhysicalParams())


def test_molasses_off_flags_diffusion_undefined():
    s = derive_scales(PhysicalParams(u0=-0.08, gamma_fr=0.0))
    assert not s.diffusion_defined
    assert math.isnan(s.diffusion_D)
    assert s.sigma > 0 and s.rho > 0 and s.epsilon > 0


def test_velocity_beat_conversion():
    s = derive_scales(PhysicalParams(u0=-0.08))
    assert velocity_to_beat(0.0, s) == 0.0
    # grating phase 2 k x moves at 2 k v
    assert velocity_to_beat(0.07, s) / TWO_PI == pytest.approx(176e3, rel=2e-3)
    for v in (0.01, 0.07, 0.13):
        assert beat_to_velocity(velocity_to_beat(v, s), s) == pytest.approx(v, rel=1e-15)


@settings(max_examples=30)
@given(st.floats(1.0, 1e7), st.floats(0.1, 10.0))
def test_carl_parameter_scaling(n, factor):
    p = PhysicalParams(u0=-0.08, atom_number=int(n) + 1)
    s = derive_scales(p)
    s_n = derive_scales(p.replace(atom_number=p.atom_number * 8))
    assert s_n.rho == pytest.approx(2 * s.rho, rel=1e-12)
    s_a = derive_scales(p.replace(pump_power=p.pump_power * factor))
    # rho ~ alpha_+^(2/3) = P^(1/3)
    assert s_a.rho == pytest.approx(s.rho * factor ** (1 / 3), rel=1e-12)


def test_epsilon_and_sigma_scaling():
    p = PhysicalParams(u0=-0.08)
    s = derive_scales(p)
    assert derive_scales(p.replace(wavelength=p.wavelength / math.sqrt(2))).epsilon == pytest.approx(2 * s.epsilon, rel=1e-13)
    assert derive_scales(p.replace(temperature=4 * p.temperature)).sigma == pytest.approx(2 * s.sigma, rel=1e-13)


def test_derive_is_deterministic():
    p = PhysicalParams(u0=-0.08)
    assert derive_scales(p) == derive_scales(p)


def test_good_cavity_check_warns():
    s = derive_scales(PhysicalParams(u0=-0.08))
    assert check_good_cavity(s)
    hot_cavity = derive_scales(PhysicalParams(u0=-0.08, kappa=1e8))
    with pytest.warns(UserWarning):
        assert not check_good_cavity(hot_cavity)
