import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from viscarl.kuramoto import (coupling_constant, critical_coupling, fit_critical_coupling,
                              mean_field_order, order_parameter, run_kuramoto, step_kuramoto,
                              sync_fraction)
from viscarl.units import derive_scales

from conftest import small_cloud


@pytest.fixture(scope="module")
def scales():
    return derive_scales(small_cloud(2000))


def test_no_pump_no_coupling(scales):
    assert coupling_constant(scales, 10 * scales.kappa, 0.0) == 0.0


def test_fast_rotation_limit(scales):
    w = 1e6 * scales.kappa
    a2 = scales.alpha_plus ** 2
    limit = 8 * scales.epsilon * scales.atom_number * scales.u0 ** 2 * a2 / (scales.gamma_fr * w)
    assert coupling_constant(scales, w) == pytest.approx(limit, rel=1e-11)


def test_coupling_peaks_at_cavity_linewidth(scales):
    ws = scales.kappa * np.linspace(0.5, 2.0, 301)
    with pytest.warns(UserWarning):
        ks = [coupling_constant(scales, w) for w in ws]
    assert ws[int(np.argmax(ks))] == pytest.approx(scales.kappa, rel=0.01)


def test_bad_cavity_warning_and_zero_rotation(scales):
    with pytest.warns(UserWarning):
        coupling_constant(scales, 2 * scales.kappa)
    with pytest.raises(ValueError):
        coupling_constant(scales, 0.0)


def test_synchronized_state_is_stationary():
    theta = np.full(50, 1.3)
    out = step_kuramoto(theta, 5.0, 0.0, 1e-3)
    assert np.array_equal(out, theta)


def test_two_oscillator_gap_closes():
    K, dt, steps = 1.0, 1e-4, 20_000
    theta = np.array([0.0, 1.0])
    traj = run_kuramoto(2, K, 0.0, steps * dt, dt=dt, sample_dt=steps * dt, phases=theta)
    gap = traj.final[1] - traj.final[0]
    expected = 2 * math.atan(math.tan(0.5) * math.exp(-K * steps * dt))
    assert gap == pytest.approx(expected, rel=1e-3)


def test_sync_fraction_cases():
    phases = np.zeros(4)
    assert sync_fraction(phases, [0.0, 0.5, 1.0, 2.0], 1.0) == 0.75
    assert sync_fraction(phases, [0.0, 0.5], 0.0) == 0.5
    assert sync_fraction(np.array([0.0, np.pi]), [0.1, 0.1], 10.0) == 0.0


def test_rotation_covariance():
    rng = np.random.default_rng(0)
    theta = rng.uniform(0, 2 * np.pi, 500)
    c = 0.9
    a = run_kuramoto(500, 3.0, 1.0, 0.5, dt=1e-3, phases=theta, seed=4)
    b = run_kuramoto(500, 3.0, 1.0, 0.5, dt=1e-3, phases=theta + c, seed=4)
    assert np.allclose(a.order * np.exp(1j * c), b.order, atol=1e-10)
    assert np.allclose(a.sync, b.sync)


@settings(max_examples=50)
@given(st.lists(st.floats(-100, 100), min_size=1, max_size=50))
def test_order_parameter_bounded(phases):
    r = abs(order_parameter(phases))
    assert 0 <= r <= 1 + 1e-12


def test_mean_field_order_curve():
    D = 2.0
    assert critical_coupling(D) == 4.0
    assert mean_field_order(3.9, D) == 0.0
    assert 0 < mean_field_order(4.2, D) < mean_field_order(6.0, D) < mean_field_order(60.0, D) < 1
    # near onset r ~ sqrt(2 (K - Kc) / Kc)
    eps = 1e-4
    assert mean_field_order(4 * (1 + eps), D) == pytest.approx(math.sqrt(2 * eps), rel=0.01)


def test_fit_recovers_critical_coupling():
    D = 1.7
    ks = np.linspace(4, 12, 9)
    r = [mean_field_order(k, D) for k in ks]
    assert fit_critical_coupling(ks, r) == pytest.approx(2 * D, rel=1e-5)


def test_simulated_order_matches_mean_field():
    D, K = 1.0, 4.0
    traj = run_kuramoto(4000, K, D, 30.0, dt=2e-3, seed=1, phases=np.zeros(4000))
    assert traj.time_average(t_from=10.0) == pytest.approx(mean_field_order(K, D), abs=0.03)


def test_thread_count_independent():
    a = run_kuramoto(300, 3.0, 1.0, 0.2, dt=1e-3, seed=2, threads=1)
    b = run_kuramoto(300, 3.0, 1.0, 0.2, dt=1e-3, seed=2, threads=3)
    assert np.array_equal(a.final, b.final)
