import math

import numpy as np
import pytest

from viscarl.fokker_planck import (DistributionState, FPCoefficients, NumericalError,
                                   init_distribution, reconstruct_density, run_fp_coupled,
                                   step_fp)
from viscarl.langevin import EnsembleState
from viscarl.threshold import exact_threshold_alpha_sq, fp_linear_growth, growth_rate_linearized


def test_initial_distributions():
    assert init_distribution("uniform", 8).bunching == 0
    assert abs(init_distribution("perturbed", 8, amplitude=0.1).bunching) == pytest.approx(0.1)
    s = init_distribution("from_ensemble", 6, ensemble=EnsembleState(np.zeros(10)))
    assert np.allclose(s.modes, 1.0)
    assert abs(s.bunching) == pytest.approx(1.0)


def test_ensemble_and_distribution_bunching_agree():
    rng = np.random.default_rng(3)
    theta = rng.normal(1.0, 0.4, 500)
    s = init_distribution("from_ensemble", 6, ensemble=theta)
    assert s.bunching == pytest.approx(np.mean(np.exp(1j * theta)), abs=1e-14)


@pytest.mark.parametrize("amp", [1.0, 1.5, -1.0])
def test_nonphysical_perturbation_rejected(amp):
    with pytest.raises(ValueError):
        init_distribution("perturbed", 8, amplitude=amp)


def test_truncation_too_small_rejected():
    with pytest.raises(ValueError):
        init_distribution("uniform", 1)


def test_reconstruct_uniform_and_cosine():
    theta, p = reconstruct_density(init_distribution("uniform", 4), 64)
    assert np.allclose(p, 1 / (2 * np.pi), atol=1e-15)
    s = init_distribution("perturbed", 4, amplitude=0.5)
    theta, p = reconstruct_density(s, 64)
    assert np.allclose(p, (1 + np.cos(theta)) / (2 * np.pi), atol=1e-14)
    assert theta[np.argmax(p)] == 0.0


def test_reconstruct_normalization_and_grid_guard():
    rng = np.random.default_rng(0)
    s = init_distribution("from_ensemble", 16, ensemble=rng.normal(2.0, 0.5, 1000))
    theta, p = reconstruct_density(s, 33)
    assert np.sum(p) * 2 * np.pi / p.size == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError):
        reconstruct_density(s, 32)


def test_reconstruct_cluster_peaks_at_centre():
    rng = np.random.default_rng(1)
    theta0 = rng.normal(2.0, 0.3, 20_000)
    s = init_distribution("from_ensemble", 24, ensemble=theta0)
    theta, p = reconstruct_density(s, 512)
    hist, edges = np.histogram(np.mod(theta0, 2 * np.pi), bins=64, range=(0, 2 * np.pi), density=True)
    centres = 0.5 * (edges[1:] + edges[:-1])
    assert abs(theta[np.argmax(p)] - 2.0) < 0.05
    assert abs(centres[np.argmax(hist)] - theta[np.argmax(p)]) < 2 * (edges[1] - edges[0])


def test_uniform_state_is_stationary(lab_scales):
    c = FPCoefficients.from_scales(lab_scales)
    s = init_distribution("uniform", 8)
    for _ in range(10):
        s = step_fp(s, lab_scales.alpha_plus ** 2, c, 1e-8)
    assert np.all(s.modes[1:] == 0) and s.alpha_minus == 0


def test_pure_diffusion_decay_exact(lab_scales):
    c = FPCoefficients.from_scales(lab_scales)
    modes = np.zeros(9, dtype=complex)
    modes[0] = 1.0
    modes[1:] = 0.05 * np.exp(1j * np.arange(1, 9))
    s = DistributionState(modes.copy())
    D = lab_scales.diffusion_D
    dt = 2e-8
    for _ in range(25):
        s = step_fp(s, 0.0, c, dt)
    m = np.arange(9)
    expected = modes * np.exp(-D * m ** 2 * 25 * dt)
    assert np.allclose(s.modes[1:5], expected[1:5], rtol=1e-6, atol=0)
    assert s.modes[0] == 1.0


def test_diffusion_contracts_every_mode(lab_scales):
    traj = run_fp_coupled(lab_scales, 0.0, 1e-6, state=init_distribution("perturbed", 8, amplitude=0.3),
                          dump_modes=True, sample_dt=1e-8)
    mags = traj.mode_dump
    assert np.all(np.diff(mags[:, 0]) <= 0)


def test_step_guard(lab_scales):
    c = FPCoefficients.from_scales(lab_scales)
    s = DistributionState(np.r_[1.0, 0.1, np.zeros(30)], alpha_minus=1e3)
    with pytest.raises(NumericalError):
        step_fp(s, lab_scales.alpha_plus ** 2, c, 1e-3)


def test_linear_growth_matches_dispersion_relation(lab_scales):
    a2 = 1.5 * exact_threshold_alpha_sq(lab_scales)
    growth, rotation = fp_linear_growth(lab_scales, a2)
    lam = growth_rate_linearized(lab_scales, a2)
    assert growth == pytest.approx(lam.real, rel=0.02)
    assert abs(rotation) == pytest.approx(abs(lam.imag), rel=0.02)


def test_below_threshold_bunching_dies(lab_scales):
    a2 = 0.8 * exact_threshold_alpha_sq(lab_scales)
    traj = run_fp_coupled(lab_scales, a2, 2e-4, truncation=16)
    assert traj.steady_bunching < 1e-3


def test_bunching_grows_towards_one_with_pump(lab_scales):
    thr = exact_threshold_alpha_sq(lab_scales)
    levels = []
    for f in (1.5, 2.0, 4.0, 8.0):
        traj = run_fp_coupled(lab_scales, f * thr, 5e-4, truncation=32, stop_on_steady=True)
        assert traj.converged
        assert traj.final.modes[0] == 1.0
        levels.append(traj.steady_bunching)
    assert np.all(np.diff(levels) > 0)
    assert 0.85 < levels[-1] < 1.0


def test_truncation_converged(lab_scales):
    a2 = 4.0 * exact_threshold_alpha_sq(lab_scales)
    b = [run_fp_coupled(lab_scales, a2, 5e-4, truncation=M, stop_on_steady=True).steady_bunching
         for M in (32, 64)]
    assert abs(b[0] - b[1]) < 1e-4


def test_short_run_is_transient(lab_scales):
    traj = run_fp_coupled(lab_scales, 2 * exact_threshold_alpha_sq(lab_scales), 1e-6, truncation=8)
    assert not traj.converged and traj.label == "transient"


def test_truncation_tail_warning(lab_scales):
    with pytest.warns(UserWarning, match="truncation tail"):
        run_fp_coupled(lab_scales, 8 * exact_threshold_alpha_sq(lab_scales), 2e-5, truncation=3)


def test_friction_required(lab_scales):
    from dataclasses import replace
    with pytest.raises(ValueError):
        FPCoefficients.from_scales(replace(lab_scales, gamma_fr=0.0))
