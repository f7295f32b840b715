import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from viscarl.fokker_planck import init_distribution, phase_velocity, run_fp_coupled
from viscarl.langevin import LangevinConfig, run_coupled
from viscarl.signals import (BeatTrace, contrast_to_probe, peak_to_peak_contrast, probe_to_contrast,
                             section_energy, spectrogram)
from viscarl.threshold import exact_threshold_alpha_sq
from viscarl.units import derive_scales

from conftest import small_cloud


def tone(freq, amp=0.4, mean=4.0, fs=10e6, duration=1e-3, phase=0.3):
    t = np.arange(int(round(duration * fs))) / fs
    return BeatTrace(t, mean + amp * np.cos(2 * np.pi * freq * t + phase), fs)


def test_contrast_to_probe_example():
    assert contrast_to_probe(0.8, 4.0) == pytest.approx(0.01, rel=1e-15)


@settings(max_examples=100)
@given(st.floats(1e-9, 10), st.floats(1e-6, 100))
def test_contrast_probe_round_trip(p_minus, p_plus):
    back = contrast_to_probe(probe_to_contrast(p_minus, p_plus), p_plus)
    assert back == pytest.approx(p_minus, rel=1e-12)


def test_contrast_rejects_bad_input():
    with pytest.raises(ValueError):
        contrast_to_probe(0.8, 0.0)
    with pytest.raises(ValueError):
        contrast_to_probe(-0.1, 1.0)
    with pytest.raises(ValueError):
        probe_to_contrast(0.1, -1.0)


def test_pure_tone_ridge():
    res = spectrogram(tone(170e3), 100e-6, 50e-6)
    bin_width = 1 / 100e-6
    assert np.all(np.abs(res.ridge_frequency - 170e3) < 0.1 * bin_width)
    assert np.allclose(res.ridge_contrast(), 0.8, rtol=0.01)
    assert np.allclose(res.mean_power, 4.0, rtol=1e-3)
    assert res.ridge.shape == (res.window_times.size, 3)


@settings(max_examples=20, deadline=None)
@given(st.floats(60e3, 2e6), st.floats(0, 2 * np.pi))
def test_tone_amplitude_independent_of_bin_position(freq, phase):
    res = spectrogram(tone(freq, phase=phase), 100e-6, 100e-6)
    assert np.allclose(res.ridge_contrast(), 0.8, rtol=0.02)
    assert np.allclose(res.ridge_frequency, freq, rtol=0, atol=0.1 / 100e-6)


def test_chirp_ridge_is_monotone():
    fs, duration = 10e6, 2e-3
    t = np.arange(int(duration * fs)) / fs
    f0, f1 = 150e3, 600e3
    phase = 2 * np.pi * (f0 * t + 0.5 * (f1 - f0) / duration * t ** 2)
    res = spectrogram(BeatTrace(t, 2.0 + 0.2 * np.cos(phase), fs), 50e-6, 25e-6)
    assert np.all(np.diff(res.ridge_frequency) > 0)
    inst = f0 + (f1 - f0) * res.window_times / duration
    assert np.allclose(res.ridge_frequency, inst, rtol=0.01)


def test_parseval_per_section():
    rng = np.random.default_rng(0)
    fs = 1e6
    trace = BeatTrace(np.arange(4000) / fs, 1.0 + 0.1 * np.abs(rng.normal(size=4000)), fs)
    time_e, freq_e = section_energy(trace, 512 / fs, 256 / fs)
    assert np.allclose(time_e, freq_e, rtol=1e-10)


def test_ridge_invariant_under_rescaling():
    a = spectrogram(tone(300e3, amp=0.1, mean=1.0), 100e-6, 50e-6)
    b = spectrogram(tone(300e3, amp=0.7, mean=7.0), 100e-6, 50e-6)
    assert np.allclose(a.ridge_frequency, b.ridge_frequency, rtol=1e-12)
    assert np.allclose(a.ridge_probe_power() * 7, b.ridge_probe_power(), rtol=1e-9)


def test_flat_trace_has_no_ridge():
    fs = 1e6
    res = spectrogram(BeatTrace(np.arange(1000) / fs, np.full(1000, 2.0), fs), 100e-6, 100e-6)
    assert np.all(np.isnan(res.ridge_frequency))
    assert np.all(np.isnan(res.ridge_probe_power()))


def test_short_trace_rejected():
    with pytest.raises(ValueError):
        spectrogram(tone(100e3, duration=20e-6), 100e-6, 50e-6)
    with pytest.raises(ValueError):
        spectrogram(tone(100e3), 100e-6, 200e-6)


def test_trace_validation():
    with pytest.raises(ValueError):
        BeatTrace(np.array([0.0, 1.0, 3.0]), np.ones(3), 1.0)
    with pytest.raises(ValueError):
        BeatTrace(np.arange(3.0), np.array([1.0, -1.0, 1.0]), 1.0)


def test_probe_recovered_from_synthetic_fields():
    fs, duration = 10e6, 1e-3
    t = np.arange(int(duration * fs)) / fs
    ap = 1.0e4
    am = 1e-2 * ap * np.exp(2j * np.pi * 200e3 * t)
    photon = 4.0 / ap ** 2
    trace = BeatTrace.from_fields(t, ap, am, photon)
    res = spectrogram(trace, 100e-6, 50e-6)
    p_minus = photon * abs(am[0]) ** 2
    assert np.allclose(res.ridge_probe_power(), p_minus, rtol=0.02)
    assert peak_to_peak_contrast(trace) == pytest.approx(probe_to_contrast(p_minus, photon * ap ** 2), rel=0.03)


def _ridge_vs_phase_velocity(t, am, scales, a2, window):
    trace = BeatTrace.from_fields(t, math.sqrt(a2), am, scales.photon_power)
    res = spectrogram(trace, window, window / 2)
    ridge = np.nanmedian(res.ridge_frequency)
    return ridge, abs(phase_velocity(t, am)) / (2 * np.pi)


def test_steady_fp_ridge_tracks_grating_rotation():
    s = derive_scales(small_cloud(2000))
    a2 = 2 * exact_threshold_alpha_sq(s)
    warm = run_fp_coupled(s, a2, 2e-3, truncation=16, state=init_distribution("perturbed", 16, amplitude=1e-3))
    run = run_fp_coupled(s, a2, 400e-6, truncation=16, state=warm.final,
                         sample_dt=2e-7)
    ridge, rot = _ridge_vs_phase_velocity(run.t, run.alpha_minus, s, a2, 100e-6)
    assert ridge == pytest.approx(rot, rel=0.02)


def test_steady_langevin_ridge_tracks_grating_rotation():
    s = derive_scales(small_cloud(2000))
    a2 = 2 * exact_threshold_alpha_sq(s)
    cfg = LangevinConfig(t_max=150e-6, mode="overdamped", pump=a2, seed=1, sample_dt=2e-7)
    run = run_coupled(s, cfg)
    keep = run.t >= 50e-6
    ridge, rot = _ridge_vs_phase_velocity(run.t[keep], run.alpha_minus[keep], s, a2, 50e-6)
    assert ridge == pytest.approx(rot, rel=0.02)
