"""Observables of the two cavity outputs: beat signal, contrast, probe power,
and a sectionwise Fourier analysis tracking the instantaneous beat frequency."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

LOBE_BINS = 3


def contrast_to_probe(delta_p_cont, p_plus):
    """Probe power from the beat contrast: dP^2 / (16 P+), valid for |a-| << a+."""
    p_plus = np.asarray(p_plus, dtype=float)
    delta = np.asarray(delta_p_cont, dtype=float)
    if np.any(p_plus <= 0):
        raise ValueError("pump power must be > 0")
    if np.any(delta < 0):
        raise ValueError("contrast must be >= 0")
    out = delta * delta / (16.0 * p_plus)
    return float(out) if out.ndim == 0 else out


def probe_to_contrast(p_minus, p_plus):
    p_plus = np.asarray(p_plus, dtype=float)
    p_minus = np.asarray(p_minus, dtype=float)
    if np.any(p_plus <= 0):
        raise ValueError("pump power must be > 0")
    if np.any(p_minus < 0):
        raise ValueError("probe power must be >= 0")
    out = 4.0 * np.sqrt(p_minus * p_plus)
    return float(out) if out.ndim == 0 else out


@dataclass
class BeatTrace:
    t: np.ndarray
    p_beat: np.ndarray
    sample_rate: float

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.p_beat = np.asarray(self.p_beat, dtype=float)
        if self.t.shape != self.p_beat.shape:
            raise ValueError("t and p_beat must have equal length")
        if self.t.size > 2:
            steps = np.diff(self.t)
            if np.max(np.abs(steps - 1.0 / self.sample_rate)) > 1e-6 / self.sample_rate:
                raise ValueError("beat trace must be uniformly sampled")
        if np.any(self.p_beat < 0):
            raise ValueError("beat power must be >= 0")

    @classmethod
    def from_fields(cls, t, alpha_plus, alpha_minus, photon_power: float) -> "BeatTrace":
        """P_beat = hbar omega fsr |a+ + a-|^2 for uniformly sampled fields."""
        t = np.asarray(t, dtype=float)
        if t.size < 2:
            raise ValueError("need at least two samples")
        p = photon_power * np.abs(np.asarray(alpha_plus) + np.asarray(alpha_minus)) ** 2
        rate = (t.size - 1) / (t[-1] - t[0])
        return cls(t, p, rate)


@dataclass
class SpectrogramResult:
    window_times: np.ndarray
    frequencies: np.ndarray
    magnitude: np.ndarray           # (n_windows, n_freqs)
    ridge_frequency: np.ndarray     # Hz, nan where no ridge
    ridge_magnitude: np.ndarray
    ridge_amplitude: np.ndarray     # sinusoid amplitude (W) from the main-lobe energy
    mean_power: np.ndarray          # window-mean of the trace (W)

    @property
    def ridge(self) -> np.ndarray:
        return np.column_stack([self.window_times, self.ridge_frequency, self.ridge_magnitude])

    def ridge_contrast(self) -> np.ndarray:
        """Peak-to-peak beat modulation carried by the ridge."""
        return 2.0 * self.ridge_amplitude

    def ridge_probe_power(self) -> np.ndarray:
        return np.where(np.isfinite(self.ridge_magnitude),
                        contrast_to_probe(np.nan_to_num(self.ridge_contrast()), self.mean_power),
                        np.nan)


def _interpolate_peak(mag: np.ndarray, k: int) -> tuple[float, float]:
    """Vertex of the parabola through log-magnitudes at k-1, k, k+1."""
    if k <= 0 or k >= mag.size - 1:
        return float(k), float(mag[k])
    a, b, c = np.log(np.maximum(mag[k - 1:k + 2], 1e-300))
    denom = a - 2 * b + c
    if denom >= 0:
        return float(k), float(mag[k])
    shift = 0.5 * (a - c) / denom
    peak = b - 0.25 * (a - c) * shift
    return k + shift, float(np.exp(peak))


def spectrogram(trace: BeatTrace, window: float, hop: float, *, band: tuple | None = None,
                floor_mads: float = 6.0) -> SpectrogramResult:
    """Hann-windowed magnitude spectra of successive sections and their ridge.

    Each section is mean-subtracted before windowing. The ridge is the
    in-band argmax, accepted when above median + ``floor_mads`` * MAD of the
    in-band spectrum, and refined by 3-point log-parabolic interpolation.
    ``band`` defaults to (2 bins, Nyquist).
    """
    fs = trace.sample_rate
    n_win = int(round(window * fs))
    n_hop = int(round(hop * fs))
    if n_win < 8:
        raise ValueError("window must span at least 8 samples")
    if not 0 < n_hop <= n_win:
        raise ValueError("hop must be positive and no longer than the window")
    if trace.p_beat.size < n_win:
        raise ValueError("trace is shorter than one analysis window")
    frames = sliding_window_view(trace.p_beat, n_win)[::n_hop]
    centers = trace.t[0] + (np.arange(frames.shape[0]) * n_hop + 0.5 * (n_win - 1)) / fs
    w = np.hanning(n_win)
    means = frames.mean(axis=1)
    spectra = np.abs(np.fft.rfft((frames - means[:, None]) * w, axis=1))
    freqs = np.fft.rfftfreq(n_win, 1.0 / fs)
    df = freqs[1]
    lo, hi = band if band is not None else (2 * df, freqs[-1])
    in_band = np.flatnonzero((freqs >= lo) & (freqs <= hi))
    if in_band.size < 3:
        raise ValueError("analysis band holds fewer than 3 frequency bins")

    ridge_f = np.full(frames.shape[0], np.nan)
    ridge_m = np.full(frames.shape[0], np.nan)
    ridge_a = np.full(frames.shape[0], np.nan)
    w_energy = float(np.sum(w * w))
    for i, spec in enumerate(spectra):
        sub = spec[in_band]
        med = np.median(sub)
        mad = np.median(np.abs(sub - med))
        k_local = int(np.argmax(sub))
        if sub[k_local] <= med + floor_mads * mad or sub[k_local] == 0:
            continue
        k = in_band[k_local]
        pos, height = _interpolate_peak(spec, k)
        ridge_f[i] = pos * df
        ridge_m[i] = height
        # Parseval over the Hann main lobe (+-2 bins, one guard bin): a cosine of
        # amplitude A puts N A^2 sum(w^2) / 4 there, wherever it sits between bins
        lobe = spec[max(k - LOBE_BINS, 1):k + LOBE_BINS + 1]
        ridge_a[i] = 2.0 * math.sqrt(np.sum(lobe * lobe) / (n_win * w_energy))
    return SpectrogramResult(centers, freqs, spectra, ridge_f, ridge_m, ridge_a, means)


def section_energy(trace: BeatTrace, window: float, hop: float) -> tuple[np.ndarray, np.ndarray]:
    """Time-domain and spectral energies of each windowed section (Parseval pair)."""
    fs = trace.sample_rate
    n_win = int(round(window * fs))
    n_hop = int(round(hop * fs))
    frames = sliding_window_view(trace.p_beat, n_win)[::n_hop]
    xw = (frames - frames.mean(axis=1, keepdims=True)) * np.hanning(n_win)
    spec = np.fft.fft(xw, axis=1)
    return np.sum(xw ** 2, axis=1), np.sum(np.abs(spec) ** 2, axis=1) / n_win


def peak_to_peak_contrast(trace: BeatTrace) -> float:
    return float(np.max(trace.p_beat) - np.min(trace.p_beat))
