"""Mean-field phase-oscillator reduction of the overdamped dynamics.

With the probe slaved to a grating rotating at omega_ca and kappa << omega_ca,
each atom obeys theta_n' = omega_n + K |b| sin(psi - theta_n), with the
fictitious frequencies omega_n = xi_n / gamma_fr white (variance 2D).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numba
import numpy as np
from scipy import optimize, special

from .langevin import NoiseSpec, numba_threads
from .rng import normal_at
from .units import DerivedScales


@dataclass(frozen=True)
class KuramotoParams:
    coupling_K: float
    omega_ca: float
    noise: NoiseSpec

    @property
    def diffusion(self) -> float:
        return self.noise.diffusion_D


def coupling_constant(scales: DerivedScales, omega_ca: float, alpha_sq: float | None = None) -> float:
    """K = 8 eps N U0^2 a+^2 omega_ca / (gamma_fr (omega_ca^2 + kappa^2))."""
    if omega_ca == 0:
        raise ValueError("omega_ca must be nonzero")
    if not scales.gamma_fr > 0:
        raise ValueError("coupling constant needs gamma_fr > 0")
    if alpha_sq is None:
        alpha_sq = scales.alpha_plus ** 2
    if scales.kappa / abs(omega_ca) > 0.2:
        warnings.warn("kappa/omega_ca > 0.2: outside the good-cavity reduction", stacklevel=2)
    num = 8.0 * scales.epsilon * scales.atom_number * scales.u0 ** 2 * alpha_sq * omega_ca
    return num / (scales.gamma_fr * (omega_ca ** 2 + scales.kappa ** 2))


@numba.njit(parallel=True, cache=True)
def _kuramoto_push(theta, cs, sn, b_re, b_im, K, kick, dt, seed, step, natural, noise_acc):
    for i in numba.prange(theta.size):
        d = (K * (b_im * cs[i] - b_re * sn[i]) + natural[i]) * dt
        if kick > 0.0:
            xi = kick * normal_at(seed, i, step)
            d += xi
            noise_acc[i] += xi
        theta[i] += d


@numba.njit(cache=True)
def _kuramoto_chunk(theta, step0, nsteps, K, kick, dt, seed, natural, noise_acc, cs, sn):
    n = theta.size
    for s in range(nsteps):
        re = 0.0
        im = 0.0
        for i in range(n):
            c = math.cos(theta[i])
            sv = math.sin(theta[i])
            cs[i] = c
            sn[i] = sv
            re += c
            im += sv
        _kuramoto_push(theta, cs, sn, re / n, im / n, K, kick, dt, seed, step0 + s, natural, noise_acc)


def order_parameter(phases) -> complex:
    phases = np.asarray(phases, dtype=float)
    return complex(np.mean(np.exp(1j * phases)))


def step_kuramoto(phases: np.ndarray, K: float, diffusion: float, dt: float, seed: int = 0,
                  step: int = 0, natural: np.ndarray | None = None) -> np.ndarray:
    """One Euler-Maruyama step with the mean field recomputed from ``phases``."""
    theta = np.array(phases, dtype=np.float64)
    if natural is None:
        natural = np.zeros_like(theta)
    kick = math.sqrt(2.0 * diffusion * dt) if diffusion > 0 else 0.0
    _kuramoto_chunk(theta, step, 1, float(K), kick, dt, seed,
                    np.asarray(natural, dtype=np.float64), np.zeros_like(theta),
                    np.empty_like(theta), np.empty_like(theta))
    return theta


def sync_fraction(phases, frequencies, K: float, b: complex | None = None) -> float:
    """Share of oscillators whose |frequency| <= K |b| (the locking criterion)."""
    if b is None:
        b = order_parameter(phases)
    freqs = np.abs(np.asarray(frequencies, dtype=float))
    return float(np.mean(freqs <= abs(K) * abs(b)))


@dataclass
class KuramotoTrajectory:
    t: np.ndarray
    order: np.ndarray
    sync: np.ndarray
    final: np.ndarray

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.order)

    @property
    def psi(self) -> np.ndarray:
        return np.angle(self.order)

    def time_average(self, t_from: float = 0.0) -> float:
        return float(np.mean(self.magnitude[self.t >= t_from]))


def run_kuramoto(n: int, K: float, diffusion: float, t_max: float, *, dt: float | None = None,
                 sample_dt: float | None = None, seed: int = 0, phases: np.ndarray | None = None,
                 natural: np.ndarray | None = None, threads: int | None = None) -> KuramotoTrajectory:
    """Integrate the noisy mean-field oscillators.

    ``natural`` adds static natural frequencies (the classic Kuramoto variant,
    an extension kept for comparison). The sync fraction uses each oscillator's
    frequency over the last sample interval: natural + accumulated noise / interval.
    """
    if n < 1:
        raise ValueError("need at least one oscillator")
    rate = max(abs(K), diffusion, 1e-300)
    if dt is None:
        dt = 0.002 / rate
    if sample_dt is None:
        sample_dt = 50 * dt
    decim = max(1, int(round(sample_dt / dt)))
    n_chunks = int(math.ceil(t_max / (decim * dt) - 1e-9))
    if phases is None:
        phases = np.random.Generator(np.random.Philox(seed)).uniform(0, 2 * np.pi, n)
    theta = np.array(phases, dtype=np.float64)
    nat = np.zeros(n) if natural is None else np.asarray(natural, dtype=np.float64)
    kick = math.sqrt(2.0 * diffusion * dt) if diffusion > 0 else 0.0
    cs = np.empty(n)
    sn = np.empty(n)
    ts = [0.0]
    bs = [order_parameter(theta)]
    sync = [sync_fraction(theta, nat, K, bs[0])]
    step = 0
    with numba_threads(threads):
        for c in range(n_chunks):
            acc = np.zeros(n)
            _kuramoto_chunk(theta, step, decim, float(K), kick, dt, seed, nat, acc, cs, sn)
            step += decim
            b = order_parameter(theta)
            ts.append(step * dt)
            bs.append(b)
            sync.append(sync_fraction(theta, nat + acc / (decim * dt), K, b))
    return KuramotoTrajectory(np.asarray(ts), np.asarray(bs), np.asarray(sync), theta)


def mean_field_order(K: float, diffusion: float) -> float:
    """Stationary |b| of noisy identical oscillators: r = I1(K r / D) / I0(K r / D).

    Zero at and below the critical coupling K_c = 2 D.
    """
    if diffusion <= 0:
        return 1.0 if K > 0 else 0.0
    if K <= 2.0 * diffusion:
        return 0.0

    def residual(r):
        x = K * r / diffusion
        return special.ive(1, x) / special.ive(0, x) - r

    return float(optimize.brentq(residual, 1e-12, 1.0, xtol=1e-14))


def critical_coupling(diffusion: float) -> float:
    return 2.0 * diffusion


def fit_critical_coupling(K_values, order_values) -> float:
    """Critical coupling of the mean-field curve that best fits measured |b|(K).

    Fits the effective noise D in r(K; D) by least squares and returns 2 D.
    """
    K_values = np.asarray(K_values, dtype=float)
    order_values = np.asarray(order_values, dtype=float)

    def cost(log_d):
        d = math.exp(log_d)
        model = np.array([mean_field_order(k, d) for k in K_values])
        return float(np.sum((model - order_values) ** 2))

    guess = math.log(np.min(K_values) / 2.0)
    res = optimize.minimize_scalar(cost, bounds=(guess - 3.0, guess + 3.0), method="bounded",
                                   options={"xatol": 1e-8})
    return 2.0 * math.exp(res.x)
