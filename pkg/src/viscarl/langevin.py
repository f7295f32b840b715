"""Stochastic N-atom dynamics coupled to the cavity probe field.

Atoms obey

    theta_n'' = -8 eps U0 a+ Im(a- e^{-i theta_n}) - gamma_fr theta_n' + xi_n

(``inertial``) or, with the momenta eliminated,

    theta_n'  = -(8 eps U0 a+ / gamma_fr) Im(a- e^{-i theta_n}) + xi_n / gamma_fr

(``overdamped``), where <xi xi> = 2 gamma_fr^2 D. The probe follows
``a-' = -kappa a- - i N U0 a+ b`` with b the bunching. Stochastic terms use
Euler-Maruyama (semi-implicit for the inertial position update). The single
field step ``step_field`` is exponential Euler (exact for constant b); the
coupled driver integrates the damping exactly with b interpolated linearly
across each step, which keeps the phase lag between probe and grating, and
hence the momentum exchange, accurate when the grating rotates fast.

Random kicks come from :mod:`viscarl.rng`, keyed on (seed, atom, step), and the
bunching sum runs sequentially, so trajectories do not depend on the number
of numba threads.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .fokker_planck import NumericalError
from .rng import normal_at
from .schedules import PiecewiseLinear
from .units import DerivedScales, velocity_spread


class StabilityError(ValueError):
    def __init__(self, message: str, required_dt: float):
        super().__init__(message)
        self.required_dt = required_dt


@dataclass
class EnsembleState:
    theta: np.ndarray
    theta_dot: np.ndarray | None = None
    t: float = 0.0
    step: int = 0

    def __post_init__(self):
        self.theta = np.ascontiguousarray(self.theta, dtype=np.float64)
        if self.theta.ndim != 1 or self.theta.size == 0:
            raise ValueError("theta must be a non-empty 1-D array")
        if self.theta_dot is not None:
            self.theta_dot = np.ascontiguousarray(self.theta_dot, dtype=np.float64)
            if self.theta_dot.shape != self.theta.shape:
                raise ValueError("theta_dot must match theta in length")

    @property
    def n(self) -> int:
        return self.theta.size

    @property
    def inertial(self) -> bool:
        return self.theta_dot is not None

    def copy(self) -> "EnsembleState":
        return EnsembleState(self.theta.copy(),
                             None if self.theta_dot is None else self.theta_dot.copy(),
                             self.t, self.step)


@dataclass
class FieldState:
    alpha_minus: complex = 0j
    alpha_plus: float = 0.0
    t: float = 0.0

    def __post_init__(self):
        if self.alpha_plus < 0:
            raise ValueError("alpha_plus must be >= 0")


@dataclass(frozen=True)
class NoiseSpec:
    seed: int
    diffusion_D: float
    gamma_fr: float

    def velocity_kick_std(self, dt: float) -> float:
        """Std of the per-step velocity kick, gamma sqrt(2 D dt)."""
        if self.diffusion_D == 0 or self.gamma_fr == 0:
            return 0.0
        return self.gamma_fr * math.sqrt(2.0 * self.diffusion_D * dt)

    def position_kick_std(self, dt: float) -> float:
        """Std of the overdamped per-step displacement, sqrt(2 D dt)."""
        if self.diffusion_D == 0:
            return 0.0
        return math.sqrt(2.0 * self.diffusion_D * dt)


def sample_initial_ensemble(n: int, temperature: float, scales: DerivedScales, seed: int,
                            inertial: bool = True) -> EnsembleState:
    """Uniform positions on [0, 2pi); Gaussian velocities with std 2k sqrt(k_B T/m)."""
    return _draw_ensemble(n, velocity_spread(temperature, scales), seed, inertial)


def _draw_ensemble(n: int, spread: float, seed: int, inertial: bool) -> EnsembleState:
    if n < 1:
        raise ValueError("need at least one atom")
    rng = np.random.Generator(np.random.Philox(seed))
    theta = rng.uniform(0.0, 2 * np.pi, size=n)
    theta_dot = None
    if inertial:
        theta_dot = rng.standard_normal(n) * spread if spread > 0 else np.zeros(n)
    return EnsembleState(theta, theta_dot)


def bunching(state_or_theta) -> complex:
    theta = getattr(state_or_theta, "theta", state_or_theta)
    theta = np.ascontiguousarray(theta, dtype=np.float64)
    cs = np.empty_like(theta)
    sn = np.empty_like(theta)
    _trig(theta, cs, sn)
    return _mean_phasor(cs, sn)


@numba.njit(parallel=True, cache=True)
def _trig(theta, cs, sn):
    for i in numba.prange(theta.size):
        cs[i] = math.cos(theta[i])
        sn[i] = math.sin(theta[i])


@numba.njit(cache=True)
def _mean_phasor(cs, sn):
    re = 0.0
    im = 0.0
    for i in range(cs.size):
        re += cs[i]
        im += sn[i]
    return complex(re / cs.size, im / cs.size)


@numba.njit(parallel=True, cache=True)
def _push_overdamped(theta, cs, sn, am_re, am_im, coef, kick, dt, seed, step):
    for i in numba.prange(theta.size):
        f = coef * (am_im * cs[i] - am_re * sn[i])
        d = f * dt
        if kick > 0.0:
            d += kick * normal_at(seed, i, step)
        theta[i] += d


@numba.njit(parallel=True, cache=True)
def _push_inertial(theta, theta_dot, cs, sn, am_re, am_im, coef, gamma, kick, dt, seed, step):
    for i in numba.prange(theta.size):
        acc = coef * (am_im * cs[i] - am_re * sn[i]) - gamma * theta_dot[i]
        v = theta_dot[i] + acc * dt
        if kick > 0.0:
            v += kick * normal_at(seed, i, step)
        theta_dot[i] = v
        theta[i] += v * dt


@numba.njit(cache=True)
def _sched(t, ts, vs):
    return np.interp(t, ts, vs)


@numba.njit(cache=True)
def _run_chunk(theta, theta_dot, am, t0, step0, nsteps, dt, seed,
               pump_t, pump_v, gam_t, gam_v, dif_t, dif_v,
               eps, u0, ncoup, kappa, inertial, adiabatic, omega_ca, cs, sn):
    # field: exact integral of kappa-damping with the atomic source linear in time
    # across each step; first order in the source lags a fast grating spuriously
    ef = math.exp(-kappa * dt)
    g0 = -math.expm1(-kappa * dt) / kappa
    g1 = (math.expm1(-kappa * dt) + kappa * dt) / (kappa * kappa * dt)
    a2 = _sched(t0, pump_t, pump_v)
    ap = math.sqrt(a2) if a2 > 0.0 else 0.0
    _trig(theta, cs, sn)
    src = -1j * ncoup * u0 * ap * _mean_phasor(cs, sn)
    if adiabatic:
        am = src / (kappa + 1j * omega_ca)
    for s in range(nsteps):
        t = t0 + s * dt
        step = step0 + s
        gamma = _sched(t, gam_t, gam_v)
        diff = _sched(t, dif_t, dif_v)
        if inertial:
            kick = gamma * math.sqrt(2.0 * diff * dt) if diff > 0.0 and gamma > 0.0 else 0.0
            _push_inertial(theta, theta_dot, cs, sn, am.real, am.imag, -8.0 * eps * u0 * ap,
                           gamma, kick, dt, seed, step)
        else:
            kick = math.sqrt(2.0 * diff * dt) if diff > 0.0 else 0.0
            _push_overdamped(theta, cs, sn, am.real, am.imag, -8.0 * eps * u0 * ap / gamma,
                             kick, dt, seed, step)
        a2 = _sched(t + dt, pump_t, pump_v)
        ap = math.sqrt(a2) if a2 > 0.0 else 0.0
        _trig(theta, cs, sn)
        src_new = -1j * ncoup * u0 * ap * _mean_phasor(cs, sn)
        if adiabatic:
            am = src_new / (kappa + 1j * omega_ca)
        else:
            am = am * ef + src * (g0 - g1) + src_new * g1
        src = src_new
    return am


def force(theta, field: FieldState, scales: DerivedScales) -> np.ndarray:
    """Deterministic field force on each atom (rad/s^2), real by construction."""
    theta = np.asarray(theta, dtype=float)
    am = complex(field.alpha_minus)
    return -8.0 * scales.epsilon * scales.u0 * field.alpha_plus * (
        am.imag * np.cos(theta) - am.real * np.sin(theta))


def _check_dt(dt: float, max_rate: float, guard: float):
    if not dt > 0:
        raise ValueError("dt must be > 0")
    if dt * max_rate > guard:
        required = guard / max_rate
        raise StabilityError(f"dt={dt:.3e} s violates the stability guard; need dt <= {required:.3e} s",
                             required)


def _single_step(state: EnsembleState, field: FieldState, noise: NoiseSpec, dt: float,
                 scales: DerivedScales, inertial: bool, gamma: float) -> EnsembleState:
    new = state.copy()
    cs = np.empty_like(new.theta)
    sn = np.empty_like(new.theta)
    _trig(new.theta, cs, sn)
    am = complex(field.alpha_minus)
    coef = -8.0 * scales.epsilon * scales.u0 * field.alpha_plus
    if inertial:
        _push_inertial(new.theta, new.theta_dot, cs, sn, am.real, am.imag, coef,
                       gamma, noise.velocity_kick_std(dt), dt, noise.seed, state.step)
    else:
        _push_overdamped(new.theta, cs, sn, am.real, am.imag, coef / gamma,
                         noise.position_kick_std(dt), dt, noise.seed, state.step)
    new.t = state.t + dt
    new.step = state.step + 1
    return new


def step_inertial(state: EnsembleState, field: FieldState, noise: NoiseSpec, dt: float,
                  scales: DerivedScales, guard: float = 0.05) -> EnsembleState:
    if not state.inertial:
        raise ValueError("inertial step needs theta_dot")
    rate = max(noise.gamma_fr, scales.kappa,
               math.sqrt(abs(8 * scales.epsilon * scales.u0 * field.alpha_plus * abs(field.alpha_minus))))
    _check_dt(dt, rate, guard)
    return _single_step(state, field, noise, dt, scales, True, noise.gamma_fr)


def step_overdamped(state: EnsembleState, field: FieldState, noise: NoiseSpec, dt: float,
                    scales: DerivedScales, guard: float = 0.05) -> EnsembleState:
    if not noise.gamma_fr > 0:
        raise ValueError("overdamped limit needs gamma_fr > 0")
    curvature = abs(8 * scales.epsilon * scales.u0 * field.alpha_plus * abs(field.alpha_minus)) / noise.gamma_fr
    _check_dt(dt, max(scales.kappa, curvature), guard)
    return _single_step(state, field, noise, dt, scales, False, noise.gamma_fr)


def step_field(field: FieldState, b: complex, scales: DerivedScales, dt: float,
               atom_number: int | None = None) -> FieldState:
    """Exponential-Euler step of the probe equation with b held over the step."""
    if not dt > 0:
        raise ValueError("dt must be > 0")
    n = scales.atom_number if atom_number is None else atom_number
    ef = math.exp(-scales.kappa * dt)
    src = -1j * n * scales.u0 * field.alpha_plus * b
    am = field.alpha_minus * ef + src * (1 - ef) / scales.kappa
    return FieldState(am, field.alpha_plus, field.t + dt)


def max_rate(scales: DerivedScales, mode: str, alpha_sq: float, gamma: float,
             diffusion: float, sigma: float) -> float:
    """Fastest rate the integrator has to resolve."""
    gain3 = 4.0 * scales.epsilon * scales.atom_number * scales.u0 ** 2 * alpha_sq
    if mode == "overdamped":
        rates = [scales.kappa, diffusion, math.sqrt(gain3 / gamma)]
    else:
        rates = [scales.kappa, gamma, sigma, gain3 ** (1.0 / 3.0)]
    return max(r for r in rates if math.isfinite(r))


@contextlib.contextmanager
def numba_threads(n: int | None):
    if n is None:
        yield
        return
    previous = numba.get_num_threads()
    numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))
    try:
        yield
    finally:
        numba.set_num_threads(previous)


@dataclass
class LangevinConfig:
    """Settings of one coupled run.

    ``pump`` is the pump photon number alpha_+^2 and, like ``gamma_fr`` and
    ``diffusion``, may be a schedule. ``field="adiabatic"`` slaves the probe to
    ``-i N U0 a+ b / (kappa + i omega_ca)`` instead of integrating it.
    """

    t_max: float
    mode: str = "overdamped"
    pump: PiecewiseLinear | float | None = None
    gamma_fr: PiecewiseLinear | float | None = None
    diffusion: PiecewiseLinear | float | None = None
    dt: float | None = None
    sample_dt: float | None = None
    seed: int = 0
    field: str = "dynamic"
    omega_ca: float = 0.0
    snapshot_times: tuple = ()
    threads: int | None = None
    guard: float = 0.05
    dt_factor: float = 0.02

    def __post_init__(self):
        if self.mode not in ("inertial", "overdamped"):
            raise ValueError(f"mode must be inertial or overdamped, got {self.mode!r}")
        if self.field not in ("dynamic", "adiabatic"):
            raise ValueError(f"field must be dynamic or adiabatic, got {self.field!r}")
        if not self.t_max > 0:
            raise ValueError("t_max must be > 0")


@dataclass
class LangevinTrajectory:
    t: np.ndarray
    bunching: np.ndarray
    alpha_minus: np.ndarray
    alpha_sq: np.ndarray
    dt: float
    final: EnsembleState
    snapshots: dict = field(default_factory=dict)

    def time_average(self, quantity: str = "bunching", t_from: float = 0.0) -> float:
        sel = self.t >= t_from
        return float(np.mean(np.abs(getattr(self, quantity)[sel])))


def _as_schedule(value, default) -> PiecewiseLinear:
    if value is None:
        value = default
    if isinstance(value, PiecewiseLinear):
        return value
    return PiecewiseLinear.constant(float(value))


def run_coupled(scales: DerivedScales, config: LangevinConfig,
                state: EnsembleState | None = None,
                alpha_minus: complex = 0j) -> LangevinTrajectory:
    """Interleaved atom/field stepping on a shared clock.

    Atoms see the field at the start of each step and the field sees the
    bunching at the start of the step. Output is sampled every ``sample_dt``.
    """
    inertial = config.mode == "inertial"
    pump = _as_schedule(config.pump, scales.alpha_plus ** 2)
    gamma = _as_schedule(config.gamma_fr, scales.gamma_fr)
    default_d = scales.diffusion_D if scales.diffusion_defined else 0.0
    diffusion = _as_schedule(config.diffusion, default_d)
    if pump.min() < 0 or gamma.min() < 0 or diffusion.min() < 0:
        raise ValueError("schedules must be non-negative")
    if not inertial and gamma.min() <= 0:
        raise ValueError("overdamped limit needs gamma_fr > 0 throughout")
    if state is None:
        state = _draw_ensemble(scales.atom_number, scales.sigma, config.seed, inertial)
    else:
        state = state.copy()
    if inertial != state.inertial:
        raise ValueError("ensemble state does not match the integration mode")

    rate = max_rate(scales, config.mode, pump.max(), max(gamma.max(), 1e-300) if inertial else gamma.min(),
                    diffusion.max(), scales.sigma)
    dt = config.dt if config.dt is not None else config.dt_factor / rate
    _check_dt(dt, rate, config.guard)
    sample_dt = config.sample_dt if config.sample_dt is not None else max(dt, 1.0 / (20 * scales.kappa))
    decim = max(1, int(round(sample_dt / dt)))
    n_chunks = int(math.ceil(config.t_max / (decim * dt) - 1e-9))

    theta = state.theta
    theta_dot = state.theta_dot if inertial else np.zeros(1)
    cs = np.empty_like(theta)
    sn = np.empty_like(theta)
    pt, pv = pump.arrays()
    gt, gv = gamma.arrays()
    ft, fv = diffusion.arrays()
    snap_steps = {int(round((ts - state.t) / dt)): ts for ts in config.snapshot_times}
    snapshots = {}
    t_start = state.t
    step = state.step
    am = complex(alpha_minus)

    ts = [state.t]
    bs = [bunching(theta)]
    ams = [am]
    with numba_threads(config.threads):
        for c in range(n_chunks):
            steps_here = decim
            local0 = c * decim
            for s_idx in sorted(k for k in snap_steps if local0 <= k < local0 + decim):
                # split the chunk so snapshots land exactly on their step
                if s_idx > local0:
                    am = _run_chunk(theta, theta_dot, am, t_start + local0 * dt, step + local0,
                                    s_idx - local0, dt, config.seed, pt, pv, gt, gv, ft, fv,
                                    scales.epsilon, scales.u0, float(scales.atom_number), scales.kappa,
                                    inertial, config.field == "adiabatic", config.omega_ca, cs, sn)
                    steps_here -= s_idx - local0
                    local0 = s_idx
                snapshots[snap_steps[s_idx]] = theta.copy()
            am = _run_chunk(theta, theta_dot, am, t_start + local0 * dt, step + local0, steps_here,
                            dt, config.seed, pt, pv, gt, gv, ft, fv,
                            scales.epsilon, scales.u0, float(scales.atom_number), scales.kappa,
                            inertial, config.field == "adiabatic", config.omega_ca, cs, sn)
            t_now = t_start + (c + 1) * decim * dt
            if not (np.isfinite(am) and np.all(np.isfinite(theta))):
                dump = EnsembleState(theta.copy(), theta_dot.copy() if inertial else None, t_now,
                                     step + (c + 1) * decim)
                raise NumericalError(f"non-finite state at t={t_now:.6e}", dump)
            ts.append(t_now)
            bs.append(bunching(theta))
            ams.append(am)
    total = n_chunks * decim
    final = EnsembleState(theta, theta_dot if inertial else None, t_start + total * dt, step + total)
    if config.field == "adiabatic":
        # report the slaved field consistent with the recorded bunching
        ap_s = np.sqrt(np.maximum(pump(np.asarray(ts)), 0.0))
        ams = list(-1j * scales.atom_number * scales.u0 * ap_s * np.asarray(bs)
                   / (scales.kappa + 1j * config.omega_ca))
    t_arr = np.asarray(ts)
    return LangevinTrajectory(t_arr, np.asarray(bs), np.asarray(ams), pump(t_arr), dt, final, snapshots)
