"""Overdamped density evolution on the ring as a truncated Fourier hierarchy.

The density is ``P(theta) = (1/2pi) sum_m p_m exp(i m theta)`` with
``p_m = <exp(-i m theta)>``, ``p_0 = 1`` and ``p_{-m} = conj(p_m)``, so only
``m = 0..M`` is stored and the bunching is ``b = conj(p_1)``. Projecting the
drift ``(4 i eps U0 a+/gamma)(a- e^{-i theta} - conj(a-) e^{i theta})`` and the
diffusion ``D d^2/dtheta^2`` onto the modes gives the banded ladder

    dp_m/dt = -(4 eps U0 a+/gamma) m (conj(a-) p_{m-1} - a- p_{m+1}) - D m^2 p_m
    da-/dt  = -kappa a- - i N U0 a+ conj(p_1)

Time stepping is Lawson RK4: the diagonal part (-D m^2, -kappa) is absorbed
exactly in an integrating factor, the ladder and source are explicit.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numba
import numpy as np

from .schedules import PiecewiseLinear
from .units import DerivedScales


class NumericalError(RuntimeError):
    """Integration produced non-finite values or violated a stability guard."""

    def __init__(self, message: str, state=None):
        super().__init__(message)
        self.state = state


@dataclass
class DistributionState:
    modes: np.ndarray
    alpha_minus: complex = 0j
    t: float = 0.0

    def __post_init__(self):
        self.modes = np.asarray(self.modes, dtype=np.complex128)
        if self.modes.ndim != 1 or self.modes.size < 3:
            raise ValueError("need modes p_0..p_M with M >= 2")

    @property
    def truncation(self) -> int:
        return self.modes.size - 1

    @property
    def bunching(self) -> complex:
        return complex(np.conj(self.modes[1]))

    def copy(self) -> "DistributionState":
        return DistributionState(self.modes.copy(), self.alpha_minus, self.t)


def init_distribution(kind: str = "uniform", truncation: int = 64, amplitude: float = 0.0,
                      ensemble=None) -> DistributionState:
    """Initial density: ``uniform``, ``perturbed`` (p_1 = amplitude) or ``from_ensemble``."""
    if truncation < 2:
        raise ValueError("truncation M must be >= 2")
    modes = np.zeros(truncation + 1, dtype=np.complex128)
    modes[0] = 1.0
    if kind == "uniform":
        pass
    elif kind == "perturbed":
        if not abs(amplitude) < 1:
            raise ValueError("perturbation amplitude must be < 1 for a non-negative density")
        modes[1] = amplitude
    elif kind == "from_ensemble":
        if ensemble is None:
            raise ValueError("from_ensemble requires an ensemble")
        theta = np.asarray(getattr(ensemble, "theta", ensemble), dtype=float)
        m = np.arange(truncation + 1)
        modes = np.exp(-1j * np.outer(m, theta)).mean(axis=1)
        modes[0] = 1.0
    else:
        raise ValueError(f"unknown initial distribution kind {kind!r}")
    return DistributionState(modes)


def reconstruct_density(state: DistributionState, grid: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """Real density on a uniform grid over [0, 2pi)."""
    M = state.truncation
    if grid < 2 * M + 1:
        raise ValueError(f"grid must be >= 2M+1 = {2 * M + 1}")
    theta = 2 * np.pi * np.arange(grid) / grid
    spec = np.zeros(grid, dtype=np.complex128)
    spec[: M + 1] = state.modes
    spec[grid - M:] = np.conj(state.modes[1:][::-1])
    # P(theta_j) = (1/2pi) sum_m p_m e^{i m theta_j}
    density = np.fft.ifft(spec).real * grid / (2 * np.pi)
    return theta, density


@dataclass(frozen=True)
class FPCoefficients:
    """Constant coefficients of the mode ladder; the pump enters via a schedule."""

    drift: float      # 4 eps U0 / gamma_fr, multiplied by alpha_plus(t)
    source: float     # N U0, multiplied by alpha_plus(t)
    diffusion: float  # D
    kappa: float

    @classmethod
    def from_scales(cls, scales: DerivedScales) -> "FPCoefficients":
        if not scales.gamma_fr > 0:
            raise ValueError("the overdamped density equation needs gamma_fr > 0")
        return cls(
            drift=4.0 * scales.epsilon * scales.u0 / scales.gamma_fr,
            source=scales.atom_number * scales.u0,
            diffusion=scales.diffusion_D,
            kappa=scales.kappa,
        )


@numba.njit(cache=True, nogil=True)
def _rhs(p, am, ap, drift, source, out):
    M = p.size - 1
    a = drift * ap
    amc = am.conjugate()
    out[0] = 0.0
    for m in range(1, M):
        out[m] = -a * m * (amc * p[m - 1] - am * p[m + 1])
    out[M] = -a * M * (amc * p[M - 1])
    return -1j * source * ap * p[1].conjugate()


@numba.njit(cache=True, nogil=True)
def _pump_amp(t, sched_t, sched_v):
    v = np.interp(t, sched_t, sched_v)
    return math.sqrt(v) if v > 0 else 0.0


@numba.njit(cache=True, nogil=True)
def _lawson_rk4(p, am, t, t_end, dt_max, cfl, sched_t, sched_v, drift, source, diff, kappa):
    """Advance (p, am) from t to t_end. Returns (am, t, steps, min_dt)."""
    M = p.size - 1
    m2 = np.arange(M + 1) ** 2
    k1 = np.empty_like(p)
    k2 = np.empty_like(p)
    k3 = np.empty_like(p)
    k4 = np.empty_like(p)
    tmp = np.empty_like(p)
    E = np.empty(M + 1)
    Eh = np.empty(M + 1)
    steps = 0
    min_dt = dt_max
    last_h = -1.0
    Ef = 0.0
    Efh = 0.0
    while t_end - t > 1e-14 * abs(t_end):
        ap0 = _pump_amp(t, sched_t, sched_v)
        rate = abs(drift) * ap0 * abs(am) * M
        h = dt_max
        if rate * h > cfl:
            h = cfl / rate
        if t + h > t_end:
            h = t_end - t
        if h < min_dt:
            min_dt = h
        if h != last_h:
            for m in range(M + 1):
                E[m] = math.exp(-diff * m2[m] * h)
                Eh[m] = math.exp(-0.5 * diff * m2[m] * h)
            Ef = math.exp(-kappa * h)
            Efh = math.exp(-0.5 * kappa * h)
            last_h = h
        aph = _pump_amp(t + 0.5 * h, sched_t, sched_v)
        ap1 = _pump_amp(t + h, sched_t, sched_v)

        f1 = _rhs(p, am, ap0, drift, source, k1)
        for m in range(M + 1):
            tmp[m] = Eh[m] * (p[m] + 0.5 * h * k1[m])
        a2 = Efh * (am + 0.5 * h * f1)
        f2 = _rhs(tmp, a2, aph, drift, source, k2)
        for m in range(M + 1):
            tmp[m] = Eh[m] * p[m] + 0.5 * h * k2[m]
        a3 = Efh * am + 0.5 * h * f2
        f3 = _rhs(tmp, a3, aph, drift, source, k3)
        for m in range(M + 1):
            tmp[m] = E[m] * p[m] + h * Eh[m] * k3[m]
        a4 = Ef * am + h * Efh * f3
        f4 = _rhs(tmp, a4, ap1, drift, source, k4)
        for m in range(M + 1):
            p[m] = E[m] * p[m] + h / 6.0 * (E[m] * k1[m] + 2.0 * Eh[m] * (k2[m] + k3[m]) + k4[m])
        am = Ef * am + h / 6.0 * (Ef * f1 + 2.0 * Efh * (f2 + f3) + f4)
        p[0] = 1.0
        t += h
        steps += 1
    return am, t, steps, min_dt


def default_dt(coeffs: FPCoefficients, alpha_sq_max: float, truncation: int) -> float:
    """Largest step of the coupled linear problem: 0.05 / max(kappa, D, sqrt(coupling))."""
    coupling = abs(coeffs.drift * coeffs.source) * alpha_sq_max
    rate = max(coeffs.kappa, coeffs.diffusion, math.sqrt(coupling))
    return 0.05 / rate


def step_fp(state: DistributionState, alpha_sq: float, coeffs: FPCoefficients, dt: float,
            cfl: float = 1.0) -> DistributionState:
    """One Lawson-RK4 step at constant pump photon number ``alpha_sq``.

    Rejects steps whose ladder rate ``|drift| a+ |a-| M * dt`` exceeds ``cfl``.
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    ap = math.sqrt(alpha_sq)
    rate = abs(coeffs.drift) * ap * abs(state.alpha_minus) * state.truncation
    if rate * dt > cfl:
        raise NumericalError(f"step too large: need dt <= {cfl / rate:.3e} s", state)
    new = state.copy()
    sched_t = np.array([0.0])
    sched_v = np.array([float(alpha_sq)])
    am, t, _, _ = _lawson_rk4(new.modes, complex(new.alpha_minus), 0.0, dt, dt, np.inf,
                              sched_t, sched_v, coeffs.drift, coeffs.source,
                              coeffs.diffusion, coeffs.kappa)
    new.alpha_minus = complex(am)
    new.t = state.t + dt
    return new


@dataclass
class FPTrajectory:
    t: np.ndarray
    bunching: np.ndarray
    alpha_minus: np.ndarray
    alpha_sq: np.ndarray
    final: DistributionState
    converged: bool
    converged_at: float | None = None
    mode_dump: np.ndarray | None = None
    warnings: list = field(default_factory=list)

    @property
    def steady_bunching(self) -> float:
        return float(abs(self.bunching[-1]))

    @property
    def label(self) -> str:
        return "steady" if self.converged else "transient"


def run_fp_coupled(scales: DerivedScales, pump: PiecewiseLinear | float, t_max: float,
                   *, state: DistributionState | None = None, truncation: int = 64,
                   perturbation: float = 1e-6, sample_dt: float | None = None,
                   dt_max: float | None = None, cfl: float = 2.0, stop_on_steady: bool = False,
                   steady_tol: float = 1e-6, floor: float = 1e-12, dump_modes: bool = False,
                   tail_tol: float = 1e-3) -> FPTrajectory:
    """Self-consistent density/probe evolution under a pump schedule.

    ``pump`` is the pump photon number alpha_+^2 (constant or schedule). The
    steady-state detector compares |b| and |a-| one cavity lifetime apart; a
    run whose |b| falls below ``floor`` also counts as settled.
    """
    coeffs = FPCoefficients.from_scales(scales)
    if not isinstance(pump, PiecewiseLinear):
        pump = PiecewiseLinear.constant(float(pump))
    if pump.min() < 0:
        raise ValueError("pump photon number must be non-negative")
    if state is None:
        state = init_distribution("perturbed", truncation, amplitude=perturbation)
    else:
        state = state.copy()
    M = state.truncation
    if dt_max is None:
        dt_max = default_dt(coeffs, pump.max(), M)
    lifetime = 1.0 / scales.kappa
    if sample_dt is None:
        sample_dt = lifetime / 20
    lag = max(1, int(round(lifetime / sample_dt)))
    n_samples = int(math.ceil(t_max / sample_dt - 1e-9))
    sched_t, sched_v = pump.arrays()

    t0 = state.t
    ts = [t0]
    bs = [state.bunching]
    ams = [state.alpha_minus]
    dumps = [np.abs(state.modes[1:]).copy()] if dump_modes else None
    notes: list[str] = []
    converged = False
    converged_at = None
    tail_warned = False
    p = state.modes
    am = complex(state.alpha_minus)
    t = t0
    for i in range(1, n_samples + 1):
        t_target = t0 + min(i * sample_dt, t_max)
        am, t, _, _ = _lawson_rk4(p, am, t, t_target, dt_max, cfl, sched_t, sched_v,
                                  coeffs.drift, coeffs.source, coeffs.diffusion, coeffs.kappa)
        t = t_target
        if not (np.all(np.isfinite(p)) and np.isfinite(am)):
            raise NumericalError(f"non-finite mode amplitudes at t={t:.6e}",
                                 DistributionState(p.copy(), am, t))
        ts.append(t)
        bs.append(complex(np.conj(p[1])))
        ams.append(am)
        if dump_modes:
            dumps.append(np.abs(p[1:]).copy())
        if not tail_warned:
            peak = np.max(np.abs(p[1:]))
            if peak > 0 and abs(p[M]) > tail_tol * peak:
                tail_warned = True
                msg = f"truncation tail |p_M| exceeds {tail_tol:g} of the peak at t={t:.3e}"
                notes.append(msg)
                warnings.warn(msg, stacklevel=2)
        if len(bs) > lag and not converged:
            b_now, b_then = abs(bs[-1]), abs(bs[-1 - lag])
            a_now, a_then = abs(ams[-1]), abs(ams[-1 - lag])
            if b_now < floor:
                settled = True
            else:
                settled = (abs(b_now - b_then) <= steady_tol * b_now
                           and abs(a_now - a_then) <= steady_tol * max(a_now, 1e-300))
            if settled and t - t0 >= lifetime:
                converged = True
                converged_at = t
                if stop_on_steady:
                    break
    final = DistributionState(p.copy(), am, t)
    t_arr = np.asarray(ts)
    return FPTrajectory(
        t=t_arr,
        bunching=np.asarray(bs),
        alpha_minus=np.asarray(ams),
        alpha_sq=pump(t_arr),
        final=final,
        converged=converged,
        converged_at=converged_at,
        mode_dump=np.asarray(dumps) if dump_modes else None,
        warnings=notes,
    )


def phase_velocity(t: np.ndarray, z: np.ndarray) -> float:
    """Mean rotation rate of a complex series (rad/s) from its unwrapped phase."""
    phase = np.unwrap(np.angle(z))
    return float((phase[-1] - phase[0]) / (t[-1] - t[0]))
