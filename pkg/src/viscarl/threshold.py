"""Lasing threshold: closed-form conditions and simulation-driven bisection.

Linearizing the density ladder about the uniform state couples only the
bunching b and the probe a-:

    b'  = -D b - (4 eps U0 a+ / gamma_fr) a-
    a-' = -kappa a- - i N U0 a+ b

whose characteristic equation is (lam + D)(lam + kappa) = i (2 eps rho)^3 / gamma_fr.
Setting lam = i w recovers w^2 = D kappa and the full lasing condition
kappa sigma^2 (sigma^2 + kappa gamma_fr)^2 / gamma_fr = (2 eps rho)^6.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .fokker_planck import run_fp_coupled, init_distribution, phase_velocity
from .langevin import LangevinConfig, run_coupled
from .units import DerivedScales


@dataclass
class ThresholdResult:
    alpha_plus_thr_sq: float
    pump_power_thr: float
    rho_thr: float
    delta_omega_thr: float
    method: str
    margin: float = math.nan
    approximate: bool = False
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


class NoThresholdFound(RuntimeError):
    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


def _gain_cubed(scales: DerivedScales, alpha_sq: float) -> float:
    """(2 eps rho)^3 = 4 eps N U0^2 alpha_+^2."""
    return 4.0 * scales.epsilon * scales.atom_number * scales.u0 ** 2 * alpha_sq


def _loss_sixth(scales: DerivedScales) -> float:
    s2 = scales.sigma ** 2
    return scales.kappa * s2 * (s2 + scales.kappa * scales.gamma_fr) ** 2 / scales.gamma_fr


def lasing_margin(scales: DerivedScales, alpha_sq: float | None = None) -> float:
    """Signed lasing margin from the full condition, in [-1, 1].

    ``(R - L) / max(R, L)`` with R = (2 eps rho)^6 and L the loss side; positive
    means lasing. Returns +1 when sigma = 0 (the loss side vanishes).
    """
    if not scales.gamma_fr > 0:
        raise ValueError("lasing margin needs gamma_fr > 0")
    if alpha_sq is None:
        alpha_sq = scales.alpha_plus ** 2
    if scales.sigma == 0:
        return 1.0
    r = _gain_cubed(scales, alpha_sq) ** 2
    loss = _loss_sixth(scales)
    return (r - loss) / max(r, loss)


def exact_threshold_alpha_sq(scales: DerivedScales) -> float:
    """Pump photon number at equality of the full lasing condition."""
    return math.sqrt(_loss_sixth(scales)) / (4.0 * scales.epsilon * scales.atom_number * scales.u0 ** 2)


def analytic_threshold(scales: DerivedScales) -> ThresholdResult:
    """Good-cavity threshold pump, CARL parameter and rotation frequency."""
    if not (scales.gamma_fr > 0 and scales.sigma > 0):
        raise ValueError("analytic threshold needs gamma_fr > 0 and sigma > 0")
    ratio = math.sqrt(scales.kappa / scales.gamma_fr)
    alpha_sq = ratio * scales.sigma ** 3 / (4.0 * scales.epsilon * scales.atom_number * scales.u0 ** 2)
    rho_thr = (scales.kappa / scales.gamma_fr) ** (1.0 / 6.0) * scales.sigma / (2.0 * scales.epsilon)
    approximate = scales.kappa * scales.gamma_fr > scales.sigma ** 2
    if approximate:
        warnings.warn("kappa*gamma_fr > sigma^2: good-cavity threshold is approximate", stacklevel=2)
    return ThresholdResult(
        alpha_plus_thr_sq=alpha_sq,
        pump_power_thr=scales.photon_power * alpha_sq,
        rho_thr=rho_thr,
        delta_omega_thr=scales.sigma * ratio,
        method="analytic",
        margin=lasing_margin(scales),
        approximate=approximate,
    )


def linear_matrix(scales: DerivedScales, alpha_sq: float) -> np.ndarray:
    ap = math.sqrt(alpha_sq)
    a = 4.0 * scales.epsilon * scales.u0 * ap / scales.gamma_fr
    c = scales.atom_number * scales.u0 * ap
    return np.array([[-scales.diffusion_D, -a], [-1j * c, -scales.kappa]], dtype=complex)


def growth_rate_linearized(scales: DerivedScales, alpha_sq: float | None = None) -> complex:
    """Dominant eigenvalue of the (b, a-) linearization: growth + i rotation."""
    if not scales.gamma_fr > 0:
        raise ValueError("linearization needs gamma_fr > 0")
    if alpha_sq is None:
        alpha_sq = scales.alpha_plus ** 2
    eig = np.linalg.eigvals(linear_matrix(scales, alpha_sq))
    return complex(eig[np.argmax(eig.real)])


def fp_linear_growth(scales: DerivedScales, alpha_sq: float, *, truncation: int = 4,
                     perturbation: float = 1e-8, settle: float = 60.0, window: float = 40.0,
                     dt_factor: float = 0.02) -> tuple[float, float]:
    """Growth rate and rotation frequency of |p_1| measured from an FP run.

    The run starts from a tiny m=1 perturbation, waits ``settle/(D+kappa)``
    for the subdominant mode to die out, then fits log|b| and arg b over a
    further ``window/(D+kappa)``.
    """
    rate = scales.diffusion_D + scales.kappa
    t_settle = settle / rate
    t_window = window / rate
    coupling = math.sqrt(abs(_gain_cubed(scales, alpha_sq)) / scales.gamma_fr)
    dt = dt_factor / max(rate, coupling)
    n_fit = 40
    state = init_distribution("perturbed", truncation, amplitude=perturbation)
    head = run_fp_coupled(scales, alpha_sq, t_settle, state=state, dt_max=dt,
                          sample_dt=t_settle, cfl=np.inf)
    tail = run_fp_coupled(scales, alpha_sq, t_window, state=head.final, dt_max=dt,
                          sample_dt=t_window / n_fit, cfl=np.inf)
    t = tail.t
    logb = np.log(np.abs(tail.bunching))
    growth = float(np.polyfit(t - t[0], logb, 1)[0])
    return growth, phase_velocity(t, tail.bunching)


def _langevin_lasing(scales: DerivedScales, alpha_sq: float, t_max: float, seed: int,
                     average_from: float, floor_factor: float, threads) -> tuple[float, float]:
    cfg = LangevinConfig(t_max=t_max, mode="overdamped", pump=alpha_sq, seed=seed, threads=threads)
    traj = run_coupled(scales, cfg)
    level = traj.time_average(t_from=average_from * t_max)
    floor = floor_factor / math.sqrt(scales.atom_number)
    return level - floor, phase_velocity(traj.t[traj.t >= average_from * t_max],
                                         traj.bunching[traj.t >= average_from * t_max])


def numeric_threshold(scales: DerivedScales, solver: str = "fp", bracket: tuple | None = None,
                      rel_tol: float = 1e-3, max_widen: int = 8, *, truncation: int = 4,
                      langevin_t_max: float | None = None, seed: int = 0,
                      floor_factor: float = 3.0, threads=None) -> ThresholdResult:
    """Bisection on alpha_+^2 for the onset of lasing in a dynamical solver.

    ``fp`` bisects on the sign of the measured growth rate of |p_1|; ``langevin``
    on whether the late-time mean |b| of an overdamped ensemble exceeds
    ``floor_factor / sqrt(N)``.
    """
    guess = analytic_threshold(scales).alpha_plus_thr_sq if scales.sigma > 0 else None
    if guess is None:
        raise NoThresholdFound("sigma = 0: no finite threshold", {"sigma": 0.0})
    lo, hi = bracket if bracket is not None else (0.5 * guess, 2.0 * guess)
    if solver == "fp":
        def probe(a2):
            return fp_linear_growth(scales, a2, truncation=truncation)
    elif solver == "langevin":
        t_max = langevin_t_max or 400.0 / (scales.diffusion_D + scales.kappa)

        def probe(a2):
            return _langevin_lasing(scales, a2, t_max, seed, 0.5, floor_factor, threads)
    else:
        raise ValueError(f"unknown solver {solver!r}")

    history = []
    f_lo, w_lo = probe(lo)
    f_hi, w_hi = probe(hi)
    history += [(lo, f_lo), (hi, f_hi)]
    widen = 0
    while not (f_lo < 0 < f_hi):
        if widen >= max_widen:
            raise NoThresholdFound("no sign change in the maximal bracket",
                                   {"bracket": (lo, hi), "history": history})
        if f_lo >= 0:
            lo /= 4.0
            f_lo, w_lo = probe(lo)
            history.append((lo, f_lo))
        if f_hi <= 0:
            hi *= 4.0
            f_hi, w_hi = probe(hi)
            history.append((hi, f_hi))
        widen += 1
    while (hi - lo) / hi > rel_tol:
        mid = 0.5 * (lo + hi)
        f_mid, w_mid = probe(mid)
        history.append((mid, f_mid))
        if f_mid < 0:
            lo, f_lo, w_lo = mid, f_mid, w_mid
        else:
            hi, f_hi, w_hi = mid, f_mid, w_mid
    alpha_sq = 0.5 * (lo + hi)
    # rotation at threshold: interpolate between the bracketing runs
    w = w_lo + (w_hi - w_lo) * (0.0 - f_lo) / (f_hi - f_lo) if f_hi != f_lo else 0.5 * (w_lo + w_hi)
    rho = (_gain_cubed(scales, alpha_sq) / (8.0 * scales.epsilon ** 3)) ** (1.0 / 3.0)
    return ThresholdResult(
        alpha_plus_thr_sq=alpha_sq,
        pump_power_thr=scales.photon_power * alpha_sq,
        rho_thr=rho,
        delta_omega_thr=abs(w),
        method=f"numeric-{solver}",
        margin=lasing_margin(scales),
        diagnostics={"bracket": [lo, hi], "evaluations": len(history)},
    )
