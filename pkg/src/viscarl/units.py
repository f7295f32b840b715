"""Laboratory parameters and the scaled quantities the dynamics consume.

All rates are stored in rad/s. Hz only appears at I/O boundaries and in
``fsr`` (the cavity free spectral range), which enters the photon-number to
power conversion ``P = hbar * omega * fsr * |alpha|**2`` as a round-trip rate.
"""

from __future__ import annotations

import dataclasses
import math
import warnings
from dataclasses import dataclass

import scipy.constants as const

HBAR = const.hbar
K_B = const.k
AMU = const.atomic_mass
C_LIGHT = const.c

TWO_PI = 2.0 * math.pi


class ParameterError(ValueError):
    """Raised when a physical parameter violates its invariant.

    ``field`` names the offending parameter so callers (the config loader in
    particular) can report it.
    """

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class PhysicalParams:
    """Experiment-level inputs in SI units (rates in rad/s, fsr in Hz).

    The atom-light coupling is given either through ``rabi_g`` together with
    ``detuning_a`` (``U0 = g**2 / detuning_a``) or directly as ``u0``; a direct
    ``u0`` takes precedence.
    """

    wavelength: float = 795e-9
    atomic_mass: float = 85 * AMU
    temperature: float = 200e-6
    kappa: float = TWO_PI * 22e3
    fsr: float = 3.5e9
    detuning_a: float = -TWO_PI * 1.7e12
    rabi_g: float | None = None
    u0: float | None = None
    atom_number: int = 1_000_000
    gamma_fr: float = 4 * TWO_PI * 22e3
    pump_power: float = 4.0
    fsr_factor: float = 1.0

    def __post_init__(self):
        for name in ("wavelength", "atomic_mass", "kappa", "fsr", "pump_power", "fsr_factor"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ParameterError(name, f"must be strictly positive, got {value!r}")
        if not (self.atom_number >= 1):
            raise ParameterError("atom_number", f"must be >= 1, got {self.atom_number!r}")
        if not (math.isfinite(self.temperature) and self.temperature >= 0):
            raise ParameterError("temperature", f"must be >= 0, got {self.temperature!r}")
        if not (math.isfinite(self.gamma_fr) and self.gamma_fr >= 0):
            raise ParameterError("gamma_fr", f"must be >= 0, got {self.gamma_fr!r}")
        if not math.isfinite(self.detuning_a):
            raise ParameterError("detuning_a", "must be finite")
        if self.u0 is None and self.rabi_g is not None and self.detuning_a == 0:
            raise ParameterError("detuning_a", "must be nonzero when U0 is derived from rabi_g")

    def replace(self, **changes) -> "PhysicalParams":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class DerivedScales:
    """Scaled quantities: wavenumber, recoil scale, velocity spread, diffusion,
    light shift, pump amplitude and the CARL parameter.

    ``diffusion_D`` is ``nan`` when ``gamma_fr == 0`` (molasses off), where the
    diffusion coefficient sigma**2 / gamma_fr is undefined.
    """

    k: float
    omega_light: float
    epsilon: float
    sigma: float
    diffusion_D: float
    u0: float
    alpha_plus: float
    rho: float
    kappa: float
    gamma_fr: float
    atom_number: int
    photon_power: float
    atomic_mass: float

    @property
    def diffusion_defined(self) -> bool:
        return math.isfinite(self.diffusion_D)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def photon_power(params: PhysicalParams) -> float:
    """Power per intracavity photon, hbar * omega * fsr (W)."""
    omega = TWO_PI * C_LIGHT / params.wavelength
    return HBAR * omega * params.fsr * params.fsr_factor


def power_to_alpha(power: float, params: PhysicalParams) -> float:
    if power < 0:
        raise ParameterError("pump_power", "must be >= 0")
    return math.sqrt(power / photon_power(params))


def alpha_to_power(alpha: float, params: PhysicalParams) -> float:
    return photon_power(params) * alpha * alpha


def light_shift(params: PhysicalParams) -> float:
    """Single-photon light shift U0 (rad/s, signed like the detuning)."""
    if params.u0 is not None:
        return float(params.u0)
    if params.rabi_g is None:
        raise ParameterError("rabi_g", "either rabi_g or u0 must be given")
    if params.detuning_a == 0:
        raise ParameterError("detuning_a", "must be nonzero when U0 is derived from rabi_g")
    return params.rabi_g ** 2 / params.detuning_a


def carl_rho(atom_number: float, u0: float, alpha_plus: float, epsilon: float) -> float:
    """CARL parameter (N U0^2 alpha_+^2 / 2 eps^2)^(1/3)."""
    return (atom_number * u0 * u0 * alpha_plus * alpha_plus / (2.0 * epsilon * epsilon)) ** (1.0 / 3.0)


def derive_scales(params: PhysicalParams) -> DerivedScales:
    k = TWO_PI / params.wavelength
    omega = C_LIGHT * k
    epsilon = HBAR * k * k / params.atomic_mass
    sigma = 2.0 * k * math.sqrt(K_B * params.temperature / params.atomic_mass)
    if params.gamma_fr > 0:
        diffusion = sigma * sigma / params.gamma_fr
    else:
        diffusion = math.nan
    u0 = light_shift(params)
    alpha_plus = power_to_alpha(params.pump_power, params)
    rho = carl_rho(params.atom_number, u0, alpha_plus, epsilon)
    return DerivedScales(
        k=k,
        omega_light=omega,
        epsilon=epsilon,
        sigma=sigma,
        diffusion_D=diffusion,
        u0=u0,
        alpha_plus=alpha_plus,
        rho=rho,
        kappa=params.kappa,
        gamma_fr=params.gamma_fr,
        atom_number=int(params.atom_number),
        photon_power=photon_power(params),
        atomic_mass=params.atomic_mass,
    )


def velocity_spread(temperature: float, scales: DerivedScales) -> float:
    """sigma = 2 k sqrt(k_B T / m) for an arbitrary temperature."""
    if temperature < 0:
        raise ParameterError("temperature", "must be >= 0")
    return 2.0 * scales.k * math.sqrt(K_B * temperature / scales.atomic_mass)


def velocity_to_beat(velocity: float, scales: DerivedScales) -> float:
    """Beat angular frequency of a grating moving at ``velocity`` (m/s).

    With theta = 2 k x the grating phase velocity is 2 k v.
    """
    return 2.0 * scales.k * velocity


def beat_to_velocity(omega: float, scales: DerivedScales) -> float:
    return omega / (2.0 * scales.k)


def check_good_cavity(scales: DerivedScales, limit: float = 1.0) -> bool:
    """True when kappa * gamma_fr <= limit * sigma**2."""
    ok = scales.kappa * scales.gamma_fr <= limit * scales.sigma ** 2
    if not ok:
        warnings.warn(
            "outside the good-cavity regime (kappa*gamma_fr > sigma^2); "
            "closed-form threshold expressions are approximate",
            stacklevel=2,
        )
    return ok
