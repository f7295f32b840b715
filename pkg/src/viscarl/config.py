"""YAML run configuration: schema, unit-suffixed keys, validation, defaults.

Every key carries its unit in the name (``temperature_K``, ``kappa_rad_per_s``).
Rate keys may be given in Hz instead (``kappa_Hz``), converted with 2 pi.
Unknown keys are rejected with the closest valid spelling.
"""

from __future__ import annotations

import copy
import difflib
import math
from pathlib import Path

import yaml

from .units import AMU, TWO_PI, ParameterError, PhysicalParams

OBSERVED_THRESHOLD_W = 4.0


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


def _num(kind):
    def conv(key, value):
        if isinstance(value, bool):
            raise ConfigError(key, f"expected a number, got {value!r}")
        if isinstance(value, str):
            try:
                value = float(value)
            except ValueError:
                raise ConfigError(key, f"expected a number, got {value!r}") from None
        if not isinstance(value, (int, float)):
            raise ConfigError(key, f"expected a number, got {value!r}")
        if not math.isfinite(value):
            raise ConfigError(key, "must be finite")
        if kind is int:
            if float(value) != int(value):
                raise ConfigError(key, f"expected an integer, got {value!r}")
            return int(value)
        return float(value)
    return conv


def _opt(conv):
    def wrapped(key, value):
        return None if value is None else conv(key, value)
    return wrapped


def _choice(*options):
    def conv(key, value):
        if value not in options:
            raise ConfigError(key, f"must be one of {', '.join(options)}; got {value!r}")
        return value
    return conv


def _num_list(kind):
    item = _num(kind)

    def conv(key, value):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(key, "expected a list of numbers")
        return [item(f"{key}[{i}]", v) for i, v in enumerate(value)]
    return conv


def _str(key, value):
    if not isinstance(value, str):
        raise ConfigError(key, f"expected a string, got {value!r}")
    return value


FLOAT, INT = _num(float), _num(int)
OPT_FLOAT, OPT_INT = _opt(FLOAT), _opt(INT)

_DEFAULT = PhysicalParams()

# section -> key -> (converter, default). Rate keys ending in _rad_per_s also accept _Hz.
SCHEMA = {
    "physical": {
        "wavelength_m": (FLOAT, _DEFAULT.wavelength),
        "atomic_mass_u": (FLOAT, 85.0),
        "temperature_K": (FLOAT, _DEFAULT.temperature),
        "kappa_rad_per_s": (FLOAT, _DEFAULT.kappa),
        "fsr_Hz": (FLOAT, _DEFAULT.fsr),
        "detuning_a_rad_per_s": (FLOAT, _DEFAULT.detuning_a),
        "rabi_g_rad_per_s": (OPT_FLOAT, None),
        "u0_rad_per_s": (OPT_FLOAT, None),
        "atom_number": (INT, int(_DEFAULT.atom_number)),
        "gamma_fr_rad_per_s": (FLOAT, _DEFAULT.gamma_fr),
        "pump_power_W": (FLOAT, _DEFAULT.pump_power),
        "fsr_factor": (FLOAT, 1.0),
        "calibration_threshold_W": (FLOAT, OBSERVED_THRESHOLD_W),
    },
    "solver": {
        "name": (_choice("fp", "langevin"), "fp"),
        "truncation": (INT, 32),
        "ensemble_size": (OPT_INT, 2000),
        "dt_factor": (FLOAT, 0.02),
        "cfl": (FLOAT, 2.0),
    },
    "fp_run": {
        "pump_over_threshold": (OPT_FLOAT, None),
        "t_max_s": (FLOAT, 2e-4),
        "sample_dt_s": (OPT_FLOAT, None),
        "perturbation": (FLOAT, 1e-6),
    },
    "langevin_run": {
        "mode": (_choice("overdamped", "inertial"), "overdamped"),
        "field": (_choice("dynamic", "adiabatic"), "dynamic"),
        "omega_ca_rad_per_s": (FLOAT, 0.0),
        "pump_over_threshold": (OPT_FLOAT, None),
        "t_max_s": (FLOAT, 2e-5),
        "sample_dt_s": (OPT_FLOAT, None),
        "snapshot_times_s": (_num_list(float), []),
    },
    "kuramoto_run": {
        "oscillators": (INT, 4000),
        "coupling_over_diffusion": (OPT_FLOAT, None),
        "omega_ca_rad_per_s": (FLOAT, TWO_PI * 176e3),
        "t_max_s": (OPT_FLOAT, None),
        "dt_s": (OPT_FLOAT, None),
    },
    "pump_ramp": {
        "peak_over_threshold": (FLOAT, 2.0),
        "floor_over_threshold": (FLOAT, 0.05),
        "duration_s": (FLOAT, 40e-3),
        "points": (INT, 161),
    },
    "threshold_scan": {
        "detuning_a_rad_per_s": (_num_list(float), []),
        "atom_number": (_num_list(float), []),
        "temperature_K": (_num_list(float), []),
        "rel_tol": (FLOAT, 1e-4),
    },
    "molasses_off": {
        "switch_time_s": (FLOAT, 0.3e-3),
        "duration_s": (FLOAT, 2.3e-3),
        "pump_over_threshold": (FLOAT, 1.5),
        "sample_dt_s": (FLOAT, 1e-7),
        "window_s": (FLOAT, 50e-6),
        "hop_s": (FLOAT, 25e-6),
        "dt_factor": (FLOAT, 0.04),
    },
    "spectrogram": {
        "input_csv": (_opt(_str), None),
        "window_s": (FLOAT, 50e-6),
        "hop_s": (FLOAT, 25e-6),
        "band_min_Hz": (OPT_FLOAT, None),
        "band_max_Hz": (OPT_FLOAT, None),
    },
}


def _suggest(name: str, options) -> str:
    close = difflib.get_close_matches(name, list(options), n=1, cutoff=0.6)
    return f" (did you mean {close[0]!r}?)" if close else ""


def defaults() -> dict:
    return {sec: {k: copy.deepcopy(v[1]) for k, v in keys.items()} for sec, keys in SCHEMA.items()}


def resolve(raw: dict | None) -> dict:
    """Validated config with every key present; raises ConfigError naming the key."""
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a mapping of sections")
    out = defaults()
    for section, values in raw.items():
        if section not in SCHEMA:
            raise ConfigError(section, "unknown section" + _suggest(section, SCHEMA))
        if values is None:
            continue
        if not isinstance(values, dict):
            raise ConfigError(section, "section must be a mapping")
        keys = SCHEMA[section]
        for key, value in values.items():
            target = key
            if key not in keys and key.endswith("_Hz"):
                alt = key[:-3] + "_rad_per_s"
                if alt in keys:
                    if alt in values:
                        raise ConfigError(f"{section}.{key}", f"given together with {alt}")
                    target = alt
            if target not in keys:
                raise ConfigError(f"{section}.{key}", "unknown key" + _suggest(key, keys))
            conv = keys[target][0]
            value = conv(f"{section}.{key}", value)
            if target != key and value is not None:
                value = [TWO_PI * v for v in value] if isinstance(value, list) else TWO_PI * value
            out[section][target] = value
    _check(out)
    return out


def _check(cfg: dict):
    phys = cfg["physical"]
    try:
        physical_params(cfg)
    except ParameterError as exc:
        names = {"wavelength": "wavelength_m", "atomic_mass": "atomic_mass_u",
                 "temperature": "temperature_K", "kappa": "kappa_rad_per_s", "fsr": "fsr_Hz",
                 "detuning_a": "detuning_a_rad_per_s", "rabi_g": "rabi_g_rad_per_s",
                 "atom_number": "atom_number", "gamma_fr": "gamma_fr_rad_per_s",
                 "pump_power": "pump_power_W", "fsr_factor": "fsr_factor"}
        raise ConfigError(f"physical.{names.get(exc.field, exc.field)}", str(exc).split(": ", 1)[-1]) from None
    if not phys["calibration_threshold_W"] > 0:
        raise ConfigError("physical.calibration_threshold_W", "must be > 0")
    if phys["gamma_fr_rad_per_s"] <= 0:
        raise ConfigError("physical.gamma_fr_rad_per_s", "must be > 0 (the molasses-on state)")
    sol = cfg["solver"]
    if sol["truncation"] < 2:
        raise ConfigError("solver.truncation", "must be >= 2")
    if sol["ensemble_size"] is not None and sol["ensemble_size"] < 1:
        raise ConfigError("solver.ensemble_size", "must be >= 1")
    for sec, key in (("solver", "dt_factor"), ("solver", "cfl"), ("fp_run", "t_max_s"),
                     ("langevin_run", "t_max_s"), ("pump_ramp", "duration_s"),
                     ("molasses_off", "duration_s"), ("molasses_off", "switch_time_s"),
                     ("molasses_off", "sample_dt_s"), ("molasses_off", "window_s"),
                     ("molasses_off", "hop_s"), ("molasses_off", "dt_factor"), ("spectrogram", "window_s"), ("spectrogram", "hop_s"),
                     ("threshold_scan", "rel_tol"), ("molasses_off", "pump_over_threshold"),
                     ("pump_ramp", "peak_over_threshold")):
        if not cfg[sec][key] > 0:
            raise ConfigError(f"{sec}.{key}", "must be > 0")
    if cfg["pump_ramp"]["points"] < 12:
        raise ConfigError("pump_ramp.points", "must be >= 12")
    if cfg["pump_ramp"]["floor_over_threshold"] < 0:
        raise ConfigError("pump_ramp.floor_over_threshold", "must be >= 0")
    mo = cfg["molasses_off"]
    if mo["switch_time_s"] >= mo["duration_s"]:
        raise ConfigError("molasses_off.switch_time_s", "must be earlier than duration_s")
    if cfg["kuramoto_run"]["oscillators"] < 1:
        raise ConfigError("kuramoto_run.oscillators", "must be >= 1")
    for i, t in enumerate(cfg["langevin_run"]["snapshot_times_s"]):
        if not 0 <= t <= cfg["langevin_run"]["t_max_s"]:
            raise ConfigError(f"langevin_run.snapshot_times_s[{i}]", "must lie within [0, t_max_s]")
    scan = cfg["threshold_scan"]
    for i, v in enumerate(scan["atom_number"]):
        if v < 1:
            raise ConfigError(f"threshold_scan.atom_number[{i}]", "must be >= 1")
    for i, v in enumerate(scan["temperature_K"]):
        if not v > 0:
            raise ConfigError(f"threshold_scan.temperature_K[{i}]", "must be > 0")
    for i, v in enumerate(scan["detuning_a_rad_per_s"]):
        if v == 0:
            raise ConfigError(f"threshold_scan.detuning_a_rad_per_s[{i}]", "must be nonzero")


def physical_params(cfg: dict) -> PhysicalParams:
    """PhysicalParams from a resolved config (coupling not yet calibrated)."""
    p = cfg["physical"]
    return PhysicalParams(
        wavelength=p["wavelength_m"],
        atomic_mass=p["atomic_mass_u"] * AMU,
        temperature=p["temperature_K"],
        kappa=p["kappa_rad_per_s"],
        fsr=p["fsr_Hz"],
        detuning_a=p["detuning_a_rad_per_s"],
        rabi_g=p["rabi_g_rad_per_s"],
        u0=p["u0_rad_per_s"],
        atom_number=p["atom_number"],
        gamma_fr=p["gamma_fr_rad_per_s"],
        pump_power=p["pump_power_W"],
        fsr_factor=p["fsr_factor"],
    )


def calibrated_params(cfg: dict) -> tuple[PhysicalParams, bool]:
    """Parameters with a definite light shift.

    Without ``rabi_g`` or ``u0`` the coupling is backed out from
    ``calibration_threshold_W`` (the observed threshold power). Returns the
    parameters and whether calibration happened.
    """
    from .experiments import backout_coupling

    params = physical_params(cfg)
    if params.u0 is not None or params.rabi_g is not None:
        return params, False
    _, u0 = backout_coupling(cfg["physical"]["calibration_threshold_W"], params)
    return params.replace(u0=u0), True


def load_config(path: str | Path | None) -> dict:
    if path is None:
        return resolve({})
    path = Path(path)
    if not path.exists():
        raise ConfigError(str(path), "config file not found")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(str(path), f"not valid YAML: {exc}") from None
    return resolve(raw)
