"""End-to-end protocols: pump ramp, threshold scans, molasses switch-off.

Each protocol returns a plain dataset (dict of equal-length numpy columns plus
a small summary dict) that the CLI writes out as CSV.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .fokker_planck import init_distribution, phase_velocity, run_fp_coupled
from .langevin import LangevinConfig, _draw_ensemble, run_coupled
from .schedules import PiecewiseLinear, triangular_ramp
from .signals import BeatTrace, spectrogram
from .threshold import (NoThresholdFound, analytic_threshold, exact_threshold_alpha_sq,
                        lasing_margin, numeric_threshold)
from .units import TWO_PI, PhysicalParams, derive_scales, photon_power

PROTOCOL_KINDS = ("pump_ramp", "threshold_scan", "molasses_off")
SCAN_AXES = ("detuning_a", "atom_number", "temperature")
REFERENCE_ATOM_NUMBER = 1e6
REFERENCE_DETUNING = -TWO_PI * 1.5e12


@dataclass
class Dataset:
    columns: dict
    summary: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.columns[key]

    @property
    def n_rows(self) -> int:
        return len(next(iter(self.columns.values()))) if self.columns else 0


@dataclass(frozen=True)
class Protocol:
    """What to run: a kind, its schedule or scan axes, and the solver.

    ``schedule`` is the pump photon number alpha_+^2 versus time. ``switch_time``
    is when friction and diffusion are switched off (molasses_off only).
    ``axes`` maps a scan axis name to its list of values.
    """

    kind: str
    schedule: PiecewiseLinear | None = None
    switch_time: float | None = None
    duration: float | None = None
    axes: dict = field(default_factory=dict)
    solver: str = "fp"

    def __post_init__(self):
        if self.kind not in PROTOCOL_KINDS:
            raise ValueError(f"unknown protocol kind {self.kind!r}")
        if self.solver not in ("fp", "langevin"):
            raise ValueError(f"unknown solver {self.solver!r}")
        if self.schedule is not None and self.schedule.min() < 0:
            raise ValueError("pump schedule must be non-negative")
        if self.kind == "threshold_scan":
            if not self.axes:
                raise ValueError("threshold scan needs at least one axis")
            for name, values in self.axes.items():
                if name not in SCAN_AXES:
                    raise ValueError(f"unknown scan axis {name!r}")
                if len(values) == 0:
                    raise ValueError(f"scan axis {name!r} is empty")
        if self.kind == "molasses_off":
            if self.solver != "langevin":
                raise ValueError("molasses_off runs on the langevin solver only")
            if self.switch_time is None or self.duration is None:
                raise ValueError("molasses_off needs switch_time and duration")
            if not 0 < self.switch_time < self.duration:
                raise ValueError("switch_time must lie inside the run")


def reduced_ensemble(params: PhysicalParams, n: int) -> tuple[PhysicalParams, float]:
    """Stand-in ensemble of ``n`` atoms with N U0^2 held fixed.

    The atomic dynamics only see N U0^2, so the reduced ensemble has the same
    mean-field motion with larger fluctuations. Returns the new parameters and
    the factor that maps its probe power back onto the full ensemble.
    """
    scales = derive_scales(params)
    if n >= params.atom_number:
        return params, 1.0
    u0 = scales.u0 * math.sqrt(params.atom_number / n)
    return params.replace(atom_number=n, u0=u0), params.atom_number / n


# --- pump ramp -------------------------------------------------------------

def default_ramp(params: PhysicalParams, peak_factor: float = 2.0, duration: float = 40e-3,
                 floor_factor: float = 0.05) -> PiecewiseLinear:
    """Triangular ramp in alpha_+^2 peaking at ``peak_factor`` times threshold."""
    thr = exact_threshold_alpha_sq(derive_scales(params))
    return triangular_ramp(peak_factor * thr, duration, floor_factor * thr)


def adiabaticity_violations(schedule: PiecewiseLinear, kappa: float, gamma_fr: float,
                            times: np.ndarray) -> int:
    """Count sample times where |d ln alpha_+ / dt| >= 0.1 min(kappa, gamma_fr)."""
    limit = 0.1 * min(kappa, gamma_fr)
    ts, vs = schedule.arrays()
    bad = 0
    for t in times:
        k = np.searchsorted(ts, t, side="right")
        if k == 0 or k >= ts.size or ts[k] == ts[k - 1]:
            continue
        slope = (vs[k] - vs[k - 1]) / (ts[k] - ts[k - 1])
        a2 = float(schedule(t))
        if slope == 0:
            continue
        if a2 <= 0 or abs(0.5 * slope / a2) >= limit:
            bad += 1
    return bad


def _fp_steady(scales, alpha_sq, state, *, t_cap, seed_floor, truncation):
    if state is None:
        state = init_distribution("perturbed", truncation, amplitude=seed_floor)
    else:
        state = state.copy()
        p1 = state.modes[1]
        if abs(p1) < seed_floor:
            # keep the unstable mode alive so the onset is not delayed by an exponentially small seed
            state.modes[1] = seed_floor if p1 == 0 else seed_floor * p1 / abs(p1)
    state.t = 0.0
    traj = run_fp_coupled(scales, alpha_sq, t_cap, state=state, stop_on_steady=True,
                          steady_tol=1e-7, floor=1e-9)
    tail = traj.t >= traj.t[-1] - 2.0 / scales.kappa
    b = abs(traj.bunching[-1])
    omega = phase_velocity(traj.t[tail], traj.bunching[tail]) if b > 10 * seed_floor else math.nan
    return traj.final, b, abs(traj.alpha_minus[-1]) ** 2, omega, traj.converged


def _langevin_steady(scales, alpha_sq, state, am, *, t_run, seed, threads, index):
    cfg = LangevinConfig(t_max=t_run, mode="overdamped", pump=alpha_sq, seed=seed + index,
                         threads=threads)
    traj = run_coupled(scales, cfg, state=state, alpha_minus=am)
    late = traj.t >= traj.t[0] + 0.5 * t_run
    b = float(np.mean(np.abs(traj.bunching[late])))
    probe = float(np.mean(np.abs(traj.alpha_minus[late]) ** 2))
    omega = phase_velocity(traj.t[late], traj.bunching[late])
    return traj.final, traj.alpha_minus[-1], b, probe, omega


def detect_onset(pump: np.ndarray, signal: np.ndarray, *, factor: float = 5.0,
                 n_floor: int = 5, n_fit: int = 5, valid: np.ndarray | None = None) -> float:
    """Pump value where ``signal`` switches on, for samples ordered by rising pump.

    The onset is the first sample exceeding ``factor`` times the median of the
    first ``n_floor`` samples. The estimate is refined by fitting a quadratic
    in the pump to the first ``n_fit`` samples above the onset (signal linear
    in the distance above threshold, to leading order) and taking its root
    between the last floor sample and the first lasing one. Returns nan when
    the signal never switches on. ``valid`` masks out samples (e.g. runs that
    did not settle) before detection.
    """
    pump = np.asarray(pump, dtype=float)
    signal = np.asarray(signal, dtype=float)
    if valid is not None:
        pump, signal = pump[valid], signal[valid]
    floor = float(np.median(signal[:n_floor]))
    above = np.flatnonzero(signal > factor * max(floor, 1e-300))
    above = above[above >= n_floor]
    if above.size == 0:
        return math.nan
    k = int(above[0])
    lo, hi = pump[k - 1], pump[k]
    sel = slice(k, min(k + n_fit, pump.size))
    x, y = pump[sel], signal[sel]
    if x.size >= 3:
        coef = np.polyfit(x - hi, y, 2)
        roots = np.roots(coef)
        roots = [r.real + hi for r in roots if abs(r.imag) < 1e-12 and lo - (hi - lo) <= r.real + hi <= hi]
        if roots:
            return float(max(roots))
    if x.size >= 2:
        slope, icept = np.polyfit(x, y, 1)
        if slope > 0:
            return float(-icept / slope)
    return float(hi)


def run_pump_ramp(params: PhysicalParams, protocol: Protocol | None = None, *,
                  n_points: int = 161, truncation: int = 16, seed_floor: float = 1e-6,
                  relax_lifetimes: float = 20000.0, ensemble_size: int | None = None,
                  seed: int = 0, threads: int | None = None) -> Dataset:
    """Quasi-static sweep of the pump along the ramp schedule.

    At every sample time the system is relaxed to its steady state at the
    instantaneous pump, starting from the previous steady state (adiabatic
    continuation). Columns: t, pump_power, ridge_frequency (Hz, nan when not
    lasing), probe_power, bunching, converged. The summary holds onset
    estimates from the probe power and from |b| on the up and down legs.
    """
    if protocol is None:
        protocol = Protocol("pump_ramp", schedule=default_ramp(params))
    schedule = protocol.schedule or default_ramp(params)
    scales = derive_scales(params)
    ts, _ = schedule.arrays()
    times = np.linspace(ts[0], ts[-1], n_points)
    bad = adiabaticity_violations(schedule, scales.kappa, scales.gamma_fr, times)
    if bad:
        warnings.warn(f"pump ramp violates the adiabaticity guard at {bad} of {n_points} samples",
                      stacklevel=2)
    alpha_sq = schedule(times)
    rate = scales.diffusion_D + scales.kappa
    t_cap = relax_lifetimes / rate

    bunch = np.empty(n_points)
    probe_sq = np.empty(n_points)
    omega = np.empty(n_points)
    converged = np.ones(n_points, dtype=bool)
    probe_scale = 1.0
    if protocol.solver == "fp":
        state = None
        for i, a2 in enumerate(alpha_sq):
            state, bunch[i], probe_sq[i], omega[i], converged[i] = _fp_steady(
                scales, a2, state, t_cap=t_cap, seed_floor=seed_floor, truncation=truncation)
    else:
        sim_params = params
        if ensemble_size is not None:
            sim_params, probe_scale = reduced_ensemble(params, ensemble_size)
        sim = derive_scales(sim_params)
        ens = _draw_ensemble(sim.atom_number, sim.sigma, seed, False)
        am = 0j
        t_run = 150.0 / rate
        for i, a2 in enumerate(alpha_sq):
            ens, am, bunch[i], probe_sq[i], omega[i] = _langevin_steady(
                sim, a2, ens, am, t_run=t_run, seed=seed, threads=threads, index=i)
        floor = 3.0 / math.sqrt(sim.atom_number)
        omega[bunch < floor] = math.nan

    probe = scales.photon_power * probe_sq * probe_scale
    pump_power = scales.photon_power * alpha_sq
    peak = int(np.argmax(alpha_sq))
    up = slice(0, peak + 1)
    down = slice(n_points - 1, peak - 1, -1)
    summary = {
        "threshold_probe_up_W": detect_onset(pump_power[up], probe[up], valid=converged[up]),
        "threshold_probe_down_W": detect_onset(pump_power[down], probe[down], valid=converged[down]),
        "threshold_bunching_up_W": detect_onset(pump_power[up], bunch[up] ** 2, valid=converged[up]),
        "threshold_bunching_down_W": detect_onset(pump_power[down], bunch[down] ** 2, valid=converged[down]),
        "threshold_exact_W": scales.photon_power * exact_threshold_alpha_sq(scales),
        "threshold_analytic_W": analytic_threshold(scales).pump_power_thr,
        "adiabaticity_violations": bad,
        "solver": protocol.solver,
    }
    cols = {
        "t": times,
        "pump_power": pump_power,
        "ridge_frequency": np.abs(omega) / TWO_PI,
        "probe_power": probe,
        "bunching": bunch,
        "converged": converged.astype(int),
    }
    return Dataset(cols, summary)


# --- threshold scans -------------------------------------------------------

def _scan_params(base: PhysicalParams, axis: str, value: float) -> PhysicalParams:
    if axis == "detuning_a":
        if value == 0:
            raise ValueError("detuning must be nonzero")
        # fixed Rabi frequency: the light shift follows g^2 / detuning
        scales = derive_scales(base)
        g = base.rabi_g if base.rabi_g is not None else math.sqrt(scales.u0 * base.detuning_a)
        return base.replace(detuning_a=float(value), rabi_g=g, u0=None)
    if axis == "atom_number":
        return base.replace(atom_number=int(round(value)))
    if axis == "temperature":
        return base.replace(temperature=float(value))
    raise ValueError(f"unknown scan axis {axis!r}")


def _scan_point(base, axis, value, solver, rel_tol):
    try:
        params = _scan_params(base, axis, value)
        scales = derive_scales(params)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            ana = analytic_threshold(scales)
        num = numeric_threshold(scales, solver=solver, rel_tol=rel_tol)
        return {
            "ok": True,
            "p_num": num.pump_power_thr,
            "p_ana": ana.pump_power_thr,
            "p_exact": scales.photon_power * exact_threshold_alpha_sq(scales),
            "f_num": num.delta_omega_thr / TWO_PI,
            "f_ana": ana.delta_omega_thr / TWO_PI,
            "margin": lasing_margin(scales),
            "n": params.atom_number,
            "det": params.detuning_a,
        }
    except (ValueError, NoThresholdFound, ArithmeticError) as exc:
        return {"ok": False, "error": f"{type(exc).__name__}: {exc}"}


def loglog_slope(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = np.isfinite(x) & np.isfinite(y) & (x != 0) & (y > 0)
    if ok.sum() < 2:
        return math.nan
    return float(np.polyfit(np.log(np.abs(x[ok])), np.log(y[ok]), 1)[0])


def run_threshold_scan(params: PhysicalParams, protocol: Protocol, *, rel_tol: float = 1e-4,
                       threads: int | None = None) -> dict:
    """Numeric and closed-form thresholds along each scan axis.

    Points run concurrently; rows come out sorted by axis value. A failing
    point leaves a row of nans with its error in the summary. Returns one
    Dataset per axis.
    """
    out = {}
    workers = max(1, threads or 1)
    for axis, values in protocol.axes.items():
        values = sorted(float(v) for v in values)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda v: _scan_point(params, axis, v, protocol.solver, rel_tol),
                                    values))
        nan = np.full(len(values), np.nan)
        cols = {"value": np.asarray(values)}
        for key, name in (("p_num", "p_thr_numeric"), ("p_ana", "p_thr_analytic"),
                          ("p_exact", "p_thr_exact"), ("f_num", "delta_f_thr_numeric"),
                          ("f_ana", "delta_f_thr_analytic"), ("margin", "margin")):
            col = nan.copy()
            for i, r in enumerate(results):
                if r["ok"]:
                    col[i] = r[key]
            cols[name] = col
        # presentation convention: rescale to a reference atom number and detuning
        n_col = np.array([r["n"] if r["ok"] else np.nan for r in results], dtype=float)
        d_col = np.array([r["det"] if r["ok"] else np.nan for r in results], dtype=float)
        cols["p_thr_scaled_to_ref_n"] = cols["p_thr_numeric"] * n_col / REFERENCE_ATOM_NUMBER
        cols["p_thr_scaled_to_ref_detuning"] = cols["p_thr_numeric"] * (REFERENCE_DETUNING / d_col) ** 2
        f = cols["delta_f_thr_numeric"]
        ok = np.isfinite(f)
        summary = {
            "axis": axis,
            "slope_numeric": loglog_slope(values, cols["p_thr_numeric"]),
            "slope_analytic": loglog_slope(values, cols["p_thr_analytic"]),
            "delta_f_spread": float((np.max(f[ok]) - np.min(f[ok])) / np.mean(f[ok])) if ok.any() else math.nan,
            "failures": {str(v): r["error"] for v, r in zip(values, results) if not r["ok"]},
        }
        out[axis] = Dataset(cols, summary)
    return out


def backout_coupling(observed_power: float, params: PhysicalParams) -> tuple[float, float]:
    """Rabi frequency g and light shift U0 reproducing an observed threshold power.

    Inverts the good-cavity threshold formula for U0^2; U0 takes the sign of
    the atomic detuning, and g = sqrt(U0 * detuning).
    """
    if not observed_power > 0:
        raise ValueError("observed threshold power must be > 0")
    if params.detuning_a == 0:
        raise ValueError("detuning must be nonzero")
    if params.u0 is not None and params.u0 * params.detuning_a < 0:
        raise ValueError("light shift and detuning have inconsistent signs")
    probe_params = params.replace(u0=1.0 if params.detuning_a > 0 else -1.0)
    scales = derive_scales(probe_params)
    alpha_sq = observed_power / photon_power(params)
    u0_sq = (math.sqrt(scales.kappa / scales.gamma_fr) * scales.sigma ** 3
             / (4.0 * scales.epsilon * scales.atom_number * alpha_sq))
    u0 = math.copysign(math.sqrt(u0_sq), params.detuning_a)
    g = math.sqrt(u0 * params.detuning_a)
    return g, u0


# --- molasses switch-off ----------------------------------------------------

def _post_switch_trend(times, ridge, probe, t_switch, settle, min_span):
    post = (times >= t_switch + settle) & np.isfinite(ridge) & np.isfinite(probe)
    idx = np.flatnonzero(post)
    if idx.size < 3:
        return False, 0.0
    # longest run of consecutive windows with rising ridge and falling probe
    best = 0.0
    start = idx[0]
    for a, b in zip(idx[:-1], idx[1:]):
        if b == a + 1 and ridge[b] > ridge[a] and probe[b] < probe[a]:
            best = max(best, times[b] - times[start])
        else:
            start = b
    return best >= min_span, best


def run_molasses_off(params: PhysicalParams, protocol: Protocol, *, pump_alpha_sq: float | None = None,
                     ensemble_size: int | None = 2000, seed: int = 0, threads: int | None = None,
                     sample_dt: float = 1e-7, window: float = 50e-6, hop: float = 25e-6,
                     dt_factor: float = 0.04, settle: float = 0.1e-3, min_span: float = 1e-3) -> Dataset:
    """Inertial run with friction and diffusion switched off at ``switch_time``.

    Columns (one row per spectrogram window): t, ridge_frequency (Hz),
    probe_power (from the ridge height), probe_power_direct (from |a-|^2 at
    the window centre), bunching. The summary labels the run ``accelerating``
    when, after the switch, the ridge rises and the probe falls window by
    window for at least ``min_span``; otherwise ``null``.
    """
    sim_params, probe_scale = (reduced_ensemble(params, ensemble_size) if ensemble_size
                               else (params, 1.0))
    scales = derive_scales(sim_params)
    a2 = pump_alpha_sq if pump_alpha_sq is not None else scales.alpha_plus ** 2
    if not scales.diffusion_defined:
        raise ValueError("molasses must be on before the switch (gamma_fr > 0)")
    t_sw = protocol.switch_time
    gamma = PiecewiseLinear.step(t_sw, scales.gamma_fr, 0.0)
    diff = PiecewiseLinear.step(t_sw, scales.diffusion_D, 0.0)
    pump = protocol.schedule if protocol.schedule is not None else a2
    cfg = LangevinConfig(t_max=protocol.duration, mode="inertial", pump=pump, gamma_fr=gamma,
                         diffusion=diff, sample_dt=sample_dt, seed=seed, threads=threads,
                         dt_factor=dt_factor)
    traj = run_coupled(scales, cfg)
    ap = np.sqrt(traj.alpha_sq)
    trace = BeatTrace.from_fields(traj.t, ap, traj.alpha_minus, scales.photon_power)
    spec = spectrogram(trace, window, hop)
    probe = spec.ridge_probe_power() * probe_scale
    direct = scales.photon_power * np.abs(np.interp(spec.window_times, traj.t, np.abs(traj.alpha_minus))) ** 2
    bunch = np.interp(spec.window_times, traj.t, np.abs(traj.bunching))
    accel, span = _post_switch_trend(spec.window_times, spec.ridge_frequency, probe, t_sw, settle, min_span)
    pre = (spec.window_times + 0.5 * window <= t_sw) & (spec.window_times >= 0.5 * t_sw)
    summary = {
        "label": "accelerating" if accel else "null",
        "monotone_span_s": span,
        "pre_switch_ridge_hz": float(np.nanmedian(spec.ridge_frequency[pre])) if pre.any() else math.nan,
        "ensemble_size": scales.atom_number,
        "probe_scale": probe_scale,
        "dt": traj.dt,
    }
    cols = {
        "t": spec.window_times,
        "ridge_frequency": spec.ridge_frequency,
        "probe_power": probe,
        "probe_power_direct": direct * probe_scale,
        "bunching": bunch,
    }
    return Dataset(cols, summary)
