"""Command-line entry point: ``viscarl <subcommand> [--config FILE] ...``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, calibrated_params, load_config, resolve
from .experiments import (Protocol, reduced_ensemble, run_molasses_off,
                          run_pump_ramp, run_threshold_scan)
from .fokker_planck import NumericalError, init_distribution, phase_velocity, run_fp_coupled
from .io import RunDirectory, csv_bytes, environment, load_manifest, read_csv, snapshot_bytes
from .kuramoto import coupling_constant, critical_coupling, mean_field_order, run_kuramoto
from .langevin import LangevinConfig, StabilityError, numba_threads, run_coupled
from .schedules import triangular_ramp
from .signals import BeatTrace, probe_to_contrast, spectrogram
from .threshold import NoThresholdFound, exact_threshold_alpha_sq
from .units import TWO_PI, derive_scales

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3
SUBCOMMANDS = ("pump-ramp", "threshold-scan", "molasses-off", "fp-run", "langevin-run",
               "kuramoto-run", "analyze-spectrogram")


def _pump_alpha_sq(section: dict, cfg: dict, scales) -> float:
    factor = section.get("pump_over_threshold")
    if factor is not None:
        return factor * exact_threshold_alpha_sq(scales)
    return scales.alpha_plus ** 2


def _fp_run(cfg, params, seed, threads, out):
    sec, sol = cfg["fp_run"], cfg["solver"]
    scales = derive_scales(params)
    a2 = _pump_alpha_sq(sec, cfg, scales)
    state = init_distribution("perturbed", sol["truncation"], amplitude=sec["perturbation"])
    traj = run_fp_coupled(scales, a2, sec["t_max_s"], state=state, sample_dt=sec["sample_dt_s"],
                          cfl=sol["cfl"])
    half = traj.t >= 0.5 * traj.t[-1]
    probe = scales.photon_power * np.abs(traj.alpha_minus) ** 2
    out.write_csv("timeseries.csv", {
        "t": traj.t, "bunching_abs": np.abs(traj.bunching), "bunching_re": traj.bunching.real,
        "bunching_im": traj.bunching.imag, "alpha_minus_re": traj.alpha_minus.real,
        "alpha_minus_im": traj.alpha_minus.imag,
        "probe_power": probe,
        "beat_contrast": probe_to_contrast(probe, scales.photon_power * a2),
    })
    return {"pump_power_W": scales.photon_power * a2, "final_bunching": traj.steady_bunching,
            "converged": traj.converged,
            "rotation_Hz": abs(phase_velocity(traj.t[half], traj.bunching[half])) / TWO_PI,
            "warnings": traj.warnings}


def _langevin_run(cfg, params, seed, threads, out):
    sec, sol = cfg["langevin_run"], cfg["solver"]
    full = derive_scales(params)
    a2 = _pump_alpha_sq(sec, cfg, full)
    sim_params, scale = (reduced_ensemble(params, sol["ensemble_size"]) if sol["ensemble_size"]
                         else (params, 1.0))
    scales = derive_scales(sim_params)
    lc = LangevinConfig(t_max=sec["t_max_s"], mode=sec["mode"], pump=a2, seed=seed,
                        field=sec["field"], omega_ca=sec["omega_ca_rad_per_s"],
                        snapshot_times=tuple(sec["snapshot_times_s"]), threads=threads,
                        dt_factor=sol["dt_factor"], sample_dt=sec["sample_dt_s"])
    traj = run_coupled(scales, lc)
    probe = scale * scales.photon_power * np.abs(traj.alpha_minus) ** 2
    out.write_csv("timeseries.csv", {
        "t": traj.t, "bunching_abs": np.abs(traj.bunching), "bunching_re": traj.bunching.real,
        "bunching_im": traj.bunching.imag, "alpha_minus_re": traj.alpha_minus.real,
        "alpha_minus_im": traj.alpha_minus.imag,
        "probe_power": probe,
        "beat_contrast": probe_to_contrast(probe, full.photon_power * a2),
    })
    if traj.snapshots:
        out.write("snapshots.bin", snapshot_bytes(traj.snapshots))
    return {"pump_power_W": full.photon_power * a2, "ensemble_size": scales.atom_number,
            "dt": traj.dt, "mean_bunching_second_half": traj.time_average("bunching", 0.5 * traj.t[-1])}


def _kuramoto_run(cfg, params, seed, threads, out):
    sec = cfg["kuramoto_run"]
    scales = derive_scales(params)
    diff = scales.diffusion_D
    if sec["coupling_over_diffusion"] is not None:
        K = sec["coupling_over_diffusion"] * diff
    else:
        with warnings.catch_warnings(record=True):
            K = coupling_constant(scales, sec["omega_ca_rad_per_s"])
    t_max = sec["t_max_s"] if sec["t_max_s"] is not None else 50.0 / diff
    traj = run_kuramoto(sec["oscillators"], K, diff, t_max, dt=sec["dt_s"], seed=seed, threads=threads)
    out.write_csv("timeseries.csv", {"t": traj.t, "order_abs": traj.magnitude, "psi": traj.psi,
                                     "sync_fraction": traj.sync})
    return {"coupling_K": K, "diffusion_D": diff, "critical_coupling": critical_coupling(diff),
            "mean_order_second_half": traj.time_average(0.5 * t_max),
            "mean_field_prediction": mean_field_order(K, diff)}


def _pump_ramp(cfg, params, seed, threads, out, solver):
    sec, sol = cfg["pump_ramp"], cfg["solver"]
    thr = exact_threshold_alpha_sq(derive_scales(params))
    sched = triangular_ramp(sec["peak_over_threshold"] * thr, sec["duration_s"],
                            sec["floor_over_threshold"] * thr)
    data = run_pump_ramp(params, Protocol("pump_ramp", schedule=sched, solver=solver),
                         n_points=sec["points"], truncation=sol["truncation"],
                         ensemble_size=sol["ensemble_size"], seed=seed, threads=threads)
    out.write_csv("pump_ramp.csv", data.columns)
    return data.summary


def _threshold_scan(cfg, params, seed, threads, out, solver):
    sec = cfg["threshold_scan"]
    axes = {"detuning_a": sec["detuning_a_rad_per_s"], "atom_number": sec["atom_number"],
            "temperature": sec["temperature_K"]}
    axes = {k: v for k, v in axes.items() if v}
    if not axes:
        raise ConfigError("threshold_scan", "no scan axis given (all axes empty)")
    results = run_threshold_scan(params, Protocol("threshold_scan", axes=axes, solver=solver),
                                 rel_tol=sec["rel_tol"], threads=threads)
    for axis, data in results.items():
        out.write_csv(f"threshold_scan_{axis}.csv", data.columns)
    return {axis: d.summary for axis, d in results.items()}


def _molasses_off(cfg, params, seed, threads, out, solver):
    if solver != "langevin":
        raise ConfigError("solver.name", "molasses-off needs the langevin solver")
    sec, sol = cfg["molasses_off"], cfg["solver"]
    thr = exact_threshold_alpha_sq(derive_scales(params))
    proto = Protocol("molasses_off", switch_time=sec["switch_time_s"], duration=sec["duration_s"],
                     solver="langevin")
    data = run_molasses_off(params, proto, pump_alpha_sq=sec["pump_over_threshold"] * thr,
                            ensemble_size=sol["ensemble_size"], seed=seed, threads=threads,
                            sample_dt=sec["sample_dt_s"], window=sec["window_s"], hop=sec["hop_s"],
                            dt_factor=sec["dt_factor"])
    out.write_csv("molasses_off.csv", data.columns)
    return data.summary


def _analyze_spectrogram(cfg, params, seed, threads, out):
    sec = cfg["spectrogram"]
    if sec["input_csv"] is None:
        raise ConfigError("spectrogram.input_csv", "input trace not given (use --input)")
    path = Path(sec["input_csv"])
    if not path.exists():
        raise ConfigError("spectrogram.input_csv", f"file not found: {path}")
    cols = read_csv(path)
    if "t" not in cols or "p_beat" not in cols:
        raise ConfigError("spectrogram.input_csv", "needs columns 't' and 'p_beat'")
    t = cols["t"]
    try:
        trace = BeatTrace(t, cols["p_beat"], (t.size - 1) / (t[-1] - t[0]))
        band = None
        if sec["band_min_Hz"] is not None or sec["band_max_Hz"] is not None:
            band = (sec["band_min_Hz"] or 0.0, sec["band_max_Hz"] or math.inf)
        spec = spectrogram(trace, sec["window_s"], sec["hop_s"], band=band)
    except ValueError as exc:
        raise ConfigError("spectrogram", str(exc)) from None
    tt, ff = np.meshgrid(spec.window_times, spec.frequencies, indexing="ij")
    out.write_csv("spectrogram.csv", {"t": tt.ravel(), "f": ff.ravel(), "magnitude": spec.magnitude.ravel()})
    out.write_csv("ridge.csv", {"t": spec.window_times, "frequency": spec.ridge_frequency,
                                "magnitude": spec.ridge_magnitude, "probe_power": spec.ridge_probe_power()})
    return {"windows": int(spec.window_times.size),
            "ridge_windows": int(np.isfinite(spec.ridge_frequency).sum())}


RUNNERS = {
    "fp-run": _fp_run,
    "langevin-run": _langevin_run,
    "kuramoto-run": _kuramoto_run,
    "analyze-spectrogram": _analyze_spectrogram,
}
SOLVER_RUNNERS = {
    "pump-ramp": _pump_ramp,
    "threshold-scan": _threshold_scan,
    "molasses-off": _molasses_off,
}


def derived_json(params) -> str:
    scales = derive_scales(params)
    return json.dumps({"params": params.to_dict(), "derived": scales.to_dict()}, indent=2, sort_keys=True)


def execute(subcommand: str, cfg: dict, *, seed: int = 0, threads: int | None = None,
            out_dir=None, solver: str | None = None, stream=sys.stdout) -> int:
    """Run one subcommand on a resolved config; returns the exit code.

    ``solver`` overrides the configured one; molasses-off defaults to langevin.
    """
    params, calibrated = calibrated_params(cfg)
    if solver is None:
        solver = "langevin" if subcommand == "molasses-off" else cfg["solver"]["name"]
    out_dir = Path(out_dir) if out_dir is not None else Path("runs") / subcommand
    manifest = {
        "artifact": "viscarl", "version": __version__, "subcommand": subcommand,
        "seed": seed, "threads": threads, "solver": solver, "config": cfg, "coupling_calibrated": calibrated,
        "resolved_params": params.to_dict(), "derived": derive_scales(params).to_dict(),
        "environment": environment(),
    }
    run = RunDirectory(out_dir, manifest)
    try:
        with numba_threads(threads), warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            if subcommand in SOLVER_RUNNERS:
                summary = SOLVER_RUNNERS[subcommand](cfg, params, seed, threads, run, solver)
            else:
                summary = RUNNERS[subcommand](cfg, params, seed, threads, run)
    except ConfigError as exc:
        run.finish("config-error", error=str(exc))
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, StabilityError, NoThresholdFound, FloatingPointError) as exc:
        if isinstance(exc, NumericalError) and getattr(exc, "state", None) is not None:
            dump = {"t": np.atleast_1d(getattr(exc.state, "t", math.nan))}
            run.root.joinpath("state_dump.csv.partial").write_bytes(csv_bytes(dump))
        run.finish("numerical-failure", error=str(exc))
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    notes = sorted({str(w.message) for w in caught})
    run.finish("complete", summary=summary, warnings=notes)
    for note in notes:
        print(f"warning: {note}", file=sys.stderr)
    print(json.dumps({"out_dir": str(out_dir), "outputs": run.manifest["outputs"]}, indent=2), file=stream)
    return EXIT_OK


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration, or a run manifest to re-execute")
    common.add_argument("--seed", type=int, default=None, help="master RNG seed (default 0)")
    common.add_argument("--out-dir", help="output directory (default runs/<subcommand>)")
    common.add_argument("--solver", choices=("fp", "langevin"), help="override solver.name")
    common.add_argument("--threads", type=int, default=None, help="cap on worker threads")
    common.add_argument("--emit-derived", action="store_true",
                        help="print resolved parameters and derived scales as JSON and exit")
    parser = argparse.ArgumentParser(prog="viscarl", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"viscarl {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "analyze-spectrogram":
            p.add_argument("--input", help="CSV with columns t, p_beat")
    rerun = sub.add_parser("rerun", help="re-execute a run from its manifest")
    rerun.add_argument("manifest", help="manifest.json or the run directory holding it")
    rerun.add_argument("--out-dir", required=True)
    rerun.add_argument("--threads", type=int, default=None)
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "rerun":
            man = load_manifest(args.manifest)
            return execute(man["subcommand"], resolve(man["config"]), seed=man["seed"],
                           threads=args.threads, out_dir=args.out_dir, solver=man.get("solver"))
        seed = args.seed
        if args.config and args.config.endswith(".json"):
            man = load_manifest(args.config)
            cfg = resolve(man["config"])
            seed = man["seed"] if seed is None else seed
        else:
            cfg = load_config(args.config)
        if getattr(args, "input", None):
            cfg["spectrogram"]["input_csv"] = args.input
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads", "must be >= 1")
        if args.emit_derived:
            params, _ = calibrated_params(cfg)
            print(derived_json(params))
            return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"config error: cannot read manifest: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return execute(args.command, cfg, seed=seed or 0, threads=args.threads, out_dir=args.out_dir,
                       solver=args.solver)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
