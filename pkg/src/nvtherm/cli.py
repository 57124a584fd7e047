"""nvtherm command line: one seeded pipeline per invocation, CSV/JSON out.

Exit codes: 0 success, 2 config error, 3 numerical or guard failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import thermometry as th
from .config import BLOCKS, ConfigError, RunConfig, load_config
from .lockin import LiaCurve, LockInConfig, NoZeroCrossingError, find_zero_crossing, harmonic_response
from .noise import write_json
from .odmr import (
    Lineshape, OdmrSpectrum, default_axes, nv_frame_field, synthesize_spectrum, transitions_for_lab_field,
    write_csv,
)
from .spin_core import hyperfine_spread

log = logging.getLogger("nvtherm")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _spectrum(cfg: RunConfig):
    blk = cfg.spectrum
    p = cfg.nv.build()
    center = p.D if blk.center_hz is None else blk.center_hz
    n_half = int(round(blk.half_span_hz / blk.step_hz))
    grid = center + blk.step_hz * np.arange(-n_half, n_half + 1)
    shape = Lineshape(blk.linewidth_hz, blk.contrast)
    files, summary = {}, {}
    for name, field_mT in blk.fields_mT.items():
        B = 1e-3 * np.asarray(field_mT, dtype=float)
        tr = transitions_for_lab_field(p, B, hyperfine=blk.hyperfine)
        spec = synthesize_spectrum(tr, shape, grid)
        files[f"spectrum_{name}.csv"] = spec.to_csv
        summary[name] = {
            "field_mT": list(field_mT),
            "transitions": [{"frequency_hz": t.frequency, "amplitude": t.amplitude, "label": t.label}
                            for t in tr],
            "pl_min": float(spec.pl.min()),
            "pl_min_freq_hz": float(spec.freqs[np.argmin(spec.pl)]),
        }
        if blk.a_perp_sweep_hz:
            b_nv = nv_frame_field(B, default_axes()[0])
            summary[name]["a_perp_sweep"] = [
                dict(zip(("a_perp_hz", "spread_low_hz", "spread_high_hz"),
                         (a, *hyperfine_spread(p.replace(A_perp=a), b_nv))))
                for a in blk.a_perp_sweep_hz]
    files["spectrum.json"] = lambda path: write_json(path, summary)
    return files


def _lia_sweep(cfg: RunConfig):
    blk = cfg.lia_sweep
    p = cfg.nv.build()
    fm = blk.fm.build()
    lockin = LockInConfig(tau=blk.tau_s)
    if blk.flat_spectrum:
        grid = p.D + np.array([-1.0, 1.0]) * (blk.half_span_hz + 2 * fm.depth)
        spec = OdmrSpectrum(grid, np.ones_like(grid))
        center = p.D
        carriers = center + np.arange(-blk.half_span_hz, blk.half_span_hz + blk.step_hz / 2, blk.step_hz)
        curve = LiaCurve(carriers, harmonic_response(spec, carriers, fm.depth, lockin.phase, blk.I0))
    else:
        sensor = th.prepare_sensor(p, blk.regime.build(), fm, lockin, blk.I0)
        center = float(sensor.spectrum.freqs[np.argmin(sensor.spectrum.pl)])
        curve = sensor.lia_curve(blk.half_span_hz, blk.step_hz)
    # dip center is the PL minimum as seen by the carrier
    report = {"dip_center_hz": center, "f_mod_hz": fm.f_mod, "depth_hz": fm.depth, "tau_s": blk.tau_s,
              "max_abs_value": float(np.max(np.abs(curve.values)))}
    try:
        zc = find_zero_crossing(curve)
        report["zero_crossing"] = {"frequency_hz": zc.frequency, "slope_per_hz": zc.slope,
                                   "n_crossings": zc.count, "offset_from_dip_hz": zc.frequency - center}
    except NoZeroCrossingError:
        report["zero_crossing"] = None
    return {
        "lia_sweep.csv": lambda path: write_csv(path, "carrier_hz,lia_value", curve.carriers, curve.values),
        "zero_crossing.json": lambda path: write_json(path, report),
    }


def _sensitivity(cfg: RunConfig):
    blk = cfg.sensitivity
    p = cfg.nv.build()
    sensor = th.prepare_sensor(p, blk.regime.build(), blk.fm.build(), LockInConfig(tau=blk.tau_s), blk.I0)
    rep = th.measure_sensitivity(sensor, blk.noise.build(), blk.duration_s, cfg.seed, blk.fs_hz,
                                 tuple(blk.band_hz), blk.n_segments)
    out = rep.to_dict()
    out["reference_shot_limit"] = th.reference_shot_limit()
    out["floor_over_shot_limit"] = rep.floor / rep.shot_limit
    out["seed"] = cfg.seed
    return {"asd.csv": rep.asd.to_csv, "sensitivity.json": lambda path: write_json(path, out)}


def _cycle_summary(res: th.ThermalCycleResult) -> dict:
    return {
        "readout_rms_K": res.rms_error,
        "thermocouple_rms_K": res.thermocouple_rms_error,
        "c_tau_fit_hz_per_K": res.calibration.c_tau_fit,
        "c_tau_stderr_hz_per_K": res.calibration.c_tau_stderr,
        "calibration_residual_rms_hz": res.calibration.residual_rms,
    }


def _thermal_cycle(cfg: RunConfig):
    blk = cfg.thermal_cycle
    res = th.run_thermal_cycle(blk.scenario.build(), blk.regime.build(), blk.noise.build(), cfg.seed,
                               cfg.nv.build(), blk.fm.build(), LockInConfig(tau=blk.tau_s), blk.I0,
                               blk.fs_hz, blk.averaging_time_s)
    summary = _cycle_summary(res) | {"regime": blk.regime.regime, "seed": cfg.seed}
    return {
        "set_T.csv": res.set_T.to_csv,
        "measured_T.csv": res.measured_T.to_csv,
        "thermocouple_T.csv": res.thermocouple.to_csv,
        "thermal_cycle.json": lambda path: write_json(path, summary),
    }


def _compare(cfg: RunConfig):
    blk = cfg.compare
    res = th.compare_regimes(blk.scenario.build(), blk.tf.build(), blk.shfd.build(), blk.noise.build(),
                             cfg.seed, cfg.nv.build(), blk.fm.build(), blk.sensitivity_duration_s, blk.I0,
                             blk.fs_hz, tuple(blk.band_hz))
    reports, cycles = res.pop("_reports"), res.pop("_cycles")
    res["seed"] = cfg.seed
    return {
        "asd_tf.csv": reports["TF"].asd.to_csv,
        "asd_shfd.csv": reports["SHfD"].asd.to_csv,
        "set_T.csv": cycles["TF"].set_T.to_csv,
        "measured_T_tf.csv": cycles["TF"].measured_T.to_csv,
        "measured_T_shfd.csv": cycles["SHfD"].measured_T.to_csv,
        "compare.json": lambda path: write_json(path, res),
    }


COMMANDS = {
    "spectrum": ("spectrum", _spectrum, "ODMR spectra for each configured lab field"),
    "lia-sweep": ("lia_sweep", _lia_sweep, "noiseless LIA output versus carrier and its zero crossing"),
    "sensitivity": ("sensitivity", _sensitivity, "fixed-temperature acquisition, temperature ASD and floor"),
    "thermal-cycle": ("thermal_cycle", _thermal_cycle, "chamber cycle read out by the NV chain"),
    "compare": ("compare", _compare, "TF versus SHfD under identical noise"),
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nvtherm", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name, (_, _, helptext) in COMMANDS.items():
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("--config", type=Path, help="YAML config file (defaults apply when omitted)")
        sp.add_argument("--seed", type=int, help="overrides the config seed")
        sp.add_argument("--out", type=Path, help="output directory (default: config 'out' or ./out)")
        sp.add_argument("--threads", type=int, default=1, help="cap on BLAS/OpenMP worker threads")
        sp.add_argument("-v", "--verbose", action="count", default=0)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    key, runner, _ = COMMANDS[args.command]
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        cfg = load_config(args.config)
        updates = {}
        if args.seed is not None:
            updates["seed"] = args.seed
        if getattr(cfg, key) is None:
            updates[key] = BLOCKS[key]()
        cfg = cfg.model_copy(update=updates)
        if cfg.seed < 0:
            raise ConfigError("seed must be nonnegative")
    except ConfigError as exc:
        print(f"nvtherm: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    level = max(logging.DEBUG, logging.WARNING - 10 * (args.verbose + cfg.verbosity))
    logging.basicConfig(level=level, format="%(levelname)s %(message)s")
    out = args.out or Path(cfg.out or "out")
    try:
        with threadpool_limits(limits=args.threads):
            files = runner(cfg)
    except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"nvtherm: {args.command} failed: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    out.mkdir(parents=True, exist_ok=True)
    for name, write in files.items():
        write(out / name)
        log.info("wrote %s", out / name)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
