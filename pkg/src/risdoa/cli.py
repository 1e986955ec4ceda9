"""Command-line entry point: ``risdoa {synth,estimate,crb,sweep,dual-poly}``."""
from __future__ import annotations

import argparse
import sys

import numpy as np

from .anm import AnmOptions, estimate_doa, write_polynomial_csv
from .baselines import fft_estimate, omp_estimate, plain_anm
from .crb import crb_bounds, fisher, write_crb_csv
from .errors import ConfigError, RisDoaError
from .harness import (BINARY_PHASES, ExperimentConfig, anm_options_for, build_scene,
                      gd_options_for, run_sweep, trial_seed, write_sweep_csv)
from .io import parse_float, parse_float_list, parse_int, read_snapshot_file, write_snapshot_file
from .model import ArrayGeometry, Snapshot, make_ris_schedule
from .perturb import run_adpp

ESTIMATE_METHODS = ("adpp", "anm", "omp", "fft")


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
    return cfg


def _seed(args, cfg: ExperimentConfig) -> int:
    return cfg.seed if args.seed is None else args.seed


def _cmd_synth(args) -> int:
    cfg = _config(args)
    scene = build_scene(cfg, trial_seed(_seed(args, cfg), 0, 0))
    header = {
        "n_elements": cfg.n_elements,
        "n_slots": cfg.n_slots,
        "spacing_wavelengths": cfg.spacing_wavelengths,
        "psi_deg": cfg.psi_deg,
        "phase_set": BINARY_PHASES,
        "schedule_seed": scene.schedule_seed,
        "noise_variance": scene.snapshot.noise_variance,
        "snr_db": cfg.snr_db,
        "n_targets": cfg.n_targets,
        "true_angles_deg": cfg.angles_deg,
        "true_perturbations": scene.geometry.perturbations,
    }
    write_snapshot_file(args.out, header, scene.snapshot.received)
    return 0


def _load_snapshot(path: str):
    f = read_snapshot_file(path)
    h = f.header
    try:
        n = parse_int("n_elements", h["n_elements"])
        m = parse_int("n_slots", h["n_slots"])
        geom = ArrayGeometry.ula(n, parse_float("spacing_wavelengths", h["spacing_wavelengths"]))
        sched = make_ris_schedule(n, m, float(np.deg2rad(parse_float("psi_deg", h["psi_deg"]))),
                                  parse_float_list("phase_set", h["phase_set"]), geom,
                                  parse_int("schedule_seed", h["schedule_seed"]))
        snap = Snapshot(f.received, parse_float("noise_variance", h["noise_variance"]))
        k = parse_int("n_targets", h["n_targets"])
        snr = parse_float("snr_db", h["snr_db"]) if "snr_db" in h else None
    except KeyError as exc:
        raise ConfigError(f"{path}: missing header key {exc.args[0]}") from None
    if snap.n_slots != m:
        raise ConfigError(f"{path}: expected {m} samples, found {snap.n_slots}")
    return geom, sched, snap, k, snr


def _cmd_estimate(args) -> int:
    geom, sched, snap, k, snr = _load_snapshot(args.snapshot)
    cfg = _config(args)
    anm_opts = AnmOptions(t_param=cfg.t_param, snr_db=snr, beta_rule=cfg.beta_rule,
                          detection_range=cfg.detection_range)
    method = args.method
    if method == "adpp":
        angles = run_adpp(snap, sched, geom, gd_options_for(cfg), anm_opts, k).angles
    elif method == "anm":
        angles = plain_anm(snap, sched, geom, anm_opts).strongest(k).angles
    elif method == "omp":
        angles = omp_estimate(snap, sched, geom, k_max=k).angles
    else:
        angles = fft_estimate(snap, sched, geom, k=k).angles
    line = " ".join(f"{a:.6f}" for a in np.sort(np.rad2deg(angles)))
    print(line)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(line + "\n")
    return 0


def _cmd_crb(args) -> int:
    cfg = _config(args)
    seed = _seed(args, cfg)
    rows = []
    for ai, snr in enumerate(cfg.sweep_values or (cfg.snr_db,)):
        c = cfg.at(snr) if cfg.sweep_axis == "snr_db" else cfg
        bounds = []
        for ti in range(cfg.n_trials):
            sc = build_scene(c, trial_seed(seed, ai, ti))
            info = fisher(sc.geometry, sc.targets, sc.schedule, sc.snapshot.noise_variance)
            bounds.append(crb_bounds(info).crb_theta)
        rows.append((c.snr_db, np.rad2deg(np.sqrt(np.mean(bounds, axis=0)))))
    write_crb_csv(rows, args.out)
    return 0


def _cmd_sweep(args) -> int:
    from dataclasses import replace
    cfg = _config(args)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    out = args.out or cfg.output_path
    if not out:
        raise ConfigError("sweep needs --out or output_path in the config")
    write_sweep_csv(run_sweep(cfg), out)
    return 0


def _cmd_dual_poly(args) -> int:
    cfg = _config(args)
    sc = build_scene(cfg, trial_seed(_seed(args, cfg), 0, 0))
    nominal = sc.geometry.with_perturbations(np.zeros(cfg.n_elements))
    d_hat = None if args.nominal else sc.geometry.perturbations
    est = estimate_doa(sc.snapshot, sc.schedule, nominal, d_hat, anm_options_for(cfg))
    write_polynomial_csv(est.polynomial, args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value config file")
    common.add_argument("--seed", type=int, help="base seed (overrides the config)")
    common.add_argument("--out", help="output file")

    p = argparse.ArgumentParser(prog="risdoa", description="Perturbation-aware gridless DOA estimation.")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("synth", parents=[common], help="write a synthetic snapshot file")
    s.set_defaults(func=_cmd_synth, need_out=True)
    s = sub.add_parser("estimate", parents=[common], help="estimate angles from a snapshot file")
    s.add_argument("snapshot")
    s.add_argument("--method", choices=ESTIMATE_METHODS, default="adpp")
    s.set_defaults(func=_cmd_estimate, need_out=False)
    s = sub.add_parser("crb", parents=[common], help="write the angle CRB curve (degrees)")
    s.set_defaults(func=_cmd_crb, need_out=True)
    s = sub.add_parser("sweep", parents=[common], help="run a Monte-Carlo sweep")
    s.set_defaults(func=_cmd_sweep, need_out=False)
    s = sub.add_parser("dual-poly", parents=[common], help="write the dual polynomial of one scene")
    s.add_argument("--nominal", action="store_true", help="ignore the true perturbations")
    s.set_defaults(func=_cmd_dual_poly, need_out=True)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.need_out and not args.out:
        parser.error(f"{args.command} requires --out")
    try:
        return args.func(args)
    except (RisDoaError, ValueError) as exc:
        print(f"risdoa: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"risdoa: error: {exc.strerror}: {exc.filename}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
