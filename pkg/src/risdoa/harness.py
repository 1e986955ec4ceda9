"""Seeded Monte-Carlo sweeps and RMSE bookkeeping."""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, fields, replace

import numpy as np
from scipy.optimize import linear_sum_assignment

from .anm import AnmOptions
from .baselines import fft_estimate, omp_estimate, plain_anm
from .crb import crb_bounds, fisher
from .errors import ConfigError, InvalidInputError, RisDoaError
from .io import parse_bool, parse_float, parse_float_list, parse_int, read_key_values
from .model import (ArrayGeometry, RisSchedule, Snapshot, TargetSet, make_ris_schedule,
                    snr_to_noise_variance, synthesize, uniform_perturbations)
from .perturb import GdOptions, run_adpp

METHODS = ("adpp", "anm", "omp", "fft", "crb")
SWEEP_AXES = ("snr_db", "n_elements", "n_slots", "psi_deg")
CSV_HEADER = ["axis_value", "method", "rmse_deg", "n_trials", "mean_runtime_s"]
BINARY_PHASES = (0.0, float(np.pi))


def parse_perturbation_model(spec: str) -> float:
    """``"none"`` or ``"uniform:<bound in wavelengths>"``; returns the bound."""
    s = spec.strip().lower()
    if s in ("none", "0", ""):
        return 0.0
    kind, _, arg = s.partition(":")
    if kind != "uniform" or not arg:
        raise ConfigError(f"perturbation_model: expected 'none' or 'uniform:<bound>', got {spec!r}")
    bound = parse_float("perturbation_model", arg)
    if bound < 0:
        raise ConfigError("perturbation_model: bound must be >= 0")
    return bound


@dataclass(frozen=True)
class ExperimentConfig:
    """Scene plus sweep description; lengths are in wavelengths, angles in degrees."""

    n_elements: int = 32
    n_slots: int = 32
    spacing_wavelengths: float = 0.5
    psi_deg: float = 0.0
    angles_deg: tuple = (-30.345, 0.789, 20.456)
    signal_amplitudes: tuple = (1.0, 1.0, 1.0)
    perturbation_model: str = "uniform:0.0625"
    snr_db: float = 20.0
    seed: int = 0
    sweep_axis: str = "snr_db"
    sweep_values: tuple = ()
    n_trials: int = 1
    methods: tuple = ("adpp", "anm")
    output_path: str | None = None
    t_param: float | None = None
    beta_rule: str = "schedule"
    detection_range_deg: tuple = (-45.0, 45.0)
    fix_schedule: bool = False
    record_timing: bool = False
    refine_angles: bool = True
    use_prior: bool = True
    outer_iters: int = 5
    gd_max_iter: int = 200

    def __post_init__(self):
        if self.n_elements < 1 or self.n_slots < 1:
            raise ConfigError("n_elements and n_slots must be >= 1")
        if not self.spacing_wavelengths > 0:
            raise ConfigError("spacing_wavelengths must be positive")
        if len(self.angles_deg) == 0:
            raise ConfigError("angles_deg must not be empty")
        if len(self.signal_amplitudes) not in (1, len(self.angles_deg)):
            raise ConfigError("signal_amplitudes must have one entry or one per angle")
        if any(not -90.0 < a <= 90.0 for a in self.angles_deg):
            raise ConfigError("angles_deg must lie in (-90, 90]")
        if len(set(self.angles_deg)) != len(self.angles_deg):
            raise ConfigError("angles_deg must be distinct")
        parse_perturbation_model(self.perturbation_model)
        if self.sweep_axis not in SWEEP_AXES:
            raise ConfigError(f"sweep_axis must be one of {', '.join(SWEEP_AXES)}")
        if not all(np.isfinite(v) for v in self.sweep_values):
            raise ConfigError("sweep values must be finite")
        if self.n_trials < 1:
            raise ConfigError("n_trials must be >= 1")
        if not self.methods or any(m not in METHODS for m in self.methods):
            raise ConfigError(f"methods must be a non-empty subset of {', '.join(METHODS)}")
        if self.beta_rule not in ("schedule", "noise"):
            raise ConfigError("beta_rule must be 'schedule' or 'noise'")
        if self.t_param is not None and not self.t_param > 0:
            raise ConfigError("t_param must be positive")
        lo, hi = self.detection_range_deg
        if not -90.0 < lo < hi <= 90.0:
            raise ConfigError("detection_range_deg must be an increasing pair within (-90, 90]")
        if self.outer_iters < 1 or self.gd_max_iter < 1:
            raise ConfigError("outer_iters and gd_max_iter must be >= 1")

    @property
    def n_targets(self) -> int:
        return len(self.angles_deg)

    @property
    def axis_values(self) -> tuple:
        if self.sweep_values:
            return tuple(self.sweep_values)
        return (getattr(self, self.sweep_axis),)

    @property
    def perturbation_bound(self) -> float:
        return parse_perturbation_model(self.perturbation_model)

    @property
    def detection_range(self) -> tuple:
        return tuple(float(np.deg2rad(v)) for v in self.detection_range_deg)

    def at(self, axis_value) -> "ExperimentConfig":
        """Config with the sweep axis set to ``axis_value``."""
        v = int(round(axis_value)) if self.sweep_axis in ("n_elements", "n_slots") else float(axis_value)
        return replace(self, **{self.sweep_axis: v})

    @classmethod
    def from_mapping(cls, raw: dict) -> "ExperimentConfig":
        types = {f.name: f.type for f in fields(cls)}
        kw = {}
        for key, val in raw.items():
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}")
            t = types[key]
            if key in ("angles_deg", "signal_amplitudes", "sweep_values", "detection_range_deg"):
                kw[key] = parse_float_list(key, val)
            elif key == "methods":
                kw[key] = tuple(m.strip().lower() for m in val.split(",") if m.strip())
            elif t == "int":
                kw[key] = parse_int(key, val)
            elif t == "float":
                kw[key] = parse_float(key, val)
            elif t == "bool":
                kw[key] = parse_bool(key, val)
            elif t == "float | None":
                kw[key] = None if val.lower() == "none" else parse_float(key, val)
            elif t == "str | None":
                kw[key] = None if val.lower() == "none" else val
            else:
                kw[key] = val
        try:
            return cls(**kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_file(cls, path: str) -> "ExperimentConfig":
        return cls.from_mapping(read_key_values(path))


@dataclass(frozen=True)
class Scene:
    geometry: ArrayGeometry
    targets: TargetSet
    schedule: RisSchedule
    snapshot: Snapshot
    schedule_seed: int


def _seed_int(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2 ** 63 - 1))


def build_scene(cfg: ExperimentConfig, seed_seq: np.random.SeedSequence,
                schedule_seed: int | None = None) -> Scene:
    """Draw one random scene: perturbations, schedule, signal phases, noise."""
    rng = np.random.default_rng(seed_seq)
    n, k = cfg.n_elements, cfg.n_targets
    pert = uniform_perturbations(rng, n, cfg.perturbation_bound)
    geom = ArrayGeometry.ula(n, cfg.spacing_wavelengths, 1.0, pert)
    drawn = _seed_int(rng)
    sched_seed = drawn if schedule_seed is None else schedule_seed
    sched = make_ris_schedule(n, cfg.n_slots, float(np.deg2rad(cfg.psi_deg)), BINARY_PHASES, geom,
                              sched_seed)
    amps = np.broadcast_to(np.asarray(cfg.signal_amplitudes, dtype=float), (k,))
    sig = amps * np.exp(2j * np.pi * rng.uniform(size=k))
    targets = TargetSet(np.deg2rad(cfg.angles_deg), sig)
    s2 = snr_to_noise_variance(cfg.snr_db, geom, targets, sched)
    snap = synthesize(geom, targets, sched, s2, _seed_int(rng))
    return Scene(geom, targets, sched, snap, sched_seed)


def anm_options_for(cfg: ExperimentConfig) -> AnmOptions:
    return AnmOptions(t_param=cfg.t_param, snr_db=None if cfg.t_param is not None else cfg.snr_db,
                      beta_rule=cfg.beta_rule, detection_range=cfg.detection_range)


def gd_options_for(cfg: ExperimentConfig) -> GdOptions:
    bound = cfg.perturbation_bound
    prior = bound / np.sqrt(3.0) if (cfg.use_prior and bound > 0) else None
    return GdOptions(max_iter=cfg.gd_max_iter, outer_iters=cfg.outer_iters,
                     refine_angles=cfg.refine_angles, d_prior_std=prior)


def run_method(method: str, scene: Scene, cfg: ExperimentConfig) -> np.ndarray:
    """Estimated angles (radians, ascending, at most K); empty on failure."""
    k = cfg.n_targets
    snap, sched, geom = scene.snapshot, scene.schedule, scene.geometry
    # the estimators only see the nominal geometry
    nominal = geom.with_perturbations(np.zeros(geom.n_elements))
    try:
        if method == "anm":
            return plain_anm(snap, sched, nominal, anm_options_for(cfg)).strongest(k).angles
        if method == "adpp":
            res = run_adpp(snap, sched, nominal, gd_options_for(cfg), anm_options_for(cfg), k)
            return res.angles
        if method == "omp":
            return omp_estimate(snap, sched, nominal, k_max=k).angles
        if method == "fft":
            return fft_estimate(snap, sched, nominal, k=k).angles
    except (RisDoaError, np.linalg.LinAlgError):
        return np.zeros(0)
    raise InvalidInputError(f"unknown method {method!r}")


def match_errors(true_angles, estimate, miss_penalty: float) -> np.ndarray:
    """Per-target absolute errors (same unit as the inputs).

    With a full set of estimates both lists are sorted and paired in order.
    With fewer, the estimates are assigned to the targets that minimise the
    total squared error and unmatched targets are charged ``miss_penalty``.
    """
    t = np.sort(np.asarray(true_angles, dtype=float))
    e = np.sort(np.atleast_1d(np.asarray(estimate, dtype=float)))
    if e.size > t.size:
        raise InvalidInputError("more estimates than targets; trim to the strongest first")
    if e.size == t.size:
        return np.abs(e - t)
    out = np.full(t.size, float(miss_penalty))
    if e.size:
        rows, cols = linear_sum_assignment((t[:, None] - e[None, :]) ** 2)
        out[rows] = np.abs(t[rows] - e[cols])
    return out


def rmse(true_angles, estimates, miss_penalty: float = 45.0) -> float:
    """RMSE over trials and targets; inputs in degrees.

    ``estimates`` is a list with one angle vector per trial.
    """
    if len(estimates) == 0:
        raise InvalidInputError("rmse needs at least one trial")
    errs = np.concatenate([match_errors(true_angles, e, miss_penalty) for e in estimates])
    return float(np.sqrt(np.mean(errs ** 2)))


@dataclass(frozen=True)
class SweepEntry:
    axis_value: float
    method: str
    rmse_deg: float
    n_trials: int
    mean_runtime_s: float
    errors_deg: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class SweepResult:
    axis: str
    entries: tuple

    def get(self, method: str) -> list[SweepEntry]:
        return [e for e in self.entries if e.method == method]


def trial_seed(base_seed: int, axis_index: int, trial_index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(base_seed, spawn_key=(axis_index, trial_index))


def run_sweep(config: ExperimentConfig, progress=None) -> SweepResult:
    """Monte-Carlo RMSE per (axis value, method).

    Each trial draws its scene from ``(seed, axis index, trial index)`` only,
    so results do not depend on method order or on other trials. The
    ``crb`` method reports ``sqrt(mean crb_theta)`` in degrees.
    """
    entries = []
    miss = 0.5 * (config.detection_range_deg[1] - config.detection_range_deg[0])
    for ai, value in enumerate(config.axis_values):
        cfg = config.at(value)
        fixed = None
        if config.fix_schedule:
            fixed = _seed_int(np.random.default_rng(np.random.SeedSequence(config.seed,
                                                                         spawn_key=(ai,))))
        scenes = [build_scene(cfg, trial_seed(config.seed, ai, ti), fixed)
                  for ti in range(config.n_trials)]
        for method in config.methods:
            t0 = time.perf_counter()
            if method == "crb":
                bounds = []
                for sc in scenes:
                    info = fisher(sc.geometry, sc.targets, sc.schedule, sc.snapshot.noise_variance)
                    bounds.append(crb_bounds(info).crb_theta)
                bounds = np.asarray(bounds)
                errs = np.rad2deg(np.sqrt(bounds))
                value_rmse = float(np.rad2deg(np.sqrt(np.mean(bounds))))
            else:
                est = [np.rad2deg(run_method(method, sc, cfg)) for sc in scenes]
                errs = np.asarray([match_errors(cfg.angles_deg, e, miss) for e in est])
                value_rmse = float(np.sqrt(np.mean(errs ** 2)))
            runtime = (time.perf_counter() - t0) / config.n_trials
            entries.append(SweepEntry(float(value), method, value_rmse, config.n_trials,
                                      runtime if config.record_timing else float("nan"), errs))
            if progress:
                progress(entries[-1])
    return SweepResult(config.sweep_axis, tuple(entries))


def write_sweep_csv(result: SweepResult, path: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for e in result.entries:
            w.writerow([repr(e.axis_value), e.method, repr(e.rmse_deg), e.n_trials,
                        repr(e.mean_runtime_s)])
