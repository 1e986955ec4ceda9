"""Gridless DOA estimation from the atomic-norm dual certificate."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidInputError
from .model import ArrayGeometry, RisSchedule, Snapshot, response_matrix, steering_matrix
from .sdp import SdpOptions, SdpSolution, formulate, solve
from .transform import DEFAULT_DETECTION_RANGE, TransformMatrix, fit_transform


# Truncating the transform fit keeps ||T|| near one; without it T amplifies
# noise by two orders of magnitude at N = 32 and spurious peaks reach beta.
TRANSFORM_RCOND = 1e-2


def hyperparameter_t(snr_db: float) -> float:
    """Empirical SNR-to-``t`` schedule (``beta = sqrt(t)`` under the default coupling)."""
    if not np.isfinite(snr_db):
        raise InvalidInputError("snr_db must be finite")
    if snr_db <= 10.0:
        return float(np.exp(-0.5991 * snr_db + 8.294))
    return float(np.exp(0.2593 * snr_db - 0.2889))


@dataclass(frozen=True)
class DualPolynomial:
    grid_angles: np.ndarray
    values: np.ndarray
    beta: float


@dataclass(frozen=True)
class DoaEstimate:
    angles: np.ndarray
    peak_heights: np.ndarray
    k_detected: int
    converged: bool = True
    amplitudes: np.ndarray | None = field(default=None, repr=False, compare=False)
    solution: SdpSolution | None = field(default=None, repr=False, compare=False)
    polynomial: DualPolynomial | None = field(default=None, repr=False, compare=False)

    @classmethod
    def empty(cls, **kw) -> "DoaEstimate":
        return cls(np.zeros(0), np.zeros(0), 0, **kw)

    def strongest(self, k: int) -> "DoaEstimate":
        """Keep ``k`` peaks (still sorted by angle).

        Ranked by fitted amplitude when available, else by peak height; the
        latter is a weak criterion because every support peak touches beta.
        """
        if self.k_detected <= k:
            return self
        score = self.peak_heights if self.amplitudes is None else np.abs(self.amplitudes)
        keep = np.sort(np.argsort(-score, kind="stable")[:k])
        amps = None if self.amplitudes is None else self.amplitudes[keep]
        return replace(self, angles=self.angles[keep], peak_heights=self.peak_heights[keep],
                       k_detected=k, amplitudes=amps)


@dataclass(frozen=True)
class AnmOptions:
    """Knobs of the atomic-norm estimator.

    ``t_param`` wins over ``snr_db``; with neither, the SNR is estimated from
    the snapshot power and its (known) noise variance and mapped through
    :func:`hyperparameter_t`. ``beta`` defaults to ``sqrt(t)``
    (``beta_rule="schedule"``) or, with ``beta_rule="noise"``, to
    ``noise_beta_factor * sigma * sqrt(M N ln N)``, the typical size of the
    dual norm of pure noise.
    """

    t_param: float | None = None
    beta: float | None = None
    snr_db: float | None = None
    beta_rule: str = "schedule"
    noise_beta_factor: float = 1.0
    detection_range: tuple = DEFAULT_DETECTION_RANGE
    n_transform_grid: int | None = None
    transform_rcond: float | None = TRANSFORM_RCOND
    n_peak_grid: int = 4096
    relative_threshold: float = 0.95
    min_separation: float = float(np.deg2rad(2.0))
    sdp: SdpOptions = SdpOptions()


def dual_polynomial(h, transform: TransformMatrix, geometry: ArrayGeometry, grid,
                    beta: float = np.nan) -> DualPolynomial:
    """``|h^H T^H a(theta, d_nom)|`` on ``grid``."""
    grid = np.asarray(grid, dtype=float)
    if np.any(grid <= -np.pi / 2) or np.any(grid > np.pi / 2):
        raise InvalidInputError("grid must lie within (-pi/2, pi/2]")
    g = np.asarray(transform.matrix) @ np.asarray(h, dtype=complex)
    atoms = steering_matrix(grid, geometry.expected_positions, geometry.wavelength)
    return DualPolynomial(grid, np.abs(g.conj() @ atoms), float(beta))


def find_peaks(poly: DualPolynomial, relative_threshold: float = 0.95,
               min_separation: float = float(np.deg2rad(2.0))) -> DoaEstimate:
    """Local maxima above ``relative_threshold * beta``, refined by a 3-point parabola.

    Peaks are accepted greedily from the highest down, skipping any closer
    than ``min_separation`` to one already accepted. Grid endpoints are never
    reported.
    """
    v, grid = np.asarray(poly.values), np.asarray(poly.grid_angles)
    if v.size == 0:
        raise InvalidInputError("empty polynomial")
    if v.size < 3 or not np.isfinite(poly.beta):
        return DoaEstimate.empty()
    inner = np.arange(1, v.size - 1)
    is_max = (v[inner] >= v[inner - 1]) & (v[inner] > v[inner + 1])
    cand = inner[is_max & (v[inner] >= relative_threshold * poly.beta)]
    if cand.size == 0:
        return DoaEstimate.empty()
    cand = cand[np.argsort(-v[cand], kind="stable")]
    step = grid[1] - grid[0]
    angles, heights = [], []
    for i in cand:
        y0, y1, y2 = v[i - 1], v[i], v[i + 1]
        den = y0 - 2 * y1 + y2
        delta = 0.5 * (y0 - y2) / den if den < 0 else 0.0
        ang = grid[i] + delta * step
        if any(abs(ang - a) < min_separation for a in angles):
            continue
        angles.append(ang)
        heights.append(y1 - 0.25 * (y0 - y2) * delta)
    order = np.argsort(angles)
    return DoaEstimate(np.asarray(angles)[order], np.asarray(heights)[order], len(angles))


def estimated_snr_db(snapshot: Snapshot) -> float:
    """SNR implied by the snapshot power and its known noise variance."""
    s2 = snapshot.noise_variance
    if s2 <= 0:
        raise InvalidInputError("noiseless snapshot: pass t_param or snr_db explicitly")
    p = float(np.mean(np.abs(snapshot.received) ** 2))
    return float(10 * np.log10(max(p - s2, 1e-3 * s2) / s2))


def resolve_t(snapshot: Snapshot, options: AnmOptions) -> float:
    if options.t_param is not None:
        return float(options.t_param)
    snr = options.snr_db if options.snr_db is not None else estimated_snr_db(snapshot)
    return hyperparameter_t(snr)


def resolve_beta(snapshot: Snapshot, n_elements: int, options: AnmOptions) -> float | None:
    if options.beta is not None:
        return float(options.beta)
    if options.beta_rule == "schedule":
        return None
    if options.beta_rule != "noise":
        raise InvalidInputError(f"unknown beta_rule {options.beta_rule!r}")
    if snapshot.noise_variance <= 0:
        raise InvalidInputError("noise-calibrated beta needs a positive noise variance")
    scale = snapshot.n_slots * n_elements * np.log(max(n_elements, 2))
    return float(options.noise_beta_factor * np.sqrt(snapshot.noise_variance * scale))


def estimate_doa(snapshot: Snapshot, schedule: RisSchedule, geometry: ArrayGeometry,
                 perturbation_estimate=None, options: AnmOptions | None = None) -> DoaEstimate:
    """Fit ``T``, solve the dual program and pick peaks of the dual polynomial.

    With a zero perturbation estimate ``T`` is the identity and this is the
    plain atomic-norm estimator.
    """
    opts = options or AnmOptions()
    n = geometry.n_elements
    d_hat = np.zeros(n) if perturbation_estimate is None else np.asarray(perturbation_estimate, float)
    transform = fit_transform(geometry, d_hat, opts.detection_range, opts.n_transform_grid,
                              opts.transform_rcond)
    t = resolve_t(snapshot, opts)
    beta = resolve_beta(snapshot, n, opts)
    problem = formulate(snapshot, schedule, d_hat, transform, t, beta, geometry.wavelength)
    sol = solve(problem, opts.sdp)
    lo, hi = opts.detection_range
    grid = np.linspace(lo, hi, opts.n_peak_grid)
    poly = dual_polynomial(sol.h_vector, transform, geometry, grid, problem.beta)
    est = find_peaks(poly, opts.relative_threshold, opts.min_separation)
    amps = None
    if est.k_detected:
        c = response_matrix(schedule, geometry, est.angles, d_hat)
        amps = np.linalg.lstsq(c, snapshot.received, rcond=None)[0]
    return replace(est, converged=sol.converged, solution=sol, polynomial=poly, amplitudes=amps)


def write_polynomial_csv(poly: DualPolynomial, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["angle_deg", "f_value", "beta"])
        for a, v in zip(poly.grid_angles, poly.values):
            writer.writerow([f"{np.rad2deg(a):.10f}", f"{v:.12e}", f"{poly.beta:.12e}"])
