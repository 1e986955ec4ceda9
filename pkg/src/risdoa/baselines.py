"""Reference estimators built on the nominal (unperturbed) array model."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .anm import AnmOptions, DoaEstimate, estimate_doa
from .errors import InvalidInputError
from .model import ArrayGeometry, RisSchedule, Snapshot, response_matrix
from .transform import DEFAULT_DETECTION_RANGE

OMP_GRID_STEP = float(np.deg2rad(0.5))
FFT_GRID_STEP = float(np.deg2rad(0.05))


def default_grid(step: float, detection_range=DEFAULT_DETECTION_RANGE) -> np.ndarray:
    lo, hi = detection_range
    n = int(round((hi - lo) / step)) + 1
    return np.linspace(lo, hi, n)


def nominal_dictionary(schedule: RisSchedule, geometry: ArrayGeometry, grid) -> np.ndarray:
    """Slot-domain response of unit targets at ``grid`` assuming zero perturbation (M x G)."""
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    if grid.size == 0:
        raise InvalidInputError("grid must not be empty")
    if np.any(grid <= -np.pi / 2) or np.any(grid > np.pi / 2):
        raise InvalidInputError("grid must lie within (-pi/2, pi/2]")
    return response_matrix(schedule, geometry, grid, np.zeros(geometry.n_elements))


def beamform_spectrum(snapshot: Snapshot, schedule: RisSchedule, geometry: ArrayGeometry,
                      grid) -> np.ndarray:
    """Normalised matched-filter output ``|<d(theta), r>| / ||d(theta)||``."""
    dic = nominal_dictionary(schedule, geometry, grid)
    if dic.shape[0] != snapshot.n_slots:
        raise InvalidInputError("snapshot length does not match the schedule")
    norms = np.linalg.norm(dic, axis=0)
    norms[norms == 0] = 1.0
    return np.abs(dic.conj().T @ snapshot.received) / norms


def fft_estimate(snapshot: Snapshot, schedule: RisSchedule, geometry: ArrayGeometry,
                 grid=None, k: int = 1) -> DoaEstimate:
    """The ``k`` largest local maxima of the beamforming spectrum."""
    if k < 1:
        raise InvalidInputError("k must be >= 1")
    grid = default_grid(FFT_GRID_STEP) if grid is None else np.asarray(grid, dtype=float)
    spec = beamform_spectrum(snapshot, schedule, geometry, grid)
    if spec.size < 3 or not np.any(spec > 0):
        return DoaEstimate.empty()
    inner = np.arange(1, spec.size - 1)
    peaks = inner[(spec[inner] >= spec[inner - 1]) & (spec[inner] > spec[inner + 1])]
    if peaks.size == 0:
        peaks = np.array([int(np.argmax(spec))])
    peaks = peaks[np.argsort(-spec[peaks], kind="stable")[:k]]
    peaks = np.sort(peaks)
    return DoaEstimate(grid[peaks], spec[peaks], peaks.size)


@dataclass(frozen=True)
class OmpPath:
    indices: np.ndarray
    coefficients: np.ndarray
    residual_norms: np.ndarray


def omp_path(dictionary: np.ndarray, r, k_max: int, noise_floor: float = 0.0) -> OmpPath:
    """Greedy OMP: pick the most correlated normalised atom, refit, repeat.

    Stops after ``k_max`` atoms or once ``||residual||^2 <= noise_floor``.
    ``residual_norms[0]`` is ``||r||``.
    """
    if k_max < 1:
        raise InvalidInputError("k_max must be >= 1")
    r = np.asarray(r, dtype=complex)
    norms = np.linalg.norm(dictionary, axis=0)
    norms[norms == 0] = np.inf
    floor = max(noise_floor, 1e-24 * float(np.vdot(r, r).real))
    chosen: list[int] = []
    coef = np.zeros(0, dtype=complex)
    res = r.copy()
    hist = [float(np.linalg.norm(res))]
    while len(chosen) < k_max and hist[-1] ** 2 > floor:
        corr = np.abs(dictionary.conj().T @ res) / norms
        corr[chosen] = -1.0
        chosen.append(int(np.argmax(corr)))
        sub = dictionary[:, chosen]
        coef = np.linalg.lstsq(sub, r, rcond=None)[0]
        res = r - sub @ coef
        hist.append(float(np.linalg.norm(res)))
    return OmpPath(np.asarray(chosen, dtype=int), coef, np.asarray(hist))


def omp_estimate(snapshot: Snapshot, schedule: RisSchedule, geometry: ArrayGeometry,
                 grid=None, k_max: int = 1) -> DoaEstimate:
    """On-grid sparse recovery; the residual floor is ``M * sigma^2``."""
    grid = default_grid(OMP_GRID_STEP) if grid is None else np.asarray(grid, dtype=float)
    dic = nominal_dictionary(schedule, geometry, grid)
    if dic.shape[0] != snapshot.n_slots:
        raise InvalidInputError("snapshot length does not match the schedule")
    path = omp_path(dic, snapshot.received, k_max, snapshot.n_slots * snapshot.noise_variance)
    if path.indices.size == 0:
        return DoaEstimate.empty()
    order = np.argsort(grid[path.indices])
    coef = path.coefficients[order]
    return DoaEstimate(grid[path.indices][order], np.abs(coef), path.indices.size,
                       amplitudes=coef)


def plain_anm(snapshot: Snapshot, schedule: RisSchedule, geometry: ArrayGeometry,
              options: AnmOptions | None = None) -> DoaEstimate:
    """Atomic-norm estimate ignoring perturbations (``T = I``)."""
    return estimate_doa(snapshot, schedule, geometry, None, options)


def write_spectrum_csv(grid, values, path: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["angle_deg", "value"])
        for a, v in zip(np.asarray(grid), np.asarray(values)):
            w.writerow([repr(float(np.rad2deg(a))), repr(float(v))])
