"""Least-squares map from nominal to perturbed steering vectors.

The perturbed atom ``a(theta, d_nom + d_hat)`` is not a Vandermonde vector,
so it cannot enter the Toeplitz machinery of the atomic-norm dual directly.
A square matrix ``T`` with ``T^H a(theta, d_nom) ~= a(theta, d_nom + d_hat)``
over an angle grid lets the dual constraint stay on nominal atoms.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import IllPosedDictionaryError, InvalidInputError
from .model import ArrayGeometry, steering_matrix

DEFAULT_DETECTION_RANGE = (np.deg2rad(-45.0), np.deg2rad(45.0))
DEFAULT_GRID_FACTOR = 8
# relative singular-value cutoff for the dictionary pseudo-inverse (None: machine precision)
DEFAULT_RCOND = None


@dataclass(frozen=True)
class GridDictionary:
    grid_angles: np.ndarray
    matrix: np.ndarray


@dataclass(frozen=True)
class TransformMatrix:
    matrix: np.ndarray
    fit_residual: float
    rank: int
    rank_deficient: bool = False

    @classmethod
    def identity(cls, n: int) -> "TransformMatrix":
        return cls(np.eye(n, dtype=complex), 0.0, n, False)


def _check_range(detection_range):
    lo, hi = (float(v) for v in detection_range)
    if not (-np.pi / 2 < lo < hi <= np.pi / 2):
        raise InvalidInputError("detection range must be an increasing interval within (-pi/2, pi/2]")
    return lo, hi


def build_dictionaries(geometry: ArrayGeometry, perturbation_estimate,
                       detection_range=DEFAULT_DETECTION_RANGE,
                       n_grid: int | None = None) -> tuple[GridDictionary, GridDictionary]:
    """Nominal and perturbed steering dictionaries on a uniform angle grid.

    ``n_grid`` defaults to ``8 * N``; fewer than ``N`` grid points leave the
    fit under-determined and are rejected.
    """
    n = geometry.n_elements
    if n_grid is None:
        n_grid = DEFAULT_GRID_FACTOR * n
    if n_grid < n:
        raise IllPosedDictionaryError(f"need at least N={n} grid points, got {n_grid}")
    d_hat = np.asarray(perturbation_estimate, dtype=float)
    if d_hat.shape != (n,):
        raise InvalidInputError("perturbation estimate must have length N")
    lo, hi = _check_range(detection_range)
    grid = np.linspace(lo, hi, n_grid)
    xi = steering_matrix(grid, geometry.expected_positions, geometry.wavelength)
    xi_t = steering_matrix(grid, geometry.expected_positions + d_hat, geometry.wavelength)
    return GridDictionary(grid, xi), GridDictionary(grid.copy(), xi_t)


def estimate_transform(xi: GridDictionary, xi_pert: GridDictionary,
                       rcond: float | None = DEFAULT_RCOND) -> TransformMatrix:
    """Minimum-norm least-squares solution of ``T^H Xi = Xi_pert``.

    Solved row-wise as ``Xi^H T = Xi_pert^H``, which has the same minimiser
    as the vectorised system ``(Xi^T kron I) vec(T^H) = vec(Xi_pert)`` without
    building the ``(Gamma N) x N^2`` matrix. Singular values of ``Xi`` below
    ``rcond`` times the largest are treated as zero; the default cutoff is
    ``eps * max(N, Gamma)``.
    """
    a, b = np.asarray(xi.matrix), np.asarray(xi_pert.matrix)
    if a.shape != b.shape or not np.array_equal(xi.grid_angles, xi_pert.grid_angles):
        raise InvalidInputError("dictionaries must share grid and shape")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise InvalidInputError("dictionaries contain non-finite entries")
    n = a.shape[0]
    t_mat, _, rank, _ = np.linalg.lstsq(a.conj().T, b.conj().T, rcond=rcond)
    denom = np.linalg.norm(b)
    resid = np.linalg.norm(t_mat.conj().T @ a - b) / denom if denom > 0 else 0.0
    return TransformMatrix(t_mat, float(resid), int(rank), bool(rank < n))


def fit_transform(geometry: ArrayGeometry, perturbation_estimate,
                  detection_range=DEFAULT_DETECTION_RANGE, n_grid: int | None = None,
                  rcond: float | None = DEFAULT_RCOND) -> TransformMatrix:
    """Build the dictionaries and fit ``T``; an all-zero estimate gives ``T = I``."""
    d_hat = np.asarray(perturbation_estimate, dtype=float)
    if d_hat.shape == (geometry.n_elements,) and not np.any(d_hat):
        return TransformMatrix.identity(geometry.n_elements)
    xi, xi_t = build_dictionaries(geometry, d_hat, detection_range, n_grid)
    return estimate_transform(xi, xi_t, rcond)
