"""Fisher information and Cramer-Rao bounds for joint position/angle estimation.

The parameter vector is ``(d_pert, theta)`` with the complex amplitudes
treated as known, so the bounds are optimistic for an estimator that also
fits the amplitudes.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .model import ArrayGeometry, RisSchedule, TargetSet
from .perturb import model_jacobians


@dataclass(frozen=True)
class FisherInfo:
    matrix: np.ndarray
    lambda_block: np.ndarray
    upsilon_block: np.ndarray
    noise_variance: float
    # information per unit noise variance; inverting it keeps crb exactly proportional to sigma^2
    unit_matrix: np.ndarray | None = field(default=None, repr=False)


@dataclass(frozen=True)
class CrbResult:
    crb_d: np.ndarray
    crb_theta: np.ndarray
    singular: bool


def fisher(geometry: ArrayGeometry, targets: TargetSet, schedule: RisSchedule,
           noise_variance: float) -> FisherInfo:
    """``F = 2/sigma^2 Re{[L U]^H [L U]}`` with ``L = d mu/d d``, ``U = d mu/d theta``."""
    if not noise_variance > 0:
        raise InvalidInputError("noise_variance must be positive (Fisher information is unbounded)")
    lam, ups = model_jacobians(schedule, geometry, geometry.perturbations, targets.angles,
                               targets.signals)
    j = np.hstack([lam, ups])
    unit = 2.0 * np.real(j.conj().T @ j)
    unit = 0.5 * (unit + unit.T)
    return FisherInfo(unit / noise_variance, lam, ups, float(noise_variance), unit)


def crb_bounds(info: FisherInfo, rcond: float = 1e-12) -> CrbResult:
    """Diagonal of ``F^-1`` split into position and angle bounds.

    A singular ``F`` (e.g. a position ramp traded against a common angle
    scaling) falls back to the pseudo-inverse and sets ``singular``.
    """
    if info.unit_matrix is not None:
        f, scale = np.asarray(info.unit_matrix), info.noise_variance
    else:
        f, scale = np.asarray(info.matrix), 1.0
    n = info.lambda_block.shape[1]
    w = np.linalg.eigvalsh(f)
    wmax = max(abs(w[-1]), np.finfo(float).tiny)
    singular = bool(w[0] <= rcond * wmax)
    if singular:
        inv = np.linalg.pinv(f, rcond=rcond, hermitian=True)
    else:
        inv = np.linalg.inv(f)
    diag = np.diag(inv) * scale
    return CrbResult(diag[:n], diag[n:], singular)


def write_crb_csv(rows, path: str) -> None:
    """``rows``: iterable of ``(snr_db, crb_theta_deg vector)``."""
    rows = list(rows)
    k = max((len(r[1]) for r in rows), default=0)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["snr_db"] + [f"crb_theta_deg_{i}" for i in range(k)])
        for snr, vals in rows:
            w.writerow([repr(float(snr))] + [repr(float(v)) for v in vals])
