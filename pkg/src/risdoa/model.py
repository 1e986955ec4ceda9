"""Scene description and received-signal synthesis.

A swarm of ``N`` UAVs, each carrying one RIS element, forms a nominal
uniform linear array. A single receiver collects ``M`` time slots; in slot
``m`` every element reflects with its own amplitude/phase, so the receiver
sees one scalar per slot::

    r = B^T diag(a(psi, d_pert)) (A(theta, d_nom) * A(theta, d_pert)) s + w

Angles are radians throughout; positions share the unit of the wavelength
(one wavelength by default).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError


def _frozen(x, dtype) -> np.ndarray:
    arr = np.array(x, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def _check_finite(name: str, x) -> None:
    if not np.all(np.isfinite(x)):
        raise InvalidInputError(f"{name} must be finite")


@dataclass(frozen=True)
class ArrayGeometry:
    """Nominal element positions plus the (possibly unknown) perturbations."""

    n_elements: int
    wavelength: float
    spacing: float
    expected_positions: np.ndarray
    perturbations: np.ndarray

    def __post_init__(self):
        if self.n_elements < 1:
            raise InvalidInputError("n_elements must be >= 1")
        if not self.wavelength > 0:
            raise InvalidInputError("wavelength must be positive")
        exp_pos = _frozen(self.expected_positions, float)
        pert = _frozen(self.perturbations, float)
        if exp_pos.shape != (self.n_elements,) or pert.shape != (self.n_elements,):
            raise InvalidInputError("positions and perturbations must have length n_elements")
        _check_finite("expected_positions", exp_pos)
        _check_finite("perturbations", pert)
        if exp_pos[0] != 0.0:
            raise InvalidInputError("element 0 is the reference and must sit at 0")
        object.__setattr__(self, "expected_positions", exp_pos)
        object.__setattr__(self, "perturbations", pert)

    @classmethod
    def ula(cls, n_elements: int, spacing: float = 0.5, wavelength: float = 1.0,
            perturbations=None) -> "ArrayGeometry":
        """Uniform linear array with element ``n`` nominally at ``n * spacing``."""
        if perturbations is None:
            perturbations = np.zeros(n_elements)
        return cls(n_elements, float(wavelength), float(spacing),
                   np.arange(n_elements) * float(spacing), perturbations)

    @property
    def positions(self) -> np.ndarray:
        """Actual positions (nominal plus perturbation)."""
        return self.expected_positions + self.perturbations

    def with_perturbations(self, perturbations) -> "ArrayGeometry":
        return ArrayGeometry(self.n_elements, self.wavelength, self.spacing,
                             self.expected_positions, perturbations)


@dataclass(frozen=True)
class TargetSet:
    angles: np.ndarray
    signals: np.ndarray

    def __post_init__(self):
        angles = _frozen(np.atleast_1d(self.angles), float)
        signals = _frozen(np.atleast_1d(self.signals), complex)
        if angles.ndim != 1 or angles.size < 1:
            raise InvalidInputError("at least one target angle is required")
        if signals.shape != angles.shape:
            raise InvalidInputError("angles and signals must have equal length")
        _check_finite("angles", angles)
        _check_finite("signals", signals)
        if np.any(angles <= -np.pi / 2) or np.any(angles > np.pi / 2):
            raise InvalidInputError("angles must lie in (-pi/2, pi/2]")
        if np.unique(angles).size != angles.size:
            raise InvalidInputError("target angles must be pairwise distinct")
        object.__setattr__(self, "angles", angles)
        object.__setattr__(self, "signals", signals)

    @property
    def n_targets(self) -> int:
        return self.angles.size


@dataclass(frozen=True)
class RisSchedule:
    """Per-slot RIS configuration.

    ``b_matrix[n, m]`` is the gain of element ``n`` in slot ``m`` including the
    nominal element-to-receiver phase ``exp(j 2 pi d_nom[n] sin(psi) / lambda)``.
    """

    b_matrix: np.ndarray
    psi: float
    phase_set: tuple
    amplitudes: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        b = _frozen(self.b_matrix, complex)
        if b.ndim != 2:
            raise InvalidInputError("b_matrix must be 2-D (N x M)")
        _check_finite("b_matrix", b)
        object.__setattr__(self, "b_matrix", b)
        object.__setattr__(self, "amplitudes", _frozen(self.amplitudes, float))
        object.__setattr__(self, "phase_set", tuple(float(p) for p in self.phase_set))

    @property
    def n_elements(self) -> int:
        return self.b_matrix.shape[0]

    @property
    def n_slots(self) -> int:
        return self.b_matrix.shape[1]


@dataclass(frozen=True)
class Snapshot:
    received: np.ndarray
    noise_variance: float
    true_scene: tuple | None = field(default=None, compare=False)

    def __post_init__(self):
        r = _frozen(np.atleast_1d(self.received), complex)
        if r.ndim != 1:
            raise InvalidInputError("received must be a vector")
        _check_finite("received", r)
        if not self.noise_variance >= 0:
            raise InvalidInputError("noise_variance must be >= 0")
        object.__setattr__(self, "received", r)
        object.__setattr__(self, "noise_variance", float(self.noise_variance))

    @property
    def n_slots(self) -> int:
        return self.received.size


def steering_vector(angle: float, positions, wavelength: float = 1.0) -> np.ndarray:
    """Return ``exp(j 2 pi positions sin(angle) / wavelength)``."""
    if not wavelength > 0:
        raise InvalidInputError("wavelength must be positive")
    positions = np.asarray(positions, dtype=float)
    if not np.isfinite(angle):
        raise InvalidInputError("angle must be finite")
    _check_finite("positions", positions)
    return np.exp(2j * np.pi * positions * np.sin(angle) / wavelength)


def steering_matrix(angles, positions, wavelength: float = 1.0) -> np.ndarray:
    """Stack steering vectors column-wise (N x K)."""
    angles = np.atleast_1d(np.asarray(angles, dtype=float))
    if angles.size == 0:
        raise InvalidInputError("angle list must not be empty")
    if not wavelength > 0:
        raise InvalidInputError("wavelength must be positive")
    positions = np.asarray(positions, dtype=float)
    _check_finite("angles", angles)
    _check_finite("positions", positions)
    return np.exp(2j * np.pi * np.outer(positions, np.sin(angles)) / wavelength)


def _clean_unit(c: np.ndarray) -> np.ndarray:
    # exp(j*pi) etc. leave ~1e-16 residue; snap it so binary schedules are exactly +-1
    re, im = c.real.copy(), c.imag.copy()
    re[np.abs(re) < 1e-15] = 0.0
    im[np.abs(im) < 1e-15] = 0.0
    return re + 1j * im


def make_ris_schedule(n_elements: int, n_slots: int, psi: float, phase_set,
                      geometry: ArrayGeometry, rng_seed=None,
                      amplitude=1.0) -> RisSchedule:
    """Draw a random RIS schedule.

    Each element/slot phase is drawn uniformly from ``phase_set``; the
    amplitude is shared by all elements within a slot (scalar or one value per
    slot). Deterministic for a fixed ``rng_seed``.
    """
    phase_set = tuple(phase_set)
    if len(phase_set) == 0:
        raise InvalidInputError("phase_set must not be empty")
    if n_slots < 1:
        raise InvalidInputError("n_slots must be >= 1")
    if n_elements != geometry.n_elements:
        raise InvalidInputError("n_elements does not match the geometry")
    if not np.isfinite(psi):
        raise InvalidInputError("psi must be finite")
    amps = np.broadcast_to(np.asarray(amplitude, dtype=float), (n_slots,)).copy()
    rng = np.random.default_rng(rng_seed)
    phases = np.asarray(phase_set, dtype=float)[
        rng.integers(0, len(phase_set), size=(n_elements, n_slots))]
    c = _clean_unit(np.exp(1j * phases)) * amps[None, :]
    a_psi = _clean_unit(steering_vector(psi, geometry.expected_positions, geometry.wavelength))
    seed = rng_seed if isinstance(rng_seed, (int, np.integer)) else None
    return RisSchedule(a_psi[:, None] * c, float(psi), phase_set, amps, seed)


def response_matrix(schedule: RisSchedule, geometry: ArrayGeometry, angles,
                    perturbations=None) -> np.ndarray:
    """Slot-domain response of each target (M x K).

    ``perturbations`` defaults to ``geometry.perturbations``; pass an estimate
    to evaluate the model under hypothesised positions.
    """
    if perturbations is None:
        perturbations = geometry.perturbations
    perturbations = np.asarray(perturbations, dtype=float)
    if schedule.n_elements != geometry.n_elements or perturbations.shape != (geometry.n_elements,):
        raise InvalidInputError("schedule, geometry and perturbations disagree on N")
    lam = geometry.wavelength
    a_psi = steering_vector(schedule.psi, perturbations, lam)
    atoms = steering_matrix(angles, geometry.expected_positions + perturbations, lam)
    return schedule.b_matrix.T @ (a_psi[:, None] * atoms)


def noiseless_response(geometry: ArrayGeometry, targets: TargetSet,
                       schedule: RisSchedule) -> np.ndarray:
    return response_matrix(schedule, geometry, targets.angles) @ targets.signals


def complex_noise(rng: np.random.Generator, size, variance: float) -> np.ndarray:
    """Circularly-symmetric complex Gaussian samples with the given variance."""
    scale = np.sqrt(variance / 2.0)
    return scale * (rng.standard_normal(size) + 1j * rng.standard_normal(size))


def synthesize(geometry: ArrayGeometry, targets: TargetSet, schedule: RisSchedule,
               noise_variance: float, rng_seed=None) -> Snapshot:
    """Received vector for the given scene plus AWGN of ``noise_variance``."""
    if schedule.n_elements != geometry.n_elements:
        raise InvalidInputError("schedule and geometry disagree on N")
    if not noise_variance >= 0:
        raise InvalidInputError("noise_variance must be >= 0")
    r = noiseless_response(geometry, targets, schedule)
    if noise_variance > 0:
        rng = np.random.default_rng(rng_seed)
        r = r + complex_noise(rng, r.size, noise_variance)
    return Snapshot(r, noise_variance, (geometry, targets, schedule))


def snr_to_noise_variance(snr_db: float, geometry: ArrayGeometry, targets: TargetSet,
                          schedule: RisSchedule) -> float:
    """Noise variance giving ``snr_db`` relative to the mean noiseless sample power."""
    if np.isnan(snr_db) or snr_db == -np.inf:
        raise InvalidInputError("snr_db must be finite or +inf")
    p_sig = float(np.mean(np.abs(noiseless_response(geometry, targets, schedule)) ** 2))
    if p_sig == 0.0:
        raise InvalidInputError("scene produces no signal; SNR is undefined")
    if snr_db == np.inf:
        return 0.0
    return p_sig / 10.0 ** (snr_db / 10.0)


def uniform_perturbations(rng: np.random.Generator, n_elements: int, bound: float) -> np.ndarray:
    """Draw perturbations uniformly in ``(-bound, bound]``."""
    # rng.uniform samples [low, high); mirror to get the half-open interval on the other side
    return -rng.uniform(-bound, bound, size=n_elements)
