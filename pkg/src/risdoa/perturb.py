"""Gradient-descent refinement of element positions and angles, and the
alternating estimator that couples it with the atomic-norm stage.

The data-fit objective is ``eta(d, theta) = ||r - mu(d, theta, s)||^2`` with
``s`` re-fitted by least squares at every evaluation, so the gradients below
(taken with ``s`` fixed) are also gradients of the reduced objective.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .anm import AnmOptions, DoaEstimate, estimate_doa
from .errors import InvalidInputError, RisDoaError
from .model import ArrayGeometry, RisSchedule, Snapshot, response_matrix, steering_matrix, steering_vector


@dataclass(frozen=True)
class GdOptions:
    """Refinement knobs.

    ``step_d`` / ``step_theta`` of ``None`` select curvature-normalised steps:
    ``step_scale`` divided by the largest eigenvalue of the Gauss-Newton
    block for that parameter group, evaluated at the starting point. With
    ``step_rule="bb"`` later steps follow the Barzilai-Borwein rule per group,
    clamped around that curvature step.

    ``d_prior_std`` adds a zero-mean Gaussian prior on the positions, i.e. the
    penalty ``sigma^2 / d_prior_std^2 * ||d||^2``; the recorded objective then
    includes it. Without it the fit is unregularised and can trade noise
    into position estimates when ``M`` is close to ``N``.
    """

    step_d: float | None = None
    step_theta: float | None = None
    step_scale: float = 0.5
    step_rule: str = "bb"
    max_iter: int = 200
    rel_tol: float = 1e-3
    outer_iters: int = 5
    outer_tols: tuple = (float(np.deg2rad(0.01)), 1e-3)
    refine_angles: bool = True
    d_prior_std: float | None = None
    max_backtracks: int = 40
    trace_path: str | None = None

    def __post_init__(self):
        for name in ("step_d", "step_theta"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise InvalidInputError(f"{name} must be positive")
        if self.d_prior_std is not None and not self.d_prior_std > 0:
            raise InvalidInputError("d_prior_std must be positive")
        if self.step_rule not in ("fixed", "bb"):
            raise InvalidInputError("step_rule must be 'fixed' or 'bb'")
        if not self.step_scale > 0 or self.rel_tol < 0:
            raise InvalidInputError("step_scale must be positive and rel_tol non-negative")
        if self.max_iter < 1 or self.outer_iters < 1:
            raise InvalidInputError("max_iter and outer_iters must be >= 1")
        if len(self.outer_tols) != 2 or min(self.outer_tols) < 0:
            raise InvalidInputError("outer_tols must be two non-negative numbers")


@dataclass(frozen=True)
class RefinementTrace:
    objective_per_iter: np.ndarray
    d_estimate: np.ndarray
    theta_estimate: np.ndarray
    s_estimate: np.ndarray
    stopped_early: bool
    step_underflow: bool = False
    grad_d_max: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)
    grad_theta_max: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)


@dataclass(frozen=True)
class SignalEstimate:
    signals: np.ndarray
    rank: int
    rank_deficient: bool


@dataclass(frozen=True)
class EstimationResult:
    angles: np.ndarray
    perturbations: np.ndarray
    signals: np.ndarray
    objective_trace: np.ndarray
    eta: float
    outer_iterations: int
    converged: bool
    degraded: bool = False
    anm_estimate: DoaEstimate | None = field(default=None, repr=False, compare=False)


def _model_parts(schedule: RisSchedule, geometry: ArrayGeometry, d_est, theta_est):
    d_est = np.asarray(d_est, dtype=float)
    theta_est = np.atleast_1d(np.asarray(theta_est, dtype=float))
    n = geometry.n_elements
    if d_est.shape != (n,) or schedule.n_elements != n:
        raise InvalidInputError("perturbation estimate, schedule and geometry disagree on N")
    lam = geometry.wavelength
    pos = geometry.expected_positions + d_est
    a_psi = steering_vector(schedule.psi, d_est, lam)
    atoms = steering_matrix(theta_est, pos, lam)
    return d_est, theta_est, pos, a_psi, atoms


def _check_s(s_est, k):
    s = np.atleast_1d(np.asarray(s_est, dtype=complex))
    if s.shape != (k,):
        raise InvalidInputError("signal estimate must have one entry per angle")
    return s


def objective_eta(snapshot: Snapshot, schedule: RisSchedule, geometry: ArrayGeometry,
                  d_est, theta_est, s_est) -> float:
    c = response_matrix(schedule, geometry, theta_est, d_est)
    s = _check_s(s_est, c.shape[1])
    if snapshot.n_slots != c.shape[0]:
        raise InvalidInputError("snapshot length does not match the schedule")
    return float(np.sum(np.abs(snapshot.received - c @ s) ** 2))


def estimate_signal(snapshot: Snapshot, schedule: RisSchedule, geometry: ArrayGeometry,
                    d_est, theta_est) -> SignalEstimate:
    """Least-squares amplitudes for fixed positions and angles (min-norm if rank-deficient)."""
    c = response_matrix(schedule, geometry, theta_est, d_est)
    if snapshot.n_slots != c.shape[0]:
        raise InvalidInputError("snapshot length does not match the schedule")
    s, _, rank, _ = np.linalg.lstsq(c, snapshot.received, rcond=None)
    return SignalEstimate(s, int(rank), bool(rank < c.shape[1]))


def grad_perturbation(snapshot: Snapshot, schedule: RisSchedule, geometry: ArrayGeometry,
                      d_est, theta_est, s_est) -> np.ndarray:
    """``d eta / d d_n`` assembled from the V, G, H matrices."""
    d_est, theta_est, pos, a_psi, atoms = _model_parts(schedule, geometry, d_est, theta_est)
    s = _check_s(s_est, theta_est.size)
    b = schedule.b_matrix
    r = snapshot.received
    kappa = 2j * np.pi / geometry.wavelength * (np.sin(schedule.psi) + np.sin(theta_est))
    # A(theta, d_nom) * A(theta, d_hat) * A(psi 1, d_hat)
    e_mat = atoms * a_psi[:, None]
    v = (b.conj() @ b.T) * (e_mat @ (kappa * s))[None, :]
    g = s.conj()[:, None] * (e_mat.conj().T @ v)
    h = (kappa * s)[:, None] * e_mat.T * (r.conj() @ b.T)[None, :]
    return 2.0 * np.real(np.sum(g - h, axis=0))


def grad_angles(snapshot: Snapshot, schedule: RisSchedule, geometry: ArrayGeometry,
                d_est, theta_est, s_est) -> np.ndarray:
    """``d eta / d theta_k`` in vectorised form."""
    d_est, theta_est, pos, a_psi, atoms = _model_parts(schedule, geometry, d_est, theta_est)
    s = _check_s(s_est, theta_est.size)
    b = schedule.b_matrix
    mu = b.T @ (a_psi[:, None] * atoms) @ s
    z = b @ (mu - snapshot.received).conj()
    inner = atoms.T @ (pos * a_psi * z)
    return 2.0 * np.real(2j * np.pi / geometry.wavelength * np.cos(theta_est) * s * inner)


def model_jacobians(schedule: RisSchedule, geometry: ArrayGeometry, d_est, theta_est, s):
    """Jacobians of the noiseless mean w.r.t. positions (M x N) and angles (M x K)."""
    s = np.atleast_1d(np.asarray(s, dtype=complex))
    _, theta_est, pos, a_psi, atoms = _model_parts(schedule, geometry, d_est, theta_est)
    c = 2j * np.pi / geometry.wavelength
    e_mat = atoms * a_psi[:, None]
    kappa = c * (np.sin(schedule.psi) + np.sin(theta_est))
    jd = schedule.b_matrix.T * (e_mat @ (kappa * s))[None, :]
    jt = schedule.b_matrix.T @ (e_mat * pos[:, None]) * (c * np.cos(theta_est) * s)[None, :]
    return jd, jt


def _auto_step(jac: np.ndarray, scale: float) -> float:
    if jac.size == 0:
        return 0.0
    gram = 2.0 * np.real(jac.conj().T @ jac)
    lmax = float(np.linalg.eigvalsh(gram)[-1])
    return scale / lmax if lmax > 0 else 0.0


def _bb_step(ds, dg, rho_ref):
    # Barzilai-Borwein step, clamped to [1e-2, 1e3] times the curvature step
    curv = float(np.dot(ds, dg))
    if rho_ref == 0.0 or not curv > 0:
        return rho_ref
    return float(np.clip(np.dot(ds, ds) / curv, 1e-2 * rho_ref, 1e3 * rho_ref))


def _evaluate(snapshot, schedule, geometry, d, theta, ridge=0.0):
    s = estimate_signal(snapshot, schedule, geometry, d, theta).signals
    return s, objective_eta(snapshot, schedule, geometry, d, theta, s) + ridge * float(d @ d)


def refine(snapshot: Snapshot, schedule: RisSchedule, geometry: ArrayGeometry, theta_init,
           options: GdOptions | None = None, d_init=None) -> RefinementTrace:
    """Joint gradient descent on positions and angles.

    A step that would raise ``eta`` is rejected and both step sizes are halved
    until it does not, so the recorded objective never increases. Stops after
    ``max_iter`` accepted steps, when the relative decrease falls to
    ``rel_tol``, or when the steps underflow.
    """
    opts = options or GdOptions()
    theta = np.atleast_1d(np.asarray(theta_init, dtype=float)).copy()
    if theta.size == 0:
        raise InvalidInputError("theta_init must be non-empty")
    n = geometry.n_elements
    d = np.zeros(n) if d_init is None else np.asarray(d_init, dtype=float).copy()
    if d.shape != (n,):
        raise InvalidInputError("d_init must have length N")

    ridge = 0.0 if opts.d_prior_std is None else snapshot.noise_variance / opts.d_prior_std ** 2
    s, eta = _evaluate(snapshot, schedule, geometry, d, theta, ridge)
    jd, jt = model_jacobians(schedule, geometry, d, theta, s)
    rho_d = opts.step_d if opts.step_d is not None else _auto_step(jd, opts.step_scale)
    rho_t = opts.step_theta if opts.step_theta is not None else _auto_step(jt, opts.step_scale)
    if not opts.refine_angles:
        rho_t = 0.0

    rho0 = (rho_d, rho_t)
    etas, gdm, gtm = [eta], [], []
    stopped_early = underflow = False
    prev = None
    for _ in range(opts.max_iter):
        gd = grad_perturbation(snapshot, schedule, geometry, d, theta, s) + 2 * ridge * d
        gt = grad_angles(snapshot, schedule, geometry, d, theta, s)
        if opts.step_rule == "bb" and prev is not None:
            rho_d = _bb_step(d - prev[0], gd - prev[2], rho0[0])
            if opts.refine_angles:
                rho_t = _bb_step(theta - prev[1], gt - prev[3], rho0[1])
        prev = (d, theta, gd, gt)
        gdm.append(float(np.max(np.abs(gd))))
        gtm.append(float(np.max(np.abs(gt))))
        if eta == 0.0 or (gdm[-1] == 0.0 and gtm[-1] == 0.0):
            stopped_early = True
            break
        for _ in range(opts.max_backtracks):
            d_new = d - rho_d * gd
            t_new = np.clip(theta - rho_t * gt, -np.pi / 2 + 1e-12, np.pi / 2)
            s_new, eta_new = _evaluate(snapshot, schedule, geometry, d_new, t_new, ridge)
            if eta_new <= eta:
                break
            rho_d *= 0.5
            rho_t *= 0.5
        else:
            underflow = True
            break
        rel = (eta - eta_new) / eta
        d, theta, s, eta = d_new, t_new, s_new, eta_new
        etas.append(eta)
        if rel <= opts.rel_tol:
            stopped_early = True
            break

    trace = RefinementTrace(np.asarray(etas), d, theta, s, stopped_early, underflow,
                            np.asarray(gdm), np.asarray(gtm))
    if opts.trace_path:
        write_trace_csv(trace, opts.trace_path)
    return trace


def write_trace_csv(trace: RefinementTrace, path: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iter", "eta", "max_abs_grad_d", "max_abs_grad_theta"])
        for i, eta in enumerate(trace.objective_per_iter):
            gd = trace.grad_d_max[i] if i < trace.grad_d_max.size else np.nan
            gt = trace.grad_theta_max[i] if i < trace.grad_theta_max.size else np.nan
            w.writerow([i, repr(float(eta)), repr(float(gd)), repr(float(gt))])


def run_adpp(snapshot: Snapshot, schedule: RisSchedule, geometry: ArrayGeometry,
             options: GdOptions | None = None, anm_options: AnmOptions | None = None,
             n_targets: int | None = None) -> EstimationResult:
    """Alternate atomic-norm DOA estimation and position refinement.

    The first pass runs with a zero position estimate; each later pass fits
    the transform to the latest position estimate, and refinement warm-starts
    from it. The iterate with the smallest ``eta`` is returned. ``n_targets``
    keeps only that many of the strongest peaks.
    """
    opts = options or GdOptions()
    anm_opts = anm_options or AnmOptions()
    n = geometry.n_elements
    d_hat = np.zeros(n)
    theta_prev = None
    best = None
    traces = []
    degraded = converged = False
    q = 0
    for q in range(1, opts.outer_iters + 1):
        try:
            est = estimate_doa(snapshot, schedule, geometry, d_hat, anm_opts)
            if n_targets is not None:
                est = est.strongest(n_targets)
            if est.k_detected == 0:
                raise RisDoaError("no peaks detected")
            tr = refine(snapshot, schedule, geometry, est.angles, opts, d_init=d_hat)
        except (RisDoaError, np.linalg.LinAlgError):
            degraded = True
            break
        traces.append(tr.objective_per_iter)
        theta = tr.theta_estimate if opts.refine_angles else est.angles
        eta = float(tr.objective_per_iter[-1])
        cand = EstimationResult(np.sort(theta), tr.d_estimate, tr.s_estimate[np.argsort(theta)],
                                np.zeros(0), eta, q, False, False, est)
        if best is None or eta < best.eta:
            best = cand
        d_change = np.max(np.abs(tr.d_estimate - d_hat))
        same_k = theta_prev is not None and theta_prev.size == theta.size
        d_hat = tr.d_estimate
        if same_k and np.max(np.abs(np.sort(theta) - theta_prev)) <= opts.outer_tols[0] \
                and d_change <= opts.outer_tols[1]:
            converged = True
            break
        theta_prev = np.sort(theta)

    trace = np.concatenate(traces) if traces else np.zeros(0)
    if best is None:
        return EstimationResult(np.zeros(0), d_hat, np.zeros(0, complex), trace, np.inf, q,
                                False, True)
    return replace(best, objective_trace=trace, outer_iterations=q, converged=converged,
                   degraded=degraded)
