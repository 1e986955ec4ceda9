"""Dual semidefinite program of the perturbation-aware atomic-norm denoiser.

The program solved is::

    min_{h, W}  (q - h)^H M^{-1} (q - h)
    s.t.        [[W, T h], [(T h)^H, t]] >= 0,  W Hermitian,
                Tr W = beta^2 / t,  sum_n W[n, n+nu] = 0  (nu != 0)

with ``q = diag(a*(psi, d)) B* r`` and ``M = diag(a*(psi, d)) B* B^T diag(a(psi, d))``.

Rather than attacking this directly (about ``N^2`` free real unknowns in
``W``) we run a primal-dual interior-point method on its conic dual, the
Toeplitz form of the atomic-norm denoiser::

    min_{u, z, tau, sigma}  sigma + beta/2 (u_0 + tau)
    s.t.  [[Toep(u), z], [z^H, tau]] >= 0
          [[I, v], [v^H, 2 sigma]] >= 0,   v = L^{-1} q - L^H T^H z,  M = L L^H

which has only ``4N + 1`` real unknowns. The multiplier of the first block
is a rescaled copy of the bordered matrix above, so ``W`` and ``h`` are read
off the dual iterate and inherit its positive definiteness.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import FormulationError, InvalidInputError
from .model import RisSchedule, Snapshot, steering_vector
from .transform import TransformMatrix

_COND_LIMIT = 1e12


@dataclass(frozen=True)
class AnmSdpProblem:
    q_vector: np.ndarray
    m_matrix: np.ndarray
    transform: TransformMatrix
    t_param: float
    beta: float
    regularized: bool = False


@dataclass(frozen=True)
class KktResiduals:
    psd_violation: float
    trace_gap: float
    offdiag_sum_max: float
    stationarity_norm: float

    def max(self) -> float:
        return max(self.psd_violation, self.trace_gap, self.offdiag_sum_max,
                   self.stationarity_norm)


@dataclass(frozen=True)
class SdpOptions:
    max_iter: int = 100
    tol_psd: float = 1e-7
    tol_lin: float = 1e-7
    tol_rel_obj: float = 1e-9
    trace_path: str | None = None


@dataclass(frozen=True)
class SdpSolution:
    h_vector: np.ndarray
    w_matrix: np.ndarray
    objective_value: float
    kkt_residuals: KktResiduals
    iterations: int
    converged: bool
    z_vector: np.ndarray = field(repr=False, default=None)
    trace: list = field(repr=False, default_factory=list)


def formulate(snapshot: Snapshot, schedule: RisSchedule, perturbation_estimate,
              transform: TransformMatrix, t_param: float, beta: float | None = None,
              wavelength: float = 1.0) -> AnmSdpProblem:
    """Assemble ``q`` and ``M`` for the current perturbation estimate.

    ``beta`` defaults to ``sqrt(t_param)``. ``M`` gets a small ridge
    (``1e-8 Tr(M) / N``) when its condition number exceeds 1e12, which is
    always the case with fewer slots than elements.
    """
    if not t_param > 0:
        raise InvalidInputError("t_param must be positive")
    beta = float(np.sqrt(t_param)) if beta is None else float(beta)
    if not beta > 0:
        raise InvalidInputError("beta must be positive")
    b = schedule.b_matrix
    n = b.shape[0]
    tmat = np.asarray(transform.matrix)
    if tmat.shape != (n, n):
        raise InvalidInputError("transform must be N x N")
    if snapshot.n_slots != schedule.n_slots:
        raise InvalidInputError("snapshot length does not match the schedule")
    d_hat = np.asarray(perturbation_estimate, dtype=float)
    if d_hat.shape != (n,):
        raise InvalidInputError("perturbation estimate must have length N")
    c_mat = b.T * steering_vector(schedule.psi, d_hat, wavelength)[None, :]
    q = c_mat.conj().T @ snapshot.received
    m = c_mat.conj().T @ c_mat
    m = 0.5 * (m + m.conj().T)
    regularized = False
    tr = float(np.real(np.trace(m)))
    if tr <= 0:
        raise FormulationError("measurement Gram matrix is zero")
    if np.linalg.cond(m) > _COND_LIMIT:
        m = m + (1e-8 * tr / n) * np.eye(n)
        regularized = True
        if np.linalg.cond(m) > _COND_LIMIT * 1e4:
            raise FormulationError("measurement Gram matrix is singular beyond repair")
    return AnmSdpProblem(q, m, transform, float(t_param), beta, regularized)


# ---------------------------------------------------------------------------
# interior-point machinery
# ---------------------------------------------------------------------------

class _LmiData:
    """Blocks of ``max b^T y  s.t.  C - sum_i y_i A_i >= 0`` (two Hermitian blocks)."""

    def __init__(self, v0: np.ndarray, g: np.ndarray, beta: float):
        n = v0.size
        k = n + 1
        m = 4 * n + 1
        f1 = np.zeros((m, k, k), dtype=complex)
        f2 = np.zeros((m, k, k), dtype=complex)
        cost = np.zeros(m)
        i = 0
        f1[i, np.arange(n), np.arange(n)] = 1.0          # u_0
        cost[i] = beta / 2
        i += 1
        for nu in range(1, n):                           # Re u_nu, Im u_nu
            rows = np.arange(n - nu)
            f1[i, rows, rows + nu] = 1.0
            f1[i, rows + nu, rows] = 1.0
            f1[i + 1, rows, rows + nu] = 1j
            f1[i + 1, rows + nu, rows] = -1j
            i += 2
        self.z_index = i
        for j in range(n):                               # Re z_j, Im z_j
            f1[i, j, n] = f1[i, n, j] = 1.0
            f2[i, :n, n] = -g[:, j]
            f2[i, n, :n] = -g[:, j].conj()
            f1[i + 1, j, n] = 1j
            f1[i + 1, n, j] = -1j
            f2[i + 1, :n, n] = -1j * g[:, j]
            f2[i + 1, n, :n] = 1j * g[:, j].conj()
            i += 2
        f1[i, n, n] = 1.0                                # tau
        cost[i] = beta / 2
        i += 1
        f2[i, n, n] = 2.0                                # sigma
        cost[i] = 1.0
        c2 = np.zeros((k, k), dtype=complex)
        c2[:n, :n] = np.eye(n)
        c2[:n, n] = v0
        c2[n, :n] = v0.conj()
        self.n, self.k, self.m = n, k, m
        self.blocks_a = (-f1, -f2)
        self.blocks_c = (np.zeros((k, k), dtype=complex), c2)
        self.b = -cost
        # (m, k*k) layouts for the adjoint and for Tr(A_i K) = sum A_i * K^T
        self._flat = tuple(a.reshape(m, -1) for a in self.blocks_a)

    def op(self, xs) -> np.ndarray:
        """``A(X)_i = Re Tr(A_i X)``."""
        return sum((fa @ x.T.reshape(-1)).real for fa, x in zip(self._flat, xs))

    def adj(self, y) -> tuple:
        return tuple(np.tensordot(y, a, axes=1) for a in self.blocks_a)

    def schur(self, xs, zinvs) -> np.ndarray:
        h = np.zeros((self.m, self.m))
        for a, fa, x, zi in zip(self.blocks_a, self._flat, xs, zinvs):
            kj = np.matmul(np.matmul(x, a), zi)
            h += (fa @ kj.transpose(0, 2, 1).reshape(self.m, -1).T).real
        return 0.5 * (h + h.T)


def _herm(x):
    return 0.5 * (x + x.conj().T)


def _inner(xs, zs) -> float:
    return float(sum(np.real(np.vdot(x, z)) for x, z in zip(xs, zs)))


def _max_step(x: np.ndarray, dx: np.ndarray) -> float:
    """Largest alpha with ``x + alpha dx`` PSD (``x`` positive definite)."""
    lower = np.linalg.cholesky(x)
    li = linalg.solve_triangular(lower, np.eye(x.shape[0]), lower=True)
    ev = np.linalg.eigvalsh(_herm(li @ dx @ li.conj().T))
    return np.inf if ev[0] >= 0 else -1.0 / ev[0]


def _solve_schur(h: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        return linalg.cho_solve(linalg.cho_factor(h), rhs)
    except linalg.LinAlgError:
        return linalg.lstsq(h, rhs)[0]


def _bordered(w, th, t):
    n = w.shape[0]
    out = np.empty((n + 1, n + 1), dtype=complex)
    out[:n, :n] = w
    out[:n, n] = th
    out[n, :n] = th.conj()
    out[n, n] = t
    return out


def toeplitz_sums(w: np.ndarray) -> np.ndarray:
    """``sum_n W[n, n + nu]`` for ``nu = 0 .. N-1`` (negative ``nu`` are conjugates)."""
    n = w.shape[0]
    return np.array([np.trace(w, offset=nu) for nu in range(n)])


def kkt_residuals(problem: AnmSdpProblem, h: np.ndarray, w: np.ndarray,
                  z: np.ndarray | None = None) -> KktResiduals:
    """Scaled residuals of the constraints and of primal/dual stationarity."""
    t, beta = problem.t_param, problem.beta
    th = np.asarray(problem.transform.matrix) @ h
    bord = _herm(_bordered(w, th, t))
    scale = max(np.linalg.norm(bord, 2), 1e-300)
    psd = max(0.0, -float(np.linalg.eigvalsh(bord)[0])) / scale
    target = beta ** 2 / t
    sums = toeplitz_sums(w)
    trace_gap = abs(sums[0].real - target) / target
    off = float(np.max(np.abs(sums[1:]))) / target if sums.size > 1 else 0.0
    stat = 0.0
    if z is not None:
        q = problem.q_vector
        tmat = np.asarray(problem.transform.matrix)
        ref = q - problem.m_matrix @ (tmat.conj().T @ z)
        stat = float(np.linalg.norm(h - ref) / max(np.linalg.norm(q), 1e-300))
    return KktResiduals(psd, trace_gap, off, stat)


def dual_objective(problem: AnmSdpProblem, h: np.ndarray, chol=None) -> float:
    """``(q - h)^H M^{-1} (q - h)``."""
    if chol is None:
        chol = linalg.cho_factor(problem.m_matrix, lower=True)
    e = problem.q_vector - h
    return float(np.real(np.vdot(e, linalg.cho_solve(chol, e))))


def _newton_step(lmi: _LmiData, xs, zs, y, rp, rd, mu: float, gap: float):
    """One Mehrotra predictor-corrector step; returns the updated ``(xs, zs, y)``."""
    k = lmi.k
    zinvs = [linalg.cho_solve(linalg.cho_factor(z, lower=True), np.eye(k)) for z in zs]
    zinvs = [_herm(zi) for zi in zinvs]
    hmat = lmi.schur(xs, zinvs)
    base = rp + lmi.op(xs) + lmi.op([x @ r @ zi for x, r, zi in zip(xs, rd, zinvs)])

    def direction(sig, corr=None):
        rhs = base - sig * mu * lmi.op(zinvs)
        if corr is not None:
            rhs = rhs + lmi.op([dx @ dz @ zi for dx, dz, zi in zip(*corr, zinvs)])
        dy = _solve_schur(hmat, rhs)
        at_dy = lmi.adj(dy)
        dzs = [_herm(r - a) for r, a in zip(rd, at_dy)]
        dxs = []
        for i, (x, dz, zi) in enumerate(zip(xs, dzs, zinvs)):
            dx = sig * mu * zi - x - x @ dz @ zi
            if corr is not None:
                dx = dx - corr[0][i] @ corr[1][i] @ zi
            dxs.append(_herm(dx))
        return dy, dxs, dzs

    def steps(dxs, dzs, frac):
        ap = min([1.0] + [frac * _max_step(x, dx) for x, dx in zip(xs, dxs)])
        ad = min([1.0] + [frac * _max_step(z, dz) for z, dz in zip(zs, dzs)])
        return ap, ad

    dy_p, dxs_p, dzs_p = direction(0.0)
    ap, ad = steps(dxs_p, dzs_p, 1.0)
    gap_aff = _inner([x + ap * dx for x, dx in zip(xs, dxs_p)],
                     [z + ad * dz for z, dz in zip(zs, dzs_p)])
    sig = min(1.0, (gap_aff / gap) ** 3) if gap > 0 else 0.0
    dy, dxs, dzs = direction(sig, (dxs_p, dzs_p))
    ap, ad = steps(dxs, dzs, 0.95)
    xs = [_herm(x + ap * dx) for x, dx in zip(xs, dxs)]
    zs = [_herm(z + ad * dz) for z, dz in zip(zs, dzs)]
    y = y + ad * dy
    return xs, zs, y


def solve(problem: AnmSdpProblem, options: SdpOptions | None = None) -> SdpSolution:
    """Solve the dual program by a Mehrotra predictor-corrector interior-point method.

    Returns the best iterate with ``converged=False`` if ``max_iter`` is hit
    before the duality gap and infeasibilities fall below tolerance.
    """
    opts = options or SdpOptions()
    t, beta = problem.t_param, problem.beta
    if not t > 0 or not beta > 0:
        raise InvalidInputError("t_param and beta must be positive")
    q = np.asarray(problem.q_vector, dtype=complex)
    tmat = np.asarray(problem.transform.matrix, dtype=complex)
    n = q.size
    chol = linalg.cho_factor(problem.m_matrix, lower=True)
    lower = np.tril(chol[0])
    v0 = linalg.solve_triangular(lower, q, lower=True)
    g = lower.conj().T @ tmat.conj().T
    # the program is positively homogeneous in (q, beta); solve at unit data scale
    scale = float(np.linalg.norm(v0))
    if scale == 0.0:
        scale = 1.0
    lmi = _LmiData(v0 / scale, g, beta / scale)
    k = lmi.k
    xs = [np.eye(k, dtype=complex), np.eye(k, dtype=complex)]
    zs = [np.eye(k, dtype=complex), np.eye(k, dtype=complex)]
    y = np.zeros(lmi.m)
    n_tot = 2 * k
    b_norm = 1.0 + np.linalg.norm(lmi.b)
    c_norm = 1.0 + np.linalg.norm(lmi.blocks_c[1])
    trace = []
    converged = False
    it = 0

    def unpack(xs_, y_):
        p = xs_[1][:n, n] * scale
        h_ = -2.0 * (lower @ p)
        w_ = (2.0 * beta / t) * scale * _herm(xs_[0][:n, :n])
        z_ = (y_[lmi.z_index:lmi.z_index + 2 * n:2]
              + 1j * y_[lmi.z_index + 1:lmi.z_index + 2 * n:2]) * scale
        return h_, w_, z_

    for it in range(1, opts.max_iter + 1):
        at_y = lmi.adj(y)
        rp = lmi.b - lmi.op(xs)
        rd = [c - a - z for c, a, z in zip(lmi.blocks_c, at_y, zs)]
        gap = _inner(xs, zs)
        mu = gap / n_tot
        pobj = _inner(lmi.blocks_c, xs)
        dobj = float(lmi.b @ y)
        relgap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
        pinf = np.linalg.norm(rp) / b_norm
        dinf = np.sqrt(sum(np.linalg.norm(r) ** 2 for r in rd)) / c_norm
        h_i, w_i, _ = unpack(xs, y)
        sums = toeplitz_sums(w_i)
        trace.append({"iter": it - 1, "objective": dual_objective(problem, h_i, chol),
                      "psd_violation": 0.0,
                      "trace_gap": abs(sums[0].real - beta ** 2 / t) / (beta ** 2 / t),
                      "duality_gap": gap})
        if relgap < opts.tol_rel_obj and pinf < 0.1 * opts.tol_lin and dinf < 0.1 * opts.tol_lin:
            converged = True
            break
        try:
            step = _newton_step(lmi, xs, zs, y, rp, rd, mu, gap)
        except (np.linalg.LinAlgError, linalg.LinAlgError):
            # iterate too close to the cone boundary to factor; keep it
            break
        xs, zs, y = step

    h, w, z = unpack(xs, y)
    obj = dual_objective(problem, h, chol)
    kkt = kkt_residuals(problem, h, w, z)
    converged = converged and kkt.psd_violation <= opts.tol_psd and max(
        kkt.trace_gap, kkt.offdiag_sum_max) <= opts.tol_lin
    if opts.trace_path:
        write_trace_csv(trace, opts.trace_path)
    return SdpSolution(h, w, obj, kkt, it, converged, z, trace)


def write_trace_csv(trace: list, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["iter", "objective", "psd_violation", "trace_gap"])
        for row in trace:
            writer.writerow([row["iter"], repr(row["objective"]), repr(row["psd_violation"]),
                             repr(row["trace_gap"])])
