import numpy as np
import pytest

import risdoa.anm as _anm
import risdoa.sdp as _sdp
from risdoa.model import (ArrayGeometry, TargetSet, make_ris_schedule, snr_to_noise_variance,
                          synthesize, uniform_perturbations)

TWO_TARGET_ANGLES_DEG = (-18.4228, 16.2385)
DEFAULT_ANGLES_DEG = (-30.345, 0.789, 20.456)


def make_scene(n=8, m=8, angles_deg=(-20.0, 15.0), snr_db=30.0, bound=1 / 16, psi=0.0,
               seed=0, amplitudes=None):
    """Random perturbed scene; returns (geometry, targets, schedule, snapshot)."""
    rng = np.random.default_rng(seed)
    d = uniform_perturbations(rng, n, bound) if bound > 0 else np.zeros(n)
    geom = ArrayGeometry.ula(n, perturbations=d)
    k = len(angles_deg)
    amps = np.ones(k) if amplitudes is None else np.asarray(amplitudes, float)
    targets = TargetSet(np.deg2rad(angles_deg), amps * np.exp(2j * np.pi * rng.uniform(size=k)))
    sched = make_ris_schedule(n, m, psi, (0.0, np.pi), geom, rng)
    s2 = snr_to_noise_variance(snr_db, geom, targets, sched)
    snap = synthesize(geom, targets, sched, s2, rng)
    return geom, targets, sched, snap


@pytest.fixture
def scene():
    return make_scene()


# Suite-wide audit of every converged SDP solve and every dual polynomial drawn
# from one; reported with the acceptance summary and failing the run on violation.
SOLVE_AUDIT = {"solves": 0, "max_constraint": 0.0, "polys": 0, "max_dual_ratio": 0.0}
_orig_solve = _sdp.solve
_orig_poly = _anm.dual_polynomial


def _audited_solve(problem, options=None):
    sol = _orig_solve(problem, options)
    if sol.converged:
        k = sol.kkt_residuals
        SOLVE_AUDIT["solves"] += 1
        SOLVE_AUDIT["max_constraint"] = max(SOLVE_AUDIT["max_constraint"], k.psd_violation,
                                            k.trace_gap, k.offdiag_sum_max)
    return sol


def _audited_poly(h, transform, geometry, grid, beta=np.nan):
    poly = _orig_poly(h, transform, geometry, grid, beta)
    if np.isfinite(poly.beta) and poly.beta > 0 and poly.values.size:
        SOLVE_AUDIT["polys"] += 1
        SOLVE_AUDIT["max_dual_ratio"] = max(SOLVE_AUDIT["max_dual_ratio"],
                                            float(poly.values.max() / poly.beta))
    return poly


_sdp.solve = _anm.solve = _audited_solve
_anm.dual_polynomial = _audited_poly


def audit_ok() -> bool:
    return SOLVE_AUDIT["max_constraint"] <= 1e-6 and SOLVE_AUDIT["max_dual_ratio"] <= 1 + 1e-5


CRITERIA = {
    1: "worked example, true positions, per-target error <= 0.05 deg, <= 60 s",
    2: "dual feasibility <= beta(1+1e-5), constraint residuals <= 1e-6",
    3: "gradients vs central differences <= 1e-4, exact-point gradients <= 1e-10",
    4: "refinement monotone, 100->150 relative change <= 1%, <= 30 s",
    5: "ADPP RMSE <= plain-ANM RMSE at every SNR, <= 30 min",
    6: "Fisher symmetric PSD, exact noise scaling, ANM RMSE^2 >= mean CRB",
    7: "synthesize, transform and OMP oracles",
    8: "CLI outputs byte-identical across runs",
}
_outcomes: dict[int, list[bool]] = {}


def pytest_runtest_logreport(report):
    name = report.nodeid.split("::")[-1]
    if "test_acceptance.py" not in report.nodeid or not name.startswith("test_c"):
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        num = int(name[len("test_c"):].split("_")[0])
        _outcomes.setdefault(num, []).append(report.outcome == "passed")


def pytest_terminal_summary(terminalreporter):
    if not _outcomes and not SOLVE_AUDIT["solves"]:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for num, text in CRITERIA.items():
        res = _outcomes.get(num)
        status = "NOT RUN" if res is None else ("PASS" if all(res) else "FAIL")
        tr.write_line(f"C{num} {status:7s} {text}")
    a = SOLVE_AUDIT
    tr.write_line(f"C2 suite audit: {a['solves']} converged solves, max constraint residual "
                  f"{a['max_constraint']:.2e}; {a['polys']} polynomials, max f/beta "
                  f"{a['max_dual_ratio']:.8f} -> {'PASS' if audit_ok() else 'FAIL'}")


def pytest_sessionfinish(session, exitstatus):
    if SOLVE_AUDIT["solves"] and not audit_ok() and exitstatus == 0:
        session.exitstatus = 1
