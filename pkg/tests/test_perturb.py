import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from risdoa.anm import AnmOptions, estimate_doa
from risdoa.errors import InvalidInputError
from risdoa.model import (ArrayGeometry, Snapshot, TargetSet, make_ris_schedule,
                          synthesize)
from risdoa.perturb import (GdOptions, estimate_signal, grad_angles, grad_perturbation,
                            objective_eta, refine, run_adpp, write_trace_csv)

from conftest import make_scene


def _eta_scalar(r, b, pos_nom, d, psi, thetas, s, lam=1.0):
    # direct triple loop over slots, elements and targets
    total = 0.0
    for m in range(len(r)):
        mu = 0.0j
        for n in range(len(pos_nom)):
            a_psi = np.exp(2j * np.pi * d[n] * np.sin(psi) / lam)
            for k in range(len(thetas)):
                mu += b[n, m] * a_psi * np.exp(2j * np.pi * (pos_nom[n] + d[n]) * np.sin(thetas[k]) / lam) * s[k]
        total += abs(r[m] - mu) ** 2
    return total


def _random_case(seed, n=6, m=7, k=2, psi=0.3, snr=20.0):
    g, tg, sched, snap = make_scene(n, m, tuple(np.linspace(-25, 20, k)), snr, psi=psi, seed=seed)
    rng = np.random.default_rng(seed + 1000)
    d = g.perturbations + rng.normal(scale=0.01, size=n)
    theta = tg.angles + rng.normal(scale=0.01, size=k)
    s = tg.signals * (1 + 0.1 * rng.normal(size=k))
    return g, sched, snap, d, theta, s


def test_eta_zero_at_truth_noiseless():
    g, tg, sched, _ = make_scene()
    snap = synthesize(g, tg, sched, 0.0)
    assert objective_eta(snap, sched, g, g.perturbations, tg.angles, tg.signals) <= 1e-24


def test_eta_with_zero_signal_is_energy():
    g, tg, sched, snap = make_scene()
    eta = objective_eta(snap, sched, g, g.perturbations, tg.angles, np.zeros(2))
    assert eta == pytest.approx(np.sum(np.abs(snap.received) ** 2), rel=1e-14)


@pytest.mark.parametrize("seed", range(3))
def test_eta_matches_scalar_oracle(seed):
    g, sched, snap, d, theta, s = _random_case(seed, n=4, m=5)
    ref = _eta_scalar(snap.received, sched.b_matrix, g.expected_positions, d, sched.psi, theta, s)
    assert objective_eta(snap, sched, g, d, theta, s) == pytest.approx(ref, rel=1e-10)


def test_eta_rejects_wrong_signal_length():
    g, tg, sched, snap = make_scene()
    with pytest.raises(InvalidInputError):
        objective_eta(snap, sched, g, g.perturbations, tg.angles, np.zeros(3))


def test_signal_estimate_exact_noiseless():
    g, tg, sched, _ = make_scene()
    snap = synthesize(g, tg, sched, 0.0)
    est = estimate_signal(snap, sched, g, g.perturbations, tg.angles)
    np.testing.assert_allclose(est.signals, tg.signals, atol=1e-8)
    assert est.rank == 2 and not est.rank_deficient


def test_signal_estimate_single_target_formula():
    g, sched, snap, d, theta, _ = _random_case(3, k=1)
    from risdoa.model import response_matrix
    c = response_matrix(sched, g, theta, d)[:, 0]
    expected = np.vdot(c, snap.received) / np.vdot(c, c).real
    assert estimate_signal(snap, sched, g, d, theta).signals[0] == pytest.approx(expected, rel=1e-10)


@pytest.mark.parametrize("seed", range(3))
def test_signal_estimate_normal_equations(seed):
    from risdoa.model import response_matrix
    g, sched, snap, d, theta, _ = _random_case(seed, k=3)
    s = estimate_signal(snap, sched, g, d, theta).signals
    c = response_matrix(sched, g, theta, d)
    res = snap.received - c @ s
    assert np.linalg.norm(c.conj().T @ res) <= 1e-8 * np.linalg.norm(c) * np.linalg.norm(snap.received)


def test_signal_estimate_flags_rank_deficiency():
    g = ArrayGeometry.ula(4)
    sched = make_ris_schedule(4, 2, 0.0, (0.0, np.pi), g, 0)
    snap = Snapshot(np.ones(2, complex), 0.1)
    est = estimate_signal(snap, sched, g, np.zeros(4), [-0.5, 0.0, 0.5])
    assert est.rank_deficient and est.rank <= 2


def _central(f, x, h):
    out = np.zeros(x.size)
    for i in range(x.size):
        e = np.zeros(x.size)
        e[i] = h
        out[i] = (f(x + e) - f(x - e)) / (2 * h)
    return out


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(2, 8), st.integers(2, 8), st.integers(1, 3),
       st.floats(-0.6, 0.6))
def test_gradients_match_finite_differences(seed, n, m, k, psi):
    g, sched, snap, d, theta, s = _random_case(seed, n, m, k, psi)
    gd = grad_perturbation(snap, sched, g, d, theta, s)
    gt = grad_angles(snap, sched, g, d, theta, s)
    nd = _central(lambda x: objective_eta(snap, sched, g, x, theta, s), d, 1e-6)
    nt = _central(lambda x: objective_eta(snap, sched, g, d, x, s), theta, 1e-6)
    scale = np.max(np.abs(np.concatenate([gd, gt]))) + 1e-12
    # element-wise relative check, floored at the vector scale for near-zero entries
    assert np.all(np.abs(gd - nd) <= 1e-4 * np.maximum(np.abs(gd), 1e-3 * scale))
    assert np.all(np.abs(gt - nt) <= 1e-4 * np.maximum(np.abs(gt), 1e-3 * scale))


def test_gradients_vanish_at_exact_parameters():
    g, tg, sched, _ = make_scene(psi=0.2)
    snap = synthesize(g, tg, sched, 0.0)
    gd = grad_perturbation(snap, sched, g, g.perturbations, tg.angles, tg.signals)
    gt = grad_angles(snap, sched, g, g.perturbations, tg.angles, tg.signals)
    assert np.max(np.abs(gd)) <= 1e-10 and np.max(np.abs(gt)) <= 1e-10


def test_perturbation_gradient_scales_quadratically_and_linearly():
    g, sched, snap, d, theta, s = _random_case(7)
    gr = {c: grad_perturbation(snap, sched, g, d, theta, c * s) for c in (1.0, 2.0, 3.0)}
    # grad(c s) = c^2 P - c Q with P from the V/G term and Q from the H term
    p = (gr[2.0] - 2 * gr[1.0]) / 2
    q = p - gr[1.0]
    np.testing.assert_allclose(gr[3.0], 9 * p - 3 * q, rtol=1e-10, atol=1e-12 * np.abs(p).max())


def test_angle_gradient_flips_with_mirrored_estimate():
    g = ArrayGeometry.ula(8)
    sched = make_ris_schedule(8, 8, 0.0, (0.0, np.pi), g, 5)
    snap = synthesize(g, TargetSet([0.0], [1.5]), sched, 0.0)
    d, s = np.zeros(8), np.array([1.5 + 0j])
    plus = grad_angles(snap, sched, g, d, [0.05], s)
    minus = grad_angles(snap, sched, g, d, [-0.05], s)
    assert plus[0] > 0
    assert minus[0] == pytest.approx(-plus[0], rel=1e-10)


def test_refine_at_exact_zero_perturbation_stops_immediately():
    g, tg, sched, _ = make_scene(bound=0.0)
    snap = synthesize(g, tg, sched, 0.0)
    tr = refine(snap, sched, g, tg.angles)
    assert tr.stopped_early and tr.objective_per_iter.size <= 2
    assert np.max(np.abs(tr.d_estimate)) <= 1e-9


def test_refine_with_vanishing_steps_leaves_estimates():
    g, tg, sched, snap = make_scene(seed=2)
    opts = GdOptions(step_d=1e-300, step_theta=1e-300, step_rule="fixed", max_iter=50, rel_tol=0.0)
    tr = refine(snap, sched, g, tg.angles, opts)
    np.testing.assert_allclose(tr.d_estimate, 0.0, rtol=0, atol=1e-250)
    np.testing.assert_allclose(tr.theta_estimate, tg.angles, rtol=1e-15, atol=0)


@pytest.mark.parametrize("rule", ["bb", "fixed"])
@pytest.mark.parametrize("seed", range(3))
def test_refine_objective_is_monotone(rule, seed):
    g, tg, sched, snap = make_scene(16, 16, seed=seed, snr_db=25.0)
    tr = refine(snap, sched, g, tg.angles + 0.005, GdOptions(step_rule=rule, max_iter=60))
    assert np.all(np.diff(tr.objective_per_iter) <= 0)
    assert np.all(tr.objective_per_iter >= 0)
    assert tr.objective_per_iter[-1] < tr.objective_per_iter[0]


def test_refine_reduces_position_error():
    g, tg, sched, snap = make_scene(32, 32, snr_db=30.0, seed=11)
    tr = refine(snap, sched, g, tg.angles, GdOptions(refine_angles=False, max_iter=200))
    # N = M leaves the positions weakly identified; only ask for progress from d = 0
    assert np.linalg.norm(tr.d_estimate - g.perturbations) < np.linalg.norm(g.perturbations)
    np.testing.assert_array_equal(tr.theta_estimate, tg.angles)


def test_refine_trace_csv(tmp_path):
    g, tg, sched, snap = make_scene(seed=1)
    path = tmp_path / "trace.csv"
    tr = refine(snap, sched, g, tg.angles, GdOptions(max_iter=5, trace_path=str(path)))
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["iter", "eta", "max_abs_grad_d", "max_abs_grad_theta"]
    assert len(rows) == tr.objective_per_iter.size + 1
    assert float(rows[1][1]) == tr.objective_per_iter[0]
    write_trace_csv(tr, str(path))


@pytest.mark.parametrize("kw", [dict(step_d=0.0), dict(max_iter=0), dict(outer_iters=0),
                                dict(step_rule="adam"), dict(d_prior_std=-1.0),
                                dict(outer_tols=(1.0,))])
def test_options_validation(kw):
    with pytest.raises(InvalidInputError):
        GdOptions(**kw)


def test_refine_rejects_empty_angles():
    g, _, sched, snap = make_scene()
    with pytest.raises(InvalidInputError):
        refine(snap, sched, g, [])


def _nominal(g):
    return g.with_perturbations(np.zeros(g.n_elements))


def test_single_outer_iteration_is_the_composition():
    g, tg, sched, snap = make_scene(16, 16, seed=3, snr_db=25.0)
    nom = _nominal(g)
    gd, an = GdOptions(outer_iters=1), AnmOptions(snr_db=25.0)
    res = run_adpp(snap, sched, nom, gd, an, n_targets=2)
    est = estimate_doa(snap, sched, nom, None, an).strongest(2)
    tr = refine(snap, sched, nom, est.angles, gd, d_init=np.zeros(16))
    np.testing.assert_array_equal(res.angles, np.sort(tr.theta_estimate))
    np.testing.assert_array_equal(res.perturbations, tr.d_estimate)
    assert res.eta == tr.objective_per_iter[-1] and res.outer_iterations == 1


def test_unperturbed_high_snr_matches_plain_anm():
    g, tg, sched, snap = make_scene(16, 16, bound=0.0, snr_db=40.0, seed=1)
    an = AnmOptions(beta_rule="noise")
    res = run_adpp(snap, sched, g, GdOptions(), an, n_targets=2)
    plain = estimate_doa(snap, sched, g, None, an).strongest(2)
    assert not res.degraded
    truth = np.rad2deg(np.sort(tg.angles))
    np.testing.assert_allclose(np.rad2deg(res.angles), np.rad2deg(plain.angles), atol=0.02)
    np.testing.assert_allclose(np.rad2deg(res.angles), truth, atol=0.03)
    np.testing.assert_allclose(np.rad2deg(plain.angles), truth, atol=0.03)


@pytest.mark.parametrize("seed", range(3))
def test_more_outer_iterations_never_worse(seed):
    g, _, sched, snap = make_scene(16, 16, seed=20 + seed, snr_db=20.0)
    nom, an = _nominal(g), AnmOptions(snr_db=20.0)
    one = run_adpp(snap, sched, nom, GdOptions(outer_iters=1), an, n_targets=2)
    many = run_adpp(snap, sched, nom, GdOptions(outer_iters=4), an, n_targets=2)
    assert many.eta <= one.eta
    assert many.objective_trace.size >= one.objective_trace.size


def test_zero_snapshot_degrades_gracefully():
    g, _, sched, _ = make_scene()
    res = run_adpp(Snapshot(np.zeros(8, complex), 0.1), sched, g, GdOptions(),
                   AnmOptions(t_param=10.0))
    assert res.degraded and res.angles.size == 0 and res.eta == np.inf
