import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from risdoa.errors import InvalidInputError
from risdoa.model import (ArrayGeometry, Snapshot, TargetSet, complex_noise, make_ris_schedule,
                          noiseless_response, response_matrix, snr_to_noise_variance,
                          steering_matrix, steering_vector, synthesize, uniform_perturbations)

from conftest import make_scene


def test_steering_broadside_is_all_ones():
    np.testing.assert_array_equal(steering_vector(0.0, np.arange(5) * 0.37), np.ones(5))


def test_steering_thirty_degrees():
    v = steering_vector(np.deg2rad(30.0), [0.0, 0.5])
    np.testing.assert_allclose(v, [1.0, 1j], atol=1e-15)


def test_steering_phase_increment_two_target_angle():
    v = steering_vector(np.deg2rad(-18.4228), np.arange(32) * 0.5)
    inc = np.angle(v[1:] / v[:-1])
    # scalar oracle: pi * sin(-18.4228 deg)
    np.testing.assert_allclose(inc, -0.99282685428, atol=1e-10)
    assert abs(inc[0] - (-0.99287)) < 5e-5


@pytest.mark.parametrize("angle, pos, lam", [
    (np.nan, [0.0, 0.5], 1.0),
    (0.1, [0.0, np.inf], 1.0),
    (0.1, [0.0, 0.5], 0.0),
])
def test_steering_rejects_bad_input(angle, pos, lam):
    with pytest.raises(InvalidInputError):
        steering_vector(angle, pos, lam)


@given(st.floats(-1.5, 1.5), st.lists(st.floats(-10, 10), min_size=1, max_size=12))
def test_steering_unit_modulus(angle, pos):
    np.testing.assert_allclose(np.abs(steering_vector(angle, pos)), 1.0, rtol=1e-12)


def test_steering_matrix_columns_match_vectors():
    pos = np.arange(6) * 0.5 + 0.01
    ang = np.array([-0.4, 0.1, 0.9])
    mat = steering_matrix(ang, pos)
    for k, a in enumerate(ang):
        np.testing.assert_allclose(mat[:, k], steering_vector(a, pos))
    with pytest.raises(InvalidInputError):
        steering_matrix([], pos)


def test_geometry_invariants():
    g = ArrayGeometry.ula(4, 0.5)
    np.testing.assert_array_equal(g.expected_positions, [0, 0.5, 1.0, 1.5])
    np.testing.assert_array_equal(g.perturbations, 0.0)
    with pytest.raises(InvalidInputError):
        ArrayGeometry(3, 1.0, 0.5, np.array([0.1, 0.5, 1.0]), np.zeros(3))
    with pytest.raises(InvalidInputError):
        ArrayGeometry.ula(3, perturbations=np.zeros(2))


@pytest.mark.parametrize("angles", [[], [0.1, 0.1], [np.pi], [-np.pi / 2]])
def test_target_set_rejects(angles):
    with pytest.raises(InvalidInputError):
        TargetSet(np.asarray(angles, float), np.ones(len(angles)))


def test_target_set_accepts_endpoint():
    assert TargetSet([np.pi / 2], [1.0]).n_targets == 1


def test_binary_schedule_is_plus_minus_one():
    g = ArrayGeometry.ula(16)
    sched = make_ris_schedule(16, 20, 0.0, (0.0, np.pi), g, 5)
    assert set(np.unique(sched.b_matrix)) <= {1.0 + 0j, -1.0 + 0j}


def test_schedule_columns_follow_construction():
    g = ArrayGeometry.ula(6)
    psi = 0.3
    sched = make_ris_schedule(6, 4, psi, (0.0, np.pi / 2, np.pi), g, 11, amplitude=[1.0, 0.5, 2.0, 1.0])
    c = sched.b_matrix / steering_vector(psi, g.expected_positions)[:, None]
    np.testing.assert_allclose(np.abs(c), np.broadcast_to([1.0, 0.5, 2.0, 1.0], (6, 4)))
    phases = np.mod(np.angle(c), 2 * np.pi)
    dist = np.min(np.abs(phases[..., None] - np.array([0, np.pi / 2, np.pi, 2 * np.pi])), axis=-1)
    assert np.all(dist < 1e-12)


def test_schedule_deterministic():
    g = ArrayGeometry.ula(8)
    a = make_ris_schedule(8, 8, 0.0, (0.0, np.pi), g, 42)
    b = make_ris_schedule(8, 8, 0.0, (0.0, np.pi), g, 42)
    np.testing.assert_array_equal(a.b_matrix, b.b_matrix)


def _triple_loop(geom, targets, sched):
    # scalar oracle of r_m = sum_n sum_k B[n,m] e^{j2pi d_n sin psi} e^{j2pi (dbar_n + d_n) sin th_k} s_k
    n, m = sched.b_matrix.shape
    r = np.zeros(m, complex)
    for mi in range(m):
        for ni in range(n):
            dn = geom.perturbations[ni]
            for th, s in zip(targets.angles, targets.signals):
                r[mi] += (sched.b_matrix[ni, mi] * np.exp(2j * np.pi * dn * np.sin(sched.psi))
                          * np.exp(2j * np.pi * geom.expected_positions[ni] * np.sin(th))
                          * np.exp(2j * np.pi * dn * np.sin(th)) * s)
    return r


@pytest.mark.parametrize("seed", range(6))
def test_synthesize_matches_triple_loop(seed):
    rng = np.random.default_rng(seed)
    n, m, k = rng.integers(1, 9, size=3)
    geom, targets, sched, _ = make_scene(n, m, tuple(np.linspace(-40, 40, k) + rng.uniform(-2, 2)),
                                         psi=rng.uniform(-0.5, 0.5), seed=seed)
    r = noiseless_response(geom, targets, sched)
    ref = _triple_loop(geom, targets, sched)
    assert np.linalg.norm(r - ref) <= 1e-10 * np.linalg.norm(ref)


def test_noiseless_snapshot_matches_model():
    geom, targets, sched, _ = make_scene(6, 5)
    snap = synthesize(geom, targets, sched, 0.0, 1)
    np.testing.assert_array_equal(snap.received, noiseless_response(geom, targets, sched))
    assert snap.true_scene[0] is geom


def test_noise_variance_statistics():
    rng = np.random.default_rng(0)
    w = complex_noise(rng, 200_000, 2.5)
    assert abs(np.mean(np.abs(w) ** 2) - 2.5) < 0.03
    assert abs(np.mean(w.real ** 2) - np.mean(w.imag ** 2)) < 0.03


def test_snr_convention():
    geom, targets, sched, _ = make_scene(8, 8)
    p = np.mean(np.abs(noiseless_response(geom, targets, sched)) ** 2)
    assert snr_to_noise_variance(20.0, geom, targets, sched) == pytest.approx(p / 100.0)
    assert snr_to_noise_variance(np.inf, geom, targets, sched) == 0.0
    zero = TargetSet(targets.angles, np.zeros(targets.n_targets))
    with pytest.raises(InvalidInputError):
        snr_to_noise_variance(10.0, geom, zero, sched)


def test_response_matrix_uses_hypothesised_perturbations():
    geom, targets, sched, _ = make_scene(6, 6)
    base = response_matrix(sched, geom, targets.angles)
    alt = response_matrix(sched, geom, targets.angles, np.zeros(6))
    nominal = response_matrix(sched, geom.with_perturbations(np.zeros(6)), targets.angles)
    np.testing.assert_allclose(alt, nominal)
    assert not np.allclose(base, alt)


@given(st.integers(1, 40), st.floats(1e-3, 0.2))
@settings(max_examples=30)
def test_uniform_perturbations_in_half_open_interval(n, bound):
    d = uniform_perturbations(np.random.default_rng(n), n, bound)
    assert np.all(d > -bound) and np.all(d <= bound)


def test_snapshot_validation():
    with pytest.raises(InvalidInputError):
        Snapshot(np.array([1.0, np.nan]), 0.1)
    with pytest.raises(InvalidInputError):
        Snapshot(np.ones(3), -1.0)
