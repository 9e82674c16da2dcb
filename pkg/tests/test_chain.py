import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gibbsmix import chain as Ch
from gibbsmix import targets as T


def test_run_zero_steps():
    g = T.make_gaussian(np.eye(3))
    tr = Ch.run(g, [1.0, 2.0, 3.0], 0, Ch.ChainConfig(seed=4))
    assert tr.states.shape == (1, 3) and np.array_equal(tr.final, [1.0, 2.0, 3.0])


def test_same_seed_identical_and_step_matches_run():
    g = T.make_gaussian([[2.0, 0.5, 0.0], [0.5, 1.0, 0.2], [0.0, 0.2, 3.0]])
    cfg = Ch.ChainConfig(seed=11, lazy=True)
    a = Ch.run(g, np.ones(3), 200, cfg)
    b = Ch.run(g, np.ones(3), 200, cfg)
    assert np.array_equal(a.states, b.states) and np.array_equal(a.coordinates, b.coordinates)
    streams = Ch.replica_streams(11, 0)
    x = np.ones(3)
    for t in range(200):
        x, c = Ch.step(g, x, cfg, streams, t)
        assert c == a.coordinates[t]
    assert np.array_equal(x, a.final)


def test_replica_one_equals_run():
    g = T.make_perturbed_gaussian([[2.0, 0.5], [0.5, 1.0]], weight=0.5)
    cfg = Ch.ChainConfig(seed=5)
    ens = Ch.run_ensemble(g, Ch.point_start([0.5, 0.5]), 3, 50, 5, cfg)
    single = Ch.run(g, [0.5, 0.5], 50, cfg)
    assert np.array_equal(ens[0].states, single.states)
    assert not np.array_equal(ens[0].states, ens[1].states)


def test_states_differ_in_at_most_one_coordinate_and_lazy_noop():
    g = T.make_two_point_gaussian(5, kappa=4.0)
    tr = Ch.run(g, np.zeros(5), 500, Ch.ChainConfig(seed=2, lazy=True))
    diff = np.count_nonzero(np.diff(tr.states, axis=0), axis=1)
    assert diff.max() <= 1
    lazy = tr.coordinates == Ch.LAZY
    assert np.all(diff[lazy] == 0)


def test_lazy_fraction():
    g = T.make_gaussian(np.eye(2))
    tr = Ch.run(g, np.zeros(2), 100000, Ch.ChainConfig(seed=9, lazy=True))
    frac = np.mean(tr.coordinates == Ch.LAZY)
    assert abs(frac - 0.5) <= 3 * math.sqrt(0.25 / 1e5)


def test_systematic_scan_order():
    g = T.make_gaussian(np.eye(4))
    tr = Ch.run(g, np.zeros(4), 12, Ch.ChainConfig(scan="systematic_cyclic"))
    assert list(tr.coordinates) == [0, 1, 2, 3] * 3


def test_random_scan_uniform_coordinates():
    g = T.make_gaussian(np.eye(4))
    tr = Ch.run(g, np.zeros(4), 40000, Ch.ChainConfig(seed=1))
    counts = np.bincount(tr.coordinates, minlength=4)
    assert np.all(np.abs(counts / 40000 - 0.25) < 0.01)


def test_coupon_collector_ensemble_mean():
    g = T.make_gaussian(np.eye(5))
    T_steps = int(round(8 * 5 * math.log(5)))
    ens = Ch.run_ensemble(g, Ch.point_start(np.zeros(5)), 1000, T_steps, 21)
    finals = np.array([t.final for t in ens])
    assert np.all(np.abs(finals.mean(axis=0)) <= 3 / math.sqrt(1000))


def test_thinning_and_csv_roundtrip(tmp_path):
    g = T.make_gaussian(np.eye(20))
    tr = Ch.run(g, np.zeros(20), 45, Ch.ChainConfig(seed=3))
    assert list(tr.steps) == [0, 20, 40, 45]
    g2 = T.make_gaussian(np.eye(2))
    tr2 = Ch.run(g2, np.zeros(2), 30, Ch.ChainConfig(seed=3, lazy=True))
    p = tmp_path / "traj.csv"
    Ch.write_trajectory_csv(tr2, p)
    meta, steps, states, coords = Ch.read_trajectory_csv(p)
    assert meta["seed"] == 3 and meta["rng"] == Ch.RNG_ALGORITHM
    assert np.array_equal(states, tr2.states) and np.array_equal(steps, tr2.steps)
    assert coords[0] == "" and ("lazy" in coords)


def test_law_step_examples():
    P = np.array([[2.0, 1.0], [1.0, 2.0]])
    law = Ch.gaussian_law_step(P, np.zeros(2), Ch.GaussianLaw.point([1.0, 1.0]), 0)
    np.testing.assert_allclose(law.mean, [-0.5, 1.0])
    np.testing.assert_allclose(law.cov, [[0.5, 0.0], [0.0, 0.0]], atol=1e-15)
    tgt = Ch.GaussianLaw(np.zeros(2), np.linalg.inv(P))
    same = Ch.gaussian_law_step(P, np.zeros(2), tgt, 1)
    np.testing.assert_allclose(same.cov, tgt.cov, atol=1e-14)
    I3 = np.eye(3)
    law = Ch.gaussian_law_step(I3, np.zeros(3), Ch.GaussianLaw([1.0, 2.0, 3.0], np.full((3, 3), 0.3) + I3), 1)
    assert law.mean[1] == 0.0 and law.cov[1, 1] == 1.0 and law.cov[0, 1] == 0.0


def test_kl_examples():
    assert Ch.kl_to_target(Ch.GaussianLaw([0.0], [[2.0]]), [[1.0]], [0.0]) == pytest.approx(
        0.15342640972002734, rel=1e-13)
    P = np.array([[2.0, 1.0], [1.0, 2.0]])
    assert Ch.kl_to_target(Ch.GaussianLaw(np.zeros(2), np.linalg.inv(P)), P, np.zeros(2)) == pytest.approx(0, abs=1e-14)
    with pytest.raises(ValueError, match="full sweep"):
        Ch.kl_to_target(Ch.GaussianLaw.point([1.0, 1.0]), P, np.zeros(2))


@settings(max_examples=25, deadline=None)
@given(st.floats(-0.95, 0.95), st.floats(-3, 3), st.floats(-3, 3), st.floats(0.05, 3.0))
def test_kl_nonincreasing_under_sweeps(rho, a, b, c):
    P = np.linalg.inv(np.array([[1.0, rho], [rho, 1.0]]))
    law = Ch.GaussianLaw([a, b], c * np.eye(2))
    kl = Ch.kl_to_target(law, P, np.zeros(2))
    for _ in range(20):
        law = Ch.sweep_law(P, np.zeros(2), law)
        new = Ch.kl_to_target(law, P, np.zeros(2))
        assert new <= kl + 1e-12
        kl = new


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 63), st.integers(1, 6), st.booleans())
def test_batch_size_never_changes_results(seed, replicas, lazy):
    g = T.make_two_point_gaussian(3, kappa=3.0)
    cfg = Ch.ChainConfig(seed=seed % 2 ** 64, lazy=lazy)
    ens = Ch.run_ensemble(g, Ch.point_start(np.ones(3)), replicas, 70, cfg.seed, cfg)
    last = Ch.run_ensemble(g, Ch.point_start(np.ones(3)), 1, 70, cfg.seed, cfg)
    assert np.array_equal(ens[0].states, last[0].states)


def test_simulate_until_cover_reports_times():
    g = T.make_gaussian(np.eye(3))
    X, when = Ch.simulate_until(g, Ch.point_start(np.full(3, 10.0)), 200, 7)
    assert np.all(when >= 3)
    assert np.all(X != 10.0)
