import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gibbsmix import targets as T

# log of int exp(-(t^2/2 + log cosh t)) dt, mpmath at 40 digits
LOGZ_LOGCOSH_1D = 0.6195404611792522


def test_gaussian_constants():
    g = T.make_gaussian(np.eye(2))
    assert (g.mu, g.lipschitz, g.kappa) == (1.0, 1.0, 1.0)
    x = np.array([0.3, -1.2])
    assert g.f_eval(x) == pytest.approx(0.5 * x @ x)
    d = T.make_gaussian(np.diag([1.0, 4.0]))
    assert d.kappa == pytest.approx(4.0)
    c = T.make_gaussian([[2.0, 1.0], [1.0, 2.0]])
    assert (c.mu, c.lipschitz) == (pytest.approx(1.0), pytest.approx(3.0))


def test_gaussian_log_normalizer():
    P = np.array([[2.0, 0.5], [0.5, 1.0]])
    g = T.make_gaussian(P)
    expected = math.log(2 * math.pi) - 0.5 * math.log(np.linalg.det(P))
    assert g.log_normalizer == pytest.approx(expected, rel=1e-14)
    assert T.numerical_log_normalizer(g) == pytest.approx(expected, rel=1e-10)


def test_invalid_precision_rejected():
    with pytest.raises(ValueError, match="eigenvalue"):
        T.make_gaussian([[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(ValueError):
        T.make_gaussian([[1.0, 0.1], [0.0, 1.0]])


def test_separable_matches_gaussian():
    s = T.make_separable([T.quadratic_piece()] * 3)
    g = T.make_gaussian(np.eye(3))
    x = np.random.default_rng(0).standard_normal((1000, 3)) * 3
    assert np.max(np.abs(s.f_eval(x) - g.f_eval(x))) <= 1e-12
    assert np.max(np.abs(s.grad_eval(x) - g.grad_eval(x))) <= 1e-12
    assert s.log_normalizer == pytest.approx(g.log_normalizer, rel=1e-12)


def test_separable_rejects_unbounded_curvature():
    quartic = T.Piece(lambda t: t ** 4 / 12 + t ** 2 / 2, lambda t: t ** 3 / 3 + t, 1.0, None)
    with pytest.raises(ValueError, match="curvature bound"):
        T.make_separable([T.quadratic_piece(), quartic])


def test_logcosh_target():
    s = T.make_separable([T.logcosh_piece()] * 2)
    assert s.kappa == pytest.approx(2.0)
    np.testing.assert_allclose(s.mode, 0.0, atol=1e-14)
    assert s.log_normalizer == pytest.approx(2 * LOGZ_LOGCOSH_1D, rel=1e-10)
    t = np.linspace(-20, 20, 100001)
    curv = 1 + 1 / np.cosh(t) ** 2
    assert curv.min() >= 1 and curv.max() <= 2


def test_find_mode_recovers_known_mean():
    P = np.array([[2.0, 1.0], [1.0, 2.0]])
    g = T.make_gaussian(P, mean=[1.0, -1.0])
    np.testing.assert_allclose(T.find_mode(g), [1.0, -1.0], atol=1e-9)
    s = T.make_separable([T.logcosh_piece()] * 3)
    np.testing.assert_allclose(T.find_mode(s, x0=[1.0, -2.0, 0.5]), 0.0, atol=1e-9)


def test_find_mode_failure_reports_best():
    g = T.make_gaussian(np.diag([1.0, 100.0]))
    with pytest.raises(T.ModeNotFoundError) as info:
        T.find_mode(g, x0=[50.0, 50.0], max_iter=3)
    assert info.value.grad_norm > 0


def test_perturbed_gaussian_mode_and_constants():
    P = np.array([[2.0, 1.0], [1.0, 2.0]])
    t = T.make_perturbed_gaussian(P, mean=[1.0, -1.0], weight=1.0)
    assert t.mu == pytest.approx(1.0)
    assert t.lipschitz == pytest.approx(4.0)
    assert np.linalg.norm(t.grad_eval(t.mode)) <= 1e-9


def test_convexity_report_examples():
    r = T.check_convexity_smoothness(T.make_gaussian(np.eye(3)))
    assert r.ok and r.min_ratio == pytest.approx(1.0) and r.max_ratio == pytest.approx(1.0)
    r = T.check_convexity_smoothness(T.make_gaussian(np.diag([1.0, 4.0])))
    assert r.ok and 1.0 - 1e-8 <= r.min_ratio and r.max_ratio <= 4.0 + 1e-8
    bad = T.make_target(lambda x: 2.0 * np.sum(np.asarray(x) ** 2, axis=-1),
                        lambda x: 4.0 * np.asarray(x), mu=1.0, lipschitz=1.0, dim=2,
                        mode=np.zeros(2))
    r = T.check_convexity_smoothness(bad)
    assert not r.ratios_ok and r.max_ratio == pytest.approx(4.0)


def test_two_point_spectrum():
    t = T.make_two_point_gaussian(6, mu=0.5, kappa=8.0, rotation_seed=3)
    ev = np.linalg.eigvalsh(t.precision)
    np.testing.assert_allclose(ev, [0.5] * 3 + [4.0] * 3, rtol=1e-12)
    again = T.make_two_point_gaussian(6, mu=0.5, kappa=8.0, rotation_seed=3)
    assert np.array_equal(t.precision, again.precision)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 6), st.floats(1.0, 50.0), st.integers(0, 2 ** 32 - 1))
def test_constructed_targets_pass_convexity_checks(n, kappa, seed):
    t = T.make_two_point_gaussian(n, kappa=kappa, rotation_seed=seed)
    r = T.check_convexity_smoothness(t, n_pairs=1000, rng_seed=seed % 1000)
    assert r.ok, r


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 4), st.floats(0.1, 3.0), st.integers(0, 1000))
def test_logcosh_targets_pass_checks(n, w, seed):
    t = T.make_separable([T.logcosh_piece(w)] * n)
    assert T.check_convexity_smoothness(t, rng_seed=seed).ok
