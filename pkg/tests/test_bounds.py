import math
import warnings

import pytest
from hypothesis import given, settings, strategies as st

from gibbsmix import bounds as B

# reference values computed with mpmath at 40 significant digits
R_EPS_001_N100 = 2.926491451938839
NU_2 = 0.18042493522836218
NU_10 = 0.054292111684218774
DELTA_1_1_2 = 0.011271055006945027  # eps = 0.2, max-term 1
ALPHA_1_1_4 = 0.09016844005556021   # eps = 0.1, max-term 1
BIG_PSI_1_2 = 1.7204964048071775e-4  # eps = 0.2, max-term 1
PHI_1_2 = 2.1506205060089718e-6
LS_2_005_01_100 = 1.3115408729814564
PSI_C_2 = 0.4901290717342736
PSI_C_4 = 0.34657359027997264
TAU_PHI001_M2_G01 = 73777.58908227873


def test_radius_examples():
    assert B.radius_r(math.exp(-3), 3) == pytest.approx(4.0, abs=1e-14)
    assert B.radius_r(0.01, 100) == pytest.approx(R_EPS_001_N100, abs=1e-13)
    assert 2.0 < B.radius_r(0.4999, 10 ** 6) < 2.1


def test_nu_examples():
    assert B.nu(2) == pytest.approx(NU_2, abs=1e-15)
    assert B.nu(10) == pytest.approx(NU_10, abs=1e-15)
    assert B.nu(2) <= math.log(6 / 5)


def test_nu_monotone_on_sample():
    ns = list(range(2, 2000)) + [10 ** k for k in range(4, 7)]
    vals = [B.nu(n) for n in ns]
    assert all(b < a for a, b in zip(vals, vals[1:]))


def test_delta_alpha_examples():
    assert B.delta(1, 1, 2, 0.2) == pytest.approx(DELTA_1_1_2, rel=1e-13)
    assert B.alpha(1, 1, 4, 0.1) == pytest.approx(ALPHA_1_1_4, rel=1e-13)
    assert B.delta(4, 4, 7, 0.1) == pytest.approx(B.delta(1, 1, 7, 0.1) / 4, rel=1e-13)


def test_delta_sigma_form_agrees_at_n2():
    # log log 2 < 0 but n^sigma = log n still holds
    assert B.delta_sigma_form(1, 1, 2, 0.01) == pytest.approx(B.delta(1, 1, 2, 0.01), rel=1e-13)


def test_alpha_constraint_boundary_warns():
    n = 5
    L = 1.0 / (n * math.log(n) ** 2)
    with pytest.warns(B.ConstraintWarning):
        B.alpha(1.0, L, n, 0.01, mu=L)


def test_psi_examples():
    assert B.psi_c(1) == pytest.approx(math.log(2), rel=1e-15)
    assert B.psi_c(2) == pytest.approx(PSI_C_2, rel=1e-15)
    assert B.psi_c(4) == pytest.approx(PSI_C_4, rel=1e-15)
    assert B.psi_pi(16, 1.0) == pytest.approx(0.5, rel=1e-15)
    assert B.psi_pi(16, 4.0) == pytest.approx(2 * B.psi_pi(16, 1.0), rel=1e-15)
    # the exponent vanishes slowly while n^exponent still grows
    assert B.chen_exponent(1e300) < B.chen_exponent(1e12) < B.chen_exponent(1e3)
    assert B.psi_pi(10 ** 12, 1.0, "chen") < B.psi_pi(10 ** 3, 1.0, "chen")


def test_big_psi_examples():
    assert B.big_psi(1, 2, 0.2) == pytest.approx(BIG_PSI_1_2, rel=1e-13)
    assert B.phi_s_lower(B.big_psi(1, 2, 0.2), 2) == pytest.approx(PHI_1_2, rel=1e-13)
    assert B.phi_s_lower(0.4, 10) == pytest.approx(0.001, rel=1e-15)
    assert B.big_psi(2, 9, 0.01) == pytest.approx(B.big_psi(4, 9, 0.01) * 2, rel=1e-14)


def test_big_psi_structural_identity():
    for n in (2, 3, 10, 100):
        for eps in (0.3, 0.01, 1e-6):
            parts = B.big_psi_from_parts(B.psi_c(n), B.psi_pi(n, 1.0), B.delta(1, 1, n, eps), n)
            assert parts == pytest.approx(B.big_psi(1, n, eps), rel=1e-12)


def test_ls_tv_bound():
    assert B.ls_tv_bound(2, 0.05, 0.1, 100) == pytest.approx(LS_2_005_01_100, abs=1e-13)
    assert B.ls_tv_bound(3, 0.1, 0.2, 0) == pytest.approx(3 * 0.1 + 3)


def test_pipeline_identity_and_known_value():
    mt = B.mixing_time_bound(4, 10, 4, 0.1)
    assert mt.tau == (2.0 / mt.phi_s ** 2) * math.log(2 * 4 / 0.1)
    assert (2.0 / 0.01 ** 2) * math.log(2 * 2 / 0.1) == pytest.approx(TAU_PHI001_M2_G01, rel=1e-14)
    # s = gamma / (2M) and eps = s / 11
    assert mt.s == pytest.approx(0.1 / 8)
    assert mt.epsilon == pytest.approx(0.1 / 88)


def test_log_form_matches_float():
    for var in ("lee_vempala", "chen"):
        for n in (3, 10, 50):
            mt = B.mixing_time_bound(2, n, 8, 0.2, var)
            assert B.log_mixing_time_bound(2, n, 8, 0.2, var) == pytest.approx(math.log(mt.tau),
                                                                             rel=1e-12)


def test_domain_errors():
    with pytest.raises(ValueError):
        B.mixing_time_bound(1, 5, 2, 0.6)
    with pytest.raises(ValueError):
        B.mixing_time_bound(1, 5, 0.5, 0.1)
    with pytest.raises(ValueError):
        B.mixing_time_bound(0.5, 5, 2, 0.1)
    with pytest.raises(ValueError):
        B.mixing_time_bound(1, 2, 2, 0.1, "chen")
    with pytest.raises(ValueError):
        B.mixing_time_bound(2, 5, 2, 0.1, "isotropic")
    with pytest.raises(ValueError):
        B.radius_r(0.5, 3)


def test_bound_report_rows_and_constants():
    rep = B.bound_report(10, 4, 4, 0.1)
    d = dict(rep.rows())
    assert d["tau_bound"] == rep.tau_bound
    assert d["const.big_psi_constant"] == pytest.approx(math.log(2) / 864)
    assert "tau_bound" in rep.as_text()


@settings(max_examples=200, deadline=None)
@given(st.floats(1.0, 1e4), st.floats(1e-3, 1e3), st.integers(2, 10 ** 6), st.floats(1e-12, 0.49))
def test_alpha_delta_ratio_is_16(kappa, mu, n, eps):
    L = kappa * mu
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", B.ConstraintWarning)
        a = B.alpha(kappa, L, n, eps, mu=mu)
    assert a / (math.sqrt(n) * B.delta(kappa, L, n, eps)) == pytest.approx(16.0, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 10 ** 7))
def test_nu_below_cap(n):
    assert 0 < B.nu(n) <= math.log(6 / 5)


@settings(max_examples=200, deadline=None)
@given(st.floats(1.0, 100.0), st.integers(2, 10 ** 4), st.floats(1e-9, 0.4), st.floats(0.5, 0.999))
def test_big_psi_monotone_in_eps(kappa, n, eps, shrink):
    assert B.big_psi(kappa, n, eps * shrink) <= B.big_psi(kappa, n, eps)


@settings(max_examples=100, deadline=None)
@given(st.floats(1.0, 1e3), st.integers(3, 200), st.floats(1.0, 1e6), st.floats(1e-4, 0.49))
def test_bounds_positive_and_displayed_ratio(kappa, n, M, gamma):
    mt = B.mixing_time_bound(kappa, n, M, gamma)
    assert mt.tau > 0 and mt.displayed > 0 and mt.phi_s > 0
    # pipeline / displayed = 3200 / C^2 * (m_eps / m')^2 with C = log 2 / 864
    lg = math.log(2 * M / gamma)
    m_eps = max(1.0, math.sqrt(math.log(1 / mt.epsilon) / n))
    m_disp = max(1.0, math.sqrt(lg / n))
    expected = 3200.0 / (math.log(2) / 864) ** 2 * (m_eps / m_disp) ** 2
    assert mt.ratio == pytest.approx(expected, rel=1e-10)


def test_chen_smaller_only_for_astronomical_n():
    # chen < lee_vempala iff 2 c' sqrt(log log n / log n) < 0.5, here at log n ~ 67.4
    for ln in (50.0, 60.0, 67.0):
        n = math.exp(ln)
        assert 2 * B.chen_exponent(n) >= 0.5
        assert B.log_mixing_time_bound(1, n, 2, 0.1, "chen") >= B.log_mixing_time_bound(1, n, 2, 0.1)
    for ln in (68.0, 100.0, 700.0):
        n = math.exp(ln)
        assert 2 * B.chen_exponent(n) < 0.5
        assert B.log_mixing_time_bound(1, n, 2, 0.1, "chen") < B.log_mixing_time_bound(1, n, 2, 0.1)
