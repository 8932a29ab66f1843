import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from collapsebounds.core import RB87, Csl, Dcsl, DomainError, Protocol
from collapsebounds.csl import csl_free_step, unitary_harmonic
from collapsebounds.dcsl import (UnboundedVelocityError, boost_mean_step, boost_velocity_bound,
                                 dcsl_free_step, dcsl_harmonic_step, dcsl_rates, exp_convolution,
                                 printed_free_step)
from collapsebounds.pipeline import final_moments

from helpers import rel_dev

M = RB87.mass
START = Protocol().initial

# mpmath references
K_REF, CHI_REF, B_REF = (0.0069922437569484827086, 0.0020444873563310536491,
                         0.0010293914551422597835)
PROTOCOL_REF = [0.000018235000688856859971, 3.5756894275495781779e-30,
                2.6341028385238571536e-55]
FREE_REF = [3.2046011730141564623e-7, 6.1087405474811746886e-32, 6.6559425523530787553e-57]
B_BOOST = 1.0584855638792672277e-20
U_MAX = 2.0994355502383525e13


def test_rates_reference():
    r = dcsl_rates(Dcsl(1e-5, 1e-7, 1e-5), RB87)
    assert r.k == pytest.approx(K_REF, rel=1e-14)
    assert r.chi == pytest.approx(CHI_REF, rel=1e-14)
    assert r.big_b == pytest.approx(B_REF, rel=1e-14)
    assert r.heating == pytest.approx(r.chi * r.p2_as, rel=1e-12)
    assert r.big_b == pytest.approx((1 + r.k) * r.chi / 2, rel=1e-14)


def test_free_step_reference():
    got = dcsl_free_step(START, Dcsl(1e-3, 1e-6, 1e-9), RB87, 1.1).second()
    assert rel_dev(got, FREE_REF).max() < 1e-12


def test_protocol_reference_exact_kick():
    got = final_moments(Protocol(), Dcsl(1e-5, 1e-7, 1e-5), kick_mode="exact").second()
    assert rel_dev(got, PROTOCOL_REF).max() < 1e-11


def test_exp_convolution_closed_forms():
    t = 1.3
    assert exp_convolution([0.7], t) == pytest.approx(math.exp(-0.7 * t))
    assert exp_convolution([0.7, 0.2], t) == pytest.approx(
        (math.exp(-0.2 * t) - math.exp(-0.7 * t)) / 0.5, rel=1e-13)
    assert exp_convolution([0.4, 0.4], t) == pytest.approx(t * math.exp(-0.4 * t), rel=1e-13)
    assert exp_convolution([0.0, 0.0, 0.0], t) == pytest.approx(t**2 / 2, rel=1e-13)
    assert exp_convolution([0.3, 0.0], 0.0) == 0.0


@given(st.floats(1e-12, 1e-3), st.floats(1e-9, 1e-3))
def test_high_temperature_recovers_csl(lam, r_c):
    a = dcsl_free_step(START, Dcsl(lam, r_c, 1e6), RB87, 1.8).second()
    b = csl_free_step(START, Csl(lam, r_c), RB87, 1.8).second()
    assert rel_dev(a, b).max() < 1e-4


def test_p2_relaxes_to_asymptote():
    noise = Dcsl(1e-3, 1e-6, 1e-9)
    r = dcsl_rates(noise, RB87)
    assert r.chi * 100.0 > 100.0
    out = dcsl_free_step(START, noise, RB87, 100.0)
    assert out.p2 == pytest.approx(r.p2_as, rel=1e-12)


def test_printed_free_forms():
    noise = Dcsl(1e-3, 1e-6, 1e-9)
    ours = dcsl_free_step(START, noise, RB87, 1.1)
    printed = printed_free_step(START, noise, RB87, 1.1)
    assert printed.p2 == pytest.approx(ours.p2, rel=1e-12)
    assert printed.x2 == pytest.approx(ours.x2, rel=1e-8)
    assert abs(printed.xp_sym / ours.xp_sym - 1.0) > 1e-2


@settings(max_examples=40, deadline=None)
@given(st.floats(1e-10, 1e-3), st.floats(1e-9, 1e-5), st.floats(1e-12, 1e2),
       st.floats(0.01, 1.0), st.floats(0.01, 1.0))
def test_free_semigroup(lam, r_c, T, t1, t2):
    noise = Dcsl(lam, r_c, T)
    two = dcsl_free_step(dcsl_free_step(START, noise, RB87, t1), noise, RB87, t2).second()
    one = dcsl_free_step(START, noise, RB87, t1 + t2).second()
    assert rel_dev(two, one).max() < 1e-12


@settings(max_examples=40, deadline=None)
@given(st.floats(1e-10, 1e-3), st.floats(1e-9, 1e-5), st.floats(1e-12, 1e2),
       st.floats(1e-3, 0.03), st.floats(1e-3, 0.03))
def test_exact_kick_semigroup(lam, r_c, T, t1, t2):
    noise = Dcsl(lam, r_c, T)
    mid = dcsl_harmonic_step(START, noise, RB87, 6.7, t1, mode="exact")
    two = dcsl_harmonic_step(mid, noise, RB87, 6.7, t2, mode="exact").second()
    one = dcsl_harmonic_step(START, noise, RB87, 6.7, t1 + t2, mode="exact").second()
    assert rel_dev(two, one).max() < 1e-12


def test_kick_modes():
    noise = Dcsl(1e-4, 1e-7, 1e-6)
    exact = dcsl_harmonic_step(START, noise, RB87, 6.7, 0.035, mode="exact").second()
    numeric = dcsl_harmonic_step(START, noise, RB87, 6.7, 0.035, mode="numeric").second()
    qm = dcsl_harmonic_step(START, noise, RB87, 6.7, 0.035, mode="analytic-qm").second()
    assert rel_dev(numeric, exact).max() < 1e-10
    assert np.allclose(qm, unitary_harmonic(START.x2, 0.0, START.p2, M, 6.7, 0.035), rtol=1e-15)
    with pytest.raises(ValueError):
        dcsl_harmonic_step(START, noise, RB87, 6.7, 0.035, mode="other")
    with pytest.raises(DomainError):
        dcsl_harmonic_step(START, noise, RB87, 0.0, 0.035)


def test_boost_means():
    u = (1e-3, 0.0, 0.0)
    noise = Dcsl(1e-3, 1e-6, 1e-9, boost=u)
    B = dcsl_rates(noise, RB87).big_b
    t = 0.7
    out = boost_mean_step(START, noise, RB87, t)
    assert out.p_mean[0] == pytest.approx(M * u[0] * (1 - math.exp(-B * t)), rel=1e-12)
    assert out.x_mean[0] == pytest.approx(u[0] * t - u[0] * (1 - math.exp(-B * t)) / B,
                                          rel=1e-10)
    assert out.second() == pytest.approx(dcsl_free_step(START, noise, RB87, t).second())


def test_boost_bound_reference():
    noise = Dcsl(1e-17, 1e-7, 1.0)
    assert dcsl_rates(noise, RB87).big_b == pytest.approx(B_BOOST, rel=1e-14)
    assert boost_velocity_bound(noise, RB87, 3.0, 1e-6) == pytest.approx(U_MAX, rel=1e-14)


def test_boost_bound_edge_cases():
    with pytest.raises(UnboundedVelocityError):
        boost_velocity_bound(Dcsl(0.0, 1e-7, 1.0), RB87, 3.0, 1e-6)
    with pytest.raises(DomainError):
        boost_velocity_bound(Dcsl(1e-17, 1e-7, 1.0), RB87, 0.0, 1e-6)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        boost_velocity_bound(Dcsl(1e-3, 1e-6, 1e-9), RB87, 3.0, 1e-6)
    assert any(issubclass(w.category, RuntimeWarning) for w in caught)
