import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ezdual import preferences as pf
from ezdual.errors import DomainError, RegimeError
from ezdual.preferences import EZPreference, Regime, UtilitySign

P = EZPreference(0.1, 2.0, 2.0)  # theta = -2


def test_theta_and_regimes():
    assert P.theta == (1 - 2.0) / (1 - 1 / 2.0) == -2.0
    assert EZPreference(0.05, 0.5, 4).regime() is Regime.GAMMA_LT1
    assert EZPreference(0.05, 0.5, 4).theta == pytest.approx(2 / 3, abs=1e-15)
    assert EZPreference(0.05, 2, 2).regime() is Regime.BOTH_GT1
    assert EZPreference(0.05, 2, 0.5).regime() is Regime.CRRA
    assert EZPreference(0.05, 2, 0.5).theta == 1.0
    assert EZPreference(0.05, 0.5, 1.5).regime() is Regime.UNSUPPORTED
    assert EZPreference(0.05, 2, 0.8).regime() is Regime.UNSUPPORTED


@pytest.mark.parametrize("kw", [dict(delta=0, gamma=2, psi=2), dict(delta=0.1, gamma=1, psi=2),
                                dict(delta=0.1, gamma=2, psi=1), dict(delta=0.1, gamma=-1, psi=2)])
def test_invalid_parameters(kw):
    with pytest.raises(DomainError):
        EZPreference(**kw)


def test_require_dual_regime():
    with pytest.raises(RegimeError):
        EZPreference(0.05, 2, 0.5).require_dual_regime()
    assert EZPreference(0.05, 2, 3).require_dual_regime() is Regime.BOTH_GT1


def test_utility_sign():
    assert UtilitySign.of(P).sign == -1
    assert UtilitySign.of(P).admits([-1.0, -2.0])
    assert not UtilitySign.of(P).admits([1.0])
    assert UtilitySign.of(EZPreference(0.1, 0.5, 4)).admits(3.0)


def test_closed_form_examples():
    assert pf.aggregator_f(P, 1.0, -1.0) == pytest.approx(0.0, abs=1e-15)
    assert pf.aggregator_fu(P, 1.0, -1.0) == pytest.approx(0.1, rel=1e-14)
    assert pf.felicity_F(P, 1.0, 0.1) == pytest.approx(-0.1, rel=1e-13)
    assert pf.bequest_U(P, 1.0) == -1.0
    assert pf.conjugate_V(P, 1.0) == -2.0
    assert pf.dual_G(P, 1.0, 0.1) == pytest.approx(10 * -2 * 0.1**1.5, rel=1e-13)
    assert pf.dual_g(P, 1.0, -1.0) == pytest.approx(-0.19, rel=1e-13)
    # independent high-precision evaluation (mpmath, 30 digits)
    assert pf.aggregator_f(EZPreference(0.05, 0.5, 4), 2.0, 1.0) == pytest.approx(0.125227615333696142, rel=1e-14)
    assert pf.conjugate_V(EZPreference(0.1, 0.5, 4), 4.0) == pytest.approx(0.25, rel=1e-15)


def test_crra_limits():
    p = EZPreference(0.07, 2.0, 0.5)
    u = -1.0  # (1 - gamma) u = 1
    assert pf.aggregator_f(p, 1.0, u) == pytest.approx(p.delta / (1 - 1 / p.psi) - p.delta * u)
    assert pf.aggregator_fu(p, 1.7, -0.3) == pytest.approx(p.delta)
    with pytest.raises(DomainError):
        pf.felicity_F(p, 1.0, 0.5)


@pytest.mark.parametrize("fn,args", [
    (pf.aggregator_f, (0.0, -1.0)), (pf.aggregator_f, (1.0, 1.0)), (pf.felicity_F, (1.0, -0.25)),
    (pf.felicity_F, (1.0, -0.2)), (pf.bequest_U, (-1.0,)), (pf.conjugate_V, (0.0,)), (pf.dual_G, (1.0, -0.3)),
    (pf.dual_g, (1.0, 0.5)), (pf.dual_gv, (-1.0, -0.5)),
])
def test_domain_errors(fn, args):
    # delta*theta = -0.2 is the boundary of the discount-rate domain
    with pytest.raises(DomainError):
        fn(P, *args)


def test_felicity_vanishes_at_domain_boundary():
    # F ~ (nu - delta*theta)^(1 - theta) as nu decreases to delta*theta
    vals = np.array([pf.felicity_F(P, 1.0, P.delta * P.theta + eps) for eps in (1e-2, 1e-3)])
    assert vals[0] / vals[1] == pytest.approx(10.0 ** (1 - P.theta), rel=1e-12)


def test_vectorized():
    c = np.array([0.5, 1.0, 2.0])
    out = pf.aggregator_f(P, c, -np.ones(3))
    assert out.shape == (3,)
    assert out[1] == pytest.approx(pf.aggregator_f(P, 1.0, -1.0))


pref_st = st.one_of(
    st.builds(EZPreference, st.floats(0.01, 0.2), st.floats(1.2, 6.0), st.floats(1.2, 6.0)),
    st.builds(lambda d, g, k: EZPreference(d, g, k / g), st.floats(0.01, 0.2), st.floats(0.2, 0.9), st.floats(1.2, 4.0)),
)


@settings(max_examples=200, deadline=None)
@given(pref_st, st.floats(0.2, 5.0), st.floats(0.2, 5.0))
def test_derivatives_match_finite_differences(p, c, w):
    u = p.sign * w
    h = 1e-6 * w
    fd = (pf.aggregator_f(p, c, u + h) - pf.aggregator_f(p, c, u - h)) / (2 * h)
    assert -pf.aggregator_fu(p, c, u) == pytest.approx(fd, rel=1e-5, abs=1e-8)
    hc = 1e-6 * c
    fdc = (pf.aggregator_f(p, c + hc, u) - pf.aggregator_f(p, c - hc, u)) / (2 * hc)
    assert pf.aggregator_fc(p, c, u) == pytest.approx(fdc, rel=1e-5, abs=1e-8)
    fdg = (pf.dual_g(p, c, u + h) - pf.dual_g(p, c, u - h)) / (2 * h)
    assert -pf.dual_gv(p, c, u) == pytest.approx(fdg, rel=1e-5, abs=1e-8)


@settings(max_examples=200, deadline=None)
@given(pref_st, st.floats(0.2, 5.0), st.floats(0.2, 5.0))
def test_second_differences(p, c, w):
    u = p.sign * w
    hc, hu = 1e-3 * c, 1e-3 * w
    d2c = pf.aggregator_f(p, c + hc, u) - 2 * pf.aggregator_f(p, c, u) + pf.aggregator_f(p, c - hc, u)
    d2u = pf.aggregator_f(p, c, u + hu) - 2 * pf.aggregator_f(p, c, u) + pf.aggregator_f(p, c, u - hu)
    assert d2c <= 1e-12
    assert d2u >= -1e-12  # convex in u when gamma*psi > 1


@settings(max_examples=200, deadline=None)
@given(pref_st, st.floats(0.2, 5.0), st.floats(1e-3, 2.0), st.floats(0.1, 10.0))
def test_homogeneity(p, c, eps, lam):
    nu = p.delta * p.theta + eps
    assert pf.felicity_F(p, lam * c, nu) == pytest.approx(lam ** (1 - p.gamma) * pf.felicity_F(p, c, nu), rel=1e-12)
    g = p.gamma
    assert pf.dual_G(p, 2 * c, nu) == pytest.approx(2 ** ((g - 1) / g) * pf.dual_G(p, c, nu), rel=1e-12)


@settings(max_examples=100, deadline=None)
@given(pref_st, st.floats(0.2, 5.0), st.floats(1e-3, 1.0))
def test_G_concave_in_nu(p, d, eps):
    nu = p.delta * p.theta + eps
    h = 1e-2 * eps
    d2 = pf.dual_G(p, d, nu + h) - 2 * pf.dual_G(p, d, nu) + pf.dual_G(p, d, nu - h)
    assert d2 <= 1e-12 * (1 + abs(pf.dual_G(p, d, nu)))


@settings(max_examples=100, deadline=None)
@given(pref_st, st.floats(0.2, 5.0), st.floats(0.2, 5.0))
def test_gv_in_discount_domain(p, d, w):
    assert pf.dual_gv(p, d, p.sign * w) >= p.delta * p.theta
