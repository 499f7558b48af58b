import numpy as np
import pytest
from conftest import heston_params, ko_params
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from ezdual.errors import ModelError
from ezdual.market import (
    ConstantModel,
    HestonModel,
    KimOmbergModel,
    check_heston,
    check_kim_omberg,
    check_model,
    check_regime_duality,
    complete_correlation,
    derive_coefficients,
    lyapunov_diagnostic,
)
from ezdual.preferences import EZPreference


def test_completion_examples():
    assert complete_correlation([0.5])[0, 0] == pytest.approx(np.sqrt(0.75), abs=1e-15)
    assert complete_correlation([1.0])[0, 0] == 0.0
    rho = np.array([0.3, 0.4])
    rp = complete_correlation(rho)
    np.testing.assert_allclose(rp, rp.T, atol=1e-15)
    np.testing.assert_allclose(rp @ rp, np.eye(2) - np.outer(rho, rho), atol=1e-15)
    assert np.all(np.linalg.eigvalsh(rp) >= -1e-15)
    with pytest.raises(ModelError):
        complete_correlation([0.8, 0.7])


@settings(max_examples=1000, deadline=None)
@given(hnp.arrays(float, st.integers(1, 4), elements=st.floats(-1, 1)), st.floats(0.0, 1.0))
def test_completion_identity(v, scale):
    norm = np.linalg.norm(v)
    rho = v / norm * scale if norm > 0 else v
    rp = complete_correlation(rho)
    np.testing.assert_allclose(np.outer(rho, rho) + rp @ rp.T, np.eye(rho.size), atol=1e-12)


def test_constant_coefficients(p2, const_model):
    dc = derive_coefficients(const_model, p2, np.array([0.0]))
    assert dc.h[0] == pytest.approx(-0.035625, abs=1e-15)
    assert dc.rho_perp[0, 0, 0] == pytest.approx(np.sqrt(0.75))
    m0 = ConstantModel(0.02, [0.0], [[0.2]], [0.5])
    assert derive_coefficients(m0, p2, np.array([0.0])).h[0] == (1 - 2) * 0.02


def test_singular_sigma_names_node(p2):
    m = ConstantModel(0.02, [0.05, 0.01], [[0.2, 0.0], [0.2, 0.0]], [0.5, 0.0])
    with pytest.raises(ModelError, match="node 0"):
        derive_coefficients(m, p2, np.array([0.0]))


def test_heston_h_affine(p2, heston_model):
    x = heston_model.default_grid()
    dc = derive_coefficients(heston_model, p2, x)
    g = 2.0
    expected = (1 - g) * 0.02 + ((1 - g) * 0.0 + (1 - g) / (2 * g) * 0.25) * x
    np.testing.assert_allclose(dc.h, expected, rtol=1e-13, atol=1e-15)
    assert dc.h_max == dc.h.max()


def test_ko_h_quadratic(p2, ko_model):
    x = ko_model.default_grid()
    dc = derive_coefficients(ko_model, p2, x)
    g = 2.0
    expected = (1 - g) * 0.02 + (1 - g) / (2 * g) * (0.25 + x) ** 2
    np.testing.assert_allclose(dc.h, expected, rtol=1e-13, atol=1e-15)


def test_inverse_heston_sigma(p2):
    m = HestonModel(heston_params(sigma_form="inverse_sqrt"), 0.09)
    x = np.array([0.04, 0.09])
    np.testing.assert_allclose(m.sigma(x)[:, 0, 0], 1 / np.sqrt(x))
    np.testing.assert_allclose(m.mu(x)[:, 0], 0.5 * np.ones(2))


@settings(max_examples=100, deadline=None)
@given(st.floats(1.1, 8.0), st.floats(0.1, 0.9), hnp.arrays(float, 3, elements=st.floats(-3, 3)))
def test_m_sandwich(g, rscale, z):
    p = EZPreference(0.05, g, 2.0)
    rho = np.array([0.3, -0.5]) * rscale
    m = ConstantModel(0.02, [0.05, 0.03], [[0.2, 0.05], [0.0, 0.3]], rho)
    dc = derive_coefficients(m, p, np.array([0.0]))
    for zi in z:
        q = zi * dc.M[0] * zi
        assert zi**2 / g - 1e-12 <= q <= zi**2 + 1e-12


def test_regime_report():
    assert check_regime_duality(EZPreference(0.05, 0.5, 4)).label.startswith("regime (i)")
    assert check_regime_duality(EZPreference(0.05, 2, 2)).label.startswith("regime (ii)")
    rep = check_regime_duality(EZPreference(0.05, 2, 0.5))
    assert rep.label == "CRRA: duality theorems inapplicable" and not rep.applicable


def test_heston_reasons(p2):
    rep = check_heston(heston_params(lam=[0.0]), p2)
    assert not rep.accepted and rep.reason == "neither r1>0 nor lam'Theta lam>0"
    # b*l == a^2/2 exactly: strict inequality fails
    rep = check_heston(heston_params(b=0.5, ell=0.09, a=0.3), p2)
    assert not rep.conditions[0].holds and not rep.accepted
    rep = check_heston(heston_params(), EZPreference(0.05, 0.5, 4))
    assert not rep.applicable and not rep.accepted


def test_checkers_are_pure(p2):
    a = check_kim_omberg(ko_params(), p2).table()
    assert a == check_kim_omberg(ko_params(), p2).table()


def test_check_model_dispatch(p2, const_model, heston_model, ko_model):
    assert check_model(const_model, p2).accepted
    assert check_model(heston_model, p2).name == "heston"
    assert check_model(ko_model, p2).name == "kim_omberg"


def test_lyapunov(p2, heston_model, const_model):
    good = lyapunov_diagnostic(heston_model, p2, 0.01, 0.01)
    assert good.inv_x_coefficient < 0 and good.bounded_above and np.isfinite(good.sup)
    bad = lyapunov_diagnostic(heston_model, p2, 5.0, 0.01)
    assert bad.inv_x_coefficient > 0 and not bad.bounded_above
    flat = lyapunov_diagnostic(const_model, p2, 0.5, 0.5)
    np.testing.assert_allclose(flat.values, flat.values[0], rtol=0, atol=1e-15)
    assert flat.bounded_above
    with pytest.raises(ModelError):
        lyapunov_diagnostic(KimOmbergModel(ko_params()), p2, 0.1, 0.1)
