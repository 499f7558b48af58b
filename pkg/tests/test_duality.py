import numpy as np
import pytest

from ezdual import bsde, duality, paths, valuation
from ezdual.errors import SolverError
from ezdual.market import ConstantModel
from ezdual.preferences import EZPreference

P2 = EZPreference(0.05, 2.0, 2.0)
MODEL = ConstantModel(0.02, [0.05], [[0.2]], [0.5])


def _policy(model=MODEL, p=P2, K=50, w0=1.0, nodes=101):
    vs = duality.solve_value(model, p, 1.0, K, nodes)
    return vs, duality.extract_policy(vs, model, p, w0)


def test_constant_candidate():
    vs, pol = _policy()
    np.testing.assert_allclose(pol.pi, 0.625, rtol=1e-14)
    np.testing.assert_allclose(pol.cbar[-1], P2.delta**P2.psi, rtol=1e-14)
    # xi* = -gamma pi sigma rho; eta* = -gamma pi sigma rho_perp
    np.testing.assert_allclose(pol.xi, -2 * 0.625 * 0.2 * 0.5, rtol=1e-14)
    np.testing.assert_allclose(pol.eta[..., 0], -2 * 0.625 * 0.2 * np.sqrt(0.75), rtol=1e-14)
    assert pol.y_star == pytest.approx(np.exp(vs.value_at(0.0, 0.0)), rel=1e-15)
    assert pol.constraint_residual <= 1e-10


def test_zero_premium_means_no_risky_position():
    m = ConstantModel(0.02, [0.0], [[0.2]], [0.5])
    _, pol = _policy(m)
    assert np.all(pol.pi == 0.0)


def test_lagrange_multiplier_scaling():
    _, a = _policy(w0=1.0)
    _, b = _policy(w0=2.0)
    assert b.y_star == pytest.approx(2.0 ** (-P2.gamma) * a.y_star, rel=1e-14)
    np.testing.assert_array_equal(a.pi, b.pi)


@pytest.mark.parametrize("name", ["const_model", "heston_model", "ko_model"])
def test_feedback_at_optimum_reproduces_value(name, request):
    model = request.getfixturevalue(name)
    vs, pol = _pde_policy(model, P2)
    fb = duality.evaluate_feedback(model, P2, pol)
    assert np.abs(fb.Y - vs.Y).max() <= 1e-8


def _pde_policy(model, p):
    # finite-difference value on the grid used by the feedback solver, so both share the time discretization
    grid = [model.x0] if isinstance(model, ConstantModel) else None
    vs = bsde.solve_pde(p, model, 1.0, K=50, nodes=101, grid=grid, override=True)
    return vs, duality.extract_policy(vs, model, p)


def _excess(model, p, factors):
    vs, pol = _pde_policy(model, p)
    y0 = vs.value_at(0.0, model.x0)
    return [duality.evaluate_feedback(model, p, pol.scaled(f)).value_at(0.0, model.x0) - y0 for f in factors]


def test_suboptimal_dominance_gamma_gt1(heston_model):
    # 1-gamma < 0: a worse policy has lower utility, hence larger y
    ex = _excess(heston_model, P2, [0.0, 0.75, 1.0, 1.25, 2.0])
    assert abs(ex[2]) <= 1e-8
    assert all(e >= 1e-6 for i, e in enumerate(ex) if i != 2)


def test_suboptimal_dominance_regime_i(p_half, const_model):
    ex = _excess(const_model, p_half, [0.0, 0.75, 1.0, 1.25, 2.0])
    assert abs(ex[2]) <= 1e-8
    assert all(e <= -1e-6 for i, e in enumerate(ex) if i != 2)


def test_feedback_rejects_bad_policy():
    _, pol = _policy()
    bad = duality.FeedbackPolicy(pol.t, pol.x, pol.pi * np.nan, pol.cbar)
    with pytest.raises(SolverError, match="feedback"):
        duality.evaluate_feedback(MODEL, P2, bad)


@pytest.fixture(scope="module")
def simulated():
    vs, pol = _policy(K=50)
    b = paths.simulate_state(MODEL, 4000, 50, 1.0, 3)
    return vs, pol, b, paths.simulate_wealth(b, MODEL, pol, 1.0), paths.simulate_deflator(b, MODEL, pol.loadings)


def test_perturbed_deflator_raises_dual(simulated):
    _, pol, b, _, d = simulated
    base = valuation.evaluate_sdd(b, d, pol.y_star, P2)
    for eps in (-0.5, 0.5):
        dp = paths.simulate_deflator(b, MODEL, duality.perturbed_loadings(pol, MODEL, eps))
        alt = valuation.evaluate_sdd(b, dp, pol.y_star, P2)
        diff = alt.batch_estimates - base.batch_estimates
        assert diff.mean() > 3 * diff.std(ddof=1) / np.sqrt(diff.size)


def test_pathwise_diagnostics(simulated):
    _, pol, b, w, d = simulated
    assert duality.gradient_residual(pol, MODEL, P2, b, w, d) <= 5 * (1 / 50)
    ident = duality.pathwise_identities(MODEL, P2, pol, b, w, d)
    assert max(ident.wey, ident.dey, ident.ratio) <= 1e-3
    QT = duality.q_process(pol, MODEL, P2, b)[:, -1]
    assert abs(QT.mean() - 1) <= 3 * QT.std(ddof=1) / np.sqrt(QT.size)


def test_gradient_residual_halves():
    res = []
    for K in (50, 100):
        vs, pol = _policy(K=K)
        b = paths.simulate_state(MODEL, 500, K, 1.0, 0)
        w = paths.simulate_wealth(b, MODEL, pol, 1.0)
        d = paths.simulate_deflator(b, MODEL, pol.loadings)
        res.append(duality.gradient_residual(pol, MODEL, P2, b, w, d))
    assert 1.5 <= res[0] / res[1] <= 3.0


def test_verify_small_run():
    stages = []
    rep = duality.verify_duality(MODEL, P2, N=400, K=20, batches=10, lagrange_points=5, stages=stages)
    assert set(rep.flags) >= {"gap_within_3se", "martingale_within_3se", "lagrange_min_at_y_star"}
    assert rep.combined_se == pytest.approx(np.hypot(rep.primal_se, rep.dual_se))
    text = rep.to_text()
    assert text.splitlines()[0].startswith("primal = ") and "flag_gap_within_3se" in text
    assert [s for s, _ in stages][:3] == ["preconditions", "solve", "policy"]


def test_verify_wraps_stage_errors():
    bad = EZPreference(0.05, 2.0, 0.5)
    with pytest.raises(SolverError, match=r"\[preconditions\]"):
        duality.verify_duality(MODEL, bad, N=40, K=5, batches=2, lagrange_points=0)
