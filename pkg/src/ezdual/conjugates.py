"""Brute-force Fenchel-Legendre transforms used as oracles for the closed forms.

Every transform here only evaluates the function being conjugated; none of
them knows the analytic maximizer.  The search runs over a log-spaced grid in
``x - offset`` followed by golden-section refinement around the best node,
vectorized across a batch of independent problems.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import preferences as pf
from .errors import RegimeError

NU_SPAN = (1e-8, 1e3)
C_SPAN = (1e-12, 1e12)
U_SPAN = (1e-30, 1e30)

_INVPHI = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass
class SupResult:
    value: np.ndarray
    argmax: np.ndarray
    at_boundary: np.ndarray


def log_sup(objective, offset, span, n_grid=400, iters=80):
    """Maximize ``objective(x)`` over ``x = offset + exp(s)`` with ``exp(s)`` in ``span``.

    ``objective`` maps an array of shape ``(m, k)`` to values of the same
    shape, row ``i`` belonging to problem ``i``; ``offset`` broadcasts to
    ``(m, 1)``.  The objective must be unimodal in ``x`` (true for the
    concave problems below).
    """
    offset = np.atleast_1d(np.asarray(offset, dtype=float))[:, None]
    m = offset.shape[0]
    s = np.linspace(np.log(span[0]), np.log(span[1]), n_grid)
    grid = np.broadcast_to(s, (m, n_grid))
    vals = objective(offset + np.exp(grid))
    vals = np.where(np.isfinite(vals), vals, -np.inf)
    k = np.argmax(vals, axis=1)
    at_boundary = (k == 0) | (k == n_grid - 1)
    lo = s[np.clip(k - 1, 0, n_grid - 1)]
    hi = s[np.clip(k + 1, 0, n_grid - 1)]

    def f(z):
        return objective(offset + np.exp(z[:, None]))[:, 0]

    a, b = lo.copy(), hi.copy()
    x1 = b - _INVPHI * (b - a)
    x2 = a + _INVPHI * (b - a)
    f1, f2 = f(x1), f(x2)
    for _ in range(iters):
        left = f1 > f2
        # keep [a, x2] where f1 > f2, else [x1, b]
        b = np.where(left, x2, b)
        a = np.where(left, a, x1)
        new_x1 = b - _INVPHI * (b - a)
        new_x2 = a + _INVPHI * (b - a)
        x1_next = np.where(left, new_x1, x2)
        x2_next = np.where(left, x1, new_x2)
        f1_next = np.where(left, f(new_x1), f2)
        f2_next = np.where(left, f1, f(new_x2))
        x1, x2, f1, f2 = x1_next, x2_next, f1_next, f2_next
    z = 0.5 * (a + b)
    best = f(z)
    grid_best = vals[np.arange(m), k]
    value = np.maximum(best, grid_best)
    arg = np.where(best >= grid_best, offset[:, 0] + np.exp(z), offset[:, 0] + np.exp(s[k]))
    return SupResult(value, arg, at_boundary)


def _nu_offset(p, m):
    return np.full(m, p.delta * p.theta)


def sup_nu_F(p, c, u, span=NU_SPAN):
    """``sup_nu F(c, nu) - nu u``; should reproduce ``f(c, u)``."""
    c = np.atleast_1d(np.asarray(c, float))
    u = np.atleast_1d(np.asarray(u, float))
    return log_sup(lambda nu: pf.felicity_F(p, c[:, None], nu) - nu * u[:, None], _nu_offset(p, c.size), span)


def inf_u_f(p, c, nu, span=U_SPAN):
    """``inf_u f(c, u) + nu u`` over the admissible sign of u; should reproduce ``F(c, nu)``."""
    c = np.atleast_1d(np.asarray(c, float))
    nu = np.atleast_1d(np.asarray(nu, float))
    sgn = p.sign

    def neg(w):
        u = sgn * w
        return -(pf.aggregator_f(p, c[:, None], u) + nu[:, None] * u)

    res = log_sup(neg, np.zeros(c.size), span)
    return SupResult(-res.value, sgn * res.argmax, res.at_boundary)


def sup_c_U(p, d, span=C_SPAN):
    """``sup_c U_T(c) - d c``; should reproduce ``V_T(d)``."""
    d = np.atleast_1d(np.asarray(d, float))
    return log_sup(lambda c: pf.bequest_U(p, c) - d[:, None] * c, np.zeros(d.size), span)


def sup_c_F(p, d, nu, span=C_SPAN):
    """``sup_c F(c, nu) - d c``; should reproduce ``G(d, nu)``."""
    d = np.atleast_1d(np.asarray(d, float))
    nu = np.atleast_1d(np.asarray(nu, float))
    return log_sup(lambda c: pf.felicity_F(p, c, nu[:, None]) - d[:, None] * c, np.zeros(d.size), span)


def sup_nu_G(p, d, v, span=NU_SPAN):
    """``sup_nu G(d, nu) - nu v``; should reproduce ``g(d, v)``."""
    d = np.atleast_1d(np.asarray(d, float))
    v = np.atleast_1d(np.asarray(v, float))
    return log_sup(lambda nu: pf.dual_G(p, d[:, None], nu) - nu * v[:, None], _nu_offset(p, d.size), span)


def sample_tuples(p, n, rng, lo=0.5, hi=2.0, nu_span=(1e-3, 1.0)):
    """Random valid ``(c, u, d, v, nu)`` tuples for the conjugacy suites."""

    def logu(a, b):
        return np.exp(rng.uniform(np.log(a), np.log(b), n))

    return {
        "c": logu(lo, hi),
        "u": p.sign * logu(lo, hi),
        "d": logu(lo, hi),
        "v": p.sign * logu(lo, hi),
        "nu": p.delta * p.theta + logu(*nu_span),
    }


def _rel(exact, approx):
    return np.abs(exact - approx) / (1 + np.abs(exact))


def fenchel_chain_residuals(p, n=1000, seed=0):
    """Maximum relative residual of each link of the transform chain on ``n`` random tuples.

    Returns a dict mapping link name to ``(max_residual, any_at_boundary)``.
    """
    if p.regime() not in (pf.Regime.GAMMA_LT1, pf.Regime.BOTH_GT1):
        raise RegimeError(
            f"the transform chain requires gamma*psi > 1 (got {p.gamma * p.psi:.6g}); "
            "f is not convex in u otherwise"
        )
    rng = np.random.default_rng(seed)
    t = sample_tuples(p, n, rng)
    out = {}
    r = sup_nu_F(p, t["c"], t["u"])
    out["f=sup(F-nu u)"] = (_rel(pf.aggregator_f(p, t["c"], t["u"]), r.value).max(), bool(r.at_boundary.any()))
    r = inf_u_f(p, t["c"], t["nu"])
    out["F=inf(f+nu u)"] = (_rel(pf.felicity_F(p, t["c"], t["nu"]), r.value).max(), bool(r.at_boundary.any()))
    r = sup_c_U(p, t["d"])
    out["V=sup(U-dc)"] = (_rel(pf.conjugate_V(p, t["d"]), r.value).max(), bool(r.at_boundary.any()))
    r = sup_c_F(p, t["d"], t["nu"])
    out["G=sup(F-dc)"] = (_rel(pf.dual_G(p, t["d"], t["nu"]), r.value).max(), bool(r.at_boundary.any()))
    r = sup_nu_G(p, t["d"], t["v"])
    out["g=sup(G-nu v)"] = (_rel(pf.dual_g(p, t["d"], t["v"]), r.value).max(), bool(r.at_boundary.any()))
    return out
