"""Least-squares Monte Carlo valuation of recursive utilities and recursive duals.

Both recursions are solved backward on the simulation grid.  At each step the
conditional expectation of the next value is estimated by regression on a
polynomial basis in the state and the log of the controlled process, and the
generator is handled implicitly::

    U_i = E_i[U_{i+1}] + dt f(c_i, U_i)          (primal)
    V_i = E_i[V_{i+1}] + dt g(y D_i, V_i/gamma)  (dual)

In the scaled variable ``w = (1-gamma) U`` (primal) or ``w = (1-gamma) V/gamma``
(dual) each implicit step is ``alpha w + beta w^p = k`` with ``beta p > 0`` in both
supported regimes, so the left side is increasing and the root is unique.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations_with_replacement

import numpy as np

from . import preferences as pf
from .errors import DomainError, SolverError
from .paths import DeflatorPath, PathBundle, WealthPath, discount_kappa
from .preferences import EZPreference

IMPLICIT_TOL = 1e-12
RESIDUAL_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class RecursiveValue:
    """Backward-induction value of a recursion along simulated paths.

    Attributes
    ----------
    values : ndarray, shape (N, K+1)
        Per-path value process (regression fits, not pathwise realizations).
    estimate : float
        Mean over batches of the time-0 value.
    se : float
        Standard error across independent batches.
    batch_estimates : ndarray
    meta : dict
    """

    values: np.ndarray
    estimate: float
    se: float
    batch_estimates: np.ndarray
    meta: dict = field(default_factory=dict)


def batch_slices(N, batches):
    edges = np.linspace(0, N, batches + 1).astype(int)
    return [slice(edges[b], edges[b + 1]) for b in range(batches)]


def _batch_stats(est):
    B = est.size
    se = float(est.std(ddof=1) / np.sqrt(B)) if B > 1 else float("nan")
    return float(est.mean()), se


def poly_basis(features, degree=3):
    """Total-degree polynomial basis in standardized features.

    Columns with (numerically) zero variance are dropped before forming
    products; a constant column is always present.
    """
    cols = []
    for f in features:
        sd = f.std()
        if sd > 1e-12 * (1 + abs(f.mean())):
            cols.append((f - f.mean()) / sd)
    out = [np.ones(features[0].shape[0])]
    for d in range(1, degree + 1):
        for combo in combinations_with_replacement(range(len(cols)), d):
            col = np.ones_like(out[0])
            for k in combo:
                col = col * cols[k]
            out.append(col)
    return np.column_stack(out)


def regress(y, features, degree=3, node=None, stage="lsmc"):
    """Fitted values of the least-squares regression of ``y`` on :func:`poly_basis`."""
    A = poly_basis(features, degree)
    coef, _, rank, sv = np.linalg.lstsq(A, y, rcond=None)
    if rank < A.shape[1] or (sv.size and sv[-1] <= 1e-10 * sv[0]):
        raise SolverError(f"regression basis is rank deficient ({rank} < {A.shape[1]})", stage=stage, node=node)
    return A @ coef


def solve_increasing(alpha, beta, p, k, node=None, stage="lsmc"):
    """Solve ``alpha w + beta w^p = k`` for ``w > 0``, vectorized.

    Requires ``alpha > 0`` and ``beta p >= 0``; a safeguarded Newton iteration
    is run inside a bracket that is maintained by bisection.
    """
    alpha, beta, k = np.broadcast_arrays(*(np.asarray(v, float) for v in (alpha, beta, k)))
    if np.any(beta * p < 0) or np.any(alpha <= 0):
        raise SolverError("implicit step is not monotone", stage=stage, node=node)

    def phi(w):
        return alpha * w + beta * np.exp(p * np.log(w)) - k

    if p > 1 or np.all(beta == 0):
        # phi(0+) = -k, phi(k/alpha) >= 0
        if np.any(k <= 0):
            raise SolverError("sign constraint violated: continuation value of the wrong sign", stage=stage, node=node)
        lo = np.zeros_like(k)
        hi = k / alpha
    else:
        # p < 0, beta < 0: phi(0+) = -inf, phi(+inf) = +inf
        hi = np.maximum(np.abs(k) / alpha, 1e-300) + 1.0
        for _ in range(2000):
            bad = phi(hi) < 0
            if not bad.any():
                break
            hi = np.where(bad, hi * 2, hi)
        lo = hi.copy()
        for _ in range(2000):
            bad = phi(lo) > 0
            if not bad.any():
                break
            lo = np.where(bad, lo / 2, lo)
    w = 0.5 * (lo + hi)
    scale = 1 + np.abs(k)
    for _ in range(200):
        f = phi(w)
        done = np.abs(f) <= IMPLICIT_TOL * scale
        if done.all():
            break
        lo = np.where(f < 0, w, lo)
        hi = np.where(f > 0, w, hi)
        dphi = alpha + beta * p * np.exp((p - 1) * np.log(w))
        step = w - f / dphi
        inside = (step > lo) & (step < hi) & np.isfinite(step)
        w = np.where(done, w, np.where(inside, step, 0.5 * (lo + hi)))
    else:
        raise SolverError("implicit step did not converge", stage=stage, node=node)
    return w


def _backward(terminal, features, step, batches, degree, cond_exp, stage):
    # values carry a trailing column axis so several right-hand sides share one regression
    N, K1 = features[0].shape
    K = K1 - 1
    V = np.empty((N, K1) + terminal.shape[1:])
    V[:, K] = terminal
    slices = batch_slices(N, batches)
    C = np.empty_like(terminal)
    for i in range(K - 1, -1, -1):
        for b, sl in enumerate(slices):
            if cond_exp is not None:
                C[sl] = cond_exp(i, V[sl, i + 1], sl)
            else:
                C[sl] = regress(V[sl, i + 1], [f[sl, i] for f in features], degree, node=(i, b), stage=stage)
        V[:, i] = step(i, C)
    est = np.array([V[sl, 0].mean(axis=0) for sl in slices])
    return V, est


def evaluate_sdu(bundle: PathBundle, wealth: WealthPath, p: EZPreference, batches=20, degree=3,
                 cond_exp=None, generator=True) -> RecursiveValue:
    """Epstein-Zin utility of the consumption stream carried by ``wealth``.

    Parameters
    ----------
    bundle : PathBundle
    wealth : WealthPath
        Supplies consumption ``c_i`` and the bequest ``W_T``.
    p : EZPreference
    batches : int
        Independent path batches; each runs its own regressions.
    degree : int
        Total degree of the polynomial basis in ``(X, log W)``.
    cond_exp : callable, optional
        ``cond_exp(i, next_values, batch_slice)`` replacing the regression.
    generator : bool
        With ``False`` the recursion has zero generator (pure conditional
        expectation), used to test the regression layer alone.
    """
    p.require_dual_regime()
    c = wealth.consumption
    if not np.all(c[:, :-1] > 0):
        raise DomainError("consumption must be strictly positive")
    dt = bundle.dt
    g, th, d = p.gamma, p.theta, p.delta
    cq = np.exp((1 - 1 / p.psi) * np.log(c))
    expo = 1 - 1 / th
    max_res = [0.0]

    def step(i, C):
        if not generator:
            return C
        alpha = 1 + dt[i] * d * th
        beta = -dt[i] * d * th * cq[:, i]
        w = solve_increasing(alpha, beta, expo, (1 - g) * C, node=i, stage="primal")
        U = w / (1 - g)
        res = np.abs(U - C - dt[i] * pf.aggregator_f(p, c[:, i], U)) / (1 + np.abs(U))
        max_res[0] = max(max_res[0], float(res.max()))
        return U

    V, est = _backward(pf.bequest_U(p, wealth.bequest), [bundle.X, wealth.log_wealth], step, batches, degree,
                       cond_exp, "primal")
    if max_res[0] > RESIDUAL_TOL:
        raise SolverError(f"implicit residual {max_res[0]:.3g} above tolerance", stage="primal")
    mean, se = _batch_stats(est)
    return RecursiveValue(V, mean, se, est, {"implicit_residual": max_res[0], "batches": batches, "degree": degree})


def evaluate_sdd(bundle: PathBundle, deflator: DeflatorPath, y, p: EZPreference, batches=20, degree=3,
                 cond_exp=None):
    """Recursive dual value ``V^{yD}`` of the deflator ``D`` scaled by ``y > 0``.

    ``y`` may be an array; the scales then share every regression design and a
    list of :class:`RecursiveValue` is returned, one per scale.
    """
    p.require_dual_regime()
    ys = np.atleast_1d(np.asarray(y, float))
    if ys.ndim != 1 or not np.all(ys > 0):
        raise DomainError("dual scale y must be positive")
    yD = deflator.deflator[:, :, None] * ys[None, None, :]
    dt = bundle.dt
    g, s, th, d = p.gamma, p.psi, p.theta, p.delta
    d1s = np.exp((1 - s) * np.log(yD))
    expo = 1 - g * s / th
    max_res = [0.0]

    def step(i, C):
        alpha = 1 + dt[i] * d * th / g
        beta = -dt[i] * th / (g * s) * d**s * d1s[:, i]
        w = solve_increasing(alpha, beta, expo, (1 - g) * C / g, node=i, stage="dual")
        V = g * w / (1 - g)
        res = np.abs(V - C - dt[i] * pf.dual_g(p, yD[:, i], V / g)) / (1 + np.abs(V))
        max_res[0] = max(max_res[0], float(res.max()))
        return V

    V, est = _backward(pf.conjugate_V(p, yD[:, -1]), [bundle.X, deflator.log_deflator], step, batches, degree,
                       cond_exp, "dual")
    if max_res[0] > RESIDUAL_TOL:
        raise SolverError(f"implicit residual {max_res[0]:.3g} above tolerance", stage="dual")
    meta = {"implicit_residual": max_res[0], "batches": batches, "degree": degree}
    out = []
    for k in range(ys.size):
        mean, se = _batch_stats(est[:, k])
        out.append(RecursiveValue(V[:, :, k], mean, se, est[:, k], dict(meta, y=float(ys[k]))))
    return out[0] if np.ndim(y) == 0 else out


@dataclass(frozen=True, eq=False)
class VariationalValue:
    """Discounted-felicity value for a fixed discount-rate process.

    ``batch_estimates`` use the same batch split as :class:`RecursiveValue`
    so that paired differences give a common-random-numbers standard error.
    """

    per_path: np.ndarray
    estimate: float
    se: float
    batch_estimates: np.ndarray


def _nu_array(nu, shape, p):
    nu = np.broadcast_to(np.asarray(nu, float), shape)
    if not np.all(nu > p.delta * p.theta):
        raise DomainError("discount rate must exceed delta*theta")
    return nu


def _variational(per_path, batches):
    est = np.array([per_path[sl].mean() for sl in batch_slices(per_path.size, batches)])
    se = float(per_path.std(ddof=1) / np.sqrt(per_path.size)) if per_path.size > 1 else float("nan")
    return VariationalValue(per_path, float(per_path.mean()), se, est)


def evaluate_variational(bundle: PathBundle, wealth: WealthPath, nu, p: EZPreference, batches=20) -> VariationalValue:
    """``E[kappa_T U_T(c_T) + int kappa_s F(c_s, nu_s) ds]`` with left-point time sums.

    ``nu`` is a scalar, a ``(K+1,)`` schedule or an ``(N, K+1)`` array.
    """
    N, K1 = wealth.wealth.shape
    nu = _nu_array(nu, (N, K1), p)
    kappa = discount_kappa(nu, bundle.t)
    c = wealth.consumption
    run = (kappa[:, :-1] * pf.felicity_F(p, c[:, :-1], nu[:, :-1]) * bundle.dt).sum(axis=1)
    per = kappa[:, -1] * pf.bequest_U(p, wealth.bequest) + run
    return _variational(per, batches)


def evaluate_dual_variational(bundle: PathBundle, deflator: DeflatorPath, y, nu, p: EZPreference,
                              batches=20) -> VariationalValue:
    """``E[kappa_T^{1/gamma} V_T(y D_T) + int kappa_s^{1/gamma} G(y D_s, nu_s) ds]``."""
    N, K1 = deflator.deflator.shape
    nu = _nu_array(nu, (N, K1), p)
    kg = discount_kappa(nu, bundle.t) ** (1 / p.gamma)
    yD = y * deflator.deflator
    run = (kg[:, :-1] * pf.dual_G(p, yD[:, :-1], nu[:, :-1]) * bundle.dt).sum(axis=1)
    per = kg[:, -1] * pf.conjugate_V(p, yD[:, -1]) + run
    return _variational(per, batches)
