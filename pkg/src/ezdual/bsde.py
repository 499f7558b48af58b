"""Value process ``Y`` of the optimal strategy and its Markovian PDE.

In a scalar-state Markov model the value process is ``Y_t = u(t, X_t)`` where
``u`` solves the semilinear equation

    u_t + a^2/2 u_xx + (b + a q) u_x + a^2 M u_x^2 / 2 + h
        + theta delta^psi / psi exp(-psi u / theta) - delta theta = 0,   u(T) = 0,

and ``Z = a u_x``.  With constant coefficients this collapses to an ODE that
becomes linear after the substitution ``v = exp(psi Y / theta)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from .errors import ModelError, RegimeError, SolverError
from .market import (
    ConstantModel,
    DerivedCoefficients,
    MarketModel,
    NodeCoefficients,
    check_model,
    derive_coefficients,
)
from .preferences import EZPreference

FIXED_POINT_TOL = 1e-10
FIXED_POINT_MAX_ITER = 50


@dataclass(frozen=True, eq=False)
class ValueSurface:
    """Tabulated ``Y(t_i, x_j)`` with spatial derivative ``Yx``.

    Attributes
    ----------
    t, x : ndarray
        Time nodes of shape ``(K+1,)`` and state nodes of shape ``(m,)``.
    Y, Yx : ndarray
        Arrays of shape ``(K+1, m)``.
    a : ndarray
        Diffusion coefficient of the state on ``x``; ``Z = Yx * a``.
    meta : dict
        Scheme name, step sizes, iteration counts and the clamp flag.
    """

    t: np.ndarray
    x: np.ndarray
    Y: np.ndarray
    Yx: np.ndarray
    a: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def Z(self):
        return self.Yx * self.a[None, :]

    @property
    def T(self):
        return float(self.t[-1])

    def sample(self, values, t, x):
        """Bilinear interpolation of a ``(K+1, m, ...)`` table at time ``t`` and states ``x``.

        States outside the grid are clamped to the end nodes.
        """
        return interp_table(self.t, self.x, values, t, x)

    def value_at(self, t, x):
        return float(self.sample(self.Y, t, np.array([x]))[0])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "Y", "Yx"])
            for i, ti in enumerate(self.t):
                for j, xj in enumerate(self.x):
                    w.writerow([f"{ti:.17g}", f"{xj:.17g}", f"{self.Y[i, j]:.17g}", f"{self.Yx[i, j]:.17g}"])


def interp_table(t_grid, x_grid, values, t, x):
    """Interpolate ``values[i, j, ...]`` linearly in ``t`` (scalar) and ``x`` (array)."""
    x = np.atleast_1d(np.asarray(x, float))
    i = int(np.clip(np.searchsorted(t_grid, t, side="right") - 1, 0, t_grid.size - 1))
    if i == t_grid.size - 1 or np.isclose(t, t_grid[i], rtol=0, atol=1e-14):
        rows, wts = (values[i],), (1.0,)
    else:
        w1 = (t - t_grid[i]) / (t_grid[i + 1] - t_grid[i])
        rows, wts = (values[i], values[i + 1]), (1 - w1, w1)
    out = 0.0
    for row, wt in zip(rows, wts):
        out = out + wt * _interp_x(x_grid, row, x)
    return out


def _interp_x(xg, row, x):
    if xg.size == 1:
        return np.broadcast_to(row[0], x.shape + row.shape[1:]).copy()
    xc = np.clip(x, xg[0], xg[-1])
    k = np.clip(np.searchsorted(xg, xc) - 1, 0, xg.size - 2)
    w = (xc - xg[k]) / (xg[k + 1] - xg[k])
    w = w.reshape(w.shape + (1,) * (row.ndim - 1))
    return (1 - w) * row[k] + w * row[k + 1]


def central_gradient(u, x):
    """Central differences in the interior, one-sided at the two ends."""
    if x.size == 1:
        return np.zeros_like(u)
    g = np.empty_like(u)
    g[..., 1:-1] = (u[..., 2:] - u[..., :-2]) / (x[2:] - x[:-2])
    g[..., 0] = (u[..., 1] - u[..., 0]) / (x[1] - x[0])
    g[..., -1] = (u[..., -1] - u[..., -2]) / (x[-1] - x[-2])
    return g


# ---------------------------------------------------------------------------
# Hamiltonian


def clamp_bound(p: EZPreference, h_max, h_min, T):
    """Truncation level ``y_clamp`` of the exponential term and its side.

    Returns ``(y_clamp, side)`` with ``side = 'upper'`` for ``theta < 0`` (y is
    capped from above) and ``'lower'`` for ``0 < theta < 1``.
    """
    d = p.delta * p.theta
    if p.theta < 0:
        return max(h_max - d, 0.0) * T, "upper"
    return min(h_min - d, 0.0) * T, "lower"


def exp_term(p: EZPreference, y, clamp=None):
    """``exp(-psi y / theta)`` with optional clamping; returns ``(value, clamped_mask)``."""
    y = np.asarray(y, float)
    mask = np.zeros(y.shape, bool)
    if clamp is not None:
        level, side = clamp
        mask = y > level if side == "upper" else y < level
        y = np.where(mask, level, y)
    return np.exp(-p.psi * y / p.theta), mask


def hamiltonian(p: EZPreference, node: NodeCoefficients, y, z, clamp=None):
    """Hamiltonian ``H(y, z)`` of the primal problem at one state node.

    Parameters
    ----------
    p : EZPreference
    node : NodeCoefficients
        Coefficients at the node, e.g. ``derive_coefficients(...).at(j)``.
    y, z : float or ndarray
    clamp : tuple, optional
        ``(y_clamp, side)`` from :func:`clamp_bound`.

    Returns
    -------
    float or ndarray
    """
    e, _ = exp_term(p, y, clamp)
    z = np.asarray(z, float)
    out = 0.5 * node.M * z**2 + node.q * z + p.theta * p.delta**p.psi / p.psi * e + node.h - p.delta * p.theta
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# constant coefficients


def constant_closed_form(p: EZPreference, h, tau):
    """Closed-form ``Y`` at time-to-maturity ``tau`` for constant ``h``.

    With ``v = exp(psi Y / theta)`` and ``k = (psi/theta)(h - delta theta)``,
    ``v(tau) = exp(k tau) + delta^psi tau * expm1(k tau) / (k tau)``.
    """
    tau = np.asarray(tau, float)
    k = p.psi / p.theta * (h - p.delta * p.theta)
    kt = k * tau
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(np.abs(kt) > 1e-300, np.expm1(kt) / np.where(kt == 0, 1.0, kt), 1.0)
    v = np.exp(kt) + p.delta**p.psi * tau * ratio
    return p.theta / p.psi * np.log(v)


def solve_constant(p: EZPreference, model: ConstantModel, T, K=200) -> ValueSurface:
    """Exact ``Y(t)`` for a constant-coefficient market on ``K`` uniform steps."""
    if not isinstance(model, ConstantModel):
        raise ModelError("solve_constant requires a constant-coefficient model")
    p.require_dual_regime()
    if T < 0:
        raise ModelError("horizon must be non-negative")
    dc = derive_coefficients(model, p, np.array([model.x0]))
    t = np.linspace(0.0, T, K + 1)
    Y = constant_closed_form(p, float(dc.h[0]), T - t)[:, None]
    Y[-1] = 0.0
    return ValueSurface(
        t, dc.x, Y, np.zeros_like(Y), dc.a,
        {"scheme": "closed_form", "K": K, "dt": T / K if K else 0.0, "h": float(dc.h[0])},
    )


# ---------------------------------------------------------------------------
# semilinear backward solver


def _implicit_operator(x, half_a2, drift):
    """Tridiagonal generator of ``half_a2 u_xx + drift u_x`` (upwinded) as banded rows.

    At the two ends the second-order term is dropped and the drift is kept only
    when it points into the domain.
    """
    m = x.size
    lower, diag, upper = np.zeros(m), np.zeros(m), np.zeros(m)
    if m == 1:
        return lower, diag, upper
    hp = np.diff(x)  # h_+ at j is hp[j], h_- at j is hp[j-1]
    j = np.arange(1, m - 1)
    hm_, hp_ = hp[j - 1], hp[j]
    s = 2 * half_a2[j] / (hm_ + hp_)
    lower[j] += s / hm_
    upper[j] += s / hp_
    diag[j] -= s / hm_ + s / hp_
    up = drift[j] > 0
    upper[j] += np.where(up, drift[j] / hp_, 0.0)
    diag[j] -= np.where(up, drift[j] / hp_, -drift[j] / hm_)
    lower[j] += np.where(up, 0.0, -drift[j] / hm_)
    if drift[0] > 0:
        upper[0] += drift[0] / hp[0]
        diag[0] -= drift[0] / hp[0]
    if drift[-1] < 0:
        lower[-1] += -drift[-1] / hp[-1]
        diag[-1] -= -drift[-1] / hp[-1]
    return lower, diag, upper


def backward_semilinear(x, t, half_a2, drift, explicit, tol=FIXED_POINT_TOL, max_iter=FIXED_POINT_MAX_ITER,
                        stage="pde"):
    """March ``u_t + half_a2 u_xx + drift u_x + explicit(i, u, u_x) = 0`` back from ``u(T) = 0``.

    Each step solves ``(I - dt L) u = u_next + dt explicit(i, u, u_x)`` by
    fixed-point iteration on the explicit part.

    Returns
    -------
    U : ndarray, shape (K+1, m)
    iterations : ndarray, shape (K,)
    """
    m, K = x.size, t.size - 1
    lower, diag, upper = _implicit_operator(x, half_a2, drift)
    U = np.zeros((K + 1, m))
    iters = np.zeros(K, int)
    for i in range(K - 1, -1, -1):
        dt = t[i + 1] - t[i]
        ab = np.zeros((3, m))
        ab[0, 1:] = -dt * upper[:-1]
        ab[1] = 1 - dt * diag
        ab[2, :-1] = -dt * lower[1:]
        u = U[i + 1].copy()
        for k in range(max_iter):
            rhs = U[i + 1] + dt * explicit(i, u, central_gradient(u, x))
            new = solve_banded((1, 1), ab, rhs) if m > 1 else rhs / ab[1]
            if not np.all(np.isfinite(new)):
                raise SolverError("non-finite iterate", stage=stage, node=(i, int(np.argmax(~np.isfinite(new)))))
            diff = np.abs(new - u)
            u = new
            if diff.max() < tol:
                break
        else:
            raise SolverError(
                f"fixed point did not converge in {max_iter} iterations (residual {diff.max():.3g})",
                stage=stage, node=(i, int(np.argmax(diff))),
            )
        U[i] = u
        iters[i] = k + 1
    return U, iters


def solve_pde(p: EZPreference, model: MarketModel, T, K=200, nodes=400, grid=None, override=False,
              tol=FIXED_POINT_TOL, max_iter=FIXED_POINT_MAX_ITER) -> ValueSurface:
    """Implicit-explicit finite-difference solution of the value PDE.

    Parameters
    ----------
    p : EZPreference
    model : MarketModel
    T : float
        Horizon.
    K : int
        Number of uniform time steps.
    nodes : int
        Number of state nodes when ``grid`` is not given.
    grid : array_like, optional
        Increasing state grid.
    override : bool
        Skip the assumption checker of the model family.

    Returns
    -------
    ValueSurface
    """
    p.require_dual_regime()
    if not override:
        rep = check_model(model, p)
        if not rep.accepted:
            raise ModelError(f"model rejected by the {rep.name} checker: {rep.reason or 'conditions fail'}")
    x = model.default_grid(nodes) if grid is None else np.asarray(grid, float)
    if x.ndim != 1 or np.any(np.diff(x) <= 0):
        raise ModelError("state grid must be strictly increasing")
    dc = derive_coefficients(model, p, x)
    t = np.linspace(0.0, T, K + 1)
    clamp = clamp_bound(p, dc.h_max, dc.h_min, T)
    kappa = p.theta * p.delta**p.psi / p.psi
    zero_order = dc.h - p.delta * p.theta
    clamped = [0]

    def explicit(i, u, ux):
        z = dc.a * ux
        e, mask = exp_term(p, u, clamp)
        clamped[0] += int(mask.sum())
        return 0.5 * dc.M * z**2 + dc.q * z + kappa * e + zero_order

    U, iters = backward_semilinear(x, t, 0.5 * dc.a**2, dc.b, explicit, tol, max_iter)
    return ValueSurface(
        t, x, U, central_gradient(U, x), dc.a,
        {
            "scheme": "imex_upwind", "K": K, "nodes": x.size, "dt": T / K if K else 0.0,
            "iterations_max": int(iters.max()) if K else 0, "iterations_total": int(iters.sum()),
            "clamp_level": clamp[0], "clamp_side": clamp[1], "clamped": clamped[0] > 0,
            "h_max": dc.h_max, "h_min": dc.h_min,
        },
    )


def upper_bound(p: EZPreference, h_max, t, T):
    """Upper bound ``(h_max - delta theta)(T - t)`` valid when ``theta < 0``."""
    return (h_max - p.delta * p.theta) * (T - np.asarray(t, float))


# ---------------------------------------------------------------------------
# Monte Carlo bound check


@dataclass(frozen=True)
class BoundReport:
    Y0: float
    lower: float
    lower_se: float
    upper: float
    upper_surface_ok: bool
    lower_ok: bool
    upper_ok: bool

    @property
    def passed(self):
        return self.lower_ok and self.upper_ok and self.upper_surface_ok


def verify_y_bounds(vs: ValueSurface, model: MarketModel, p: EZPreference, mc_paths=10_000, seed=0,
                    K=None, tol=1e-8) -> BoundReport:
    """Check ``Y(0, x0)`` against the two-sided bound of the value process.

    The lower bound is ``E[int h] - delta theta T + theta delta^psi/psi exp(-(psi/theta)(h_max - delta theta)^+ T) T``
    with the expectation under the measure in which the state drift is
    ``b + a q``.  It is estimated by Monte Carlo and checked within three
    standard errors.
    """
    from .paths import h_along, simulate_state

    if p.theta >= 0:
        raise RegimeError("the value bounds are stated for gamma > 1, psi > 1")
    T = vs.T
    K = vs.t.size - 1 if K is None else K
    dc = derive_coefficients(model, p, vs.x)
    h_max = dc.h_max
    bundle = simulate_state(model, mc_paths, K, T, seed, measure="Pbar", p=p)
    hv = h_along(model, p, bundle.X)
    dt = np.diff(bundle.t)
    integral = ((hv[:, 1:] + hv[:, :-1]) * 0.5 * dt).sum(axis=1)
    d = p.delta * p.theta
    corr = p.theta * p.delta**p.psi / p.psi * np.exp(-p.psi / p.theta * max(h_max - d, 0.0) * T) * T
    lower = float(integral.mean()) - d * T + corr
    se = float(integral.std(ddof=1) / np.sqrt(mc_paths)) if mc_paths > 1 else 0.0
    up = (h_max - d) * T
    Y0 = vs.value_at(0.0, model.x0)
    bound_surface = upper_bound(p, h_max, vs.t, T)[:, None]
    return BoundReport(
        Y0=Y0, lower=lower, lower_se=se, upper=up,
        upper_surface_ok=bool(np.all(vs.Y <= bound_surface + tol)),
        lower_ok=bool(lower - 3 * se <= Y0),
        upper_ok=bool(Y0 <= up + tol),
    )
