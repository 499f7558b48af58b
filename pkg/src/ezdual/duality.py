"""Candidate optimizers, feedback-policy evaluation and end-to-end duality checks.

From a solved value surface ``(Y, Z)`` the candidate optimal strategy is

    pi* = Sigma^-1 (mu + sigma rho Z) / gamma,    cbar* = delta^psi exp(-psi Y / theta),

with deflator loadings ``xi* = -gamma pi*' sigma rho + Z``,
``eta* = -gamma pi*' sigma rho_perp`` and Lagrange multiplier
``y* = w^-gamma exp(Y_0)``.  :func:`verify_duality` simulates both sides with
common random numbers and compares the primal utility with the dual value
plus ``w y*``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import preferences as pf
from .bsde import ValueSurface, backward_semilinear, central_gradient, interp_table, solve_constant, solve_pde
from .errors import EZDualError, ModelError, SolverError
from .market import ConstantModel, MarketModel, complete_correlation_rows, derive_coefficients
from .paths import (
    PathBundle,
    simulate_deflator,
    simulate_state,
    simulate_wealth,
)
from .preferences import EZPreference
from .valuation import batch_slices, evaluate_sdd, evaluate_sdu

CONSTRAINT_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class FeedbackPolicy:
    """Investment fractions ``pi (K+1, m, n)`` and consumption rates ``cbar (K+1, m)`` on a grid."""

    t: np.ndarray
    x: np.ndarray
    pi: np.ndarray
    cbar: np.ndarray

    def investment(self, t, x):
        return interp_table(self.t, self.x, self.pi, t, x), interp_table(self.t, self.x, self.cbar, t, x)

    @classmethod
    def constant(cls, t, x, pi, cbar):
        pi = np.atleast_1d(np.asarray(pi, float))
        shape = (np.size(t), np.size(x))
        return cls(np.asarray(t, float), np.atleast_1d(np.asarray(x, float)),
                   np.broadcast_to(pi, shape + pi.shape).copy(), np.full(shape, float(cbar)))


@dataclass(frozen=True, eq=False)
class OptimalPolicy(FeedbackPolicy):
    xi: np.ndarray = None
    eta: np.ndarray = None
    Y: np.ndarray = None
    Z: np.ndarray = None
    y_star: float = float("nan")
    w0: float = 1.0
    constraint_residual: float = 0.0

    def loadings(self, t, x):
        return interp_table(self.t, self.x, self.xi, t, x), interp_table(self.t, self.x, self.eta, t, x)

    def state_values(self, t, x):
        """``(Y, Z, pi)`` interpolated at time ``t`` and states ``x``."""
        return (interp_table(self.t, self.x, self.Y, t, x), interp_table(self.t, self.x, self.Z, t, x),
                interp_table(self.t, self.x, self.pi, t, x))

    def scaled(self, factor):
        """Feedback policy with investment ``factor * pi*`` and the same consumption rate."""
        return FeedbackPolicy(self.t, self.x, factor * self.pi, self.cbar)


def extract_policy(vs: ValueSurface, model: MarketModel, p: EZPreference, w0=1.0) -> OptimalPolicy:
    """Tabulate the candidate optimizers on the grid of ``vs``."""
    if not w0 > 0:
        raise ModelError("initial wealth must be positive")
    dc = derive_coefficients(model, p, vs.x)
    g = p.gamma
    Z = vs.Z
    # (K+1, m, n): mu + sigma rho Z
    srho = np.einsum("mij,mj->mi", dc.sigma, dc.rho)
    srp = np.einsum("mij,mjk->mik", dc.sigma, dc.rho_perp)
    excess = dc.mu[None] + srho[None] * Z[..., None]
    pi = np.einsum("mij,tmj->tmi", dc.Sigma_inv, excess) / g
    cbar = p.delta**p.psi * np.exp(-p.psi * vs.Y / p.theta)
    xi = -g * np.einsum("tmi,mi->tm", pi, srho) + Z
    eta = -g * np.einsum("tmi,mik->tmk", pi, srp)
    resid = dc.mu[None] + srho[None] * xi[..., None] + np.einsum("mik,tmk->tmi", srp, eta)
    scale = 1 + np.abs(dc.mu).max()
    res = float(np.abs(resid).max()) / scale
    if res > CONSTRAINT_TOL:
        raise SolverError(f"deflator constraint residual {res:.3g} above tolerance", stage="policy")
    y_star = w0 ** (-g) * np.exp(vs.value_at(0.0, model.x0))
    return OptimalPolicy(vs.t, vs.x, pi, cbar, xi=xi, eta=eta, Y=vs.Y, Z=Z, y_star=float(y_star), w0=float(w0),
                         constraint_residual=res)


def evaluate_feedback(model: MarketModel, p: EZPreference, policy: FeedbackPolicy, tol=1e-10,
                      max_iter=50) -> ValueSurface:
    """Solve the value PDE with the Hamiltonian replaced by the generator of a fixed feedback policy.

    The generator is

        (1-gamma) r - delta theta + z^2/2 + (1-gamma)[-cbar + delta exp(-y/theta) cbar^(1-1/psi) / (1-1/psi)]
            + (1-gamma)[-gamma/2 pi' Sigma pi + pi'(mu + sigma rho z)],

    so the feedback utility is ``w^(1-gamma) exp(y(0, x0)) / (1-gamma)``.
    """
    p.require_dual_regime()
    x, t = policy.x, policy.t
    dc = derive_coefficients(model, p, x)
    g, th, s, d = p.gamma, p.theta, p.psi, p.delta
    if not np.all(np.isfinite(policy.pi)) or not np.all(np.isfinite(policy.cbar)):
        raise SolverError("non-finite feedback policy", stage="feedback")
    if np.any(policy.cbar < 0):
        raise SolverError("negative consumption rate", stage="feedback")
    q = 1 - 1 / s
    srho = np.einsum("mij,mj->mi", dc.sigma, dc.rho)
    pSp = np.einsum("tmi,mij,tmj->tm", policy.pi, dc.Sigma, policy.pi)
    pmu = np.einsum("tmi,mi->tm", policy.pi, dc.mu)
    psr = np.einsum("tmi,mi->tm", policy.pi, srho)
    cq = policy.cbar**q
    base = (1 - g) * dc.r[None] - d * th + (1 - g) * (-policy.cbar - 0.5 * g * pSp + pmu)

    def explicit(i, u, ux):
        z = dc.a * ux
        return base[i] + 0.5 * z**2 + (1 - g) * (d * np.exp(-u / th) * cq[i] / q + psr[i] * z)

    U, iters = backward_semilinear(x, t, 0.5 * dc.a**2, dc.b, explicit, tol, max_iter, stage="feedback")
    return ValueSurface(t, x, U, central_gradient(U, x), dc.a,
                        {"scheme": "feedback_imex", "iterations_max": int(iters.max()) if iters.size else 0})


def feedback_utility(p, w0, y0):
    return w0 ** (1 - p.gamma) * np.exp(y0) / (1 - p.gamma)


# ---------------------------------------------------------------------------
# path diagnostics


def q_process(policy: OptimalPolicy, model: MarketModel, p: EZPreference, bundle: PathBundle):
    """Exponential martingale ``Q`` with loadings ``L = (1-gamma) pi' sigma rho + Z`` and
    ``L_perp = (1-gamma) pi' sigma rho_perp``; shape ``(N, K+1)``."""
    N, K = bundle.N, bundle.K
    logQ = np.zeros((N, K + 1))
    dt = bundle.dt
    g = p.gamma
    for i in range(K):
        x = model.clip_state(bundle.X[:, i])
        _, Z, pi = policy.state_values(bundle.t[i], x)
        sig, rho = model.sigma(x), model.rho(x)
        ps = np.einsum("mi,mij->mj", pi, sig)
        L = (1 - g) * np.einsum("mj,mj->m", ps, rho) + Z
        Lp = (1 - g) * np.einsum("mj,mjk->mk", ps, complete_correlation_rows(rho))
        logQ[:, i + 1] = (logQ[:, i] + L * bundle.dW[:, i] + np.einsum("mk,mk->m", Lp, bundle.dWperp[:, i])
                          - 0.5 * (L**2 + np.einsum("mk,mk->m", Lp, Lp)) * dt[i])
    return np.exp(logQ)


def _y_along(policy, model, bundle):
    return np.stack([policy.state_values(t, model.clip_state(bundle.X[:, i]))[0] for i, t in enumerate(bundle.t)],
                    axis=1)


def _cumtrapz(v, t):
    inc = 0.5 * (v[:, 1:] + v[:, :-1]) * np.diff(t)
    return np.concatenate([np.zeros((v.shape[0], 1)), np.cumsum(inc, axis=1)], axis=1)


def gradient_residual(policy, model, p, bundle, wealth, deflator):
    """Sup over paths and nodes of ``|D_sim / D_formula - 1|``.

    ``D_formula_t = w^gamma exp(-Y_0) exp(int_0^t f_u(c*, U*)) f_c(c*_t, U*_t)`` with
    ``U* = W^(1-gamma) exp(Y) / (1-gamma)`` taken from the value surface.
    """
    g = p.gamma
    Y = _y_along(policy, model, bundle)
    W = wealth.wealth
    U = W ** (1 - g) * np.exp(Y) / (1 - g)
    c = wealth.consumption
    fu = -pf.aggregator_fu(p, c, U)
    Y0 = Y[0, 0]
    formula = policy.w0**g * np.exp(-Y0) * np.exp(_cumtrapz(fu, bundle.t)) * pf.aggregator_fc(p, c, U)
    return float(np.abs(deflator.deflator / formula - 1).max())


@dataclass(frozen=True)
class IdentityReport:
    wey: float
    dey: float
    ratio: float


def pathwise_identities(model, p, policy: OptimalPolicy, bundle, wealth, deflator, Q=None) -> IdentityReport:
    """Sup relative discrepancies of the two pathwise representations and of their ratio."""
    g, th, s, d = p.gamma, p.theta, p.psi, p.delta
    if Q is None:
        Q = q_process(policy, model, p, bundle)
    Y = _y_along(policy, model, bundle)
    Y0 = Y[0, 0]
    w = policy.w0
    t = bundle.t[None, :]
    E = _cumtrapz(np.exp(-s * Y / th), bundle.t)
    lhs_a = wealth.wealth ** (1 - g) * np.exp(Y)
    rhs_a = w ** (1 - g) * np.exp(Y0) * np.exp(-(d**s * th * E - d * th * t)) * Q
    lhs_b = deflator.deflator ** ((g - 1) / g) * np.exp(Y / g)
    rhs_b = np.exp(Y0 / g) * np.exp(-th / (g * s) * d**s * E + d * th * t / g) * Q
    lhs_r = lhs_a / lhs_b
    rhs_r = w ** (1 - g) * np.exp(Y0 * (1 - 1 / g)) * np.exp(-(d**s * th * E - d * th * t)
                                                            + th / (g * s) * d**s * E - d * th * t / g)
    rel = lambda a, b: float(np.abs(a / b - 1).max())  # noqa: E731
    return IdentityReport(rel(lhs_a, rhs_a), rel(lhs_b, rhs_b), rel(lhs_r, rhs_r))


def perturbed_loadings(policy: OptimalPolicy, model: MarketModel, eps):
    """Loadings ``(xi* + eps, eta)`` with ``eta`` re-solved from ``mu + sigma rho xi + sigma rho_perp eta = 0``."""
    def loadings(t, x):
        xi, _ = policy.loadings(t, x)
        xi = xi + eps
        mu, sig, rho = model.mu(x), model.sigma(x), model.rho(x)
        srho = np.einsum("mij,mj->mi", sig, rho)
        srp = np.einsum("mij,mjk->mik", sig, complete_correlation_rows(rho))
        rhs = -(mu + srho * xi[:, None])
        eta = np.einsum("mij,mj->mi", np.linalg.pinv(srp), rhs)
        res = np.abs(np.einsum("mij,mj->mi", srp, eta) - rhs).max()
        if res > 1e-8 * (1 + np.abs(rhs).max()):
            raise ModelError("perturbed loadings cannot satisfy the market constraint")
        return xi, eta

    return loadings


# ---------------------------------------------------------------------------
# end-to-end verification


@dataclass(frozen=True, eq=False)
class DualityReport:
    """Outcome of :func:`verify_duality`.  Every estimate carries its standard error."""

    primal: float
    primal_se: float
    dual: float
    dual_se: float
    analytic: float
    gap: float
    gap_se: float
    combined_se: float
    y_star: float
    Y0: float
    martingale_residual: float
    martingale_se: float
    gradient_residual: float
    dt: float
    Q_mean: float
    Q_se: float
    lagrange_argmin_offset: int | None = None
    identities: IdentityReport | None = None
    truncated_fraction: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def flags(self):
        f = {
            "gap_within_3se": abs(self.gap) <= 3 * self.combined_se,
            "primal_near_analytic": abs(self.primal - self.analytic) <= 3 * self.primal_se,
            "dual_near_analytic": abs(self.dual - self.analytic) <= 3 * self.dual_se,
            "martingale_within_3se": abs(self.martingale_residual) <= 3 * self.martingale_se,
            "gradient_within_5dt": self.gradient_residual <= 5 * self.dt,
            "Q_mean_within_3se": abs(self.Q_mean - 1) <= 3 * self.Q_se,
        }
        if self.lagrange_argmin_offset is not None:
            f["lagrange_min_at_y_star"] = abs(self.lagrange_argmin_offset) <= 1
        return f

    @property
    def passed(self):
        return all(self.flags.values())

    def rows(self):
        out = [
            ("primal", self.primal), ("primal_se", self.primal_se), ("dual", self.dual), ("dual_se", self.dual_se),
            ("analytic", self.analytic), ("gap", self.gap), ("gap_se", self.gap_se),
            ("combined_se", self.combined_se), ("y_star", self.y_star), ("Y0", self.Y0),
            ("martingale_residual", self.martingale_residual), ("martingale_se", self.martingale_se),
            ("gradient_residual", self.gradient_residual), ("dt", self.dt), ("Q_mean", self.Q_mean),
            ("Q_se", self.Q_se), ("truncated_fraction", self.truncated_fraction),
        ]
        if self.lagrange_argmin_offset is not None:
            out.append(("lagrange_argmin_offset", self.lagrange_argmin_offset))
        if self.identities is not None:
            out += [("identity_wey", self.identities.wey), ("identity_dey", self.identities.dey),
                    ("identity_ratio", self.identities.ratio)]
        out += sorted(self.extra.items())
        out += [(f"flag_{k}", v) for k, v in self.flags.items()]
        return out

    def to_text(self):
        def fmt(v):
            if isinstance(v, (bool, np.bool_)):
                return "true" if v else "false"
            if isinstance(v, (int, np.integer)):
                return str(int(v))
            return f"{float(v):.17g}"

        return "".join(f"{k} = {fmt(v)}\n" for k, v in self.rows())


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except SolverError as e:
        if e.stage is None:
            raise SolverError(str(e), stage=name, node=e.node) from e
        raise
    except EZDualError as e:
        raise SolverError(f"{type(e).__name__}: {e}", stage=name) from e


def solve_value(model, p, T, K=200, nodes=400, override=False):
    if isinstance(model, ConstantModel):
        return solve_constant(p, model, T, K)
    return solve_pde(p, model, T, K, nodes, override=override)


def lagrange_profile(bundle, deflator, p, y_star, w0, points=21, batches=20):
    """``V_0^{yD} + w y`` on a log-spaced grid over ``[y*/2, 2 y*]``."""
    ys = y_star * np.geomspace(0.5, 2.0, points)
    vals = np.array([v.estimate for v in evaluate_sdd(bundle, deflator, ys, p, batches)]) + w0 * ys
    return ys, vals


def verify_duality(model: MarketModel, p: EZPreference, w0=1.0, N=10_000, K=200, T=1.0, seed=0, batches=20,
                   nodes=400, threads=1, lagrange_points=21, override=False, stages=None) -> DualityReport:
    """Run the full primal/dual pipeline with common random numbers.

    Parameters
    ----------
    lagrange_points : int
        Size of the y-grid for the Lagrange first-order check; 0 skips it.
    stages : list, optional
        Receives ``(stage name, wall seconds)`` tuples.
    """
    import time

    def timed(name, fn, *a, **kw):
        t0 = time.perf_counter()
        out = _stage(name, fn, *a, **kw)
        if stages is not None:
            stages.append((name, time.perf_counter() - t0))
        return out

    timed("preconditions", p.require_dual_regime)
    vs = timed("solve", solve_value, model, p, T, K, nodes, override)
    policy = timed("policy", extract_policy, vs, model, p, w0)
    bundle = timed("simulate_state", simulate_state, model, N, K, T, seed, threads=threads)
    wealth = timed("simulate_wealth", simulate_wealth, bundle, model, policy, w0)
    deflator = timed("simulate_deflator", simulate_deflator, bundle, model, policy.loadings)
    primal = timed("primal", evaluate_sdu, bundle, wealth, p, batches)
    dual = timed("dual", evaluate_sdd, bundle, deflator, policy.y_star, p, batches)

    wy = w0 * policy.y_star
    diff = primal.batch_estimates - (dual.batch_estimates + wy)
    gap_se = float(diff.std(ddof=1) / np.sqrt(diff.size)) if diff.size > 1 else float("nan")
    combined = float(np.hypot(primal.se, dual.se))
    Y0 = vs.value_at(0.0, model.x0)

    def checks():
        D, W, c = deflator.deflator, wealth.wealth, wealth.consumption
        per = D[:, -1] * W[:, -1] + (D[:, :-1] * c[:, :-1] * bundle.dt).sum(axis=1)
        mres = (per.mean() - w0) / w0
        mse = per.std(ddof=1) / np.sqrt(N) / w0
        Q = q_process(policy, model, p, bundle)
        QT = Q[:, -1]
        grad = gradient_residual(policy, model, p, bundle, wealth, deflator)
        ident = pathwise_identities(model, p, policy, bundle, wealth, deflator, Q)
        return mres, mse, float(QT.mean()), float(QT.std(ddof=1) / np.sqrt(N)), grad, ident

    mres, mse, qm, qse, grad, ident = timed("checks", checks)
    offset = None
    extra = {"N": N, "K": K, "batches": batches, "seed": seed, "w0": w0, "T": T,
             "constraint_residual": policy.constraint_residual, "paired_gap_se": gap_se}
    if lagrange_points:
        ys, vals = timed("lagrange", lagrange_profile, bundle, deflator, p, policy.y_star, w0, lagrange_points, batches)
        offset = int(np.argmin(vals)) - lagrange_points // 2
        extra["lagrange_min_value"] = float(vals.min())
    return DualityReport(
        primal=primal.estimate, primal_se=primal.se, dual=dual.estimate + wy, dual_se=dual.se,
        analytic=float(feedback_utility(p, w0, Y0)), gap=float(diff.mean()), gap_se=gap_se, combined_se=combined,
        y_star=policy.y_star, Y0=Y0, martingale_residual=float(mres), martingale_se=float(mse),
        gradient_residual=grad, dt=T / K, Q_mean=qm, Q_se=qse, lagrange_argmin_offset=offset, identities=ident,
        truncated_fraction=bundle.truncated / (N * K), extra=extra,
    )
