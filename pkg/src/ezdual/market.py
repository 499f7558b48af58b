"""Market models driven by a scalar state variable, and their derived coefficients.

Three families are supported:

* :class:`ConstantModel` -- constant ``r, mu, sigma, rho`` (degenerate state,
  ``b = a = 0``);
* :class:`HestonModel` -- square-root state ``dX = b(l - X)dt + a sqrt(X) dW``,
  ``r = r0 + r1 x``, ``mu = sigma(x) lam sqrt(x)``;
* :class:`KimOmbergModel` -- Ornstein-Uhlenbeck state ``dX = -bX dt + a dW``,
  ``r = r0 + r1 x``, ``mu = sigma (lam0 + lam1 x)``.

All coefficient methods are vectorized over an array of states ``x`` of
shape ``(m,)``: ``r, b, a -> (m,)``, ``mu, rho -> (m, n)``, ``sigma -> (m, n, n)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ModelError
from .preferences import EZPreference

COMPLETION_TOL = 1e-12


def _vec(v, n=None):
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if v.ndim != 1 or (n is not None and v.size != n):
        raise ModelError(f"expected a vector of length {n}, got shape {v.shape}")
    return v


def _mat(s, n):
    s = np.asarray(s, dtype=float)
    if s.ndim == 0:
        s = s.reshape(1, 1)
    if s.shape != (n, n):
        raise ModelError(f"expected an {n}x{n} volatility matrix, got shape {s.shape}")
    return s


def complete_correlation(rho):
    """Principal square root ``rho_perp`` of ``I - rho rho'``.

    Raises :class:`ModelError` when ``rho' rho > 1``.
    """
    rho = _vec(rho)
    norm2 = float(rho @ rho)
    if norm2 > 1 + COMPLETION_TOL:
        raise ModelError(f"correlation vector has rho'rho = {norm2} > 1")
    a = np.eye(rho.size) - np.outer(rho, rho)
    w, v = np.linalg.eigh(a)
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.T


def complete_correlation_rows(rho):
    """Row-wise :func:`complete_correlation` for an ``(m, n)`` array, shape ``(m, n, n)``."""
    rho = np.asarray(rho, float)
    if np.all(rho == rho[:1]):
        return np.broadcast_to(complete_correlation(rho[0]), rho.shape + rho.shape[-1:])
    return np.stack([complete_correlation(r) for r in rho])


class MarketModel:
    """Base class; subclasses define the coefficient functions."""

    kind = "abstract"
    n: int
    x0: float

    def r(self, x):
        raise NotImplementedError

    def mu(self, x):
        raise NotImplementedError

    def sigma(self, x):
        raise NotImplementedError

    def rho(self, x):
        raise NotImplementedError

    def b(self, x):
        raise NotImplementedError

    def a(self, x):
        raise NotImplementedError

    @property
    def markovian(self):
        return self.kind != "constant"

    def clip_state(self, x):
        """Map simulated states into the domain where coefficients are evaluated."""
        return x

    def default_grid(self, nodes=400):
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class ConstantModel(MarketModel):
    r0: float
    mu0: np.ndarray
    sigma0: np.ndarray
    rho0: np.ndarray
    x0: float = 0.0
    n: int = field(init=False)
    kind = "constant"

    def __post_init__(self):
        mu = _vec(self.mu0)
        n = mu.size
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "mu0", mu)
        object.__setattr__(self, "sigma0", _mat(self.sigma0, n))
        object.__setattr__(self, "rho0", _vec(self.rho0, n))
        complete_correlation(self.rho0)

    def _m(self, x):
        return np.atleast_1d(np.asarray(x, dtype=float)).shape[0]

    def r(self, x):
        return np.full(self._m(x), float(self.r0))

    def mu(self, x):
        return np.tile(self.mu0, (self._m(x), 1))

    def sigma(self, x):
        return np.tile(self.sigma0, (self._m(x), 1, 1))

    def rho(self, x):
        return np.tile(self.rho0, (self._m(x), 1))

    def b(self, x):
        return np.zeros(self._m(x))

    def a(self, x):
        return np.zeros(self._m(x))

    def default_grid(self, nodes=5):
        return np.linspace(self.x0 - 1.0, self.x0 + 1.0, nodes)


@dataclass(frozen=True, eq=False)
class HestonParams:
    b: float
    ell: float
    a: float
    r0: float
    r1: float
    lam: np.ndarray
    sigma_scale: np.ndarray
    rho: np.ndarray
    sigma_form: str = "sqrt"

    def __post_init__(self):
        if self.b < 0 or self.ell < 0:
            raise ModelError("Heston requires b, ell >= 0")
        if not self.a > 0:
            raise ModelError("Heston requires a > 0")
        if self.sigma_form not in ("sqrt", "inverse_sqrt", "constant"):
            raise ModelError(f"unknown sigma_form {self.sigma_form!r}")
        lam = _vec(self.lam)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "sigma_scale", _mat(self.sigma_scale, lam.size))
        object.__setattr__(self, "rho", _vec(self.rho, lam.size))


@dataclass(frozen=True, eq=False)
class HestonModel(MarketModel):
    params: HestonParams
    x0: float
    kind = "heston"

    def __post_init__(self):
        if not self.x0 > 0:
            raise ModelError("Heston initial state must be positive")
        complete_correlation(self.params.rho)

    @property
    def n(self):
        return self.params.lam.size

    def clip_state(self, x):
        return np.maximum(x, 1e-12)

    def _scale(self, x):
        f = self.params.sigma_form
        if f == "sqrt":
            return np.sqrt(x)
        if f == "inverse_sqrt":
            return 1.0 / np.sqrt(x)
        return np.ones_like(x)

    def r(self, x):
        x = np.asarray(x, float)
        return self.params.r0 + self.params.r1 * x

    def sigma(self, x):
        x = np.atleast_1d(np.asarray(x, float))
        return self._scale(x)[:, None, None] * self.params.sigma_scale[None]

    def mu(self, x):
        x = np.atleast_1d(np.asarray(x, float))
        lam = self.params.lam[None, :] * np.sqrt(x)[:, None]
        return np.einsum("mij,mj->mi", self.sigma(x), lam)

    def rho(self, x):
        return np.tile(self.params.rho, (np.atleast_1d(x).shape[0], 1))

    def b(self, x):
        x = np.asarray(x, float)
        return self.params.b * (self.params.ell - np.maximum(x, 0.0))

    def a(self, x):
        x = np.asarray(x, float)
        return self.params.a * np.sqrt(np.maximum(x, 0.0))

    def default_grid(self, nodes=400):
        return np.geomspace(1e-4, 10 * self.params.ell, nodes)


@dataclass(frozen=True, eq=False)
class KimOmbergParams:
    a: float
    b: float
    r0: float
    r1: float
    lam0: np.ndarray
    lam1: np.ndarray
    sigma: np.ndarray
    rho: np.ndarray

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ModelError("Kim-Omberg requires a, b > 0")
        lam0 = _vec(self.lam0)
        n = lam0.size
        object.__setattr__(self, "lam0", lam0)
        object.__setattr__(self, "lam1", _vec(self.lam1, n))
        object.__setattr__(self, "sigma", _mat(self.sigma, n))
        object.__setattr__(self, "rho", _vec(self.rho, n))


@dataclass(frozen=True, eq=False)
class KimOmbergModel(MarketModel):
    params: KimOmbergParams
    x0: float = 0.0
    kind = "kim_omberg"

    def __post_init__(self):
        complete_correlation(self.params.rho)

    @property
    def n(self):
        return self.params.lam0.size

    def r(self, x):
        x = np.asarray(x, float)
        return self.params.r0 + self.params.r1 * x

    def sigma(self, x):
        return np.tile(self.params.sigma, (np.atleast_1d(x).shape[0], 1, 1))

    def mu(self, x):
        x = np.atleast_1d(np.asarray(x, float))
        lam = self.params.lam0[None, :] + self.params.lam1[None, :] * x[:, None]
        return lam @ self.params.sigma.T

    def rho(self, x):
        return np.tile(self.params.rho, (np.atleast_1d(x).shape[0], 1))

    def b(self, x):
        return -self.params.b * np.asarray(x, float)

    def a(self, x):
        return np.full(np.atleast_1d(x).shape[0], float(self.params.a))

    def default_grid(self, nodes=400):
        half = 6 * self.params.a / np.sqrt(2 * self.params.b)
        return np.linspace(-half, half, nodes)


@dataclass(frozen=True, eq=False)
class DerivedCoefficients:
    """Coefficients entering the value-process equation, tabulated on a state grid.

    ``q`` is the loading of the linear ``z`` term of the Hamiltonian,
    ``(1-gamma)/gamma * mu' Sigma^-1 sigma rho``.
    """

    x: np.ndarray
    r: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    rho: np.ndarray
    b: np.ndarray
    a: np.ndarray
    Sigma: np.ndarray
    Sigma_inv: np.ndarray
    M: np.ndarray
    h: np.ndarray
    Theta: np.ndarray
    rho_perp: np.ndarray
    q: np.ndarray
    h_max: float
    h_min: float

    def at(self, j):
        """Single-node view used by :func:`ezdual.bsde.hamiltonian`."""
        return NodeCoefficients(
            mu=self.mu[j], sigma=self.sigma[j], rho=self.rho[j], Sigma_inv=self.Sigma_inv[j],
            M=float(self.M[j]), h=float(self.h[j]), q=float(self.q[j]),
        )


@dataclass(frozen=True, eq=False)
class NodeCoefficients:
    mu: np.ndarray
    sigma: np.ndarray
    rho: np.ndarray
    Sigma_inv: np.ndarray
    M: float
    h: float
    q: float


def derive_coefficients(model: MarketModel, p: EZPreference, grid=None) -> DerivedCoefficients:
    """Tabulate ``Sigma, M, h, Theta, rho_perp`` on ``grid`` and assert the M sandwich."""
    x = model.default_grid() if grid is None else np.asarray(grid, dtype=float)
    g = p.gamma
    r, mu, sig, rho = model.r(x), model.mu(x), model.sigma(x), model.rho(x)
    Sigma = np.einsum("mij,mkj->mik", sig, sig)
    Sigma_inv = np.empty_like(Sigma)
    for j in range(x.size):
        try:
            np.linalg.cholesky(Sigma[j])
            Sigma_inv[j] = np.linalg.inv(Sigma[j])
        except np.linalg.LinAlgError:
            raise ModelError(f"Sigma is singular at node {j} (x={x[j]:.6g})") from None
    Theta = np.einsum("mji,mjk,mkl->mil", sig, Sigma_inv, sig)
    rTr = np.einsum("mi,mij,mj->m", rho, Theta, rho)
    M = 1 + (1 - g) / g * rTr
    mSm = np.einsum("mi,mij,mj->m", mu, Sigma_inv, mu)
    h = (1 - g) * r + (1 - g) / (2 * g) * mSm
    q = (1 - g) / g * np.einsum("mi,mij,mjk,mk->m", mu, Sigma_inv, sig, rho)
    rho_perp = np.array(complete_correlation_rows(rho))
    lo, hi = (1 / g, 1.0) if g > 1 else (1.0, 1 / g)
    bad = np.flatnonzero((M < lo - 1e-12) | (M > hi + 1e-12))
    if bad.size:
        raise ModelError(f"M outside [{lo:.6g}, {hi:.6g}] at node {bad[0]} (M={M[bad[0]]:.6g})")
    return DerivedCoefficients(
        x=x, r=r, mu=mu, sigma=sig, rho=rho, b=model.b(x), a=model.a(x), Sigma=Sigma,
        Sigma_inv=Sigma_inv, M=M, h=h, Theta=Theta, rho_perp=rho_perp, q=q,
        h_max=float(h.max()), h_min=float(h.min()),
    )


# ---------------------------------------------------------------------------
# assumption checkers


@dataclass(frozen=True)
class Condition:
    name: str
    holds: bool
    detail: str = ""


@dataclass(frozen=True)
class CheckReport:
    name: str
    applicable: bool
    conditions: tuple = ()
    reason: str = ""

    @property
    def accepted(self):
        return self.applicable and self._decision()

    def _decision(self):
        return all(c.holds for c in self.conditions)

    def table(self):
        rows = [f"{self.name}: {'ACCEPT' if self.accepted else 'REJECT'}"]
        if not self.applicable:
            rows.append(f"  inapplicable: {self.reason}")
        for c in self.conditions:
            rows.append(f"  {c.name:<28} {str(c.holds):<6} {c.detail}")
        if self.applicable and not self.accepted and self.reason:
            rows.append(f"  reason: {self.reason}")
        return "\n".join(rows)


@dataclass(frozen=True)
class KimOmbergReport(CheckReport):
    def _decision(self):
        held = {c.name: c.holds for c in self.conditions}
        return held["(i) r1=0 and drift<0"] or held["(ii) lam1'Theta lam1>0"]


@dataclass(frozen=True)
class RegimeReport:
    regime: str
    label: str
    applicable: bool


def check_regime_duality(p: EZPreference) -> RegimeReport:
    from .preferences import Regime

    reg = p.regime()
    labels = {
        Regime.GAMMA_LT1: "regime (i): 0<gamma<1, gamma*psi>1",
        Regime.BOTH_GT1: "regime (ii): gamma>1, psi>1",
        Regime.CRRA: "CRRA: duality theorems inapplicable",
        Regime.UNSUPPORTED: "unsupported: gamma*psi<=1 or gamma>1>psi",
    }
    return RegimeReport(reg.value, labels[reg], reg.dual)


def _both_gt1(p):
    return p.gamma > 1 and p.psi > 1


def check_heston(hp: HestonParams, p: EZPreference, grid=None) -> CheckReport:
    """Parameter restrictions under which duality holds in the square-root model."""
    name = "heston"
    if not _both_gt1(p):
        return CheckReport(name, False, reason="requires gamma > 1 and psi > 1")
    x = np.geomspace(1e-4, 10 * max(hp.ell, 1e-3), 200) if grid is None else np.asarray(grid, float)
    model = HestonModel(hp, x0=float(x[x.size // 2]))
    sig = model.sigma(x)
    Sigma = np.einsum("mij,mkj->mik", sig, sig)
    Theta = np.einsum("mji,mjk,mkl->mil", sig, np.linalg.inv(Sigma), sig)
    lTl = np.einsum("i,mij,j->m", hp.lam, Theta, hp.lam)
    feller = hp.b * hp.ell > 0.5 * hp.a**2
    lower = hp.r1 + lTl / (2 * p.gamma)
    premium = hp.r1 > 0 or bool(np.all(lTl > 0))
    conds = (
        Condition("feller b*l > a^2/2", bool(feller), f"{hp.b * hp.ell:.6g} vs {0.5 * hp.a**2:.6g}"),
        Condition("r1 + lam'Theta lam/(2g) >= 0", bool(np.all(lower >= 0)), f"min {lower.min():.6g}"),
        Condition("r1>0 or lam'Theta lam>0", premium, f"r1={hp.r1:.6g}, min lam'Theta lam={lTl.min():.6g}"),
    )
    reason = ""
    if not premium:
        reason = "neither r1>0 nor lam'Theta lam>0"
    elif not feller:
        reason = "Feller condition b*l > a^2/2 fails"
    elif not conds[1].holds:
        reason = "r1 + lam'Theta lam/(2 gamma) negative somewhere on the grid"
    return CheckReport(name, True, conds, reason)


def check_kim_omberg(kp: KimOmbergParams, p: EZPreference) -> CheckReport:
    """Parameter restrictions under which duality holds in the linear-diffusion model."""
    name = "kim_omberg"
    if not _both_gt1(p):
        return KimOmbergReport(name, False, reason="requires gamma > 1 and psi > 1")
    g = p.gamma
    S = kp.sigma @ kp.sigma.T
    Theta = kp.sigma.T @ np.linalg.inv(S) @ kp.sigma
    drift = -kp.b + (1 - g) / g * kp.a * float(kp.lam1 @ Theta @ kp.rho)
    quad = float(kp.lam1 @ Theta @ kp.lam1)
    c1 = kp.r1 == 0 and drift < 0
    c2 = quad > 0
    conds = (
        Condition("(i) r1=0 and drift<0", bool(c1), f"r1={kp.r1:.6g}, drift={drift:.6g}"),
        Condition("(ii) lam1'Theta lam1>0", bool(c2), f"{quad:.6g}"),
    )
    reason = "" if (c1 or c2) else "neither (i) nor (ii) holds"
    return KimOmbergReport(name, True, conds, reason)


def check_model(model: MarketModel, p: EZPreference):
    """Dispatch to the checker for the model family; constant models always pass."""
    if isinstance(model, HestonModel):
        return check_heston(model.params, p)
    if isinstance(model, KimOmbergModel):
        return check_kim_omberg(model.params, p)
    reg = p.regime()
    return CheckReport("constant", reg.dual, (Condition("bounded coefficients", True),),
                       reason="" if reg.dual else "regime outside the duality theorems")


# ---------------------------------------------------------------------------
# Lyapunov diagnostic


@dataclass(frozen=True)
class DiagnosticReport:
    x: np.ndarray
    values: np.ndarray
    sup: float
    bounded_above: bool
    inv_x_coefficient: float | None = None


def lyapunov_operator(dc: DerivedCoefficients, phi, dphi, d2phi):
    """Evaluate ``F[phi] = a^2/2 phi'' + (b + a q) phi' + a^2 M phi'^2 / 2 + h`` on the grid."""
    a2 = dc.a**2
    return 0.5 * a2 * d2phi + (dc.b + dc.a * dc.q) * dphi + 0.5 * a2 * dc.M * dphi**2 + dc.h


def lyapunov_diagnostic(model, p, c_under, c_over, grid=None) -> DiagnosticReport:
    """Probe ``phi(x) = -c_under log x + c_over x`` as a Lyapunov function.

    The flag is true when ``F[phi]`` is non-increasing toward both ends of the
    probed grid, i.e. it does not blow up at the truncated boundary.
    """
    if not (c_under > 0 and c_over > 0):
        raise ModelError("c_under and c_over must be positive")
    if isinstance(model, KimOmbergModel):
        raise ModelError("the log-linear Lyapunov probe needs a positive state domain")
    x = np.geomspace(1e-4, 10.0, 400) if grid is None else np.asarray(grid, float)
    if isinstance(model, HestonModel) and grid is None:
        x = np.geomspace(1e-4, 10 * model.params.ell, 400)
    dc = derive_coefficients(model, p, x)
    vals = lyapunov_operator(dc, -c_under * np.log(x) + c_over * x, -c_under / x + c_over, c_under / x**2)
    tol = 1e-12 * (1 + np.abs(vals).max())
    flag = bool(vals[0] <= vals[1] + tol and vals[-1] <= vals[-2] + tol)
    inv_x = None
    if isinstance(model, HestonModel):
        hp = model.params
        Mt = float(dc.M[0])
        inv_x = 0.5 * hp.a**2 * c_under + 0.5 * hp.a**2 * c_under**2 * Mt - hp.b * hp.ell * c_under
    return DiagnosticReport(x, vals, float(vals.max()), flag, inv_x)
