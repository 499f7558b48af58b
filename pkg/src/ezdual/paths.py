"""Simulation of the state, wealth, deflator and discount-factor paths.

Every path draws its Brownian increments from its own counter-based Philox
stream keyed by ``(seed, path index)``, so a path is identical whatever the
number of paths or worker threads.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ModelError, SolverError
from .market import ConstantModel, HestonModel, MarketModel, complete_correlation_rows
from .preferences import EZPreference


def path_rng(seed, index):
    """Generator for path ``index`` under master ``seed``."""
    key = (int(seed) % 2**64) * 2**64 + int(index)
    return np.random.Generator(np.random.Philox(key=key))


def brownian_increments(N, K, T, n, seed, first=0, threads=1):
    """Increments ``dW`` of shape ``(N, K)`` and ``dWperp`` of shape ``(N, K, n)``."""
    dt = T / K
    out = np.empty((N, K, 1 + n))

    def fill(lo, hi):
        for i in range(lo, hi):
            out[i] = path_rng(seed, first + i).standard_normal((K, 1 + n))

    if threads > 1 and N > threads:
        edges = np.linspace(0, N, threads + 1).astype(int)
        with ThreadPoolExecutor(threads) as ex:
            list(ex.map(lambda k: fill(edges[k], edges[k + 1]), range(threads)))
    else:
        fill(0, N)
    out *= np.sqrt(dt)
    return out[:, :, 0].copy(), out[:, :, 1:].copy()


@dataclass(frozen=True, eq=False)
class PathBundle:
    """State paths and the Brownian increments that drive them.

    Attributes
    ----------
    t : ndarray, shape (K+1,)
    X : ndarray, shape (N, K+1)
        Raw simulated state (Heston paths may dip below zero; coefficients are
        evaluated at ``model.clip_state(X)``).
    dW : ndarray, shape (N, K)
    dWperp : ndarray, shape (N, K, n)
    seed : int
    measure : str
        ``'P'`` or ``'Pbar'`` (state drift ``b + a q``).
    truncated : int
        Number of steps at which the full-truncation scheme was active.
    """

    t: np.ndarray
    X: np.ndarray
    dW: np.ndarray
    dWperp: np.ndarray
    seed: int
    measure: str = "P"
    truncated: int = 0

    @property
    def N(self):
        return self.X.shape[0]

    @property
    def K(self):
        return self.t.size - 1

    @property
    def dt(self):
        return np.diff(self.t)

    def coarsen(self, model, factor=2, p=None):
        """Same Brownian paths on a grid with ``factor`` times larger steps."""
        if self.K % factor:
            raise ModelError("number of steps must be divisible by the coarsening factor")
        N, K = self.dW.shape
        dW = self.dW.reshape(N, K // factor, factor).sum(axis=2)
        dWp = self.dWperp.reshape(N, K // factor, factor, -1).sum(axis=2)
        return state_from_increments(model, self.t[::factor], dW, dWp, self.seed, self.measure, p)


def _state_drift(model, p, x, measure):
    b = model.b(x)
    if measure == "Pbar":
        b = b + model.a(x) * q_values(model, p, x)
    return b


def state_from_increments(model: MarketModel, t, dW, dWperp, seed=0, measure="P", p=None) -> PathBundle:
    """Euler (full truncation for the square-root model) driven by given increments."""
    if measure not in ("P", "Pbar"):
        raise ModelError(f"unknown measure {measure!r}")
    if measure == "Pbar" and p is None:
        raise ModelError("the measure-changed drift needs the preference parameters")
    N, K = dW.shape
    X = np.empty((N, K + 1))
    X[:, 0] = model.x0
    truncated = 0
    dt = np.diff(t)
    if isinstance(model, ConstantModel):
        X[:] = model.x0
    else:
        for i in range(K):
            x = X[:, i]
            if isinstance(model, HestonModel):
                truncated += int(np.count_nonzero(x < 0))
                # full truncation: drift and diffusion see max(x, 0)
                xp = np.maximum(x, 0.0)
                drift = model.b(xp)
                if measure == "Pbar":
                    drift = drift + model.a(xp) * q_values(model, p, xp)
                X[:, i + 1] = x + drift * dt[i] + model.a(xp) * dW[:, i]
            else:
                drift = _state_drift(model, p, x, measure)
                X[:, i + 1] = x + drift * dt[i] + model.a(x) * dW[:, i]
    return PathBundle(np.asarray(t, float), X, dW, dWperp, seed, measure, truncated)


def simulate_state(model: MarketModel, N, K, T, seed, measure="P", p: EZPreference | None = None,
                   threads=1) -> PathBundle:
    """Simulate ``N`` state paths on ``K`` uniform steps over ``[0, T]``."""
    if N < 1 or K < 1:
        raise ModelError("need at least one path and one step")
    dW, dWp = brownian_increments(N, K, T, model.n, seed, threads=threads)
    return state_from_increments(model, np.linspace(0.0, T, K + 1), dW, dWp, seed, measure, p)


# ---------------------------------------------------------------------------
# vectorized coefficient helpers


def _solve_sigma(model, x, vec):
    sig = model.sigma(x)
    Sigma = np.einsum("mij,mkj->mik", sig, sig)
    return sig, np.linalg.solve(Sigma, vec[..., None])[..., 0]


def h_values(model: MarketModel, p: EZPreference, x):
    """``h(x) = (1-gamma) r + (1-gamma)/(2 gamma) mu' Sigma^-1 mu`` for an array of states."""
    shape = np.shape(x)
    x = model.clip_state(np.asarray(x, float).ravel())
    mu = model.mu(x)
    _, s = _solve_sigma(model, x, mu)
    g = p.gamma
    h = (1 - g) * model.r(x) + (1 - g) / (2 * g) * np.einsum("mi,mi->m", mu, s)
    return h.reshape(shape)


def q_values(model: MarketModel, p: EZPreference, x):
    """Linear ``z`` loading ``(1-gamma)/gamma mu' Sigma^-1 sigma rho``."""
    x = model.clip_state(np.asarray(x, float))
    mu = model.mu(x)
    sig, s = _solve_sigma(model, x, mu)
    g = p.gamma
    return (1 - g) / g * np.einsum("mi,mij,mj->m", s, sig, model.rho(x))


def h_along(model, p, X):
    return h_values(model, p, X)


# ---------------------------------------------------------------------------
# wealth and deflator


@dataclass(frozen=True, eq=False)
class WealthPath:
    """Wealth ``W``, consumption rate ``c = cbar W`` and the investment fractions used.

    ``consumption[:, -1]`` is ``cbar(T) W_T``; the bequest is ``wealth[:, -1]``.
    """

    wealth: np.ndarray
    cbar: np.ndarray
    pi: np.ndarray

    @property
    def consumption(self):
        return self.cbar * self.wealth

    @property
    def bequest(self):
        return self.wealth[:, -1]

    @property
    def log_wealth(self):
        return np.log(self.wealth)


@dataclass(frozen=True, eq=False)
class DeflatorPath:
    deflator: np.ndarray
    xi: np.ndarray
    eta: np.ndarray

    @property
    def log_deflator(self):
        return np.log(self.deflator)


def _check_finite(name, arr, i):
    if not np.all(np.isfinite(arr)):
        bad = np.argwhere(~np.isfinite(np.reshape(arr, (arr.shape[0], -1))))[0, 0]
        raise SolverError(f"non-finite {name}", stage="simulate", node=(i, int(bad)))


class ConstantPolicy:
    """Feedback policy with constant investment fractions and consumption rate."""

    def __init__(self, pi, cbar):
        self.pi = np.atleast_1d(np.asarray(pi, float))
        self.cbar = float(cbar)

    def investment(self, t, x):
        m = np.shape(x)[0]
        return np.tile(self.pi, (m, 1)), np.full(m, self.cbar)


def _rho_increment(model, x, dW, dWperp):
    rho = model.rho(x)
    return rho * dW[:, None] + np.einsum("mij,mj->mi", complete_correlation_rows(rho), dWperp)


def simulate_wealth(bundle: PathBundle, model: MarketModel, policy, w0) -> WealthPath:
    """Log-Euler wealth under a feedback policy.

    ``policy.investment(t, x)`` returns ``(pi, cbar)`` of shapes ``(m, n)`` and
    ``(m,)`` for clipped states ``x``.
    """
    if not w0 > 0:
        raise ModelError("initial wealth must be positive")
    N, K = bundle.N, bundle.K
    logW = np.empty((N, K + 1))
    logW[:, 0] = np.log(w0)
    cb = np.empty((N, K + 1))
    pis = np.empty((N, K, model.n))
    dt = bundle.dt
    for i in range(K + 1):
        x = model.clip_state(bundle.X[:, i])
        pi, c = policy.investment(bundle.t[i], x)
        _check_finite("policy", pi, i)
        _check_finite("consumption rate", c, i)
        cb[:, i] = c
        if i == K:
            break
        pis[:, i] = pi
        mu, sig = model.mu(x), model.sigma(x)
        pis_sig = np.einsum("mi,mij->mj", pi, sig)
        drift = model.r(x) + np.einsum("mi,mi->m", pi, mu) - c - 0.5 * np.einsum("mj,mj->m", pis_sig, pis_sig)
        dWr = _rho_increment(model, x, bundle.dW[:, i], bundle.dWperp[:, i])
        logW[:, i + 1] = logW[:, i] + drift * dt[i] + np.einsum("mj,mj->m", pis_sig, dWr)
    return WealthPath(np.exp(logW), cb, pis)


def simulate_deflator(bundle: PathBundle, model: MarketModel, loadings) -> DeflatorPath:
    """Log-Euler deflator ``dD/D = -r dt + xi dW + eta dWperp`` with ``D_0 = 1``.

    ``loadings(t, x)`` returns ``(xi, eta)`` of shapes ``(m,)`` and ``(m, n)``.
    """
    N, K = bundle.N, bundle.K
    logD = np.zeros((N, K + 1))
    xis = np.empty((N, K))
    etas = np.empty((N, K, model.n))
    dt = bundle.dt
    for i in range(K):
        x = model.clip_state(bundle.X[:, i])
        xi, eta = loadings(bundle.t[i], x)
        _check_finite("deflator loading", xi, i)
        _check_finite("deflator loading", eta, i)
        xis[:, i], etas[:, i] = xi, eta
        drift = -model.r(x) - 0.5 * xi**2 - 0.5 * np.einsum("mi,mi->m", eta, eta)
        logD[:, i + 1] = logD[:, i] + drift * dt[i] + xi * bundle.dW[:, i] + np.einsum("mi,mi->m", eta, bundle.dWperp[:, i])
    return DeflatorPath(np.exp(logD), xis, etas)


def discount_kappa(nu, t):
    """``kappa_{0,t_i} = exp(-int_0^{t_i} nu)`` by the trapezoidal rule.

    ``nu`` has shape ``(K+1,)`` or ``(N, K+1)``; the result has the same shape.
    """
    nu = np.asarray(nu, float)
    if not np.all(np.isfinite(nu)):
        raise ModelError("discount rate must be finite")
    dt = np.diff(np.asarray(t, float))
    inc = 0.5 * (nu[..., 1:] + nu[..., :-1]) * dt
    cum = np.concatenate([np.zeros(nu.shape[:-1] + (1,)), np.cumsum(inc, axis=-1)], axis=-1)
    return np.exp(-cum)
