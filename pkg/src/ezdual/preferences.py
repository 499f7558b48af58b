"""Epstein-Zin aggregator and its Fenchel-Legendre transform chain.

The primal side is the aggregator ``f(c, u)`` and the bequest utility
``U_T(c)``; conjugating ``f`` in the utility argument gives the felicity
``F(c, nu)``, conjugating ``U_T`` and ``F`` in consumption gives ``V_T(d)``
and ``G(d, nu)``, and conjugating ``G`` back in ``nu`` gives the dual
aggregator ``g(d, v)``.  All functions accept scalars or numpy arrays and
raise :class:`~ezdual.errors.DomainError` rather than returning NaN.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, RegimeError

CRRA_TOL = 1e-12


class Regime(enum.Enum):
    GAMMA_LT1 = "GammaLT1"  # 0 < gamma < 1, gamma * psi > 1  (0 < theta < 1)
    BOTH_GT1 = "BothGT1"  # gamma > 1, psi > 1  (theta < 0)
    CRRA = "CRRA"  # gamma * psi == 1  (theta == 1, time-additive)
    UNSUPPORTED = "Unsupported"

    @property
    def dual(self):
        return self in (Regime.GAMMA_LT1, Regime.BOTH_GT1)


@dataclass(frozen=True)
class EZPreference:
    """Epstein-Zin preference parameters.

    Parameters
    ----------
    delta : float
        Discount rate per unit time, > 0.
    gamma : float
        Relative risk aversion, > 0 and != 1.
    psi : float
        Elasticity of intertemporal substitution, > 0 and != 1.
    """

    delta: float
    gamma: float
    psi: float
    theta: float = field(init=False)

    def __post_init__(self):
        if not self.delta > 0:
            raise DomainError(f"delta must be positive, got {self.delta}")
        if not self.gamma > 0 or self.gamma == 1:
            raise DomainError(f"gamma must be positive and != 1, got {self.gamma}")
        if not self.psi > 0 or self.psi == 1:
            raise DomainError(f"psi must be positive and != 1, got {self.psi}")
        object.__setattr__(self, "theta", (1 - self.gamma) / (1 - 1 / self.psi))
        regime = self.regime()
        if regime is Regime.GAMMA_LT1 and not 0 < self.theta < 1:
            raise RegimeError(f"theta={self.theta} outside (0, 1) in regime GammaLT1")
        if regime is Regime.BOTH_GT1 and not self.theta < 0:
            raise RegimeError(f"theta={self.theta} not negative in regime BothGT1")

    def regime(self) -> Regime:
        g, p = self.gamma, self.psi
        if abs(g * p - 1) <= CRRA_TOL:
            return Regime.CRRA
        if 0 < g < 1 and g * p > 1:
            return Regime.GAMMA_LT1
        if g > 1 and p > 1:
            return Regime.BOTH_GT1
        return Regime.UNSUPPORTED

    @property
    def sign(self) -> int:
        """Sign of ``1 - gamma``; every admitted utility value U has ``sign * U >= 0``."""
        return 1 if self.gamma < 1 else -1

    def require_dual_regime(self):
        regime = self.regime()
        if not regime.dual:
            raise RegimeError(
                f"duality requires 0<gamma<1 with gamma*psi>1, or gamma, psi>1; "
                f"got gamma={self.gamma}, psi={self.psi} ({regime.value})"
            )
        return regime


@dataclass(frozen=True)
class UtilitySign:
    """Sign constraint ``(1 - gamma) U >= 0`` of the admissible utility class."""

    sign: int

    @classmethod
    def of(cls, p: EZPreference) -> "UtilitySign":
        return cls(p.sign)

    def admits(self, u) -> bool:
        return bool(np.all(self.sign * np.asarray(u, dtype=float) >= 0))


def _out(x):
    return float(x) if np.ndim(x) == 0 else x


def _pos(name, x):
    x = np.asarray(x, dtype=float)
    if not np.all(x > 0):
        raise DomainError(f"{name} must be strictly positive")
    return x


def _pow(base, expo):
    # bases are strictly positive by precondition
    return np.exp(expo * np.log(base))


def _scaled_u(p, u):
    w = (1 - p.gamma) * np.asarray(u, dtype=float)
    if not np.all(w > 0):
        raise DomainError("(1 - gamma) * u must be strictly positive")
    return w


def _nu_base(p, nu):
    if p.regime() is Regime.CRRA:
        raise DomainError("felicity is degenerate in the CRRA case (theta == 1)")
    base = (p.delta * p.theta - np.asarray(nu, dtype=float)) / (p.theta - 1)
    if not np.all(base > 0):
        raise DomainError("(delta*theta - nu)/(theta - 1) must be strictly positive")
    return base


def aggregator_f(p: EZPreference, c, u):
    """Epstein-Zin aggregator ``f(c, u)``."""
    c = _pos("consumption", c)
    w = _scaled_u(p, u)
    q = 1 - 1 / p.psi
    return _out(p.delta * _pow(c, q) / q * _pow(w, 1 - 1 / p.theta) - p.delta * p.theta * np.asarray(u, float))


def aggregator_fu(p: EZPreference, c, u):
    """Negative utility derivative ``-f_u(c, u)``, the candidate discount rate ``nu^c``."""
    c = _pos("consumption", c)
    w = _scaled_u(p, u)
    d, th = p.delta, p.theta
    return _out(d * (1 - th) * _pow(c, 1 - 1 / p.psi) * _pow(w, -1 / th) + d * th)


def aggregator_fc(p: EZPreference, c, u):
    """Consumption derivative ``f_c(c, u)``."""
    c = _pos("consumption", c)
    w = _scaled_u(p, u)
    return _out(p.delta * _pow(c, -1 / p.psi) * _pow(w, 1 - 1 / p.theta))


def bequest_U(p: EZPreference, c):
    """Bequest utility ``c^(1-gamma) / (1-gamma)``."""
    c = _pos("bequest", c)
    return _out(_pow(c, 1 - p.gamma) / (1 - p.gamma))


def conjugate_V(p: EZPreference, d):
    """Convex conjugate of the bequest utility, ``gamma/(1-gamma) d^((gamma-1)/gamma)``."""
    d = _pos("d", d)
    g = p.gamma
    return _out(g / (1 - g) * _pow(d, (g - 1) / g))


def felicity_F(p: EZPreference, c, nu):
    """Felicity function ``F(c, nu) = inf_u f(c, u) + nu u``."""
    c = _pos("consumption", c)
    base = _nu_base(p, nu)
    g, th = p.gamma, p.theta
    return _out(p.delta**th * _pow(c, 1 - g) / (1 - g) * _pow(base, 1 - th))


def dual_G(p: EZPreference, d, nu):
    """``G(d, nu) = sup_c F(c, nu) - d c``."""
    d = _pos("d", d)
    base = _nu_base(p, nu)
    g, th = p.gamma, p.theta
    return _out(p.delta ** (th / g) * g / (1 - g) * _pow(d, (g - 1) / g) * _pow(base, (1 - th) / g))


def dual_g(p: EZPreference, d, v):
    """Dual aggregator ``g(d, v) = sup_nu G(d, nu) - nu v``."""
    d = _pos("d", d)
    w = _scaled_u(p, v)
    g, s, th = p.gamma, p.psi, p.theta
    return _out(p.delta**s * _pow(d, 1 - s) / (s - 1) * _pow(w, 1 - g * s / th) - p.delta * th * np.asarray(v, float))


def dual_gv(p: EZPreference, d, v):
    """Negative derivative ``-g_v(d, v)``."""
    d = _pos("d", d)
    w = _scaled_u(p, v)
    g, s, th = p.gamma, p.psi, p.theta
    return _out(p.delta**s * (1 - th) * _pow(d, 1 - s) * _pow(w, -g * s / th) + p.delta * th)
