import numpy as np
import pytest

from ezdual import (
    ConstantModel,
    EZPreference,
    HestonModel,
    HestonParams,
    KimOmbergModel,
    KimOmbergParams,
)

ACCEPTANCE_LINES = []


@pytest.fixture
def p2():
    """gamma = psi = 2, theta = -2."""
    return EZPreference(0.05, 2.0, 2.0)


@pytest.fixture
def p_half():
    """0 < gamma < 1 with gamma * psi > 1, theta = 2/3."""
    return EZPreference(0.1, 0.5, 4.0)


@pytest.fixture
def const_model():
    return ConstantModel(0.02, [0.05], [[0.2]], [0.5])


def heston_params(**kw):
    base = dict(b=2.0, ell=0.09, a=0.3, r0=0.02, r1=0.0, lam=[0.5], sigma_scale=[[1.0]], rho=[-0.5])
    base.update(kw)
    return HestonParams(**base)


def ko_params(**kw):
    base = dict(a=0.1, b=0.5, r0=0.02, r1=0.0, lam0=[0.25], lam1=[1.0], sigma=[[0.2]], rho=[-0.5])
    base.update(kw)
    return KimOmbergParams(**base)


@pytest.fixture
def heston_model():
    return HestonModel(heston_params(), 0.09)


@pytest.fixture
def ko_model():
    return KimOmbergModel(ko_params(), 0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
