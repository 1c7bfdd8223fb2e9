import numpy as np
import pytest

from ergodic_bsde.core_model import ou_factor
from ergodic_bsde.drivers import (
    ClosedFormBenchmark,
    ConstraintSet,
    ForwardPerformanceDriver,
    TanhTheta,
    constant_theta,
    forward_performance_model,
)
from ergodic_bsde.ergodic_solver import vanishing_discount
from ergodic_bsde.mc_market import MarketSpec
from ergodic_bsde.pde_solver import Grid1D

RHOS = (0.1, 0.05, 0.025, 0.0125)


def two_regime_driver():
    return ForwardPerformanceDriver(
        0.5,
        (TanhTheta((0.3,), (0.2,)), TanhTheta((0.1,), (-0.2,))),
        (ConstraintSet.interval(0.0, 1.5), ConstraintSet.interval(0.0, 1.0)),
    )


def merton_driver():
    return ForwardPerformanceDriver(0.5, (constant_theta((0.2,)),), (ConstraintSet.full(1),))


@pytest.fixture(scope="session")
def grid801():
    return Grid1D(-6.0, 6.0, 801)


@pytest.fixture(scope="session")
def two_regime_model():
    return forward_performance_model(two_regime_driver(), ou_factor(1.0), [[-1.0, 1.0], [0.5, -0.5]],
                                     name="two_regime")


@pytest.fixture(scope="session")
def merton_model():
    return forward_performance_model(merton_driver(), ou_factor(1.0), [[0.0]], name="merton_single")


@pytest.fixture(scope="session")
def two_regime_ergodic(two_regime_model, grid801):
    return vanishing_discount(two_regime_model, grid801, RHOS)


@pytest.fixture(scope="session")
def merton_ergodic(merton_model, grid801):
    return vanishing_discount(merton_model, grid801, RHOS)


@pytest.fixture(scope="session")
def two_regime_market(two_regime_model):
    m = two_regime_model
    return MarketSpec(m.factor, m.rates, m.meta["fp_driver"])


@pytest.fixture(scope="session")
def merton_market(merton_model):
    m = merton_model
    return MarketSpec(m.factor, m.rates, m.meta["fp_driver"])


@pytest.fixture(scope="session", params=["example1", "example2"])
def benchmark(request):
    return ClosedFormBenchmark(request.param)


@pytest.fixture(scope="session")
def benchmark_ergodic():
    """Ergodic solutions of both benchmarks at n = 400 and n = 800."""
    out = {}
    for variant in ("example1", "example2"):
        b = ClosedFormBenchmark(variant)
        for n in (400, 800):
            out[variant, n] = vanishing_discount(b.model(), Grid1D(-6.0, 6.0, n), RHOS)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
