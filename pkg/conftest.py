# conftest.py
import math

import numpy as np
import pytest

from engine.corr_assembly import GaussianApprox
from engine.design_engine import DesignReport, MvnSettings, univariate_approx
from engine.stoch_predict import LOGRANK, WeightSpec
from engine.surv_model import AccrualCensoring, two_piece

LAM = math.log(2.0) / 6.0
WLRT_01 = WeightSpec(0.0, 1.0)


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run simulation-scale checks")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: design/simulation runs taking minutes")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def lam():
    return LAM


@pytest.fixture
def model07():
    return two_piece(LAM, 0.7, 2.0)


@pytest.fixture
def model06():
    return two_piece(LAM, 0.6, 2.0)


@pytest.fixture
def uniform_ac():
    return AccrualCensoring(14.0, 18.0)


@pytest.fixture
def fast_mvn():
    return MvnSettings(accuracy=1e-4, seed=7, replicates=1)


@pytest.fixture
def make_report():
    """DesignReport with hand-set boundaries and event target, for simulation tests."""

    def build(boundaries, d, nu=(0.6, 1.0), combo=(LOGRANK, WLRT_01), n=100):
        combo = tuple(combo)
        K, M = len(combo), len(nu)
        labels = tuple((m, w) for m in range(M) for w in combo)
        sigma = GaussianApprox(labels, tuple(nu), np.zeros(K * M), np.eye(K * M), "H0")
        return DesignReport(
            source="pred-sto",
            combo=combo,
            nu=tuple(nu),
            alpha=0.025,
            beta=0.1,
            monitor="events",
            stopping_times={"H0": tuple(nu), "H1": tuple(nu)},
            boundaries=tuple(boundaries),
            n=n,
            n_real=float(n),
            d=d,
            event_fraction=d / n,
            stage_power=tuple(0.0 for _ in nu),
            spending_schedule=tuple(0.025 * v**3 for v in nu),
            sigma0=sigma,
            sigma1=univariate_approx(nu) if K == 1 else sigma,
        )

    return build
