# test_exact_predict.py
import math

import pytest
from scipy.integrate import quad

from engine.errors import DomainError, UnsupportedWeightError
from engine.exact_predict import (
    ExactScenario,
    advanced_h,
    exact_covariance,
    exact_event_fraction,
    exact_variance,
    util_uv,
)
from engine.stoch_predict import LOGRANK, WeightSpec, expected_event_fraction, march, predict_variance
from engine.surv_model import AccrualCensoring, two_piece

LAM = math.log(2.0) / 6.0
G01 = WeightSpec(0, 1)


@pytest.fixture
def sc():
    return ExactScenario(LAM, 0.7, 2.0, 14.0, 18.0, 0.5)


@pytest.fixture
def model():
    return two_piece(LAM, 0.7, 2.0)


def kernel(x, t=18.0, R=14.0):
    return min((t - x) / R, 1.0)


def oracle(integrand, t=18.0):
    val, _ = quad(integrand, 0.0, t, points=[2.0, max(t - 14.0, 0.0)], limit=200, epsabs=1e-13)
    return val


@pytest.mark.parametrize(
    "t, eps, k",
    [(18.0, 2.0, 1.0), (18.0, 6.0, 1.7), (18.0, 18.0, 2.0), (10.0, 10.0, 1.0), (5.0, 2.0, 3.0), (30.0, 30.0, 0.5)],
)
def test_util_uv_matches_quadrature(t, eps, k):
    want, _ = quad(
        lambda x: kernel(x, t) * math.exp(-k * LAM * x) * LAM,
        0.0,
        min(eps, t),
        points=[max(t - 14.0, 0.0)] if 0 < t - 14.0 < min(eps, t) else None,
        epsabs=1e-13,
    )
    assert util_uv(t, eps, k, LAM, 14.0) == pytest.approx(want, rel=1e-9, abs=1e-13)


def test_util_uv_rejects_bad_input():
    with pytest.raises(DomainError):
        util_uv(18.0, 2.0, 0.0, LAM, 14.0)
    with pytest.raises(DomainError):
        util_uv(-1.0, 2.0, 1.0, LAM, 14.0)


def test_scenario_from_model(model, uniform_ac):
    sc = ExactScenario.from_model(model, uniform_ac)
    assert (sc.lam, sc.theta, sc.eps, sc.R, sc.tau) == pytest.approx((LAM, 0.7, 2.0, 14.0, 18.0))
    with pytest.raises(DomainError):
        ExactScenario.from_model(model, AccrualCensoring.staircase())
    with pytest.raises(DomainError):
        ExactScenario.from_model(model, uniform_ac.with_yearly_censoring(0.1, 0.1))


def test_event_fractions(sc, model):
    assert exact_event_fraction("H0", 18.0, sc) == pytest.approx(0.6877833, abs=1e-6)
    want = oracle(lambda x: kernel(x) * model.pooled_density(x))
    assert exact_event_fraction("H1", 18.0, sc) == pytest.approx(want, rel=1e-8)
    assert want == pytest.approx(0.64183, abs=1e-4)


def test_h1_and_h0_match_quadrature(sc, model):
    s1, s0 = model.treatment.survival, model.control.survival
    want1 = oracle(lambda x: kernel(x) * s1(x) ** 2 * s0(x) * model.treatment.density(x))
    want0 = oracle(lambda x: kernel(x) * s1(x) * s0(x) ** 3 * model.control.density(x))
    assert advanced_h("h1", 18.0, 2, 1, scenario=sc) == pytest.approx(want1, rel=1e-8)
    assert advanced_h("h0", 18.0, 1, 3, scenario=sc) == pytest.approx(want0, rel=1e-8)
    with pytest.raises(DomainError):
        advanced_h("h2", 18.0, 1, scenario=sc)


def test_logrank_null_variance(sc):
    assert exact_variance("H0", LOGRANK, 18.0, sc) == pytest.approx(0.25 * 0.6877833, abs=1e-6)
    assert exact_variance("H0", LOGRANK, 18.0, sc, n=100) == pytest.approx(25 * 0.6877833, abs=1e-4)


@pytest.mark.parametrize("hyp", ["H0", "H1"])
def test_weighted_variance_matches_quadrature(sc, model, hyp):
    law = model.under(hyp)
    want = 0.25 * oracle(lambda x: kernel(x) * (1.0 - law.pooled_survival(x)) ** 2 * law.pooled_density(x))
    assert exact_variance(hyp, G01, 18.0, sc) == pytest.approx(want, rel=1e-8)


@pytest.mark.parametrize("hyp", ["H0", "H1"])
def test_covariance_matches_quadrature(sc, model, hyp):
    law = model.under(hyp)
    want = 0.25 * oracle(lambda x: kernel(x) * (1.0 - law.pooled_survival(x)) * law.pooled_density(x))
    assert exact_covariance(LOGRANK, G01, 18.0, hyp, sc) == pytest.approx(want, rel=1e-8)
    assert exact_covariance(G01, G01, 18.0, hyp, sc) == pytest.approx(exact_variance(hyp, G01, 18.0, sc))


def test_interim_time_before_accrual_ends(sc, model):
    law = model.under("H1")
    want = 0.25 * oracle(lambda x: kernel(x, 10.0) * (1.0 - law.pooled_survival(x)) ** 2 * law.pooled_density(x), 10.0)
    assert exact_variance("H1", G01, 10.0, sc) == pytest.approx(want, rel=1e-8)


def test_non_integer_weights_rejected(sc):
    with pytest.raises(UnsupportedWeightError):
        exact_variance("H0", WeightSpec(0.5, 0), 18.0, sc)
    with pytest.raises(UnsupportedWeightError):
        exact_covariance(LOGRANK, WeightSpec(0, 0.5), 18.0, "H0", sc)


def test_marching_predictor_agrees_under_null(model, uniform_ac, sc):
    grid = march(model, uniform_ac, "H0", 18.0, b=30)
    assert predict_variance(grid) == pytest.approx(exact_variance("H0", LOGRANK, 18.0, sc), rel=0.005)
    assert expected_event_fraction(grid) == pytest.approx(exact_event_fraction("H0", 18.0, sc), rel=0.005)
