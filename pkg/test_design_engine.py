# test_design_engine.py
import math

import numpy as np
import pytest
from scipy.optimize import brentq
from scipy.stats import multivariate_normal, norm

from engine.corr_assembly import GaussianApprox, StochasticSource
from engine.design_engine import (
    DesignSpec,
    MvnSettings,
    SpendingSpec,
    acceptance_probability,
    design,
    predict_stopping_times,
    sample_size_curve,
    schoenfeld_events,
    solve_boundaries,
    solve_sample_size,
    spending,
    spending_schedule,
    univariate_approx,
)
from engine.errors import DomainError, InfeasibleStageError, NoEffectError
from engine.stoch_predict import LOGRANK, WeightSpec, fixed_sample_size, predict_mu
from engine.surv_model import AccrualCensoring, two_piece

G01 = WeightSpec(0, 1)
Z_ALPHA = 1.959963984540054


def pair_approx(rho, times=(10.0,)):
    labels = ((0, LOGRANK), (0, G01))
    corr = np.array([[1.0, rho], [rho, 1.0]])
    return GaussianApprox(labels, times, np.zeros(2), corr, "H0")


def bivariate_boundary(rho, level):
    cov = np.array([[1.0, rho], [rho, 1.0]])

    def f(x):
        return multivariate_normal.cdf([x, x], mean=np.zeros(2), cov=cov, abseps=1e-8, releps=1e-8) - level

    return brentq(f, 0.0, 6.0, xtol=1e-8)


# ---------- spending ----------

def test_power_spending():
    assert spending("power", 0.025, 0.6) == pytest.approx(0.0054)
    assert spending("power", 0.025, 0.0) == 0.0
    assert spending("power", 0.025, 1.0) == pytest.approx(0.025)
    assert spending(SpendingSpec("power", 2.0), 0.025, 0.5) == pytest.approx(0.00625)


def test_other_families_spend_alpha_at_one():
    assert spending("obf", 0.025, 1.0) == pytest.approx(0.025)
    assert spending("obf", 0.025, 0.6) == pytest.approx(0.0038, abs=5e-5)
    assert spending("pocock", 0.025, 1.0) == pytest.approx(0.025)
    assert spending("obf", 0.025, 0.0) == 0.0


def test_spending_schedule_is_nondecreasing():
    for family in ("power", "obf", "pocock"):
        cum = spending_schedule(SpendingSpec(family), 0.025, [0.2, 0.5, 0.8, 1.0])
        assert all(b >= a for a, b in zip(cum, cum[1:]))


def test_spending_rejects_bad_input():
    with pytest.raises(DomainError):
        spending("power", 0.025, 1.2)
    with pytest.raises(DomainError):
        SpendingSpec("linear")
    with pytest.raises(DomainError):
        SpendingSpec("power", 0.0)


# ---------- boundaries ----------

def test_single_look_single_test_boundary():
    g = solve_boundaries(univariate_approx((1.0,)), 0.025, SpendingSpec(), (1.0,))
    assert g == pytest.approx((Z_ALPHA,), abs=1e-6)


def test_perfectly_correlated_pair_matches_single_test():
    g = solve_boundaries(pair_approx(1.0), 0.025, SpendingSpec(), (1.0,))
    assert g[0] == pytest.approx(Z_ALPHA, abs=1e-4)


def test_correlated_pair_against_bivariate_oracle():
    g = solve_boundaries(pair_approx(0.83), 0.025, SpendingSpec(), (1.0,))
    assert g[0] == pytest.approx(bivariate_boundary(0.83, 0.975), abs=1e-3)
    assert g[0] > Z_ALPHA


def test_two_look_single_test_boundaries():
    nu = (0.6, 1.0)
    g = solve_boundaries(univariate_approx(nu), 0.025, SpendingSpec(), nu)
    g1 = norm.isf(0.0054)
    assert g[0] == pytest.approx(g1, abs=1e-6)

    cov = np.array([[1.0, math.sqrt(0.6)], [math.sqrt(0.6), 1.0]])
    g2 = brentq(
        lambda x: multivariate_normal.cdf([g1, x], mean=np.zeros(2), cov=cov, abseps=1e-8, releps=1e-8) - 0.975,
        0.0, 6.0, xtol=1e-8,
    )
    assert g[1] == pytest.approx(g2, abs=2e-3)


def test_interim_at_almost_full_information():
    nu = (0.999, 1.0)
    g = solve_boundaries(univariate_approx(nu), 0.025, SpendingSpec(), nu)
    assert g[0] == pytest.approx(norm.isf(0.025 * 0.999**3), abs=1e-6)
    assert g[0] == pytest.approx(Z_ALPHA, abs=0.01)
    assert np.isfinite(g[1])


def test_fixed_leading_boundary_is_kept():
    nu = (0.6, 1.0)
    g = solve_boundaries(univariate_approx(nu), 0.025, SpendingSpec(), nu, fixed=(3.0,))
    assert g[0] == 3.0
    assert len(g) == 2


def test_stage_that_spends_nothing_is_infeasible():
    nu = (0.5, 1.0)
    with pytest.raises(InfeasibleStageError):
        solve_boundaries(univariate_approx(nu), 0.025, SpendingSpec("power", 2000.0), nu)


# ---------- stopping times ----------

def test_stopping_times_hit_event_targets(model07, uniform_ac):
    spec = DesignSpec(model07, uniform_ac)
    assert spec.monitor_mode == "events"
    t0 = predict_stopping_times(spec, "H0")
    t1 = predict_stopping_times(spec, "H1")
    assert t1[-1] == 18.0
    assert t0[0] < t0[1] < 18.0
    assert t1[0] < t1[1]

    full = StochasticSource(model07, uniform_ac, "H1").event_fraction(18.0)
    q = StochasticSource(model07, uniform_ac, "H0").event_fraction
    for nu, t in zip(spec.nu, t0):
        assert 0 <= q(t) - nu * full < 1e-6
        assert q(t - 1e-4) < nu * full


def test_information_monitoring(model07, uniform_ac):
    spec = DesignSpec(model07, uniform_ac, monitor_weight=1)
    assert spec.monitor_mode == "information"
    t1 = predict_stopping_times(spec, "H1")
    assert t1[0] < 18.0 and t1[1] == 18.0


def test_design_spec_validation(model07, uniform_ac):
    with pytest.raises(DomainError):
        DesignSpec(model07, uniform_ac, nu=(0.6, 0.9))
    with pytest.raises(DomainError):
        DesignSpec(model07, uniform_ac, nu=(0.6, 0.6, 1.0))
    with pytest.raises(DomainError):
        DesignSpec(model07, uniform_ac, alpha=1.5)
    with pytest.raises(DomainError):
        DesignSpec(model07, uniform_ac, monitor_weight=2)
    with pytest.raises(DomainError):
        DesignSpec(model07, uniform_ac, source="bootstrap")
    with pytest.raises(DomainError):
        MvnSettings(replicates=4)


# ---------- sample size ----------

def single_test_spec(model, ac, mvn, weight=LOGRANK):
    return DesignSpec(model, ac, combo=(weight,), nu=(1.0,), mvn=mvn)


def test_single_stage_design_matches_closed_form(model07, uniform_ac, fast_mvn):
    report = design(single_test_spec(model07, uniform_ac, fast_mvn))
    assert report.boundaries == pytest.approx((Z_ALPHA,), abs=1e-6)
    closed = fixed_sample_size(predict_mu(model07, uniform_ac, "H1", 18.0), 0.025, 0.1)
    assert abs(report.n - closed) <= 1
    assert report.d == math.ceil(report.n * report.event_fraction - 1e-9)
    assert report.stage_power[0] >= 0.9 - 1e-6
    assert report.stopping_times["H1"] == (18.0,)


def test_sample_size_shrinks_with_effect(uniform_ac, fast_mvn, lam):
    sizes = [design(single_test_spec(two_piece(lam, th, 2.0), uniform_ac, fast_mvn)).n for th in (0.5, 0.6, 0.7)]
    assert sizes[0] < sizes[1] < sizes[2]


def test_acceptance_probability_falls_with_n(model07, uniform_ac, fast_mvn):
    spec = single_test_spec(model07, uniform_ac, fast_mvn)
    sigma1 = GaussianApprox(
        ((0, LOGRANK),), (18.0,), np.array([predict_mu(model07, uniform_ac, "H1", 18.0)]), np.eye(1), "H1"
    )
    probs = [acceptance_probability(sigma1, (Z_ALPHA,), n, spec.mvn) for n in (100, 400, 900)]
    assert probs[0] > probs[1] > probs[2]


def test_no_effect_has_no_sample_size(uniform_ac, fast_mvn, lam):
    with pytest.raises(NoEffectError):
        design(single_test_spec(two_piece(lam, 1.0, 2.0), uniform_ac, fast_mvn))
    with pytest.raises(NoEffectError):
        solve_sample_size(pair_approx(0.8), (2.0,), 0.1, fast_mvn)


def test_exact_and_stochastic_sources_give_close_sizes(model07, uniform_ac, fast_mvn):
    spec = DesignSpec(model07, uniform_ac, nu=(1.0,), mvn=fast_mvn)
    sto = design(spec)
    exa = design(spec.with_(source="pred-exa"))
    assert exa.n == pytest.approx(sto.n, rel=0.01)
    assert exa.boundaries == pytest.approx(sto.boundaries, abs=5e-3)


def test_report_accessors(make_report):
    report = make_report((2.5, 2.0), d=597, n=927)
    assert report.event_targets == (359, 597)
    assert "n = 927   d = 597" in report.summary()
    out = report.to_dict()
    assert out["combo"] == [[0.0, 0.0], [0.0, 1.0]]
    assert out["event_targets"] == [359, 597]
    assert report.with_boundaries((3.0, 2.1), "naive").boundaries == (3.0, 2.1)


def test_schoenfeld_events():
    assert schoenfeld_events(0.025, 0.1, 0.5, math.log(0.7)) == 331
    assert schoenfeld_events(0.025, 0.1, 0.5, 2 * math.log(0.7)) == 83
    with pytest.raises(NoEffectError):
        schoenfeld_events(0.025, 0.1, 0.5, 0.0)
    with pytest.raises(DomainError):
        schoenfeld_events(0.025, 0.1, 0.0, math.log(0.7))


def test_curve_single_stage(model07, uniform_ac, fast_mvn, lam):
    spec = DesignSpec(model07, uniform_ac, nu=(1.0,), mvn=fast_mvn)
    rows = sample_size_curve(spec, lam, 0.7, [0.0, 3.0])
    assert [r["eps"] for r in rows] == [0.0, 3.0]
    ph, delayed = rows
    # log-rank is the better single test without delay, late emphasis with it
    assert ph["n_SLRT"] <= ph["n_WLRT"]
    assert delayed["n_WLRT"] <= delayed["n_SLRT"]
    for row in rows:
        assert row["n_MC"] <= 1.15 * min(row["n_SLRT"], row["n_WLRT"])
    with pytest.raises(DomainError):
        sample_size_curve(spec, lam, 0.7, [20.0])


# ---------- full designs ----------

@pytest.fixture(scope="module")
def reference_design():
    lam = math.log(2.0) / 6.0
    return design(DesignSpec(two_piece(lam, 0.7, 2.0), AccrualCensoring(14.0, 18.0)))


def test_reference_design_size(reference_design):
    assert reference_design.n == pytest.approx(927, abs=1)
    assert reference_design.d == pytest.approx(597, abs=1)
    assert reference_design.boundaries[0] > reference_design.boundaries[1]


def test_reference_design_stage_power(reference_design):
    # power spending with exponent 3 spends 0.0054 at the interim look
    assert reference_design.stage_power[0] == pytest.approx(0.378, abs=0.003)
    assert reference_design.stage_power[1] == pytest.approx(0.9, abs=0.002)


@pytest.mark.slow
@pytest.mark.parametrize(
    "theta, n, d, interim",
    [(0.7, 927, 597, 0.378), (0.6, 475, 297, 0.371), (0.5, 274, 166, 0.362)],
)
@pytest.mark.parametrize("source", ["pred-sto", "pred-exa"])
def test_reference_designs(uniform_ac, lam, theta, n, d, interim, source):
    report = design(DesignSpec(two_piece(lam, theta, 2.0), uniform_ac, source=source))
    assert report.n == pytest.approx(n, abs=1)
    assert report.d == pytest.approx(d, abs=1)
    assert report.stage_power[0] == pytest.approx(interim, abs=0.003)


@pytest.mark.slow
def test_boundaries_stable_in_mvn_accuracy(model07, uniform_ac):
    spec = DesignSpec(model07, uniform_ac)
    coarse = design(spec).boundaries
    fine = design(spec.with_(mvn=MvnSettings(accuracy=1e-6))).boundaries
    assert fine == pytest.approx(coarse, abs=5e-3)


@pytest.mark.slow
def test_delay_curve_crossover(model06, uniform_ac, lam):
    rows = sample_size_curve(DesignSpec(model06, uniform_ac), lam, 0.6, [0.0, 0.5, 0.9, 1.5, 2.5, 3.5])
    by_eps = {row["eps"]: row for row in rows}
    assert by_eps[0.0]["n_SLRT"] < min(by_eps[0.0]["n_WLRT"], by_eps[0.0]["n_MC"])
    for eps in (1.5, 2.5, 3.5):
        assert by_eps[eps]["n_WLRT"] < min(by_eps[eps]["n_SLRT"], by_eps[eps]["n_MC"])
    assert by_eps[0.9]["n_MC"] <= min(by_eps[0.9]["n_SLRT"], by_eps[0.9]["n_WLRT"])
    for row in rows:
        assert row["n_MC"] <= 1.10 * min(row["n_SLRT"], row["n_WLRT"])
