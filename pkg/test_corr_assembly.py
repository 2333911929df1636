# test_corr_assembly.py
import math

import numpy as np
import pandas as pd
import pytest

from engine.corr_assembly import (
    EstimatedSource,
    ExactSource,
    StochasticSource,
    VarianceSource,
    assemble,
    bias_flag,
    cross_cor,
    pair_rows,
    within_stage_cor,
    within_test_cor,
    write_correlation_report,
)
from engine.design_engine import DesignSpec, predict_stopping_times
from engine.errors import DegenerateError, DomainError, InconsistentCorrelationError
from engine.exact_predict import ExactScenario
from engine.stoch_predict import LOGRANK, WeightSpec

G01 = WeightSpec(0, 1)
G11 = WeightSpec(1, 1)


class LinearSource(VarianceSource):
    """V(w, t) = t * a_w and Cov(w1, w2, t) = t * c."""

    kind = "linear"

    def __init__(self, a, c, hypothesis="H0"):
        super().__init__(hypothesis)
        self.a, self.c = a, c

    def covariance(self, w1, w2, t):
        if w1 == w2:
            return t * self.a[w1]
        return t * self.c


class TableSource(VarianceSource):
    """Unit variances and fixed pairwise covariances, independent of t."""

    kind = "table"

    def __init__(self, cov):
        super().__init__("H0")
        self.cov = {frozenset(k): v for k, v in cov.items()}

    def covariance(self, w1, w2, t):
        return 1.0 if w1 == w2 else self.cov[frozenset((w1, w2))]


@pytest.fixture
def linear():
    return LinearSource({LOGRANK: 1.0, G01: 0.25}, 0.4)


def test_correlation_types(linear):
    assert within_stage_cor(linear, LOGRANK, G01, 3.0) == pytest.approx(0.4 / math.sqrt(0.25))
    assert within_stage_cor(linear, G01, G01, 3.0) == 1.0
    assert within_test_cor(linear, G01, 6.0, 10.0) == pytest.approx(math.sqrt(0.6))
    assert within_test_cor(linear, G01, 6.0, 6.0) == 1.0
    assert cross_cor(linear, LOGRANK, 6.0, G01, 10.0) == pytest.approx(0.8 * math.sqrt(0.6))
    with pytest.raises(DomainError):
        within_test_cor(linear, G01, 10.0, 6.0)
    with pytest.raises(DomainError):
        cross_cor(linear, LOGRANK, 10.0, G01, 10.0)


def test_assemble_layout_is_stage_major(linear):
    sigma = assemble(linear, [LOGRANK, G01], [6.0, 10.0])
    assert (sigma.K, sigma.M) == (2, 2)
    assert sigma.label_names() == ["G(0,0)@t1", "G(0,1)@t1", "G(0,0)@t2", "G(0,1)@t2"]
    np.testing.assert_allclose(np.diag(sigma.corr), 1.0)
    np.testing.assert_allclose(sigma.corr, sigma.corr.T)
    assert np.linalg.eigvalsh(sigma.corr).min() >= -1e-12
    assert sigma.corr[0, 1] == pytest.approx(0.8)
    assert sigma.corr[1, 3] == pytest.approx(math.sqrt(0.6))
    # G(0,0)@t1 vs G(0,1)@t2 bridges through G(0,1)@t1
    assert sigma.corr[0, 3] == pytest.approx(0.8 * math.sqrt(0.6))
    np.testing.assert_array_equal(sigma.mean, 0.0)
    assert not sigma.repaired

    first = sigma.stages(1)
    assert first.M == 1 and first.corr.shape == (2, 2)


def test_single_statistic(linear):
    sigma = assemble(linear, [LOGRANK], [10.0])
    np.testing.assert_array_equal(sigma.corr, [[1.0]])


def test_assemble_validation(linear):
    with pytest.raises(DomainError):
        assemble(linear, [], [10.0])
    with pytest.raises(DomainError):
        assemble(linear, [LOGRANK], [10.0, 6.0])
    with pytest.raises(DomainError):
        assemble(linear, [LOGRANK], [10.0], hypothesis="H1")


def test_inconsistent_correlations_raise():
    src = TableSource({(LOGRANK, G01): 0.9, (LOGRANK, G11): 0.9, (G01, G11): -0.9})
    with pytest.raises(InconsistentCorrelationError):
        assemble(src, [LOGRANK, G01, G11], [10.0])


def test_tiny_indefiniteness_is_repaired():
    src = TableSource({(LOGRANK, G01): 1.0, (LOGRANK, G11): 1.0, (G01, G11): 1.0 - 1e-9})
    sigma = assemble(src, [LOGRANK, G01, G11], [10.0])
    assert sigma.repaired
    np.testing.assert_allclose(np.diag(sigma.corr), 1.0)
    assert np.linalg.eigvalsh(sigma.corr).min() >= -1e-10


def test_zero_variance_is_degenerate():
    src = LinearSource({LOGRANK: 0.0, G01: 1.0}, 0.0)
    with pytest.raises(DegenerateError):
        within_stage_cor(src, LOGRANK, G01, 5.0)


def test_estimated_source_needs_frozen_data():
    with pytest.raises(DegenerateError):
        EstimatedSource({}).covariance(LOGRANK, G01, 2.0)


def test_default_design_null_correlations(model06, uniform_ac):
    spec = DesignSpec(model06, uniform_ac)
    times = predict_stopping_times(spec, "H0")
    sigma = assemble(StochasticSource(model06, uniform_ac, "H0"), spec.combo, times)
    # events-based monitoring makes the log-rank information fraction the event fraction
    assert sigma.corr[0, 2] == pytest.approx(math.sqrt(0.6), abs=1e-4)
    assert sigma.corr[0, 1] == pytest.approx(0.83, abs=0.01)


def test_default_design_null_correlation_values(model06, uniform_ac):
    spec = DesignSpec(model06, uniform_ac)
    times = predict_stopping_times(spec, "H0")
    corr = assemble(StochasticSource(model06, uniform_ac, "H0"), spec.combo, times).corr
    # labels: log-rank, G(0,1) at the interim, then both at the final look
    assert corr[0, 1] == pytest.approx(0.8300, abs=0.005)
    assert corr[0, 2] == pytest.approx(0.7729, abs=0.005)
    assert corr[1, 3] == pytest.approx(0.6389, abs=0.005)
    assert corr[1, 2] == pytest.approx(0.6415, abs=0.005)
    assert corr[0, 3] == pytest.approx(0.5304, abs=0.005)
    assert corr[2, 3] == pytest.approx(0.8452, abs=0.005)


def test_exact_and_stochastic_sources_agree(model07, uniform_ac):
    sto = StochasticSource(model07, uniform_ac, "H0")
    exa = ExactSource(ExactScenario.from_model(model07, uniform_ac), "H0")
    times = (10.5, 15.0)
    a = assemble(sto, [LOGRANK, G01], times).corr
    b = assemble(exa, [LOGRANK, G01], times).corr
    np.testing.assert_allclose(a, b, atol=0.01)


def test_alternative_means_come_from_drift(model07, uniform_ac):
    sto = StochasticSource(model07, uniform_ac, "H1")
    sigma = assemble(sto, [LOGRANK, G01], [12.0, 18.0])
    assert np.all(sigma.mean < 0)
    assert sigma.mean[2] == pytest.approx(sto.drift(LOGRANK, 18.0))


def test_bias_flags():
    assert bias_flag(0.95, 0.8329) == "**"
    assert bias_flag(0.88, 0.8329) == "*"
    assert bias_flag(0.84, 0.8329) == ""
    assert bias_flag(float("nan"), 0.8) == ""


def test_pair_rows_and_report(tmp_path):
    gold = np.array([[1.0, 0.8], [0.8, 1.0]])
    pred = {"pred-sto": np.array([[1.0, 0.95], [0.95, 1.0]])}
    rows = pair_rows(["a", "b"], gold, pred)
    assert len(rows) == 1
    assert rows[0]["pair"] == "a & b"
    assert rows[0]["bias_pred-sto"] == pytest.approx(0.15)
    assert rows[0]["flag"] == "**"

    path = write_correlation_report(rows, tmp_path / "corr.csv")
    df = pd.read_csv(path)
    assert list(df.columns) == ["pair", "gold", "pred-sto", "bias_pred-sto", "flag"]
