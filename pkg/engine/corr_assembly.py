"""
corr_assembly.py

Correlation matrices of stacked weighted log-rank statistics
[G_1(t_1), ..., G_K(t_1), G_1(t_2), ..., G_K(t_M)].

Three entry types:
  - within-stage  Cov(w1, w2, t) / sqrt(V(w1, t) V(w2, t))
  - within-test   sqrt(V(w, t1) / V(w, t2))
  - cross         within-stage(w1, w2, t1) * within-test(w2, t1, t2)

Variances and covariances come from a VarianceSource: the marching
predictor, the closed forms, or data frozen at the stage times.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from numpy.typing import NDArray

from .errors import DegenerateError, DomainError, InconsistentCorrelationError
from .exact_predict import ExactScenario, exact_covariance, exact_event_fraction, exact_variance
from .stoch_predict import (
    DEFAULT_B,
    PredictionGrid,
    WeightSpec,
    expected_event_fraction,
    march,
    predict_covariance,
    predict_mean,
)
from .surv_model import AccrualCensoring, Hypothesis, TwoArmModel
from .wlrt_engine import FrozenView, estimate_covariance

log = logging.getLogger(__name__)

PSD_REPAIR_TOL = 1e-8


# ---------- variance sources ----------

class VarianceSource:
    """Supplies V(G_w(t)) and Cov(G_w1(t), G_w2(t)); subclasses pick the method."""

    kind = "abstract"

    def __init__(self, hypothesis: Hypothesis):
        if hypothesis not in ("H0", "H1"):
            raise DomainError(f"hypothesis must be 'H0' or 'H1', got {hypothesis!r}")
        self.hypothesis = hypothesis

    def covariance(self, w1: WeightSpec, w2: WeightSpec, t: float) -> float:
        raise NotImplementedError

    def variance(self, weight: WeightSpec, t: float) -> float:
        return self.covariance(weight, weight, t)

    def drift(self, weight: WeightSpec, t: float) -> float:
        """Per-unit mean of the standardized statistic; zero unless overridden under H1."""
        return 0.0


class StochasticSource(VarianceSource):
    kind = "pred-sto"

    def __init__(self, model: TwoArmModel, ac: AccrualCensoring, hypothesis: Hypothesis,
                 b: int = DEFAULT_B):
        super().__init__(hypothesis)
        self.model = model
        self.ac = ac
        self.b = b
        self._grids: Dict[float, PredictionGrid] = {}

    def grid(self, t: float) -> PredictionGrid:
        if t not in self._grids:
            self._grids[t] = march(self.model, self.ac, self.hypothesis, t, self.b)
        return self._grids[t]

    def covariance(self, w1: WeightSpec, w2: WeightSpec, t: float) -> float:
        return predict_covariance(self.grid(t), w1, w2)

    def drift(self, weight: WeightSpec, t: float) -> float:
        if self.hypothesis == "H0":
            return 0.0
        g = self.grid(t).with_weight(weight)
        var = self.variance(weight, t)
        if var <= 0:
            raise DegenerateError(f"predicted variance of {weight.label} at t={t:g} is zero")
        return predict_mean(g) / math.sqrt(var)

    def event_fraction(self, t: float) -> float:
        return expected_event_fraction(self.grid(t))


class ExactSource(VarianceSource):
    kind = "pred-exa"

    def __init__(self, scenario: ExactScenario, hypothesis: Hypothesis,
                 drift_source: Optional[VarianceSource] = None):
        super().__init__(hypothesis)
        self.scenario = scenario
        self.drift_source = drift_source

    def variance(self, weight: WeightSpec, t: float) -> float:
        return exact_variance(self.hypothesis, weight, t, self.scenario)

    def covariance(self, w1: WeightSpec, w2: WeightSpec, t: float) -> float:
        return exact_covariance(w1, w2, t, self.hypothesis, self.scenario)

    def drift(self, weight: WeightSpec, t: float) -> float:
        # the closed forms carry no mean; H1 drift comes from the marching predictor
        if self.hypothesis == "H0" or self.drift_source is None:
            return 0.0
        return self.drift_source.drift(weight, t)

    def event_fraction(self, t: float) -> float:
        return exact_event_fraction(self.hypothesis, t, self.scenario)


class EstimatedSource(VarianceSource):
    """
    Data-driven source over the stages observed so far. A stage-m boundary
    only reads the leading m-stage block, so later stages are never needed.
    """

    kind = "est"

    def __init__(self, views: Mapping[float, FrozenView], hypothesis: Hypothesis = "H0"):
        super().__init__(hypothesis)
        self.views = dict(views)

    def covariance(self, w1: WeightSpec, w2: WeightSpec, t: float) -> float:
        view = self.views.get(t)
        if view is None:
            raise DegenerateError(f"no data frozen at t={t:g}")
        return estimate_covariance(view, w1, w2)


# ---------- correlation types ----------

def within_stage_cor(src: VarianceSource, w1: WeightSpec, w2: WeightSpec, t: float) -> float:
    v1 = src.variance(w1, t)
    v2 = src.variance(w2, t)
    if v1 <= 0 or v2 <= 0:
        raise DegenerateError(
            f"zero variance at t={t:g} ({w1.label}: {v1:.3g}, {w2.label}: {v2:.3g})"
        )
    if w1 == w2:
        return 1.0
    r = src.covariance(w1, w2, t) / math.sqrt(v1 * v2)
    return float(min(1.0, max(-1.0, r)))


def within_test_cor(src: VarianceSource, w: WeightSpec, t1: float, t2: float) -> float:
    if t1 > t2:
        raise DomainError(f"within-test correlation needs t1 <= t2, got {t1} > {t2}")
    if t1 == t2:
        return 1.0
    v2 = src.variance(w, t2)
    if v2 <= 0:
        raise DegenerateError(f"zero variance of {w.label} at t={t2:g}")
    frac = src.variance(w, t1) / v2
    if frac > 1.0:
        log.warning("information fraction of %s over (%g, %g) is %.4f > 1; capped", w.label, t1, t2, frac)
        frac = 1.0
    return math.sqrt(max(frac, 0.0))


def cross_cor(src: VarianceSource, w1: WeightSpec, t1: float, w2: WeightSpec, t2: float) -> float:
    """Bridged through w2 evaluated at t1."""
    if not t1 < t2:
        raise DomainError(f"cross correlation needs t1 < t2, got {t1}, {t2}")
    return within_stage_cor(src, w1, w2, t1) * within_test_cor(src, w2, t1, t2)


# ---------- assembly ----------

Label = Tuple[int, WeightSpec]


@dataclass(frozen=True, eq=False)
class GaussianApprox:
    labels: Tuple[Label, ...]
    times: Tuple[float, ...]
    mean: NDArray[np.float64]
    corr: NDArray[np.float64]
    hypothesis: Hypothesis
    repaired: bool = False

    @property
    def K(self) -> int:
        return len(self.labels) // len(self.times)

    @property
    def M(self) -> int:
        return len(self.times)

    def stages(self, m: int) -> "GaussianApprox":
        """Leading block covering stages 1..m."""
        k = m * self.K
        return GaussianApprox(
            self.labels[:k], self.times[:m], self.mean[:k], self.corr[:k, :k],
            self.hypothesis, self.repaired,
        )

    def label_names(self) -> List[str]:
        return [f"{w.label}@t{m + 1}" for m, w in self.labels]

    def to_dict(self) -> dict:
        return {
            "hypothesis": self.hypothesis,
            "labels": self.label_names(),
            "times": list(self.times),
            "mean": [float(x) for x in self.mean],
            "corr": [[float(x) for x in row] for row in self.corr],
            "repaired": self.repaired,
        }


def _nearest_correlation(corr: NDArray[np.float64]) -> NDArray[np.float64]:
    vals, vecs = np.linalg.eigh(corr)
    fixed = (vecs * np.clip(vals, 0.0, None)) @ vecs.T
    d = np.sqrt(np.diag(fixed))
    fixed = fixed / np.outer(d, d)
    fixed = (fixed + fixed.T) / 2.0
    np.fill_diagonal(fixed, 1.0)
    return fixed


def correlation_entry(src: VarianceSource, a: Label, b: Label, times: Sequence[float]) -> float:
    (m1, w1), (m2, w2) = sorted((a, b), key=lambda lab: lab[0])
    t1, t2 = times[m1], times[m2]
    if m1 == m2:
        return within_stage_cor(src, w1, w2, t1)
    if w1 == w2:
        return within_test_cor(src, w1, t1, t2)
    return cross_cor(src, w1, t1, w2, t2)


def assemble(
    src: VarianceSource,
    weights: Sequence[WeightSpec],
    times: Sequence[float],
    hypothesis: Optional[Hypothesis] = None,
) -> GaussianApprox:
    weights = [WeightSpec.parse(w) for w in weights]
    times = [float(t) for t in times]
    if not weights or not times:
        raise DomainError("assemble needs at least one weight and one stage time")
    if any(b <= a for a, b in zip(times, times[1:])):
        raise DomainError(f"stage times must be strictly increasing, got {times}")
    hyp = hypothesis or src.hypothesis
    if hyp != src.hypothesis:
        raise DomainError(f"source predicts under {src.hypothesis}, requested {hyp}")

    labels: List[Label] = [(m, w) for m in range(len(times)) for w in weights]
    d = len(labels)
    corr = np.eye(d)
    for i in range(d):
        for j in range(i + 1, d):
            corr[i, j] = corr[j, i] = correlation_entry(src, labels[i], labels[j], times)

    repaired = False
    smallest = float(np.linalg.eigvalsh(corr).min()) if d > 1 else 1.0
    if smallest < -PSD_REPAIR_TOL:
        raise InconsistentCorrelationError(
            f"assembled {src.kind} correlation matrix has eigenvalue {smallest:.3e}"
        )
    if smallest < 0:
        log.warning("repairing %s correlation matrix (smallest eigenvalue %.2e)", src.kind, smallest)
        corr = _nearest_correlation(corr)
        repaired = True

    if hyp == "H0":
        mean = np.zeros(d)
    else:
        mean = np.array([src.drift(w, times[m]) for m, w in labels])
    return GaussianApprox(tuple(labels), tuple(times), mean, corr, hyp, repaired)


# ---------- correlation report ----------

def bias_flag(pred: float, gold: float) -> str:
    """'**' when off by more than 10% of gold, '*' for more than 5%."""
    if not np.isfinite(pred) or not np.isfinite(gold) or gold == 0:
        return ""
    rel = abs(pred - gold) / abs(gold)
    if rel > 0.10:
        return "**"
    if rel > 0.05:
        return "*"
    return ""


def pair_rows(
    names: Sequence[str],
    gold: NDArray[np.float64],
    predicted: Mapping[str, NDArray[np.float64]],
) -> List[dict]:
    """One row per upper-triangle pair, with each method's value and bias."""
    rows = []
    d = len(names)
    for i in range(d):
        for j in range(i + 1, d):
            row = {"pair": f"{names[i]} & {names[j]}", "gold": float(gold[i, j])}
            flags = []
            for method, mat in predicted.items():
                val = float(mat[i, j])
                row[method] = val
                row[f"bias_{method}"] = val - row["gold"]
                flags.append(bias_flag(val, row["gold"]))
            row["flag"] = max(flags, key=len) if flags else ""
            rows.append(row)
    return rows


def write_correlation_report(rows: Sequence[dict], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(list(rows)).to_csv(path, index=False, float_format="%.6g")
    return path
