"""
stoch_predict.py

Discretised marching predictor for Fleming-Harrington weighted log-rank
statistics. Follow-up time is cut into b intervals per month; the at-risk
proportions of both arms are marched forward, and the per-subject mean,
variance, covariance and event fraction of the numerator are read off the
grid at any analysis time t.

All quantities are per subject; multiply by n for the statistic scale.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Iterable

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.stats import norm

from .errors import DegenerateError, DomainError, NoEffectError
from .surv_model import AccrualCensoring, Hypothesis, TwoArmModel

log = logging.getLogger(__name__)

DEFAULT_B = 30

# horizon cap for any prediction, in multiples of the accrual duration past tau
HORIZON_ACCRUALS = 5.0


@dataclass(frozen=True)
class WeightSpec:
    """Fleming-Harrington pair; w(s) = S(s-)^rho * (1 - S(s-))^gamma."""

    rho: float = 0.0
    gamma: float = 0.0

    def __post_init__(self):
        for name in ("rho", "gamma"):
            v = float(getattr(self, name))
            if not np.isfinite(v) or v < 0:
                raise DomainError(f"weight {name} must be finite and >= 0, got {v}")
            object.__setattr__(self, name, v)

    @classmethod
    def parse(cls, obj) -> "WeightSpec":
        if isinstance(obj, WeightSpec):
            return obj
        try:
            rho, gamma = obj
        except (TypeError, ValueError):
            raise DomainError(f"weight must be a [rho, gamma] pair, got {obj!r}") from None
        return cls(float(rho), float(gamma))

    @property
    def is_logrank(self) -> bool:
        return self.rho == 0.0 and self.gamma == 0.0

    @property
    def is_integer(self) -> bool:
        return float(self.rho).is_integer() and float(self.gamma).is_integer()

    @property
    def label(self) -> str:
        return f"G({self.rho:g},{self.gamma:g})"

    def mid(self, other: "WeightSpec") -> "WeightSpec":
        return WeightSpec((self.rho + other.rho) / 2.0, (self.gamma + other.gamma) / 2.0)

    def values(self, surv: ArrayLike) -> NDArray[np.float64]:
        s = np.asarray(surv, dtype=float)
        return np.power(s, self.rho) * np.power(1.0 - s, self.gamma)

    def as_list(self) -> list[float]:
        return [self.rho, self.gamma]


LOGRANK = WeightSpec(0.0, 0.0)


@dataclass(frozen=True, eq=False)
class PredictionGrid:
    """Per-interval arrays with s_j = j/b; the last interval may be partial."""

    b: int
    t: float
    hypothesis: Hypothesis
    weight: WeightSpec
    s: NDArray[np.float64]
    at_risk_trt: NDArray[np.float64]
    at_risk_ctl: NDArray[np.float64]
    hazard_trt: NDArray[np.float64]
    hazard_ctl: NDArray[np.float64]
    pooled_surv: NDArray[np.float64]
    weight_values: NDArray[np.float64]
    events: NDArray[np.float64]
    odds: NDArray[np.float64]
    ratio: NDArray[np.float64]

    @property
    def J(self) -> int:
        return int(self.s.size)

    def with_weight(self, weight: WeightSpec) -> "PredictionGrid":
        return replace(self, weight=weight, weight_values=weight.values(self.pooled_surv))


def horizon_cap(ac: AccrualCensoring) -> float:
    return ac.study_end + HORIZON_ACCRUALS * ac.accrual_duration


def march(
    model: TwoArmModel,
    ac: AccrualCensoring,
    hypothesis: Hypothesis,
    t: float,
    b: int = DEFAULT_B,
    weight: WeightSpec = LOGRANK,
) -> PredictionGrid:
    """
    March the at-risk proportions of both arms over [0, t).

    R_a(j+1) = R_a(j) * [1 - h_a(s_j)/b - L_j - c_a/b] where L_j is the share
    of subjects still followed at s_j whose follow-up window at analysis time
    t closes within the next step: [F(x_j + 1/b) - F(x_j)] / F(x_j) with
    x_j = t - s_j and F the accrual CDF. For uniform accrual and t - R on the
    grid this is I(s_j > t - R) / (b (t - s_j)); between grid points it
    interpolates, so every moment is continuous in t. The trailing partial
    step [J/b, t) enters with weight b t - J. Event increments carry the
    enrolled fraction at t (min(t/R, 1) for uniform accrual).
    """
    if not t > 0:
        raise DomainError(f"analysis time must be positive, got {t}")
    if int(b) != b or b < 1:
        raise DomainError(f"b must be a positive integer, got {b}")
    if t > horizon_cap(ac) + 1e-9:
        raise DomainError(f"analysis time {t} is past the prediction horizon {horizon_cap(ac)}")
    b = int(b)
    law = model.under(hypothesis)
    p = law.assign_prob

    J = int(math.floor(b * t + 1e-9))
    part = b * t - J
    steps = J + 1 if part > 1e-9 else J
    s = np.arange(steps, dtype=float) / b

    h1 = np.asarray(law.treatment.hazard(s), dtype=float)
    h0 = np.asarray(law.control.hazard(s), dtype=float)

    resid = t - s
    enrolled = np.asarray(ac.accrual_cdf(resid), dtype=float)
    closing = np.divide(
        np.asarray(ac.accrual_cdf(resid + 1.0 / b), dtype=float) - enrolled,
        enrolled,
        out=np.zeros_like(resid),
        where=enrolled > 0,
    )

    def _at_risk(start: float, h: NDArray[np.float64], c: float) -> NDArray[np.float64]:
        factor = np.clip(1.0 - (h + c) / b - closing, 0.0, 1.0)
        return start * np.cumprod(np.concatenate(([1.0], factor[:-1])))[:steps]

    r1 = _at_risk(p, h1, ac.censor_rate(1))
    r0 = _at_risk(1.0 - p, h0, ac.censor_rate(0))

    width = np.ones(steps)
    if steps > J:
        width[-1] = part
    events = (h0 * r0 + h1 * r1) / b * width * ac.accrual_cdf(t)
    surv = np.asarray(law.pooled_survival(s), dtype=float)
    odds = np.divide(r1, r0, out=np.ones_like(r1), where=r0 > 0)

    return PredictionGrid(
        b=b,
        t=float(t),
        hypothesis=hypothesis,
        weight=weight,
        s=s,
        at_risk_trt=r1,
        at_risk_ctl=r0,
        hazard_trt=h1,
        hazard_ctl=h0,
        pooled_surv=surv,
        weight_values=weight.values(surv),
        events=events,
        odds=odds,
        ratio=h1 / h0,
    )


def predict_mean(grid: PredictionGrid) -> float:
    phi, theta = grid.odds, grid.ratio
    shift = phi * theta / (1.0 + phi * theta) - phi / (1.0 + phi)
    return float(np.sum(grid.events * grid.weight_values * shift))


def _information(grid: PredictionGrid, w1: NDArray[np.float64], w2: NDArray[np.float64]) -> float:
    phi = grid.odds
    return float(np.sum(grid.events * w1 * w2 * phi / (1.0 + phi) ** 2))


def predict_variance(grid: PredictionGrid) -> float:
    return _information(grid, grid.weight_values, grid.weight_values)


def predict_covariance(grid: PredictionGrid, w1: WeightSpec, w2: WeightSpec) -> float:
    """Numerator covariance of two weights on the same grid (product-weight form)."""
    return _information(grid, w1.values(grid.pooled_surv), w2.values(grid.pooled_surv))


def expected_event_fraction(grid: PredictionGrid) -> float:
    return float(np.sum(grid.events))


def predict_mu(
    model: TwoArmModel,
    ac: AccrualCensoring,
    hypothesis: Hypothesis,
    t: float,
    b: int = DEFAULT_B,
    weight: WeightSpec = LOGRANK,
) -> float:
    """Per-unit drift E/sqrt(V); the standardized statistic has mean sqrt(n)*mu."""
    grid = march(model, ac, hypothesis, t, b, weight)
    var = predict_variance(grid)
    if var <= 0:
        raise DegenerateError(
            f"predicted variance of {weight.label} at t={t} is {var}; no events expected yet"
        )
    return predict_mean(grid) / math.sqrt(var)


def fixed_sample_size(mu: float, alpha: float, beta: float) -> int:
    """Single-stage size n = ceil(((z_alpha + z_beta) / mu)^2)."""
    if mu == 0:
        raise NoEffectError("drift is zero; no finite sample size reaches the target power")
    z = norm.ppf(1.0 - alpha) + norm.ppf(1.0 - beta)
    return int(math.ceil((z / abs(mu)) ** 2))


def drift_vector(
    model: TwoArmModel,
    ac: AccrualCensoring,
    weights: Iterable[WeightSpec],
    times: Iterable[float],
    b: int = DEFAULT_B,
) -> NDArray[np.float64]:
    """H1 drifts stacked stage-major: [mu(w_1,t_1), ..., mu(w_K,t_1), mu(w_1,t_2), ...]."""
    weights, times = list(weights), list(times)
    out = []
    for t in times:
        grid = march(model, ac, "H1", t, b)
        for w in weights:
            g = grid.with_weight(w)
            var = predict_variance(g)
            if var <= 0:
                raise DegenerateError(f"predicted variance of {w.label} at t={t} is zero")
            out.append(predict_mean(g) / math.sqrt(var))
    log.debug("H1 drifts at %s: %s", times, out)
    return np.asarray(out)
