"""
exact_predict.py

Closed-form variances and covariances of weighted log-rank numerators for
the two-piece exponential model under uniform accrual and administrative
censoring. Everything reduces to the kernel

    int_0^t min((t - x)/R, 1) * exp(-k*lam*x) * lam * 1(x <= eps) dx

handled by util_uv, plus binomial expansions of the pooled survival.
Values are per subject unless n is given.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import DomainError, UnsupportedWeightError
from .stoch_predict import WeightSpec
from .surv_model import AccrualCensoring, Hypothesis, TwoArmModel

HKind = Literal["h1", "h0", "h_tilde"]

# exp(-x) is taken as 0 beyond this exponent
EXP_CLAMP = 700.0


def _exp_neg(x: float) -> float:
    return 0.0 if x > EXP_CLAMP else math.exp(-x)


@dataclass(frozen=True)
class ExactScenario:
    lam: float
    theta: float
    eps: float
    R: float
    tau: float
    p: float = 0.5

    def __post_init__(self):
        if not self.lam > 0 or not self.theta > 0:
            raise DomainError(f"lambda and theta must be positive, got {self.lam}, {self.theta}")
        if self.eps < 0:
            raise DomainError(f"eps must be >= 0, got {self.eps}")
        if not 0 < self.R <= self.tau:
            raise DomainError(f"need 0 < R <= tau, got R={self.R}, tau={self.tau}")
        if not 0 < self.p < 1:
            raise DomainError(f"p must lie in (0, 1), got {self.p}")

    @property
    def c(self) -> float:
        """Treatment survival continuity constant exp(-(1 - theta)*lam*eps)."""
        return math.exp(-(1.0 - self.theta) * self.lam * self.eps)

    @classmethod
    def from_model(cls, model: TwoArmModel, ac: AccrualCensoring) -> "ExactScenario":
        """Read (lam, theta, eps) off a two-piece model; other shapes are rejected."""
        if not ac.is_uniform or any(c > 0 for c in ac.censor_rates):
            raise DomainError("closed forms need uniform accrual and administrative censoring only")
        ctl = np.asarray(model.control.hazards)
        trt = np.asarray(model.treatment.hazards)
        lam = float(ctl[0])
        if not np.allclose(ctl, lam, rtol=1e-12, atol=0):
            raise DomainError(f"control arm must be exponential, got hazards {tuple(ctl)}")
        changed = np.flatnonzero(~np.isclose(trt, lam, rtol=1e-12, atol=0))
        if changed.size == 0:
            return cls(lam, 1.0, 0.0, ac.accrual_duration, ac.study_end, model.assign_prob)
        first = int(changed[0])
        post = trt[first:]
        if not np.allclose(post, post[0], rtol=1e-12, atol=0):
            raise DomainError(f"treatment arm is not two-piece, got hazards {tuple(trt)}")
        return cls(
            lam,
            float(post[0] / lam),
            float(model.change_points[first]),
            ac.accrual_duration,
            ac.study_end,
            model.assign_prob,
        )


# ---------- utility integrals ----------

def util_v(t: float, eps: float, k: float, lam: float) -> float:
    return (1.0 / k) * (1.0 - _exp_neg(k * lam * eps))


def util_u(t: float, eps: float, k: float, lam: float, R: float) -> float:
    lo = max(t - R, 0.0)
    hi = min(eps, t)
    e_lo = _exp_neg(k * lam * lo)
    e_hi = _exp_neg(k * lam * hi)
    return (
        (1.0 / k) * (1.0 - e_lo)
        + min(R, t) / (k * R) * e_lo
        - max(t - eps, 0.0) / (k * R) * e_hi
        + (e_hi - e_lo) / (k * k * R * lam)
    )


def util_uv(t: float, eps: float, k: float, lam: float, R: float) -> float:
    if k <= 0:
        raise DomainError(f"k must be positive, got {k}")
    if t < 0 or eps < 0:
        raise DomainError(f"t and eps must be >= 0, got t={t}, eps={eps}")
    if eps <= t - R:
        return util_v(t, eps, k, lam)
    return util_u(t, eps, k, lam, R)


def h1(t: float, k1: float, k2: float, sc: ExactScenario) -> float:
    """-int min((t-x)/R,1) S1^k1 S0^k2 dS1."""
    if k1 < 0 or k2 < 0:
        raise DomainError(f"h1 needs k1, k2 >= 0, got {k1}, {k2}")
    lam, th, eps, R = sc.lam, sc.theta, sc.eps, sc.R
    k_post = th * (k1 + 1.0) + k2
    return util_uv(t, eps, k1 + k2 + 1.0, lam, R) + sc.c ** (k1 + 1.0) * th * (
        util_uv(t, t, k_post, lam, R) - util_uv(t, eps, k_post, lam, R)
    )


def h0(t: float, k1: float, k2: float, sc: ExactScenario) -> float:
    """-int min((t-x)/R,1) S1^k1 S0^k2 dS0."""
    if k1 < 0 or k2 < 0:
        raise DomainError(f"h0 needs k1, k2 >= 0, got {k1}, {k2}")
    lam, th, eps, R = sc.lam, sc.theta, sc.eps, sc.R
    k_post = th * k1 + k2 + 1.0
    return util_uv(t, eps, k1 + k2 + 1.0, lam, R) + sc.c ** k1 * (
        util_uv(t, t, k_post, lam, R) - util_uv(t, eps, k_post, lam, R)
    )


def h_tilde(t: float, k: int, sc: ExactScenario) -> float:
    """-int min((t-x)/R,1) S^k dS for the pooled S = p*S1 + (1-p)*S0."""
    if k < 0 or int(k) != k:
        raise DomainError(f"h_tilde needs an integer k >= 0, got {k}")
    k = int(k)
    p = sc.p
    total = 0.0
    for i in range(k + 1):
        mix = math.comb(k, i) * p**i * (1.0 - p) ** (k - i)
        total += mix * (p * h1(t, i, k - i, sc) + (1.0 - p) * h0(t, i, k - i, sc))
    return total


def advanced_h(kind: HKind, t: float, *k: float, scenario: ExactScenario) -> float:
    if kind == "h1":
        return h1(t, *k, scenario)
    if kind == "h0":
        return h0(t, *k, scenario)
    if kind == "h_tilde":
        return h_tilde(t, *k, scenario)
    raise DomainError(f"unknown advanced function {kind!r}")


# ---------- variances ----------

def _power_integral(hypothesis: Hypothesis, a: int, c: int, t: float, sc: ExactScenario) -> float:
    """int min((t-x)/R,1) S^a (1-S)^c f dx by binomial expansion of (1-S)^c."""
    total = 0.0
    for i in range(c + 1):
        coef = math.comb(c, i) * (-1.0) ** i
        if hypothesis == "H0":
            total += coef * util_uv(t, t, a + i + 1.0, sc.lam, sc.R)
        else:
            total += coef * h_tilde(t, a + i, sc)
    return total


def _integer_powers(rho_sum: float, gamma_sum: float) -> tuple[int, int]:
    if not (float(rho_sum).is_integer() and float(gamma_sum).is_integer()):
        raise UnsupportedWeightError(
            f"closed forms need integer weight powers, got rho={rho_sum:g}, gamma={gamma_sum:g}"
        )
    return int(rho_sum), int(gamma_sum)


def exact_variance(
    hypothesis: Hypothesis, weight: WeightSpec, t: float, scenario: ExactScenario, n: float = 1.0
) -> float:
    if hypothesis not in ("H0", "H1"):
        raise DomainError(f"hypothesis must be 'H0' or 'H1', got {hypothesis!r}")
    if not weight.is_integer:
        raise UnsupportedWeightError(f"{weight.label} has non-integer parameters")
    a, c = _integer_powers(2 * weight.rho, 2 * weight.gamma)
    p = scenario.p
    return n * p * (1.0 - p) * _power_integral(hypothesis, a, c, t, scenario)


def exact_covariance(
    w1: WeightSpec,
    w2: WeightSpec,
    t: float,
    hypothesis: Hypothesis,
    scenario: ExactScenario,
    n: float = 1.0,
) -> float:
    """Variance at the mid weight, i.e. integrand S^(rho1+rho2) (1-S)^(gamma1+gamma2)."""
    if hypothesis not in ("H0", "H1"):
        raise DomainError(f"hypothesis must be 'H0' or 'H1', got {hypothesis!r}")
    a, c = _integer_powers(w1.rho + w2.rho, w1.gamma + w2.gamma)
    p = scenario.p
    return n * p * (1.0 - p) * _power_integral(hypothesis, a, c, t, scenario)


def exact_event_fraction(hypothesis: Hypothesis, t: float, scenario: ExactScenario) -> float:
    """Probability that a planned subject has an observed event by calendar time t."""
    if hypothesis == "H0":
        return util_uv(t, t, 1.0, scenario.lam, scenario.R)
    return h_tilde(t, 0, scenario)
