"""
surv_model.py

Piecewise-exponential event-time laws for the two arms of a trial, the
two-piece delayed-effect special case, and the accrual / censoring setup
that the predictors and the trial simulator share.

Times are in months throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Literal, Sequence, Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import DomainError


Hypothesis = Literal["H0", "H1"]

# yearly -> monthly censoring conversion uses a 12-month window
MONTHS_PER_YEAR = 12.0


def _as_times(s: ArrayLike, what: str = "s") -> Tuple[NDArray[np.float64], bool]:
    arr = np.asarray(s, dtype=float)
    scalar = arr.ndim == 0
    arr = np.atleast_1d(arr)
    if np.any(np.isnan(arr)) or np.any(arr < 0):
        raise DomainError(f"{what} must be >= 0, got {s!r}")
    return arr, scalar


def _out(values: NDArray[np.float64], scalar: bool):
    return float(values[0]) if scalar else values


@dataclass(frozen=True)
class PiecewiseExponential:
    """
    Survival law with constant hazard on each interval.

    Attributes:
        change_points: interval starts 0 = e_0 < e_1 < ... < e_{Q-1}; the
            last interval extends to infinity.
        hazards: per-interval hazard rates (events / month), length Q.
    """

    change_points: Tuple[float, ...]
    hazards: Tuple[float, ...]

    def __post_init__(self):
        cps = tuple(float(c) for c in self.change_points)
        hz = tuple(float(h) for h in self.hazards)
        if not cps or cps[0] != 0.0:
            raise DomainError(f"change_points must start at 0, got {cps}")
        if len(cps) != len(hz):
            raise DomainError(
                f"{len(cps)} change points but {len(hz)} hazards; lengths must match"
            )
        if any(b <= a for a, b in zip(cps, cps[1:])):
            raise DomainError(f"change_points must be strictly increasing, got {cps}")
        if any(not np.isfinite(h) or h <= 0 for h in hz):
            raise DomainError(f"hazards must be positive and finite, got {hz}")
        object.__setattr__(self, "change_points", cps)
        object.__setattr__(self, "hazards", hz)

    @classmethod
    def exponential(cls, rate: float) -> "PiecewiseExponential":
        return cls((0.0,), (rate,))

    @classmethod
    def from_median(cls, median: float) -> "PiecewiseExponential":
        if median <= 0:
            raise DomainError(f"median must be positive, got {median}")
        return cls.exponential(np.log(2.0) / median)

    # ---------- interval geometry ----------

    @property
    def _starts(self) -> NDArray[np.float64]:
        return np.asarray(self.change_points)

    @property
    def _widths(self) -> NDArray[np.float64]:
        return np.append(np.diff(self._starts), np.inf)

    @property
    def _rates(self) -> NDArray[np.float64]:
        return np.asarray(self.hazards)

    def _interval_index(self, s: NDArray[np.float64]) -> NDArray[np.intp]:
        # right-continuous: a change point belongs to the interval it opens
        return np.searchsorted(self._starts, s, side="right") - 1

    # ---------- law ----------

    def cumulative_hazard(self, s: ArrayLike):
        t, scalar = _as_times(s)
        exposure = np.clip(t[:, None] - self._starts[None, :], 0.0, self._widths[None, :])
        return _out(exposure @ self._rates, scalar)

    def survival(self, s: ArrayLike):
        t, scalar = _as_times(s)
        return _out(np.exp(-np.atleast_1d(self.cumulative_hazard(t))), scalar)

    def hazard(self, s: ArrayLike):
        t, scalar = _as_times(s)
        return _out(self._rates[self._interval_index(t)], scalar)

    def density(self, s: ArrayLike):
        t, scalar = _as_times(s)
        return _out(
            np.atleast_1d(self.survival(t)) * self._rates[self._interval_index(t)], scalar
        )

    def inverse_survival(self, u: ArrayLike) -> NDArray[np.float64]:
        """Times t with S(t) = u, for u in (0, 1]."""
        u = np.atleast_1d(np.asarray(u, dtype=float))
        if np.any((u <= 0) | (u > 1)):
            raise DomainError("inverse_survival needs u in (0, 1]")
        target = -np.log(u)
        h_at_start = np.concatenate(([0.0], np.cumsum(self._rates[:-1] * np.diff(self._starts))))
        q = np.searchsorted(h_at_start, target, side="right") - 1
        return self._starts[q] + (target - h_at_start[q]) / self._rates[q]

    def sample(self, n: int, rng: np.random.Generator) -> NDArray[np.float64]:
        """Inverse-CDF draw of n event times."""
        return self.inverse_survival(1.0 - rng.random(n))

    def refine(self, points: Sequence[float]) -> "PiecewiseExponential":
        """Same law expressed on the union of its change points and `points`."""
        grid = np.union1d(self._starts, np.asarray(points, dtype=float))
        grid = grid[grid >= 0]
        return PiecewiseExponential(tuple(grid), tuple(self._rates[self._interval_index(grid)]))


@dataclass(frozen=True)
class TwoArmModel:
    """
    Control (arm 0) and treatment (arm 1) laws on a shared change-point grid.

    Both arms are refined onto the union of their change points on
    construction so the per-interval hazard ratio is always defined.
    """

    control: PiecewiseExponential
    treatment: PiecewiseExponential
    assign_prob: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.assign_prob < 1.0:
            raise DomainError(f"assign_prob must lie in (0, 1), got {self.assign_prob}")
        grid = sorted(set(self.control.change_points) | set(self.treatment.change_points))
        object.__setattr__(self, "control", self.control.refine(grid))
        object.__setattr__(self, "treatment", self.treatment.refine(grid))

    @property
    def change_points(self) -> Tuple[float, ...]:
        return self.control.change_points

    @property
    def hazard_ratios(self) -> Tuple[float, ...]:
        return tuple(h1 / h0 for h0, h1 in zip(self.control.hazards, self.treatment.hazards))

    def arm(self, a: int) -> PiecewiseExponential:
        return self.treatment if a == 1 else self.control

    def null(self) -> "TwoArmModel":
        """H0 law: the treatment arm follows the control hazards."""
        return TwoArmModel(self.control, self.control, self.assign_prob)

    def under(self, hypothesis: Hypothesis) -> "TwoArmModel":
        if hypothesis == "H0":
            return self.null()
        if hypothesis == "H1":
            return self
        raise DomainError(f"hypothesis must be 'H0' or 'H1', got {hypothesis!r}")

    def pooled_survival(self, s: ArrayLike):
        p = self.assign_prob
        t, scalar = _as_times(s)
        out = (1 - p) * np.atleast_1d(self.control.survival(t)) + p * np.atleast_1d(
            self.treatment.survival(t)
        )
        return _out(out, scalar)

    def pooled_density(self, s: ArrayLike):
        p = self.assign_prob
        t, scalar = _as_times(s)
        out = (1 - p) * np.atleast_1d(self.control.density(t)) + p * np.atleast_1d(
            self.treatment.density(t)
        )
        return _out(out, scalar)


def survival(model: PiecewiseExponential, s: ArrayLike):
    return model.survival(s)


def density(model: PiecewiseExponential, s: ArrayLike):
    return model.density(s)


def pooled_survival(model: TwoArmModel, s: ArrayLike):
    return model.pooled_survival(s)


def two_piece(lam: float, theta: float, eps: float, p: float = 0.5) -> TwoArmModel:
    """
    Delayed-effect model: control is exponential(lam); treatment has hazard
    lam on [0, eps) and theta*lam afterwards.
    """
    if not lam > 0:
        raise DomainError(f"lambda must be positive, got {lam}")
    if not theta > 0:
        raise DomainError(f"theta must be positive, got {theta}")
    if eps < 0:
        raise DomainError(f"eps must be >= 0, got {eps}")
    control = PiecewiseExponential.exponential(lam)
    if eps == 0:
        treatment = PiecewiseExponential.exponential(theta * lam)
    else:
        treatment = PiecewiseExponential((0.0, eps), (lam, theta * lam))
    return TwoArmModel(control, treatment, p)


# ---------- accrual and censoring ----------

def yearly_to_rate(proportion: float) -> float:
    """Monthly exponential rate whose 12-month censoring probability is `proportion`."""
    if not 0.0 <= proportion < 1.0:
        raise DomainError(f"yearly censoring proportion must lie in [0, 1), got {proportion}")
    return -np.log1p(-proportion) / MONTHS_PER_YEAR


@dataclass(frozen=True)
class AccrualCensoring:
    """
    Enrollment over [0, R], planned study end tau, and per-arm exponential
    dropout on top of administrative censoring.

    accrual_segments holds (duration, rate per month) pairs as fractions of
    n; None means uniform accrual at 1/R.
    censor_rates is (control, treatment).
    """

    accrual_duration: float
    study_end: float
    accrual_segments: Tuple[Tuple[float, float], ...] | None = None
    censor_rates: Tuple[float, float] = field(default=(0.0, 0.0))

    def __post_init__(self):
        R, tau = float(self.accrual_duration), float(self.study_end)
        if not 0.0 < R <= tau:
            raise DomainError(f"need 0 < R <= tau, got R={R}, tau={tau}")
        rates = tuple(float(c) for c in self.censor_rates)
        if len(rates) != 2 or any(not np.isfinite(c) or c < 0 for c in rates):
            raise DomainError(f"censor_rates must be two rates >= 0, got {self.censor_rates}")
        object.__setattr__(self, "censor_rates", rates)
        if self.accrual_segments is not None:
            segs = tuple((float(d), float(r)) for d, r in self.accrual_segments)
            if any(d <= 0 or r < 0 for d, r in segs):
                raise DomainError(f"accrual segments need duration > 0 and rate >= 0: {segs}")
            total = sum(d for d, _ in segs)
            if abs(total - R) > 1e-9:
                raise DomainError(f"accrual segments span {total}, expected R={R}")
            mass = sum(d * r for d, r in segs)
            if abs(mass - 1.0) > 1e-8:
                raise DomainError(f"accrual rates integrate to {mass}, expected 1")
            object.__setattr__(self, "accrual_segments", segs)

    @classmethod
    def staircase(cls, accrual_duration: float = 14.0, study_end: float = 18.0,
                  censor_rates: Tuple[float, float] = (0.0, 0.0)) -> "AccrualCensoring":
        """Ramp-up enrollment: 1,2,3,4 units over the first four (scaled) months, then 6."""
        scale = accrual_duration / 14.0
        segs = tuple((1.0 * scale, k / 70.0 / scale) for k in (1, 2, 3, 4)) + (
            (10.0 * scale, 6.0 / 70.0 / scale),
        )
        return cls(accrual_duration, study_end, segs, censor_rates)

    @property
    def is_uniform(self) -> bool:
        return self.accrual_segments is None

    @property
    def segments(self) -> Tuple[Tuple[float, float], ...]:
        if self.accrual_segments is None:
            return ((self.accrual_duration, 1.0 / self.accrual_duration),)
        return self.accrual_segments

    def _knots(self) -> Tuple[NDArray[np.float64], NDArray[np.float64]]:
        d = np.array([s[0] for s in self.segments])
        r = np.array([s[1] for s in self.segments])
        x = np.concatenate(([0.0], np.cumsum(d)))
        y = np.concatenate(([0.0], np.cumsum(d * r)))
        return x, y

    def accrual_cdf(self, t: ArrayLike):
        """Fraction of the planned n enrolled by calendar time t."""
        arr = np.asarray(t, dtype=float)
        x, y = self._knots()
        out = np.interp(arr, x, y, left=0.0, right=1.0)
        return float(out) if arr.ndim == 0 else out

    def accrual_density(self, t: ArrayLike):
        arr = np.asarray(t, dtype=float)
        x, _ = self._knots()
        rates = np.append(np.array([s[1] for s in self.segments]), 0.0)
        idx = np.searchsorted(x, arr, side="right") - 1
        out = np.where((arr < 0) | (idx >= len(self.segments)), 0.0, rates[np.clip(idx, 0, None)])
        return float(out) if arr.ndim == 0 else out

    def sample_entries(self, n: int, rng: np.random.Generator) -> NDArray[np.float64]:
        """Entry times by inverting the piecewise-linear accrual CDF."""
        x, y = self._knots()
        return np.interp(rng.random(n), y, x)

    def censor_rate(self, arm: int) -> float:
        return self.censor_rates[1] if arm == 1 else self.censor_rates[0]

    def with_yearly_censoring(self, control: float, treatment: float) -> "AccrualCensoring":
        return replace(self, censor_rates=(yearly_to_rate(control), yearly_to_rate(treatment)))
