"""
wlrt_engine.py

Weighted log-rank statistics from trial data frozen at a calendar time.

A FrozenView keeps the observed follow-up Y_i(t) = min(T_i, C_i, t - E_i)
and event flags of enrolled subjects; its EventTable (distinct event times
with at-risk and event counts per arm, plus the pooled left-continuous
Kaplan-Meier) is built once and shared by every weight evaluated on it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, List, NamedTuple

import numpy as np
import pandas as pd
from numpy.typing import ArrayLike, NDArray

from .errors import DegenerateError, DomainError
from .stoch_predict import WeightSpec

log = logging.getLogger(__name__)

CSV_COLUMNS = ["entry", "time", "event", "arm"]


@dataclass(frozen=True, eq=False)
class TrialData:
    """Per-subject latent records; event_time and censor_time are follow-up times (inf allowed)."""

    entry: NDArray[np.float64]
    event_time: NDArray[np.float64]
    censor_time: NDArray[np.float64]
    arm: NDArray[np.int8]

    def __post_init__(self):
        entry = np.asarray(self.entry, dtype=float).ravel()
        ev = np.asarray(self.event_time, dtype=float).ravel()
        cen = np.asarray(self.censor_time, dtype=float).ravel()
        arm = np.asarray(self.arm).ravel()
        if not (entry.size == ev.size == cen.size == arm.size):
            raise DomainError(
                f"column lengths differ: entry={entry.size}, event_time={ev.size}, "
                f"censor_time={cen.size}, arm={arm.size}"
            )
        if np.any(~np.isfinite(entry)) or np.any(entry < 0):
            raise DomainError("entry times must be finite and >= 0")
        if np.any(np.isnan(ev)) or np.any(ev <= 0):
            raise DomainError("event times must be > 0")
        if np.any(np.isnan(cen)) or np.any(cen <= 0):
            raise DomainError("censoring times must be > 0")
        if not np.all(np.isin(arm, (0, 1))):
            raise DomainError("arm must be 0 (control) or 1 (treatment)")
        object.__setattr__(self, "entry", entry)
        object.__setattr__(self, "event_time", ev)
        object.__setattr__(self, "censor_time", cen)
        object.__setattr__(self, "arm", arm.astype(np.int8))

    @property
    def n(self) -> int:
        return int(self.entry.size)

    @classmethod
    def empty(cls) -> "TrialData":
        return cls(np.empty(0), np.empty(0), np.empty(0), np.empty(0, dtype=np.int8))


class EventTable(NamedTuple):
    times: NDArray[np.float64]
    n_risk: NDArray[np.float64]
    n_risk_trt: NDArray[np.float64]
    n_events: NDArray[np.float64]
    n_events_trt: NDArray[np.float64]
    surv_left: NDArray[np.float64]


class WlrtResult(NamedTuple):
    numerator: float
    variance: float
    z: float


def _count_ge(sorted_values: NDArray[np.float64], points: NDArray[np.float64]) -> NDArray[np.float64]:
    return (sorted_values.size - np.searchsorted(sorted_values, points, side="left")).astype(float)


def _count_eq(sorted_values: NDArray[np.float64], points: NDArray[np.float64]) -> NDArray[np.float64]:
    return (
        np.searchsorted(sorted_values, points, side="right")
        - np.searchsorted(sorted_values, points, side="left")
    ).astype(float)


@dataclass(frozen=True, eq=False)
class FrozenView:
    t: float
    time: NDArray[np.float64]
    event: NDArray[np.bool_]
    arm: NDArray[np.int8]

    @property
    def n(self) -> int:
        return int(self.time.size)

    @property
    def n_events(self) -> int:
        return int(np.count_nonzero(self.event))

    @cached_property
    def table(self) -> EventTable:
        y_all = np.sort(self.time)
        y_trt = np.sort(self.time[self.arm == 1])
        ev_all = np.sort(self.time[self.event])
        ev_trt = np.sort(self.time[self.event & (self.arm == 1)])

        times = np.unique(ev_all)
        n_risk = _count_ge(y_all, times)
        d = _count_eq(ev_all, times)
        # censored at an event time are still at risk there
        km_after = np.cumprod(1.0 - d / n_risk) if times.size else np.empty(0)
        return EventTable(
            times=times,
            n_risk=n_risk,
            n_risk_trt=_count_ge(y_trt, times),
            n_events=d,
            n_events_trt=_count_eq(ev_trt, times),
            surv_left=np.concatenate(([1.0], km_after[:-1])) if times.size else np.empty(0),
        )


def freeze(data: TrialData, t: float) -> FrozenView:
    """Snapshot at calendar time t; subjects entering after t are left out."""
    if not t > 0:
        raise DomainError(f"analysis time must be positive, got {t}")
    keep = data.entry <= t
    admin = t - data.entry[keep]
    ev = data.event_time[keep]
    other = np.minimum(data.censor_time[keep], admin)
    return FrozenView(
        t=float(t),
        time=np.minimum(ev, other),
        event=(ev <= other) & np.isfinite(ev),
        arm=data.arm[keep],
    )


def pooled_km(view: FrozenView, s: ArrayLike):
    """Left-continuous pooled Kaplan-Meier S(s-)."""
    tab = view.table
    steps = np.concatenate(([1.0], np.cumprod(1.0 - tab.n_events / tab.n_risk)))
    arr = np.asarray(s, dtype=float)
    out = steps[np.searchsorted(tab.times, arr, side="left")]
    return float(out) if arr.ndim == 0 else out


def _require_events(view: FrozenView) -> EventTable:
    tab = view.table
    if tab.times.size == 0:
        raise DegenerateError(f"no events observed by t={view.t:g}; cannot test")
    return tab


def _information(tab: EventTable, w1: NDArray[np.float64], w2: NDArray[np.float64]) -> float:
    n1 = tab.n_risk_trt
    n0 = tab.n_risk - n1
    return float(np.sum(w1 * w2 * tab.n_events * n1 * n0 / tab.n_risk**2))


def wlrt_statistic(view: FrozenView, weight: WeightSpec) -> WlrtResult:
    """
    Numerator G = sum_u w(u) [d1(u) - d(u) n1(u)/n(u)], its variance
    estimate sum_u w(u)^2 d(u) n1(u) n0(u)/n(u)^2, and G/sqrt(V).
    Negative values favour treatment.
    """
    tab = _require_events(view)
    w = weight.values(tab.surv_left)
    num = float(np.sum(w * (tab.n_events_trt - tab.n_events * tab.n_risk_trt / tab.n_risk)))
    var = _information(tab, w, w)
    if var <= 0:
        raise DegenerateError(
            f"variance estimate of {weight.label} is zero at t={view.t:g}; cannot test"
        )
    return WlrtResult(num, var, num / np.sqrt(var))


def wlrt_statistics(view: FrozenView, weights: Iterable[WeightSpec]) -> List[WlrtResult]:
    return [wlrt_statistic(view, w) for w in weights]


def estimate_covariance(view: FrozenView, w1: WeightSpec, w2: WeightSpec) -> float:
    tab = _require_events(view)
    return _information(tab, w1.values(tab.surv_left), w2.values(tab.surv_left))


def estimate_variance(view: FrozenView, weight: WeightSpec) -> float:
    return estimate_covariance(view, weight, weight)


# ---------- dataset I/O ----------

def read_trial_csv(path: str | Path, sep: str = ",") -> TrialData:
    """
    Load observed (entry, time, event, arm) records.

    An event row becomes T=time, C=inf; a censored row T=inf, C=time, so
    freezing at any t reproduces what was observed up to that time.
    """
    df = pd.read_csv(path, sep=sep, float_precision="round_trip")
    missing = [c for c in CSV_COLUMNS if c not in df.columns]
    if missing:
        raise DomainError(f"{path} missing columns: {missing}")
    if not df["event"].isin([0, 1]).all():
        raise DomainError(f"{path}: event must be 0 or 1")
    if not df["arm"].isin([0, 1]).all():
        raise DomainError(f"{path}: arm must be 0 or 1")

    time = df["time"].astype(float).to_numpy()
    is_event = df["event"].astype(int).to_numpy() == 1
    data = TrialData(
        entry=df["entry"].astype(float).to_numpy(),
        event_time=np.where(is_event, time, np.inf),
        censor_time=np.where(is_event, np.inf, time),
        arm=df["arm"].astype(int).to_numpy(),
    )
    log.info("loaded %d subjects (%d events) from %s", data.n, int(is_event.sum()), path)
    return data


def write_trial_csv(data: TrialData, path: str | Path, at: float = np.inf) -> Path:
    """Write the view frozen at calendar time `at` (all follow-up by default)."""
    view = freeze(data, at)
    keep = data.entry <= at
    df = pd.DataFrame(
        {
            "entry": data.entry[keep],
            "time": view.time,
            "event": view.event.astype(int),
            "arm": view.arm.astype(int),
        }
    )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, float_format="%.17g")
    return path
