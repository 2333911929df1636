"""
trial_sim.py

Monte Carlo check of a design's operating characteristics.

Every replicate draws one trial from its own Philox stream keyed by
(seed, replicate index), freezes it at the calendar times of the
ceil(nu_m * d)-th events, and evaluates every method on the same data:

  WLRT, SLRT     single weights with univariate group-sequential boundaries
  MC-naive       maxcombo with the univariate boundaries
  MC-pred-sto    maxcombo with boundaries from the marching predictor
  MC-pred-exa    maxcombo with boundaries from the closed forms
  MC-est         maxcombo with boundaries re-solved from the trial's own data
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from numpy.typing import NDArray

from .corr_assembly import EstimatedSource, assemble, pair_rows
from .design_engine import (
    DesignReport,
    DesignSpec,
    MvnSettings,
    SpendingSpec,
    boundaries_for_source,
    naive_boundaries,
    predict_stopping_times,
    solve_boundaries,
    variance_source,
)
from .errors import DegenerateError, DomainError, EngineError
from .stoch_predict import LOGRANK, WeightSpec
from .surv_model import AccrualCensoring, Hypothesis, TwoArmModel
from .wlrt_engine import FrozenView, TrialData, freeze, wlrt_statistic

log = logging.getLogger(__name__)

METHODS = ("WLRT", "SLRT", "MC-naive", "MC-pred-sto", "MC-pred-exa", "MC-est")
SINGLE_TEST = ("WLRT", "SLRT")

DESK_REPS = {"H0": 20_000, "H1": 10_000}
FULL_REPS = {"H0": 200_000, "H1": 50_000}

EST_MVN = MvnSettings(accuracy=1e-4, replicates=1)


def trial_stream(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, index])))


@dataclass(frozen=True, eq=False)
class Scenario:
    """True data-generating law plus the design it is checked against."""

    model: TwoArmModel
    ac: AccrualCensoring
    hypothesis: Hypothesis = "H0"
    spec: Optional[DesignSpec] = None
    design: Optional[DesignReport] = None
    reps: int = 1
    seed: int = 2024
    methods: Tuple[str, ...] = METHODS
    est_mvn: MvnSettings = EST_MVN
    calendar_cap: Optional[float] = None
    threads: int = 1

    def __post_init__(self):
        if self.reps < 1:
            raise DomainError(f"replicate count must be >= 1, got {self.reps}")
        if self.hypothesis not in ("H0", "H1"):
            raise DomainError(f"hypothesis must be 'H0' or 'H1', got {self.hypothesis!r}")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise DomainError(f"unknown methods {unknown}; expected some of {METHODS}")
        object.__setattr__(self, "methods", tuple(self.methods))

    @property
    def law(self) -> TwoArmModel:
        return self.model.under(self.hypothesis)

    def require_design(self) -> Tuple[DesignSpec, DesignReport]:
        if self.spec is None or self.design is None:
            raise DomainError("scenario has no design attached")
        return self.spec, self.design


# ---------- data generation ----------

def generate_trial(scenario: Scenario, n: int, rng: np.random.Generator) -> TrialData:
    """
    n subjects: entries from the accrual profile, Bernoulli(p) arms, event
    times by inverse CDF, exponential dropout per arm. Administrative
    censoring happens when the trial is frozen.
    """
    if n < 0:
        raise DomainError(f"n must be >= 0, got {n}")
    if n == 0:
        return TrialData.empty()
    law, ac = scenario.law, scenario.ac

    entry = ac.sample_entries(n, rng)
    arm = (rng.random(n) < law.assign_prob).astype(np.int8)
    u = 1.0 - rng.random(n)
    drop = rng.standard_exponential(n)

    event = np.where(
        arm == 1,
        law.treatment.inverse_survival(u),
        law.control.inverse_survival(u),
    )
    rate = np.where(arm == 1, ac.censor_rate(1), ac.censor_rate(0))
    censor = np.divide(drop, rate, out=np.full(n, np.inf), where=rate > 0)
    return TrialData(entry, event, censor, arm)


def stage_times(trial: TrialData, targets: Sequence[int], calendar_cap: Optional[float] = None) -> NDArray[np.float64]:
    """Calendar time of the k-th observed event for each target k; NaN if never reached."""
    observed = trial.event_time <= trial.censor_time
    cal = (trial.entry + trial.event_time)[observed]
    if calendar_cap is not None:
        cal = cal[cal <= calendar_cap]
    # stable sort keeps subject order among tied calendar times
    cal = cal[np.argsort(cal, kind="stable")]
    out = np.full(len(targets), np.nan)
    for m, k in enumerate(targets):
        if k < 1:
            raise DomainError(f"event targets must be >= 1, got {k}")
        if k <= cal.size:
            out[m] = cal[k - 1]
    return out


# ---------- one trial ----------

@dataclass(frozen=True, eq=False)
class TrialContext:
    """Everything a worker needs to evaluate one trial; picklable."""

    combo: Tuple[WeightSpec, ...]
    weights: Tuple[WeightSpec, ...]
    columns: Dict[str, Tuple[int, ...]]
    boundaries: Dict[str, Tuple[float, ...]]
    targets: Tuple[int, ...]
    nu: Tuple[float, ...]
    alpha: float
    spending: SpendingSpec
    fallback: Tuple[float, ...]
    est_mvn: MvnSettings = EST_MVN
    calendar_cap: Optional[float] = None
    collect_est: bool = True

    @property
    def methods(self) -> Tuple[str, ...]:
        return tuple(self.columns)


class TrialRecord(NamedTuple):
    times: NDArray[np.float64]
    stats: NDArray[np.float64]
    reject: Dict[str, int]
    est_corr: Optional[NDArray[np.float64]]

    @property
    def exhausted(self) -> bool:
        return bool(np.isnan(self.times[-1]))


class GsResult(NamedTuple):
    method: str
    reject_stage: int
    rejected: Tuple[bool, ...]
    times: Tuple[float, ...]
    exhausted: bool


def _oriented_z(view: FrozenView, weight: WeightSpec) -> float:
    try:
        return -wlrt_statistic(view, weight).z
    except DegenerateError as exc:
        log.debug("no statistic: %s", exc)
        return math.nan


def _first_rejection(stats: NDArray[np.float64], cols: Sequence[int], g: Sequence[float]) -> int:
    for m in range(stats.shape[0]):
        # NaN (unreached stage or degenerate statistic) never rejects
        if np.any(stats[m, list(cols)] > g[m]):
            return m
    return -1


def _estimated_decision(ctx: TrialContext, views: List[Optional[FrozenView]], times: NDArray[np.float64],
                        stats: NDArray[np.float64]) -> int:
    K = len(ctx.combo)
    g: List[float] = []
    for m in range(len(ctx.nu)):
        if views[m] is None:
            return -1
        try:
            src = EstimatedSource({float(times[j]): views[j] for j in range(m + 1)})
            sigma = assemble(src, ctx.combo, times[: m + 1])
            g = list(solve_boundaries(sigma, ctx.alpha, ctx.spending, ctx.nu[: m + 1], ctx.est_mvn, fixed=g))
        except EngineError as exc:
            log.debug("estimated boundary at stage %d fell back to the design: %s", m + 1, exc)
            g.append(ctx.fallback[m])
        if np.any(stats[m, :K] > g[m]):
            return m
    return -1


def _estimated_correlation(ctx: TrialContext, views: List[Optional[FrozenView]],
                           times: NDArray[np.float64]) -> Optional[NDArray[np.float64]]:
    if any(v is None for v in views):
        return None
    try:
        src = EstimatedSource({float(t): v for t, v in zip(times, views)})
        return assemble(src, ctx.combo, times).corr
    except EngineError as exc:
        log.debug("no estimated correlation for this trial: %s", exc)
        return None


def evaluate_trial(trial: TrialData, ctx: TrialContext) -> TrialRecord:
    times = stage_times(trial, ctx.targets, ctx.calendar_cap)
    views = [None if np.isnan(t) else freeze(trial, t) for t in times]
    stats = np.full((len(times), len(ctx.weights)), np.nan)
    for m, view in enumerate(views):
        if view is not None:
            stats[m] = [_oriented_z(view, w) for w in ctx.weights]

    reject: Dict[str, int] = {}
    for method, cols in ctx.columns.items():
        if method == "MC-est":
            reject[method] = _estimated_decision(ctx, views, times, stats)
        else:
            reject[method] = _first_rejection(stats, cols, ctx.boundaries[method])
    est = _estimated_correlation(ctx, views, times) if ctx.collect_est else None
    return TrialRecord(times, stats, reject, est)


def method_boundaries(spec: DesignSpec, design: DesignReport, methods: Sequence[str]) -> Dict[str, Tuple[float, ...]]:
    """Boundaries each method applies; MC-est has none up front."""
    out: Dict[str, Tuple[float, ...]] = {}
    univariate: Optional[Tuple[float, ...]] = None
    for method in methods:
        if method in SINGLE_TEST or method == "MC-naive":
            if univariate is None:
                univariate = naive_boundaries(spec)
            out[method] = univariate
        elif method in ("MC-pred-sto", "MC-pred-exa"):
            source = method[len("MC-"):]
            if design.source == source:
                out[method] = design.boundaries
                continue
            try:
                out[method] = boundaries_for_source(spec, source)
            except DomainError as exc:
                log.warning("dropping %s: %s", method, exc)
    return out


def build_context(scenario: Scenario, boundaries: Optional[Mapping[str, Sequence[float]]] = None) -> TrialContext:
    spec, design = scenario.require_design()
    methods = list(scenario.methods)
    bounds = dict(boundaries) if boundaries is not None else method_boundaries(spec, design, methods)

    combo = design.combo
    weights = list(combo)
    if LOGRANK not in weights:
        weights.append(LOGRANK)
    wlrt = next((w for w in combo if not w.is_logrank), None)

    columns: Dict[str, Tuple[int, ...]] = {}
    for method in methods:
        if method == "WLRT":
            if wlrt is None:
                log.warning("dropping WLRT: combo has no non-log-rank weight")
                continue
            columns[method] = (weights.index(wlrt),)
        elif method == "SLRT":
            columns[method] = (weights.index(LOGRANK),)
        elif method == "MC-est":
            columns[method] = tuple(range(len(combo)))
        elif method in bounds:
            columns[method] = tuple(range(len(combo)))
    missing = [m for m in columns if m != "MC-est" and m not in bounds]
    if missing:
        raise DomainError(f"no boundaries supplied for {missing}")

    return TrialContext(
        combo=combo,
        weights=tuple(weights),
        columns=columns,
        boundaries={m: tuple(float(x) for x in bounds[m]) for m in columns if m in bounds},
        targets=design.event_targets,
        nu=design.nu,
        alpha=design.alpha,
        spending=spec.spending,
        fallback=design.boundaries,
        est_mvn=scenario.est_mvn,
        calendar_cap=scenario.calendar_cap,
    )


def run_group_sequential(
    trial: TrialData,
    design: DesignReport,
    method: str = "MC-pred-sto",
    boundaries: Optional[Sequence[float]] = None,
    spec: Optional[DesignSpec] = None,
    est_mvn: MvnSettings = EST_MVN,
    calendar_cap: Optional[float] = None,
) -> GsResult:
    """
    Run one trial through one method. Stops at the first stage whose
    maximum oriented statistic exceeds its boundary; a trial that never
    reaches its event target counts as not rejecting.
    """
    if method not in METHODS:
        raise DomainError(f"unknown method {method!r}; expected one of {METHODS}")
    bounds: Dict[str, Tuple[float, ...]] = {}
    if method != "MC-est":
        bounds[method] = tuple(boundaries) if boundaries is not None else design.boundaries
        if len(bounds[method]) != len(design.nu):
            raise DomainError(f"{len(bounds[method])} boundaries for {len(design.nu)} stages")
    spending = spec.spending if spec is not None else SpendingSpec()

    weights = list(design.combo)
    if LOGRANK not in weights:
        weights.append(LOGRANK)
    if method == "WLRT":
        wlrt = next((w for w in design.combo if not w.is_logrank), None)
        if wlrt is None:
            raise DomainError("WLRT needs a non-log-rank weight in the combo")
        cols: Tuple[int, ...] = (weights.index(wlrt),)
    elif method == "SLRT":
        cols = (weights.index(LOGRANK),)
    else:
        cols = tuple(range(len(design.combo)))

    ctx = TrialContext(
        combo=design.combo,
        weights=tuple(weights),
        columns={method: cols},
        boundaries=bounds,
        targets=design.event_targets,
        nu=design.nu,
        alpha=design.alpha,
        spending=spending,
        fallback=design.boundaries,
        est_mvn=est_mvn,
        calendar_cap=calendar_cap,
        collect_est=False,
    )
    rec = evaluate_trial(trial, ctx)
    stage = rec.reject[method]
    M = len(design.nu)
    return GsResult(
        method=method,
        reject_stage=stage,
        rejected=tuple(stage == m for m in range(M)),
        times=tuple(float(t) for t in rec.times),
        exhausted=rec.exhausted,
    )


# ---------- batches ----------

def _run_chunk(args: Tuple[Scenario, TrialContext, int, int, int]) -> List[TrialRecord]:
    scenario, ctx, n, start, stop = args
    records = []
    for i in range(start, stop):
        trial = generate_trial(scenario, n, trial_stream(scenario.seed, i))
        records.append(evaluate_trial(trial, ctx))
    return records


def simulate_records(scenario: Scenario, ctx: TrialContext) -> List[TrialRecord]:
    """All replicates in index order, serially or over a process pool."""
    _, design = scenario.require_design()
    reps, threads = scenario.reps, max(1, scenario.threads)
    n_chunks = 1 if threads == 1 else min(reps, threads * 4)
    edges = np.linspace(0, reps, n_chunks + 1).astype(int)
    tasks = [(scenario, ctx, design.n, int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]
    log.info("simulating %d %s trials of n=%d on %d worker(s)", reps, scenario.hypothesis, design.n, threads)
    if threads == 1:
        chunks = [_run_chunk(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(_run_chunk, tasks))
    return [rec for chunk in chunks for rec in chunk]


def stage_names(M: int) -> List[str]:
    if M == 1:
        return ["combined"]
    if M == 2:
        return ["interim", "combined"]
    return [f"interim{m + 1}" for m in range(M - 1)] + ["combined"]


@dataclass(frozen=True, eq=False)
class OperatingCharacteristics:
    hypothesis: Hypothesis
    reps: int
    rejection: Dict[str, Tuple[float, ...]]
    se: Dict[str, Tuple[float, ...]]
    mean_times: Tuple[float, ...]
    exhausted: int
    labels: Tuple[str, ...]
    sample_corr: NDArray[np.float64]
    est_corr: NDArray[np.float64]
    n: int = 0
    d: int = 0
    boundaries: Dict[str, Tuple[float, ...]] = field(default_factory=dict)

    @property
    def methods(self) -> Tuple[str, ...]:
        return tuple(self.rejection)

    def rows(self) -> List[dict]:
        names = stage_names(len(self.mean_times))
        return [
            {
                "hypothesis": self.hypothesis,
                "method": method,
                "stage": names[m],
                "rejection": rej[m],
                "se": self.se[method][m],
                "reps": self.reps,
            }
            for method, rej in self.rejection.items()
            for m in range(len(rej))
        ]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows(), columns=["hypothesis", "method", "stage", "rejection", "se", "reps"])

    def to_dict(self) -> dict:
        return {
            "hypothesis": self.hypothesis,
            "reps": self.reps,
            "n": self.n,
            "d": self.d,
            "rejection": {m: list(v) for m, v in self.rejection.items()},
            "se": {m: [None if math.isnan(x) else x for x in v] for m, v in self.se.items()},
            "boundaries": {m: list(v) for m, v in self.boundaries.items()},
            "mean_times": [None if math.isnan(t) else t for t in self.mean_times],
            "exhausted": self.exhausted,
            "labels": list(self.labels),
            "sample_corr": np.where(np.isnan(self.sample_corr), None, self.sample_corr).tolist(),
            "est_corr": np.where(np.isnan(self.est_corr), None, self.est_corr).tolist(),
        }


def _binomial_se(p: float, reps: int) -> float:
    if reps < 2:
        return math.nan
    return math.sqrt(p * (1.0 - p) / reps)


def summarize(records: Sequence[TrialRecord], ctx: TrialContext, hypothesis: Hypothesis) -> OperatingCharacteristics:
    reps = len(records)
    M, K = len(ctx.nu), len(ctx.combo)
    if reps < 2:
        log.warning("%d replicate(s): Monte Carlo standard errors are undefined", reps)

    rejection: Dict[str, Tuple[float, ...]] = {}
    se: Dict[str, Tuple[float, ...]] = {}
    for method in ctx.methods:
        stages = np.array([rec.reject[method] for rec in records])
        cum = tuple(float(np.mean((stages >= 0) & (stages <= m))) for m in range(M))
        rejection[method] = cum
        se[method] = tuple(_binomial_se(p, reps) for p in cum)

    times = np.array([rec.times for rec in records])
    with np.errstate(invalid="ignore"):
        mean_times = tuple(
            float(np.nanmean(times[:, m])) if np.any(~np.isnan(times[:, m])) else math.nan for m in range(M)
        )
    exhausted = sum(rec.exhausted for rec in records)
    if exhausted:
        log.warning("%d of %d trials never reached their final event target", exhausted, reps)

    flat = np.array([rec.stats[:, :K].reshape(-1) for rec in records])
    complete = flat[np.all(np.isfinite(flat), axis=1)]
    if complete.shape[0] >= 2:
        sample_corr = np.corrcoef(complete, rowvar=False)
    else:
        sample_corr = np.full((M * K, M * K), np.nan)

    est = [rec.est_corr for rec in records if rec.est_corr is not None]
    est_corr = np.mean(est, axis=0) if est else np.full((M * K, M * K), np.nan)

    labels = tuple(f"{w.label}@t{m + 1}" for m in range(M) for w in ctx.combo)
    return OperatingCharacteristics(
        hypothesis=hypothesis,
        reps=reps,
        rejection=rejection,
        se=se,
        mean_times=mean_times,
        exhausted=exhausted,
        labels=labels,
        sample_corr=sample_corr,
        est_corr=est_corr,
        boundaries=dict(ctx.boundaries),
    )


def operating_characteristics(
    scenario: Scenario, boundaries: Optional[Mapping[str, Sequence[float]]] = None
) -> OperatingCharacteristics:
    _, design = scenario.require_design()
    ctx = build_context(scenario, boundaries)
    records = simulate_records(scenario, ctx)
    oc = summarize(records, ctx, scenario.hypothesis)
    for method, rej in oc.rejection.items():
        log.info("%s %s: %s", scenario.hypothesis, method, ", ".join(f"{p:.4f}" for p in rej))
    return replace(oc, n=design.n, d=design.d)


# ---------- correlation report ----------

def predicted_correlations(spec: DesignSpec, hypothesis: Hypothesis) -> Dict[str, NDArray[np.float64]]:
    out: Dict[str, NDArray[np.float64]] = {}
    for source in ("pred-sto", "pred-exa"):
        try:
            times = predict_stopping_times(spec, hypothesis, source)
            out[source] = assemble(variance_source(spec, hypothesis, source), spec.combo, times).corr
        except DomainError as exc:
            log.warning("no %s correlations: %s", source, exc)
    return out


def sample_correlation_report(scenario: Scenario, oc: Optional[OperatingCharacteristics] = None) -> List[dict]:
    """
    Pairwise correlations of the K*M statistics: simulated (gold), both
    predictors under the scenario's hypothesis, and the mean estimate.
    """
    spec, _ = scenario.require_design()
    if oc is None:
        oc = operating_characteristics(scenario)
    predicted = predicted_correlations(spec, scenario.hypothesis)
    predicted["est"] = oc.est_corr
    return pair_rows(oc.labels, oc.sample_corr, predicted)


def write_oc_csv(ocs: Sequence[OperatingCharacteristics], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.concat([oc.to_frame() for oc in ocs], ignore_index=True)
    frame.to_csv(path, index=False, float_format="%.6g", na_rep="NaN")
    return path
