"""
design_engine.py

Simulation-free group-sequential maxcombo design:

    H0/H1 stopping times -> Sigma_0, Sigma_1 -> boundaries g_1..g_M -> n, d

Statistics are oriented so that rejection is max_k Z_k(t_m) > g_m; the H1
drifts from the predictors are negated (treatment benefit gives a negative
numerator) before entering the power equation.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq
from scipy.stats import norm

from .corr_assembly import (
    ExactSource,
    GaussianApprox,
    StochasticSource,
    VarianceSource,
    assemble,
)
from .errors import DomainError, InfeasibleStageError, NoEffectError, SolverError
from .exact_predict import ExactScenario
from .mvn_quad import DEFAULT_ACCURACY, DEFAULT_REPLICATES, median_of_replicates, orthant_below
from .stoch_predict import DEFAULT_B, LOGRANK, WeightSpec, horizon_cap
from .surv_model import AccrualCensoring, Hypothesis, TwoArmModel, two_piece

log = logging.getLogger(__name__)

SpendingFamily = Literal["power", "obf", "pocock"]
Source = Literal["pred-sto", "pred-exa", "est", "naive"]
Monitor = Literal["events", "information"]

SOURCES = ("pred-sto", "pred-exa", "est", "naive")
SPENDING_FAMILIES = ("power", "obf", "pocock")

TIME_TOL = 1e-6
BOUNDARY_BRACKET = (0.0, 15.0)
N_BRACKET = (10.0, 1e6)
N_TOL = 1e-3


# ---------- spending ----------

@dataclass(frozen=True)
class SpendingSpec:
    family: SpendingFamily = "power"
    param: float = 3.0

    def __post_init__(self):
        if self.family not in SPENDING_FAMILIES:
            raise DomainError(f"unknown spending family {self.family!r}; expected one of {SPENDING_FAMILIES}")
        if self.family == "power" and not self.param > 0:
            raise DomainError(f"power spending needs a positive exponent, got {self.param}")


def spending(family: SpendingFamily | SpendingSpec, alpha: float, nu: float, param: float = 3.0) -> float:
    """Cumulative type I error spent at information fraction nu."""
    if isinstance(family, SpendingSpec):
        family, param = family.family, family.param
    if not 0.0 <= nu <= 1.0:
        raise DomainError(f"information fraction must lie in [0, 1], got {nu}")
    if family == "power":
        return alpha * nu**param
    if family == "obf":
        if nu == 0.0:
            return 0.0
        return float(2.0 * norm.sf(norm.isf(alpha / 2.0) / math.sqrt(nu)))
    if family == "pocock":
        return float(alpha * math.log(1.0 + (math.e - 1.0) * nu))
    raise DomainError(f"unknown spending family {family!r}")


def spending_schedule(spec: SpendingSpec, alpha: float, nu: Sequence[float]) -> List[float]:
    return [spending(spec, alpha, v) for v in nu]


# ---------- design inputs ----------

@dataclass(frozen=True)
class MvnSettings:
    accuracy: float = DEFAULT_ACCURACY
    seed: int = 2024
    replicates: int = DEFAULT_REPLICATES
    threads: int = 1

    def __post_init__(self):
        if not self.accuracy > 0:
            raise DomainError(f"MVN accuracy must be positive, got {self.accuracy}")
        if self.replicates < 1 or self.replicates % 2 == 0:
            raise DomainError(f"MVN replicates must be odd and >= 1, got {self.replicates}")

    def probability(self, upper: np.ndarray, corr: np.ndarray) -> float:
        """P(X <= upper) for X ~ N(0, corr)."""
        problem = orthant_below(upper, corr, accuracy=self.accuracy, seed=self.seed,
                                replicates=self.replicates)
        return median_of_replicates(problem, threads=self.threads)


@dataclass(frozen=True)
class DesignSpec:
    model: TwoArmModel
    ac: AccrualCensoring
    combo: Tuple[WeightSpec, ...] = (LOGRANK, WeightSpec(0.0, 1.0))
    nu: Tuple[float, ...] = (0.6, 1.0)
    alpha: float = 0.025
    beta: float = 0.1
    monitor_weight: int = 0
    monitor: Optional[Monitor] = None
    spending: SpendingSpec = field(default_factory=SpendingSpec)
    b: int = DEFAULT_B
    source: Source = "pred-sto"
    mvn: MvnSettings = field(default_factory=MvnSettings)

    def __post_init__(self):
        combo = tuple(WeightSpec.parse(w) for w in self.combo)
        nu = tuple(float(v) for v in self.nu)
        if not combo:
            raise DomainError("combo needs at least one weight")
        if not nu:
            raise DomainError("nu needs at least one stage")
        if nu[0] <= 0 or any(b <= a for a, b in zip(nu, nu[1:])) or nu[-1] != 1.0:
            raise DomainError(f"stage fractions must satisfy 0 < nu_1 < ... < nu_M = 1, got {nu}")
        if not 0 < self.alpha < 1 or not 0 < self.beta < 1:
            raise DomainError(f"alpha and beta must lie in (0, 1), got {self.alpha}, {self.beta}")
        if not 0 <= self.monitor_weight < len(combo):
            raise DomainError(f"monitor_weight {self.monitor_weight} out of range for {len(combo)} weights")
        if self.monitor not in (None, "events", "information"):
            raise DomainError(f"monitor must be 'events' or 'information', got {self.monitor!r}")
        if self.source not in SOURCES:
            raise DomainError(f"unknown source {self.source!r}; expected one of {SOURCES}")
        object.__setattr__(self, "combo", combo)
        object.__setattr__(self, "nu", nu)

    @property
    def K(self) -> int:
        return len(self.combo)

    @property
    def M(self) -> int:
        return len(self.nu)

    @property
    def monitoring(self) -> WeightSpec:
        return self.combo[self.monitor_weight]

    @property
    def monitor_mode(self) -> Monitor:
        if self.monitor is not None:
            return self.monitor
        return "events" if self.monitoring.is_logrank else "information"

    def with_(self, **changes) -> "DesignSpec":
        return replace(self, **changes)


# ---------- sources and stopping times ----------

def variance_source(spec: DesignSpec, hypothesis: Hypothesis, source: Optional[Source] = None) -> VarianceSource:
    """Predicted source for design time; 'est' and 'naive' plan with the marching predictor."""
    src = source or spec.source
    sto = StochasticSource(spec.model, spec.ac, hypothesis, spec.b)
    if src == "pred-exa":
        return ExactSource(ExactScenario.from_model(spec.model, spec.ac), hypothesis, drift_source=sto)
    return sto


def _monitor_quantity(spec: DesignSpec, src: VarianceSource) -> Callable[[float], float]:
    if spec.monitor_mode == "events":
        return src.event_fraction
    w = spec.monitoring
    return lambda t: src.variance(w, t)


def _bisect_time(q: Callable[[float], float], target: float, lo: float, hi: float) -> float:
    """Smallest t in (lo, hi] with q(t) >= target, to TIME_TOL."""
    if q(hi) < target:
        raise InfeasibleStageError(
            f"monitoring target {target:.6g} not reached before the horizon t={hi:g}"
        )
    while hi - lo > TIME_TOL:
        mid = 0.5 * (lo + hi)
        if q(mid) >= target:
            hi = mid
        else:
            lo = mid
    return hi


def predict_stopping_times(
    spec: DesignSpec, hypothesis: Hypothesis, source: Optional[Source] = None
) -> Tuple[float, ...]:
    """
    Calendar times where the monitoring quantity under `hypothesis` reaches
    nu_m times its H1 value at tau. Under H1 the final time is tau itself.
    """
    h1_src = variance_source(spec, "H1", source)
    full = _monitor_quantity(spec, h1_src)(spec.ac.study_end)
    if hypothesis == "H1":
        src = h1_src
    elif hypothesis == "H0":
        src = variance_source(spec, "H0", source)
    else:
        raise DomainError(f"hypothesis must be 'H0' or 'H1', got {hypothesis!r}")
    q = _monitor_quantity(spec, src)
    cap = horizon_cap(spec.ac)

    times: List[float] = []
    lo = 0.0
    for nu in spec.nu:
        if hypothesis == "H1" and nu == 1.0:
            t = spec.ac.study_end
        else:
            t = _bisect_time(q, nu * full, lo, cap)
        times.append(t)
        lo = t
    log.info("%s stopping times (%s, %s): %s", hypothesis, spec.monitor_mode, source or spec.source,
             ", ".join(f"{t:.4f}" for t in times))
    return tuple(times)


# ---------- boundaries ----------

def _stage_upper(boundaries: Sequence[float], K: int) -> np.ndarray:
    return np.repeat(np.asarray(boundaries, dtype=float), K)


def solve_boundaries(
    sigma0: GaussianApprox,
    alpha: float,
    spending_spec: SpendingSpec,
    nu: Sequence[float],
    mvn: MvnSettings = MvnSettings(),
    fixed: Sequence[float] = (),
) -> Tuple[float, ...]:
    """
    Step-wise boundaries: for m = 1..M solve
        P(max_k Z_k(t_j) <= g_j for all j <= m | H0) = 1 - alpha(nu_m)
    for g_m with g_1..g_{m-1} held. `fixed` pins the leading boundaries
    (used when an interim boundary has already been applied).
    """
    nu = list(nu)
    if len(nu) != sigma0.M:
        raise DomainError(f"{len(nu)} stage fractions for {sigma0.M} stages")
    if len(fixed) > len(nu):
        raise DomainError(f"{len(fixed)} fixed boundaries for {len(nu)} stages")
    cum = spending_schedule(spending_spec, alpha, nu)
    prev = 0.0
    for m, a in enumerate(cum):
        if a - prev <= 0:
            raise InfeasibleStageError(
                f"stage {m + 1} spends nothing (alpha({nu[m]:g}) - alpha(prev) = {a - prev:.3g})"
            )
        prev = a

    K = sigma0.K
    g: List[float] = [float(x) for x in fixed]
    lo, hi = BOUNDARY_BRACKET
    for m in range(len(fixed), len(nu)):
        corr = sigma0.stages(m + 1).corr
        target = 1.0 - cum[m]

        def excess(x: float) -> float:
            return mvn.probability(_stage_upper(g + [x], K), corr) - target

        f_lo, f_hi = excess(lo), excess(hi)
        if f_lo > 0 or f_hi < 0:
            raise SolverError(
                f"stage {m + 1} boundary not bracketed by [{lo:g}, {hi:g}] "
                f"(excess {f_lo:.3g}, {f_hi:.3g})"
            )
        root = brentq(excess, lo, hi, xtol=1e-8)
        log.debug("stage %d: g=%.6f (target %.6f)", m + 1, root, target)
        g.append(float(root))
    return tuple(g)


def univariate_approx(nu: Sequence[float], weight: WeightSpec = LOGRANK) -> GaussianApprox:
    """Single-test group-sequential correlation sqrt(nu_i / nu_j)."""
    nu = np.asarray(nu, dtype=float)
    corr = np.sqrt(np.minimum.outer(nu, nu) / np.maximum.outer(nu, nu))
    labels = tuple((m, weight) for m in range(nu.size))
    return GaussianApprox(labels, tuple(float(v) for v in nu), np.zeros(nu.size), corr, "H0")


def naive_boundaries(spec: DesignSpec) -> Tuple[float, ...]:
    return solve_boundaries(univariate_approx(spec.nu, spec.monitoring), spec.alpha,
                            spec.spending, spec.nu, spec.mvn)


# ---------- sample size ----------

def _oriented_drift(sigma1: GaussianApprox) -> np.ndarray:
    drift = -np.asarray(sigma1.mean, dtype=float)
    if not np.any(drift > 0):
        raise NoEffectError("no statistic drifts toward rejection under H1; sample size is unbounded")
    return drift


def acceptance_probability(
    sigma1: GaussianApprox, boundaries: Sequence[float], n: float, mvn: MvnSettings, stages: Optional[int] = None
) -> float:
    """P(no rejection through `stages` | H1) at sample size n."""
    m = sigma1.M if stages is None else stages
    block = sigma1.stages(m)
    upper = _stage_upper(boundaries[:m], sigma1.K) - math.sqrt(n) * _oriented_drift(block)
    return mvn.probability(upper, block.corr)


def solve_sample_size(
    sigma1: GaussianApprox, boundaries: Sequence[float], beta: float, mvn: MvnSettings = MvnSettings()
) -> Tuple[int, float]:
    """Smallest integer n with P(no rejection | H1) <= beta; also returns the real-valued root."""
    _oriented_drift(sigma1)
    lo, hi = N_BRACKET

    def excess(n: float) -> float:
        return acceptance_probability(sigma1, boundaries, n, mvn) - beta

    f_lo = excess(lo)
    if f_lo <= 0:
        log.warning("power target met at the lower bracket n=%g", lo)
        return int(lo), lo
    if excess(hi) > 0:
        raise SolverError(f"power target not reached by n={hi:g}")
    root = float(brentq(excess, lo, hi, xtol=N_TOL))
    return int(math.ceil(root - 1e-9)), root


def stage_powers(
    sigma1: GaussianApprox, boundaries: Sequence[float], n: float, mvn: MvnSettings = MvnSettings()
) -> Tuple[float, ...]:
    """Cumulative rejection probability under H1 through each stage."""
    return tuple(1.0 - acceptance_probability(sigma1, boundaries, n, mvn, m) for m in range(1, sigma1.M + 1))


def schoenfeld_events(alpha: float, beta: float, p: float, delta: float) -> int:
    """Events for a one-sided log-rank test at log hazard ratio delta."""
    if not 0 < p < 1:
        raise DomainError(f"allocation p must lie in (0, 1), got {p}")
    if not 0 < alpha < 1 or not 0 < beta < 1:
        raise DomainError(f"alpha and beta must lie in (0, 1), got {alpha}, {beta}")
    if delta == 0:
        raise NoEffectError("log hazard ratio is zero; no finite event count")
    z = norm.isf(alpha) + norm.isf(beta)
    return int(math.ceil(z * z / (p * (1.0 - p) * delta * delta) - 1e-9))


# ---------- orchestration ----------

@dataclass(frozen=True, eq=False)
class DesignReport:
    source: Source
    combo: Tuple[WeightSpec, ...]
    nu: Tuple[float, ...]
    alpha: float
    beta: float
    monitor: Monitor
    stopping_times: Dict[str, Tuple[float, ...]]
    boundaries: Tuple[float, ...]
    n: int
    n_real: float
    d: int
    event_fraction: float
    stage_power: Tuple[float, ...]
    spending_schedule: Tuple[float, ...]
    sigma0: GaussianApprox
    sigma1: GaussianApprox

    @property
    def event_targets(self) -> Tuple[int, ...]:
        """Event counts triggering each stage: ceil(nu_m * d), the last being d."""
        return tuple(min(self.d, int(math.ceil(v * self.d - 1e-9))) for v in self.nu)

    def with_boundaries(self, boundaries: Sequence[float], source: Source) -> "DesignReport":
        return replace(self, boundaries=tuple(float(g) for g in boundaries), source=source)

    def to_dict(self) -> dict:
        return {
            "source": self.source,
            "combo": [w.as_list() for w in self.combo],
            "nu": list(self.nu),
            "alpha": self.alpha,
            "beta": self.beta,
            "monitor": self.monitor,
            "stopping_times": {h: list(ts) for h, ts in self.stopping_times.items()},
            "boundaries": list(self.boundaries),
            "n": self.n,
            "n_real": self.n_real,
            "d": self.d,
            "event_targets": list(self.event_targets),
            "event_fraction": self.event_fraction,
            "stage_power": list(self.stage_power),
            "spending_schedule": list(self.spending_schedule),
            "sigma0": self.sigma0.to_dict(),
            "sigma1": self.sigma1.to_dict(),
        }

    def summary(self) -> str:
        lines = [
            f"source:          {self.source}",
            f"combo:           {', '.join(w.label for w in self.combo)}",
            f"n = {self.n}   d = {self.d}",
            "boundaries:      " + ", ".join(f"{g:.4f}" for g in self.boundaries),
            "times under H0:  " + ", ".join(f"{t:.3f}" for t in self.stopping_times["H0"]),
            "times under H1:  " + ", ".join(f"{t:.3f}" for t in self.stopping_times["H1"]),
            "alpha spent:     " + ", ".join(f"{a:.5f}" for a in self.spending_schedule),
            "power by stage:  " + ", ".join(f"{p:.4f}" for p in self.stage_power),
        ]
        return "\n".join(lines)


def design(spec: DesignSpec) -> DesignReport:
    t0 = predict_stopping_times(spec, "H0")
    t1 = predict_stopping_times(spec, "H1")
    sigma0 = assemble(variance_source(spec, "H0"), spec.combo, t0)
    h1_src = variance_source(spec, "H1")
    sigma1 = assemble(h1_src, spec.combo, t1)

    if spec.source == "naive":
        g = naive_boundaries(spec)
    else:
        g = solve_boundaries(sigma0, spec.alpha, spec.spending, spec.nu, spec.mvn)
    log.info("boundaries (%s): %s", spec.source, ", ".join(f"{x:.4f}" for x in g))

    n, n_real = solve_sample_size(sigma1, g, spec.beta, spec.mvn)
    # d always comes from the marching predictor at tau
    frac = StochasticSource(spec.model, spec.ac, "H1", spec.b).event_fraction(spec.ac.study_end)
    d = int(math.ceil(n * frac - 1e-9))
    powers = stage_powers(sigma1, g, n, spec.mvn)
    log.info("sample size n=%d (%.2f), events d=%d, power by stage %s", n, n_real, d,
             ", ".join(f"{p:.4f}" for p in powers))

    return DesignReport(
        source=spec.source,
        combo=spec.combo,
        nu=spec.nu,
        alpha=spec.alpha,
        beta=spec.beta,
        monitor=spec.monitor_mode,
        stopping_times={"H0": t0, "H1": t1},
        boundaries=tuple(g),
        n=n,
        n_real=n_real,
        d=d,
        event_fraction=frac,
        stage_power=powers,
        spending_schedule=tuple(spending_schedule(spec.spending, spec.alpha, spec.nu)),
        sigma0=sigma0,
        sigma1=sigma1,
    )


def boundaries_for_source(spec: DesignSpec, source: Source) -> Tuple[float, ...]:
    """Boundaries the given method would apply, on its own predicted stopping times."""
    if source == "naive":
        return naive_boundaries(spec)
    if source == "est":
        raise DomainError("estimated boundaries are derived per trial from observed data")
    t0 = predict_stopping_times(spec, "H0", source)
    sigma0 = assemble(variance_source(spec, "H0", source), spec.combo, t0)
    return solve_boundaries(sigma0, spec.alpha, spec.spending, spec.nu, spec.mvn)


def sample_size_curve(
    spec: DesignSpec, lam: float, theta: float, eps_grid: Sequence[float]
) -> List[dict]:
    """
    For each delay eps, sizes of the maxcombo design and of single-test
    designs with the first non-log-rank weight (WLRT) and the log-rank (SLRT).
    """
    wlrt = next((w for w in spec.combo if not w.is_logrank), None)
    rows = []
    for eps in eps_grid:
        if not 0 <= eps < spec.ac.study_end:
            raise DomainError(f"delay must lie in [0, tau), got {eps}")
        base = spec.with_(model=two_piece(lam, theta, eps, spec.model.assign_prob))
        row: dict = {"eps": float(eps)}
        mc = design(base)
        row.update(n_MC=mc.n, d_MC=mc.d)
        slrt = design(base.with_(combo=(LOGRANK,), monitor_weight=0, monitor="events"))
        row.update(n_SLRT=slrt.n, d_SLRT=slrt.d)
        if wlrt is not None:
            single = design(base.with_(combo=(wlrt,), monitor_weight=0, monitor="events"))
            row.update(n_WLRT=single.n, d_WLRT=single.d)
        log.info("eps=%g: %s", eps, row)
        rows.append(row)
    return rows
