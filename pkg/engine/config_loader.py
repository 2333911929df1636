# engine/config_loader.py

"""
Design and scenario configs (JSON).

A design config carries the assumed model and the design settings; a
scenario config is a design config plus simulation keys (hypothesis, reps,
seed, methods) and optional true_* keys for the law the trials come from.
"""

import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple

from .design_engine import SOURCES, SPENDING_FAMILIES, DesignReport, DesignSpec, MvnSettings, SpendingSpec
from .errors import ConfigError, DomainError
from .stoch_predict import WeightSpec
from .surv_model import AccrualCensoring, TwoArmModel, two_piece, yearly_to_rate
from .trial_sim import DESK_REPS, EST_MVN, FULL_REPS, METHODS, Scenario

log = logging.getLogger(__name__)

ROOT = Path(__file__).resolve().parents[1]
CONFIG_DIR = ROOT / "config"

REQUIRED_KEYS = ("lambda", "theta", "eps", "R", "tau", "p", "alpha", "beta", "combo", "nu")


def load_config(path: str | Path) -> Dict[str, Any]:
    """Read a config; bare names resolve against config/."""
    path = Path(path)
    if not path.exists() and not path.is_absolute():
        candidate = CONFIG_DIR / path
        if candidate.exists():
            path = candidate
        elif (CONFIG_DIR / f"{path}.json").exists():
            path = CONFIG_DIR / f"{path}.json"
    if not path.exists():
        raise ConfigError("path", f"config file {path} not found")
    with path.open("r", encoding="utf-8") as f:
        try:
            cfg = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigError("path", f"{path} is not valid JSON ({exc})") from None
    if not isinstance(cfg, dict):
        raise ConfigError("path", f"{path} must hold a JSON object")
    return cfg


def apply_overrides(cfg: Mapping[str, Any], overrides: Mapping[str, Any]) -> Dict[str, Any]:
    """Config wins unless a flag was given; nested spending/mvn keys use dotted names."""
    out = json.loads(json.dumps(cfg))
    for key, value in overrides.items():
        if value is None:
            continue
        if "." in key:
            outer, inner = key.split(".", 1)
            section = out.get(outer)
            if not isinstance(section, dict):
                section = {}
            section[inner] = value
            out[outer] = section
        else:
            out[key] = value
    return out


# ---------- typed lookups ----------

def _require(cfg: Mapping[str, Any], key: str) -> Any:
    if key not in cfg:
        raise ConfigError(key, "missing")
    return cfg[key]


def _number(cfg: Mapping[str, Any], key: str, default: Any = None) -> float:
    value = cfg.get(key, default) if default is not None else _require(cfg, key)
    try:
        out = float(value)
    except (TypeError, ValueError):
        raise ConfigError(key, f"expected a number, got {value!r}") from None
    if not math.isfinite(out):
        raise ConfigError(key, f"must be finite, got {value!r}")
    return out


def _integer(cfg: Mapping[str, Any], key: str, default: Optional[int] = None) -> int:
    value = cfg.get(key, default) if default is not None else _require(cfg, key)
    try:
        ok = not isinstance(value, bool) and float(value).is_integer()
    except (TypeError, ValueError):
        ok = False
    if not ok:
        raise ConfigError(key, f"expected an integer, got {value!r}")
    return int(value)


def _hazard(cfg: Mapping[str, Any], prefix: str = "") -> float:
    """Control hazard from `lambda`, or ln2/median from `median`."""
    lam_key, med_key = f"{prefix}lambda", f"{prefix}median"
    if lam_key in cfg:
        return _number(cfg, lam_key)
    if med_key in cfg:
        median = _number(cfg, med_key)
        if median <= 0:
            raise ConfigError(med_key, f"must be positive, got {median}")
        return math.log(2.0) / median
    raise ConfigError(lam_key, "missing")


def _combo(cfg: Mapping[str, Any]) -> Tuple[WeightSpec, ...]:
    raw = _require(cfg, "combo")
    if not isinstance(raw, list) or not raw:
        raise ConfigError("combo", "expected a non-empty list of [rho, gamma] pairs")
    try:
        return tuple(WeightSpec.parse(w) for w in raw)
    except DomainError as exc:
        raise ConfigError("combo", str(exc)) from None


def _accrual(cfg: Mapping[str, Any], key: str, censor_key: str, R: float, tau: float) -> AccrualCensoring:
    raw = cfg.get(key, "uniform")
    censor = cfg.get(censor_key, [0.0, 0.0])
    if not isinstance(censor, list) or len(censor) != 2:
        raise ConfigError(censor_key, f"expected [control, treatment], got {censor!r}")
    try:
        rates = (yearly_to_rate(float(censor[0])), yearly_to_rate(float(censor[1])))
    except (DomainError, TypeError, ValueError) as exc:
        raise ConfigError(censor_key, str(exc)) from None
    try:
        if raw == "uniform":
            return AccrualCensoring(R, tau, None, rates)
        if raw == "staircase":
            return AccrualCensoring.staircase(R, tau, rates)
        if isinstance(raw, list):
            return AccrualCensoring(R, tau, tuple((float(d), float(r)) for d, r in raw), rates)
    except (DomainError, TypeError, ValueError) as exc:
        raise ConfigError(key, str(exc)) from None
    raise ConfigError(key, f"expected 'uniform', 'staircase' or [[duration, rate], ...], got {raw!r}")


def _mvn(raw: Any, key: str, default: MvnSettings, threads: int) -> MvnSettings:
    if raw is None:
        return MvnSettings(default.accuracy, default.seed, default.replicates, threads)
    if not isinstance(raw, dict):
        raise ConfigError(key, f"expected an object, got {raw!r}")
    try:
        return MvnSettings(
            accuracy=float(raw.get("accuracy", default.accuracy)),
            seed=int(raw.get("seed", default.seed)),
            replicates=int(raw.get("replicates", default.replicates)),
            threads=threads,
        )
    except (DomainError, TypeError, ValueError) as exc:
        raise ConfigError(key, str(exc)) from None


# ---------- builders ----------

def design_parameters(cfg: Mapping[str, Any]) -> Dict[str, float]:
    """The two-piece parameters a config assumes."""
    for key in REQUIRED_KEYS:
        if key == "lambda":
            continue
        _require(cfg, key)
    return {
        "lambda": _hazard(cfg),
        "theta": _number(cfg, "theta"),
        "eps": _number(cfg, "eps"),
        "R": _number(cfg, "R"),
        "tau": _number(cfg, "tau"),
        "p": _number(cfg, "p"),
    }


def design_spec_from_config(cfg: Mapping[str, Any], threads: int = 1) -> DesignSpec:
    par = design_parameters(cfg)
    try:
        model = two_piece(par["lambda"], par["theta"], par["eps"], par["p"])
    except DomainError as exc:
        raise ConfigError("theta", str(exc)) from None
    ac = _accrual(cfg, "accrual", "censor_yearly", par["R"], par["tau"])

    nu = _require(cfg, "nu")
    if not isinstance(nu, list) or not nu:
        raise ConfigError("nu", f"expected a non-empty list, got {nu!r}")
    try:
        nu = tuple(float(v) for v in nu)
    except (TypeError, ValueError):
        raise ConfigError("nu", f"expected numbers, got {nu!r}") from None
    if nu[0] <= 0 or any(b <= a for a, b in zip(nu, nu[1:])) or nu[-1] != 1.0:
        raise ConfigError("nu", f"need 0 < nu_1 < ... < nu_M = 1, got {list(nu)}")
    alpha, beta = _number(cfg, "alpha"), _number(cfg, "beta")
    for key, value in (("alpha", alpha), ("beta", beta)):
        if not 0 < value < 1:
            raise ConfigError(key, f"must lie in (0, 1), got {value}")

    spend = cfg.get("spending", {})
    if not isinstance(spend, dict):
        raise ConfigError("spending", f"expected an object, got {spend!r}")
    family = spend.get("family", "power")
    if family not in SPENDING_FAMILIES:
        raise ConfigError("spending.family", f"expected one of {SPENDING_FAMILIES}, got {family!r}")

    source = cfg.get("source", "pred-sto")
    if source not in SOURCES:
        raise ConfigError("source", f"expected one of {SOURCES}, got {source!r}")

    try:
        return DesignSpec(
            model=model,
            ac=ac,
            combo=_combo(cfg),
            nu=nu,
            alpha=alpha,
            beta=beta,
            monitor_weight=_integer(cfg, "monitor_weight", 0),
            monitor=cfg.get("monitor"),
            spending=SpendingSpec(family, float(spend.get("param", 3.0))),
            b=_integer(cfg, "b", 30),
            source=source,
            mvn=_mvn(cfg.get("mvn"), "mvn", MvnSettings(), threads),
        )
    except DomainError as exc:
        raise ConfigError("design", str(exc)) from None


def true_model(cfg: Mapping[str, Any]) -> Tuple[TwoArmModel, AccrualCensoring]:
    """Data-generating law; true_* keys override the design assumptions."""
    par = design_parameters(cfg)
    lam = _hazard(cfg, "true_") if ("true_lambda" in cfg or "true_median" in cfg) else par["lambda"]
    theta = _number(cfg, "true_theta", par["theta"]) if "true_theta" in cfg else par["theta"]
    eps = _number(cfg, "true_eps", par["eps"]) if "true_eps" in cfg else par["eps"]
    try:
        model = two_piece(lam, theta, eps, par["p"])
    except DomainError as exc:
        raise ConfigError("true_theta", str(exc)) from None
    accrual_key = "true_accrual" if "true_accrual" in cfg else "accrual"
    censor_key = "true_censor_yearly" if "true_censor_yearly" in cfg else "censor_yearly"
    ac = _accrual(cfg, accrual_key, censor_key, par["R"], par["tau"])
    return model, ac


def hypotheses(cfg: Mapping[str, Any]) -> List[str]:
    hyp = cfg.get("hypothesis", "both")
    if hyp == "both":
        return ["H0", "H1"]
    if hyp in ("H0", "H1"):
        return [hyp]
    raise ConfigError("hypothesis", f"expected H0, H1 or both, got {hyp!r}")


def scenario_from_config(
    cfg: Mapping[str, Any],
    hypothesis: str,
    spec: Optional[DesignSpec] = None,
    design: Optional[DesignReport] = None,
    threads: int = 1,
) -> Scenario:
    model, ac = true_model(cfg)
    scale = FULL_REPS if cfg.get("full_scale", False) else DESK_REPS
    reps = _integer(cfg, "reps", scale[hypothesis]) if "reps" in cfg else scale[hypothesis]
    methods = cfg.get("methods", list(METHODS))
    if not isinstance(methods, list) or any(m not in METHODS for m in methods):
        raise ConfigError("methods", f"expected a subset of {list(METHODS)}, got {methods!r}")
    cap = cfg.get("calendar_cap")
    try:
        return Scenario(
            model=model,
            ac=ac,
            hypothesis=hypothesis,
            spec=spec,
            design=design,
            reps=reps,
            seed=_integer(cfg, "seed", 2024),
            methods=tuple(methods),
            est_mvn=_mvn(cfg.get("est_mvn"), "est_mvn", EST_MVN, 1),
            calendar_cap=None if cap is None else _number(cfg, "calendar_cap"),
            threads=threads,
        )
    except DomainError as exc:
        raise ConfigError("reps", str(exc)) from None
