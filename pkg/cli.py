"""cli.py

Command-line front end for the maxcombo design engine.

Commands:
  design    solve boundaries, n and d for a design config
  simulate  Monte Carlo operating characteristics for a scenario config
  curve     sample sizes over a grid of delays (maxcombo vs single tests)
  corr      simulated vs predicted vs estimated correlations

Every output file gets a <name>.manifest.json next to it.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import pandas as pd

import config
from engine import __version__
from engine.config_loader import (
    apply_overrides,
    design_parameters,
    design_spec_from_config,
    hypotheses,
    load_config,
    scenario_from_config,
)
from engine.corr_assembly import write_correlation_report
from engine.design_engine import design, sample_size_curve
from engine.errors import ConfigError, EngineError
from engine.trial_sim import operating_characteristics, sample_correlation_report, write_oc_csv

log = logging.getLogger("cli")

# flag name -> config key
OVERRIDES = {
    "alpha": "alpha",
    "beta": "beta",
    "theta": "theta",
    "eps": "eps",
    "lambda_": "lambda",
    "source": "source",
    "b": "b",
    "seed": "seed",
    "reps": "reps",
    "hypothesis": "hypothesis",
    "spending_family": "spending.family",
    "spending_param": "spending.param",
}

DEFAULT_EPS_GRID = "0,0.25,0.5,0.75,1,1.25,1.5,2,2.5,3,3.5"


# ---------- manifests ----------

def write_manifest(path: Path, command: str, cfg: Dict[str, Any], outputs: Sequence[Path]) -> Path:
    manifest = {
        "command": command,
        "config": cfg,
        "seed": cfg.get("seed", (cfg.get("mvn") or {}).get("seed")),
        "version": __version__,
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "outputs": [str(p) for p in outputs],
    }
    target = path.with_name(path.stem + ".manifest.json")
    with target.open("w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2)
    return target


def _write_json(obj: Any, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2)
    return path


def _resolved(args: argparse.Namespace) -> Dict[str, Any]:
    cfg = load_config(args.config)
    overrides = {key: getattr(args, flag, None) for flag, key in OVERRIDES.items()}
    return apply_overrides(cfg, overrides)


# ---------- commands ----------

def cmd_design(args: argparse.Namespace) -> int:
    cfg = _resolved(args)
    spec = design_spec_from_config(cfg, threads=args.threads)
    report = design(spec)

    out = Path(args.out) / f"{args.name}.json"
    _write_json(report.to_dict(), out)
    write_manifest(out, "design", cfg, [out])
    print(report.summary())
    print(f"report written to {out}")
    return 0


def _design_for(cfg: Dict[str, Any], threads: int):
    spec = design_spec_from_config(cfg, threads=threads)
    return spec, design(spec)


def cmd_simulate(args: argparse.Namespace) -> int:
    cfg = _resolved(args)
    spec, report = _design_for(cfg, args.threads)
    ocs = []
    for hyp in hypotheses(cfg):
        scenario = scenario_from_config(cfg, hyp, spec, report, threads=args.threads)
        ocs.append(operating_characteristics(scenario))

    out_csv = write_oc_csv(ocs, Path(args.out) / f"{args.name}.csv")
    out_json = _write_json(
        {"design": report.to_dict(), "results": [oc.to_dict() for oc in ocs]},
        Path(args.out) / f"{args.name}.json",
    )
    write_manifest(out_csv, "simulate", cfg, [out_csv, out_json])
    print(pd.concat([oc.to_frame() for oc in ocs]).to_string(index=False))
    return 0


def cmd_curve(args: argparse.Namespace) -> int:
    cfg = _resolved(args)
    spec = design_spec_from_config(cfg, threads=args.threads)
    par = design_parameters(cfg)
    try:
        grid = [float(x) for x in args.eps_grid.split(",") if x.strip()]
    except ValueError:
        raise ConfigError("eps-grid", f"expected comma-separated numbers, got {args.eps_grid!r}") from None
    rows = sample_size_curve(spec, par["lambda"], par["theta"], grid)

    out = Path(args.out) / f"{args.name}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(rows).to_csv(out, index=False, float_format="%.6g")
    write_manifest(out, "curve", {**cfg, "eps_grid": grid}, [out])
    print(pd.DataFrame(rows).to_string(index=False))
    return 0


def cmd_corr(args: argparse.Namespace) -> int:
    cfg = _resolved(args)
    spec, report = _design_for(cfg, args.threads)
    outputs: List[Path] = []
    for hyp in hypotheses(cfg):
        scenario = scenario_from_config(cfg, hyp, spec, report, threads=args.threads)
        rows = sample_correlation_report(scenario)
        out = write_correlation_report(rows, Path(args.out) / f"{args.name}_{hyp}.csv")
        outputs.append(out)
        print(f"{hyp}:")
        print(pd.DataFrame(rows).to_string(index=False))
    for out in outputs:
        write_manifest(out, "corr", cfg, outputs)
    return 0


# ---------- parser ----------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="maxcombo", description="Group-sequential maxcombo design engine")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING (default from MAXCOMBO_LOG_LEVEL)")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, default_config: Optional[Path], name: str) -> None:
        p.add_argument("--config", default=str(default_config) if default_config else None,
                       required=default_config is None, help="design or scenario JSON")
        p.add_argument("--out", default=str(config.OUTPUT_DIR), help="output directory")
        p.add_argument("--name", default=name, help="output file stem")
        p.add_argument("--threads", type=int, default=config.THREADS)
        p.add_argument("--alpha", type=float)
        p.add_argument("--beta", type=float)
        p.add_argument("--theta", type=float)
        p.add_argument("--eps", type=float)
        p.add_argument("--lambda", dest="lambda_", type=float)
        p.add_argument("--source", choices=["pred-sto", "pred-exa", "est", "naive"])
        p.add_argument("--b", type=int)
        p.add_argument("--spending-family", choices=["power", "obf", "pocock"])
        p.add_argument("--spending-param", type=float)

    def simulation(p: argparse.ArgumentParser) -> None:
        p.add_argument("--seed", type=int)
        p.add_argument("--reps", type=int)
        p.add_argument("--hypothesis", choices=["H0", "H1", "both"])

    p = sub.add_parser("design", help="solve a design")
    common(p, config.DEFAULT_DESIGN_CONFIG, "design")
    p.set_defaults(func=cmd_design)

    p = sub.add_parser("simulate", help="operating characteristics by simulation")
    common(p, None, "oc")
    simulation(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("curve", help="sample sizes over delay times")
    common(p, config.DEFAULT_DESIGN_CONFIG, "curve")
    p.add_argument("--eps-grid", default=DEFAULT_EPS_GRID)
    p.set_defaults(func=cmd_curve)

    p = sub.add_parser("corr", help="correlation comparison report")
    common(p, None, "corr")
    simulation(p)
    p.set_defaults(func=cmd_corr)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    config.setup_logging(args.log_level)
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except EngineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
