"""Design every shipped scenario config and optionally simulate it.

    python scripts/run_scenarios.py               # n, d, boundaries per config
    python scripts/run_scenarios.py --simulate    # plus operating characteristics
"""
import argparse
import json
import sys
from pathlib import Path

import pandas as pd

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT))

import config  # noqa: E402
from engine.config_loader import design_spec_from_config, hypotheses, load_config, scenario_from_config  # noqa: E402
from engine.design_engine import design  # noqa: E402
from engine.trial_sim import operating_characteristics, write_oc_csv  # noqa: E402


def run_one(path: Path, simulate: bool, threads: int, out_dir: Path) -> dict:
    cfg = load_config(path)
    spec = design_spec_from_config(cfg, threads=threads)
    report = design(spec)
    row = {
        "config": path.stem,
        "theta": cfg["theta"],
        "n": report.n,
        "d": report.d,
        "g_interim": report.boundaries[0],
        "g_final": report.boundaries[-1],
        "interim_power": report.stage_power[0],
    }
    if simulate:
        ocs = [
            operating_characteristics(scenario_from_config(cfg, hyp, spec, report, threads=threads))
            for hyp in hypotheses(cfg)
        ]
        write_oc_csv(ocs, out_dir / f"{path.stem}_oc.csv")
        with (out_dir / f"{path.stem}_oc.json").open("w") as f:
            json.dump([oc.to_dict() for oc in ocs], f, indent=2)
    return row


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--simulate", action="store_true")
    parser.add_argument("--threads", type=int, default=config.THREADS)
    parser.add_argument("--pattern", default="scenario_*.json")
    args = parser.parse_args()

    config.setup_logging()
    out_dir = config.OUTPUT_DIR
    out_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    for path in sorted(config.CONFIG_DIR.glob(args.pattern)):
        print(f"[INFO] {path.name}")
        rows.append(run_one(path, args.simulate, args.threads, out_dir))

    table = pd.DataFrame(rows)
    table.to_csv(out_dir / "sample_sizes.csv", index=False, float_format="%.6g")
    print(table.to_string(index=False))


if __name__ == "__main__":
    main()
