"""Run both mitigation modes on a scenario and print the per-server summary.

    python3 scripts/compare_modes.py scenarios/line3_calibrated.yaml --seed 7
"""

import argparse
import dataclasses

from lamp.cli import summary_table
from lamp.fabric import Mode, build_fabric, run_scenario
from lamp.scenario import load_scenario


def main():
    p = argparse.ArgumentParser()
    p.add_argument("scenario")
    p.add_argument("--seed", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--parallel", type=int, default=1)
    args = p.parse_args()

    loaded = load_scenario(args.scenario)
    overrides = {k: v for k, v in (("seed", args.seed), ("trials", args.trials)) if v is not None}
    aggs = []
    for mode in Mode:
        sc = dataclasses.replace(loaded.scenario, mode=mode, **overrides)
        aggs += run_scenario(build_fabric(loaded.topology, sc), parallel=args.parallel).aggregate
    for server in sorted({a.server for a in aggs}):
        print(summary_table(aggs, server))


if __name__ == "__main__":
    main()
