"""Sweep controller processing delay and report mean invalid requests per mode.

LAMP does not depend on the controller, so its column should stay flat while
the SDN column grows roughly linearly with delay.

    python3 scripts/controller_sweep.py scenarios/line3.yaml --delays 0 5 10 20 40 80
"""

import argparse
import csv
import dataclasses
import sys

from lamp.fabric import Mode, build_fabric, run_scenario
from lamp.scenario import load_scenario


def mean_invalid(loaded, server, **changes):
    sc = dataclasses.replace(loaded.scenario, **changes)
    rows = [r.invalid_received for r in run_scenario(build_fabric(loaded.topology, sc)).rows if r.server == server]
    return sum(rows) / len(rows)


def main():
    p = argparse.ArgumentParser()
    p.add_argument("scenario")
    p.add_argument("--server", default="server1")
    p.add_argument("--delays", type=float, nargs="+", default=[0, 5, 10, 20, 40, 80])
    p.add_argument("--trials", type=int, default=10)
    args = p.parse_args()

    loaded = load_scenario(args.scenario)
    out = csv.writer(sys.stdout)
    out.writerow(["processing_ms", "lamp_mean", "sdn_mean"])
    for d in args.delays:
        ctrl = dataclasses.replace(loaded.scenario.controller, processing_ms=d)
        row = [mean_invalid(loaded, args.server, mode=m, controller=ctrl, trials=args.trials) for m in Mode]
        out.writerow([d, *(f"{v:.2f}" for v in row)])


if __name__ == "__main__":
    main()
