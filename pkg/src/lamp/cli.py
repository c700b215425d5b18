"""Command line front end: ``lamp run | compare | inspect``."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import sys
from pathlib import Path

from .fabric import (
    AggregateRow,
    Fabric,
    Metrics,
    Mode,
    SimulationError,
    TrialRow,
    aggregate,
    build_fabric,
    run_scenario,
)
from .match_tables import DROP, ConfigError
from .scenario import LoadedScenario, ScenarioError, load_scenario
from .wire import int2ip, int2mac

ROW_FIELDS = ["trial", "mode", "server", "invalid_received", "block_time_ms", "alert_drops"]
AGG_FIELDS = ["mode", "server", "total", "min", "max", "mean"]


class ReportError(RuntimeError):
    pass


def _fmt_time(t: float | None) -> str:
    return "" if t is None else f"{t:.3f}"


def build_report(loaded: LoadedScenario, seed: int, modes: list[str], rows: list[TrialRow]) -> dict:
    return {
        "scenario": loaded.source,
        "scenario_sha256": loaded.digest,
        "seed": seed,
        "modes": modes,
        "rows": [dataclasses.asdict(r) for r in rows],
        "aggregate": [dataclasses.asdict(a) for a in aggregate(rows)],
    }


def check_report(report: dict) -> None:
    """Raise ReportError unless the aggregate block matches the rows."""
    rows = [TrialRow(**r) for r in report["rows"]]
    expected = [dataclasses.asdict(a) for a in aggregate(rows)]
    if expected != report["aggregate"]:
        raise ReportError("aggregate block does not match per-trial rows")


def render_csv(report: dict) -> str:
    buf = io.StringIO()
    buf.write(f"# scenario={report['scenario']} sha256={report['scenario_sha256']}\n")
    buf.write(f"# seed={report['seed']} modes={','.join(report['modes'])}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ROW_FIELDS)
    for r in report["rows"]:
        w.writerow([r["trial"], r["mode"], r["server"], r["invalid_received"], _fmt_time(r["block_time_ms"]),
                    r["alert_drops"]])
    buf.write("\n# aggregate\n")
    w.writerow(AGG_FIELDS)
    for a in report["aggregate"]:
        w.writerow([a["mode"], a["server"], a["total"], a["min"], a["max"], f"{a['mean']:.4f}"])
    return buf.getvalue()


def render_json(report: dict) -> str:
    return json.dumps(report, indent=2) + "\n"


def write_report(report: dict, path: str | None, fmt: str | None) -> str:
    check_report(report)
    if fmt is None:
        fmt = "json" if path and path.endswith(".json") else "csv"
    text = render_json(report) if fmt == "json" else render_csv(report)
    if path:
        Path(path).write_text(text)
    return text


def summary_table(aggs: list[AggregateRow], server: str) -> str:
    """Total / Maximum / Minimum / Average, one column per mode."""
    by_mode = {a.mode: a for a in aggs if a.server == server}
    modes = [m.value for m in Mode if m.value in by_mode]
    head = f"{'Measurement':<12}" + "".join(f"{m.upper():>10}" for m in modes)
    lines = [f"invalid requests received by {server}", head]
    for label, attr, fmt in (("Total", "total", "d"), ("Maximum", "max", "d"), ("Minimum", "min", "d"),
                             ("Average", "mean", ".2f")):
        lines.append(f"{label:<12}" + "".join(f"{getattr(by_mode[m], attr):>10{fmt}}" for m in modes))
    return "\n".join(lines) + "\n"


def _apply_overrides(loaded: LoadedScenario, seed: int | None, mode: str | None) -> None:
    if seed is not None:
        if not 0 <= seed < 2**64:
            raise ScenarioError("--seed must be an unsigned 64-bit integer")
        loaded.scenario.seed = seed
    if mode is not None:
        loaded.scenario.mode = Mode(mode)


def _simulate(loaded: LoadedScenario, mode: Mode, trace: bool, parallel: int) -> Metrics:
    sc = dataclasses.replace(loaded.scenario, mode=mode)
    fabric = build_fabric(loaded.topology, sc, trace=trace)
    return run_scenario(fabric, parallel=parallel)


def _write_trace(path: str, metrics: Metrics) -> None:
    lines = metrics.trace_lines()
    Path(path).write_text("".join(line + "\n" for line in lines))


def _mode_path(path: str, mode: str) -> str:
    p = Path(path)
    return str(p.with_name(f"{p.stem}.{mode}{p.suffix}"))


def cmd_run(args) -> int:
    loaded = load_scenario(args.scenario)
    _apply_overrides(loaded, args.seed, args.mode)
    trace_path = args.trace or loaded.output.trace
    metrics = _simulate(loaded, loaded.scenario.mode, trace_path is not None, args.parallel)
    report = build_report(loaded, loaded.scenario.seed, [loaded.scenario.mode.value], metrics.rows)
    text = write_report(report, args.out or loaded.output.path, loaded.output.format)
    if not (args.out or loaded.output.path):
        sys.stdout.write(text)
    if trace_path:
        _write_trace(trace_path, metrics)
    return 0


def cmd_compare(args) -> int:
    loaded = load_scenario(args.scenario)
    _apply_overrides(loaded, args.seed, None)
    trace_path = args.trace or loaded.output.trace
    rows: list[TrialRow] = []
    for mode in Mode:
        metrics = _simulate(loaded, mode, trace_path is not None, args.parallel)
        rows.extend(metrics.rows)
        if trace_path:
            _write_trace(_mode_path(trace_path, mode.value), metrics)
    report = build_report(loaded, loaded.scenario.seed, [m.value for m in Mode], rows)
    out = args.out or loaded.output.path
    if out:
        write_report(report, out, loaded.output.format)
    else:
        check_report(report)
    aggs = aggregate(rows)
    for server in sorted({a.server for a in aggs}):
        sys.stdout.write(summary_table(aggs, server))
    return 0


def dump_switch(fabric: Fabric, name: str) -> str:
    spec = fabric.topology.switch(name)
    state = fabric.switches[name]
    t = state.tables
    out = [f"switch {name} swid={t.swid} mac={int2mac(spec.mac)}"]
    cfg = spec.config
    out.append(f"ports external={sorted(cfg.external_ports)} host={sorted(cfg.host_ports)} "
               f"trunk={sorted(cfg.trunk_ports)}")

    out.append("ipv4_lpm:")
    for prefix, action in t.ipv4_lpm:
        rhs = "drop" if action is DROP else f"ipv4_forward(port={action.egress_port}, mac={int2mac(action.dst_mac)})"
        out.append(f"  {prefix} -> {rhs}")

    def exact(table, fmt_key):
        out.append(f"{table.name}: default={table.default_action}")
        if not table.entries:
            out.append("  (empty)")
        for key in sorted(table.entries):
            act = table.entries[key]
            if act.name == "ipv4_forward":
                hop = act.params[0]
                rhs = f"ipv4_forward(port={hop.egress_port}, mac={int2mac(hop.dst_mac)})"
            else:
                rhs = str(act)
            out.append(f"  {fmt_key(key)} -> {rhs}")

    exact(t.swid_add, lambda k: f"ingress_port={k[0]}")
    exact(t.swid_remove, lambda k: f"egress_port={k[0]} option={k[1]}")
    exact(t.swid_forward, lambda k: f"swid={k[0]}")

    out.append(f"registers (size {state.register_size}, nonzero slots):")
    any_set = False
    for i in range(state.register_size):
        if state.blacklist[i] or state.iplist[i]:
            out.append(f"  blacklist[{i}]={state.blacklist[i]} iplist[{i}]={int2ip(state.iplist[i])}")
            any_set = True
        if state.hash_ip_to_swid[i]:
            out.append(f"  hash_ip_to_swid[{i}]={state.hash_ip_to_swid[i]}")
            any_set = True
    if not any_set:
        out.append("  (all zero)")
    return "\n".join(out) + "\n"


def _find_switch(fabric: Fabric, ident: str) -> str:
    for s in fabric.topology.switches:
        if s.name == ident or str(s.config.swid) == ident:
            return s.name
    raise ScenarioError(f"unknown switch {ident!r}")


def cmd_inspect(args) -> int:
    loaded = load_scenario(args.scenario)
    fabric = build_fabric(loaded.topology, loaded.scenario)
    name = _find_switch(fabric, args.switch)
    if args.run:
        fabric.run_trial(0)
    sys.stdout.write(dump_switch(fabric, name))
    return 0


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lamp", description="LAMP edge-mitigation simulator")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, with_mode):
        sp.add_argument("--scenario", required=True, help="scenario YAML file")
        sp.add_argument("--seed", type=int, help="override scenario.seed")
        if with_mode:
            sp.add_argument("--mode", choices=[m.value for m in Mode], help="override scenario.mode")
        sp.add_argument("--out", help="report path (.csv or .json); stdout if omitted")
        sp.add_argument("--trace", help="write a per-event trace here")
        sp.add_argument("--parallel", type=int, default=1, help="worker processes for trials")

    common(sub.add_parser("run", help="simulate one mode"), True)
    common(sub.add_parser("compare", help="simulate LAMP and SDN on the same seed"), False)
    sp = sub.add_parser("inspect", help="dump one switch's tables and registers")
    sp.add_argument("--scenario", required=True)
    sp.add_argument("--switch", required=True, help="switch name or swid")
    sp.add_argument("--run", action="store_true", help="run trial 0 first, then dump registers")
    return p


COMMANDS = {"run": cmd_run, "compare": cmd_compare, "inspect": cmd_inspect}


def main(argv: list[str] | None = None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ScenarioError, ConfigError) as exc:
        print(f"lamp: invalid scenario: {exc}", file=sys.stderr)
        return 2
    except (SimulationError, ReportError) as exc:
        print(f"lamp: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
