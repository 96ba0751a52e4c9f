"""Command line entry point.

Exit codes: 0 success, 1 usage, 2 parse/validation/lowering error,
3 an out-of-order run disagreed with the in-order reference.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .analysis import label_pass
from .harness import (REPORT_HEADER, ScenarioError, compare, corpus_paths, load_scenario,
                      prepare, resolve_config, write_reports)
from .lowering import LoweringError, dump_stream
from .mir import MirError, parse_program, print_program
from .ooo import PRESETS, SimulationError, Simulator

EXIT_USAGE, EXIT_INVALID, EXIT_MISMATCH = 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _cmd_label(args) -> int:
    prog = parse_program(Path(args.program).read_text())
    labelled, report = label_pass(prog)
    if args.report == "json":
        print(report.dumps())
    else:
        sys.stdout.write(print_program(labelled, show_ids=args.ids))
    return 0


def _cmd_run(args) -> int:
    scen = load_scenario(args.scenario)
    cfg = resolve_config(args.config, scen.path.parent if scen.path else None)
    prep = prepare(scen)
    labels = args.labels == "on"
    sim = Simulator(cfg, trace=args.trace)
    state, metrics = sim.run(prep.ops, prep.init, labels_enabled=labels)
    equal = state == prep.golden
    if args.trace:
        for ev in sim.trace:
            addr = "-" if ev.addr is None else f"{ev.addr:#x}"
            extra = "" if ev.other is None else f" {ev.other}"
            print(f"{ev.cycle} {ev.event} {ev.seq} {ev.pc:#x} {addr}{extra}", file=sys.stderr)
    out = {"scenario": scen.name, "labels": args.labels, "state_equal": equal,
           "note": REPORT_HEADER, "config": cfg.to_dict(), "metrics": metrics.to_dict()}
    text = json.dumps(out, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    if not equal:
        print("error: final state differs from the in-order reference", file=sys.stderr)
        return EXIT_MISMATCH
    return 0


def _cmd_compare(args) -> int:
    paths = [load_scenario(s).path for s in args.scenarios] if args.scenarios \
        else corpus_paths()
    configs = args.configs.replace(",", " ").split() if args.configs else None
    rows = compare(paths, configs, jobs=args.jobs)
    rep = write_reports(rows, args.out)
    for r in rows:
        print(f"{r.scenario:26s} {r.config:10s} lookups -{r.lookup_reduction_pct:5.1f}%  "
              f"cpi {r.cpi_change_pct:+6.2f}%  viol {r.violations_unlab}/{r.violations_lab}  "
              f"{r.status}")
    if rep is not None:
        for c in rep.per_config:
            print(f"summary {c.config:10s} mean -{c.mean_lookup_reduction_pct:.1f}% "
                  f"max -{c.max_lookup_reduction_pct:.1f}% "
                  f"geomean cpi {c.geomean_cpi_change_pct:+.2f}%")
    if any(r.failed for r in rows):
        print("error: at least one run disagreed with the in-order reference", file=sys.stderr)
        return EXIT_MISMATCH
    return 0


def _cmd_presets(args) -> int:
    keys = ["width", "iq_entries", "rob_entries", "lq_entries", "sq_entries",
            "ssit_entries", "lfst_entries", "clear_period"]
    print(f"{'':14s}" + "".join(f"{n:>10s}" for n in PRESETS))
    for k in keys:
        print(f"{k:14s}" + "".join(f"{p.to_dict()[k]:>10d}" for p in PRESETS.values()))
    return 0


def _cmd_dump(args) -> int:
    sys.stdout.write(dump_stream(prepare(load_scenario(args.scenario)).ops))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pndsim", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="cmd", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("label", help="run the labelling pass over a program file")
    s.add_argument("program")
    s.add_argument("--report", choices=["json"])
    s.add_argument("--ids", action="store_true", help="annotate instructions with id/pc")
    s.set_defaults(func=_cmd_label)

    s = sub.add_parser("run", help="simulate one scenario under one config")
    s.add_argument("scenario")
    s.add_argument("--config", default="small", help="preset name or JSON config file")
    s.add_argument("--labels", choices=["on", "off"], default="on")
    s.add_argument("--trace", action="store_true", help="per-cycle event log on stderr")
    s.add_argument("--out", help="write metrics JSON here instead of stdout")
    s.set_defaults(func=_cmd_run)

    s = sub.add_parser("compare", help="labelled vs unlabelled over scenarios")
    s.add_argument("scenarios", nargs="*", help="scenario names or files (default: corpus)")
    s.add_argument("--out", required=True)
    s.add_argument("--configs", help="override the scenarios' configs, e.g. small,large")
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=_cmd_compare)

    s = sub.add_parser("presets", help="print the CPU preset table")
    s.set_defaults(func=_cmd_presets)

    s = sub.add_parser("dump", help="print a scenario's dynamic op stream")
    s.add_argument("scenario")
    s.set_defaults(func=_cmd_dump)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (MirError, LoweringError, ScenarioError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except SimulationError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_MISMATCH
