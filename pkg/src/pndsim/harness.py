"""Labelled-vs-unlabelled experiment driver.

A scenario is an INI file naming a program, its entry function, the
concrete inputs that lowering needs, and the CPU configs to run. Example::

    [scenario]
    name = listing1
    program = listing1.mir
    entry = pnd_example
    configs = small large xlarge
    invocations = 1
    # "analysis" runs the labelling pass; "source" keeps pnd bits from the text
    labels = analysis

    [bind]
    n = 256

    [array a]
    base = 0x100000
    length = 256
    esz = 4
    init = const 1          # or: iota [start [step]] / values 1 2 3

    [addr_delay]
    # static instruction id = extra cycles before the address resolves
    3 = 30

    [call record]
    writes = log[0]=1 log[1]=2

``configs`` entries are preset names or paths (relative to the scenario)
of JSON files holding :class:`CpuConfig` fields, e.g.
``{"preset": "small", "ssit_entries": 1024, "lfst_entries": 1024}``.
"""

from __future__ import annotations

import configparser
import csv
import io
import json
import math
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .analysis import LabelReport, label_pass
from .lowering import LoweringInputs, Placement, initial_state, lower, run_inorder
from .mir import Program, parse_program
from .ooo import PRESETS, CpuConfig, RunMetrics, simulate

CORPUS_ENV = "PNDSIM_CORPUS"


class ScenarioError(Exception):
    pass


def corpus_dir() -> Path:
    env = os.environ.get(CORPUS_ENV)
    if env:
        return Path(env)
    return Path(__file__).parent / "corpus"


def corpus_paths() -> list[Path]:
    return sorted(corpus_dir().glob("*.ini"))


def resolve_config(which: str | CpuConfig, relative_to: Path | None = None) -> CpuConfig:
    if isinstance(which, CpuConfig):
        return which
    if which in PRESETS:
        return PRESETS[which]
    path = Path(which)
    if relative_to is not None and not path.is_absolute() and not path.exists():
        path = relative_to / path
    if not path.exists():
        raise ScenarioError(f"unknown config {which!r} (not a preset or a file)")
    try:
        data = json.loads(path.read_text())
        data.setdefault("name", path.stem)
        return CpuConfig.from_dict(data)
    except (ValueError, TypeError) as e:
        raise ScenarioError(f"bad config file {path}: {e}") from None


@dataclass
class Scenario:
    name: str
    program: Program
    inputs: LoweringInputs
    configs: tuple[str, ...] = ("small", "large", "xlarge")
    labels: str = "analysis"
    path: Path | None = None

    def cpu_configs(self) -> list[CpuConfig]:
        base = self.path.parent if self.path else None
        return [resolve_config(c, base) for c in self.configs]


def _parse_int(text: str) -> int:
    return int(text.strip(), 0)


def _parse_init(text: str, length: int) -> list[int]:
    parts = text.split()
    if not parts:
        raise ScenarioError("empty init")
    kind, args = parts[0], [_parse_int(x) for x in parts[1:]]
    if kind == "const":
        return [args[0]] * length
    if kind == "iota":
        start = args[0] if args else 0
        step = args[1] if len(args) > 1 else 1
        return [start + step * i for i in range(length)]
    if kind == "values":
        return args
    raise ScenarioError(f"unknown init form {kind!r}")


_WRITE_RE = re.compile(r"^(\w+)\[(-?\w+)\]=(-?\w+)$")


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    if not path.exists():
        cand = corpus_dir() / f"{path}.ini"
        if cand.exists():
            path = cand
        else:
            raise ScenarioError(f"no scenario {str(path)!r}")
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        cp.read_string(path.read_text(), source=str(path))
    except configparser.Error as e:
        raise ScenarioError(str(e)) from None
    if not cp.has_section("scenario"):
        raise ScenarioError(f"{path}: missing [scenario] section")
    sc = cp["scenario"]
    prog_path = path.parent / sc.get("program", "")
    if not prog_path.is_file():
        raise ScenarioError(f"{path}: program file {prog_path} not found")
    program = parse_program(prog_path.read_text())

    try:
        inputs = LoweringInputs(entry=sc.get("entry"),
                                invocations=_parse_int(sc.get("invocations", "1")))
        if cp.has_section("bind"):
            inputs.bindings = {k: _parse_int(v) for k, v in cp["bind"].items()}
        if cp.has_section("addr_delay"):
            inputs.addr_delay = {_parse_int(k): _parse_int(v)
                                 for k, v in cp["addr_delay"].items()}
        for sect in cp.sections():
            if sect.startswith("array "):
                _load_array(program, sect[6:].strip(), cp[sect], inputs)
            elif sect.startswith("call "):
                writes = []
                for item in cp[sect].get("writes", "").split():
                    m = _WRITE_RE.match(item)
                    if not m:
                        raise ScenarioError(f"bad scripted write {item!r}")
                    writes.append((m.group(1), _parse_int(m.group(2)), _parse_int(m.group(3))))
                inputs.call_effects[sect[5:].strip()] = tuple(writes)
    except ValueError as e:
        raise ScenarioError(f"{path}: {e}") from None

    labels = sc.get("labels", "analysis")
    if labels not in ("analysis", "source"):
        raise ScenarioError(f"{path}: labels must be 'analysis' or 'source'")
    configs = tuple(sc.get("configs", "small large xlarge").replace(",", " ").split())
    return Scenario(sc.get("name", path.stem), program, inputs, configs, labels, path)


def _load_array(program: Program, name: str, sect, inputs: LoweringInputs):
    decl = program.array(name)
    length = _parse_int(sect["length"]) if "length" in sect else (decl and decl.length)
    esz = _parse_int(sect["esz"]) if "esz" in sect else (decl and decl.esz)
    if not length or not esz:
        raise ScenarioError(f"array {name!r} needs length and esz")
    if "base" in sect:
        inputs.arrays[name] = Placement(_parse_int(sect["base"]), length, esz)
    elif decl is None:
        raise ScenarioError(f"array parameter {name!r} needs a base address")
    if "init" in sect:
        inputs.init[name] = _parse_init(sect["init"], length)


# ---------------------------------------------------------------------------

ROW_METRICS = ("lpki", "mdp_lookups", "cpi", "cycles", "violations", "index_collisions",
               "false_dependencies", "squashed_ops", "forwardings")


@dataclass
class ComparisonRow:
    scenario: str
    config: str
    committed_insts: int
    lpki_unlabelled: float
    lpki_labelled: float
    lookups_unlabelled: int
    lookups_labelled: int
    bypassed_lookups: int
    lookup_reduction_pct: float
    cpi_unlabelled: float
    cpi_labelled: float
    cpi_change_pct: float
    violations_unlab: int
    violations_lab: int
    collisions_unlab: int
    collisions_lab: int
    false_deps_unlab: int
    false_deps_lab: int
    labelled_loads: int
    state_equal: bool
    status: str
    cpu: dict = field(default_factory=dict)

    @property
    def failed(self) -> bool:
        return self.status != "ok"

    def flat(self) -> dict:
        d = asdict(self)
        cpu = d.pop("cpu")
        d.update({f"cfg_{k}": v for k, v in cpu.items()})
        return d


def csv_header() -> list[str]:
    names = [f.name for f in fields(ComparisonRow) if f.name != "cpu"]
    return names + [f"cfg_{k}" for k in CpuConfig().to_dict()]


def make_row(scenario: str, cfg: CpuConfig, off: RunMetrics, on: RunMetrics,
             state_equal: bool, labelled_loads: int) -> ComparisonRow:
    reduction = 100 * (1 - on.mdp_lookups / off.mdp_lookups) if off.mdp_lookups else 0.0
    cpi_change = 100 * (on.cpi / off.cpi - 1) if off.cpi else 0.0
    return ComparisonRow(
        scenario=scenario, config=cfg.name, committed_insts=off.committed_insts,
        lpki_unlabelled=off.lpki, lpki_labelled=on.lpki,
        lookups_unlabelled=off.mdp_lookups, lookups_labelled=on.mdp_lookups,
        bypassed_lookups=on.bypassed_lookups, lookup_reduction_pct=reduction,
        cpi_unlabelled=off.cpi, cpi_labelled=on.cpi, cpi_change_pct=cpi_change,
        violations_unlab=off.violations, violations_lab=on.violations,
        collisions_unlab=off.index_collisions, collisions_lab=on.index_collisions,
        false_deps_unlab=off.false_dependencies, false_deps_lab=on.false_dependencies,
        labelled_loads=labelled_loads, state_equal=state_equal,
        status="ok" if state_equal else "FAILED", cpu=cfg.to_dict())


@dataclass
class PreparedScenario:
    scenario: Scenario
    program: Program
    report: LabelReport | None
    ops: list
    init: object
    golden: object


def prepare(s: Scenario) -> PreparedScenario:
    """Label (if requested) and lower once; every config reuses the same stream."""
    if s.labels == "analysis":
        program, report = label_pass(s.program)
    else:
        program, report = s.program, None
    ops = lower(program, s.inputs)
    init = initial_state(program, s.inputs)
    return PreparedScenario(s, program, report, ops, init, run_inorder(ops, init))


def run_pair(prep: PreparedScenario, cfg: CpuConfig) -> tuple[ComparisonRow, RunMetrics,
                                                               RunMetrics]:
    st_off, m_off = simulate(prep.ops, cfg, prep.init, labels_enabled=False)
    st_on, m_on = simulate(prep.ops, cfg, prep.init, labels_enabled=True)
    equal = st_off == prep.golden and st_on == prep.golden
    labelled = sum(1 for ins in prep.program.instrs() if ins.pnd)
    return make_row(prep.scenario.name, cfg, m_off, m_on, equal, labelled), m_off, m_on


def run_comparison(s: Scenario, configs=None) -> list[ComparisonRow]:
    prep = prepare(s)
    cfgs = [resolve_config(c) for c in configs] if configs else s.cpu_configs()
    return [run_pair(prep, cfg)[0] for cfg in cfgs]


def _job(args) -> list[ComparisonRow]:
    path, configs = args
    return run_comparison(load_scenario(path), configs)


def compare(paths, configs=None, jobs: int = 1) -> list[ComparisonRow]:
    """Run every scenario; scenarios are independent and may run in worker processes."""
    work = [(str(p), configs) for p in paths]
    if jobs <= 1 or len(work) <= 1:
        results = map(_job, work)
        return [r for rows in results for r in rows]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return [r for rows in ex.map(_job, work) for r in rows]


# ---------------------------------------------------------------------------

@dataclass
class ConfigSummary:
    config: str
    rows: int
    mean_lookup_reduction_pct: float
    max_lookup_reduction_pct: float
    geomean_cpi_ratio: float
    geomean_cpi_change_pct: float


@dataclass
class SummaryReport:
    per_config: list[ConfigSummary]
    failed_rows: int

    def to_json(self) -> dict:
        return {"failed_rows": self.failed_rows,
                "per_config": [asdict(c) for c in self.per_config]}


def geomean(xs) -> float:
    xs = list(xs)
    return math.exp(sum(math.log(x) for x in xs) / len(xs))


def summarize(rows: list[ComparisonRow]) -> SummaryReport:
    good = [r for r in rows if not r.failed]
    if not good:
        raise ValueError("every comparison row failed; nothing to summarise")
    by_cfg: dict[str, list[ComparisonRow]] = {}
    for r in good:
        by_cfg.setdefault(r.config, []).append(r)
    out = []
    for name, rs in by_cfg.items():
        reds = [r.lookup_reduction_pct for r in rs]
        ratio = geomean(r.cpi_labelled / r.cpi_unlabelled for r in rs if r.cpi_unlabelled)
        out.append(ConfigSummary(name, len(rs), sum(reds) / len(reds), max(reds), ratio,
                                 100 * (ratio - 1)))
    return SummaryReport(out, len(rows) - len(good))


def rows_to_csv(rows: list[ComparisonRow]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=csv_header(), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r.flat())
    return buf.getvalue()


def summary_to_csv(rep: SummaryReport) -> str:
    buf = io.StringIO()
    names = [f.name for f in fields(ConfigSummary)]
    w = csv.DictWriter(buf, fieldnames=names, lineterminator="\n")
    w.writeheader()
    for c in rep.per_config:
        w.writerow(asdict(c))
    return buf.getvalue()


REPORT_HEADER = (
    "Timing model: fixed load latency, no cache hierarchy, squash penalty as configured; "
    "each row echoes its full CPU configuration."
)


def write_reports(rows: list[ComparisonRow], out_dir: str | Path) -> SummaryReport | None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "comparison.csv").write_text(rows_to_csv(rows))
    (out / "comparison.json").write_text(json.dumps(
        {"note": REPORT_HEADER, "rows": [r.flat() for r in rows]}, indent=2))
    try:
        rep = summarize(rows)
    except ValueError:
        return None
    (out / "summary.json").write_text(json.dumps(rep.to_json(), indent=2))
    (out / "summary.csv").write_text(summary_to_csv(rep))
    return rep
