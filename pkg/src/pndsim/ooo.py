"""Cycle-level out-of-order window with speculative load issue.

Each cycle runs four phases in a fixed order:

1. commit: up to ``width`` completed ops leave the ROB in order; stores
   and calls write memory here and nowhere else.
2. store execute: ready stores (and calls) compute their address, then
   search the load queue for younger loads that already issued to the
   same address. A hit is a memory order violation: the predictor is
   trained and everything from the load onwards is squashed.
3. load/ALU issue: loads ignore older stores with unresolved addresses
   unless the predictor told them to wait for one. An issuing load
   forwards from the youngest older executed store to its address, or
   reads memory.
4. dispatch: up to ``width`` ops enter IQ/ROB/LQ/SQ. Loads look up the
   predictor (labelled loads bypass it when labels are enabled), stores
   register in the LFST, and every memory op ticks the clear counter.

Readiness is tracked with wakeup lists and a heap keyed by ready cycle, so
the cost per simulated op stays roughly constant with window size.
"""

from __future__ import annotations

import enum
import heapq
from collections import deque
from dataclasses import asdict, dataclass, field, fields, replace
from typing import NamedTuple, Sequence

from .lowering import DynOp, MachineState, alu_eval, to_signed
from .mir import Kind
from .storesets import CLEAR_PERIOD_RATIO, PredictorConfig, StoreSetsPredictor


class SimulationError(Exception):
    pass


@dataclass(frozen=True)
class CpuConfig:
    width: int = 8
    iq_entries: int = 64
    rob_entries: int = 192
    lq_entries: int = 32
    sq_entries: int = 32
    predictor: PredictorConfig = field(default_factory=lambda: PredictorConfig.scaled(32))
    load_latency: int = 4
    alu_latency: int = 1
    forward_latency: int = 1
    squash_penalty: int = 10
    store_store_ordering: bool = True
    name: str = "custom"

    def __post_init__(self):
        for f in ("width", "iq_entries", "rob_entries", "lq_entries", "sq_entries",
                  "load_latency", "alu_latency", "forward_latency"):
            if getattr(self, f) <= 0:
                raise ValueError(f"{f} must be positive")
        if self.squash_penalty < 0:
            raise ValueError("squash_penalty must be non-negative")

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "predictor"}
        d["ssit_entries"] = self.predictor.ssit_entries
        d["lfst_entries"] = self.predictor.lfst_entries
        d["clear_period"] = self.predictor.clear_period
        return d

    @classmethod
    def from_dict(cls, d: dict) -> CpuConfig:
        d = dict(d)
        base = PRESETS[d.pop("preset")] if "preset" in d else cls()
        pred = base.predictor
        pkeys = {"ssit_entries", "lfst_entries", "clear_period", "track_shadow"}
        pargs = {k: d.pop(k) for k in list(d) if k in pkeys}
        if pargs:
            pred = replace(pred, **pargs)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return replace(base, predictor=pred, **d)


def _preset(name: str, width: int, iq: int, rob: int, lsq: int, entries: int) -> CpuConfig:
    # the single LSQ figure sizes both the load and the store queue
    return CpuConfig(width=width, iq_entries=iq, rob_entries=rob, lq_entries=lsq,
                     sq_entries=lsq, predictor=PredictorConfig.scaled(entries), name=name)


PRESETS: dict[str, CpuConfig] = {
    "small": _preset("small", 8, 64, 192, 32, 32),
    "large": _preset("large", 12, 192, 576, 96, 128),
    "xlarge": _preset("xlarge", 12, 384, 1024, 192, 256),
}

assert all(p.predictor.clear_period == p.predictor.ssit_entries * CLEAR_PERIOD_RATIO
           for p in PRESETS.values())


@dataclass
class RunMetrics:
    cycles: int = 0
    committed_insts: int = 0
    mdp_lookups: int = 0
    bypassed_lookups: int = 0
    violations: int = 0
    squashed_ops: int = 0
    index_collisions: int = 0
    false_dependencies: int = 0
    forwardings: int = 0
    trainings: int = 0
    clears: int = 0
    # predictor-side counts, including dispatches that were later squashed
    raw_mdp_lookups: int = 0
    raw_bypassed_lookups: int = 0

    @property
    def cpi(self) -> float:
        return self.cycles / self.committed_insts if self.committed_insts else 0.0

    @property
    def lpki(self) -> float:
        return 1000 * self.mdp_lookups / self.committed_insts if self.committed_insts else 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cpi"] = self.cpi
        d["lpki"] = self.lpki
        return d


class SlotState(enum.Enum):
    DISPATCHED = "dispatched"
    READY = "ready"
    ISSUED = "issued"
    COMPLETED = "completed"
    SQUASHED = "squashed"


@dataclass(slots=True, eq=False)
class WindowSlot:
    op: DynOp
    instance: int
    dispatch_cycle: int
    state: SlotState = SlotState.DISPATCHED
    predicted_dep: int | None = None
    looked_up: bool = False
    pending: int = 0
    ready_at: int = 0
    base_ready: int = 0
    dep_time: int | None = None
    issue_cycle: int = -1
    complete_cycle: int = -1
    value: int = 0


class TraceEvent(NamedTuple):
    cycle: int
    event: str
    seq: int
    pc: int
    addr: int | None
    other: int | None = None


# wakeup kinds
_ON_COMPLETE, _ON_ISSUE, _ON_PREDICTED = 0, 1, 2


class Simulator:
    """One out-of-order core. ``run`` may be called repeatedly; each call starts fresh."""

    def __init__(self, cfg: CpuConfig, trace: bool = False):
        self.trace_enabled = trace
        self.reset(cfg)

    def reset(self, cfg: CpuConfig | None = None):
        if cfg is not None:
            self.cfg = cfg
        self.predictor = StoreSetsPredictor(self.cfg.predictor)
        self.metrics = RunMetrics()
        self.trace: list[TraceEvent] = []
        self.window: dict[int, WindowSlot] = {}
        self.rob: deque[int] = deque()

    def _log(self, *ev):
        if self.trace_enabled:
            self.trace.append(TraceEvent(*ev))

    def run(self, ops: Sequence[DynOp], init: MachineState,
            labels_enabled: bool = True) -> tuple[MachineState, RunMetrics]:
        self.reset()
        cfg = self.cfg
        self.ops = ops
        self.labels = labels_enabled
        self.mem = init.copy()
        self.init_regs = dict(init.registers)

        last: dict[str, int] = {}
        producers: list[tuple[int, ...]] = []
        operand_refs: list[tuple] = []
        for op in ops:
            producers.append(tuple(sorted({last[r] for r in op.src_regs if r in last})))
            operand_refs.append(tuple(
                (False, x) if isinstance(x, int) else (True, last.get(x, x))
                for x in op.operands))
            if op.dst is not None:
                last[op.dst] = op.seq
        self.producers = producers
        self.operand_refs = operand_refs

        self.values: dict[int, int] = {}
        self.waiters: dict[int, list[tuple[int, int, int]]] = {}
        self.ready_heap: list[tuple[int, int, int]] = []
        self.store_pool: list[tuple[int, int]] = []
        self.other_pool: list[tuple[int, int]] = []
        self.issued_loads: dict[int, set[int]] = {}
        self.exec_stores: dict[int, dict[int, int]] = {}
        self.iq_count = self.lq_count = self.sq_count = 0
        self.fetch = 0
        self.resume = 0
        self.instances = 0

        n = len(ops)
        window, rob = self.window, self.rob
        limit = cfg.rob_entries * 64
        last_commit = 0
        c = 0
        while self.fetch < n or rob:
            if self._commit(c):
                last_commit = c
            self._drain_ready(c)
            budget = self._execute_stores(c, cfg.width)
            self._drain_ready(c)
            self._issue_others(c, budget)
            dispatched = self._dispatch(c)
            if rob and c - last_commit > limit:
                head = window[rob[0]]
                raise SimulationError(f"no commit for {c - last_commit} cycles; oldest op "
                                      f"seq={head.op.seq} pc={head.op.pc:#x}")
            c = self._next_cycle(c, dispatched)

        m = self.metrics
        m.cycles = c
        pc = self.predictor.counters
        m.raw_mdp_lookups = pc.lookups
        m.raw_bypassed_lookups = pc.bypassed_lookups
        m.index_collisions = pc.index_collisions
        m.trainings = pc.trainings
        m.clears = pc.clears
        regs = dict(self.init_regs)
        for reg, seq in last.items():
            regs[reg] = self.values[seq]
        self.mem.registers = regs
        return self.mem, m

    def _next_cycle(self, c: int, dispatched: bool) -> int:
        # jump over cycles in which nothing can happen
        if self.store_pool or self.other_pool or dispatched:
            return c + 1
        cands = []
        if self.ready_heap:
            cands.append(self.ready_heap[0][0])
        if self.rob:
            head = self.window[self.rob[0]]
            if head.complete_cycle >= 0:
                cands.append(head.complete_cycle)
        if self.fetch < len(self.ops) and self.resume > c:
            cands.append(self.resume)
        if not cands:
            return c + 1
        return max(c + 1, min(cands))

    # -- phase 1 -----------------------------------------------------------
    def _commit(self, c: int) -> bool:
        window, rob, m = self.window, self.rob, self.metrics
        done = 0
        while rob and done < self.cfg.width:
            s = window[rob[0]]
            if s.complete_cycle < 0 or s.complete_cycle > c:
                break
            rob.popleft()
            del window[s.op.seq]
            op = s.op
            if op.kind is Kind.LOAD:
                self.lq_count -= 1
                self.issued_loads[op.addr].discard(op.seq)
                # count the lookup made by the instance that actually commits
                if s.looked_up:
                    m.mdp_lookups += 1
                else:
                    m.bypassed_lookups += 1
            elif op.kind is Kind.STORE:
                self.sq_count -= 1
                self.mem.write(op.addr, op.size, s.value)
                del self.exec_stores[op.addr][op.seq]
            elif op.kind is Kind.CALL:
                self.sq_count -= 1
                for addr, size, value in op.writes:
                    self.mem.write(addr, size, value)
                    self.exec_stores[addr].pop(op.seq, None)
            m.committed_insts += 1
            done += 1
            self._log(c, "commit", op.seq, op.pc, op.addr)
        return done > 0

    def _drain_ready(self, c: int):
        heap, window = self.ready_heap, self.window
        while heap and heap[0][0] <= c:
            _, seq, inst = heapq.heappop(heap)
            s = window.get(seq)
            if s is None or s.instance != inst:
                continue
            s.state = SlotState.READY
            pool = self.other_pool if s.op.kind in (Kind.LOAD, Kind.ALU) else self.store_pool
            heapq.heappush(pool, (seq, inst))

    def _pop_valid(self, pool) -> WindowSlot | None:
        window = self.window
        while pool:
            seq, inst = heapq.heappop(pool)
            s = window.get(seq)
            if s is not None and s.instance == inst:
                return s
        return None

    def _operand(self, ref) -> int:
        is_reg, x = ref
        if not is_reg:
            return x
        if isinstance(x, str):
            return self.init_regs.get(x, 0)
        return self.values[x]

    def _wake(self, s: WindowSlot):
        lst = self.waiters.pop(s.op.seq, None)
        if not lst:
            return
        window = self.window
        for cseq, cinst, kind in lst:
            cs = window.get(cseq)
            if cs is None or cs.instance != cinst:
                continue
            t = s.complete_cycle if kind == _ON_COMPLETE else s.issue_cycle
            if kind == _ON_PREDICTED:
                cs.dep_time = t
            elif t > cs.base_ready:
                cs.base_ready = t
            if t > cs.ready_at:
                cs.ready_at = t
            cs.pending -= 1
            if cs.pending == 0:
                heapq.heappush(self.ready_heap, (cs.ready_at, cseq, cinst))

    def _mark_issued(self, s: WindowSlot, c: int, complete: int, value: int):
        s.issue_cycle = c
        s.complete_cycle = complete
        s.value = value
        s.state = SlotState.ISSUED
        self.values[s.op.seq] = value
        self.iq_count -= 1

    # -- phase 2 -----------------------------------------------------------
    def _execute_stores(self, c: int, budget: int) -> int:
        while budget and self.store_pool:
            s = self._pop_valid(self.store_pool)
            if s is None:
                break
            budget -= 1
            op = s.op
            if op.kind is Kind.STORE:
                value = self._operand(self.operand_refs[op.seq][0])
                writes = ((op.addr, op.size, value),)
            else:
                value = 0
                writes = op.writes
            self._mark_issued(s, c, c + 1, value)
            for addr, size, v in writes:
                self.exec_stores.setdefault(addr, {})[op.seq] = v
            self.predictor.store_issued(op.pc, op.seq)
            self._log(c, "execute", op.seq, op.pc, op.addr)

            victim = None
            for addr, _, _ in writes:
                for ls in self.issued_loads.get(addr, ()):
                    if ls > op.seq and (victim is None or ls < victim):
                        victim = ls
            self._wake(s)
            if victim is not None:
                self._violation(c, self.window[victim], op)
        return budget

    def _violation(self, c: int, load: WindowSlot, store: DynOp):
        m = self.metrics
        m.violations += 1
        lop = load.op
        pnd = lop.pnd and self.labels
        self._log(c, "violation", lop.seq, lop.pc, lop.addr, store.seq)
        self.predictor.train_violation(lop.pc, store.pc, pnd)
        if not pnd:
            self._log(c, "train", lop.seq, lop.pc, lop.addr, store.pc)
        self._squash(c, lop.seq)

    def _squash(self, c: int, from_seq: int):
        window, rob = self.window, self.rob
        while rob and rob[-1] >= from_seq:
            seq = rob.pop()
            s = window.pop(seq)
            s.state = SlotState.SQUASHED
            op = s.op
            self.metrics.squashed_ops += 1
            if s.issue_cycle < 0:
                self.iq_count -= 1
            if op.kind is Kind.LOAD:
                self.lq_count -= 1
                if s.issue_cycle >= 0:
                    self.issued_loads[op.addr].discard(seq)
            elif op.kind in (Kind.STORE, Kind.CALL):
                self.sq_count -= 1
                if s.issue_cycle >= 0:
                    for addr in op.write_addrs():
                        self.exec_stores[addr].pop(seq, None)
            self.values.pop(seq, None)
            self.waiters.pop(seq, None)
        self.predictor.squash(from_seq)
        self.fetch = from_seq
        self.resume = c + self.cfg.squash_penalty
        self._log(c, "squash", from_seq, self.ops[from_seq].pc, None)

    # -- phase 3 -----------------------------------------------------------
    def _issue_others(self, c: int, budget: int):
        cfg, m = self.cfg, self.metrics
        while budget and self.other_pool:
            s = self._pop_valid(self.other_pool)
            if s is None:
                break
            budget -= 1
            op = s.op
            if op.kind is Kind.ALU:
                a, b = (self._operand(r) for r in self.operand_refs[op.seq])
                self._mark_issued(s, c, c + cfg.alu_latency, alu_eval(op.op, a, b))
                self._wake(s)
                continue
            best = None
            older = self.exec_stores.get(op.addr)
            if older:
                for ss in older:
                    if ss < op.seq and (best is None or ss > best):
                        best = ss
            if best is not None:
                value = to_signed(older[best], op.size)
                complete = c + cfg.forward_latency
                m.forwardings += 1
                self._log(c, "forward", op.seq, op.pc, op.addr, best)
            else:
                value = self.mem.read(op.addr, op.size)
                complete = c + cfg.load_latency
            self._mark_issued(s, c, complete, value)
            self.issued_loads.setdefault(op.addr, set()).add(op.seq)
            self._log(c, "issue", op.seq, op.pc, op.addr)
            if s.predicted_dep is not None and s.dep_time is not None \
                    and s.dep_time > s.base_ready \
                    and op.addr not in self.ops[s.predicted_dep].write_addrs():
                m.false_dependencies += 1
            self._wake(s)

    # -- phase 4 -----------------------------------------------------------
    def _wait_on(self, s: WindowSlot, target: int, kind: int):
        """Make ``s`` wait for ``target``, or just fold in its time if it already issued."""
        ts = self.window.get(target)
        if ts is None:
            return  # committed
        if ts.issue_cycle < 0:
            self.waiters.setdefault(target, []).append((s.op.seq, s.instance, kind))
            s.pending += 1
            return
        t = ts.complete_cycle if kind == _ON_COMPLETE else ts.issue_cycle
        if kind == _ON_PREDICTED:
            s.dep_time = t
        elif t > s.base_ready:
            s.base_ready = t
        s.ready_at = max(s.ready_at, t)

    def _dispatch(self, c: int) -> bool:
        if c < self.resume:
            return False
        cfg, ops, pred = self.cfg, self.ops, self.predictor
        n = len(ops)
        count = 0
        while count < cfg.width and self.fetch < n:
            op = ops[self.fetch]
            kind = op.kind
            if len(self.rob) >= cfg.rob_entries or self.iq_count >= cfg.iq_entries:
                break
            if kind is Kind.LOAD and self.lq_count >= cfg.lq_entries:
                break
            if kind in (Kind.STORE, Kind.CALL) and self.sq_count >= cfg.sq_entries:
                break
            self.instances += 1
            delay = 1 if kind is Kind.ALU else max(1, op.addr_ready_latency)
            s = WindowSlot(op, self.instances, c, base_ready=c + delay, ready_at=c + delay)
            self.window[op.seq] = s
            self.rob.append(op.seq)
            self.iq_count += 1
            for p in self.producers[op.seq]:
                self._wait_on(s, p, _ON_COMPLETE)
            if kind is Kind.LOAD:
                self.lq_count += 1
                bypass = op.pnd and self.labels
                s.looked_up = not bypass
                dep = pred.lookup_load(op.pc, bypass)
                if dep is not None and dep < op.seq and dep in self.window:
                    s.predicted_dep = dep
                    self._wait_on(s, dep, _ON_PREDICTED)
            elif kind in (Kind.STORE, Kind.CALL):
                self.sq_count += 1
                prev = pred.dispatch_store(op.pc, op.seq)
                if cfg.store_store_ordering and prev is not None and prev < op.seq:
                    self._wait_on(s, prev, _ON_ISSUE)
            if kind is not Kind.ALU and pred.memop_tick():
                self._log(c, "clear", op.seq, op.pc, None)
            if s.pending == 0:
                heapq.heappush(self.ready_heap, (s.ready_at, op.seq, s.instance))
            self._log(c, "dispatch", op.seq, op.pc, op.addr)
            self.fetch += 1
            count += 1
        return count > 0


def simulate(ops: Sequence[DynOp], cfg: CpuConfig, init: MachineState,
             labels_enabled: bool = True, trace: bool = False
             ) -> tuple[MachineState, RunMetrics]:
    return Simulator(cfg, trace=trace).run(ops, init, labels_enabled)
