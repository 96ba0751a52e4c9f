"""Predict-no-dependency labelling pass.

Every load inside a loop nest is paired with every store and call anywhere
in its outermost enclosing nest. A load whose pairs are all provably
independent gets the ``pnd`` bit. The dependence tests are intentionally
modest (distinct bases, ZIV, strong SIV); anything else is conservative.

Loads are not exempted from anti-dependences, and sibling nests are never
compared with each other, so a load may be labelled even though a store in
an earlier loop of the same function writes its address.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, replace

from .mir import UNKNOWN, AddrExpr, Function, Instr, Kind, Loop, ModRefSummary, Program, map_program


class AliasResult(enum.Enum):
    NO_ALIAS = "NoAlias"
    MAY_ALIAS = "MayAlias"


class Reason(enum.Enum):
    DISTINCT_RESTRICT_BASES = "DistinctRestrictBases"
    DISTINCT_GLOBALS = "DistinctGlobals"
    READ_ONLY_BASE = "ReadOnlyBase"
    DISJOINT_AFFINE = "DisjointAffine"
    MOD_REF_DISJOINT = "ModRefDisjoint"
    CONSERVATIVE = "Conservative"


@dataclass(frozen=True)
class DepResult:
    no_dep: bool
    reason: Reason

    def __post_init__(self):
        if self.no_dep and self.reason is Reason.CONSERVATIVE:
            raise ValueError("NoDep needs a non-conservative reason")

    @classmethod
    def may(cls) -> DepResult:
        return cls(False, Reason.CONSERVATIVE)

    def __str__(self):
        return f"{'NoDep' if self.no_dep else 'MayDep'}({self.reason.value})"


@dataclass(frozen=True)
class LoopCtx:
    """A loop together with its position in the function body (its identity)."""

    key: tuple[int, ...]
    loop: Loop

    def static_trip_count(self) -> int | None:
        lp = self.loop
        if not (lp.lower.is_constant() and lp.upper.is_constant()):
            return None
        lo, hi, step = lp.lower.const, lp.upper.const, lp.step
        if step > 0:
            return max(0, -(-(hi - lo) // step))
        return max(0, -(-(lo - hi) // -step))


@dataclass(frozen=True)
class Access:
    """A memory reference plus the context needed to reason about it."""

    addr: AddrExpr
    loops: tuple[LoopCtx, ...]
    func: Function

    def loop_of(self, ivar: str) -> LoopCtx:
        for lc in reversed(self.loops):
            if lc.loop.ivar == ivar:
                return lc
        raise KeyError(ivar)


def _distinct_base_reason(a: Access, b: Access) -> Reason | None:
    return _distinct_names(a.func, a.addr.base, b.addr.base)


def _distinct_names(func: Function, x: str, y: str) -> Reason | None:
    """Why two different array names can never share memory, if they provably cannot."""
    pa, pb = func.param(x), func.param(y)
    if pa is None and pb is None:
        return Reason.DISTINCT_GLOBALS
    if (pa is not None and pa.restrict) or (pb is not None and pb.restrict):
        return Reason.DISTINCT_RESTRICT_BASES
    return None


def alias_query(a: Access, b: Access) -> AliasResult:
    """Can the two references ever touch the same element?"""
    if a.addr.base != b.addr.base:
        if _distinct_base_reason(a, b) is not None:
            return AliasResult.NO_ALIAS
        return AliasResult.MAY_ALIAS
    if dep_test(a, b).no_dep:
        return AliasResult.NO_ALIAS
    return AliasResult.MAY_ALIAS


def dep_test(load: Access, store: Access) -> DepResult:
    """ZIV and strong-SIV tests for two references to the same base."""
    li, si = load.addr.index, store.addr.index
    if li.is_constant() and si.is_constant():
        if li.const != si.const:
            return DepResult(True, Reason.DISJOINT_AFFINE)
        return DepResult.may()
    if len(li.terms) != 1 or len(si.terms) != 1:
        return DepResult.may()
    (lc, lname), (sc, sname) = li.terms[0], si.terms[0]
    if lc != sc:
        return DepResult.may()
    try:
        lloop, sloop = load.loop_of(lname), store.loop_of(sname)
    except KeyError:
        return DepResult.may()
    if lloop.key != sloop.key:
        return DepResult.may()
    # c*x1 + o1 == c*x2 + o2  <=>  x1 - x2 == (o2 - o1) / c
    diff = si.const - li.const
    if diff % lc != 0:
        return DepResult(True, Reason.DISJOINT_AFFINE)
    trips = lloop.static_trip_count()
    if trips is not None:
        span = (trips - 1) * abs(lloop.loop.step)
        if abs(diff // lc) > span:
            return DepResult(True, Reason.DISJOINT_AFFINE)
    return DepResult.may()


def store_blocks(load: Access, store: Access) -> DepResult:
    """Dependence between a load and a store in the same nest."""
    if load.addr.base != store.addr.base:
        reason = _distinct_base_reason(load, store)
        if reason is not None:
            return DepResult(True, reason)
        p = load.func.param(load.addr.base)
        if p is not None and p.readonly:
            return DepResult(True, Reason.READ_ONLY_BASE)
        return DepResult.may()
    return dep_test(load, store)


def modref_blocks(call: ModRefSummary, load_addr: AddrExpr,
                  func: Function | None = None) -> DepResult:
    """Can the call write what the load reads? Only writes matter; reads never order.

    Without ``func`` the names in the summary are taken to be disjoint
    objects. With it, a written name other than the load's base still blocks
    unless the two are provably distinct, since a plain array parameter may
    point into any other array.
    """
    if call.may_write is UNKNOWN or load_addr.base in call.may_write:
        return DepResult.may()
    if func is not None:
        p = func.param(load_addr.base)
        readonly = p is not None and p.readonly
        for name in call.may_write:
            if not readonly and _distinct_names(func, load_addr.base, name) is None:
                return DepResult.may()
    return DepResult(True, Reason.MOD_REF_DISJOINT)


@dataclass(frozen=True)
class LabelEntry:
    id: int
    labelled: bool
    blockers: tuple[tuple[int, DepResult], ...] = ()

    @property
    def pc(self) -> int:
        return self.id * 4


@dataclass(frozen=True)
class LabelReport:
    entries: tuple[LabelEntry, ...]
    # loads outside any loop; never labelled and not paired with anything
    unscoped: tuple[int, ...] = ()

    def labelled_ids(self) -> set[int]:
        return {e.id for e in self.entries if e.labelled}

    def to_json(self) -> list[dict]:
        return [{"pc": e.pc, "labelled": e.labelled,
                 "blockers": [{"pc": bid * 4, "reason": r.reason.value} for bid, r in e.blockers]}
                for e in self.entries]

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)


def _collect(body, path: tuple[int, ...], loops: tuple[LoopCtx, ...], out: list):
    for i, s in enumerate(body):
        key = path + (i,)
        if isinstance(s, Loop):
            _collect(s.body, key, loops + (LoopCtx(key, s),), out)
        else:
            out.append((s, loops))


def _label_nest(func: Function, nest_key: tuple[int, ...], nest: Loop) -> list[LabelEntry]:
    items: list[tuple[Instr, tuple[LoopCtx, ...]]] = []
    _collect(nest.body, nest_key, (LoopCtx(nest_key, nest),), items)
    writers = [(ins, loops) for ins, loops in items if ins.kind in (Kind.STORE, Kind.CALL)]
    entries = []
    for ins, loops in items:
        if ins.kind is not Kind.LOAD:
            continue
        load = Access(ins.addr, loops, func)
        blockers = []
        for w, wloops in writers:
            if w.kind is Kind.STORE:
                res = store_blocks(load, Access(w.addr, wloops, func))
            else:
                res = modref_blocks(w.summary, ins.addr, func)
            if not res.no_dep:
                blockers.append((w.id, res))
        entries.append(LabelEntry(ins.id, not blockers, tuple(blockers)))
    return entries


def label_pass(p: Program) -> tuple[Program, LabelReport]:
    """Clear existing pnd bits, then label every load that no store or call in its nest can feed."""
    entries: list[LabelEntry] = []
    unscoped: list[int] = []
    for func in p.functions:
        for i, s in enumerate(func.body):
            if isinstance(s, Loop):
                entries.extend(_label_nest(func, (i,), s))
            elif s.kind is Kind.LOAD:
                unscoped.append(s.id)
    labelled = {e.id for e in entries if e.labelled}

    def relabel(ins: Instr) -> Instr:
        want = ins.kind is Kind.LOAD and ins.id in labelled
        return ins if ins.pnd == want else replace(ins, pnd=want)

    entries.sort(key=lambda e: e.id)
    return map_program(p, relabel), LabelReport(tuple(entries), tuple(unscoped))
