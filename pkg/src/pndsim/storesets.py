"""Store Sets memory dependence predictor (SSIT + LFST) with PND bypass.

The SSIT maps a PC-derived index to a store set id; the LFST records, per
set, the most recently dispatched store that has not issued yet. A load
that finds a valid LFST entry for its set waits for that store.

Labelled (PND) loads never touch either table: they are not looked up and
are not trained when they violate. Each SSIT entry also keeps a shadow copy
of the full PC that last wrote it. The shadow is only used to count index
collisions and never changes a prediction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

# Default gem5 clear period (249856 memory ops) over its default 1024-entry SSIT.
CLEAR_PERIOD_RATIO = 244


def _is_pow2(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


@dataclass(frozen=True)
class PredictorConfig:
    ssit_entries: int = 32
    lfst_entries: int = 32
    clear_period: int = 32 * CLEAR_PERIOD_RATIO
    track_shadow: bool = True

    def __post_init__(self):
        if not (_is_pow2(self.ssit_entries) and _is_pow2(self.lfst_entries)):
            raise ValueError("SSIT and LFST sizes must be powers of two")
        if self.clear_period <= 0:
            raise ValueError("clear_period must be positive")

    @classmethod
    def scaled(cls, entries: int) -> PredictorConfig:
        """Equal SSIT/LFST sizes with the clear period scaled at 244 ops per entry."""
        return cls(entries, entries, entries * CLEAR_PERIOD_RATIO)


@dataclass
class SsitEntry:
    valid: bool = False
    ssid: int = 0
    shadow_pc: int | None = None


@dataclass
class LfstEntry:
    valid: bool = False
    store_seq: int = 0


@dataclass
class PredictorCounters:
    lookups: int = 0
    index_collisions: int = 0
    trainings: int = 0
    clears: int = 0
    bypassed_lookups: int = 0


@dataclass
class StoreSetsPredictor:
    cfg: PredictorConfig = field(default_factory=PredictorConfig)

    def __post_init__(self):
        self.ssit = [SsitEntry() for _ in range(self.cfg.ssit_entries)]
        self.lfst = [LfstEntry() for _ in range(self.cfg.lfst_entries)]
        self.counters = PredictorCounters()
        self._ticks = 0
        self._mask = self.cfg.ssit_entries - 1

    def index(self, pc: int) -> int:
        return (pc >> 2) & self._mask

    def _ssid(self, pc: int) -> int | None:
        e = self.ssit[self.index(pc)]
        return e.ssid if e.valid else None

    def lookup_load(self, pc: int, pnd: bool) -> int | None:
        """Called at load dispatch. Returns the seq of the store to wait for, if any."""
        c = self.counters
        if pnd:
            c.bypassed_lookups += 1
            return None
        c.lookups += 1
        e = self.ssit[self.index(pc)]
        if not e.valid:
            return None
        if self.cfg.track_shadow and e.shadow_pc != pc:
            c.index_collisions += 1
        f = self.lfst[e.ssid]
        return f.store_seq if f.valid else None

    def dispatch_store(self, pc: int, seq: int) -> int | None:
        """Called at store dispatch. Returns the previous store of the same set, if any."""
        ssid = self._ssid(pc)
        if ssid is None:
            return None
        f = self.lfst[ssid]
        prev = f.store_seq if f.valid else None
        f.valid, f.store_seq = True, seq
        return prev

    def store_issued(self, pc: int, seq: int):
        ssid = self._ssid(pc)
        if ssid is None:
            return
        f = self.lfst[ssid]
        if f.valid and f.store_seq == seq:
            f.valid = False

    def squash(self, from_seq: int):
        """Drop LFST references to stores squashed from ``from_seq`` onwards."""
        for f in self.lfst:
            if f.valid and f.store_seq >= from_seq:
                f.valid = False

    def _write(self, pc: int, ssid: int):
        e = self.ssit[self.index(pc)]
        e.valid, e.ssid = True, ssid
        e.shadow_pc = pc if self.cfg.track_shadow else None

    def train_violation(self, load_pc: int, store_pc: int, load_is_pnd: bool):
        if load_is_pnd:
            return
        le = self.ssit[self.index(load_pc)]
        se = self.ssit[self.index(store_pc)]
        if not le.valid and not se.valid:
            ssid = self.index(load_pc) % self.cfg.lfst_entries
        elif le.valid and se.valid:
            ssid = min(le.ssid, se.ssid)
        else:
            ssid = le.ssid if le.valid else se.ssid
        self._write(load_pc, ssid)
        self._write(store_pc, ssid)
        self.counters.trainings += 1

    def memop_tick(self) -> bool:
        self._ticks += 1
        if self._ticks < self.cfg.clear_period:
            return False
        self.clear()
        self._ticks = 0
        self.counters.clears += 1
        return True

    def clear(self):
        for e in self.ssit:
            e.valid, e.shadow_pc = False, None
        for f in self.lfst:
            f.valid = False

    def dump(self) -> str:
        lines = ["SSIT index valid ssid shadow_pc"]
        for i, e in enumerate(self.ssit):
            shadow = "-" if e.shadow_pc is None else f"{e.shadow_pc:#x}"
            lines.append(f"{i} {int(e.valid)} {e.ssid} {shadow}")
        lines.append("LFST ssid valid store_seq")
        for i, f in enumerate(self.lfst):
            lines.append(f"{i} {int(f.valid)} {f.store_seq}")
        return "\n".join(lines)

    def snapshot(self) -> tuple:
        return (tuple((e.valid, e.ssid, e.shadow_pc) for e in self.ssit),
                tuple((f.valid, f.store_seq) for f in self.lfst))
