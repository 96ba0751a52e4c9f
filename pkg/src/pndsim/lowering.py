"""Lower a program plus concrete inputs to a dynamic instruction stream.

The stream is fully unrolled: loop back-edges are not instructions and
control flow is assumed perfectly predicted. :func:`run_inorder` executes a
stream strictly in order and is the architectural reference that every
out-of-order run has to reproduce.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Union

from .mir import UNKNOWN, Function, Instr, Kind, Loop, Program, validate

Operand = Union[str, int]

WORD_MASK = (1 << 64) - 1


class LoweringError(Exception):
    pass


@dataclass(frozen=True)
class Placement:
    base: int
    length: int
    esz: int

    @property
    def end(self) -> int:
        return self.base + self.length * self.esz


@dataclass
class LoweringInputs:
    """Everything the static program leaves open.

    ``bindings`` gives values to scalar parameters (and so to trip counts).
    ``arrays`` places array parameters, and optionally globals; unplaced
    globals are laid out automatically. ``call_effects`` scripts the writes
    each callee performs, as ``(array, index, value)`` triples.
    ``addr_delay`` injects extra address-resolution latency per static id.
    """

    entry: str | None = None
    bindings: dict[str, int] = field(default_factory=dict)
    arrays: dict[str, Placement] = field(default_factory=dict)
    init: dict[str, list[int]] = field(default_factory=dict)
    call_effects: dict[str, tuple[tuple[str, int, int], ...]] = field(default_factory=dict)
    addr_delay: dict[int, int] = field(default_factory=dict)
    invocations: int = 1


@dataclass(frozen=True, slots=True)
class DynOp:
    seq: int
    pc: int
    kind: Kind
    addr: int | None = None
    size: int = 0
    dst: str | None = None
    src_regs: tuple[str, ...] = ()
    operands: tuple[Operand, ...] = ()
    op: str | None = None
    pnd: bool = False
    addr_ready_latency: int = 0
    # calls only: (addr, size, value) written atomically
    writes: tuple[tuple[int, int, int], ...] = ()

    def write_addrs(self) -> tuple[int, ...]:
        if self.kind is Kind.STORE:
            return (self.addr,)
        return tuple(a for a, _, _ in self.writes)


def alu_eval(op: str, a: int, b: int) -> int:
    if op == "+":
        r = a + b
    elif op == "-":
        r = a - b
    elif op == "*":
        r = a * b
    elif op == "&":
        r = a & b
    elif op == "|":
        r = a | b
    elif op == "^":
        r = a ^ b
    else:
        raise ValueError(f"unknown ALU op {op!r}")
    return to_signed(r & WORD_MASK, 8)


def to_signed(value: int, size: int) -> int:
    bits = 8 * size
    value &= (1 << bits) - 1
    return value - (1 << bits) if value >> (bits - 1) else value


@dataclass
class MachineState:
    """Byte-addressed memory plus a register file.

    Every byte of every placed array exists in ``memory`` from the start,
    so two states compare equal exactly when all array contents and all
    register values agree.
    """

    memory: dict[int, int] = field(default_factory=dict)
    registers: dict[str, int] = field(default_factory=dict)

    def copy(self) -> MachineState:
        return MachineState(dict(self.memory), dict(self.registers))

    def read(self, addr: int, size: int) -> int:
        mem = self.memory
        raw = 0
        for k in range(size):
            raw |= mem[addr + k] << (8 * k)
        return to_signed(raw, size)

    def write(self, addr: int, size: int, value: int):
        mem = self.memory
        for k in range(size):
            a = addr + k
            if a not in mem:
                raise LoweringError(f"write to unmapped byte {a:#x}")
            mem[a] = (value >> (8 * k)) & 0xFF

    def array_values(self, pl: Placement) -> list[int]:
        return [self.read(pl.base + i * pl.esz, pl.esz) for i in range(pl.length)]


def resolve_placements(p: Program, inputs: LoweringInputs) -> dict[str, Placement]:
    """Placement for every global and every array parameter of the entry function."""
    func = entry_function(p, inputs)
    placed = dict(inputs.arrays)
    for a in p.arrays:
        pl = placed.get(a.name)
        if pl is not None and (pl.length != a.length or pl.esz != a.esz):
            raise LoweringError(f"placement of {a.name!r} disagrees with its declaration")
    cursor = max([0x10000] + [pl.end for pl in placed.values()])
    for a in p.arrays:
        if a.name not in placed:
            cursor = (cursor + 0xFFF) & ~0xFFF
            placed[a.name] = Placement(cursor, a.length, a.esz)
            cursor += a.length * a.esz
    for prm in func.params:
        if prm.kind == "arr" and prm.name not in placed:
            raise LoweringError(f"array parameter {prm.name!r} has no placement")
    items = sorted(placed.items(), key=lambda kv: kv[1].base)
    for i, (na, pa) in enumerate(items):
        if pa.base < 0 or pa.length <= 0 or pa.esz not in (1, 2, 4, 8):
            raise LoweringError(f"bad placement for {na!r}")
        for nb, pb in items[i + 1:]:
            if pb.base >= pa.end:
                break
            # overlapping bindings model aliasing; keep element grids compatible
            if pa.esz != pb.esz or (pb.base - pa.base) % pa.esz:
                raise LoweringError(f"arrays {na!r} and {nb!r} overlap with mismatched "
                                    "element grids")
            if p.array(na) is not None and p.array(nb) is not None:
                raise LoweringError(f"global arrays {na!r} and {nb!r} overlap")
    return placed


def entry_function(p: Program, inputs: LoweringInputs) -> Function:
    if not p.functions:
        raise LoweringError("program has no functions")
    if inputs.entry is None:
        return p.functions[0]
    try:
        return p.function(inputs.entry)
    except KeyError:
        raise LoweringError(f"no function named {inputs.entry!r}") from None


def initial_state(p: Program, inputs: LoweringInputs) -> MachineState:
    placed = resolve_placements(p, inputs)
    st = MachineState()
    for pl in placed.values():
        for a in range(pl.base, pl.end):
            st.memory[a] = 0
    for name, values in inputs.init.items():
        if name not in placed:
            raise LoweringError(f"initial contents for unknown array {name!r}")
        pl = placed[name]
        if len(values) > pl.length:
            raise LoweringError(f"too many initial values for {name!r}")
        for i, v in enumerate(values):
            st.write(pl.base + i * pl.esz, pl.esz, v)
    return st


class _Lowerer:
    def __init__(self, p: Program, inputs: LoweringInputs):
        self.p = p
        self.inputs = inputs
        self.func = entry_function(p, inputs)
        self.placed = resolve_placements(p, inputs)
        self.ops: list[DynOp] = []
        self.scalars = {prm.name for prm in self.func.params if prm.kind == "int"}
        # element address -> names it was accessed through, and whether it was written
        self.touched: dict[int, tuple[set[str], list[bool]]] = {}

    def emit(self, **kw):
        self.ops.append(DynOp(seq=len(self.ops), **kw))

    def scalar_env(self, ivars: dict[str, int]) -> dict[str, int]:
        env = {}
        for name in self.scalars:
            if name in self.inputs.bindings:
                env[name] = self.inputs.bindings[name]
        env.update(ivars)
        return env

    def run(self) -> list[DynOp]:
        for _ in range(self.inputs.invocations):
            self.body(self.func.body, {})
        self.check_contracts()
        return self.ops

    def touch(self, name: str, addr: int, write: bool):
        names, written = self.touched.setdefault(addr, (set(), [False]))
        names.add(name)
        if write:
            written[0] = True

    def check_contracts(self):
        """Reject inputs that break the promises the parameter attributes make.

        ``readonly`` memory is never written during the call, by any name.
        ``restrict`` memory that is written is only ever reached through that
        parameter.
        """
        readonly = [(prm.name, self.placed[prm.name]) for prm in self.func.params
                    if prm.readonly]
        restrict = {prm.name for prm in self.func.params if prm.restrict}
        for addr, (names, written) in self.touched.items():
            if not written[0]:
                continue
            for name, pl in readonly:
                if pl.base <= addr < pl.end:
                    raise LoweringError(f"write to {addr:#x} modifies readonly parameter "
                                        f"{name!r}")
            if len(names) > 1 and names & restrict:
                raise LoweringError(f"element {addr:#x} is reached through {sorted(names)} "
                                    "although one of them is restrict")

    def body(self, stmts, ivars: dict[str, int]):
        for s in stmts:
            if isinstance(s, Loop):
                self.loop(s, ivars)
            else:
                self.instr(s, ivars)

    def loop(self, lp: Loop, ivars: dict[str, int]):
        env = self.scalar_env(ivars)
        try:
            lo, hi = lp.lower.evaluate(env), lp.upper.evaluate(env)
        except KeyError as e:
            raise LoweringError(f"unbound trip count: scalar {e.args[0]!r} has no binding") \
                from None
        i = lo
        inner = dict(ivars)
        while (i < hi) if lp.step > 0 else (i > hi):
            inner[lp.ivar] = i
            self.body(lp.body, inner)
            i += lp.step

    def address(self, ins: Instr, ivars: dict[str, int]) -> tuple[int, int]:
        pl = self.placed[ins.addr.base]
        idx = ins.addr.index.evaluate(ivars)
        if not 0 <= idx < pl.length:
            raise LoweringError(f"instruction {ins.id}: index {idx} outside "
                                f"{ins.addr.base}[0..{pl.length})")
        addr = pl.base + idx * pl.esz
        self.touch(ins.addr.base, addr, ins.kind is Kind.STORE)
        return addr, pl.esz

    def operand(self, x: Operand, ivars: dict[str, int]) -> Operand:
        # loop variables and scalar parameters read as immediates
        if isinstance(x, int):
            return x
        if x in ivars:
            return ivars[x]
        if x in self.scalars:
            if x not in self.inputs.bindings:
                raise LoweringError(f"scalar {x!r} has no binding")
            return self.inputs.bindings[x]
        return x

    def instr(self, ins: Instr, ivars: dict[str, int]):
        delay = self.inputs.addr_delay.get(ins.id, 0)
        common = dict(pc=ins.pc, kind=ins.kind, addr_ready_latency=delay)
        if ins.kind is Kind.LOAD:
            addr, size = self.address(ins, ivars)
            self.emit(addr=addr, size=size, dst=ins.dst, pnd=ins.pnd, **common)
        elif ins.kind is Kind.STORE:
            addr, size = self.address(ins, ivars)
            operands = tuple(self.operand(x, ivars) for x in ins.srcs)
            regs = tuple(x for x in operands if isinstance(x, str))
            self.emit(addr=addr, size=size, src_regs=regs, operands=operands, **common)
        elif ins.kind is Kind.ALU:
            operands = tuple(self.operand(x, ivars) for x in ins.srcs)
            regs = tuple(x for x in operands if isinstance(x, str))
            self.emit(dst=ins.dst, src_regs=regs, operands=operands, op=ins.op, **common)
        else:
            self.emit(writes=self.call_writes(ins), **common)

    def call_writes(self, ins: Instr) -> tuple[tuple[int, int, int], ...]:
        allowed = ins.summary.may_write
        out = []
        for name, idx, value in self.inputs.call_effects.get(ins.callee, ()):
            if allowed is not UNKNOWN and name not in allowed:
                raise LoweringError(f"scripted write of {ins.callee!r} to {name!r} is outside "
                                    "its declared writes")
            pl = self.placed.get(name)
            if pl is None:
                raise LoweringError(f"scripted write to unknown array {name!r}")
            if not 0 <= idx < pl.length:
                raise LoweringError(f"scripted write {name}[{idx}] out of bounds")
            addr = pl.base + idx * pl.esz
            self.touch(name, addr, True)
            out.append((addr, pl.esz, value))
        return tuple(out)


def lower(p: Program, inputs: LoweringInputs) -> list[DynOp]:
    diags = validate(p)
    if diags:
        raise LoweringError("program does not validate: " + "; ".join(map(str, diags)))
    if inputs.invocations < 0:
        raise LoweringError("invocations must be non-negative")
    return _Lowerer(p, inputs).run()


def operand_value(x: Operand, regs: dict[str, int]) -> int:
    if isinstance(x, int):
        return x
    return regs.get(x, 0)


def run_inorder(ops: Iterable[DynOp], init: MachineState) -> MachineState:
    """Execute ``ops`` one at a time in sequence order; never mutates ``init``."""
    st = init.copy()
    regs = st.registers
    for op in ops:
        if op.kind is Kind.LOAD:
            regs[op.dst] = st.read(op.addr, op.size)
        elif op.kind is Kind.STORE:
            st.write(op.addr, op.size, operand_value(op.operands[0], regs))
        elif op.kind is Kind.ALU:
            a, b = (operand_value(x, regs) for x in op.operands)
            regs[op.dst] = alu_eval(op.op, a, b)
        else:
            for addr, size, value in op.writes:
                st.write(addr, size, value)
    return st


def dump_stream(ops: Iterable[DynOp]) -> str:
    """One op per line: ``seq pc kind addr pnd``."""
    lines = []
    for op in ops:
        if op.addr is not None:
            addr = f"{op.addr:#x}"
        elif op.writes:
            addr = ",".join(f"{a:#x}" for a, _, _ in op.writes)
        else:
            addr = "-"
        lines.append(f"{op.seq} {op.pc:#x} {op.kind.value} {addr} {int(op.pnd)}")
    return "\n".join(lines) + ("\n" if lines else "")
