"""Mini loop IR: data types, text parser, pretty-printer and validator.

The IR is deliberately small. Functions hold nested counted loops whose
bodies contain four instruction kinds (load, store, alu, call). Memory
addresses are affine in the induction variables of enclosing loops, which
is what makes the dependence tests in :mod:`pndsim.analysis` tractable.

Static instruction ids are assigned densely in textual order across the
whole program, so they are stable across parse/print cycles. After
lowering an instruction's PC is ``id * 4``.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field, replace
from typing import Iterator, Union

ALU_OPS = ("+", "-", "*", "&", "|", "^")


class MirError(Exception):
    """Raised for syntax errors and invalid programs."""

    def __init__(self, message: str, line: int | None = None, col: int | None = None,
                 diagnostics: list[Diagnostic] | None = None):
        self.line = line
        self.col = col
        self.diagnostics = diagnostics or []
        if line is not None:
            message = f"{line}:{col}: {message}"
        super().__init__(message)


class Kind(enum.Enum):
    LOAD = "load"
    STORE = "store"
    ALU = "alu"
    CALL = "call"


class Unknown:
    """Marker for a mod/ref set that may contain anything (``*`` in text)."""

    _inst = None

    def __new__(cls):
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    def __repr__(self):
        return "UNKNOWN"

    def __reduce__(self):
        return (Unknown, ())


UNKNOWN = Unknown()
NameSet = Union[frozenset, Unknown]


@dataclass(frozen=True)
class Affine:
    """``sum(coef * name) + const`` with like terms merged and zeros dropped."""

    terms: tuple[tuple[int, str], ...] = ()
    const: int = 0

    @classmethod
    def build(cls, terms, const: int = 0) -> Affine:
        merged: dict[str, int] = {}
        for coef, name in terms:
            merged[name] = merged.get(name, 0) + coef
        return cls(tuple((c, n) for n, c in merged.items() if c != 0), const)

    @property
    def names(self) -> set[str]:
        return {n for _, n in self.terms}

    def evaluate(self, env: dict[str, int]) -> int:
        return self.const + sum(c * env[n] for c, n in self.terms)

    def is_constant(self) -> bool:
        return not self.terms

    def __str__(self):
        parts: list[str] = []
        for coef, name in self.terms:
            mag = abs(coef)
            text = name if mag == 1 else f"{mag}*{name}"
            if not parts:
                parts.append(text if coef > 0 else f"-{text}")
            else:
                parts.append(("+ " if coef > 0 else "- ") + text)
        if self.const or not parts:
            if not parts:
                parts.append(str(self.const))
            else:
                parts.append(("+ " if self.const > 0 else "- ") + str(abs(self.const)))
        return " ".join(parts)


@dataclass(frozen=True)
class AddrExpr:
    """``base[index]`` where index is affine in loop induction variables (element units)."""

    base: str
    index: Affine

    def __str__(self):
        return f"{self.base}[{self.index}]"


@dataclass(frozen=True)
class ModRefSummary:
    may_read: NameSet = frozenset()
    may_write: NameSet = frozenset()


@dataclass(frozen=True)
class ArrayDecl:
    name: str
    length: int
    esz: int


@dataclass(frozen=True)
class Param:
    name: str
    kind: str  # "arr" | "int"
    attrs: frozenset = frozenset()

    @property
    def restrict(self) -> bool:
        return "restrict" in self.attrs

    @property
    def readonly(self) -> bool:
        return "readonly" in self.attrs


@dataclass(frozen=True)
class Instr:
    id: int
    kind: Kind
    addr: AddrExpr | None = None
    dst: str | None = None
    srcs: tuple[Union[str, int], ...] = ()
    op: str | None = None
    pnd: bool = False
    callee: str | None = None
    summary: ModRefSummary | None = None

    @property
    def pc(self) -> int:
        return self.id * 4


@dataclass(frozen=True)
class Loop:
    ivar: str
    lower: Affine
    upper: Affine
    step: int
    body: tuple = ()


Stmt = Union[Loop, Instr]


@dataclass(frozen=True)
class Function:
    name: str
    params: tuple[Param, ...] = ()
    body: tuple = ()

    def param(self, name: str) -> Param | None:
        for p in self.params:
            if p.name == name:
                return p
        return None


@dataclass(frozen=True)
class Program:
    arrays: tuple[ArrayDecl, ...] = ()
    functions: tuple[Function, ...] = ()

    def function(self, name: str) -> Function:
        for f in self.functions:
            if f.name == name:
                return f
        raise KeyError(name)

    def array(self, name: str) -> ArrayDecl | None:
        for a in self.arrays:
            if a.name == name:
                return a
        return None

    def instrs(self) -> Iterator[Instr]:
        for f in self.functions:
            yield from walk_instrs(f.body)


def walk_instrs(body) -> Iterator[Instr]:
    for s in body:
        if isinstance(s, Loop):
            yield from walk_instrs(s.body)
        else:
            yield s


def map_instrs(body, fn) -> tuple:
    """Rebuild a statement tuple with ``fn`` applied to every instruction."""
    out = []
    for s in body:
        if isinstance(s, Loop):
            out.append(replace(s, body=map_instrs(s.body, fn)))
        else:
            out.append(fn(s))
    return tuple(out)


def map_program(p: Program, fn) -> Program:
    return replace(p, functions=tuple(replace(f, body=map_instrs(f.body, fn))
                                      for f in p.functions))


# ---------------------------------------------------------------------------
# Parsing

_TOKEN_RE = re.compile(r"""
    (?P<ws>[ \t\r]+)
  | (?P<comment>\#[^\n]*)
  | (?P<nl>\n)
  | (?P<int>\d+)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<punct>[\[\](){},=*+\-&|^])
""", re.VERBOSE)

_KEYWORDS = {"array", "esz", "fn", "arr", "int", "restrict", "readonly", "for", "to",
             "step", "pnd", "load", "store", "alu", "call", "reads", "writes"}


@dataclass
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list[_Tok]:
    toks: list[_Tok] = []
    line, line_start, pos = 1, 0, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise MirError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind not in ("ws", "comment"):
            toks.append(_Tok(kind, m.group(), line, m.start() - line_start + 1))
        pos = m.end()
    toks.append(_Tok("eof", "", line, pos - line_start + 1))
    return toks


class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0
        self.next_id = 0

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def error(self, msg: str, tok: _Tok | None = None):
        tok = tok or self.tok
        return MirError(msg, tok.line, tok.col)

    def peek(self, text: str) -> bool:
        return self.tok.text == text and self.tok.kind != "eof"

    def accept(self, text: str) -> bool:
        if self.peek(text):
            self.i += 1
            return True
        return False

    def expect(self, text: str) -> _Tok:
        if not self.peek(text):
            shown = self.tok.text or "end of input"
            raise self.error(f"expected {text!r}, got {shown!r}")
        tok = self.tok
        self.i += 1
        return tok

    def name(self, what: str = "name") -> str:
        tok = self.tok
        if tok.kind != "name" or tok.text in _KEYWORDS:
            raise self.error(f"expected {what}, got {tok.text or 'end of input'!r}")
        self.i += 1
        return tok.text

    def integer(self) -> int:
        neg = self.accept("-")
        tok = self.tok
        if tok.kind != "int":
            raise self.error(f"expected integer, got {tok.text or 'end of input'!r}")
        self.i += 1
        return -int(tok.text) if neg else int(tok.text)

    def program(self) -> Program:
        arrays, functions = [], []
        while self.tok.kind != "eof":
            if self.peek("array"):
                arrays.append(self.array_decl())
            elif self.peek("fn"):
                functions.append(self.function())
            else:
                raise self.error(f"expected 'array' or 'fn', got {self.tok.text!r}")
        return Program(tuple(arrays), tuple(functions))

    def array_decl(self) -> ArrayDecl:
        self.expect("array")
        name = self.name("array name")
        self.expect("[")
        length = self.integer()
        self.expect("]")
        self.expect("esz")
        esz = self.integer()
        return ArrayDecl(name, length, esz)

    def function(self) -> Function:
        self.expect("fn")
        name = self.name("function name")
        self.expect("(")
        params = []
        if not self.peek(")"):
            params.append(self.param())
            while self.accept(","):
                params.append(self.param())
        self.expect(")")
        return Function(name, tuple(params), self.block())

    def param(self) -> Param:
        if self.accept("arr"):
            kind = "arr"
        elif self.accept("int"):
            kind = "int"
        else:
            raise self.error(f"expected 'arr' or 'int', got {self.tok.text!r}")
        name = self.name("parameter name")
        attrs = set()
        while self.peek("restrict") or self.peek("readonly"):
            attrs.add(self.tok.text)
            self.i += 1
        return Param(name, kind, frozenset(attrs))

    def block(self) -> tuple:
        self.expect("{")
        body = []
        while not self.accept("}"):
            if self.tok.kind == "eof":
                raise self.error("unterminated block")
            body.append(self.stmt())
        return tuple(body)

    def stmt(self) -> Stmt:
        if self.accept("for"):
            ivar = self.name("induction variable")
            self.expect("=")
            lower = self.affine()
            self.expect("to")
            upper = self.affine()
            self.expect("step")
            step = self.integer()
            return Loop(ivar, lower, upper, step, self.block())
        return self.instr()

    def _new_id(self) -> int:
        self.next_id += 1
        return self.next_id - 1

    def instr(self) -> Instr:
        start = self.tok
        if self.accept("pnd"):
            if not self.peek("load"):
                raise self.error("'pnd' may only prefix a load", start)
            return self.load(pnd=True)
        if self.peek("load"):
            return self.load(pnd=False)
        if self.accept("store"):
            addr = self.addr()
            self.expect("=")
            return Instr(self._new_id(), Kind.STORE, addr=addr, srcs=(self.operand(),))
        if self.accept("alu"):
            dst = self.name("register")
            self.expect("=")
            a = self.operand()
            if self.tok.text not in ALU_OPS:
                raise self.error(f"expected ALU operator, got {self.tok.text!r}")
            op = self.tok.text
            self.i += 1
            b = self.operand()
            return Instr(self._new_id(), Kind.ALU, dst=dst, srcs=(a, b), op=op)
        if self.accept("call"):
            callee = self.name("callee")
            self.expect("reads")
            reads = self.name_set()
            self.expect("writes")
            writes = self.name_set()
            return Instr(self._new_id(), Kind.CALL, callee=callee,
                         summary=ModRefSummary(reads, writes))
        raise self.error(f"expected statement, got {self.tok.text or 'end of input'!r}")

    def load(self, pnd: bool) -> Instr:
        self.expect("load")
        dst = self.name("register")
        self.expect("=")
        return Instr(self._new_id(), Kind.LOAD, addr=self.addr(), dst=dst, pnd=pnd)

    def operand(self) -> Union[str, int]:
        if self.tok.kind == "int" or self.peek("-"):
            return self.integer()
        return self.name("register")

    def addr(self) -> AddrExpr:
        base = self.name("array name")
        self.expect("[")
        index = self.affine()
        self.expect("]")
        return AddrExpr(base, index)

    def name_set(self) -> NameSet:
        self.expect("(")
        if self.accept("*"):
            self.expect(")")
            return UNKNOWN
        names = []
        if not self.peek(")"):
            names.append(self.name())
            while self.accept(","):
                names.append(self.name())
        self.expect(")")
        return frozenset(names)

    def affine(self) -> Affine:
        terms: list[tuple[int, str]] = []
        const = 0
        sign = -1 if self.accept("-") else 1
        while True:
            if self.tok.kind == "int":
                value = int(self.tok.text)
                self.i += 1
                if self.accept("*"):
                    terms.append((sign * value, self.name("induction variable")))
                else:
                    const += sign * value
            else:
                terms.append((sign, self.name("induction variable")))
            if self.accept("+"):
                sign = 1
            elif self.accept("-"):
                sign = -1
            else:
                break
        return Affine.build(terms, const)


def parse_program(text: str, check: bool = True) -> Program:
    """Parse program text. With ``check`` the result must also pass :func:`validate`."""
    prog = _Parser(text).program()
    if check:
        diags = validate(prog)
        if diags:
            raise MirError("invalid program: " + "; ".join(str(d) for d in diags),
                           diagnostics=diags)
    return prog


# ---------------------------------------------------------------------------
# Printing

def _fmt_names(s: NameSet) -> str:
    return "*" if s is UNKNOWN else ", ".join(sorted(s))


def _fmt_operand(x) -> str:
    return str(x)


def _fmt_instr(ins: Instr) -> str:
    if ins.kind is Kind.LOAD:
        return f"{'pnd ' if ins.pnd else ''}load {ins.dst} = {ins.addr}"
    if ins.kind is Kind.STORE:
        return f"store {ins.addr} = {_fmt_operand(ins.srcs[0])}"
    if ins.kind is Kind.ALU:
        a, b = ins.srcs
        return f"alu {ins.dst} = {_fmt_operand(a)} {ins.op} {_fmt_operand(b)}"
    s = ins.summary
    return f"call {ins.callee} reads({_fmt_names(s.may_read)}) writes({_fmt_names(s.may_write)})"


def _print_body(body, depth: int, out: list[str], show_ids: bool):
    pad = "  " * depth
    for s in body:
        if isinstance(s, Loop):
            out.append(f"{pad}for {s.ivar} = {s.lower} to {s.upper} step {s.step} {{")
            _print_body(s.body, depth + 1, out, show_ids)
            out.append(f"{pad}}}")
        else:
            line = pad + _fmt_instr(s)
            if show_ids:
                line += f"  # id {s.id} pc {s.pc:#x}"
            out.append(line)


def print_program(p: Program, show_ids: bool = False) -> str:
    out: list[str] = []
    for a in p.arrays:
        out.append(f"array {a.name}[{a.length}] esz {a.esz}")
    for f in p.functions:
        if out:
            out.append("")
        params = ", ".join(
            " ".join([pr.kind, pr.name, *sorted(pr.attrs)]) for pr in f.params)
        out.append(f"fn {f.name}({params}) {{")
        _print_body(f.body, 1, out, show_ids)
        out.append("}")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# Validation

@dataclass(frozen=True)
class Diagnostic:
    message: str
    where: str = ""

    def __str__(self):
        return f"{self.where}: {self.message}" if self.where else self.message


@dataclass
class _Scope:
    func: Function
    globals: dict[str, ArrayDecl]
    ivars: list[str] = field(default_factory=list)

    def is_array(self, name: str) -> bool:
        p = self.func.param(name)
        if p is not None:
            return p.kind == "arr"
        return name in self.globals

    def is_scalar(self, name: str) -> bool:
        p = self.func.param(name)
        return name in self.ivars or (p is not None and p.kind == "int")


def validate(p: Program) -> list[Diagnostic]:
    """Return one diagnostic per broken invariant; empty iff the program is well formed."""
    diags: list[Diagnostic] = []
    globals_: dict[str, ArrayDecl] = {}
    for a in p.arrays:
        if a.name in globals_:
            diags.append(Diagnostic(f"duplicate array {a.name!r}"))
        globals_[a.name] = a
        if a.length <= 0 or a.esz not in (1, 2, 4, 8):
            diags.append(Diagnostic(f"array {a.name!r} needs length > 0 and esz in 1/2/4/8"))
    seen_fns: set[str] = set()
    seen_ids: set[int] = set()
    for f in p.functions:
        if f.name in seen_fns:
            diags.append(Diagnostic(f"duplicate function {f.name!r}"))
        seen_fns.add(f.name)
        names: set[str] = set()
        for pr in f.params:
            if pr.name in names:
                diags.append(Diagnostic(f"duplicate parameter {pr.name!r}", f.name))
            names.add(pr.name)
            if pr.name in globals_:
                diags.append(Diagnostic(f"parameter {pr.name!r} shadows a global array", f.name))
            if pr.kind == "int" and pr.attrs:
                diags.append(Diagnostic(f"scalar parameter {pr.name!r} cannot carry attributes",
                                        f.name))
        _validate_body(f.body, _Scope(f, globals_), diags, seen_ids)
    return diags


def _validate_body(body, scope: _Scope, diags: list[Diagnostic], seen_ids: set[int]):
    where = scope.func.name
    for s in body:
        if isinstance(s, Loop):
            if s.step == 0:
                diags.append(Diagnostic(f"loop over {s.ivar!r} has step 0", where))
            if s.ivar in scope.ivars:
                diags.append(Diagnostic(f"loop variable {s.ivar!r} shadows an enclosing loop",
                                        where))
            if scope.func.param(s.ivar) is not None or s.ivar in scope.globals:
                diags.append(Diagnostic(f"loop variable {s.ivar!r} shadows a parameter or array",
                                        where))
            for bound in (s.lower, s.upper):
                for n in bound.names:
                    if not scope.is_scalar(n):
                        diags.append(Diagnostic(f"loop bound uses unknown scalar {n!r}", where))
            scope.ivars.append(s.ivar)
            _validate_body(s.body, scope, diags, seen_ids)
            scope.ivars.pop()
            continue
        _validate_instr(s, scope, diags, seen_ids)


def _validate_instr(ins: Instr, scope: _Scope, diags: list[Diagnostic], seen_ids: set[int]):
    where = f"{scope.func.name}#{ins.id}"
    if ins.id in seen_ids:
        diags.append(Diagnostic(f"duplicate instruction id {ins.id}", where))
    seen_ids.add(ins.id)
    if ins.pnd and ins.kind is not Kind.LOAD:
        diags.append(Diagnostic("pnd flag on a non-load", where))
    has_addr = ins.kind in (Kind.LOAD, Kind.STORE)
    if has_addr != (ins.addr is not None):
        diags.append(Diagnostic("address present iff load/store", where))
    if ins.addr is not None:
        if not scope.is_array(ins.addr.base):
            diags.append(Diagnostic(f"reference to undeclared array {ins.addr.base!r}", where))
        for n in ins.addr.index.names:
            if n not in scope.ivars:
                diags.append(Diagnostic(
                    f"address uses {n!r}, which is not an enclosing loop variable", where))
    if ins.kind is Kind.STORE and ins.addr is not None:
        p = scope.func.param(ins.addr.base)
        if p is not None and p.readonly:
            diags.append(Diagnostic(f"store through readonly parameter {p.name!r}", where))
    if ins.dst is not None and (scope.is_scalar(ins.dst) or scope.is_array(ins.dst)):
        diags.append(Diagnostic(f"register {ins.dst!r} clobbers a loop variable, parameter "
                                "or array", where))
    for src in ins.srcs:
        if isinstance(src, str) and scope.is_array(src):
            diags.append(Diagnostic(f"array {src!r} used as a register", where))
    if ins.kind is Kind.ALU and ins.op not in ALU_OPS:
        diags.append(Diagnostic(f"unknown ALU operator {ins.op!r}", where))
    if ins.kind is Kind.CALL:
        if ins.summary is None:
            diags.append(Diagnostic("call without mod/ref summary", where))
        else:
            for s in (ins.summary.may_read, ins.summary.may_write):
                if s is UNKNOWN:
                    continue
                for n in s:
                    if not scope.is_array(n):
                        diags.append(Diagnostic(f"call summary names undeclared array {n!r}",
                                                where))
