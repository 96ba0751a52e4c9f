import pytest

from pndsim.analysis import label_pass
from pndsim.lowering import (DynOp, LoweringError, LoweringInputs, MachineState, Placement,
                             alu_eval, dump_stream, initial_state, lower, run_inorder)
from pndsim.mir import Kind, parse_program

LISTING1 = """
fn pnd_example(arr a restrict, arr b restrict, int n) {
  for i = 0 to n step 1 {
    load ra = a[i]
    load rb = b[i]
    alu rs = ra + rb
    store a[i] = rs
  }
}
"""

LISTING2 = """
fn pnd_limitation(arr a restrict, arr b restrict, int n) {
  for i = 0 to n step 1 {
    store b[i] = i
  }
  for i = 0 to n step 1 {
    load ra = a[i]
    load rb = b[i]
    alu rs = ra + rb
    store a[i] = rs
  }
}
"""

A, B = 0x1000, 0x2000


def inputs(n, length=None, a=None, b=None, **kw):
    length = length or max(n, 1)
    init = {}
    if a is not None:
        init["a"] = a
    if b is not None:
        init["b"] = b
    return LoweringInputs(bindings={"n": n}, init=init,
                          arrays={"a": Placement(A, length, 4), "b": Placement(B, length, 4)},
                          **kw)


def values(st: MachineState, base: int, n: int, esz: int = 4) -> list[int]:
    return [st.read(base + esz * i, esz) for i in range(n)]


def test_listing1_unrolls_to_16_ops():
    p, _ = label_pass(parse_program(LISTING1))
    ops = lower(p, inputs(4))
    assert len(ops) == 16
    assert [op.seq for op in ops] == list(range(16))
    kinds = [op.kind for op in ops[:4]]
    assert kinds == [Kind.LOAD, Kind.LOAD, Kind.ALU, Kind.STORE]
    assert [op.addr for op in ops if op.kind is Kind.STORE] == [A, A + 4, A + 8, A + 12]
    assert [op.pnd for op in ops[:4]] == [False, True, False, False]
    assert {op.pc for op in ops} == {0, 4, 8, 12}


def test_empty_trip_count():
    assert lower(parse_program(LISTING1), inputs(0)) == []


def test_listing2_first_loop_precedes_second():
    ops = lower(parse_program(LISTING2), inputs(8))
    assert [op.kind for op in ops[:8]] == [Kind.STORE] * 8
    assert all(op.pc == 0 for op in ops[:8])
    assert all(op.pc != 0 for op in ops[8:])
    assert [op.operands for op in ops[:8]] == [(i,) for i in range(8)]


def test_inorder_listing1():
    p = parse_program(LISTING1)
    inp = inputs(4, a=[1] * 4, b=[2] * 4)
    st = run_inorder(lower(p, inp), initial_state(p, inp))
    assert values(st, A, 4) == [3, 3, 3, 3]
    assert values(st, B, 4) == [2, 2, 2, 2]


def test_inorder_empty_stream_leaves_state():
    p = parse_program(LISTING1)
    inp = inputs(4, a=[1] * 4)
    init = initial_state(p, inp)
    assert run_inorder([], init) == init


def _listing2_direct(a, b, n):
    a, b = list(a), list(b)
    for i in range(n):
        b[i] = i
    for i in range(n):
        a[i] = a[i] + b[i]
    return a, b


@pytest.mark.parametrize("n, a0, b0", [
    (4, [0, 1, 2, 3], [9, 9, 9, 9]),
    (4, [5, -3, 7, 100], [0, 0, 0, 0]),
    (7, [2 ** 31 - 1] * 7, [1] * 7),
])
def test_inorder_listing2_matches_direct_evaluation(n, a0, b0):
    p = parse_program(LISTING2)
    inp = inputs(n, a=a0, b=b0)
    st = run_inorder(lower(p, inp), initial_state(p, inp))
    ea, eb = _listing2_direct(a0, b0, n)
    # 32-bit elements wrap like the hardware would
    wrap = lambda v: (v + 2 ** 31) % 2 ** 32 - 2 ** 31
    assert values(st, A, n) == [wrap(v) for v in ea]
    assert values(st, B, n) == eb


def test_inorder_ignores_pnd_bits():
    raw = parse_program(LISTING1)
    lab, _ = label_pass(raw)
    inp = inputs(6, a=list(range(6)), b=[3] * 6)
    init = initial_state(raw, inp)
    assert run_inorder(lower(raw, inp), init) == run_inorder(lower(lab, inp), init)


def test_out_of_bounds_index():
    with pytest.raises(LoweringError, match="outside"):
        lower(parse_program(LISTING1), inputs(5, length=4))


def test_unbound_trip_count():
    inp = inputs(4)
    inp.bindings = {}
    with pytest.raises(LoweringError, match="unbound trip count"):
        lower(parse_program(LISTING1), inp)


def test_unplaced_array_parameter():
    with pytest.raises(LoweringError, match="no placement"):
        lower(parse_program(LISTING1), LoweringInputs(bindings={"n": 1}))


def test_invalid_program_rejected():
    p = parse_program("fn f(arr a readonly) { for i = 0 to 4 step 1 { store a[i] = 1 } }",
                      check=False)
    with pytest.raises(LoweringError, match="does not validate"):
        lower(p, LoweringInputs(arrays={"a": Placement(0, 4, 4)}))


def test_globals_are_placed_automatically():
    p = parse_program("array g[4] esz 8\narray h[3] esz 2\n"
                      "fn f() { for i = 0 to 3 step 1 { load x = g[i]\nstore h[i] = x } }")
    ops = lower(p, LoweringInputs())
    g_addrs = [op.addr for op in ops if op.kind is Kind.LOAD]
    h_addrs = [op.addr for op in ops if op.kind is Kind.STORE]
    assert g_addrs[1] - g_addrs[0] == 8 and h_addrs[1] - h_addrs[0] == 2
    assert g_addrs[0] % 0x1000 == 0 and h_addrs[0] % 0x1000 == 0
    assert h_addrs[0] >= g_addrs[0] + 32


def test_addresses_match_affine_formula():
    p = parse_program("fn f(arr t, int n) {\n for i = 0 to n step 2 {\n"
                      "  for j = 3 to 0 step -1 { load x = t[3*i - j + 3] }\n }\n}")
    ops = lower(p, LoweringInputs(bindings={"n": 6}, arrays={"t": Placement(0x500, 32, 8)}))
    expect = [0x500 + 8 * (3 * i - j + 3) for i in range(0, 6, 2) for j in (3, 2, 1)]
    assert [op.addr for op in ops] == expect


def test_call_writes_and_summary_check():
    text = ("array log[4] esz 4\narray acc[4] esz 4\n"
            "fn f() { for i = 0 to 2 step 1 { call rec reads() writes(log) } }")
    p = parse_program(text)
    ops = lower(p, LoweringInputs(call_effects={"rec": (("log", 1, 42),)}))
    assert len(ops) == 2 and ops[0].kind is Kind.CALL
    st = run_inorder(ops, initial_state(p, LoweringInputs()))
    base = ops[0].writes[0][0] - 4
    assert values(st, base, 4) == [0, 42, 0, 0]
    with pytest.raises(LoweringError, match="outside its declared writes"):
        lower(p, LoweringInputs(call_effects={"rec": (("acc", 0, 1),)}))


def test_aliased_parameters_share_memory():
    # two plain parameters bound to overlapping memory model pointer aliasing
    text = "fn f(arr p, arr q) { for i = 0 to 4 step 1 { store p[i] = 7\nload x = q[i] } }"
    p = parse_program(text)
    inp = LoweringInputs(arrays={"p": Placement(0x100, 4, 4), "q": Placement(0x104, 4, 4)})
    ops = lower(p, inp)
    assert ops[2].addr == ops[1].addr  # p[1] is q[0]
    st = run_inorder(ops, initial_state(p, inp))
    assert st.registers["x"] == 0  # q[3] lies past the last p store


@pytest.mark.parametrize("params, arrays, fragment", [
    ("arr p restrict, arr q", {"p": Placement(0x100, 4, 4), "q": Placement(0x100, 4, 4)},
     "restrict"),
])
def test_restrict_contract_enforced(params, arrays, fragment):
    text = f"fn f({params}) {{ for i = 0 to 4 step 1 {{ store p[i] = 1\nload x = q[i] }} }}"
    with pytest.raises(LoweringError, match=fragment):
        lower(parse_program(text), LoweringInputs(arrays=arrays))


def test_readonly_contract_enforced():
    text = "fn f(arr t readonly, arr o) { for i = 0 to 4 step 1 { load x = t[i]\nstore o[i] = x } }"
    overlap = {"t": Placement(0x100, 4, 4), "o": Placement(0x108, 4, 4)}
    with pytest.raises(LoweringError, match="readonly"):
        lower(parse_program(text), LoweringInputs(arrays=overlap))


def test_overlapping_globals_rejected():
    text = "array g[4] esz 4\narray h[4] esz 4\nfn f() { for i = 0 to 4 step 1 { load x = g[i] } }"
    arrays = {"g": Placement(0x100, 4, 4), "h": Placement(0x104, 4, 4)}
    with pytest.raises(LoweringError, match="overlap"):
        lower(parse_program(text), LoweringInputs(arrays=arrays))


def test_invocations_repeat_the_stream():
    p = parse_program(LISTING2)
    one = lower(p, inputs(3))
    three = lower(p, inputs(3, invocations=3))
    assert len(three) == 3 * len(one)
    assert [op.pc for op in three] == [op.pc for op in one] * 3


def test_addr_delay_attached_by_static_id():
    ops = lower(parse_program(LISTING1), inputs(2, addr_delay={3: 30}))
    assert [op.addr_ready_latency for op in ops] == [0, 0, 0, 30] * 2


def test_alu_wraps_to_64_bits():
    assert alu_eval("+", 2 ** 63 - 1, 1) == -(2 ** 63)
    assert alu_eval("*", -3, 5) == -15
    assert alu_eval("^", 6, 3) == 5
    with pytest.raises(ValueError):
        alu_eval("/", 1, 1)


def test_narrow_elements_sign_extend():
    st = MachineState(memory={a: 0 for a in range(0x10, 0x12)})
    st.write(0x10, 2, -2)
    assert st.memory[0x10] == 0xFE and st.memory[0x11] == 0xFF
    assert st.read(0x10, 2) == -2
    with pytest.raises(LoweringError):
        st.write(0x20, 1, 1)


def test_dump_format():
    ops = lower(label_pass(parse_program(LISTING1))[0], inputs(1))
    assert dump_stream(ops).splitlines() == [
        "0 0x0 load 0x1000 0",
        "1 0x4 load 0x2000 1",
        "2 0x8 alu - 0",
        "3 0xc store 0x1000 0",
    ]
    assert isinstance(ops[0], DynOp)
