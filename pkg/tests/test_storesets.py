import random

import pytest

from pndsim.storesets import CLEAR_PERIOD_RATIO, PredictorConfig, StoreSetsPredictor

L, S = 0x40, 0x80          # a load and a store that do not collide in 32 entries


def fresh(entries=32, **kw) -> StoreSetsPredictor:
    return StoreSetsPredictor(PredictorConfig(entries, entries, entries * CLEAR_PERIOD_RATIO, **kw))


def test_config_requires_powers_of_two():
    with pytest.raises(ValueError):
        PredictorConfig(24, 32, 100)
    with pytest.raises(ValueError):
        PredictorConfig(32, 32, 0)
    assert PredictorConfig.scaled(128).clear_period == 31232


@pytest.mark.parametrize("pc, expect", [(0x1000, 0), (4, 1), (4 + 32 * 4, 1)])
def test_index(pc, expect):
    assert fresh().index(pc) == expect


def test_lookup_pnd_touches_nothing():
    p = fresh()
    p.train_violation(L, S, False)
    p.dispatch_store(S, 5)
    before = p.snapshot()
    assert p.lookup_load(L, pnd=True) is None
    assert p.counters.lookups == 0 and p.counters.bypassed_lookups == 1
    assert p.snapshot() == before


def test_lookup_empty_tables():
    p = fresh()
    assert p.lookup_load(L, pnd=False) is None
    assert p.counters.lookups == 1


def test_trained_pair_predicts_the_store():
    # violation, then the store is fetched again, then the load looks up
    p = fresh()
    p.train_violation(L, S, False)
    assert p.dispatch_store(S, 7) is None
    assert p.lookup_load(L, False) == 7


def test_fresh_pair_allocation():
    p = fresh()
    p.train_violation(L, S, False)
    le, se = p.ssit[p.index(L)], p.ssit[p.index(S)]
    assert le.valid and se.valid and le.ssid == se.ssid == p.index(L) % 32
    assert le.shadow_pc == L and se.shadow_pc == S
    assert p.counters.trainings == 1


def test_second_load_joins_existing_set():
    p = fresh()
    L2 = 0xC0
    p.train_violation(L, S, False)
    p.train_violation(L2, S, False)
    ids = {p.ssit[p.index(x)].ssid for x in (L, L2, S)}
    assert len(ids) == 1


def test_merge_takes_min_ssid():
    p = fresh()
    L2, S2 = 0x10, 0x20           # indices 4 and 8
    p.train_violation(L, S, False)    # ssid 16
    p.train_violation(L2, S2, False)  # ssid 4
    p.train_violation(L, S2, False)   # both valid -> min
    assert p.ssit[p.index(L)].ssid == 4 and p.ssit[p.index(S2)].ssid == 4


def test_pnd_violation_is_not_trained():
    p = fresh()
    p.train_violation(0x44, S, False)
    before = p.snapshot()
    p.train_violation(L, S, True)
    assert p.snapshot() == before
    assert p.counters.trainings == 1


def test_dispatch_store_untrained():
    p = fresh()
    before = p.snapshot()
    assert p.dispatch_store(S, 1) is None
    assert p.snapshot() == before


def test_dispatch_store_chains_same_set():
    p = fresh()
    S2 = 0x84
    p.train_violation(L, S, False)
    p.train_violation(L, S2, False)
    assert p.dispatch_store(S, 1) is None
    assert p.dispatch_store(S2, 2) == 1
    ssid = p.ssit[p.index(S)].ssid
    assert p.lfst[ssid].valid and p.lfst[ssid].store_seq == 2


def test_store_issued_invalidation_rules():
    p = fresh()
    S2 = 0x84
    p.train_violation(L, S, False)
    p.train_violation(L, S2, False)
    ssid = p.ssit[p.index(S)].ssid
    p.dispatch_store(S, 1)
    p.store_issued(S, 1)
    assert not p.lfst[ssid].valid
    p.dispatch_store(S, 2)
    p.dispatch_store(S2, 3)
    p.store_issued(S, 2)          # older store: the younger one keeps the entry
    assert p.lfst[ssid].valid and p.lfst[ssid].store_seq == 3
    before = p.snapshot()
    p.store_issued(0x200, 9)      # untrained store
    assert p.snapshot() == before


def test_squash_drops_younger_lfst_entries():
    p = fresh()
    p.train_violation(L, S, False)
    p.dispatch_store(S, 10)
    p.squash(11)
    assert p.lookup_load(L, False) == 10
    p.squash(10)
    assert p.lookup_load(L, False) is None


def test_clear_period_small_preset():
    p = fresh(32)
    assert p.cfg.clear_period == 7808
    p.train_violation(L, S, False)
    p.dispatch_store(S, 0)
    for _ in range(7807):
        assert p.memop_tick() is False
    assert p.lookup_load(L, False) == 0
    assert p.memop_tick() is True
    assert p.counters.clears == 1
    assert not any(e.valid for e in p.ssit) and not any(f.valid for f in p.lfst)
    assert p.lookup_load(L, False) is None


def test_collisions_counted_only_on_foreign_pc():
    p = fresh()
    alias = L + 32 * 4
    p.train_violation(L, S, False)
    p.lookup_load(L, False)
    assert p.counters.index_collisions == 0
    p.lookup_load(alias, False)
    assert p.counters.index_collisions == 1


def _replay(pred: StoreSetsPredictor, script):
    out = []
    for op, *args in script:
        out.append(getattr(pred, op)(*args))
    return out


def _random_script(rng, n=3000):
    pcs = [4 * rng.randrange(200) for _ in range(24)]
    script, seq = [], 0
    for _ in range(n):
        r = rng.random()
        pc = rng.choice(pcs)
        if r < 0.35:
            script.append(("lookup_load", pc, rng.random() < 0.3))
        elif r < 0.6:
            seq += 1
            script.append(("dispatch_store", pc, seq))
        elif r < 0.75:
            script.append(("store_issued", pc, rng.randint(max(0, seq - 5), seq)))
        elif r < 0.85:
            script.append(("train_violation", pc, rng.choice(pcs), rng.random() < 0.3))
        elif r < 0.9:
            script.append(("squash", rng.randint(max(0, seq - 5), seq + 1)))
        else:
            script.append(("memop_tick",))
    return script


def test_shadow_never_changes_predictions():
    rng = random.Random(3)
    for _ in range(5):
        script = _random_script(rng)
        with_shadow = StoreSetsPredictor(PredictorConfig(32, 32, 97))
        without = StoreSetsPredictor(PredictorConfig(32, 32, 97, track_shadow=False))
        assert _replay(with_shadow, script) == _replay(without, script)
        a, b = with_shadow.counters, without.counters
        assert (a.lookups, a.trainings, a.clears) == (b.lookups, b.trainings, b.clears)
        assert b.index_collisions == 0


def test_pnd_calls_never_mutate_under_random_interleavings():
    rng = random.Random(4)
    p = StoreSetsPredictor(PredictorConfig(16, 16, 50))
    for op, *args in _random_script(rng, 4000):
        pnd_event = (op == "lookup_load" and args[1]) or (op == "train_violation" and args[2])
        before = (p.snapshot(), p.counters.lookups, p.counters.trainings)
        getattr(p, op)(*args)
        if pnd_event:
            assert (p.snapshot(), p.counters.lookups, p.counters.trainings) == before


def test_replay_is_predicted_until_clear():
    rng = random.Random(5)
    for _ in range(50):
        p = fresh(32)
        ld, stv = 4 * rng.randrange(1000), 4 * rng.randrange(1000)
        if p.index(ld) == p.index(stv):
            continue
        p.train_violation(ld, stv, False)
        seq = rng.randrange(1, 10 ** 6)
        p.dispatch_store(stv, seq)
        assert p.lookup_load(ld, False) == seq


def test_deterministic():
    script = _random_script(random.Random(6))
    a, b = fresh(), fresh()
    assert _replay(a, script) == _replay(b, script)
    assert a.snapshot() == b.snapshot() and a.counters == b.counters


def test_dump_lists_every_entry():
    p = fresh(4)
    p.train_violation(0, 4, False)
    lines = p.dump().splitlines()
    assert lines[0].startswith("SSIT") and len(lines) == 1 + 4 + 1 + 4
    assert lines[1] == "0 1 0 0x0"
