import math

import numpy as np
import pytest

from conftest import protocol_for
from memconsensus.core import make_instance
from memconsensus.engine_sync import SyncSimConfig, resolve_round, run_sync
from memconsensus.protocols import TableProtocol

# states 0, 1 initiate; 2, 3 do not; everyone keeps its state
STILL = TableProtocol(
    name="still",
    beliefs=(0, 1, 0, 1),
    initiators=(True, True, False, False),
    idle=(0, 1, 2, 3),
    interact=tuple(tuple((a, b) for b in range(4)) for a in range(4)),
    initial=(0, 1),
    kinds=(1, 1, 2, 2),
).spec()

INIT = STILL.initial_codes[0]
PASSIVE = STILL.params[1 + 2]


def test_two_suitors_one_target(rng):
    pre = np.array([INIT, INIT, PASSIVE])
    while True:
        res = resolve_round(STILL, pre, rng)
        assert res.cost == 2
        if res.initiator_targets == {0: 2, 1: 2}:
            break
    (i, j), = res.established_pairs
    assert j == 2 and i in (0, 1)
    assert res.rejected_initiators == frozenset({1 - i})
    assert res.idle_nodes == frozenset()


def test_initiator_target_rejects():
    rng = np.random.default_rng(0)
    pre = np.array([INIT] * 5)
    res = resolve_round(STILL, pre, rng)
    assert res.established_pairs == frozenset()
    assert res.rejected_initiators == frozenset(range(5))
    assert res.cost == 5


def test_no_self_targets_and_partition(rng):
    pre = np.array([INIT] * 30 + [PASSIVE] * 70)
    for _ in range(20):
        res = resolve_round(STILL, pre, rng)
        assert all(i != j for i, j in res.initiator_targets.items())
        est = {i for i, _ in res.established_pairs}
        rec = {j for _, j in res.established_pairs}
        assert len(rec) == len(res.established_pairs)
        assert rec.isdisjoint(range(30))
        assert est | set(res.rejected_initiators) == set(range(30))
        assert len(res.idle_nodes) + len(rec) + 30 == 100


def test_winner_uniform_among_suitors():
    # many initiators, one passive node: the winner is uniform over suitors
    rng = np.random.default_rng(7)
    pre = np.array([PASSIVE] + [INIT] * 3)
    wins = np.zeros(4, int)
    contested = 0
    for _ in range(30000):
        res = resolve_round(STILL, pre, rng)
        suitors = [i for i, j in res.initiator_targets.items() if j == 0]
        if len(suitors) == 3:
            contested += 1
            (w, _), = res.established_pairs
            wins[w] += 1
    exp = contested / 3
    assert contested > 500
    assert np.all(np.abs(wins[1:] - exp) < 4 * math.sqrt(exp))


def test_cost_counts_initiators_each_round():
    proto = protocol_for("sync", 256)
    inst = make_instance(256, 0.75, 1)
    res = run_sync(proto, inst, SyncSimConfig(seed=2, horizon=3))
    init = proto.initial_states_for(inst.initial_bits)
    assert res.communications_total > 0
    assert res.events_processed == 3 * 256
    assert sum(res.per_type_comm_counts.values()) == res.communications_total
    one = run_sync(proto, inst, SyncSimConfig(seed=2, horizon=1))
    flags = [proto.initiates(int(s)) for s in init]
    assert one.communications_total == sum(flags)


def test_sync_determinism_and_success():
    proto = protocol_for("sync", 1024)
    inst = make_instance(1024, 0.75, 3)
    a = run_sync(proto, inst, SyncSimConfig(seed=4))
    b = run_sync(proto, inst, SyncSimConfig(seed=4))
    assert a.communications_total == b.communications_total
    assert np.array_equal(a.final_states, b.final_states)
    assert a.success


def test_permutation_invariance_of_outcome():
    # relabelling the nodes does not change the success rate
    proto = protocol_for("sync", 1024)
    inst = make_instance(1024, 0.75, 3)
    perm = np.random.default_rng(0).permutation(1024)
    from memconsensus.core import Instance

    other = Instance(n=1024, initial_bits=inst.initial_bits[perm].copy(), majority_bit=inst.majority_bit,
                     advantage_fraction=inst.advantage_fraction)
    ok = [run_sync(proto, x, SyncSimConfig(seed=s)).success for s in range(3) for x in (inst, other)]
    assert all(ok)


def test_bad_horizon():
    with pytest.raises(ValueError):
        SyncSimConfig(horizon=0)
