import math

import numpy as np
import pytest

from memconsensus.core import Instance, make_instance
from memconsensus.engine_async import AsyncSimConfig, EventQueue, next_event, run_async
from memconsensus.harness import simulate
from memconsensus.protocols import BASELINE_3STATE, TableProtocol

# each ring flips the kind and keeps the belief, so every ring is logged
TOGGLE = TableProtocol(
    name="toggle",
    beliefs=(0, 0, 1, 1),
    initiators=(False,) * 4,
    idle=(1, 0, 3, 2),
    interact=tuple(tuple((a, b) for b in range(4)) for a in range(4)),
    initial=(0, 2),
    kinds=(1, 2, 1, 2),
).spec()

# the initiator copies its belief onto the partner
COPY = TableProtocol(
    name="copy",
    beliefs=(0, 1),
    initiators=(True, True),
    idle=(0, 1),
    interact=(((0, 0), (0, 0)), ((1, 1), (1, 1))),
    initial=(0, 1),
).spec()


def bits(n, ones):
    b = np.zeros(n, np.int8)
    b[:ones] = 1
    return Instance(n=n, initial_bits=b, majority_bit=int(ones * 2 > n), advantage_fraction=max(ones, n - ones) / n)


def test_next_event_gap_and_uniformity():
    rng = np.random.default_rng(1)
    q = EventQueue(active=list(range(10)))
    nodes = np.zeros(10, int)
    last = 0.0
    gaps = []
    for _ in range(50000):
        t, node = next_event(q, rng)
        assert t > last
        gaps.append(t - last)
        last = t
        nodes[node] += 1
    assert abs(np.mean(gaps) - 0.1) < 4 * 0.1 / math.sqrt(50000)
    assert np.all(np.abs(nodes - 5000) < 4 * math.sqrt(5000))
    with pytest.raises(ValueError):
        next_event(EventQueue(active=[]), rng)


def test_ring_counts_are_poisson():
    n, H = 200, 40.0
    res = run_async(TOGGLE, bits(n, 0), AsyncSimConfig(seed=3, horizon=H, audit=True))
    counts = np.bincount(res.event_log[:, 1].astype(int), minlength=n)
    assert counts.sum() == res.events_processed
    assert abs(counts.mean() - H) < 4 * math.sqrt(H / n)
    assert abs(counts.var() / H - 1) < 0.3
    assert res.communications_total == 0
    # gap mean 1/n
    assert abs(res.events_processed / (n * H) - 1) < 4 / math.sqrt(n * H)


def test_no_terminal_states_runs_to_horizon():
    res = run_async(TOGGLE, bits(16, 0), AsyncSimConfig(seed=0, horizon=5.0))
    assert res.consensus_time == 0.0
    assert res.terminal_censored and not res.success
    assert res.end_time <= 5.0


def test_copy_protocol_reaches_consensus():
    inst = bits(16, 15)
    res = run_async(COPY, inst, AsyncSimConfig(seed=5, horizon=200.0))
    assert res.final_incorrect_count in (0, 16)
    assert res.communications_total == res.events_processed
    assert sum(res.per_type_comm_counts.values()) == res.communications_total


def test_determinism():
    a = simulate("simple-async", 512, 0.75, 0.2, 11)
    b = simulate("simple-async", 512, 0.75, 0.2, 11)
    c = simulate("simple-async", 512, 0.75, 0.2, 12)
    assert a.communications_total == b.communications_total
    assert np.array_equal(a.final_states, b.final_states)
    assert a.terminal_time == b.terminal_time
    assert a.terminal_time != c.terminal_time


@pytest.mark.parametrize("suppress", [True, False])
def test_suppression_does_not_change_outcome(suppress):
    from conftest import protocol_for

    proto = protocol_for("simple-async", 512)
    inst = make_instance(512, 0.75, 4)
    res = run_async(proto, inst, AsyncSimConfig(seed=9, suppress_terminal_rings=suppress))
    assert res.success
    assert res.consensus_time <= res.terminal_time
    assert res.communications_at_terminal == res.communications_total


def test_cost_accounting_and_audit():
    from conftest import protocol_for

    proto = protocol_for("simple-async", 256)
    res = run_async(proto, make_instance(256, 0.7, 2), AsyncSimConfig(seed=1, audit=True))
    assert sum(res.per_type_comm_counts.values()) == res.communications_total
    assert res.kind_transitions.sum() == len(res.event_log)
    assert all(proto.valid(int(s)) for s in res.states_observed)


def test_snapshots_and_stop_when_correct():
    base = BASELINE_3STATE.spec()
    inst = make_instance(256, 0.8, 0)
    res = run_async(base, inst, AsyncSimConfig(seed=0, horizon=500.0, stop_when_correct=True,
                                               snapshot_times=(0.0, 1.0)))
    assert res.final_incorrect_count == 0
    assert res.consensus_time == res.end_time
    assert res.snapshots.shape == (2, 256)
    assert np.array_equal(res.snapshots[0], base.initial_states_for(inst.initial_bits))


def test_sync_protocol_rejected():
    from conftest import protocol_for

    with pytest.raises(ValueError):
        run_async(protocol_for("sync", 256), make_instance(256, 0.75, 0))


def test_bad_horizon():
    with pytest.raises(ValueError):
        AsyncSimConfig(horizon=0)
