import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import protocol_for
from memconsensus.protocols import sync as sy

N = 1024


@pytest.fixture(scope="module")
def proto():
    return protocol_for("sync", N)


@pytest.fixture(scope="module")
def ps(proto):
    return proto.paramset


def test_handshake_step1_established_sets_test_bit(proto):
    a = sy.encode((1, -1, 1, 0, -1, 0))
    assert proto.initiates(a)
    new_a, _ = proto.interact(a, sy.encode((1, -1, 1, 0, -1, 1)))
    assert sy.decode(new_a) == (1, -1, 2, 0, 1, 0)


def test_handshake_step1_rejected_sets_zero(proto):
    a = sy.encode((1, -1, 1, 0, -1, 0))
    assert sy.decode(proto.rejected(a)) == (1, -1, 2, 0, 0, 0)


def test_handshake_second_step_confirms_or_erases(proto):
    # bit 1 needs a rejection at the second step, bit 0 an established call
    one = sy.encode((1, -1, 2, 0, 1, 0))
    zero = sy.encode((1, -1, 2, 0, 0, 0))
    assert sy.decode(proto.rejected(one))[4] == 1
    assert sy.decode(proto.interact(one, sy.encode((1, -1, 2, 0, -1, 1)))[0])[4] == -1
    assert sy.decode(proto.interact(zero, sy.encode((1, -1, 2, 0, -1, 1)))[0])[4] == 0
    assert sy.decode(proto.rejected(zero))[4] == -1


def test_belief1_aspirants_wait_for_steps_3_4(proto):
    assert not proto.initiates(sy.encode((1, -1, 1, 0, -1, 1)))
    assert proto.initiates(sy.encode((1, -1, 3, 0, -1, 1)))
    assert not proto.initiates(sy.encode((1, -1, 3, 0, -1, 0)))


def test_polling_parity_and_selection(proto, ps):
    KS = ps.K_select
    # even steps poll for belief 0, odd steps for belief 1
    assert proto.initiates(sy.encode((1, -1, 6, 0, -1, 0)))
    assert not proto.initiates(sy.encode((1, -1, 6, 0, -1, 1)))
    assert proto.initiates(sy.encode((1, -1, 7, 0, -1, 1)))
    a = sy.encode((1, -1, 6, KS - 1, -1, 0))
    seen0 = sy.encode((1, -1, 6, 0, 0, 1))
    seen1 = sy.encode((1, -1, 6, 0, 1, 1))
    assert sy.decode(proto.interact(a, seen0)[0])[3] == KS
    assert sy.decode(proto.interact(a, seen1)[0])[1] == 3
    # a test bit of -1 carries no information
    blank = sy.encode((1, -1, 6, 0, -1, 1))
    assert sy.decode(proto.interact(a, blank)[0])[1:4] == (-1, 7, KS - 1)


def test_phase_end(proto, ps):
    D = ps.expert_phase_len
    chosen = sy.encode((1, 2, D, 0, -1, 1))
    other = sy.encode((1, 3, D, 0, 0, 0))
    assert sy.decode(proto.idle(chosen)) == (2, 0, 1, 1)
    assert sy.decode(proto.idle(other)) == (3, 1, 0)


def test_candidate_steps(proto, ps):
    K = ps.K
    lvl = 2
    e1 = sy.encode((2, lvl, 2 * K + 1, 1))
    e2 = sy.encode((2, lvl, 2 * K + 2, 0))
    e3 = sy.encode((2, lvl, 2 * K + 3, 1))
    _, c = proto.interact(e1, sy.encode((3, 5, 0)))
    assert sy.decode(c) == (5, -1, 1)
    _, c = proto.interact(e2, c)
    assert sy.decode(c) == (5, 0, 1)
    new_e, x = proto.interact(e3, c)
    assert sy.decode(x) == (2, lvl + 1, 1, 1)
    assert sy.decode(new_e) == (3, 1, 1)


def test_candidate_completion_majority(proto, ps):
    K = ps.K
    e3 = sy.encode((2, 1, 2 * K + 3, 1))
    _, x = proto.interact(e3, sy.encode((5, 0, 1)))
    assert sy.decode(x) == (2, 2, 1, 1)
    _, x = proto.interact(sy.encode((2, 1, 2 * K + 3, 0)), sy.encode((5, 0, 1)))
    assert sy.decode(x) == (2, 2, 1, 0)


def test_uncontacted_candidate_becomes_regular(proto):
    assert sy.decode(proto.idle(sy.encode((5, -1, 1)))) == (3, 1, 1)


def test_doubling_copies_expert(proto, ps):
    e = sy.encode((2, 3, 4, 1))
    new_e, x = proto.interact(e, sy.encode((3, 9, 0)))
    assert new_e == x == sy.encode((2, 3, 5, 1))


def test_informed_push(proto):
    i = sy.encode((6, 1))
    assert sy.decode(proto.rejected(i)) == (4, 1)
    new_i, x = proto.interact(i, sy.encode((3, 4, 0)))
    assert new_i == i and sy.decode(x) == (6, 1)
    assert sy.decode(proto.interact(i, sy.encode((4, 0)))[0]) == (4, 1)


def test_regular_pull(proto, ps):
    r = sy.encode((3, ps.pull_interval, 0))
    assert proto.initiates(r)
    assert sy.decode(proto.interact(r, sy.encode((4, 1)))[0]) == (4, 1)
    assert sy.decode(proto.interact(r, sy.encode((3, 3, 1)))[0]) == (3, 1, 0)
    assert sy.decode(proto.rejected(r)) == (3, 1, 0)


def test_universe_enumeration(proto):
    u = proto.enumerate_universe()
    assert len(u) == proto.universe_size == len(np.unique(u))
    assert all(proto.valid(int(s)) for s in u[:: max(1, len(u) // 3000)])


@settings(max_examples=400, deadline=None)
@given(st.data())
def test_closure(data):
    p = protocol_for("sync", 64)
    u = p.enumerate_universe()
    a = int(u[data.draw(st.integers(0, len(u) - 1))])
    b = int(u[data.draw(st.integers(0, len(u) - 1))])
    assert p.valid(p.idle(a))
    if p.initiates(a):
        x, y = p.interact(a, b)
        assert p.valid(x) and p.valid(y)
        assert p.valid(p.rejected(a))
