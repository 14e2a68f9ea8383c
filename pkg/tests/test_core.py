import math

import numpy as np
import pytest

from memconsensus.core import (
    MIN_NODES,
    PRESETS,
    derive_params,
    make_instance,
    majority_of_bits,
    resolve_overrides,
)


def test_sync_constants_at_65536():
    ps = derive_params("sync", 65536, 0.2)
    assert (ps.M, ps.K, ps.round_len, ps.pull_interval) == (8, 20, 43, 480)
    assert ps.expert_counter_max == 43


def test_simple_async_c0_substitution():
    # epsilon=0.5 lies outside the accepted range, so check the formula at 0.2 and by hand
    ps = derive_params("simple-async", 1024, 0.2)
    assert ps.c0 == pytest.approx(10 / 0.04)
    assert ps.C0_ceil_log_n == math.ceil(250 * 10)
    assert 10 / 0.5**2 == 40


def test_full_async_constants_at_65536():
    ps = derive_params("full-async", 65536, 0.2)
    assert ps.K == 24
    assert ps.T_aspirant == 100000
    assert ps.t_m_schedule[1] == 600168
    assert ps.M == 8
    assert ps.candidate_expiry == 2 * ps.t_m_schedule[ps.M]
    assert ps.expert_counter_max == 2 * 24 + 7


def test_unit_overrides_are_pure():
    a = derive_params("full-async", 4096, 0.2)
    b = derive_params("full-async", 4096, 0.2, {})
    assert a == b
    assert a.universe_size >= 2


@pytest.mark.parametrize("pid", ["simple-async", "sync", "full-async", "baseline-3state"])
def test_derived_integers_positive(pid):
    for n in (16, 1024, 65536):
        ps = derive_params(pid, n, 0.2, resolve_overrides(pid, "desk"))
        for k, v in ps.as_dict().items():
            if isinstance(v, int) and not isinstance(v, bool):
                assert v >= 1, (pid, n, k)


@pytest.mark.parametrize("bad", [(8, 0.2), (1024, 0.0), (1024, 0.25), (1024, -0.1)])
def test_derive_params_rejects(bad):
    n, eps = bad
    with pytest.raises(ValueError):
        derive_params("sync", n, eps)


def test_override_validation():
    with pytest.raises(ValueError):
        resolve_overrides("sync", "desk", {"c0": 0.5})
    with pytest.raises(ValueError):
        resolve_overrides("sync", "desk", {"k": 0.0})
    with pytest.raises(ValueError):
        resolve_overrides("nope", "desk")
    scales = resolve_overrides("sync", "desk", {"k": 0.3})
    assert scales["k"] == 0.3
    assert scales["expert_phase"] == PRESETS["desk"]["sync"]["expert_phase"]


def test_instance_exact_count():
    inst = make_instance(100, 0.7, 1)
    assert int((inst.initial_bits == inst.majority_bit).sum()) == 70
    assert inst.advantage_fraction == pytest.approx(0.7)


def test_instance_tie_goes_to_zero():
    inst = make_instance(100, 0.5, 3)
    assert inst.majority_bit == 0
    assert int(inst.initial_bits.sum()) == 50


def test_instance_shuffle_only():
    a = make_instance(16, 0.75, 1)
    b = make_instance(16, 0.75, 2)
    assert sorted(a.initial_bits) == sorted(b.initial_bits)
    assert not np.array_equal(a.initial_bits, b.initial_bits)


def test_instance_validation():
    with pytest.raises(ValueError):
        make_instance(MIN_NODES - 1, 0.75, 0)
    with pytest.raises(ValueError):
        make_instance(100, 0.4, 0)
    with pytest.raises(ValueError):
        make_instance(100, 0.65, 0, epsilon=0.2)


def test_majority_of_bits():
    assert majority_of_bits([0, 1, 1]) == 1
    assert majority_of_bits([0, 1]) == 0
    assert majority_of_bits([1, 1, 0]) == 1
    with pytest.raises(ValueError):
        majority_of_bits([])


@pytest.mark.parametrize("pid", ["simple-async", "sync", "full-async", "baseline-3state"])
def test_initial_states_carry_their_bit(pid):
    from conftest import protocol_for

    p = protocol_for(pid, 64, **({"t_aspirant": 0.001} if pid == "full-async" else {}))
    for b in (0, 1):
        assert p.belief(p.initial_state(b)) == b
        assert p.valid(p.initial_state(b))
