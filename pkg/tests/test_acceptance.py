"""Acceptance criteria at their stated tolerances.

Each test appends one PASS/FAIL line to the summary printed at the end of
the session, then asserts.  Run directly with ``python tests/test_acceptance.py``.
"""
import functools
import math
import sys
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, protocol_for
from memconsensus import analyzer as an
from memconsensus.core import Instance, loglog2
from memconsensus.engine_async import AsyncSimConfig, run_async
from memconsensus.engine_sync import resolve_round
from memconsensus.harness import ExperimentConfig, fit_scaling, rows_to_csv, run_sweep, simulate
from memconsensus.protocols import TableProtocol
from memconsensus.protocols import simple_async as sa
from oracle import TOYS, check_against_oracle, oracle_async

pytestmark = pytest.mark.acceptance

SIMPLE_SIZES = tuple(2**k for k in range(10, 17))
SYNC_SIZES = tuple(2**k for k in range(12, 17))
FULL_SIZES = (2**12, 2**14)
BASELINE_SIZES = tuple(2**k for k in range(10, 17))


def record(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def by_n(rows):
    out = {}
    for r in rows:
        out.setdefault(r["n"], []).append(r)
    return out


@functools.lru_cache(maxsize=None)
def sweep(protocol_id, n_list, p, reps, preset, epsilon=0.2):
    cfg = ExperimentConfig(protocol_id, n_list, (p,), epsilon=epsilon, repetitions=reps, preset=preset)
    t0 = time.time()
    rows = run_sweep(cfg)
    return rows, time.time() - t0


def test_criterion_01_simple_async_correctness():
    rows, secs = sweep("simple-async", (1024, 4096, 16384), 0.7, 50, "unscaled")
    rates = {n: sum(r["success"] for r in rs) / len(rs) for n, rs in by_n(rows).items()}
    ok = all(v >= 0.95 for v in rates.values()) and secs < 180
    record(1, ok, f"success per n {rates}, {secs:.0f}s (need >= 0.95, < 180s)")
    assert ok


def test_criterion_02_simple_async_linear_cost():
    rows, secs = sweep("simple-async", SIMPLE_SIZES, 0.75, 4, "unscaled")
    fit = fit_scaling(rows, "n", "n_terminal")
    censored = sum(r["n_terminal"] is None for r in rows)
    ok = 0.90 <= fit.exponent <= 1.15 and secs < 600
    record(2, ok, f"exponent {fit.exponent:.3f} over {fit.points} runs ({censored} censored), {secs:.0f}s "
                  "(need [0.90, 1.15], < 600s)")
    assert ok


def test_criterion_03_expert_concentration():
    n = 65536
    rows, _ = sweep("simple-async", SIMPLE_SIZES, 0.75, 4, "unscaled")
    runs = by_n(rows)[n]
    q = 0.5 ** (math.ceil(loglog2(n)) - 1)
    trials = n * len(runs)
    pooled = sum(r["aspirant_to_expert"] for r in runs)
    sd = math.sqrt(trials * q * (1 - q))
    z = (pooled - trials * q) / sd
    ok = abs(z) <= 5
    record(3, ok, f"{pooled} experts over {len(runs)} runs, expected {trials * q:.0f}, z={z:+.2f} (need |z| <= 5)")
    assert ok


def test_criterion_04_memory_audit():
    problems = []
    checked = 0
    for pid, n, preset in [
        ("simple-async", 1024, "unscaled"),
        ("simple-async", 4096, "desk"),
        ("sync", 4096, "desk"),
        ("full-async", 4096, "desk"),
        ("baseline-3state", 1024, "desk"),
    ]:
        proto = protocol_for(pid, n, preset=preset)
        for seed in range(3):
            res = simulate(pid, n, 0.75, 0.2, seed, preset=preset, audit=True)
            bad = [int(s) for s in res.states_observed if not proto.valid(int(s))]
            checked += len(res.states_observed)
            if bad:
                problems.append((pid, seed, bad[:3]))
            if proto.universe_size <= 4_000_000:
                universe = proto.enumerate_universe()
                if not np.isin(res.states_observed, universe).all():
                    problems.append((pid, seed, "not enumerated"))
    bounds = []
    for n in SIMPLE_SIZES:
        ps = protocol_for("simple-async", n, preset="unscaled").paramset
        size = sa.universe_size(ps)
        bound = 16 * ps.C0_ceil_log_n**2
        bounds.append(size <= bound)
    ok = not problems and all(bounds)
    record(4, ok, f"{checked} observed states checked, {len(problems)} outside; "
                  f"universe bound holds for {sum(bounds)}/{len(bounds)} sizes")
    assert ok


def test_criterion_05_sync_correctness_and_cost():
    rows, secs = sweep("sync", SYNC_SIZES, 0.75, 50, "desk")
    groups = by_n(rows)
    rates = {n: sum(r["success"] for r in rs) / len(rs) for n, rs in groups.items()}
    fit = fit_scaling(rows, "n", "n_terminal")
    times = {n: np.mean([r["terminal_time"] for r in rs if r["success"]] or [math.inf]) for n, rs in groups.items()}
    ratio = times[SYNC_SIZES[-1]] / times[SYNC_SIZES[0]]
    ok = all(v >= 0.95 for v in rates.values()) and 0.90 <= fit.exponent <= 1.2 and ratio < 2
    record(5, ok, f"success {rates}, exponent {fit.exponent:.3f}, time ratio {ratio:.3f}, {secs:.0f}s "
                  "(need >= 0.95, [0.90, 1.2], < 2)")
    assert ok


def test_criterion_06_full_async_correctness():
    rows, secs = sweep("full-async", FULL_SIZES, 0.75, 30, "desk")
    groups = by_n(rows)
    rates = {n: sum(r["success"] for r in rs) / len(rs) for n, rs in groups.items()}
    cost = {n: np.mean([r["communications_total"] / n for r in rs]) for n, rs in groups.items()}
    spread = max(cost.values()) / min(cost.values())
    ok = all(v >= 0.90 for v in rates.values()) and spread <= 1.5
    record(6, ok, f"success {rates}, cost/n {{{', '.join(f'{n}: {c:.0f}' for n, c in cost.items())}}}, "
                  f"spread {spread:.2f}, {secs:.0f}s (need >= 0.90, <= 1.5)")
    assert ok


def test_criterion_07_baseline_growth():
    rows, _ = sweep("baseline-3state", BASELINE_SIZES, 0.75, 20, "desk")
    groups = by_n(rows)
    per_n = []
    per_nlogn = []
    for n in BASELINE_SIZES:
        vals = [r["n_consensus"] for r in groups[n] if r["n_consensus"] is not None]
        assert len(vals) == len(groups[n]), "every baseline run must reach consensus"
        m = float(np.mean(vals))
        per_n.append(m / n)
        per_nlogn.append(m / (n * math.log2(n)))
    increasing = all(b > a for a, b in zip(per_n, per_n[1:]))
    vary = max(per_nlogn) / min(per_nlogn)
    ok = increasing and vary < 2
    record(7, ok, f"N/n {[round(x, 2) for x in per_n]}, N/(n log n) varies {vary:.2f}x "
                  "(need strictly increasing, < 2x)")
    assert ok


def test_criterion_08_analyzer_oracle():
    sizes = []
    for table in TOYS:
        check_against_oracle(table)
        k_star = an.compute_reachable(table.spec(), "async").fixed_point_index
        assert k_star == len(oracle_async(table)) - 1 and k_star <= table.size
        sizes.append(table.size)
    ok = len(TOYS) >= 5 and max(sizes) <= 20
    record(8, ok, f"{len(TOYS)} toy protocols ({min(sizes)}-{max(sizes)} states) match the oracle")
    assert ok


def test_criterion_09_simple_async_classification():
    proto = protocol_for("simple-async", 1024)
    rep = an.analyze(proto)
    decoded = {s: proto.decode(s) for s in rep.a_sequence.union}
    terminal = sorted(proto.decode(s) for s in rep.terminal_states)
    pushing = [s for s, d in decoded.items() if d[0] == sa.EXPERT and d[1] == 2]
    pushing_aware = all(s in rep.aware_states for s in pushing)
    aspirants_aware = [s for s in rep.aware_states if decoded[s][0] == sa.ASPIRANT]
    ok = terminal == [(4, 0), (4, 1)] and pushing and pushing_aware and not aspirants_aware
    record(9, ok, f"terminal {terminal}, {len(pushing)} pushing experts all aware: {pushing_aware}, "
                  f"aware aspirants: {len(aspirants_aware)}, over {len(decoded)} reachable of "
                  f"{proto.universe_size} states")
    assert ok


# each ring flips the kind and keeps the belief
_TOGGLE = TableProtocol(
    name="toggle",
    beliefs=(0, 0, 1, 1),
    initiators=(False,) * 4,
    idle=(1, 0, 3, 2),
    interact=tuple(tuple((a, b) for b in range(4)) for a in range(4)),
    initial=(0, 2),
    kinds=(1, 2, 1, 2),
)

_STILL = TableProtocol(
    name="still",
    beliefs=(0, 1, 0, 1),
    initiators=(True, True, False, False),
    idle=(0, 1, 2, 3),
    interact=tuple(tuple((a, b) for b in range(4)) for a in range(4)),
    initial=(0, 1),
)


def test_criterion_10_engine_statistics():
    n = 1000
    bits = np.zeros(n, np.int8)
    inst = Instance(n=n, initial_bits=bits, majority_bit=0, advantage_fraction=1.0)
    res = run_async(_TOGGLE.spec(), inst, AsyncSimConfig(seed=2024, horizon=110.0))
    gap = res.end_time / res.events_processed
    gap_ok = res.events_processed >= 100_000 and abs(gap * n - 1) < 0.01

    # many passive recipients, each contested one is a trial
    spec = _STILL.spec()
    pre = np.array([_STILL.code(0)] * 300 + [_STILL.code(2)] * 100, dtype=np.int64)
    rng = np.random.default_rng(99)
    ranks = {2: np.zeros(2, int), 3: np.zeros(3, int)}
    trials = 0
    while trials < 10_000:
        rr = resolve_round(spec, pre, rng)
        suitors = {}
        for i, j in rr.initiator_targets.items():
            suitors.setdefault(j, []).append(i)
        for i, j in rr.established_pairs:
            m = len(suitors[j])
            if m >= 2:
                trials += 1
                if m in ranks:
                    ranks[m][sorted(suitors[j]).index(i)] += 1
    worst = 0.0
    for m, counts in ranks.items():
        tot = counts.sum()
        sd = math.sqrt(tot * (1 / m) * (1 - 1 / m))
        worst = max(worst, float(np.max(np.abs(counts - tot / m)) / sd))
    suitor_ok = worst <= 3

    cfg = ExperimentConfig("simple-async", (64, 128, 256), (0.75,), repetitions=2)
    csv_ok = rows_to_csv(run_sweep(cfg, workers=1)).encode() == rows_to_csv(run_sweep(cfg, workers=2)).encode()
    ok = gap_ok and suitor_ok and csv_ok
    record(10, ok, f"gap*n {gap * n:.4f} over {res.events_processed} events, suitor rank max |z| {worst:.2f} "
                   f"over {trials} contested trials, CSV identical across workers: {csv_ok}")
    assert ok


if __name__ == "__main__":
    code = pytest.main([__file__, "-v", "-p", "no:cacheprovider"])
    sys.exit(code)
