"""Event-driven simulation of the asynchronous (Poisson clock) model.

The n unit-rate clocks are realized by superposition: the gap to the next
ring is exponential with rate equal to the number of active nodes and the
ringing node is uniform among them.  Nodes whose state the protocol marks
terminal can be dropped from the active set, since their rings change
nothing.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numba as nb
import numpy as np

from .core import Instance, ProtocolError, ProtocolSpec

BLOCK = 4096
NKINDS = 8
CACHE_MASK = (1 << 14) - 1
CACHE_MUL = 0x9E3779B97F4A7C15 - (1 << 64)


@dataclass(frozen=True)
class AsyncSimConfig:
    seed: int | np.random.SeedSequence = 0
    horizon: Optional[float] = None  # None: the protocol's default horizon
    suppress_terminal_rings: bool = True
    audit: bool = False  # record observed states and kind-changing events
    snapshot_times: Sequence[float] = ()
    stop_when_correct: bool = False  # for protocols whose correct configuration is absorbing
    check_universe: bool = True

    def __post_init__(self):
        if self.horizon is not None and not self.horizon > 0:
            raise ValueError("horizon must be positive")


@dataclass
class SimResult:
    n: int
    majority_bit: int
    communications_total: int
    consensus_time: float  # inf when censored
    terminal_time: float  # inf when censored
    communications_at_consensus: Optional[int]
    communications_at_terminal: Optional[int]
    final_incorrect_count: int
    per_type_comm_counts: dict
    kind_transitions: np.ndarray
    events_processed: int
    end_time: float
    all_terminal: bool
    first_tenth_time: dict
    first_initiation_time: dict
    final_states: np.ndarray
    states_observed: Optional[np.ndarray] = None
    event_log: Optional[np.ndarray] = None  # rows: time, node, old, new, partner (or -1)
    snapshots: Optional[np.ndarray] = None
    snapshot_times: tuple = ()
    kind_names: dict = field(default_factory=dict)

    @property
    def consensus_censored(self) -> bool:
        return not math.isfinite(self.consensus_time)

    @property
    def terminal_censored(self) -> bool:
        return not math.isfinite(self.terminal_time)

    @property
    def success(self) -> bool:
        """Terminal consensus on the majority bit."""
        return self.all_terminal and self.final_incorrect_count == 0

    def expert_count(self, source: int = 1, target: int = 2) -> int:
        return int(self.kind_transitions[source, target])


# ---------------------------------------------------------------------------


@dataclass
class EventQueue:
    """Superposed clocks of the active nodes; time only moves forward."""

    active: list
    time: float = 0.0


def next_event(queue: EventQueue, rng: np.random.Generator) -> tuple:
    k = len(queue.active)
    if k == 0:
        raise ValueError("no active node")
    queue.time += rng.standard_exponential() / k
    node = queue.active[min(int(rng.random() * k), k - 1)]
    return queue.time, node


# ---------------------------------------------------------------------------


@nb.njit
def _kernel(
    states,
    prm,
    is_init,
    on_init,
    on_idle,
    in_univ,
    term_hint,
    rng,
    horizon,
    suppress,
    majority,
    audit,
    snap_times,
    stop_when_correct,
    check,
):
    n = states.shape[0]
    active = np.arange(n)
    pos = np.arange(n)
    n_active = n
    kind_count = np.zeros(NKINDS, np.int64)
    per_kind_comm = np.zeros(NKINDS, np.int64)
    trans = np.zeros((NKINDS, NKINDS), np.int64)
    first_tenth = np.full(NKINDS, np.inf)
    first_init = np.full(NKINDS, np.inf)
    tenth = (n + 9) // 10
    incorrect = 0
    n_term = 0
    is_term = np.zeros(n, np.bool_)
    # direct-mapped memo of codes already checked against the universe,
    # together with their terminal flag
    memo_code = np.full(CACHE_MASK + 1, -1, np.int64)
    memo_term = np.zeros(CACHE_MASK + 1, np.bool_)
    for i in range(n):
        s = states[i]
        if check and not in_univ(s, prm):
            return (0.0, 0, 0, 0.0, 0, 0.0, 0, 1, s, per_kind_comm, trans, first_tenth,
                    first_init, np.zeros((0, n), np.int64), np.zeros(0, np.int64),
                    np.zeros((0, 5), np.float64))
        kind_count[s & 7] += 1
        if ((s >> 3) & 1) != majority:
            incorrect += 1
        if term_hint(s, prm):
            n_term += 1
            is_term[i] = True
    for k in range(NKINDS):
        if kind_count[k] >= tenth:
            first_tenth[k] = 0.0
    if suppress:
        n_active = 0
        for i in range(n):
            if not term_hint(states[i], prm):
                active[n_active] = i
                n_active += 1
        k = n_active
        for i in range(n):
            if term_hint(states[i], prm):
                active[k] = i
                k += 1
        for i in range(n):
            pos[active[i]] = i

    observed = set()
    if audit:
        for i in range(n):
            observed.add(states[i])
    log_rows = []

    n_snap = snap_times.shape[0]
    snaps = np.zeros((n_snap, n), np.int64)
    snap_i = 0

    t = 0.0
    comm = 0
    events = 0
    t_cons = 0.0 if incorrect == 0 else np.inf
    comm_cons = 0
    t_term = 0.0 if n_term == n else np.inf
    comm_term = 0
    ebuf = rng.standard_exponential(BLOCK)
    ubuf = rng.random(2 * BLOCK)
    ei = 0
    ui = 0
    err = 0
    err_state = np.int64(0)
    done = n_term == n or (stop_when_correct and incorrect == 0)

    while not done and n_active > 0:
        if ei == BLOCK:
            ebuf = rng.standard_exponential(BLOCK)
            ei = 0
        t_next = t + ebuf[ei] / n_active
        ei += 1
        if t_next > horizon:
            break
        while snap_i < n_snap and snap_times[snap_i] < t_next:
            snaps[snap_i, :] = states
            snap_i += 1
        t = t_next
        events += 1
        if ui + 2 > 2 * BLOCK:
            ubuf = rng.random(2 * BLOCK)
            ui = 0
        r = int(ubuf[ui] * n_active)
        ui += 1
        if r >= n_active:
            r = n_active - 1
        i = active[r]
        a = states[i]
        if is_init(a, prm):
            r2 = int(ubuf[ui] * (n - 1))
            ui += 1
            if r2 >= n - 1:
                r2 = n - 2
            j = r2 + 1 if r2 >= i else r2
            b = states[j]
            na, nb_ = on_init(a, b, prm)
            comm += 1
            ka = a & 7
            per_kind_comm[ka] += 1
            if first_init[ka] == np.inf:
                first_init[ka] = t
            m = 2
        else:
            j = -1
            b = np.int64(0)
            na = on_idle(a, prm)
            nb_ = b
            m = 1
        for side in range(m):
            if side == 0:
                node = i
                old = a
                new = na
            else:
                node = j
                old = b
                new = nb_
            if new == old:
                continue
            h = ((new * CACHE_MUL) >> 40) & CACHE_MASK
            if memo_code[h] == new:
                tn = memo_term[h]
            else:
                if check and not in_univ(new, prm):
                    err = 1
                    err_state = new
                    done = True
                    break
                tn = term_hint(new, prm)
                memo_code[h] = new
                memo_term[h] = tn
            states[node] = new
            if (old ^ new) & 15:
                ko = old & 7
                kn = new & 7
                if ko != kn:
                    kind_count[ko] -= 1
                    kind_count[kn] += 1
                    trans[ko, kn] += 1
                    if kind_count[kn] >= tenth and first_tenth[kn] == np.inf:
                        first_tenth[kn] = t
                    if audit:
                        log_rows.append((t, float(node), float(old), float(new), float(j if side == 0 else i)))
                wo = ((old >> 3) & 1) != majority
                wn = ((new >> 3) & 1) != majority
                if wo != wn:
                    if wn:
                        incorrect += 1
                        t_cons = np.inf
                    else:
                        incorrect -= 1
                        if incorrect == 0:
                            t_cons = t
                            comm_cons = comm
            if tn != is_term[node]:
                is_term[node] = tn
                if tn:
                    n_term += 1
                    if suppress:
                        p = pos[node]
                        n_active -= 1
                        last = active[n_active]
                        active[p] = last
                        pos[last] = p
                        active[n_active] = node
                        pos[node] = n_active
                else:
                    n_term -= 1
                    if suppress:
                        # a protocol may in principle leave a terminal-hinted state
                        p = pos[node]
                        other = active[n_active]
                        active[p] = other
                        pos[other] = p
                        active[n_active] = node
                        pos[node] = n_active
                        n_active += 1
            if audit:
                observed.add(new)
        if n_term == n:
            t_term = t
            comm_term = comm
            done = True
        if stop_when_correct and incorrect == 0:
            done = True

    while snap_i < n_snap and (snap_times[snap_i] <= horizon or done or n_active == 0):
        snaps[snap_i, :] = states
        snap_i += 1
    obs = np.empty(len(observed), np.int64)
    k = 0
    for s in observed:
        obs[k] = s
        k += 1
    logs = np.empty((len(log_rows), 5), np.float64)
    for k in range(len(log_rows)):
        row = log_rows[k]
        logs[k, 0] = row[0]
        logs[k, 1] = row[1]
        logs[k, 2] = row[2]
        logs[k, 3] = row[3]
        logs[k, 4] = row[4]
    return (t, events, comm, t_cons, comm_cons, t_term, comm_term, err, err_state,
            per_kind_comm, trans, first_tenth, first_init, snaps[:snap_i], obs, logs)


def _kind_dict(arr: np.ndarray, names: dict, *, as_int: bool) -> dict:
    out = {}
    for k, name in names.items():
        v = arr[k]
        out[name] = int(v) if as_int else (float(v) if math.isfinite(v) else None)
    return out


def _seed_rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def run_async(protocol: ProtocolSpec, instance: Instance, config: AsyncSimConfig = AsyncSimConfig()) -> SimResult:
    if protocol.synchronous:
        raise ValueError(f"{protocol.name} is a synchronous protocol; use run_sync")
    horizon = config.horizon
    if horizon is None:
        horizon = protocol.default_horizon
    if horizon is None:
        horizon = 20.0 * math.log2(instance.n)
    states = protocol.initial_states_for(instance.initial_bits).copy()
    snap_times = np.sort(np.asarray(config.snapshot_times, dtype=np.float64))
    rng = _seed_rng(config.seed)
    out = _kernel(
        states,
        protocol.params,
        protocol.is_initiator,
        protocol.on_initiate,
        protocol.on_idle,
        protocol.in_universe,
        protocol.terminal_hint,
        rng,
        float(horizon),
        bool(config.suppress_terminal_rings),
        int(instance.majority_bit),
        bool(config.audit),
        snap_times,
        bool(config.stop_when_correct),
        bool(config.check_universe),
    )
    (t, events, comm, t_cons, comm_cons, t_term, comm_term, err, err_state,
     per_kind, trans, first_tenth, first_init, snaps, obs, logs) = out
    if err:
        raise ProtocolError(
            f"{protocol.name} produced state {int(err_state)} outside its universe: "
            f"{_safe_decode(protocol, int(err_state))}"
        )
    return _finish(protocol, instance, states, t, events, comm, t_cons, comm_cons, t_term,
                   comm_term, per_kind, trans, first_tenth, first_init, snaps, obs, logs,
                   tuple(float(x) for x in snap_times[: len(snaps)]), config.audit)


def _safe_decode(protocol: ProtocolSpec, code: int) -> str:
    try:
        return protocol.describe(code)
    except Exception:  # decoding garbage is best effort
        return "<undecodable>"


def _finish(protocol, instance, states, t, events, comm, t_cons, comm_cons, t_term, comm_term,
            per_kind, trans, first_tenth, first_init, snaps, obs, logs, snap_times, audit) -> SimResult:
    beliefs = (states >> 3) & 1
    incorrect = int((beliefs != instance.majority_bit).sum())
    all_terminal = bool(math.isfinite(t_term))
    # consensus is only decidable retrospectively; an unfinished run that
    # ends with wrong beliefs leaves it censored
    if incorrect != 0:
        t_cons = math.inf
    names = dict(protocol.kind_names)
    return SimResult(
        n=instance.n,
        majority_bit=instance.majority_bit,
        communications_total=int(comm),
        consensus_time=float(t_cons),
        terminal_time=float(t_term),
        communications_at_consensus=int(comm_cons) if math.isfinite(t_cons) else None,
        communications_at_terminal=int(comm_term) if all_terminal else None,
        final_incorrect_count=incorrect,
        per_type_comm_counts=_kind_dict(per_kind, names, as_int=True),
        kind_transitions=trans,
        events_processed=int(events),
        end_time=float(t),
        all_terminal=all_terminal,
        first_tenth_time=_kind_dict(first_tenth, names, as_int=False),
        first_initiation_time=_kind_dict(first_init, names, as_int=False),
        final_states=states,
        states_observed=np.sort(obs) if audit else None,
        event_log=logs if audit else None,
        snapshots=snaps if len(snap_times) else None,
        snapshot_times=snap_times,
        kind_names=names,
    )
