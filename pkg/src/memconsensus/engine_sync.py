"""Round-based simulation of the synchronous model.

Every round all initiators pick a uniform target other than themselves.  A
target that initiates itself rejects all its suitors; any other target
accepts exactly one suitor chosen uniformly.  Each initiator pays one unit
whether or not its communication is established.  All updates read the
pre-round states and are committed together.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numba as nb
import numpy as np

from .core import Instance, ProtocolError, ProtocolSpec
from .engine_async import CACHE_MASK, CACHE_MUL, NKINDS, SimResult, _finish, _safe_decode, _seed_rng


@dataclass(frozen=True)
class SyncSimConfig:
    seed: int | np.random.SeedSequence = 0
    horizon: Optional[int] = None  # rounds; None: the protocol's default
    audit: bool = False
    snapshot_times: Sequence[int] = ()
    stop_when_correct: bool = False
    check_universe: bool = True

    def __post_init__(self):
        if self.horizon is not None and not self.horizon > 0:
            raise ValueError("horizon must be positive")


@dataclass(frozen=True)
class RoundResolution:
    initiator_targets: dict
    established_pairs: frozenset
    rejected_initiators: frozenset
    idle_nodes: frozenset

    @property
    def cost(self) -> int:
        return len(self.initiator_targets)


@nb.njit
def _resolve(pre, prm, is_init, rng, target, winner, flag, suitors):
    """Fill ``target`` (-1 for non-initiators) and ``winner`` (-1 if none).

    ``flag`` and ``suitors`` are scratch arrays of length n.  Returns the
    number of initiators.  Random draws: one per initiator in ascending
    order, then one per contested recipient in ascending order.
    """
    n = pre.shape[0]
    n_init = 0
    for i in range(n):
        flag[i] = 1 if is_init(pre[i], prm) else 0
        n_init += flag[i]
        suitors[i] = 0
        winner[i] = -1
        target[i] = -1
    if n_init == 0:
        return 0
    u = rng.random(n_init)
    k = 0
    for i in range(n):
        if flag[i]:
            r = int(u[k] * (n - 1))
            k += 1
            if r >= n - 1:
                r = n - 2
            j = r + 1 if r >= i else r
            target[i] = j
            if not flag[j]:
                suitors[j] += 1
    contested = 0
    for j in range(n):
        if suitors[j] >= 2:
            contested += 1
    v = rng.random(contested)
    # pick the winner's rank among its suitors (in ascending initiator order)
    k = 0
    for j in range(n):
        if suitors[j] >= 2:
            winner[j] = int(v[k] * suitors[j])
            if winner[j] >= suitors[j]:
                winner[j] = suitors[j] - 1
            k += 1
        elif suitors[j] == 1:
            winner[j] = 0
    # translate ranks into initiator ids; suitors[] becomes a running rank
    for j in range(n):
        suitors[j] = 0
    for i in range(n):
        j = target[i]
        if j >= 0 and not flag[j]:
            if suitors[j] == winner[j]:
                winner[j] = -2 - i  # marked: resolved to initiator i
            suitors[j] += 1
    for j in range(n):
        if winner[j] <= -2:
            winner[j] = -2 - winner[j]
        else:
            winner[j] = -1
    return n_init


@nb.njit
def _kernel(
    states,
    prm,
    is_init,
    on_init,
    on_idle,
    on_rej,
    in_univ,
    term_hint,
    rng,
    horizon,
    majority,
    audit,
    snap_times,
    stop_when_correct,
    check,
):
    n = states.shape[0]
    pre = states.copy()
    target = np.empty(n, np.int64)
    winner = np.empty(n, np.int64)
    flag = np.empty(n, np.int64)
    suitors = np.empty(n, np.int64)
    role = np.empty(n, np.int8)  # 0 idle, 1 established initiator, 2 rejected, 3 recipient

    kind_count = np.zeros(NKINDS, np.int64)
    per_kind_comm = np.zeros(NKINDS, np.int64)
    trans = np.zeros((NKINDS, NKINDS), np.int64)
    first_tenth = np.full(NKINDS, np.inf)
    first_init = np.full(NKINDS, np.inf)
    tenth = (n + 9) // 10
    memo_code = np.full(CACHE_MASK + 1, -1, np.int64)
    memo_term = np.zeros(CACHE_MASK + 1, np.bool_)
    incorrect = 0
    n_term = 0
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
    for k in range(NKINDS):
        if kind_count[k] >= tenth:
            first_tenth[k] = 0.0

    observed = set()
    if audit:
        for i in range(n):
            observed.add(states[i])
    log_rows = []
    n_snap = snap_times.shape[0]
    snaps = np.zeros((n_snap, n), np.int64)
    snap_i = 0
    while snap_i < n_snap and snap_times[snap_i] <= 0:
        snaps[snap_i, :] = states
        snap_i += 1

    t = 0
    comm = 0
    events = 0
    t_cons = 0.0 if incorrect == 0 else np.inf
    comm_cons = 0
    t_term = 0.0 if n_term == n else np.inf
    comm_term = 0
    err = 0
    err_state = np.int64(0)
    done = n_term == n or (stop_when_correct and incorrect == 0)

    while not done and t < horizon:
        t += 1
        for i in range(n):
            pre[i] = states[i]
        n_init = _resolve(pre, prm, is_init, rng, target, winner, flag, suitors)
        comm += n_init
        events += n
        for i in range(n):
            role[i] = 0
        for j in range(n):
            if winner[j] >= 0:
                role[winner[j]] = 1
                role[j] = 3
        for i in range(n):
            if target[i] >= 0:
                ka = pre[i] & 7
                per_kind_comm[ka] += 1
                if first_init[ka] == np.inf:
                    first_init[ka] = t
                if role[i] == 0:
                    role[i] = 2
        # compute every post-state from pre-states, then commit
        for i in range(n):
            r = role[i]
            if r == 0:
                states[i] = on_idle(pre[i], prm)
            elif r == 2:
                states[i] = on_rej(pre[i], prm)
            elif r == 1:
                j = target[i]
                na, nb_ = on_init(pre[i], pre[j], prm)
                states[i] = na
                states[j] = nb_
        for i in range(n):
            old = pre[i]
            new = states[i]
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
            ko = old & 7
            kn = new & 7
            if ko != kn:
                kind_count[ko] -= 1
                kind_count[kn] += 1
                trans[ko, kn] += 1
                if kind_count[kn] >= tenth and first_tenth[kn] == np.inf:
                    first_tenth[kn] = t
                if audit:
                    partner = -1
                    if role[i] == 1:
                        partner = target[i]
                    elif role[i] == 3:
                        partner = winner[i]
                    log_rows.append((float(t), float(i), float(old), float(new), float(partner)))
            wo = ((old >> 3) & 1) != majority
            wn = ((new >> 3) & 1) != majority
            if wo != wn:
                if wn:
                    incorrect += 1
                    t_cons = np.inf
                else:
                    incorrect -= 1
            to = term_hint(old, prm)
            if to != tn:
                n_term += 1 if tn else -1
            if audit:
                observed.add(new)
        if err:
            break
        if incorrect == 0 and t_cons == np.inf:
            t_cons = float(t)
            comm_cons = comm
        while snap_i < n_snap and snap_times[snap_i] <= t:
            snaps[snap_i, :] = states
            snap_i += 1
        if n_term == n:
            t_term = float(t)
            comm_term = comm
            done = True
        if stop_when_correct and incorrect == 0:
            done = True

    while snap_i < n_snap and (snap_times[snap_i] <= horizon or done):
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
    return (float(t), events, comm, t_cons, comm_cons, t_term, comm_term, err, err_state,
            per_kind_comm, trans, first_tenth, first_init, snaps[:snap_i], obs, logs)


def resolve_round(protocol: ProtocolSpec, pre_states: np.ndarray, rng: np.random.Generator) -> RoundResolution:
    """Collision resolution of one round, without applying any update."""
    pre = np.ascontiguousarray(pre_states, dtype=np.int64)
    n = pre.shape[0]
    target = np.empty(n, np.int64)
    winner = np.empty(n, np.int64)
    flag = np.empty(n, np.int64)
    suitors = np.empty(n, np.int64)
    _resolve(pre, protocol.params, protocol.is_initiator, rng, target, winner, flag, suitors)
    targets = {i: int(target[i]) for i in range(n) if target[i] >= 0}
    pairs = frozenset((int(winner[j]), j) for j in range(n) if winner[j] >= 0)
    est = {i for i, _ in pairs}
    recipients = {j for _, j in pairs}
    rejected = frozenset(i for i in targets if i not in est)
    idle = frozenset(i for i in range(n) if i not in targets and i not in recipients)
    return RoundResolution(targets, pairs, rejected, idle)


def run_sync(protocol: ProtocolSpec, instance: Instance, config: SyncSimConfig = SyncSimConfig()) -> SimResult:
    horizon = config.horizon
    if horizon is None:
        horizon = protocol.default_horizon
    if horizon is None:
        horizon = 20 * math.ceil(math.log2(instance.n))
    states = protocol.initial_states_for(instance.initial_bits).copy()
    snap_times = np.sort(np.asarray(config.snapshot_times, dtype=np.float64))
    rng = _seed_rng(config.seed)
    out = _kernel(
        states,
        protocol.params,
        protocol.is_initiator,
        protocol.on_initiate,
        protocol.on_idle,
        protocol.on_rejected,
        protocol.in_universe,
        protocol.terminal_hint,
        rng,
        int(horizon),
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
