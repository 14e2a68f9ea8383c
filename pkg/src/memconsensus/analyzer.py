"""Reachable-state sets and state classification.

``compute_reachable`` iterates the one-ring reachability recurrence from the
two initial states.  In the asynchronous model the sets grow until a fixed
point; in the synchronous model they need not grow, and the sequence is
followed until it repeats.  Pair products use the protocol's views: the
initiator's new state is computed once per partner view class and the
partner's new state once per initiator view class.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numba as nb
import numpy as np
from numba import types
from numba.typed import Dict

from .core import ProtocolError, ProtocolSpec, belief_of
from .engine_async import SimResult

DEFAULT_MAX_STATES = 4_000_000
REPORT_VERSION = 1


class UniverseTooLarge(ValueError):
    """The state set exceeds the analyzer's size cap."""


def _mode_is_async(protocol: ProtocolSpec, mode: Optional[str]) -> bool:
    if mode is None:
        return not protocol.synchronous
    if mode not in ("async", "sync"):
        raise ValueError(f"mode must be 'async' or 'sync', got {mode!r}")
    return mode == "async"


# ---------------------------------------------------------------------------
# asynchronous recurrence


@nb.njit
def _async_reach(init_codes, prm, is_init, on_init, on_idle, in_univ, pview, iview, cap):
    idx = Dict.empty(key_type=types.int64, value_type=types.int64)
    codes = [np.int64(0) for _ in range(0)]
    level = [np.int64(0) for _ in range(0)]
    init = [False for _ in range(0)]
    sp = [np.int64(0) for _ in range(0)]  # indices of initiator states
    pv_idx = Dict.empty(key_type=types.int64, value_type=types.int64)
    pv_rep = [np.int64(0) for _ in range(0)]
    iv_idx = Dict.empty(key_type=types.int64, value_type=types.int64)
    iv_rep = [np.int64(0) for _ in range(0)]
    iv_lvl = [np.int64(0) for _ in range(0)]

    for c in init_codes:
        if c in idx:
            continue
        if not in_univ(c, prm):
            return np.zeros(0, np.int64), np.zeros(0, np.int64), 1, c, 0
        idx[c] = len(codes)
        codes.append(c)
        level.append(0)
        f = is_init(c, prm)
        init.append(f)
        v = pview(c)
        if v not in pv_idx:
            pv_idx[v] = len(pv_rep)
            pv_rep.append(c)
        if f:
            sp.append(len(codes) - 1)
            w = iview(c)
            if w not in iv_idx:
                iv_idx[w] = len(iv_rep)
                iv_rep.append(c)
                iv_lvl.append(0)

    k = 0
    start = 0
    pv_start = 0
    while True:
        end = len(codes)
        sp_end = len(sp)
        pv_end = len(pv_rep)
        iv_end = len(iv_rep)
        found = [np.int64(0) for _ in range(0)]
        pending = Dict.empty(key_type=types.int64, value_type=types.int64)
        for t in range(sp_end):
            i = sp[t]
            a = codes[i]
            lo = 0 if level[i] == k else pv_start
            for r in range(lo, pv_end):
                c = on_init(a, pv_rep[r], prm)[0]
                if c not in idx and c not in pending:
                    pending[c] = 1
                    found.append(c)
        for q in range(iv_end):
            a = iv_rep[q]
            lo = 0 if iv_lvl[q] == k else start
            for j in range(lo, end):
                c = on_init(a, codes[j], prm)[1]
                if c not in idx and c not in pending:
                    pending[c] = 1
                    found.append(c)
        for i in range(start, end):
            if not init[i]:
                c = on_idle(codes[i], prm)
                if c not in idx and c not in pending:
                    pending[c] = 1
                    found.append(c)
        added = 0
        for c in found:
            if not in_univ(c, prm):
                return np.zeros(0, np.int64), np.zeros(0, np.int64), 1, c, k + 1
            idx[c] = len(codes)
            codes.append(c)
            level.append(k + 1)
            f = is_init(c, prm)
            init.append(f)
            added += 1
            v = pview(c)
            if v not in pv_idx:
                pv_idx[v] = len(pv_rep)
                pv_rep.append(c)
            if f:
                sp.append(len(codes) - 1)
                w = iview(c)
                if w not in iv_idx:
                    iv_idx[w] = len(iv_rep)
                    iv_rep.append(c)
                    iv_lvl.append(k + 1)
            if len(codes) > cap:
                return np.zeros(0, np.int64), np.zeros(0, np.int64), 2, c, k + 1
        if added == 0:
            break
        k += 1
        start = end
        pv_start = pv_end
    out_c = np.empty(len(codes), np.int64)
    out_l = np.empty(len(codes), np.int64)
    for i in range(len(codes)):
        out_c[i] = codes[i]
        out_l[i] = level[i]
    return out_c, out_l, 0, np.int64(0), k


# ---------------------------------------------------------------------------
# synchronous recurrence


@nb.njit
def _sync_step(cur, prm, is_init, on_init, on_idle, on_rej, in_univ, pview, iview, literal):
    """One application of the synchronous recurrence to the sorted set ``cur``."""
    n = cur.shape[0]
    flags = np.empty(n, np.bool_)
    for i in range(n):
        flags[i] = is_init(cur[i], prm)
    # partners: every state when literal, otherwise the states that accept
    pv_seen = Dict.empty(key_type=types.int64, value_type=types.int64)
    pv_rep = [np.int64(0) for _ in range(0)]
    iv_seen = Dict.empty(key_type=types.int64, value_type=types.int64)
    iv_rep = [np.int64(0) for _ in range(0)]
    for i in range(n):
        c = cur[i]
        if literal or not flags[i]:
            v = pview(c)
            if v not in pv_seen:
                pv_seen[v] = 1
                pv_rep.append(c)
        if flags[i]:
            w = iview(c)
            if w not in iv_seen:
                iv_seen[w] = 1
                iv_rep.append(c)
    seen = Dict.empty(key_type=types.int64, value_type=types.int64)
    for i in range(n):
        c = cur[i]
        if flags[i]:
            for r in pv_rep:
                seen[on_init(c, r, prm)[0]] = 1
            seen[on_rej(c, prm)] = 1
            if literal:
                seen[on_idle(c, prm)] = 1
        else:
            seen[on_idle(c, prm)] = 1
    for q in iv_rep:
        for j in range(n):
            if literal or not flags[j]:
                seen[on_init(q, cur[j], prm)[1]] = 1
    found = [np.int64(0) for _ in range(0)]
    for c in seen.keys():
        found.append(c)
    arr = np.empty(len(found), np.int64)
    for i in range(len(found)):
        arr[i] = found[i]
    arr = np.unique(arr)
    for c in arr:
        if not in_univ(c, prm):
            return arr, 1, c
    return arr, 0, np.int64(0)


# ---------------------------------------------------------------------------
# classification kernels over a sorted array of states


@nb.njit
def _initiator_flags(states, prm, is_init):
    out = np.empty(states.shape[0], np.bool_)
    for i in range(states.shape[0]):
        out[i] = is_init(states[i], prm)
    return out


@nb.njit
def _view_reps(states, mask, view):
    seen = Dict.empty(key_type=types.int64, value_type=types.int64)
    reps = [np.int64(0) for _ in range(0)]
    for i in range(states.shape[0]):
        if mask[i]:
            v = view(states[i])
            if v not in seen:
                seen[v] = 1
                reps.append(states[i])
    out = np.empty(len(reps), np.int64)
    for i in range(len(reps)):
        out[i] = reps[i]
    return out


@nb.njit
def _terminal(cands, prm, is_init, on_init, on_idle, iv_reps):
    out = np.zeros(cands.shape[0], np.bool_)
    for i in range(cands.shape[0]):
        s = cands[i]
        if is_init(s, prm) or on_idle(s, prm) != s:
            continue
        ok = True
        for q in iv_reps:
            if on_init(q, s, prm)[1] != s:
                ok = False
                break
        out[i] = ok
    return out


@nb.njit
def _passive(universe, flags, prm, on_idle):
    """Walk the idle map; returns (passive flags, error state or -1)."""
    n = universe.shape[0]
    nxt = np.empty(n, np.int64)
    for i in range(n):
        t = on_idle(universe[i], prm)
        j = np.searchsorted(universe, t)
        if j >= n or universe[j] != t:
            return np.zeros(0, np.bool_), t
        nxt[i] = j
    # 0 unvisited, 1 on the current path, 2 resolved
    color = np.zeros(n, np.int8)
    res = np.zeros(n, np.bool_)
    path = np.empty(n, np.int64)
    for s in range(n):
        if color[s] != 0:
            continue
        plen = 0
        i = s
        while color[i] == 0:
            color[i] = 1
            path[plen] = i
            plen += 1
            i = nxt[i]
        if color[i] == 2:
            val = res[i]
            stop = plen
        else:
            # i lies on a cycle inside the current path
            c0 = 0
            while path[c0] != i:
                c0 += 1
            val = True
            for p in range(c0, plen):
                if flags[path[p]]:
                    val = False
            for p in range(c0, plen):
                res[path[p]] = val
                color[path[p]] = 2
            stop = c0
        for p in range(stop - 1, -1, -1):
            v = path[p]
            val = val and not flags[v]
            res[v] = val
            color[v] = 2
    return res, np.int64(-1)


@nb.njit
def _aware(universe, prm, is_init, on_init, on_idle, on_rej, pview, iview, sync):
    n = universe.shape[0]
    flags = np.empty(n, np.bool_)
    for i in range(n):
        flags[i] = is_init(universe[i], prm)
    partner_ok = np.empty(n, np.bool_)
    for i in range(n):
        partner_ok[i] = (not sync) or (not flags[i])
    pv_reps = _view_reps(universe, partner_ok, pview)
    iv_reps = _view_reps(universe, flags, iview)

    src = [np.int64(0) for _ in range(0)]
    dst = [np.int64(0) for _ in range(0)]
    for i in range(n):
        s = universe[i]
        if flags[i]:
            for r in pv_reps:
                t = on_init(s, r, prm)[0]
                if t != s:
                    src.append(i)
                    dst.append(t)
            if sync:
                t = on_rej(s, prm)
                if t != s:
                    src.append(i)
                    dst.append(t)
        else:
            t = on_idle(s, prm)
            if t != s:
                src.append(i)
                dst.append(t)
        if partner_ok[i]:
            for q in iv_reps:
                t = on_init(q, s, prm)[1]
                if t != s:
                    src.append(i)
                    dst.append(t)
    m = len(src)
    d_idx = np.empty(m, np.int64)
    for e in range(m):
        t = dst[e]
        j = np.searchsorted(universe, t)
        if j >= n or universe[j] != t:
            return np.zeros(0, np.bool_), t
        d_idx[e] = j
    # reverse adjacency in CSR form
    deg = np.zeros(n + 1, np.int64)
    for e in range(m):
        deg[d_idx[e] + 1] += 1
    for i in range(n):
        deg[i + 1] += deg[i]
    fill = deg[:-1].copy()
    rev = np.empty(m, np.int64)
    for e in range(m):
        j = d_idx[e]
        rev[fill[j]] = src[e]
        fill[j] += 1
    reaches = np.zeros((2, n), np.bool_)
    stack = np.empty(n, np.int64)
    for b in range(2):
        top = 0
        for i in range(n):
            if belief_of(universe[i]) == b:
                reaches[b, i] = True
                stack[top] = i
                top += 1
        while top > 0:
            top -= 1
            j = stack[top]
            for p in range(deg[j], deg[j + 1]):
                i = rev[p]
                if not reaches[b, i]:
                    reaches[b, i] = True
                    stack[top] = i
                    top += 1
    out = np.empty(n, np.bool_)
    for i in range(n):
        out[i] = not reaches[1 - belief_of(universe[i]), i]
    return out, np.int64(-1)


# ---------------------------------------------------------------------------
# public API


@dataclass(frozen=True)
class ReachableSets:
    """The sequence ``A(0), A(1), ...`` of reachable-state sets.

    Asynchronous sets are nested, so they are stored once with the index at
    which each state first appears.  Synchronous sets are stored one by one
    up to the first repetition: ``A(period_start + period) == A(period_start)``.
    """

    async_mode: bool
    fixed_point_index: int
    period: int
    _states: np.ndarray = field(repr=False)
    _levels: Optional[np.ndarray] = field(default=None, repr=False)
    _sets: tuple = field(default=(), repr=False)

    def __len__(self) -> int:
        if self.async_mode:
            return self.fixed_point_index + 1
        return len(self._sets)

    def __getitem__(self, k: int) -> frozenset:
        return frozenset(int(x) for x in self.array(k))

    def __iter__(self):
        return (self[k] for k in range(len(self)))

    def array(self, k: int) -> np.ndarray:
        """``A(k)`` as a sorted array; any ``k >= 0`` is accepted."""
        if k < 0:
            raise IndexError(k)
        if self.async_mode:
            return np.sort(self._states[self._levels <= k])
        if k >= len(self._sets):
            k = self.fixed_point_index + (k - self.fixed_point_index) % self.period
        return self._sets[k]

    @property
    def union(self) -> np.ndarray:
        """All states that occur in some ``A(k)``, sorted."""
        return self._states

    @property
    def sizes(self) -> list:
        return [int(self.array(k).shape[0]) for k in range(len(self))]

    def first_index(self, code: int) -> Optional[int]:
        """Smallest ``k`` with ``code`` in ``A(k)``."""
        if self.async_mode:
            hit = np.nonzero(self._states == code)[0]
            if hit.size == 0:
                return None
            return int(self._levels[hit[0]])
        for k, arr in enumerate(self._sets):
            j = np.searchsorted(arr, code)
            if j < arr.shape[0] and arr[j] == code:
                return k
        return None


def _closure_error(protocol: ProtocolSpec, state: int) -> ProtocolError:
    desc = _describe(protocol, state)
    return ProtocolError(f"{protocol.name} maps into state {state} outside its universe: {desc}")


def _describe(protocol: ProtocolSpec, state: int) -> str:
    try:
        return protocol.describe(state)
    except Exception:  # noqa: BLE001 - a foreign code may not decode
        return "undecodable"


def _check_universe_size(protocol: ProtocolSpec, max_states: int) -> None:
    if protocol.universe_size > max_states:
        raise UniverseTooLarge(
            f"{protocol.name}: universe of {protocol.universe_size} states exceeds the cap of "
            f"{max_states}; use a smaller instance or scaled constants"
        )


def compute_reachable(
    protocol: ProtocolSpec,
    mode: Optional[str] = None,
    *,
    max_states: int = DEFAULT_MAX_STATES,
    max_steps: int = 1_000_000,
    round_exact: bool = False,
) -> ReachableSets:
    """Iterate the reachability recurrence from the two initial states.

    ``mode`` defaults to the protocol's own model.  The synchronous step
    applies the idle update to every state, lets any state be a partner and
    adds the rejection image of every initiator.  This over-approximates the
    rounds; ``round_exact=True`` follows them instead: initiators either
    interact with a non-initiator or are rejected, and only non-initiators
    apply the idle update.
    """
    is_async = _mode_is_async(protocol, mode)
    prm = protocol.params
    init = np.array(sorted(set(int(c) for c in protocol.initial_codes)), dtype=np.int64)
    if is_async:
        codes, levels, err, bad, kstar = _async_reach(
            init,
            prm,
            protocol.is_initiator,
            protocol.on_initiate,
            protocol.on_idle,
            protocol.in_universe,
            protocol.partner_view,
            protocol.initiator_view,
            int(max_states),
        )
        if err == 1:
            raise _closure_error(protocol, int(bad))
        if err == 2:
            raise UniverseTooLarge(f"{protocol.name}: more than {max_states} reachable states")
        order = np.argsort(codes)
        return ReachableSets(True, int(kstar), 1, codes[order], levels[order])

    seen: dict = {}
    sets: list = []
    total = 0
    cur = init
    for k in range(max_steps):
        key = cur.tobytes()
        if key in seen:
            j = seen[key]
            union = np.unique(np.concatenate(sets))
            return ReachableSets(False, j, k - j, union, None, tuple(sets))
        seen[key] = k
        sets.append(cur)
        total += cur.shape[0]
        if total > max_states:
            raise UniverseTooLarge(f"{protocol.name}: stored sets exceed {max_states} states")
        cur, err, bad = _sync_step(
            cur,
            prm,
            protocol.is_initiator,
            protocol.on_initiate,
            protocol.on_idle,
            protocol.on_rejected,
            protocol.in_universe,
            protocol.partner_view,
            protocol.initiator_view,
            not round_exact,
        )
        if err:
            raise _closure_error(protocol, int(bad))
    raise UniverseTooLarge(f"{protocol.name}: no repetition within {max_steps} steps")


def _enumerated(protocol: ProtocolSpec, max_states: int) -> np.ndarray:
    _check_universe_size(protocol, max_states)
    return np.unique(np.asarray(protocol.enumerate_universe(), dtype=np.int64))


def _as_sorted(states: Iterable[int]) -> np.ndarray:
    if isinstance(states, np.ndarray):
        return np.unique(states.astype(np.int64))
    return np.unique(np.fromiter((int(s) for s in states), dtype=np.int64))


def classify_terminal(
    protocol: ProtocolSpec,
    states: Optional[Iterable[int]] = None,
    *,
    max_states: int = DEFAULT_MAX_STATES,
) -> frozenset:
    """States that never initiate and never change, whether idle or contacted.

    Contacts are quantified over every initiator of the enumerated universe;
    ``states`` restricts which states are tested (default: all).
    """
    universe = _enumerated(protocol, max_states)
    prm = protocol.params
    flags = _initiator_flags(universe, prm, protocol.is_initiator)
    iv_reps = _view_reps(universe, flags, protocol.initiator_view)
    cands = universe if states is None else _as_sorted(states)
    hit = _terminal(cands, prm, protocol.is_initiator, protocol.on_initiate, protocol.on_idle, iv_reps)
    return frozenset(int(x) for x in cands[hit])


def classify_passive(
    protocol: ProtocolSpec,
    states: Optional[Iterable[int]] = None,
    *,
    max_states: int = DEFAULT_MAX_STATES,
) -> frozenset:
    """States whose orbit under the idle update never reaches an initiator."""
    universe = _enumerated(protocol, max_states)
    prm = protocol.params
    flags = _initiator_flags(universe, prm, protocol.is_initiator)
    res, bad = _passive(universe, flags, prm, protocol.on_idle)
    if bad != -1:
        raise _closure_error(protocol, int(bad))
    passive = universe[res]
    if states is not None:
        passive = np.intersect1d(passive, _as_sorted(states))
    return frozenset(int(x) for x in passive)


def classify_aware(
    protocol: ProtocolSpec,
    universe: Iterable[int],
    mode: Optional[str] = None,
) -> frozenset:
    """States all of whose successors within ``universe`` keep the same belief.

    ``universe`` must be closed under the model's transitions, as the union
    of the reachable sets is.
    """
    is_async = _mode_is_async(protocol, mode)
    arr = _as_sorted(universe)
    out, bad = _aware(
        arr,
        protocol.params,
        protocol.is_initiator,
        protocol.on_initiate,
        protocol.on_idle,
        protocol.on_rejected,
        protocol.partner_view,
        protocol.initiator_view,
        not is_async,
    )
    if bad != -1:
        raise ProtocolError(
            f"{protocol.name}: state {int(bad)} ({_describe(protocol, int(bad))}) is reachable "
            "but lies outside the given universe"
        )
    return frozenset(int(x) for x in arr[out])


def frequency_histogram(result: SimResult, times: Sequence[float]) -> list:
    """Exact per-state node counts at each requested snapshot time."""
    available = list(result.snapshot_times)
    out = []
    for t in times:
        if t > result.end_time and not any(abs(t - a) < 1e-12 for a in available):
            raise ValueError(f"time {t} lies beyond the simulated trace (end {result.end_time})")
        k = next((i for i, a in enumerate(available) if abs(a - t) < 1e-12), None)
        if k is None:
            raise ValueError(f"no snapshot recorded at time {t}; snapshots exist at {available}")
        codes, counts = np.unique(result.snapshots[k], return_counts=True)
        out.append({int(c): int(m) for c, m in zip(codes, counts)})
    return out


@dataclass(frozen=True)
class StateSetReport:
    protocol: str
    a_sequence: ReachableSets
    terminal_states: frozenset
    passive_states: frozenset
    aware_states: frozenset

    @property
    def async_mode(self) -> bool:
        return self.a_sequence.async_mode

    @property
    def fixed_point_index(self) -> int:
        return self.a_sequence.fixed_point_index

    def to_dict(self, protocol: Optional[ProtocolSpec] = None) -> dict:
        """JSON-ready form; ``protocol`` adds a readable decoding per state."""
        seq = self.a_sequence
        states = {}
        for code in seq.union:
            c = int(code)
            entry = {
                "belief": int(belief_of(np.int64(c))),
                "first_index": seq.first_index(c),
                "terminal": c in self.terminal_states,
                "passive": c in self.passive_states,
                "aware": c in self.aware_states,
            }
            if protocol is not None:
                entry["decoded"] = list(protocol.decode(c))
            states[str(c)] = entry
        return {
            "version": REPORT_VERSION,
            "protocol": self.protocol,
            "async_mode": seq.async_mode,
            "fixed_point_index": seq.fixed_point_index,
            "period": seq.period,
            "a_sizes": seq.sizes,
            "counts": {
                "reachable": int(seq.union.shape[0]),
                "terminal": len(self.terminal_states),
                "passive": len(self.passive_states),
                "aware": len(self.aware_states),
            },
            "states": states,
        }

    def to_json(self, protocol: Optional[ProtocolSpec] = None, **kw) -> str:
        return json.dumps(self.to_dict(protocol), **kw)


def analyze(
    protocol: ProtocolSpec,
    mode: Optional[str] = None,
    *,
    max_states: int = DEFAULT_MAX_STATES,
    round_exact: bool = False,
) -> StateSetReport:
    """Reachable sets plus classifications restricted to the reachable states."""
    seq = compute_reachable(protocol, mode, max_states=max_states, round_exact=round_exact)
    reach = seq.union
    terminal = classify_terminal(protocol, reach, max_states=max_states)
    passive = classify_passive(protocol, reach, max_states=max_states)
    aware = classify_aware(protocol, reach, mode)
    return StateSetReport(protocol.name, seq, terminal, passive, aware)


__all__ = [
    "DEFAULT_MAX_STATES",
    "ReachableSets",
    "StateSetReport",
    "UniverseTooLarge",
    "analyze",
    "classify_aware",
    "classify_passive",
    "classify_terminal",
    "compute_reachable",
    "frequency_histogram",
]
