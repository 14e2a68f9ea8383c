"""Six-type synchronous protocol with O((log log n)^2) states.

Rounds are global integer steps.  An aspirant's counter ``d`` equals the
current step throughout expert selection:

* steps 1-2: belief-0 aspirants initiate; the rejected/established outcome
  of the two attempts leaves a fair test bit ``b'`` in {0, 1} or erases it;
* steps 3-4: the same for belief-1 aspirants;
* steps 5..D-1: undecided aspirants whose belief matches the step parity
  (even -> 0, odd -> 1) poll one test bit; K zeros before the first one
  marks a future expert;
* step D: future experts become level-0 experts, everyone else regular.

Estimation round m (length 2K+3): level m-1 experts contact a node at each of
the relative steps 1, 2 and 3 (candidate creation, second bit, completion by
majority of three), then new level m experts double for 2K steps.  Level M
experts turn informed at the end of round M.  Informed nodes push until
their push is rejected or hits a terminal node; regular nodes pull every
3MK steps.

A contacted node that receives no information performs its ordinary
per-step update (its counter keeps ticking), so every counter stays in
lockstep with the global clock.

Encoding (bit offsets)::

    0-2 type   3 belief
    aspirant  (1): 4-7 eta+1   8-31 d   32-39 d'   40-41 b'+1
    expert    (2): 4-11 m      12-27 d
    regular   (3): 4-27 d
    terminal  (4): -
    candidate (5): 4-5 b'+1
    informed  (6): -
"""
from __future__ import annotations

import numba as nb
import numpy as np

from ..core import ParamSet, ProtocolSpec, belief_of, get_field, kind_of, majority3

ASPIRANT, EXPERT, REGULAR, TERMINAL, CANDIDATE, INFORMED = 1, 2, 3, 4, 5, 6
KIND_NAMES = {
    ASPIRANT: "aspirant",
    EXPERT: "expert",
    REGULAR: "regular",
    TERMINAL: "terminal",
    CANDIDATE: "candidate",
    INFORMED: "informed",
}

P_K, P_M, P_D, P_PULL, P_KS = 0, 1, 2, 3, 4


@nb.njit(inline="always")
def aspirant(eta, d, dp, bp, b):
    return ASPIRANT | (b << 3) | ((eta + 1) << 4) | (d << 8) | (dp << 32) | ((bp + 1) << 40)


@nb.njit(inline="always")
def expert(m, d, b):
    return EXPERT | (b << 3) | (m << 4) | (d << 12)


@nb.njit(inline="always")
def regular(d, b):
    return REGULAR | (b << 3) | (d << 4)


@nb.njit(inline="always")
def terminal(b):
    return TERMINAL | (b << 3)


@nb.njit(inline="always")
def candidate(bp, b):
    return CANDIDATE | (b << 3) | ((bp + 1) << 4)


@nb.njit(inline="always")
def informed(b):
    return INFORMED | (b << 3)


@nb.njit(inline="always")
def _asp_fields(s):
    return (
        get_field(s, 4, 4) - 1,
        get_field(s, 8, 24),
        get_field(s, 32, 8),
        get_field(s, 40, 2) - 1,
        belief_of(s),
    )


@nb.njit(inline="always")
def _contact_step(m, d, K):
    """Relative step (1..3) at which an expert contacts candidates, else 0."""
    if m == 0:
        return d if d <= 3 else 0
    if d > 2 * K:
        return d - 2 * K
    return 0


@nb.njit
def is_initiator(s, prm):
    k = kind_of(s)
    K, M, D = prm[P_K], prm[P_M], prm[P_D]
    if k == ASPIRANT:
        eta, d, dp, bp, b = _asp_fields(s)
        if d <= 2:
            return b == 0
        if d <= 4:
            return b == 1
        if d >= D:
            return False
        return b == (d & 1) and eta == -1 and dp < prm[P_KS]
    if k == EXPERT:
        m = get_field(s, 4, 8)
        d = get_field(s, 12, 16)
        if m == 0:
            return d <= 3
        if m == M:
            return d <= 2 * K
        return True
    if k == REGULAR:
        return get_field(s, 4, 24) == prm[P_PULL]
    return k == INFORMED


@nb.njit
def _expert_advance(s, prm):
    """Own post-step state of an initiating expert, whatever the outcome."""
    K, M = prm[P_K], prm[P_M]
    m = get_field(s, 4, 8)
    d = get_field(s, 12, 16)
    b = belief_of(s)
    c = _contact_step(m, d, K)
    if c == 3:
        return regular(1, b)
    if c == 0 and m == M and d == 2 * K:
        return informed(b)
    return expert(m, d + 1, b)


@nb.njit
def on_idle(s, prm):
    k = kind_of(s)
    b = belief_of(s)
    M, D = prm[P_M], prm[P_D]
    if k == ASPIRANT:
        eta, d, dp, bp, _ = _asp_fields(s)
        if d >= D:
            if eta == 2:
                return expert(0, 1, b)
            return regular(1, b)
        if d >= 5 and eta == -1 and dp == prm[P_KS] and b == (d & 1):
            eta = 2
        return aspirant(eta, d + 1, dp, bp, b)
    if k == REGULAR:
        d = get_field(s, 4, 24)
        if d < prm[P_PULL]:
            return regular(d + 1, b)
        return s
    if k == CANDIDATE:
        return regular(1, b)
    if k == EXPERT:
        # only unreachable expert states are non-initiating
        m = get_field(s, 4, 8)
        if m == M:
            return informed(b)
        return regular(1, b)
    return s


@nb.njit
def on_rejected(s, prm):
    k = kind_of(s)
    b = belief_of(s)
    if k == ASPIRANT:
        eta, d, dp, bp, _ = _asp_fields(s)
        if d == 1 or d == 3:
            bp = 0
        elif d == 2 or d == 4:
            if bp != 1:
                bp = -1
        return aspirant(eta, d + 1, dp, bp, b)
    if k == EXPERT:
        return _expert_advance(s, prm)
    if k == REGULAR:
        return regular(1, b)
    if k == INFORMED:
        return terminal(b)
    return s


@nb.njit
def on_initiate(a, b, prm):
    k = kind_of(a)
    mine = belief_of(a)
    K = prm[P_K]
    if k == ASPIRANT:
        eta, d, dp, bp, _ = _asp_fields(a)
        if d == 1 or d == 3:
            bp = 1
        elif d == 2 or d == 4:
            if bp != 0:
                bp = -1
        elif kind_of(b) == ASPIRANT:
            other = get_field(b, 40, 2) - 1
            if other == 0:
                dp += 1
            elif other == 1:
                eta = 3
        return aspirant(eta, d + 1, dp, bp, mine), on_idle(b, prm)
    if k == EXPERT:
        m = get_field(a, 4, 8)
        d = get_field(a, 12, 16)
        c = _contact_step(m, d, K)
        new_a = _expert_advance(a, prm)
        kb = kind_of(b)
        if c == 1:
            if kb == REGULAR or kb == CANDIDATE:
                return new_a, candidate(-1, mine)
        elif c == 2:
            if kb == CANDIDATE:
                return new_a, candidate(mine, belief_of(b))
        elif c == 3:
            if kb == CANDIDATE:
                bp = get_field(b, 4, 2) - 1
                if bp != -1:
                    return new_a, expert(m + 1, 1, majority3(belief_of(b), bp, mine))
        elif kb == REGULAR:
            # rumour doubling: the contacted node becomes a copy
            return new_a, new_a
        return new_a, on_idle(b, prm)
    if k == REGULAR:
        if kind_of(b) == TERMINAL:
            return b, b
        return regular(1, mine), on_idle(b, prm)
    if k == INFORMED:
        if kind_of(b) == TERMINAL:
            return terminal(mine), b
        return a, informed(mine)
    return a, b


@nb.njit
def in_universe(s, prm):
    k = kind_of(s)
    K, M, D = prm[P_K], prm[P_M], prm[P_D]
    if k == ASPIRANT:
        eta, d, dp, bp, _ = _asp_fields(s)
        return -1 <= eta <= 6 and 1 <= d <= D and 0 <= dp <= prm[P_KS] and bp <= 1 and (s >> 42) == 0
    if k == EXPERT:
        m = get_field(s, 4, 8)
        d = get_field(s, 12, 16)
        return m <= M and 1 <= d <= 2 * K + 3 and (s >> 28) == 0
    if k == REGULAR:
        d = get_field(s, 4, 24)
        return 1 <= d <= prm[P_PULL] and (s >> 28) == 0
    if k == CANDIDATE:
        return get_field(s, 4, 2) <= 2 and (s >> 6) == 0
    if k == TERMINAL or k == INFORMED:
        return (s >> 4) == 0
    return False


@nb.njit
def terminal_hint(s, prm):
    return kind_of(s) == TERMINAL


@nb.njit
def partner_view(s):
    if kind_of(s) == ASPIRANT:
        return s & (15 | (3 << 40))
    return s & 15


@nb.njit
def initiator_view(s):
    if kind_of(s) == EXPERT:
        return s
    return s & 15


@nb.njit
def _enumerate(prm):
    K, M, D, PULL, KS = prm[P_K], prm[P_M], prm[P_D], prm[P_PULL], prm[P_KS]
    size = 2 * (8 * D * (KS + 1) * 3 + (M + 1) * (2 * K + 3) + PULL + 1 + 3 + 1)
    out = np.empty(size, dtype=np.int64)
    i = 0
    for b in range(2):
        for eta in range(-1, 7):
            for d in range(1, D + 1):
                for dp in range(0, KS + 1):
                    for bp in range(-1, 2):
                        out[i] = aspirant(eta, d, dp, bp, b)
                        i += 1
        for m in range(0, M + 1):
            for d in range(1, 2 * K + 4):
                out[i] = expert(m, d, b)
                i += 1
        for d in range(1, PULL + 1):
            out[i] = regular(d, b)
            i += 1
        out[i] = terminal(b)
        i += 1
        for bp in range(-1, 2):
            out[i] = candidate(bp, b)
            i += 1
        out[i] = informed(b)
        i += 1
    return out


def universe_size(ps: ParamSet) -> int:
    K, M, D, PULL, KS = ps.K, ps.M, ps.expert_phase_len, ps.pull_interval, ps.K_select
    return 2 * (8 * D * (KS + 1) * 3 + (M + 1) * (2 * K + 3) + PULL + 1 + 3 + 1)


def decode(s: int) -> tuple:
    k = s & 7
    b = (s >> 3) & 1
    if k == ASPIRANT:
        return (1, ((s >> 4) & 15) - 1, (s >> 8) & 0xFFFFFF, (s >> 32) & 0xFF, ((s >> 40) & 3) - 1, b)
    if k == EXPERT:
        return (2, (s >> 4) & 0xFF, (s >> 12) & 0xFFFF, b)
    if k == REGULAR:
        return (3, (s >> 4) & 0xFFFFFF, b)
    if k == TERMINAL:
        return (4, b)
    if k == CANDIDATE:
        return (5, ((s >> 4) & 3) - 1, b)
    if k == INFORMED:
        return (6, b)
    raise ValueError(f"not a sync state: {s}")


def encode(t: tuple) -> int:
    k = t[0]
    if k == ASPIRANT:
        return int(aspirant(*t[1:]))
    if k == EXPERT:
        return int(expert(*t[1:]))
    if k == REGULAR:
        return int(regular(*t[1:]))
    if k == TERMINAL:
        return int(terminal(t[1]))
    if k == CANDIDATE:
        return int(candidate(*t[1:]))
    if k == INFORMED:
        return int(informed(t[1]))
    raise ValueError(f"unknown type in {t}")


def params_vector(ps: ParamSet) -> np.ndarray:
    return np.array([ps.K, ps.M, ps.expert_phase_len, ps.pull_interval, ps.K_select], dtype=np.int64)


def sync_spec(ps: ParamSet) -> ProtocolSpec:
    if ps.protocol_id != "sync":
        raise ValueError("parameters were derived for another protocol")
    prm = params_vector(ps)
    estimation_end = ps.expert_phase_len + ps.M * ps.round_len
    return ProtocolSpec(
        name="sync",
        params=prm,
        initial_codes=(int(aspirant(-1, 1, 0, -1, 0)), int(aspirant(-1, 1, 0, -1, 1))),
        is_initiator=is_initiator,
        on_initiate=on_initiate,
        on_idle=on_idle,
        on_rejected=on_rejected,
        in_universe=in_universe,
        terminal_hint=terminal_hint,
        enumerate_universe=lambda: _enumerate(prm),
        universe_size=universe_size(ps),
        decode=decode,
        kind_names=KIND_NAMES,
        partner_view=partner_view,
        initiator_view=initiator_view,
        paramset=ps,
        default_horizon=float(estimation_end + ps.pull_interval * (2 * ps.ceil_log_n + 10)),
        synchronous=True,
    )
