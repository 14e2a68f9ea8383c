"""Six-type asynchronous protocol with O((log log n)^3) states.

Aspirants draw a uniform expert type from a quadruple of initial bits
(phase 1), play a K-success pair game (phase 2) and, if selected, wait
``T_aspirant`` rings (phase 3) before becoming level 0 experts.  Experts
count their own rings up to ``2K+7``; below that they recruit contacted
regular nodes that were never experts, at exactly ``2K+7`` they seed a
level m+1 candidate (types 1-3) or, at level M, inform the contacted
node.  Candidates collect one bit from an expert of each type 1, 2, 3 and
become experts with the majority belief, or expire after ``2 t_M`` rings.
Informed nodes push until they meet an informed or terminal node; regular
nodes pull every ``ceil((log log n)^2)`` rings.

Encoding (bit offsets)::

    0-2 type   3 belief   4 initial bit
    aspirant  (1): 5-28 d    29-31 xi    32-33 chi    34-39 b', b'', b''' (+1, 2 bits each)
    expert    (2): 5-12 m    13-28 d     29-31 xi
    regular   (3): 5-28 d    29-31 xi    32 psi
    terminal  (4): -
    candidate (5): 5-12 m    13-36 d     37-39 xi     40-45 b1, b2, b3 (+1, 2 bits each)
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

P_K, P_M, P_T, P_PULL, P_EXPIRY, P_SPREAD0, P_KS = 0, 1, 2, 3, 4, 5, 6


@nb.njit(inline="always")
def _head(ib, b):
    return (b << 3) | (ib << 4)


@nb.njit(inline="always")
def aspirant(d, xi, chi, t1, t2, t3, ib, b):
    return (
        ASPIRANT
        | _head(ib, b)
        | (d << 5)
        | (xi << 29)
        | (chi << 32)
        | ((t1 + 1) << 34)
        | ((t2 + 1) << 36)
        | ((t3 + 1) << 38)
    )


@nb.njit(inline="always")
def expert(m, d, xi, ib, b):
    return EXPERT | _head(ib, b) | (m << 5) | (d << 13) | (xi << 29)


@nb.njit(inline="always")
def regular(d, xi, psi, ib, b):
    return REGULAR | _head(ib, b) | (d << 5) | (xi << 29) | (psi << 32)


@nb.njit(inline="always")
def terminal(ib, b):
    return TERMINAL | _head(ib, b)


@nb.njit(inline="always")
def candidate(m, d, xi, s1, s2, s3, ib, b):
    return (
        CANDIDATE
        | _head(ib, b)
        | (m << 5)
        | (d << 13)
        | (xi << 37)
        | ((s1 + 1) << 40)
        | ((s2 + 1) << 42)
        | ((s3 + 1) << 44)
    )


@nb.njit(inline="always")
def informed(ib, b):
    return INFORMED | _head(ib, b)


@nb.njit(inline="always")
def init_bit(s):
    return (s >> 4) & 1


@nb.njit(inline="always")
def _slot(s, offset, v):
    return get_field(s, offset + 2 * (v - 1), 2) - 1


@nb.njit
def is_initiator(s, prm):
    k = kind_of(s)
    if k == ASPIRANT:
        return get_field(s, 32, 2) != 3
    if k == EXPERT or k == INFORMED:
        return True
    if k == REGULAR:
        return get_field(s, 5, 24) == prm[P_PULL]
    return False


@nb.njit
def on_idle(s, prm):
    k = kind_of(s)
    ib = init_bit(s)
    b = belief_of(s)
    if k == ASPIRANT:
        if get_field(s, 32, 2) != 3:
            return s
        d = get_field(s, 5, 24)
        xi = get_field(s, 29, 3)
        if d >= prm[P_T]:
            return expert(0, 1, xi, ib, ib)
        return aspirant(d + 1, xi, 3, -1, -1, -1, ib, ib)
    if k == REGULAR:
        d = get_field(s, 5, 24)
        if d < prm[P_PULL]:
            return set_d_regular(s, d + 1)
        return s
    if k == CANDIDATE:
        d = get_field(s, 13, 24)
        if d < prm[P_EXPIRY]:
            return (s & ~(((1 << 24) - 1) << 13)) | ((d + 1) << 13)
        return regular(1, get_field(s, 37, 3), 1, ib, b)
    return s


@nb.njit(inline="always")
def set_d_regular(s, d):
    return (s & ~(((1 << 24) - 1) << 5)) | (d << 5)


@nb.njit
def on_rejected(s, prm):
    return s


@nb.njit
def _aspirant_initiate(a, other, prm):
    d = get_field(a, 5, 24)
    xi = get_field(a, 29, 3)
    chi = get_field(a, 32, 2)
    t1 = _slot(a, 34, 1)
    t2 = _slot(a, 34, 2)
    t3 = _slot(a, 34, 3)
    ib = init_bit(a)
    if chi == 1:
        if t1 == -1:
            return aspirant(d, xi, 1, other, -1, -1, ib, ib)
        if t2 == -1:
            return aspirant(d, xi, 1, t1, other, -1, ib, ib)
        if t3 == -1:
            return aspirant(d, xi, 1, t1, t2, other, ib, ib)
        ones = t1 + t2 + t3 + other
        if ones == 1 or ones == 3:
            odd = 1 if ones == 1 else 0
            if t1 == odd:
                v = 1
            elif t2 == odd:
                v = 2
            elif t3 == odd:
                v = 3
            else:
                v = 4
            # the pair game starts from an empty buffer
            return aspirant(1, v, 2, -1, -1, -1, ib, ib)
        return aspirant(d, xi, 1, -1, -1, -1, ib, ib)
    # chi == 2
    if d > prm[P_KS]:
        return aspirant(1, xi, 3, -1, -1, -1, ib, ib)
    if t1 == other:
        return aspirant(d, xi, 2, -1, -1, -1, ib, ib)
    if t1 == -1:
        return aspirant(d, xi, 2, other, -1, -1, ib, ib)
    if t1 == 0:
        d += 1
        if d == prm[P_KS] + 1:
            return aspirant(1, xi, 3, -1, -1, -1, ib, ib)
        return aspirant(d, xi, 2, -1, -1, -1, ib, ib)
    return regular(1, xi, 0, ib, ib)


@nb.njit
def on_initiate(a, b, prm):
    k = kind_of(a)
    K, M = prm[P_K], prm[P_M]
    if k == ASPIRANT:
        return _aspirant_initiate(a, init_bit(b), prm), b
    kb = kind_of(b)
    if k == EXPERT:
        m = get_field(a, 5, 8)
        d = get_field(a, 13, 16)
        xi = get_field(a, 29, 3)
        ib = init_bit(a)
        mine = belief_of(a)
        last = 2 * K + 7
        if d == last:
            if m < M:
                new_a = regular(1, xi, 1, ib, mine)
            else:
                new_a = informed(ib, mine)
        else:
            new_a = expert(m, d + 1, xi, ib, mine)
        if kb == REGULAR:
            psi = get_field(b, 32, 1)
            jb = init_bit(b)
            jxi = get_field(b, 29, 3)
            if d != last:
                if psi == 0 and (m > 0 or prm[P_SPREAD0] != 0):
                    return new_a, expert(m, d + 1, jxi, jb, mine)
            elif m == M:
                return new_a, informed(jb, mine)
            elif psi == 0 and xi <= 3:
                s1 = mine if xi == 1 else -1
                s2 = mine if xi == 2 else -1
                s3 = mine if xi == 3 else -1
                return new_a, candidate(m + 1, 1, jxi, s1, s2, s3, jb, mine)
        elif kb == CANDIDATE and d == last and xi <= 3:
            if get_field(b, 5, 8) == m + 1 and _slot(b, 40, xi) == -1:
                s1 = _slot(b, 40, 1)
                s2 = _slot(b, 40, 2)
                s3 = _slot(b, 40, 3)
                if xi == 1:
                    s1 = mine
                elif xi == 2:
                    s2 = mine
                else:
                    s3 = mine
                jb = init_bit(b)
                jxi = get_field(b, 37, 3)
                if s1 != -1 and s2 != -1 and s3 != -1:
                    return new_a, expert(m + 1, 1, jxi, jb, majority3(s1, s2, s3))
                return new_a, candidate(
                    m + 1, get_field(b, 13, 24), jxi, s1, s2, s3, jb, belief_of(b)
                )
        return new_a, b
    if k == REGULAR:
        if kb == TERMINAL:
            return b, b
        return set_d_regular(a, 1), b
    if k == INFORMED:
        if kb == INFORMED or kb == TERMINAL:
            return terminal(init_bit(a), belief_of(a)), b
        if kb == REGULAR:
            return a, informed(init_bit(b), belief_of(a))
        return a, b
    return a, b


@nb.njit
def in_universe(s, prm):
    k = kind_of(s)
    K, M, T = prm[P_K], prm[P_M], prm[P_T]
    if k == ASPIRANT:
        d = get_field(s, 5, 24)
        xi = get_field(s, 29, 3)
        chi = get_field(s, 32, 2)
        if (s >> 40) != 0 or belief_of(s) != init_bit(s):
            return False
        if get_field(s, 34, 2) > 2 or get_field(s, 36, 2) > 2 or get_field(s, 38, 2) > 2:
            return False
        if chi == 1:
            return d == 1 and xi == 0
        if chi == 2:
            return 1 <= d <= prm[P_KS] and 1 <= xi <= 4 and get_field(s, 36, 4) == 0
        if chi == 3:
            return 1 <= d <= T and 1 <= xi <= 4 and get_field(s, 34, 6) == 0
        return False
    if k == EXPERT:
        m = get_field(s, 5, 8)
        d = get_field(s, 13, 16)
        xi = get_field(s, 29, 3)
        return m <= M and 1 <= d <= 2 * K + 7 and 1 <= xi <= 4 and (s >> 32) == 0
    if k == REGULAR:
        d = get_field(s, 5, 24)
        xi = get_field(s, 29, 3)
        return 1 <= d <= prm[P_PULL] and 1 <= xi <= 4 and (s >> 33) == 0
    if k == CANDIDATE:
        m = get_field(s, 5, 8)
        d = get_field(s, 13, 24)
        xi = get_field(s, 37, 3)
        if not (1 <= m <= M and 1 <= d <= prm[P_EXPIRY] and 1 <= xi <= 4 and (s >> 46) == 0):
            return False
        filled = 0
        for v in range(1, 4):
            f = get_field(s, 40 + 2 * (v - 1), 2)
            if f > 2:
                return False
            if f != 0:
                filled += 1
        return 1 <= filled <= 2
    if k == TERMINAL or k == INFORMED:
        return (s >> 5) == 0
    return False


@nb.njit
def terminal_hint(s, prm):
    return kind_of(s) == TERMINAL


@nb.njit
def partner_view(s):
    # initiators read only the type, belief and initial bit of their partner
    return s & 31


@nb.njit
def initiator_view(s):
    if kind_of(s) == EXPERT:
        return s & ~16
    return s & 15


def _counts(ps: ParamSet) -> dict:
    K, M, T = ps.K, ps.M, ps.T_aspirant
    return dict(
        aspirant=2 * (27 + 4 * ps.K_select * 3 + 4 * T),
        expert=4 * (M + 1) * (2 * K + 7) * 4,
        regular=4 * ps.pull_interval * 4 * 2,
        terminal=4,
        candidate=4 * M * ps.candidate_expiry * 4 * 18,
        informed=4,
    )


def universe_size(ps: ParamSet) -> int:
    return sum(_counts(ps).values())


def memory_bound(ps: ParamSet) -> int:
    """Product of the declared field ranges of the candidate family."""
    return 6 * ps.M * ps.candidate_expiry * 4 * 27 * 2 * 2


@nb.njit
def _enumerate(prm, size):
    K, M, T, PULL, EXP = prm[P_K], prm[P_M], prm[P_T], prm[P_PULL], prm[P_EXPIRY]
    out = np.empty(size, dtype=np.int64)
    i = 0
    for ib in range(2):
        for t1 in range(-1, 2):
            for t2 in range(-1, 2):
                for t3 in range(-1, 2):
                    out[i] = aspirant(1, 0, 1, t1, t2, t3, ib, ib)
                    i += 1
        for xi in range(1, 5):
            for d in range(1, prm[P_KS] + 1):
                for t1 in range(-1, 2):
                    out[i] = aspirant(d, xi, 2, t1, -1, -1, ib, ib)
                    i += 1
            for d in range(1, T + 1):
                out[i] = aspirant(d, xi, 3, -1, -1, -1, ib, ib)
                i += 1
        for b in range(2):
            for xi in range(1, 5):
                for m in range(0, M + 1):
                    for d in range(1, 2 * K + 8):
                        out[i] = expert(m, d, xi, ib, b)
                        i += 1
                for psi in range(2):
                    for d in range(1, PULL + 1):
                        out[i] = regular(d, xi, psi, ib, b)
                        i += 1
                for m in range(1, M + 1):
                    for d in range(1, EXP + 1):
                        for s1 in range(-1, 2):
                            for s2 in range(-1, 2):
                                for s3 in range(-1, 2):
                                    filled = (s1 != -1) + (s2 != -1) + (s3 != -1)
                                    if 1 <= filled <= 2:
                                        out[i] = candidate(m, d, xi, s1, s2, s3, ib, b)
                                        i += 1
            out[i] = terminal(ib, b)
            i += 1
            out[i] = informed(ib, b)
            i += 1
    return out[:i]


def decode(s: int) -> tuple:
    k = s & 7
    b = (s >> 3) & 1
    ib = (s >> 4) & 1

    def slots(off):
        return tuple(((s >> (off + 2 * v)) & 3) - 1 for v in range(3))

    if k == ASPIRANT:
        return (1, (s >> 5) & 0xFFFFFF, (s >> 29) & 7, (s >> 32) & 3) + slots(34) + (ib, b)
    if k == EXPERT:
        return (2, (s >> 5) & 0xFF, (s >> 13) & 0xFFFF, (s >> 29) & 7, ib, b)
    if k == REGULAR:
        return (3, (s >> 5) & 0xFFFFFF, (s >> 29) & 7, (s >> 32) & 1, ib, b)
    if k == TERMINAL:
        return (4, ib, b)
    if k == CANDIDATE:
        return (5, (s >> 5) & 0xFF, (s >> 13) & 0xFFFFFF, (s >> 37) & 7) + slots(40) + (ib, b)
    if k == INFORMED:
        return (6, ib, b)
    raise ValueError(f"not a full-async state: {s}")


def encode(t: tuple) -> int:
    k = t[0]
    fn = {
        ASPIRANT: aspirant,
        EXPERT: expert,
        REGULAR: regular,
        CANDIDATE: candidate,
    }.get(k)
    if fn is not None:
        return int(fn(*t[1:]))
    if k == TERMINAL:
        return int(terminal(*t[1:]))
    if k == INFORMED:
        return int(informed(*t[1:]))
    raise ValueError(f"unknown type in {t}")


def params_vector(ps: ParamSet, spread_level0: bool = False) -> np.ndarray:
    return np.array(
        [ps.K, ps.M, ps.T_aspirant, ps.pull_interval, ps.candidate_expiry, int(spread_level0),
         ps.K_select],
        dtype=np.int64,
    )


def full_async_spec(ps: ParamSet, *, spread_level0: bool = False) -> ProtocolSpec:
    """Build the protocol.

    ``spread_level0`` lets level 0 experts recruit regular nodes like every
    other level does.  It is off by default: with it on, the level 0 epidemic
    reaches almost every node and leaves no fresh regular nodes to seed
    level 1.
    """
    if ps.protocol_id != "full-async":
        raise ValueError("parameters were derived for another protocol")
    prm = params_vector(ps, spread_level0)
    size = universe_size(ps)
    t_end = ps.t_m_schedule[-1]
    return ProtocolSpec(
        name="full-async",
        params=prm,
        initial_codes=(
            int(aspirant(1, 0, 1, -1, -1, -1, 0, 0)),
            int(aspirant(1, 0, 1, -1, -1, -1, 1, 1)),
        ),
        is_initiator=is_initiator,
        on_initiate=on_initiate,
        on_idle=on_idle,
        on_rejected=on_rejected,
        in_universe=in_universe,
        terminal_hint=terminal_hint,
        enumerate_universe=lambda: _enumerate(prm, size),
        universe_size=size,
        decode=decode,
        kind_names=KIND_NAMES,
        partner_view=partner_view,
        initiator_view=initiator_view,
        paramset=ps,
        default_horizon=float(1.5 * t_end + 20 * ps.pull_interval * ps.ceil_log_n),
    )
