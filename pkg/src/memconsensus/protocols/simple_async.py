"""Four-type asynchronous protocol with O((log n)^2) states.

Aspirants run a von Neumann pair game to decide whether they become experts,
experts poll ``ceil(C0 log n) - 1`` beliefs, push their estimate to
``ceil(log n)`` nodes, and regular nodes pull from terminal nodes every
``ceil(log n)`` rings.

Encoding (bit offsets)::

    0-2 type   3 belief
    aspirant (1): 4-27 d        28-29 b'+1
    expert   (2): 4-5  xi       6-29  d        30-53 d'
    regular  (3): 4-27 d
    terminal (4): -
"""
from __future__ import annotations

import numba as nb
import numpy as np

from ..core import ParamSet, ProtocolSpec, belief_of, get_field, kind_of

ASPIRANT, EXPERT, REGULAR, TERMINAL = 1, 2, 3, 4
KIND_NAMES = {ASPIRANT: "aspirant", EXPERT: "expert", REGULAR: "regular", TERMINAL: "terminal"}

# parameter vector layout
P_L, P_C, P_LOGN, P_THRESH = 0, 1, 2, 3


@nb.njit(inline="always")
def aspirant(d, bp, b):
    return ASPIRANT | (b << 3) | (d << 4) | ((bp + 1) << 28)


@nb.njit(inline="always")
def expert(xi, d, dp, b):
    return EXPERT | (b << 3) | (xi << 4) | (d << 6) | (dp << 30)


@nb.njit(inline="always")
def regular(d, b):
    return REGULAR | (b << 3) | (d << 4)


@nb.njit(inline="always")
def terminal(b):
    return TERMINAL | (b << 3)


@nb.njit
def is_initiator(s, prm):
    k = kind_of(s)
    if k == ASPIRANT:
        return True
    if k == EXPERT:
        if get_field(s, 4, 2) == 2:
            return True
        return get_field(s, 6, 24) < prm[P_C]
    if k == REGULAR:
        return get_field(s, 4, 24) == prm[P_LOGN]
    return False


@nb.njit
def on_initiate(a, b, prm):
    k = kind_of(a)
    mine = belief_of(a)
    if k == ASPIRANT:
        d = get_field(a, 4, 24)
        bp = get_field(a, 28, 2) - 1
        other = belief_of(b)
        if d >= prm[P_L]:
            return expert(1, 1, 1, mine), b
        if bp == other:
            return aspirant(d, -1, mine), b
        if bp == -1:
            return aspirant(d, other, mine), b
        if bp == 0:  # pair (0, 1)
            d += 1
            if d == prm[P_L]:
                return expert(1, 1, 1, mine), b
            return aspirant(d, -1, mine), b
        return regular(1, mine), b  # pair (1, 0)
    if k == EXPERT:
        xi = get_field(a, 4, 2)
        d = get_field(a, 6, 24)
        dp = get_field(a, 30, 24)
        if xi == 1:
            # d' <= d on every reachable state; the cap keeps the universe closed
            return expert(1, d + 1, min(dp + belief_of(b), prm[P_C]), mine), b
        # pushing: a contacted regular node copies the estimate and stops
        if kind_of(b) == REGULAR:
            b = terminal(mine)
        if d >= prm[P_LOGN]:
            return terminal(mine), b
        return expert(2, d + 1, dp, mine), b
    if k == REGULAR:
        if kind_of(b) == TERMINAL:
            return b, b
        return regular(1, mine), b
    return a, b


@nb.njit
def on_idle(s, prm):
    k = kind_of(s)
    if k == REGULAR:
        d = get_field(s, 4, 24)
        if d < prm[P_LOGN]:
            return regular(d + 1, belief_of(s))
        return s
    if k == EXPERT and get_field(s, 4, 2) == 1:
        d = get_field(s, 6, 24)
        if d >= prm[P_C]:
            dp = get_field(s, 30, 24)
            return expert(2, 1, dp, 1 if dp >= prm[P_THRESH] else 0)
    return s


@nb.njit
def on_rejected(s, prm):
    return s


@nb.njit
def in_universe(s, prm):
    k = kind_of(s)
    if k == ASPIRANT:
        d = get_field(s, 4, 24)
        bp = get_field(s, 28, 2)
        return 1 <= d <= prm[P_L] and bp <= 2 and (s >> 30) == 0
    if k == EXPERT:
        xi = get_field(s, 4, 2)
        d = get_field(s, 6, 24)
        dp = get_field(s, 30, 24)
        return 1 <= xi <= 2 and 1 <= d <= prm[P_C] and 1 <= dp <= prm[P_C] and (s >> 54) == 0
    if k == REGULAR:
        d = get_field(s, 4, 24)
        return 1 <= d <= prm[P_LOGN] and (s >> 28) == 0
    if k == TERMINAL:
        return (s >> 4) == 0
    return False


@nb.njit
def terminal_hint(s, prm):
    return kind_of(s) == TERMINAL


@nb.njit
def partner_view(s):
    # initiators read only the partner's type and belief
    return s & 15


@nb.njit
def initiator_view(s):
    if kind_of(s) == EXPERT:
        return s & (15 | (3 << 4))
    return s & 7


@nb.njit
def _enumerate(prm):
    L, C, LOGN = prm[P_L], prm[P_C], prm[P_LOGN]
    size = 2 * (L * 3 + 2 * C * C + LOGN + 1)
    out = np.empty(size, dtype=np.int64)
    i = 0
    for b in range(2):
        for d in range(1, L + 1):
            for bp in range(-1, 2):
                out[i] = aspirant(d, bp, b)
                i += 1
        for xi in range(1, 3):
            for d in range(1, C + 1):
                for dp in range(1, C + 1):
                    out[i] = expert(xi, d, dp, b)
                    i += 1
        for d in range(1, LOGN + 1):
            out[i] = regular(d, b)
            i += 1
        out[i] = terminal(b)
        i += 1
    return out


def universe_size(ps: ParamSet) -> int:
    L, C, LOGN = ps.success_target, ps.C0_ceil_log_n, ps.ceil_log_n
    return 2 * (3 * L + 2 * C * C + LOGN + 1)


def memory_bound(ps: ParamSet) -> int:
    """Memory figure claimed for this protocol: ``16 ceil(C0 log n)^2``."""
    return 16 * ps.C0_ceil_log_n**2


def decode(s: int) -> tuple:
    k = s & 7
    b = (s >> 3) & 1
    if k == ASPIRANT:
        return (1, (s >> 4) & 0xFFFFFF, ((s >> 28) & 3) - 1, b)
    if k == EXPERT:
        return (2, (s >> 4) & 3, (s >> 6) & 0xFFFFFF, (s >> 30) & 0xFFFFFF, b)
    if k == REGULAR:
        return (3, (s >> 4) & 0xFFFFFF, b)
    if k == TERMINAL:
        return (4, b)
    raise ValueError(f"not a simple-async state: {s}")


def encode(t: tuple) -> int:
    k = t[0]
    if k == ASPIRANT:
        return int(aspirant(t[1], t[2], t[3]))
    if k == EXPERT:
        return int(expert(t[1], t[2], t[3], t[4]))
    if k == REGULAR:
        return int(regular(t[1], t[2]))
    if k == TERMINAL:
        return int(terminal(t[1]))
    raise ValueError(f"unknown type in {t}")


def params_vector(ps: ParamSet) -> np.ndarray:
    return np.array(
        [ps.success_target, ps.C0_ceil_log_n, ps.ceil_log_n, ps.estimate_threshold], dtype=np.int64
    )


def simple_async_spec(ps: ParamSet) -> ProtocolSpec:
    if ps.protocol_id != "simple-async":
        raise ValueError("parameters were derived for another protocol")
    prm = params_vector(ps)
    logn = np.log2(ps.n)
    return ProtocolSpec(
        name="simple-async",
        params=prm,
        initial_codes=(int(aspirant(1, -1, 0)), int(aspirant(1, -1, 1))),
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
        # experts need ceil(C0 log n) + ceil(log n) own rings
        default_horizon=float(4 * (ps.C0_ceil_log_n + ps.ceil_log_n) + 20 * logn),
    )
