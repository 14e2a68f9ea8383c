"""Table-driven protocols: small hand-specified automata and the 3-state baseline.

A table protocol with states ``0..S-1`` keeps all of its transition tables in
the parameter vector, so a single set of compiled transition functions
serves every table.  State ``i`` is encoded as ``(i << 4) | (belief << 3) | kind``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numba as nb
import numpy as np

from ..core import ParamSet, ProtocolSpec

# prm layout: [S, then S codes, S initiator flags, S idle targets,
#              S rejected targets, S*S first images, S*S second images]


@nb.njit(inline="always")
def _index(s):
    return s >> 4


@nb.njit
def is_initiator(s, prm):
    S = prm[0]
    return prm[1 + S + _index(s)] != 0


@nb.njit
def on_idle(s, prm):
    S = prm[0]
    return prm[1 + prm[1 + 2 * S + _index(s)]]


@nb.njit
def on_rejected(s, prm):
    S = prm[0]
    return prm[1 + prm[1 + 3 * S + _index(s)]]


@nb.njit
def on_initiate(a, b, prm):
    S = prm[0]
    cell = _index(a) * S + _index(b)
    base = 1 + 4 * S
    return prm[1 + prm[base + cell]], prm[1 + prm[base + S * S + cell]]


@nb.njit
def in_universe(s, prm):
    i = _index(s)
    return 0 <= i < prm[0] and prm[1 + i] == s


@nb.njit
def terminal_hint(s, prm):
    # tables carry no terminality claim; the engine then never suppresses
    return False


@dataclass(frozen=True)
class TableProtocol:
    """A protocol given by explicit tables over states ``0..S-1``.

    ``interact[a][b]`` is the pair of new states when ``a`` initiates with
    ``b``; rows of non-initiators are ignored.  ``rejected`` defaults to the
    identity.
    """

    name: str
    beliefs: Sequence[int]
    initiators: Sequence[bool]
    idle: Sequence[int]
    interact: Sequence[Sequence[tuple]]
    initial: tuple
    kinds: Optional[Sequence[int]] = None
    rejected: Optional[Sequence[int]] = None
    kind_names: Optional[Mapping[int, str]] = None

    @property
    def size(self) -> int:
        return len(self.beliefs)

    def code(self, i: int) -> int:
        kinds = self.kinds or [1] * self.size
        return (i << 4) | (int(self.beliefs[i]) << 3) | int(kinds[i])

    def params(self) -> np.ndarray:
        S = self.size
        rej = self.rejected if self.rejected is not None else range(S)
        first = [self.interact[a][b][0] if self.initiators[a] else a for a in range(S) for b in range(S)]
        second = [self.interact[a][b][1] if self.initiators[a] else b for a in range(S) for b in range(S)]
        vec = [S]
        vec += [self.code(i) for i in range(S)]
        vec += [int(bool(x)) for x in self.initiators]
        vec += list(self.idle)
        vec += list(rej)
        vec += first + second
        return np.array(vec, dtype=np.int64)

    def spec(self, paramset: Optional[ParamSet] = None) -> ProtocolSpec:
        S = self.size
        for i, bel in enumerate(self.beliefs):
            if bel not in (0, 1):
                raise ValueError(f"state {i} has belief {bel}")
        for b in (0, 1):
            if self.beliefs[self.initial[b]] != b:
                raise ValueError(f"initial state for bit {b} must carry belief {b}")
        prm = self.params()
        codes = np.array([self.code(i) for i in range(S)], dtype=np.int64)
        return ProtocolSpec(
            name=self.name,
            params=prm,
            initial_codes=(self.code(self.initial[0]), self.code(self.initial[1])),
            is_initiator=is_initiator,
            on_initiate=on_initiate,
            on_idle=on_idle,
            on_rejected=on_rejected,
            in_universe=in_universe,
            terminal_hint=terminal_hint,
            enumerate_universe=lambda: codes.copy(),
            universe_size=S,
            decode=lambda s: (s >> 4,),
            kind_names=dict(self.kind_names or {1: "state"}),
            paramset=paramset,
        )


def index_of(code: int) -> int:
    return int(code) >> 4


# ---------------------------------------------------------------------------
# classical three-state approximate majority

ZERO, ONE, BLANK = 0, 1, 2

BASELINE_3STATE = TableProtocol(
    name="baseline-3state",
    beliefs=(0, 1, 0),
    initiators=(True, True, True),
    idle=(0, 1, 2),
    interact=(
        ((ZERO, ZERO), (BLANK, ONE), (ZERO, BLANK)),
        ((BLANK, ZERO), (ONE, ONE), (ONE, BLANK)),
        ((ZERO, ZERO), (ONE, ONE), (BLANK, BLANK)),
    ),
    initial=(ZERO, ONE),
    kinds=(1, 2, 3),
    kind_names={1: "zero", 2: "one", 3: "blank"},
)


def baseline_spec(ps: Optional[ParamSet] = None) -> ProtocolSpec:
    """Always-initiating 3-state automaton.

    An opinionated initiator that meets the opposite opinion turns blank; a
    blank initiator adopts its partner's opinion.  The blank state reports
    belief 0.
    """
    return BASELINE_3STATE.spec(ps)
