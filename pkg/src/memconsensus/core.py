"""Protocol-as-data contract, problem instances and parameter derivation.

A protocol is described by a handful of numba-compiled transition functions
over integer-encoded states plus an ``int64`` parameter vector.  Every
encoded state keeps its node type in bits 0-2 and its belief bit in bit 3,
so ``kind`` and ``belief`` are the same bit extraction for every protocol.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Any, Callable, Iterable, Mapping, Optional, Sequence

import numba as nb
import numpy as np

MIN_NODES = 16

PROTOCOL_IDS = ("simple-async", "sync", "full-async", "baseline-3state")

# Multiplicative factors applied to the loose proof constants.  Unit values
# reproduce the formulas exactly.
OVERRIDE_KEYS = {
    "simple-async": ("c0",),
    "sync": ("expert_phase", "k", "k_select"),
    "full-async": ("t_aspirant", "k", "k_select"),
    "baseline-3state": (),
}

PRESETS: Mapping[str, Mapping[str, Mapping[str, float]]] = MappingProxyType(
    {
        "unscaled": MappingProxyType({pid: MappingProxyType({}) for pid in PROTOCOL_IDS}),
        "desk": MappingProxyType(
            {
                "simple-async": MappingProxyType({"c0": 0.1}),
                "sync": MappingProxyType({"expert_phase": 0.05, "k": 0.15, "k_select": 0.1}),
                "full-async": MappingProxyType({"t_aspirant": 0.01, "k": 0.5}),
                "baseline-3state": MappingProxyType({}),
            }
        ),
    }
)


class ProtocolError(RuntimeError):
    """A protocol produced a state outside its declared universe."""


# ---------------------------------------------------------------------------
# bit-field helpers shared by the protocol encodings


@nb.njit(inline="always")
def get_field(code, offset, width):
    return (code >> offset) & ((1 << width) - 1)


@nb.njit(inline="always")
def set_field(code, offset, width, value):
    mask = ((1 << width) - 1) << offset
    return (code & ~mask) | ((value << offset) & mask)


@nb.njit(inline="always")
def kind_of(code):
    return code & 7


@nb.njit(inline="always")
def belief_of(code):
    return (code >> 3) & 1


@nb.njit(inline="always")
def majority3(a, b, c):
    return 1 if a + b + c >= 2 else 0


# ---------------------------------------------------------------------------


def majority_of_bits(bits: Iterable[int]) -> int:
    """Majority of a bit multiset; ties go to 0."""
    zeros = ones = 0
    for b in bits:
        if b == 0:
            zeros += 1
        elif b == 1:
            ones += 1
        else:
            raise ValueError(f"not a bit: {b!r}")
    if zeros + ones == 0:
        raise ValueError("majority of an empty multiset is undefined")
    return 0 if zeros >= ones else 1


def ceil_int(x: float) -> int:
    # Formulas such as ceil(5 * loglog(65536) * 0.15) are exact integers in
    # real arithmetic; absorb float noise just above the integer.
    return int(math.ceil(x - 1e-9))


def loglog2(n: int) -> float:
    return math.log2(math.log2(n))


@dataclass(frozen=True)
class Instance:
    n: int
    initial_bits: np.ndarray
    majority_bit: int
    advantage_fraction: float

    def __post_init__(self):
        bits = self.initial_bits
        if bits.shape != (self.n,):
            raise ValueError("initial_bits must have length n")
        if self.n < MIN_NODES:
            raise ValueError(f"n must be at least {MIN_NODES}")
        bits.setflags(write=False)


def make_instance(
    n: int,
    p: float,
    seed: int | np.random.SeedSequence,
    *,
    majority_bit: int = 1,
    epsilon: Optional[float] = None,
) -> Instance:
    """Instance with exactly ``round(p*n)`` nodes carrying ``majority_bit``.

    Positions are shuffled by ``seed``.  When the counts tie the recorded
    majority bit is 0 whatever ``majority_bit`` asked for.
    """
    if n < MIN_NODES:
        raise ValueError(f"n must be at least {MIN_NODES}, got {n}")
    if not 0.5 <= p <= 1.0:
        raise ValueError(f"p must lie in [1/2, 1], got {p}")
    if epsilon is not None and not (0.5 + epsilon - 1e-12 <= p <= 1.0 - epsilon + 1e-12):
        raise ValueError(f"p={p} outside [1/2+eps, 1-eps] for eps={epsilon}")
    if majority_bit not in (0, 1):
        raise ValueError("majority_bit must be 0 or 1")
    k = int(math.floor(p * n + 0.5))
    bits = np.full(n, 1 - majority_bit, dtype=np.int8)
    bits[:k] = majority_bit
    np.random.default_rng(seed).shuffle(bits)
    ones = int(bits.sum())
    maj = 0 if n - ones >= ones else 1
    realized = float((bits == maj).sum()) / n
    return Instance(n=n, initial_bits=bits, majority_bit=maj, advantage_fraction=realized)


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ParamSet:
    """Derived integer constants for one protocol at one (n, epsilon).

    Fields that do not apply to ``protocol_id`` are ``None``.
    """

    protocol_id: str
    n: int
    epsilon: float
    scale_overrides: Mapping[str, float] = field(default_factory=dict)
    ceil_log_n: int = 1
    ceil_loglog_n: int = 1
    # simple-async
    c0: Optional[float] = None
    C0_ceil_log_n: Optional[int] = None
    estimate_threshold: Optional[int] = None
    success_target: Optional[int] = None
    # sync / full-async
    M: Optional[int] = None
    K: Optional[int] = None
    K_select: Optional[int] = None  # selection threshold; equals K unless scaled apart
    expert_phase_len: Optional[int] = None
    round_len: Optional[int] = None
    pull_interval: Optional[int] = None
    T_aspirant: Optional[int] = None
    t_m_schedule: Optional[tuple] = None
    t1_m_schedule: Optional[tuple] = None
    candidate_expiry: Optional[int] = None
    expert_counter_max: Optional[int] = None
    universe_size: int = 0

    def as_dict(self) -> dict:
        out = {}
        for k, v in self.__dict__.items():
            if isinstance(v, Mapping):
                v = dict(v)
            elif isinstance(v, tuple):
                v = list(v)
            out[k] = v
        return out


def resolve_overrides(protocol_id: str, preset: str = "unscaled", overrides: Optional[Mapping[str, float]] = None) -> dict:
    if protocol_id not in OVERRIDE_KEYS:
        raise ValueError(f"unknown protocol id {protocol_id!r}")
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}")
    scales = dict(PRESETS[preset][protocol_id])
    for key, val in (overrides or {}).items():
        if key not in OVERRIDE_KEYS[protocol_id]:
            raise ValueError(f"override {key!r} not defined for {protocol_id}")
        scales[key] = float(val)
    for key, val in scales.items():
        if not val > 0:
            raise ValueError(f"override {key} must be positive, got {val}")
    return scales


def derive_params(
    protocol_id: str,
    n: int,
    epsilon: float,
    overrides: Optional[Mapping[str, float]] = None,
) -> ParamSet:
    """All derived constants of ``protocol_id``; logarithms are base 2."""
    if protocol_id not in OVERRIDE_KEYS:
        raise ValueError(f"unknown protocol id {protocol_id!r}")
    if n < MIN_NODES:
        raise ValueError(f"n must be at least {MIN_NODES}, got {n}")
    if not 0 < epsilon < 0.25:
        raise ValueError(f"epsilon must lie in (0, 1/4), got {epsilon}")
    scales = resolve_overrides(protocol_id, "unscaled", overrides)
    logn = math.log2(n)
    ll = loglog2(n)
    common = dict(
        protocol_id=protocol_id,
        n=n,
        epsilon=epsilon,
        scale_overrides=MappingProxyType(dict(scales)),
        ceil_log_n=ceil_int(logn),
        ceil_loglog_n=ceil_int(ll),
    )

    if protocol_id == "simple-async":
        c0 = 10.0 / epsilon**2 * scales.get("c0", 1.0)
        big = ceil_int(c0 * logn)
        if big < common["ceil_log_n"]:
            raise ValueError("C0 log n must be at least log n; c0 override too small")
        # an expert reports 1 iff its 1-counter exceeds C0 log n / 2
        threshold = int(math.floor(c0 * logn / 2.0)) + 1
        ps = ParamSet(
            **common,
            c0=c0,
            C0_ceil_log_n=big,
            estimate_threshold=threshold,
            success_target=common["ceil_loglog_n"],
        )
    elif protocol_id == "sync":
        M = ceil_int(2 * ll)
        K = max(1, ceil_int(5 * ll * scales.get("k", 1.0)))
        K_sel = max(1, ceil_int(5 * ll * scales.get("k_select", scales.get("k", 1.0))))
        phase = ceil_int(300.0 / epsilon**2 * K * scales.get("expert_phase", 1.0))
        # the selection phase needs its 4 handshake steps plus polling steps
        phase = max(phase, 8)
        ps = ParamSet(
            **common,
            M=M,
            K=K,
            K_select=K_sel,
            expert_phase_len=phase,
            round_len=2 * K + 3,
            pull_interval=3 * M * K,
            expert_counter_max=2 * K + 3,
        )
    elif protocol_id == "full-async":
        M = ceil_int(2 * ll)
        K = max(1, ceil_int(6 * ll * scales.get("k", 1.0)))
        K_sel = max(1, ceil_int(6 * ll * scales.get("k_select", scales.get("k", 1.0))))
        T = ceil_int(5000.0 / epsilon * ll * scales.get("t_aspirant", 1.0))
        if T < K + 1:
            raise ValueError("T_aspirant must be at least K+1")
        t_m = tuple(6 * T + 7 * K * m for m in range(M + 1))
        t1_m = tuple(6 * T + 7 * K * (m - 1) + K for m in range(1, M + 1))
        ps = ParamSet(
            **common,
            M=M,
            K=K,
            K_select=K_sel,
            T_aspirant=T,
            t_m_schedule=t_m,
            t1_m_schedule=t1_m,
            candidate_expiry=2 * t_m[M],
            expert_counter_max=2 * K + 7,
            pull_interval=ceil_int(ll**2),
        )
    else:
        ps = ParamSet(**common)

    from . import protocols  # deferred: protocols import this module

    size = protocols.universe_size(ps)
    return ParamSet(**{**ps.__dict__, "universe_size": size})


# ---------------------------------------------------------------------------


@nb.njit
def _identity_view(code):
    return code


@dataclass(frozen=True, eq=False)
class ProtocolSpec:
    """A protocol as data.

    The transition callables are numba dispatchers with signatures

    * ``is_initiator(code, prm) -> bool``
    * ``on_initiate(a, b, prm) -> (a', b')``
    * ``on_idle(code, prm)`` and ``on_rejected(code, prm)``
    * ``in_universe(code, prm) -> bool``
    * ``terminal_hint(code, prm) -> bool``: the protocol's own claim about
      terminality; the analyzer checks it against the model definition.

    ``partner_view`` and ``initiator_view`` optionally coarsen states for the
    analyzer: ``on_initiate(a, b)[0]`` may depend on ``b`` only through
    ``partner_view(b)`` and ``on_initiate(a, b)[1]`` on ``a`` only through
    ``initiator_view(a)``.  Identity views are always sound.
    """

    name: str
    params: np.ndarray
    initial_codes: tuple
    is_initiator: Any
    on_initiate: Any
    on_idle: Any
    on_rejected: Any
    in_universe: Any
    terminal_hint: Any
    enumerate_universe: Callable[[], np.ndarray]
    universe_size: int
    decode: Callable[[int], tuple]
    kind_names: Mapping[int, str]
    partner_view: Any = _identity_view
    initiator_view: Any = _identity_view
    paramset: Optional[ParamSet] = None
    default_horizon: Optional[float] = None
    synchronous: bool = False

    def __post_init__(self):
        if self.universe_size < 2:
            raise ValueError("a protocol needs at least two states")
        self.params.setflags(write=False)

    def initial_state(self, bit: int) -> int:
        return int(self.initial_codes[bit])

    def belief(self, code: int) -> int:
        return int(belief_of(code))

    def kind(self, code: int) -> int:
        return int(kind_of(code))

    def initiates(self, code: int) -> bool:
        return bool(self.is_initiator(np.int64(code), self.params))

    def interact(self, a: int, b: int) -> tuple:
        x, y = self.on_initiate(np.int64(a), np.int64(b), self.params)
        return int(x), int(y)

    def idle(self, code: int) -> int:
        return int(self.on_idle(np.int64(code), self.params))

    def rejected(self, code: int) -> int:
        return int(self.on_rejected(np.int64(code), self.params))

    def valid(self, code: int) -> bool:
        return bool(self.in_universe(np.int64(code), self.params))

    def describe(self, code: int) -> str:
        return str(self.decode(int(code)))

    def initial_states_for(self, bits: Sequence[int]) -> np.ndarray:
        table = np.asarray(self.initial_codes, dtype=np.int64)
        return table[np.asarray(bits, dtype=np.int64)]
