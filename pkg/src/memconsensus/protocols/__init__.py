"""Protocol registry."""
from __future__ import annotations

from ..core import ParamSet, ProtocolSpec
from . import full_async, simple_async, sync
from .full_async import full_async_spec
from .simple_async import simple_async_spec
from .sync import sync_spec
from .toys import BASELINE_3STATE, TableProtocol, baseline_spec


def universe_size(ps: ParamSet) -> int:
    pid = ps.protocol_id
    if pid == "simple-async":
        return simple_async.universe_size(ps)
    if pid == "sync":
        return sync.universe_size(ps)
    if pid == "full-async":
        return full_async.universe_size(ps)
    if pid == "baseline-3state":
        return BASELINE_3STATE.size
    raise ValueError(f"unknown protocol id {pid!r}")


def build_protocol(ps: ParamSet) -> ProtocolSpec:
    pid = ps.protocol_id
    if pid == "simple-async":
        return simple_async_spec(ps)
    if pid == "sync":
        return sync_spec(ps)
    if pid == "full-async":
        return full_async_spec(ps)
    if pid == "baseline-3state":
        return baseline_spec(ps)
    raise ValueError(f"unknown protocol id {pid!r}")


__all__ = [
    "BASELINE_3STATE",
    "TableProtocol",
    "baseline_spec",
    "build_protocol",
    "full_async_spec",
    "simple_async_spec",
    "sync_spec",
    "universe_size",
]
