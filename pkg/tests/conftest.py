import functools

import numpy as np
import pytest

from memconsensus.core import derive_params, resolve_overrides
from memconsensus.protocols import build_protocol

# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list = []


@functools.lru_cache(maxsize=None)
def _build(pid, n, epsilon, preset, overrides):
    scales = resolve_overrides(pid, preset, dict(overrides))
    return build_protocol(derive_params(pid, n, epsilon, scales))


def protocol_for(pid, n, epsilon=0.2, preset="desk", **overrides):
    """Cached protocol instance."""
    return _build(pid, n, epsilon, preset, tuple(sorted(overrides.items())))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
