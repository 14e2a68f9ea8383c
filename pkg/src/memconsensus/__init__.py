"""Simulation and state-space analysis of memory-constrained majority consensus protocols."""
from .core import (
    Instance,
    ParamSet,
    ProtocolError,
    ProtocolSpec,
    derive_params,
    make_instance,
    majority_of_bits,
)
from .protocols import build_protocol

__version__ = "0.1.0"

__all__ = [
    "Instance",
    "ParamSet",
    "ProtocolError",
    "ProtocolSpec",
    "build_protocol",
    "derive_params",
    "make_instance",
    "majority_of_bits",
    "__version__",
]
