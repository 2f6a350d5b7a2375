"""Two-party secure sparse inner products over a prime field."""

from .field import DEFAULT_PRIME, FieldElement, FieldModulus, FixedPointCodec
from .protocol import (
    BatchConfig,
    ClientInput,
    ProtocolConfig,
    ServerInput,
    plaintext_sip,
    run_batched,
    run_protocol,
    run_ssip1,
    run_ssip2,
)

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_PRIME",
    "BatchConfig",
    "ClientInput",
    "FieldElement",
    "FieldModulus",
    "FixedPointCodec",
    "ProtocolConfig",
    "ServerInput",
    "plaintext_sip",
    "run_batched",
    "run_protocol",
    "run_ssip1",
    "run_ssip2",
]
