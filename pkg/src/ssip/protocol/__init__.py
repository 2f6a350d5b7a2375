"""The S-SIP constructions and their session runners."""

from .common import (
    BatchConfig,
    ClientInput,
    MembershipShares,
    ProtocolConfig,
    ServerFilters,
    ServerInput,
    SessionResult,
    ShareOutcome,
    ideal_components,
    plaintext_sip,
    setup,
)
from .session import (
    build_parties,
    default_batch,
    run_batched,
    run_parties,
    run_protocol,
    run_ssip1,
    run_ssip1_groups,
    run_ssip2,
    run_ssip2_groups,
)
from .ssip1 import OfflinePackage, component_product, membership_check, offline_publish, value_extract
from .ssip2 import membership_check2, value_extract2

__all__ = [
    "BatchConfig",
    "ClientInput",
    "MembershipShares",
    "OfflinePackage",
    "ProtocolConfig",
    "ServerFilters",
    "ServerInput",
    "SessionResult",
    "ShareOutcome",
    "build_parties",
    "component_product",
    "default_batch",
    "ideal_components",
    "membership_check",
    "membership_check2",
    "offline_publish",
    "plaintext_sip",
    "run_batched",
    "run_parties",
    "run_protocol",
    "run_ssip1",
    "run_ssip1_groups",
    "run_ssip2",
    "run_ssip2_groups",
    "setup",
    "value_extract",
    "value_extract2",
]
