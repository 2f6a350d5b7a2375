"""Inputs, configuration and results shared by both S-SIP constructions."""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..field import FieldModulus
from ..filters import (
    BloomFilter,
    FilterParams,
    GarbledBloomFilter,
    InsertionFailure,
    bf_build,
    gbf_build,
    index_matrix,
    params_for,
)
from ..transport import TranscriptMetrics

CLIENT, SERVER = 0, 1


class ProtocolError(RuntimeError):
    pass


def _validate_pairs(pairs, modulus: FieldModulus, who: str) -> tuple[tuple[bytes, int], ...]:
    out = []
    seen = set()
    for key, value in pairs:
        key = key.encode() if isinstance(key, str) else bytes(key)
        if key in seen:
            raise ValueError(f"{who} key {key!r} appears twice")
        seen.add(key)
        value = int(value)
        if not 0 <= value < modulus.p:
            raise ValueError(f"{who} value {value} is not a field element")
        out.append((key, value))
    return tuple(out)


@dataclass(frozen=True)
class _Pairs:
    pairs: tuple[tuple[bytes, int], ...]

    @property
    def keys(self) -> list[bytes]:
        return [k for k, _ in self.pairs]

    @property
    def values(self) -> list[int]:
        return [v for _, v in self.pairs]

    def __len__(self) -> int:
        return len(self.pairs)


@dataclass(frozen=True)
class ClientInput(_Pairs):
    """The client's ``t`` pairs ``(x_i, s_i)``."""

    @classmethod
    def of(cls, pairs, modulus: FieldModulus | None = None) -> ClientInput:
        return cls(_validate_pairs(pairs, modulus or FieldModulus(), "client"))


@dataclass(frozen=True)
class ServerInput(_Pairs):
    """The server's ``n`` pairs ``(y_j, g_j)``."""

    @classmethod
    def of(cls, pairs, modulus: FieldModulus | None = None) -> ServerInput:
        return cls(_validate_pairs(pairs, modulus or FieldModulus(), "server"))


@dataclass(frozen=True)
class MembershipShares:
    b_client: int
    b_server: int

    @property
    def bit(self) -> int:
        return self.b_client ^ self.b_server


@dataclass(frozen=True)
class ShareOutcome:
    client_share: int
    server_share: int
    component_index: int
    bin_id: int = 0
    dummy: bool = False

    def reconstruct(self, p: int) -> int:
        return (self.client_share + self.server_share) % p


@dataclass(frozen=True)
class BatchConfig:
    m_bins: int
    beta: int | None = None
    eta: int | None = None  # None: 1 for cuckoo, ceil(3t/m_bins) for two-choice
    client_hash_mode: str = "cuckoo"
    k: int = 3
    stash_bound: int = 4
    max_relocations: int = 500

    def __post_init__(self) -> None:
        if self.client_hash_mode not in ("cuckoo", "two-choice"):
            raise ValueError("client_hash_mode must be cuckoo or two-choice")
        if self.m_bins < 1:
            raise ValueError("m_bins must be positive")
        if self.eta is not None and (self.eta < 1 or (self.client_hash_mode == "cuckoo" and self.eta != 1)):
            raise ValueError("eta must be positive, and exactly 1 in cuckoo mode")

    def client_eta(self, t: int) -> int:
        if self.eta is not None:
            return self.eta
        if self.client_hash_mode == "cuckoo":
            return 1
        return max(1, math.ceil(3 * t / self.m_bins))


@dataclass(frozen=True)
class ProtocolConfig:
    modulus: FieldModulus = field(default_factory=FieldModulus)
    fpr: float = 2.0**-30
    he: str = "transparent"
    ot: str = "dealer"
    seed: int | None = None
    security_param: int = 128
    capacity: int | None = None  # size filters for at least this many server keys
    k_override: int | None = None

    def filter_params(self, n: int, hash_seed: bytes = bytes(16)) -> FilterParams:
        cap = max(1, n, self.capacity or 0)
        params = params_for(cap, self.fpr, hash_seed)
        if self.k_override is not None:
            params = FilterParams(max(params.m, self.k_override), self.k_override, hash_seed)
        return params


def derive_bytes(seed: int | None, label: str, n: int) -> bytes:
    if seed is None:
        return np.random.default_rng().bytes(n)
    return hashlib.blake2b(
        struct.pack("<q", seed) + label.encode(), digest_size=max(16, n)
    ).digest()[:n]


def party_rng(seed: int | None, role: int) -> np.random.Generator:
    if seed is None:
        return np.random.default_rng()
    return np.random.default_rng([seed & (2**63 - 1), role])


@dataclass
class ServerFilters:
    bf: BloomFilter
    gbf: GarbledBloomFilter
    params: FilterParams

    @classmethod
    def build(
        cls,
        server_input: ServerInput,
        params: FilterParams,
        rng: np.random.Generator,
        modulus: FieldModulus,
        attempts: int = 8,
    ) -> ServerFilters:
        """Build the BF and GBF under one parameter set, re-seeding on insertion failure."""
        for attempt in range(attempts):
            idx = index_matrix(server_input.keys, params)
            try:
                gbf = gbf_build(list(server_input.pairs), params, rng, modulus, indices=idx)
            except InsertionFailure:
                if attempt == attempts - 1:
                    raise
                params = params.with_seed(rng.bytes(16))
                continue
            return cls(bf_build(server_input.keys, params, indices=idx), gbf, params)
        raise AssertionError("unreachable")


def setup(
    server_input: ServerInput,
    params: FilterParams,
    rng: np.random.Generator,
    modulus: FieldModulus | None = None,
) -> ServerFilters:
    return ServerFilters.build(server_input, params, rng, modulus or FieldModulus())


@dataclass
class Group:
    """One independent S-SIP instance inside a session (a bin, a document, ...)."""

    client: ClientInput
    server: ServerInput
    client_dummy: Sequence[bool] | None = None


@dataclass
class PartyResult:
    shares: list[np.ndarray]
    aggregates: list[int]
    counters: dict[str, int]
    metrics: TranscriptMetrics
    dummy: list[np.ndarray] | None = None
    extra: dict = field(default_factory=dict)

    def aggregate(self, p: int) -> int:
        return sum(self.aggregates) % p


@dataclass
class SessionResult:
    protocol: str
    modulus: FieldModulus
    outcomes: list[list[ShareOutcome]]
    client: PartyResult
    server: PartyResult
    session_id: bytes
    fpr_bound: float = 0.0
    false_positive: list[np.ndarray] = field(default_factory=list)

    @property
    def client_aggregate(self) -> int:
        return self.client.aggregate(self.modulus.p)

    @property
    def server_aggregate(self) -> int:
        return self.server.aggregate(self.modulus.p)

    @property
    def value(self) -> int:
        return (self.client_aggregate + self.server_aggregate) % self.modulus.p

    def group_values(self) -> list[int]:
        p = self.modulus.p
        return [(c + s) % p for c, s in zip(self.client.aggregates, self.server.aggregates)]

    def component_values(self, group: int = 0) -> list[int]:
        p = self.modulus.p
        return [o.reconstruct(p) for o in self.outcomes[group]]

    @property
    def flagged(self) -> bool:
        """True if some real client key was a Bloom-filter false positive."""
        return any(bool(np.any(fp)) for fp in self.false_positive)

    @property
    def metrics(self) -> TranscriptMetrics:
        return self.client.metrics

    @property
    def digest(self) -> str:
        return self.client.metrics.digest

    def metric_rows(self, timing: bool = True) -> list[dict]:
        return self.client.metrics.rows(self.session_id, timing)


def plaintext_sip(client: ClientInput, server: ServerInput, p: int) -> int:
    """Brute-force ``sum s_i * g_j`` over matching keys."""
    table = dict(server.pairs)
    return sum(s * table[x] for x, s in client.pairs if x in table) % p


def ideal_components(client: ClientInput, server: ServerInput, p: int) -> list[int]:
    table = dict(server.pairs)
    return [(s * table[x]) % p if x in table else 0 for x, s in client.pairs]


def false_positive_mask(client: ClientInput, server: ServerInput, bf: BloomFilter) -> np.ndarray:
    """Client components that are absent from the server set but pass the filter."""
    if not len(client):
        return np.zeros(0, dtype=bool)
    members = set(server.keys)
    idx = index_matrix(client.keys, bf.params)
    hits = bf.bits[idx].sum(axis=1) == bf.params.k
    absent = np.array([x not in members for x in client.keys])
    return hits & absent
