"""Bloom filters and garbled Bloom filters over F_p.

Every key maps to ``k`` pairwise-distinct slots drawn from a keyed BLAKE2b
stream, so a garbled filter's slot sum identity holds even when two raw
hash outputs would collide.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .field import FieldModulus, sample_uniform

_HEADER = struct.Struct("<QI16s")


class InsertionFailure(RuntimeError):
    """A garbled filter key found all of its slots already fixed."""


@dataclass(frozen=True)
class FilterParams:
    m: int
    k: int
    hash_seed: bytes = bytes(16)

    def __post_init__(self) -> None:
        if self.k < 1 or self.m < self.k:
            raise ValueError(f"need m >= k >= 1, got m={self.m}, k={self.k}")
        if len(self.hash_seed) != 16:
            raise ValueError("hash_seed must be 16 bytes")

    def to_bytes(self) -> bytes:
        return _HEADER.pack(self.m, self.k, self.hash_seed)

    @classmethod
    def from_bytes(cls, data: bytes) -> FilterParams:
        m, k, seed = _HEADER.unpack_from(data)
        return cls(m, k, seed)

    def with_seed(self, seed: bytes) -> FilterParams:
        return FilterParams(self.m, self.k, seed)

    def false_positive_rate(self, n: int) -> float:
        """Analytic rate ``(1 - e^{-kn/m})^k`` for ``n`` stored keys."""
        return (1.0 - math.exp(-self.k * n / self.m)) ** self.k


HEADER_SIZE = _HEADER.size


def params_for(n: int, target_fpr: float, hash_seed: bytes = bytes(16)) -> FilterParams:
    """Size a filter for ``n`` keys at false-positive rate ``target_fpr``."""
    if not 0.0 < target_fpr < 1.0:
        raise ValueError("target_fpr must be in (0, 1)")
    if n < 1:
        raise ValueError("capacity must be at least 1")
    m = math.ceil(n * abs(math.log(target_fpr)) / math.log(2) ** 2)
    k = max(1, math.floor(m / n * math.log(2) + 0.5))
    return FilterParams(max(m, k), k, hash_seed)


_WORDS = struct.Struct("<8Q")


def derive_indices(key: bytes, params: FilterParams) -> list[int]:
    """Return ``params.k`` distinct slot indices for ``key``.

    Words come from BLAKE2b keyed with the filter seed over
    ``counter || key``; words above the largest multiple of ``m`` are
    rejected to avoid modulo bias, and repeats are skipped.
    """
    m, k = params.m, params.k
    limit = (1 << 64) - ((1 << 64) % m)
    out: list[int] = []
    seen: set[int] = set()
    counter = 0
    while len(out) < k:
        block = hashlib.blake2b(
            counter.to_bytes(4, "little") + key, key=params.hash_seed, digest_size=64
        ).digest()
        for word in _WORDS.unpack(block):
            if word >= limit:
                continue
            idx = word % m
            if idx in seen:
                continue
            seen.add(idx)
            out.append(idx)
            if len(out) == k:
                break
        counter += 1
    return out


def index_matrix(keys: Sequence[bytes], params: FilterParams) -> np.ndarray:
    """Stack :func:`derive_indices` for many keys into a ``(len(keys), k)`` array."""
    if not keys:
        return np.zeros((0, params.k), dtype=np.int64)
    return np.array([derive_indices(key, params) for key in keys], dtype=np.int64)


@dataclass
class BloomFilter:
    bits: np.ndarray
    params: FilterParams

    def __contains__(self, key: bytes) -> bool:
        return bf_contains(self, key)

    def to_bytes(self) -> bytes:
        packed = np.packbits(self.bits.astype(np.uint8), bitorder="little")
        return self.params.to_bytes() + packed.tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> BloomFilter:
        params = FilterParams.from_bytes(data)
        raw = np.frombuffer(data, dtype=np.uint8, offset=HEADER_SIZE)
        bits = np.unpackbits(raw, count=params.m, bitorder="little")
        return cls(bits.astype(np.uint8), params)


@dataclass
class GarbledBloomFilter:
    slots: np.ndarray
    params: FilterParams
    modulus: FieldModulus = field(default_factory=FieldModulus)

    def to_bytes(self) -> bytes:
        return self.params.to_bytes() + self.modulus.to_bytes(self.slots)

    @classmethod
    def from_bytes(cls, data: bytes, modulus: FieldModulus) -> GarbledBloomFilter:
        params = FilterParams.from_bytes(data)
        slots = modulus.from_bytes(data[HEADER_SIZE:])
        if slots.shape[0] != params.m:
            raise ValueError("slot count does not match header")
        return cls(slots, params, modulus)


def bf_build(keys: Iterable[bytes], params: FilterParams, indices: np.ndarray | None = None) -> BloomFilter:
    """Set the ``k`` bits of every key; ``indices`` may carry a precomputed :func:`index_matrix`."""
    bits = np.zeros(params.m, dtype=np.uint8)
    idx = index_matrix(list(keys), params) if indices is None else indices
    bits[np.asarray(idx, dtype=np.int64).reshape(-1)] = 1
    return BloomFilter(bits, params)


def bf_index_sum(bf: BloomFilter, key: bytes) -> int:
    return int(bf.bits[derive_indices(key, bf.params)].sum())


def bf_contains(bf: BloomFilter, key: bytes) -> bool:
    return bf_index_sum(bf, key) == bf.params.k


def gbf_build(
    pairs: Sequence[tuple[bytes, int]],
    params: FilterParams,
    rng: np.random.Generator,
    modulus: FieldModulus | None = None,
    indices: np.ndarray | None = None,
) -> GarbledBloomFilter:
    """Store ``(key, value)`` pairs so the key's ``k`` slots sum to the value.

    Pairs are processed in the given order. Each new key fills its free
    slots with uniform values except the last one, which absorbs the
    residual. Slots nobody claimed end up uniform too.
    """
    modulus = modulus or FieldModulus()
    p = modulus.p
    # one uniform draw per slot covers both the free non-absorbing slots
    # and the never-claimed ones
    slots = [int(v) for v in sample_uniform(rng, modulus, size=params.m)]
    fixed = bytearray(params.m)
    seen: set[bytes] = set()
    for row, (key, value) in enumerate(pairs):
        if key in seen:
            raise ValueError(f"duplicate key {key!r}")
        seen.add(key)
        idx = derive_indices(key, params) if indices is None else indices[row].tolist()
        free = [i for i in idx if not fixed[i]]
        if not free:
            raise InsertionFailure(f"no free slot for key {key!r}")
        absorber = free[-1]
        for i in free:
            fixed[i] = 1
        partial = sum(slots[i] for i in idx if i != absorber)
        slots[absorber] = (int(value) - partial) % p
    return GarbledBloomFilter(np.array(slots, dtype=modulus.dtype), params, modulus)


def gbf_sum(gbf: GarbledBloomFilter, key: bytes) -> int:
    idx = derive_indices(key, gbf.params)
    return sum(int(gbf.slots[i]) for i in idx) % gbf.modulus.p
