"""Client-side cuckoo / 2-choice hashing and server-side k-way replication.

Both sides derive candidate bins with the same keyed hash, so a client
item sitting in bin ``b`` is guaranteed to meet its server twin there.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .field import FieldModulus, sample_uniform
from .filters import FilterParams, derive_indices

DUMMY_PREFIX = b"\x00\xffssip-dummy:"

Item = tuple[bytes, int]


class StashOverflow(RuntimeError):
    """Cuckoo insertion left more items in the stash than allowed."""


class BinOverflow(RuntimeError):
    """A bin holds more items than its configured capacity."""


def is_dummy(key: bytes) -> bool:
    return key.startswith(DUMMY_PREFIX)


def dummy_key(side: str, bin_id: int, slot: int) -> bytes:
    return DUMMY_PREFIX + side.encode() + b":" + bin_id.to_bytes(4, "little") + slot.to_bytes(4, "little")


@dataclass(frozen=True)
class BinningParams:
    m_bins: int
    k: int = 3
    beta: int | None = None
    eta: int = 1
    hash_seed: bytes = bytes(16)
    max_relocations: int = 500
    stash_bound: int | None = 4

    def __post_init__(self) -> None:
        if self.m_bins < self.k or self.k < 1:
            raise ValueError("need m_bins >= k >= 1")
        if self.eta < 1 or (self.beta is not None and self.beta < 1):
            raise ValueError("bin capacities must be positive")

    @property
    def hashing(self) -> FilterParams:
        return FilterParams(self.m_bins, self.k, self.hash_seed)

    def candidates(self, key: bytes) -> list[int]:
        return derive_indices(key, self.hashing)


@dataclass
class BinAssignment:
    bins: list[list[Item]]
    stash: list[Item] = field(default_factory=list)

    @property
    def loads(self) -> list[int]:
        return [len(b) for b in self.bins]

    @property
    def max_load(self) -> int:
        return max(self.loads, default=0)


def cuckoo_build(
    items: Sequence[Item], params: BinningParams, rng: np.random.Generator
) -> BinAssignment:
    """One item per bin via random-walk cuckoo insertion, overflow to a stash."""
    if params.m_bins < math.ceil(1.27 * len(items)):
        raise ValueError(f"{params.m_bins} bins is too few for {len(items)} items")
    table: list[Item | None] = [None] * params.m_bins
    cands: dict[bytes, list[int]] = {}
    stash: list[Item] = []
    for item in items:
        current = item
        last_bin = -1
        for _ in range(params.max_relocations + 1):
            key = current[0]
            options = cands.setdefault(key, params.candidates(key))
            empty = next((b for b in options if table[b] is None), None)
            if empty is not None:
                table[empty] = current
                current = None
                break
            choices = [b for b in options if b != last_bin] or options
            victim_bin = choices[int(rng.integers(len(choices)))]
            current, table[victim_bin] = table[victim_bin], current
            last_bin = victim_bin
        if current is not None:
            stash.append(current)
    if params.stash_bound is not None and len(stash) > params.stash_bound:
        raise StashOverflow(f"stash holds {len(stash)} items, bound is {params.stash_bound}")
    return BinAssignment([[x] if x is not None else [] for x in table], stash)


def two_choice_build(items: Sequence[Item], params: BinningParams) -> BinAssignment:
    """Greedy 2-choice placement; ties go to the first candidate."""
    if params.k < 2:
        raise ValueError("two-choice hashing needs k >= 2")
    bins: list[list[Item]] = [[] for _ in range(params.m_bins)]
    for item in items:
        h1, h2 = params.candidates(item[0])[:2]
        target = h1 if len(bins[h1]) <= len(bins[h2]) else h2
        bins[target].append(item)
    return BinAssignment(bins)


def replicated_loads(keys: Sequence[bytes], params: BinningParams) -> list[int]:
    loads = [0] * params.m_bins
    for key in keys:
        for b in params.candidates(key):
            loads[b] += 1
    return loads


def choose_beta(keys: Sequence[bytes], params: BinningParams) -> int:
    """Max replicated load rounded up to a power of two."""
    top = max(replicated_loads(keys, params), default=0)
    return 1 << max(0, math.ceil(math.log2(max(top, 1))))


def server_bin(
    items: Sequence[Item],
    params: BinningParams,
    rng: np.random.Generator,
    modulus: FieldModulus | None = None,
) -> BinAssignment:
    """Copy every item into each of its ``k`` candidate bins, then pad to beta."""
    modulus = modulus or FieldModulus()
    beta = params.beta if params.beta is not None else choose_beta([x[0] for x in items], params)
    bins: list[list[Item]] = [[] for _ in range(params.m_bins)]
    for item in items:
        for b in params.candidates(item[0]):
            bins[b].append(item)
    for b, content in enumerate(bins):
        if len(content) > beta:
            raise BinOverflow(f"bin {b} holds {len(content)} items, beta is {beta}")
        pad = beta - len(content)
        if pad:
            values = sample_uniform(rng, modulus, size=pad)
            content.extend(
                (dummy_key("s", b, slot), int(v)) for slot, v in enumerate(values)
            )
    return BinAssignment(bins)


def pad_client_bins(assignment: BinAssignment, eta: int) -> list[list[tuple[Item, bool]]]:
    """Pad each client bin to ``eta`` with zero-payload dummies.

    Returns per-bin lists of ``(item, is_dummy)``.
    """
    padded = []
    for b, content in enumerate(assignment.bins):
        if len(content) > eta:
            raise BinOverflow(f"client bin {b} holds {len(content)} items, eta is {eta}")
        row = [(item, False) for item in content]
        row.extend(((dummy_key("c", b, slot), 0), True) for slot in range(len(content), eta))
        padded.append(row)
    return padded
