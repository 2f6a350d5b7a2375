"""Batched S-SIP2: one S-SIP2 instance per hash bin plus a stash instance.

The server copies each item into all ``k`` candidate bins and pads every
bin to ``beta`` with dummies; the client places each item in one bin
(cuckoo or 2-choice) and pads bins to ``eta`` with zero-payload dummies.
Items the client could not place go to a stash that runs one extra,
unbatched instance against the server's whole set, padded to
``stash_bound`` components so its size does not leak how many overflowed.
"""

from __future__ import annotations

import struct
from dataclasses import replace

import numpy as np

from ..binning import (
    BinAssignment,
    BinningParams,
    StashOverflow,
    choose_beta,
    cuckoo_build,
    dummy_key,
    is_dummy,
    pad_client_bins,
    server_bin,
    two_choice_build,
)
from ..filters import FilterParams, params_for
from . import engine
from .common import BatchConfig, ClientInput, ProtocolConfig, ServerInput
from .ssip2 import Ssip2Client, Ssip2Server

_BATCH = struct.Struct("<IIIBBII16s")
_MODES = {"cuckoo": 0, "two-choice": 1}


def encode_batch(cfg: BatchConfig, beta: int, hash_seed: bytes) -> bytes:
    return _BATCH.pack(
        cfg.m_bins, beta, cfg.eta or 0, _MODES[cfg.client_hash_mode], cfg.k, cfg.stash_bound,
        cfg.max_relocations, hash_seed,
    )


def decode_batch(data: bytes) -> tuple[BatchConfig, int, bytes]:
    m_bins, beta, eta, mode, k, stash, relocations, seed = _BATCH.unpack(data)
    names = {v: k for k, v in _MODES.items()}
    cfg = BatchConfig(m_bins, beta, eta or None, names[mode], k, stash, relocations)
    return cfg, beta, seed


def binning_params(
    cfg: BatchConfig, hash_seed: bytes, beta: int | None = None, eta: int = 1
) -> BinningParams:
    return BinningParams(
        m_bins=cfg.m_bins, k=cfg.k, beta=beta, eta=eta, hash_seed=hash_seed,
        max_relocations=cfg.max_relocations, stash_bound=cfg.stash_bound,
    )


def client_assignment(items, cfg: BatchConfig, params: BinningParams, rng) -> BinAssignment:
    """Place client items; 2-choice overflow beyond ``params.eta`` spills to the stash."""
    if cfg.client_hash_mode == "cuckoo":
        return cuckoo_build(items, params, rng)
    assignment = two_choice_build(items, params)
    stash = []
    for content in assignment.bins:
        while len(content) > params.eta:
            stash.append(content.pop())
    if len(stash) > cfg.stash_bound:
        raise StashOverflow(f"two-choice overflow of {len(stash)} exceeds stash bound {cfg.stash_bound}")
    return BinAssignment(assignment.bins, stash)


def bin_filter_params(config: ProtocolConfig, capacity: int, seed: bytes) -> FilterParams:
    params = params_for(max(1, capacity), config.fpr, seed)
    if config.k_override is not None:
        params = FilterParams(max(params.m, config.k_override), config.k_override, seed)
    return params


class BatchedServer(Ssip2Server):
    protocol = "batched"

    def __init__(
        self,
        server_input: ServerInput,
        batch: BatchConfig,
        config: ProtocolConfig,
        rng: np.random.Generator,
        dealer_seed: bytes = bytes(16),
        reveal: bool = False,
    ) -> None:
        self.batch = batch
        self.hash_seed = rng.bytes(16)
        params = binning_params(batch, self.hash_seed)
        self.beta = batch.beta or choose_beta(server_input.keys, params)
        assignment = server_bin(list(server_input.pairs), replace(params, beta=self.beta), rng, config.modulus)
        groups = [ServerInput(tuple(content)) for content in assignment.bins] + [server_input]
        super().__init__(groups, config, rng, dealer_seed, reveal)

    def group_params(self, g: int, grp: ServerInput) -> FilterParams:
        capacity = self.beta if g < self.batch.m_bins else len(grp)
        return bin_filter_params(self.config, capacity, self.rng.bytes(16))

    def batch_header(self) -> bytes:
        return encode_batch(self.batch, self.beta, self.hash_seed)


class BatchedClient(Ssip2Client):
    protocol = "batched"

    def __init__(
        self,
        client_input: ClientInput,
        config: ProtocolConfig,
        rng: np.random.Generator,
        dealer_seed: bytes = bytes(16),
        reveal: bool = False,
    ) -> None:
        if any(is_dummy(key) for key in client_input.keys):
            raise ValueError("client keys may not use the reserved dummy prefix")
        self.items = client_input
        super().__init__(None, config, rng, dealer_seed, reveal)

    def extra_info(self) -> dict:
        return {"stash_size": len(self.assignment.stash), "beta": self.beta}

    def prepare_groups(self, header: engine.SessionHeader) -> list[ClientInput]:
        cfg, beta, seed = decode_batch(header.batch)
        self.batch = cfg
        self.beta = beta
        eta = cfg.client_eta(len(self.items))
        params = binning_params(cfg, seed, beta, eta)
        assignment = client_assignment(list(self.items.pairs), cfg, params, self.rng)
        groups, dummy = [], []
        for row in pad_client_bins(assignment, eta):
            groups.append(ClientInput(tuple(item for item, _ in row)))
            dummy.append(np.array([d for _, d in row], dtype=bool))
        stash = list(assignment.stash)
        n_real = len(stash)
        stash += [(dummy_key("c", cfg.m_bins, slot), 0) for slot in range(n_real, cfg.stash_bound)]
        groups.append(ClientInput(tuple(stash)))
        dummy.append(np.arange(len(stash)) >= n_real)
        self.dummy = dummy
        self.assignment = assignment
        return groups

