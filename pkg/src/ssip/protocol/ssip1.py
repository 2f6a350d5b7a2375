"""S-SIP1: encrypted filters published offline, then OT-based shares.

Key ownership: the **server** generates the HE key pair and publishes
``Enc(BF)`` and ``Enc(GBF)``. For each client component ``(x, s)``:

1. membership: the client sends ``nu = sum Enc(BF[h_i(x)]) + Enc(mu)``
   with ``mu`` in ``[0, p-k-1]``, so the server's plaintext ``eta + mu``
   never wraps mod p. A 1-of-(k+1) bit OT turns ``eta == k`` into XOR
   shares ``b_client ^ b_server``.
2. value: the client sends ``s * sum Enc(GBF[h_i(x)]) - Enc(delta)``;
   the server decrypts ``rho`` so ``delta + rho = s * gbf_sum(x)``.
3. component product: two 1-of-2 OTs give additive shares of
   ``(b_client ^ b_server) * (delta + rho)``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ..field import FieldModulus, sample_uniform
from ..filters import HEADER_SIZE, FilterParams, index_matrix
from ..he import Ciphertext, HEBackend, HEKeyPair, PublicKey, make_backend
from ..ot import DealerOT, OTBackend, PayloadKind, make_ot_backend, ot_transfer_batch
from ..transport import Channel, MsgType
from . import engine
from .common import (
    ClientInput,
    MembershipShares,
    PartyResult,
    ProtocolConfig,
    ServerFilters,
    ServerInput,
    ShareOutcome,
)

_FILE_MAGIC = b"SSIP1PKG"


@dataclass
class OfflinePackage:
    params: FilterParams
    pk: PublicKey
    ct_bf: Ciphertext
    ct_gbf: Ciphertext

    def to_bytes(self) -> bytes:
        """Filter header followed by the two ciphertext arrays."""
        return self.params.to_bytes() + self.ct_bf.to_bytes() + self.ct_gbf.to_bytes()

    @classmethod
    def from_bytes(cls, data: bytes, backend: HEBackend, pk: PublicKey) -> OfflinePackage:
        params = FilterParams.from_bytes(data)
        ct_bf, used = backend.deserialize(data[HEADER_SIZE:], pk)
        ct_gbf = backend.from_bytes(data[HEADER_SIZE + used:], pk)
        if ct_bf.shape != (params.m,) or ct_gbf.shape != (params.m,):
            raise ValueError("package ciphertext arrays do not match the filter size")
        return cls(params, pk, ct_bf, ct_gbf)

    def save(self, path: str | Path, backend: HEBackend) -> None:
        pk = backend.public_key_to_bytes(self.pk)
        name = backend.name.encode()
        body = self.to_bytes()
        with open(path, "wb") as fh:
            fh.write(_FILE_MAGIC + bytes([len(name)]) + name + struct.pack("<I", len(pk)) + pk + body)

    @classmethod
    def load(cls, path: str | Path, backend: HEBackend) -> OfflinePackage:
        data = Path(path).read_bytes()
        if not data.startswith(_FILE_MAGIC):
            raise ValueError(f"{path} is not an offline package file")
        pos = len(_FILE_MAGIC)
        name = data[pos + 1:pos + 1 + data[pos]].decode()
        if name != backend.name:
            raise ValueError(f"package was written by the {name} backend")
        pos += 1 + data[pos]
        (n,) = struct.unpack_from("<I", data, pos)
        pk = backend.public_key_from_bytes(data[pos + 4:pos + 4 + n])
        return cls.from_bytes(data[pos + 4 + n:], backend, pk)


def offline_publish(
    server_input: ServerInput,
    params: FilterParams,
    backend: HEBackend,
    rng: np.random.Generator,
    keypair: HEKeyPair | None = None,
) -> tuple[OfflinePackage, ServerFilters, HEKeyPair]:
    """Build the server filters and encrypt them slot by slot."""
    keypair = keypair or backend.keygen(rng)
    filters = ServerFilters.build(server_input, params, rng, backend.modulus)
    bits = filters.bf.bits.astype(np.uint64)
    ct_bf = backend.encrypt(keypair.pk, bits, rng)
    ct_gbf = backend.encrypt(keypair.pk, filters.gbf.slots, rng)
    return OfflinePackage(filters.params, keypair.pk, ct_bf, ct_gbf), filters, keypair


# pure steps, vectorized over the components of one group


def _gather_sum(backend: HEBackend, cts: Ciphertext, idx: np.ndarray) -> Ciphertext:
    return backend.sum(backend.take(cts, idx), axis=1)


def membership_query(
    backend: HEBackend, package: OfflinePackage, keys: Sequence[bytes], mu: np.ndarray, rng, idx=None
) -> Ciphertext:
    idx = index_matrix(list(keys), package.params) if idx is None else idx
    return backend.add(_gather_sum(backend, package.ct_bf, idx), backend.encrypt(package.pk, mu, rng))


def value_query(
    backend: HEBackend,
    package: OfflinePackage,
    keys: Sequence[bytes],
    s: np.ndarray,
    delta: np.ndarray,
    rng,
    idx=None,
) -> Ciphertext:
    idx = index_matrix(list(keys), package.params) if idx is None else idx
    scaled = backend.plain_mul(_gather_sum(backend, package.ct_gbf, idx), s)
    return backend.sub(scaled, backend.encrypt(package.pk, delta, rng))


def membership_mask(rng, F: FieldModulus, k: int, size: int) -> np.ndarray:
    """Masks in ``[0, p-k-1]`` so that adding an index sum in ``[0, k]`` cannot wrap."""
    return sample_uniform(rng, F, size=size, upper=F.p - k - 1)


def server_flip_index(mu_prime: np.ndarray, k: int) -> np.ndarray:
    return (np.asarray(mu_prime, dtype=np.int64) - k) % (k + 1)


def client_choice(mu: np.ndarray, k: int) -> np.ndarray:
    return np.asarray(mu, dtype=np.int64) % (k + 1)


# in-process sub-protocols


def membership_check(
    keys: Sequence[bytes],
    package: OfflinePackage,
    sk,
    client_backend: HEBackend,
    server_backend: HEBackend,
    client_rng: np.random.Generator,
    server_rng: np.random.Generator,
    ot: OTBackend | None = None,
    mu: np.ndarray | None = None,
) -> list[MembershipShares]:
    F = client_backend.modulus
    k = package.params.k
    mu = membership_mask(client_rng, F, k, len(keys)) if mu is None else np.asarray(mu, dtype=np.uint64)
    nu = membership_query(client_backend, package, keys, mu, client_rng)
    nu = server_backend.from_bytes(nu.to_bytes(), package.pk)
    mu_prime = server_backend.decrypt(sk, nu)
    b_server = server_rng.integers(0, 2, size=len(keys), dtype=np.uint8)
    msgs = engine.membership_ot_messages(server_flip_index(mu_prime, k), b_server, k + 1)
    ot = ot or DealerOT(bytes(16), F)
    b_client = ot_transfer_batch(msgs.tolist(), client_choice(mu, k).tolist(), PayloadKind.BIT, ot, rng=client_rng)
    return [MembershipShares(int(c), int(s)) for c, s in zip(b_client, b_server)]


def value_extract(
    keys: Sequence[bytes],
    s: Sequence[int],
    package: OfflinePackage,
    sk,
    client_backend: HEBackend,
    server_backend: HEBackend,
    client_rng: np.random.Generator,
    delta: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Returns ``(delta, rho)``; ``delta + rho = s * gbf_sum(x)`` per component."""
    F = client_backend.modulus
    s = F.array(np.asarray(s, dtype=object))
    delta = sample_uniform(client_rng, F, size=len(keys)) if delta is None else np.asarray(delta, dtype=np.uint64)
    ct = value_query(client_backend, package, keys, s, delta, client_rng)
    ct = server_backend.from_bytes(ct.to_bytes(), package.pk)
    return delta, server_backend.decrypt(sk, ct)


def component_product(
    b_client,
    delta,
    b_server,
    rho,
    modulus: FieldModulus,
    client_rng: np.random.Generator,
    server_rng: np.random.Generator,
    ot: OTBackend | None = None,
    Delta=None,
    alpha=None,
) -> list[ShareOutcome]:
    """Additive shares of ``(b_client ^ b_server) * (delta + rho)`` via two OTs."""
    F = modulus
    b0 = np.atleast_1d(np.asarray(b_client, dtype=np.uint64))
    b1 = np.atleast_1d(np.asarray(b_server, dtype=np.uint64))
    delta = np.atleast_1d(np.asarray(delta, dtype=np.uint64))
    rho = np.atleast_1d(np.asarray(rho, dtype=np.uint64))
    t = len(b0)
    Delta = sample_uniform(client_rng, F, size=t) if Delta is None else np.atleast_1d(np.asarray(Delta, dtype=np.uint64))
    alpha = sample_uniform(server_rng, F, size=t) if alpha is None else np.atleast_1d(np.asarray(alpha, dtype=np.uint64))
    ot = ot or DealerOT(bytes(16), F)
    m1 = engine.product_ot1_messages(b0, delta, Delta, F)
    r = np.array(ot_transfer_batch(m1.tolist(), b1.tolist(), PayloadKind.FIELD, ot, rng=server_rng), dtype=np.uint64)
    m2 = engine.product_ot2_messages(r, b1, rho, alpha, F)
    r_prime = np.array(ot_transfer_batch(m2.tolist(), b0.tolist(), PayloadKind.FIELD, ot, rng=client_rng), dtype=np.uint64)
    client_share = F.sub(r_prime, Delta)
    return [ShareOutcome(int(c), int(a), j) for j, (c, a) in enumerate(zip(client_share, alpha))]


# party state machines


class Ssip1Server:
    """Server side of a multi-group S-SIP1 session."""

    def __init__(
        self,
        groups: Sequence[ServerInput],
        config: ProtocolConfig,
        rng: np.random.Generator,
        dealer_seed: bytes = bytes(16),
        published: tuple[HEKeyPair, Sequence[OfflinePackage], Sequence[ServerFilters]] | None = None,
        send_offline: bool = True,
        reveal: bool = False,
    ) -> None:
        self.groups = list(groups)
        self.config = config
        self.rng = rng
        self.F = config.modulus
        self.he = make_backend(config.he, self.F)
        self.ot = make_ot_backend(config.ot, self.F, dealer_seed)
        self.published = published
        self.send_offline = send_offline or published is None
        self.reveal = reveal

    def publish(self) -> tuple[HEKeyPair, list[OfflinePackage], list[ServerFilters]]:
        keypair = self.he.keygen(self.rng, self.config.security_param)
        packages, filters = [], []
        for grp in self.groups:
            params = self.config.filter_params(len(grp), self.rng.bytes(16))
            pkg, flt, _ = offline_publish(grp, params, self.he, self.rng, keypair)
            packages.append(pkg)
            filters.append(flt)
        return keypair, packages, filters

    def run(self, chan: Channel) -> PartyResult:
        F = self.F
        chan.phase("setup")
        keypair, packages, filters = self.published or self.publish()
        self.filters = filters
        header = engine.SessionHeader(
            "ssip1", F.p, engine.KEY_SERVER, self.he.name, self.ot.name,
            [pkg.params for pkg in packages], self.send_offline, keypair.pk.key_id,
        )
        chan.send(MsgType.SESSION_HEADER, header.to_bytes())
        driver = engine.OTDriver(self.ot, chan, self.rng)
        driver.send_setup()
        if self.send_offline:
            chan.phase("offline")
            chan.send(MsgType.PUBLIC_KEY, self.he.public_key_to_bytes(keypair.pk))
            for g, pkg in enumerate(packages):
                chan.send(MsgType.OFFLINE_PACKAGE, pkg.to_bytes(), g)

        chan.phase("online")
        sizes = engine.recv_client_header(chan)
        if len(sizes) != len(packages):
            raise ValueError(f"client sent {len(sizes)} groups, server has {len(packages)}")
        driver.recv_setup()
        chan.gather(engine.component_keys([MsgType.MEMBERSHIP_CT, MsgType.VALUE_CT, MsgType.OT_MSG2], sizes))
        tails = []
        for g, (t, pkg) in enumerate(zip(sizes, packages)):
            k = pkg.params.k
            nu = engine.recv_cts(chan, MsgType.MEMBERSHIP_CT, self.he, keypair.pk, g, t)
            nu_v = engine.recv_cts(chan, MsgType.VALUE_CT, self.he, keypair.pk, g, t)
            mu_prime = self.he.decrypt(keypair.sk, nu)
            rho = self.he.decrypt(keypair.sk, nu_v)
            b_server = self.rng.integers(0, 2, size=t, dtype=np.uint8)
            msgs = engine.membership_ot_messages(server_flip_index(mu_prime, k), b_server, k + 1)
            tails.append(engine.ServerTail(msgs, b_server, np.asarray(rho, dtype=F.dtype)))
        alphas = engine.server_tail(driver, tails, F, self.rng)
        aggregates = [int(F.sum(a)) if len(a) else 0 for a in alphas]
        if self.reveal:
            chan.phase("reveal")
            engine.send_reveal(chan, aggregates)
        chan.flush()
        chan.metrics.finish()
        counters = dict(self.he.counters)
        counters["ot"] = self.ot.count
        return PartyResult(alphas, aggregates, counters, chan.metrics, extra={"bits": [t.b_server for t in tails]})


class Ssip1Client:
    """Client side of a multi-group S-SIP1 session."""

    def __init__(
        self,
        groups: Sequence[ClientInput],
        config: ProtocolConfig,
        rng: np.random.Generator,
        dealer_seed: bytes = bytes(16),
        cached: Sequence[OfflinePackage] | None = None,
        reveal: bool = False,
    ) -> None:
        self.groups = list(groups)
        self.config = config
        self.rng = rng
        self.F = config.modulus
        self.he = make_backend(config.he, self.F)
        self.ot = make_ot_backend(config.ot, self.F, dealer_seed)
        self.cached = list(cached) if cached is not None else None
        self.reveal = reveal

    def run(self, chan: Channel) -> PartyResult:
        F = self.F
        chan.phase("setup")
        header = engine.SessionHeader.from_bytes(chan.recv(MsgType.SESSION_HEADER))
        header.check("ssip1", F.p, self.he.name, self.ot.name)
        if len(header.params) != len(self.groups):
            raise ValueError(f"server has {len(header.params)} groups, client has {len(self.groups)}")
        driver = engine.OTDriver(self.ot, chan, self.rng)
        driver.recv_setup()
        if header.offline_included:
            chan.phase("offline")
            pk = self.he.public_key_from_bytes(chan.recv(MsgType.PUBLIC_KEY))
            packages = [
                OfflinePackage.from_bytes(chan.recv(MsgType.OFFLINE_PACKAGE, g), self.he, pk)
                for g in range(len(self.groups))
            ]
        else:
            if self.cached is None or len(self.cached) != len(self.groups):
                raise ValueError("server skipped the offline phase but no cached packages are available")
            packages = self.cached
            if any(p.pk.key_id != header.key_id for p in packages):
                raise ValueError("cached packages belong to a different server key")
        self.packages = packages

        chan.phase("online")
        engine.send_client_header(chan, [len(grp) for grp in self.groups])
        driver.send_setup()
        deltas = []
        for g, (grp, pkg) in enumerate(zip(self.groups, packages)):
            k, t = pkg.params.k, len(grp)
            mu = membership_mask(self.rng, F, k, t)
            delta = sample_uniform(self.rng, F, size=t)
            s = np.asarray(grp.values, dtype=np.uint64) if t else F.zeros(0)
            idx = index_matrix(grp.keys, pkg.params)
            nu = membership_query(self.he, pkg, grp.keys, mu, self.rng, idx)
            nu_v = value_query(self.he, pkg, grp.keys, s, delta, self.rng, idx)
            choice = client_choice(mu, k)
            for j in range(t):
                chan.send(MsgType.MEMBERSHIP_CT, nu[j].to_bytes(), g, j)
                chan.send(MsgType.VALUE_CT, nu_v[j].to_bytes(), g, j)
                driver.request(g, j, engine.OT_MEMBERSHIP, k + 1, int(choice[j]))
            deltas.append(delta)
        shares, bits = engine.client_tail(driver, deltas, F, self.rng)
        aggregates = [int(F.sum(s)) if len(s) else 0 for s in shares]
        extra = {"bits": bits}
        if self.reveal:
            chan.phase("reveal")
            server_aggs = engine.recv_reveal(chan)
            extra["revealed"] = [(a + b) % F.p for a, b in zip(aggregates, server_aggs)]
        chan.metrics.finish()
        counters = dict(self.he.counters)
        counters["ot"] = self.ot.count
        return PartyResult(shares, aggregates, counters, chan.metrics, extra=extra)
