"""Message plumbing shared by the party state machines.

Parties run in lock step: each flow is a batch of frames in one direction,
one frame per component and message kind, tagged ``(bin_id, j)``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from ..field import FieldModulus, sample_uniform
from ..filters import HEADER_SIZE as FILTER_HEADER_SIZE
from ..filters import FilterParams
from ..he import Ciphertext, HEBackend, PublicKey
from ..ot import OTBackend, PayloadKind, instance_id
from ..transport import Channel, MsgType

# OT slots inside one component
OT_MEMBERSHIP, OT_FIRST, OT_SECOND = 0, 1, 2

PROTOCOL_IDS = {"ssip1": 1, "ssip2": 2, "batched": 3}
KEY_SERVER, KEY_CLIENT = 1, 2


class OTDriver:
    """Runs the three-message OT shape over a channel for many instances."""

    def __init__(self, backend: OTBackend, chan: Channel, rng: np.random.Generator):
        self.backend = backend
        self.chan = chan
        self.rng = rng
        self._own = None
        self._peer = None
        self._state: dict[tuple[int, int, int], Any] = {}

    def send_setup(self) -> None:
        payload, self._own = self.backend.sender_setup(self.rng)
        if payload:
            self.chan.send(MsgType.OT_MSG1, payload)

    def recv_setup(self) -> None:
        msg1 = self.chan.recv(MsgType.OT_MSG1) if self._needs_setup() else b""
        self._peer = self.backend.receiver_setup(msg1)

    def _needs_setup(self) -> bool:
        return type(self.backend).sender_setup is not OTBackend.sender_setup

    def _iid(self, bin_id: int, j: int, slot: int) -> bytes:
        return instance_id(self.chan.session_id, bin_id, j, slot)

    def request(self, bin_id: int, j: int, slot: int, n: int, choice: int) -> None:
        payload, state = self.backend.request(self._peer, self._iid(bin_id, j, slot), n, int(choice), self.rng)
        self._state[(bin_id, j, slot)] = (n, int(choice), state)
        self.chan.send(MsgType.OT_MSG2, payload, bin_id, j)

    def respond(self, bin_id: int, j: int, slot: int, msgs: Sequence[int], kind: PayloadKind) -> None:
        msg2 = self.chan.recv(MsgType.OT_MSG2, bin_id, j)
        payload = self.backend.respond(self._own, self._iid(bin_id, j, slot), msgs, kind, msg2)
        self.chan.send(MsgType.OT_MSG3, payload, bin_id, j)

    def finish(self, bin_id: int, j: int, slot: int, kind: PayloadKind) -> int:
        n, choice, state = self._state.pop((bin_id, j, slot))
        msg3 = self.chan.recv(MsgType.OT_MSG3, bin_id, j)
        return self.backend.finish(self._peer, self._iid(bin_id, j, slot), n, choice, kind, state, msg3)


def send_cts(chan: Channel, kind: MsgType, ct: Ciphertext, bin_id: int) -> None:
    """One frame per component of a length-``t`` ciphertext vector."""
    for j in range(ct.shape[0]):
        chan.send(kind, ct[j].to_bytes(), bin_id, j)


def recv_cts(chan: Channel, kind: MsgType, backend: HEBackend, pk: PublicKey, bin_id: int, t: int) -> Ciphertext:
    cts = [backend.from_bytes(chan.recv(kind, bin_id, j), pk) for j in range(t)]
    return backend.stack(cts, pk)


def pack_ints(values: Sequence[int]) -> bytes:
    return struct.pack(f"<I{len(values)}Q", len(values), *(int(v) for v in values))


def unpack_ints(data: bytes, offset: int = 0) -> tuple[list[int], int]:
    (n,) = struct.unpack_from("<I", data, offset)
    values = list(struct.unpack_from(f"<{n}Q", data, offset + 4))
    return values, offset + 4 + 8 * n


def send_client_header(chan: Channel, sizes: Sequence[int]) -> None:
    chan.send(MsgType.CLIENT_HEADER, pack_ints(sizes))


def recv_client_header(chan: Channel) -> list[int]:
    sizes, _ = unpack_ints(chan.recv(MsgType.CLIENT_HEADER))
    return sizes


def send_reveal(chan: Channel, aggregates: Sequence[int]) -> None:
    chan.send(MsgType.REVEAL, pack_ints(aggregates))


def recv_reveal(chan: Channel) -> list[int]:
    values, _ = unpack_ints(chan.recv(MsgType.REVEAL))
    return values


def product_ot1_messages(b0: np.ndarray, delta: np.ndarray, Delta: np.ndarray, F: FieldModulus) -> np.ndarray:
    """Client's OT#1 pair ``(Delta + b0*delta, Delta + (1-b0)*delta)``, shape ``(t, 2)``."""
    b0 = np.asarray(b0, dtype=np.uint64)
    m0 = F.add(Delta, F.mul(b0, delta))
    m1 = F.add(Delta, F.mul(np.uint64(1) - b0, delta))
    return np.stack([m0, m1], axis=-1)


def product_ot2_messages(
    r: np.ndarray, b1: np.ndarray, rho: np.ndarray, alpha: np.ndarray, F: FieldModulus
) -> np.ndarray:
    """Server's OT#2 pair, shape ``(t, 2)``.

    ``m0 = r + b1*(rho - alpha) - (1-b1)*alpha`` and
    ``m1 = r + (1-b1)*(rho - alpha) - b1*alpha``.
    """
    b1 = np.asarray(b1, dtype=np.uint64)
    nb1 = np.uint64(1) - b1
    diff = F.sub(rho, alpha)
    m0 = F.sub(F.add(r, F.mul(b1, diff)), F.mul(nb1, alpha))
    m1 = F.sub(F.add(r, F.mul(nb1, diff)), F.mul(b1, alpha))
    return np.stack([m0, m1], axis=-1)


def membership_ot_messages(flip_index: np.ndarray, b_server: np.ndarray, n: int) -> np.ndarray:
    """Bit vectors equal to ``b_server`` except at ``flip_index``, shape ``(t, n)``."""
    b = np.asarray(b_server, dtype=np.uint8)
    msgs = np.repeat(b[:, None], n, axis=1)
    rows = np.arange(len(b))
    msgs[rows, np.asarray(flip_index, dtype=np.int64)] ^= 1
    return msgs


_SESSION = struct.Struct("<BQBBIB8s")


@dataclass
class SessionHeader:
    """First frame of every session, sent by the server."""

    protocol: str
    p: int
    key_owner: int
    he: str
    ot: str
    params: list[FilterParams]
    offline_included: bool = True
    key_id: bytes = bytes(8)
    batch: bytes = b""  # opaque batched-mode parameters

    def to_bytes(self) -> bytes:
        he, ot = self.he.encode(), self.ot.encode()
        head = _SESSION.pack(
            PROTOCOL_IDS[self.protocol], self.p, self.key_owner, int(self.offline_included),
            len(self.params), len(he), self.key_id,
        )
        body = he + bytes([len(ot)]) + ot + b"".join(fp.to_bytes() for fp in self.params)
        return head + body + struct.pack("<I", len(self.batch)) + self.batch

    @classmethod
    def from_bytes(cls, data: bytes) -> SessionHeader:
        pid, p, owner, offline, groups, he_len, key_id = _SESSION.unpack_from(data)
        pos = _SESSION.size
        he = data[pos:pos + he_len].decode()
        pos += he_len
        ot_len = data[pos]
        ot = data[pos + 1:pos + 1 + ot_len].decode()
        pos += 1 + ot_len
        params = []
        for _ in range(groups):
            params.append(FilterParams.from_bytes(data[pos:pos + FILTER_HEADER_SIZE]))
            pos += FILTER_HEADER_SIZE
        (blen,) = struct.unpack_from("<I", data, pos)
        batch = data[pos + 4:pos + 4 + blen]
        names = {v: k for k, v in PROTOCOL_IDS.items()}
        return cls(names[pid], p, owner, he, ot, params, bool(offline), key_id, batch)

    def check(self, protocol: str, p: int, he: str, ot: str) -> None:
        expected = (protocol, p, he, ot)
        got = (self.protocol, self.p, self.he, self.ot)
        if expected != got:
            raise ValueError(f"session mismatch: peer runs {got}, we run {expected}")


@dataclass
class ServerTail:
    """Server material for one group entering the membership OT."""

    membership_msgs: np.ndarray  # (t, k+1) bits
    b_server: np.ndarray  # (t,)
    rho: np.ndarray  # (t,)


def component_keys(kinds: Sequence[MsgType], sizes: Sequence[int]) -> list[tuple[MsgType, int, int]]:
    return [(kind, g, j) for g, t in enumerate(sizes) for j in range(t) for kind in kinds]


def server_tail(driver: OTDriver, groups: Sequence[ServerTail], F: FieldModulus, rng) -> list[np.ndarray]:
    """Membership OT answers, then the component product; returns alpha per group."""
    chan = driver.chan
    sizes = [len(grp.b_server) for grp in groups]
    chan.gather(component_keys([MsgType.OT_MSG2], sizes))
    for g, grp in enumerate(groups):
        for j in range(len(grp.b_server)):
            driver.respond(g, j, OT_MEMBERSHIP, grp.membership_msgs[j].tolist(), PayloadKind.BIT)
            driver.request(g, j, OT_FIRST, 2, int(grp.b_server[j]))
    chan.gather(component_keys([MsgType.OT_MSG3, MsgType.OT_MSG2], sizes))
    alphas = []
    for g, grp in enumerate(groups):
        t = len(grp.b_server)
        r = np.array([driver.finish(g, j, OT_FIRST, PayloadKind.FIELD) for j in range(t)], dtype=F.dtype)
        alpha = sample_uniform(rng, F, size=t)
        msgs = product_ot2_messages(r, grp.b_server, grp.rho, alpha, F)
        for j in range(t):
            driver.respond(g, j, OT_SECOND, msgs[j].tolist(), PayloadKind.FIELD)
        alphas.append(alpha)
    return alphas


def client_tail(
    driver: OTDriver, deltas: Sequence[np.ndarray], F: FieldModulus, rng
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Finish the membership OT, run the component product; returns (shares, bits)."""
    chan = driver.chan
    sizes = [len(d) for d in deltas]
    chan.gather(component_keys([MsgType.OT_MSG3, MsgType.OT_MSG2], sizes))
    Deltas, bits = [], []
    for g, delta in enumerate(deltas):
        t = len(delta)
        b0 = np.array([driver.finish(g, j, OT_MEMBERSHIP, PayloadKind.BIT) for j in range(t)], dtype=np.uint64)
        Delta = sample_uniform(rng, F, size=t)
        msgs = product_ot1_messages(b0, delta, Delta, F)
        for j in range(t):
            driver.respond(g, j, OT_FIRST, msgs[j].tolist(), PayloadKind.FIELD)
            driver.request(g, j, OT_SECOND, 2, int(b0[j]))
        Deltas.append(Delta)
        bits.append(b0)
    chan.gather(component_keys([MsgType.OT_MSG3], sizes))
    shares = []
    for g, Delta in enumerate(Deltas):
        t = len(Delta)
        r_prime = np.array([driver.finish(g, j, OT_SECOND, PayloadKind.FIELD) for j in range(t)], dtype=F.dtype)
        shares.append(F.sub(r_prime, Delta))
    return shares, bits
