"""1-out-of-n oblivious transfer of bits and field elements.

Both backends follow the same three-message shape so a protocol engine
can drive them uniformly:

* ``OT_MSG1`` sender setup, sent once per session (may be empty),
* ``OT_MSG2`` the receiver's request for one instance,
* ``OT_MSG3`` the sender's masked messages for that instance.

Because the request only depends on the receiver's choice, engines may
send it ahead of time, alongside the receiver's previous message.

:class:`DealerOT` derandomizes random OT correlations handed out by a
trusted dealer (modelled as a shared seed both parties receive). It is
fast and correct but the dealer seed lets either holder recompute the
other side, so it is **not** secure between the two parties.
:class:`ChouOrlandiOT` is the discrete-log OT of Chou and Orlandi over
the 2048-bit MODP group, generalised to n messages.
"""

from __future__ import annotations

import hashlib
import logging
import struct
from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum
from typing import Any, Sequence

import numpy as np

from .field import FieldModulus

log = logging.getLogger(__name__)


class PayloadKind(str, Enum):
    BIT = "bit"
    FIELD = "field"


class OTError(RuntimeError):
    pass


class ArityMismatch(OTError):
    pass


@dataclass(frozen=True)
class OTSession:
    role: str
    n: int
    payload_kind: PayloadKind

    def __post_init__(self) -> None:
        if self.role not in ("sender", "receiver"):
            raise ValueError(f"role must be sender or receiver, got {self.role!r}")
        if self.n < 2:
            raise ArityMismatch("an OT needs at least two messages")


def instance_id(session_id: bytes, bin_id: int, j: int, slot: int) -> bytes:
    """Unique label for one OT inside a session."""
    return session_id + struct.pack("<IIH", bin_id, j, slot)


def _element_width(kind: PayloadKind) -> int:
    return 8 if kind == PayloadKind.FIELD else 1


def _pad_value(digest: bytes, kind: PayloadKind, modulus: FieldModulus) -> int:
    if kind == PayloadKind.BIT:
        return digest[0] & 1
    # 128 bits reduced mod p: bias below 2^-80
    return int.from_bytes(digest[:16], "little") % modulus.p


def _mask(value: int, pad: int, kind: PayloadKind, modulus: FieldModulus) -> int:
    return value ^ pad if kind == PayloadKind.BIT else (value + pad) % modulus.p


def _unmask(value: int, pad: int, kind: PayloadKind, modulus: FieldModulus) -> int:
    return value ^ pad if kind == PayloadKind.BIT else (value - pad) % modulus.p


def _encode_messages(values: Sequence[int], kind: PayloadKind) -> bytes:
    if kind == PayloadKind.BIT:
        return bytes(int(v) for v in values)
    return b"".join(int(v).to_bytes(8, "little") for v in values)


def _decode_messages(data: bytes, n: int, kind: PayloadKind) -> list[int]:
    w = _element_width(kind)
    if len(data) != n * w:
        raise ArityMismatch(f"expected {n} messages of {w} bytes, got {len(data)} bytes")
    return [int.from_bytes(data[i * w:(i + 1) * w], "little") for i in range(n)]


def _check_messages(msgs: Sequence[int], n: int, kind: PayloadKind, modulus: FieldModulus) -> None:
    if len(msgs) != n:
        raise ArityMismatch(f"sender supplied {len(msgs)} messages for a 1-of-{n} OT")
    bound = 2 if kind == PayloadKind.BIT else modulus.p
    for m in msgs:
        if not 0 <= int(m) < bound:
            raise ValueError(f"message {m} out of range for {kind.value} payload")


class OTBackend(ABC):
    name = ""
    secure = False

    def __init__(self, modulus: FieldModulus | None = None) -> None:
        self.modulus = modulus or FieldModulus()
        self.count = 0

    def sender_setup(self, rng: np.random.Generator) -> tuple[bytes, Any]:
        """Payload of this party's ``OT_MSG1`` and its private sender state."""
        return b"", None

    def receiver_setup(self, msg1: bytes) -> Any:
        """Parse the peer's ``OT_MSG1``."""
        return None

    @abstractmethod
    def request(
        self, peer: Any, iid: bytes, n: int, choice: int, rng: np.random.Generator
    ) -> tuple[bytes, Any]:
        """Receiver side: ``OT_MSG2`` payload and the state kept for :meth:`finish`."""

    @abstractmethod
    def respond(
        self, own: Any, iid: bytes, msgs: Sequence[int], kind: PayloadKind, msg2: bytes
    ) -> bytes:
        """Sender side: ``OT_MSG3`` payload."""

    @abstractmethod
    def finish(
        self, peer: Any, iid: bytes, n: int, choice: int, kind: PayloadKind, state: Any, msg3: bytes
    ) -> int:
        """Receiver side: recover the chosen message."""


class DealerOT(OTBackend):
    """Random-OT correlations from a trusted dealer, derandomized on line.

    For each instance the dealer gives the sender pads ``R_0..R_{n-1}`` and
    the receiver a random index ``c`` with ``R_c``. The receiver sends
    ``e = choice - c mod n``; the sender replies ``y_i = m_i + R_{i-e}``.
    """

    name = "dealer"
    secure = False

    def __init__(self, dealer_seed: bytes, modulus: FieldModulus | None = None) -> None:
        super().__init__(modulus)
        if len(dealer_seed) < 16:
            raise ValueError("dealer seed must be at least 16 bytes")
        self.dealer_seed = dealer_seed[:64]

    def _stream(self, iid: bytes, label: bytes) -> bytes:
        return hashlib.blake2b(label + iid, key=self.dealer_seed, digest_size=32).digest()

    def _offset(self, iid: bytes, n: int) -> int:
        return int.from_bytes(self._stream(iid, b"c"), "little") % n

    def _pad(self, iid: bytes, i: int, kind: PayloadKind) -> int:
        return _pad_value(self._stream(iid, b"R" + i.to_bytes(4, "little")), kind, self.modulus)

    def request(self, peer, iid, n, choice, rng):
        if not 0 <= choice < n:
            raise ArityMismatch(f"choice {choice} outside [0, {n})")
        e = (choice - self._offset(iid, n)) % n
        return struct.pack("<I", e), None

    def respond(self, own, iid, msgs, kind, msg2):
        n = len(msgs)
        _check_messages(msgs, n, kind, self.modulus)
        (e,) = struct.unpack("<I", msg2)
        if e >= n:
            raise ArityMismatch("request offset out of range")
        self.count += 1
        masked = [_mask(int(m), self._pad(iid, (i - e) % n, kind), kind, self.modulus) for i, m in enumerate(msgs)]
        return _encode_messages(masked, kind)

    def finish(self, peer, iid, n, choice, kind, state, msg3):
        ys = _decode_messages(msg3, n, kind)
        return _unmask(ys[choice], self._pad(iid, self._offset(iid, n), kind), kind, self.modulus)


# RFC 3526 group 14
MODP_2048 = int(
    "FFFFFFFFFFFFFFFFC90FDAA22168C234C4C6628B80DC1CD129024E088A67CC74"
    "020BBEA63B139B22514A08798E3404DDEF9519B3CD3A431B302B0A6DF25F1437"
    "4FE1356D6D51C245E485B576625E7EC6F44C42E9A637ED6B0BFF5CB6F406B7ED"
    "EE386BFB5A899FA5AE9F24117C4B1FE649286651ECE45B3DC2007CB8A163BF05"
    "98DA48361C55D39A69163FA8FD24CF5F83655D23DCA3AD961C62F356208552BB"
    "9ED529077096966D670C354E4ABC9804F1746C08CA18217C32905E462E36CE3B"
    "E39E772C180E86039B2783A2EC07A28FB5C55DF06F4C52C9DE2BCBF695581718"
    "3995497CEA956AE515D2261898FA051015728E5A8AACAA68FFFFFFFFFFFFFFFF",
    16,
)
_GEN = 2
_ELEM_BYTES = 256
_EXP_BITS = 256


def _rand_exponent(rng: np.random.Generator) -> int:
    return int.from_bytes(rng.bytes(_EXP_BITS // 8), "little") | 1


def _group_elem(data: bytes) -> int:
    if len(data) != _ELEM_BYTES:
        raise OTError("group element has wrong length")
    v = int.from_bytes(data, "big")
    if not 1 < v < MODP_2048 - 1:
        raise OTError("group element out of range")
    return v


class ChouOrlandiOT(OTBackend):
    """Discrete-log 1-of-n OT (semi-honest), one sender key per session.

    Sender: ``A = g^a``. Receiver with choice ``c``: ``B = g^b * A^c``.
    Key ``i`` is ``H(iid, i, (B / A^i)^a)``; the receiver derives
    ``H(iid, c, A^b)``. Different instances reuse ``A`` but never ``b``.
    """

    name = "crypto"
    secure = True

    @staticmethod
    def _key(iid: bytes, i: int, point: int) -> bytes:
        return hashlib.sha256(iid + i.to_bytes(4, "little") + point.to_bytes(_ELEM_BYTES, "big")).digest()

    def sender_setup(self, rng):
        a = _rand_exponent(rng)
        A = pow(_GEN, a, MODP_2048)
        T_inv = pow(pow(A, a, MODP_2048), -1, MODP_2048)
        return A.to_bytes(_ELEM_BYTES, "big"), (a, T_inv)

    def receiver_setup(self, msg1):
        return _group_elem(msg1)

    def request(self, peer, iid, n, choice, rng):
        if not 0 <= choice < n:
            raise ArityMismatch(f"choice {choice} outside [0, {n})")
        A = peer
        b = _rand_exponent(rng)
        B = pow(_GEN, b, MODP_2048) * pow(A, choice, MODP_2048) % MODP_2048
        return B.to_bytes(_ELEM_BYTES, "big"), b

    def respond(self, own, iid, msgs, kind, msg2):
        a, T_inv = own
        n = len(msgs)
        _check_messages(msgs, n, kind, self.modulus)
        B = _group_elem(msg2)
        point = pow(B, a, MODP_2048)  # (B / A^i)^a = B^a * (A^a)^{-i}
        out = []
        for i, m in enumerate(msgs):
            pad = _pad_value(self._key(iid, i, point), kind, self.modulus)
            out.append(_mask(int(m), pad, kind, self.modulus))
            point = point * T_inv % MODP_2048
        self.count += 1
        return _encode_messages(out, kind)

    def finish(self, peer, iid, n, choice, kind, state, msg3):
        A, b = peer, state
        ys = _decode_messages(msg3, n, kind)
        pad = _pad_value(self._key(iid, choice, pow(A, b, MODP_2048)), kind, self.modulus)
        return _unmask(ys[choice], pad, kind, self.modulus)


def make_ot_backend(name: str, modulus: FieldModulus | None = None, dealer_seed: bytes = b"") -> OTBackend:
    if name == DealerOT.name:
        return DealerOT(dealer_seed or bytes(16), modulus)
    if name == ChouOrlandiOT.name:
        return ChouOrlandiOT(modulus)
    raise ValueError(f"unknown OT backend {name!r}; choose dealer or crypto")


def ot_transfer_batch(
    sender_msgs: Sequence[Sequence[int]],
    choices: Sequence[int],
    kind: PayloadKind | str,
    sender_backend: OTBackend,
    receiver_backend: OTBackend | None = None,
    rng: np.random.Generator | None = None,
    session_id: bytes = bytes(8),
    transcript: list[bytes] | None = None,
) -> list[int]:
    """Run independent OTs in process and return the receiver's outputs.

    Each side uses its own backend object so counters stay per party.
    ``transcript``, when given, collects every message that would go on
    the wire.
    """
    kind = PayloadKind(kind)
    receiver_backend = receiver_backend or sender_backend
    rng = rng or np.random.default_rng()
    if len(sender_msgs) != len(choices):
        raise ArityMismatch("one choice is needed per OT instance")
    msg1, own = sender_backend.sender_setup(rng)
    peer = receiver_backend.receiver_setup(msg1)
    if transcript is not None:
        transcript.append(msg1)
    out = []
    for slot, (msgs, choice) in enumerate(zip(sender_msgs, choices)):
        n = len(msgs)
        if n < 2:
            raise ArityMismatch("an OT needs at least two messages")
        iid = instance_id(session_id, 0, slot, 0)
        msg2, state = receiver_backend.request(peer, iid, n, int(choice), rng)
        msg3 = sender_backend.respond(own, iid, msgs, kind, msg2)
        if transcript is not None:
            transcript.extend((msg2, msg3))
        out.append(receiver_backend.finish(peer, iid, n, int(choice), kind, state, msg3))
    return out


def ot_transfer(
    sender_msgs: Sequence[int],
    receiver_choice: int,
    backend: OTBackend,
    kind: PayloadKind | str = PayloadKind.FIELD,
    rng: np.random.Generator | None = None,
) -> int:
    return ot_transfer_batch([sender_msgs], [receiver_choice], kind, backend, rng=rng)[0]
