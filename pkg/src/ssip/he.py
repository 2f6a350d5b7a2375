"""Homomorphic encryption interface with depth-1 multiplication.

Two backends implement the same algebra over F_p:

* :class:`TransparentBackend` carries plaintexts next to a random nonce.
  It exists for correctness testing and is **not** secure.
* :class:`IntegerBackend` is a somewhat-homomorphic scheme over the
  integers (DGHV style, plaintext modulus p). Ciphertexts are randomized
  big integers; the default parameters are sized for correctness of one
  multiplication plus large linear combinations, not for a security level.

Ciphertexts are array-valued so that a vector of encryptions shares one
object; a scalar ciphertext simply has shape ``()``.
"""

from __future__ import annotations

import logging
import math
import struct
from abc import ABC, abstractmethod
from collections import Counter
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .field import FieldModulus

log = logging.getLogger(__name__)

FRESH = 0
MULTIPLIED = 1


class HEError(RuntimeError):
    pass


class KeyMismatch(HEError):
    pass


class LevelError(HEError):
    pass


class MalformedCiphertext(HEError):
    pass


@dataclass(frozen=True)
class PublicKey:
    backend: str
    key_id: bytes
    modulus: FieldModulus
    material: tuple[int, ...] = ()


@dataclass(frozen=True)
class SecretKey:
    backend: str
    key_id: bytes
    modulus: FieldModulus
    material: tuple[int, ...] = ()


@dataclass(frozen=True)
class HEKeyPair:
    pk: PublicKey
    sk: SecretKey


@dataclass(eq=False)
class Ciphertext:
    backend: HEBackend
    pk: PublicKey
    data: np.ndarray
    level: int = FRESH
    nonce: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __len__(self) -> int:
        return len(self.data)

    def __getitem__(self, index) -> Ciphertext:
        nonce = None if self.nonce is None else np.asarray(self.nonce[index])
        return Ciphertext(self.backend, self.pk, np.asarray(self.data[index]), self.level, nonce)

    def reshape(self, *shape) -> Ciphertext:
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        nonce = None if self.nonce is None else self.nonce.reshape(shape)
        return Ciphertext(self.backend, self.pk, self.data.reshape(shape), self.level, nonce)

    @property
    def T(self) -> Ciphertext:
        nonce = None if self.nonce is None else self.nonce.T
        return Ciphertext(self.backend, self.pk, self.data.T, self.level, nonce)

    def __add__(self, other: Ciphertext) -> Ciphertext:
        return self.backend.add(self, other)

    def __sub__(self, other: Ciphertext) -> Ciphertext:
        return self.backend.sub(self, other)

    def to_bytes(self) -> bytes:
        return self.backend.serialize(self)


_CT_HEAD = struct.Struct("<BI")


class HEBackend(ABC):
    """Array-valued homomorphic operations; subclasses supply the data algebra."""

    name: str = ""
    tag: int = 0
    secure: bool = False

    def __init__(self, modulus: FieldModulus | None = None) -> None:
        self.modulus = modulus or FieldModulus()
        self.counters: Counter[str] = Counter()

    # subclass hooks ---------------------------------------------------

    @abstractmethod
    def keygen(self, rng: np.random.Generator, security_param: int = 128) -> HEKeyPair: ...

    @abstractmethod
    def _encrypt(self, pk: PublicKey, values: np.ndarray, rng: np.random.Generator): ...

    @abstractmethod
    def _decrypt(self, sk: SecretKey, ct: Ciphertext) -> np.ndarray: ...

    @abstractmethod
    def _combine(self, op: str, a: Ciphertext, b: Any): ...

    @abstractmethod
    def _matmul(self, matrix: np.ndarray, ct: Ciphertext): ...

    @abstractmethod
    def _sum(self, ct: Ciphertext, axis): ...

    @abstractmethod
    def _body_to_bytes(self, ct: Ciphertext) -> bytes: ...

    @abstractmethod
    def _body_from_bytes(self, pk: PublicKey, body: bytes, shape: tuple[int, ...]): ...

    # public algebra ---------------------------------------------------

    def encrypt(self, pk: PublicKey, values, rng: np.random.Generator) -> Ciphertext:
        self._check_key(pk)
        values = np.asarray(values, dtype=self.modulus.dtype)
        data, nonce = self._encrypt(pk, values, rng)
        self.counters["enc"] += values.size
        return Ciphertext(self, pk, data, FRESH, nonce)

    def decrypt(self, sk: SecretKey, ct: Ciphertext) -> np.ndarray:
        if sk.key_id != ct.pk.key_id or sk.backend != self.name:
            raise KeyMismatch("ciphertext was not produced under this secret key")
        self.counters["dec"] += ct.data.size
        return self._decrypt(sk, ct)

    def add(self, a: Ciphertext, b: Ciphertext) -> Ciphertext:
        self._same_key(a, b)
        self.counters["add"] += max(a.data.size, b.data.size)
        data, nonce = self._combine("add", a, b)
        return Ciphertext(self, a.pk, data, max(a.level, b.level), nonce)

    def sub(self, a: Ciphertext, b: Ciphertext) -> Ciphertext:
        self._same_key(a, b)
        self.counters["add"] += max(a.data.size, b.data.size)
        data, nonce = self._combine("sub", a, b)
        return Ciphertext(self, a.pk, data, max(a.level, b.level), nonce)

    def plain_mul(self, ct: Ciphertext, scalars) -> Ciphertext:
        scalars = np.asarray(scalars, dtype=self.modulus.dtype)
        self.counters["plain_mul"] += np.broadcast(ct.data, scalars).size
        data, nonce = self._combine("scale", ct, scalars)
        return Ciphertext(self, ct.pk, data, ct.level, nonce)

    def ct_mul(self, a: Ciphertext, b: Ciphertext) -> Ciphertext:
        self._same_key(a, b)
        if a.level != FRESH or b.level != FRESH:
            raise LevelError("only fresh ciphertexts may be multiplied")
        self.counters["ct_mul"] += max(a.data.size, b.data.size)
        data, nonce = self._combine("mul", a, b)
        return Ciphertext(self, a.pk, data, MULTIPLIED, nonce)

    def plain_matmul(self, matrix, ct: Ciphertext) -> Ciphertext:
        """``matrix @ ct`` contracting the ciphertext's first axis."""
        matrix = np.asarray(matrix, dtype=self.modulus.dtype)
        if matrix.ndim != 2 or matrix.shape[1] != ct.shape[0]:
            raise ValueError(f"shape mismatch {matrix.shape} @ {ct.shape}")
        self.counters["plain_mul"] += matrix.size * int(np.prod(ct.shape[1:], dtype=np.int64))
        data, nonce = self._matmul(matrix, ct)
        return Ciphertext(self, ct.pk, data, ct.level, nonce)

    def sum(self, ct: Ciphertext, axis=None) -> Ciphertext:
        self.counters["add"] += ct.data.size
        data, nonce = self._sum(ct, axis)
        return Ciphertext(self, ct.pk, data, ct.level, nonce)

    def stack(self, cts: list[Ciphertext], pk: PublicKey | None = None) -> Ciphertext:
        """Stack same-shape ciphertexts along a new first axis."""
        if not cts:
            if pk is None:
                raise ValueError("stacking nothing needs a public key")
            empty = np.zeros(0, dtype=self.modulus.dtype if self.name == "transparent" else object)
            nonce = np.zeros(0, np.uint64) if self.name == "transparent" else None
            return Ciphertext(self, pk, empty, FRESH, nonce)
        for ct in cts[1:]:
            self._same_key(cts[0], ct)
        nonce = None if cts[0].nonce is None else np.stack([c.nonce for c in cts])
        data = np.stack([c.data for c in cts])
        return Ciphertext(self, cts[0].pk, data, max(c.level for c in cts), nonce)

    def take(self, ct: Ciphertext, indices) -> Ciphertext:
        nonce = None if ct.nonce is None else ct.nonce[indices]
        return Ciphertext(self, ct.pk, ct.data[indices], ct.level, nonce)

    # wire format ------------------------------------------------------

    def serialize(self, ct: Ciphertext) -> bytes:
        """Backend tag byte, length, then key id, level, shape and body."""
        shape = ct.data.shape
        payload = (
            ct.pk.key_id
            + struct.pack("<BB", ct.level, len(shape))
            + struct.pack(f"<{len(shape)}I", *shape)
            + self._body_to_bytes(ct)
        )
        return _CT_HEAD.pack(self.tag, len(payload)) + payload

    def deserialize(self, data: bytes, pk: PublicKey) -> tuple[Ciphertext, int]:
        """Parse one ciphertext from ``data``; returns it and the bytes consumed."""
        if len(data) < _CT_HEAD.size:
            raise MalformedCiphertext("truncated ciphertext header")
        tag, length = _CT_HEAD.unpack_from(data)
        if tag != self.tag:
            raise MalformedCiphertext(f"backend tag {tag} is not {self.tag}")
        end = _CT_HEAD.size + length
        payload = data[_CT_HEAD.size:end]
        if len(payload) != length or length < 10:
            raise MalformedCiphertext("truncated ciphertext payload")
        key_id = payload[:8]
        if key_id != pk.key_id:
            raise KeyMismatch("ciphertext key id does not match public key")
        level, ndim = struct.unpack_from("<BB", payload, 8)
        if level not in (FRESH, MULTIPLIED):
            raise MalformedCiphertext(f"bad level {level}")
        shape = struct.unpack_from(f"<{ndim}I", payload, 10)
        body = payload[10 + 4 * ndim:]
        try:
            body_data, nonce = self._body_from_bytes(pk, body, tuple(shape))
        except ValueError as exc:
            raise MalformedCiphertext(str(exc)) from exc
        return Ciphertext(self, pk, body_data, level, nonce), end

    def from_bytes(self, data: bytes, pk: PublicKey) -> Ciphertext:
        ct, used = self.deserialize(data, pk)
        if used != len(data):
            raise MalformedCiphertext("trailing bytes after ciphertext")
        return ct

    @abstractmethod
    def public_key_to_bytes(self, pk: PublicKey) -> bytes: ...

    @abstractmethod
    def public_key_from_bytes(self, data: bytes) -> PublicKey: ...

    def keypair_to_bytes(self, kp: HEKeyPair) -> bytes:
        pk = self.public_key_to_bytes(kp.pk)
        sk = _ints_to_bytes(kp.sk.material)
        return struct.pack("<I", len(pk)) + pk + sk

    def keypair_from_bytes(self, data: bytes) -> HEKeyPair:
        (n,) = struct.unpack_from("<I", data)
        pk = self.public_key_from_bytes(data[4:4 + n])
        sk = SecretKey(self.name, pk.key_id, self.modulus, _ints_from_bytes(data[4 + n:]))
        return HEKeyPair(pk, sk)

    # helpers ----------------------------------------------------------

    def _check_key(self, pk: PublicKey) -> None:
        if pk.backend != self.name:
            raise KeyMismatch(f"{pk.backend} key used with {self.name} backend")
        if pk.modulus != self.modulus:
            raise KeyMismatch("key bound to a different plaintext modulus")

    @staticmethod
    def _same_key(a: Ciphertext, b: Ciphertext) -> None:
        if a.pk.key_id != b.pk.key_id:
            raise KeyMismatch("operands encrypted under different keys")


def _ints_to_bytes(values: tuple[int, ...]) -> bytes:
    out = [struct.pack("<I", len(values))]
    for v in values:
        raw = v.to_bytes(max(1, (v.bit_length() + 8) // 8), "little", signed=True)
        out.append(struct.pack("<I", len(raw)) + raw)
    return b"".join(out)


def _ints_from_bytes(data: bytes) -> tuple[int, ...]:
    (count,) = struct.unpack_from("<I", data)
    pos = 4
    values = []
    for _ in range(count):
        (n,) = struct.unpack_from("<I", data, pos)
        pos += 4
        values.append(int.from_bytes(data[pos:pos + n], "little", signed=True))
        pos += n
    return tuple(values)


class TransparentBackend(HEBackend):
    """Plaintext-carrying stand-in. Provides no confidentiality whatsoever."""

    name = "transparent"
    tag = 1
    secure = False
    _warned = False

    def __init__(self, modulus: FieldModulus | None = None) -> None:
        super().__init__(modulus)
        if not TransparentBackend._warned:
            log.warning("TransparentBackend is insecure: ciphertexts carry plaintexts")
            TransparentBackend._warned = True

    def keygen(self, rng: np.random.Generator, security_param: int = 128) -> HEKeyPair:
        key_id = rng.bytes(8)
        return HEKeyPair(
            PublicKey(self.name, key_id, self.modulus), SecretKey(self.name, key_id, self.modulus)
        )

    def _encrypt(self, pk, values, rng):
        p = self.modulus.p
        if np.any(values >= p) if self.modulus.native else any(int(v) >= p for v in values.flat):
            raise ValueError("plaintext outside the field")
        nonce = rng.integers(0, 2**63, size=values.shape, dtype=np.uint64)
        return values.copy(), nonce

    def _decrypt(self, sk, ct):
        return np.array(ct.data, copy=True)

    def _combine(self, op, a, b):
        F = self.modulus
        if op == "scale":
            return F.mul(a.data, b), np.broadcast_to(a.nonce, np.broadcast(a.data, b).shape).copy()
        fn = {"add": F.add, "sub": F.sub, "mul": F.mul}[op]
        nonce = a.nonce ^ (b.nonce if op != "mul" else _rotl(b.nonce))
        return fn(a.data, b.data), nonce

    def _matmul(self, matrix, ct):
        nonce = np.bitwise_xor.reduce(ct.nonce, axis=0) if ct.shape[0] else np.zeros(ct.shape[1:], np.uint64)
        out_shape = (matrix.shape[0],) + ct.shape[1:]
        data = self.modulus.matmul(matrix, ct.data.reshape(ct.shape[0], -1)).reshape(out_shape)
        return data, np.broadcast_to(nonce, out_shape).copy()

    def _sum(self, ct, axis):
        nonce = np.bitwise_xor.reduce(ct.nonce, axis=axis) if ct.data.size else np.zeros((), np.uint64)
        return np.asarray(self.modulus.sum(ct.data, axis=axis)), np.asarray(nonce, dtype=np.uint64)

    def _body_to_bytes(self, ct):
        return self.modulus.to_bytes(ct.data) + np.ascontiguousarray(ct.nonce, dtype="<u8").tobytes()

    def _body_from_bytes(self, pk, body, shape):
        n = int(np.prod(shape, dtype=np.int64))
        if len(body) != 16 * n:
            raise ValueError("body length does not match shape")
        data = self.modulus.from_bytes(body[:8 * n], shape)
        nonce = np.frombuffer(body[8 * n:], dtype="<u8").astype(np.uint64).reshape(shape)
        return data, nonce

    def public_key_to_bytes(self, pk):
        return pk.key_id

    def public_key_from_bytes(self, data):
        if len(data) != 8:
            raise MalformedCiphertext("transparent public key is 8 bytes")
        return PublicKey(self.name, bytes(data), self.modulus)


def _rotl(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.uint64)
    return (x << np.uint64(1)) | (x >> np.uint64(63))


@dataclass(frozen=True)
class IntegerParams:
    noise_bits: int = 24
    public_count: int = 12
    max_sum_bits: int = 32
    margin_bits: int = 16
    secret_bits: int | None = None
    public_bits: int | None = None

    def resolve(self, modulus: FieldModulus) -> tuple[int, int]:
        fresh = modulus.bits + self.noise_bits + math.ceil(math.log2(self.public_count + 2))
        need = 2 * fresh + modulus.bits + self.max_sum_bits + self.margin_bits
        eta = self.secret_bits or 64 * math.ceil(need / 64)
        gamma = self.public_bits or max(1024, 4 * eta)
        return eta, gamma


class IntegerBackend(HEBackend):
    """Somewhat-homomorphic encryption over the integers with plaintext modulus p.

    Secret key: an odd integer ``P``. Public key: ``x0 = P*q0`` and
    encryptions of zero ``x_i = P*q_i + p*r_i``. A ciphertext of ``m`` is
    ``m + p*r + sum(subset of x_i) mod x0``; decryption is
    ``((c mod P) centered) mod p``.
    """

    name = "integer"
    tag = 2
    secure = True

    def __init__(self, modulus: FieldModulus | None = None, params: IntegerParams | None = None):
        super().__init__(modulus)
        self.params = params or IntegerParams()
        self.eta, self.gamma = self.params.resolve(self.modulus)
        self.width = (self.gamma + 7) // 8

    def keygen(self, rng: np.random.Generator, security_param: int = 128) -> HEKeyPair:
        p = self.modulus.p
        eta, gamma, rho = self.eta, self.gamma, self.params.noise_bits
        secret = _rand_bits(rng, eta) | (1 << (eta - 1)) | 1
        q_bits = gamma - eta
        q0 = _rand_bits(rng, q_bits) | (1 << (q_bits - 1))
        x0 = secret * q0
        xs = []
        for _ in range(self.params.public_count):
            q = _rand_below(rng, q0)
            r = _rand_signed(rng, rho)
            xs.append(secret * q + p * r)
        key_id = rng.bytes(8)
        pk = PublicKey(self.name, key_id, self.modulus, (x0, *xs))
        sk = SecretKey(self.name, key_id, self.modulus, (secret,))
        return HEKeyPair(pk, sk)

    def _encrypt(self, pk, values, rng):
        p = self.modulus.p
        x0, *xs = pk.material
        rho = self.params.noise_bits
        flat = []
        for v in values.reshape(-1):
            v = int(v)
            if not 0 <= v < p:
                raise ValueError("plaintext outside the field")
            mask = int(rng.integers(0, 1 << len(xs)))
            c = v + p * _rand_signed(rng, rho)
            c += sum(x for i, x in enumerate(xs) if mask >> i & 1)
            flat.append(c % x0)
        return _obj_array(flat, values.shape), None

    def _decrypt(self, sk, ct):
        (secret,) = sk.material
        p = self.modulus.p
        half = secret // 2
        out = []
        for c in ct.data.reshape(-1):
            z = int(c) % secret
            if z > half:
                z -= secret
            out.append(z % p)
        return np.array(out, dtype=self.modulus.dtype).reshape(ct.shape)

    def _combine(self, op, a, b):
        x0 = a.pk.material[0]
        if op == "scale":
            out = a.data * np.asarray(b, dtype=object)
        elif op == "add":
            out = a.data + b.data
        elif op == "sub":
            out = a.data - b.data
        else:
            out = a.data * b.data
        # 0-d object arithmetic returns bare ints
        return np.asarray(out % x0, dtype=object), None

    def _matmul(self, matrix, ct):
        x0 = ct.pk.material[0]
        flat = ct.data.reshape(ct.shape[0], -1)
        out = np.asarray(np.dot(matrix.astype(object), flat) % x0, dtype=object)
        return out.reshape((matrix.shape[0],) + ct.shape[1:]), None

    def _sum(self, ct, axis):
        x0 = ct.pk.material[0]
        return np.asarray(np.sum(ct.data, axis=axis) % x0, dtype=object), None

    def _body_to_bytes(self, ct):
        w = self.width
        return b"".join(int(c).to_bytes(w, "little") for c in ct.data.reshape(-1))

    def _body_from_bytes(self, pk, body, shape):
        w = self.width
        n = int(np.prod(shape, dtype=np.int64))
        if len(body) != w * n:
            raise ValueError("body length does not match shape")
        x0 = pk.material[0]
        vals = [int.from_bytes(body[i * w:(i + 1) * w], "little") for i in range(n)]
        if any(v >= x0 for v in vals):
            raise ValueError("ciphertext not reduced modulo x0")
        return _obj_array(vals, shape), None

    def public_key_to_bytes(self, pk):
        return pk.key_id + _ints_to_bytes(pk.material)

    def public_key_from_bytes(self, data):
        return PublicKey(self.name, bytes(data[:8]), self.modulus, _ints_from_bytes(data[8:]))


def _obj_array(values: list[int], shape) -> np.ndarray:
    arr = np.empty(len(values), dtype=object)
    arr[:] = values
    return arr.reshape(shape)


def _rand_bits(rng: np.random.Generator, bits: int) -> int:
    raw = int.from_bytes(rng.bytes((bits + 7) // 8), "little")
    return raw & ((1 << bits) - 1)


def _rand_below(rng: np.random.Generator, bound: int) -> int:
    bits = bound.bit_length()
    while True:
        v = _rand_bits(rng, bits)
        if v < bound:
            return v


def _rand_signed(rng: np.random.Generator, bits: int) -> int:
    return _rand_bits(rng, bits + 1) - (1 << bits)


BACKENDS: dict[str, type[HEBackend]] = {
    TransparentBackend.name: TransparentBackend,
    IntegerBackend.name: IntegerBackend,
}


def make_backend(name: str, modulus: FieldModulus | None = None) -> HEBackend:
    try:
        cls = BACKENDS[name]
    except KeyError:
        raise ValueError(f"unknown HE backend {name!r}; choose from {sorted(BACKENDS)}") from None
    return cls(modulus)


# functional aliases mirroring the scheme interface

def he_keygen(backend: HEBackend, rng: np.random.Generator, security_param: int = 128) -> HEKeyPair:
    return backend.keygen(rng, security_param)


def he_enc(backend: HEBackend, pk: PublicKey, x, rng: np.random.Generator) -> Ciphertext:
    return backend.encrypt(pk, x, rng)


def he_dec(sk: SecretKey, ct: Ciphertext):
    out = ct.backend.decrypt(sk, ct)
    return int(out) if out.ndim == 0 else out


def he_add(a: Ciphertext, b: Ciphertext) -> Ciphertext:
    return a.backend.add(a, b)


def he_sub(a: Ciphertext, b: Ciphertext) -> Ciphertext:
    return a.backend.sub(a, b)


def he_plain_mul(ct: Ciphertext, s) -> Ciphertext:
    return ct.backend.plain_mul(ct, s)


def he_ct_mul(a: Ciphertext, b: Ciphertext) -> Ciphertext:
    return a.backend.ct_mul(a, b)
