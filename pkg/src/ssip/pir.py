"""Two-level selection-vector PIR and Sum-PIR.

The database is laid out as a ``rows x cols`` matrix. A query is a pair
of encrypted one-hot vectors; the answer for entry ``(r, c)`` is

    sum_r row[r] * (sum_c DB[r, c] * col[c])

which equals ``sum_{r,c} row[r]*col[c]*DB[r,c]`` but costs only ``rows``
ciphertext multiplications. Every function accepts leading batch
dimensions on the selectors so many queries are answered in one pass.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .field import FieldModulus
from .he import Ciphertext, HEBackend, PublicKey

_SHAPE = struct.Struct("<III")


class PirError(ValueError):
    pass


@dataclass
class PirDatabase:
    entries: np.ndarray
    rows: int
    cols: int
    modulus: FieldModulus

    def __post_init__(self) -> None:
        if self.rows * self.cols < len(self.entries):
            raise PirError(f"{self.rows}x{self.cols} layout cannot hold {len(self.entries)} entries")

    @classmethod
    def from_entries(cls, entries, modulus: FieldModulus, rows: int | None = None, cols: int | None = None):
        entries = np.asarray(entries, dtype=modulus.dtype).reshape(-1)
        d_rows, d_cols = default_shape(len(entries))
        return cls(entries, rows or d_rows, cols or d_cols, modulus)

    @property
    def size(self) -> int:
        return len(self.entries)

    @property
    def shape(self) -> tuple[int, int]:
        return self.rows, self.cols

    def matrix(self) -> np.ndarray:
        out = self.modulus.zeros(self.rows * self.cols)
        out[: self.size] = self.entries
        return out.reshape(self.rows, self.cols)


def default_shape(n: int) -> tuple[int, int]:
    side = max(1, math.isqrt(max(n - 1, 0)) + 1)
    return side, side


@dataclass
class PirQuery:
    row_selector: Ciphertext
    col_selector: Ciphertext

    @property
    def shape(self) -> tuple[int, int]:
        return self.row_selector.shape[-1], self.col_selector.shape[-1]

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return self.row_selector.shape[:-1]

    def to_bytes(self) -> bytes:
        rows, cols = self.shape
        k = int(np.prod(self.batch_shape, dtype=np.int64))
        return _SHAPE.pack(rows, cols, k) + self.row_selector.to_bytes() + self.col_selector.to_bytes()

    @classmethod
    def from_bytes(cls, data: bytes, backend: HEBackend, pk: PublicKey) -> PirQuery:
        rows, cols, k = _SHAPE.unpack_from(data)
        row, used = backend.deserialize(data[_SHAPE.size:], pk)
        col = backend.from_bytes(data[_SHAPE.size + used:], pk)
        if row.shape[-1] != rows or col.shape[-1] != cols or row.shape[:-1] != col.shape[:-1]:
            raise PirError("query selectors do not match their shape header")
        if int(np.prod(row.shape[:-1], dtype=np.int64)) != k:
            raise PirError("query batch size does not match its shape header")
        return cls(row, col)


def _one_hot(indices: np.ndarray, width: int, modulus: FieldModulus, scale=None) -> np.ndarray:
    out = modulus.zeros(indices.shape + (width,))
    values = np.ones(indices.shape, dtype=np.uint64) if scale is None else np.asarray(scale, dtype=np.uint64)
    np.put_along_axis(out, indices[..., None], np.broadcast_to(values, indices.shape)[..., None], axis=-1)
    return out


def pir_query(
    backend: HEBackend,
    pk: PublicKey,
    indices,
    db_shape: tuple[int, int],
    rng: np.random.Generator,
    row_scale=None,
    db_size: int | None = None,
) -> PirQuery:
    """Encrypt selectors for one index or an array of indices.

    ``row_scale`` (broadcast against ``indices``) replaces the 1 in the row
    selector, so the answer comes back already multiplied by it. This lets
    a caller fold one plaintext factor into the query without spending a
    second ciphertext multiplication.
    """
    rows, cols = db_shape
    idx = np.asarray(indices, dtype=np.int64)
    limit = db_size if db_size is not None else rows * cols
    if np.any(idx < 0) or np.any(idx >= limit):
        raise PirError(f"index out of range [0, {limit})")
    F = backend.modulus
    scale = None
    if row_scale is not None:
        scale = np.broadcast_to(np.asarray(row_scale, dtype=F.dtype), idx.shape)
    row = backend.encrypt(pk, _one_hot(idx // cols, rows, F, scale), rng)
    col = backend.encrypt(pk, _one_hot(idx % cols, cols, F), rng)
    return PirQuery(row, col)


def pir_answer(q: PirQuery, db: PirDatabase) -> Ciphertext:
    """Encrypted ``DB[i]`` for every query in the batch (shape ``batch_shape``)."""
    if q.shape != db.shape:
        raise PirError(f"query shape {q.shape} does not match database {db.shape}")
    backend = q.row_selector.backend
    batch = q.batch_shape
    B = int(np.prod(batch, dtype=np.int64))
    rows, cols = db.shape
    col_t = q.col_selector.reshape(B, cols).T
    row_t = q.row_selector.reshape(B, rows).T
    inner = backend.plain_matmul(db.matrix(), col_t)  # (rows, B)
    prod = backend.ct_mul(row_t, inner)
    return backend.sum(prod, axis=0).reshape(batch)


def pir_extract(sk, d: Ciphertext):
    out = d.backend.decrypt(sk, d)
    return int(out) if out.ndim == 0 else out


def sum_pir_answer(q: PirQuery, db: PirDatabase, mask, rng: np.random.Generator) -> Ciphertext:
    """Sum the answers over the last batch axis, then subtract ``Enc(mask)``.

    For a query batch of shape ``(..., k)`` the result has shape ``(...)``
    and decrypts to ``sum_i DB[zeta_i] - mask``.
    """
    answers = pir_answer(q, db)
    backend = answers.backend
    total = backend.sum(answers, axis=-1)
    mask = np.broadcast_to(np.asarray(mask, dtype=db.modulus.dtype), total.shape)
    return backend.sub(total, backend.encrypt(answers.pk, mask, rng))


def answer_to_bytes(q: PirQuery, d: Ciphertext) -> bytes:
    rows, cols = q.shape
    return _SHAPE.pack(rows, cols, int(np.prod(q.batch_shape, dtype=np.int64))) + d.to_bytes()


def answer_from_bytes(data: bytes, backend: HEBackend, pk: PublicKey) -> tuple[tuple[int, int, int], Ciphertext]:
    header = _SHAPE.unpack_from(data)
    return header, backend.from_bytes(data[_SHAPE.size:], pk)


def sum_pir(
    backend: HEBackend,
    keypair,
    indices,
    db: PirDatabase,
    mask: int,
    rng: np.random.Generator,
    server_backend: HEBackend | None = None,
) -> int:
    """In-process Sum-PIR; returns the client's ``v = sum DB[zeta_i] - mask``."""
    idx = [int(i) for i in indices]
    if len(set(idx)) != len(idx):
        raise PirError("Sum-PIR indices must be distinct")
    q = pir_query(backend, keypair.pk, idx, db.shape, rng, db_size=db.size)
    if server_backend is not None:
        q = PirQuery.from_bytes(q.to_bytes(), server_backend, keypair.pk)
    ct = sum_pir_answer(q, db, mask, rng)
    return pir_extract(keypair.sk, ct)
