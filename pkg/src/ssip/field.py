"""Prime-field arithmetic and fixed-point encoding.

Scalars are wrapped in :class:`FieldElement`; bulk data lives in numpy
arrays and goes through the vectorized helpers on :class:`FieldModulus`.
For moduli below 2^62 arrays are ``uint64``; larger moduli fall back to
object arrays of Python ints.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
import sympy

DEFAULT_PRIME = 70368744177643  # largest prime below 2^46

_FLOAT_MANTISSA = 53


class ModulusMismatch(ValueError):
    """Two operands belong to different fields."""


class FixedPointOverflow(ValueError):
    """A real value does not fit the codec's range."""


@dataclass(frozen=True)
class FieldModulus:
    """A prime modulus ``p`` together with vectorized arithmetic mod ``p``."""

    p: int = DEFAULT_PRIME

    def __post_init__(self) -> None:
        if self.p < 2 or self.p >= 2**64:
            raise ValueError(f"modulus must be in [2, 2^64), got {self.p}")
        if not sympy.isprime(self.p):
            raise ValueError(f"modulus {self.p} is not prime")

    @property
    def bits(self) -> int:
        return self.p.bit_length()

    @property
    def byte_width(self) -> int:
        return 8

    @property
    def native(self) -> bool:
        """True when arrays can be held as uint64 without overflow tricks failing."""
        return self.bits <= 62

    @property
    def dtype(self):
        return np.uint64 if self.native else object

    def array(self, values) -> np.ndarray:
        """Reduce ``values`` (ints, possibly negative) into a field array."""
        if isinstance(values, np.ndarray) and values.dtype.kind in "iu" and self.native:
            if values.dtype.kind == "u":
                return values.astype(np.uint64) % np.uint64(self.p)
            return np.mod(values.astype(np.int64), np.int64(self.p)).astype(np.uint64)
        arr = np.asarray(values, dtype=object)
        reduced = np.vectorize(lambda v: int(v) % self.p, otypes=[object])(arr) if arr.size else arr
        return reduced.astype(self.dtype) if self.native else reduced

    def zeros(self, shape) -> np.ndarray:
        if self.native:
            return np.zeros(shape, dtype=np.uint64)
        out = np.empty(shape, dtype=object)
        out.fill(0)
        return out

    # element-wise arithmetic; inputs must already be reduced

    def add(self, a, b) -> np.ndarray:
        if not self.native:
            return (np.asarray(a, dtype=object) + np.asarray(b, dtype=object)) % self.p
        p = np.uint64(self.p)
        s = np.asarray(a, dtype=np.uint64) + np.asarray(b, dtype=np.uint64)
        return s - np.where(s >= p, p, np.uint64(0))

    def sub(self, a, b) -> np.ndarray:
        if not self.native:
            return (np.asarray(a, dtype=object) - np.asarray(b, dtype=object)) % self.p
        p = np.uint64(self.p)
        a = np.asarray(a, dtype=np.uint64)
        b = np.asarray(b, dtype=np.uint64)
        return np.where(a >= b, a - b, a + (p - b))

    def neg(self, a) -> np.ndarray:
        return self.sub(self.zeros(np.shape(a)), a)

    def mul(self, a, b) -> np.ndarray:
        if not self.native:
            return (np.asarray(a, dtype=object) * np.asarray(b, dtype=object)) % self.p
        a, b = np.broadcast_arrays(np.asarray(a, dtype=np.uint64), np.asarray(b, dtype=np.uint64))
        p = np.uint64(self.p)
        if self.bits <= 32:
            return (a * b) % p
        if self.bits <= 50:
            # float estimate of the quotient is off by at most one; the
            # remainder is exact in wrapping uint64 arithmetic
            q = np.floor(a.astype(np.float64) * b.astype(np.float64) * (1.0 / self.p)).astype(np.uint64)
            r = (a * b - q * p).view(np.int64)
            r = np.where(r < 0, r + np.int64(self.p), r)
            r = np.where(r >= np.int64(self.p), r - np.int64(self.p), r)
            return r.astype(np.uint64)
        # Horner over limbs of b; each partial stays below 2^64
        width = 63 - self.bits
        mask = np.uint64((1 << width) - 1)
        shift = np.uint64(width)
        n_limbs = -(-self.bits // width)
        acc = np.zeros(a.shape, dtype=np.uint64)
        for i in reversed(range(n_limbs)):
            limb = (b >> np.uint64(i * width)) & mask
            acc = (acc << shift) % p
            acc = acc + (a * limb) % p
            acc = np.where(acc >= p, acc - p, acc)
        return acc

    def sum(self, a, axis=None) -> np.ndarray:
        """Sum mod p along ``axis``, chunking so uint64 accumulators never wrap."""
        a = np.asarray(a)
        if not self.native:
            out = np.sum(a, axis=axis)
            return np.asarray(out % self.p, dtype=object)
        if axis is None:
            a = a.reshape(-1)
            axis = 0
        axis = axis % a.ndim
        chunk = max(1, (1 << (64 - self.bits)) - 1)
        n = a.shape[axis]
        if n <= chunk:
            return np.sum(a, axis=axis, dtype=np.uint64) % np.uint64(self.p)
        acc = None
        for start in range(0, n, chunk):
            part = np.take(a, range(start, min(n, start + chunk)), axis=axis)
            s = np.sum(part, axis=axis, dtype=np.uint64) % np.uint64(self.p)
            acc = s if acc is None else self.add(acc, s)
        return acc

    def matmul(self, A, B) -> np.ndarray:
        """Exact ``A @ B mod p`` for reduced matrices.

        Native moduli use float64 BLAS on small limbs so every partial
        product is exactly representable.
        """
        if not self.native:
            return np.asarray(
                np.dot(np.asarray(A, dtype=object), np.asarray(B, dtype=object)) % self.p,
                dtype=object,
            )
        A = np.asarray(A, dtype=np.uint64)
        B = np.asarray(B, dtype=np.uint64)
        inner = A.shape[-1]
        if inner == 0:
            return self.zeros(A.shape[:-1] + B.shape[1:])
        inner_bits = max(1, math.ceil(math.log2(inner + 1)))
        budget = _FLOAT_MANTISSA - inner_bits
        a_bits = _bit_length(A)
        b_bits = _bit_length(B)
        if budget < 2:
            # split the contraction so limbs stay wide enough
            half = inner // 2
            return self.add(
                self.matmul(A[..., :half], B[:half]), self.matmul(A[..., half:], B[half:])
            )
        # fewest limb products whose partial sums stay exact in float64
        best = None
        for na in range(1, max(1, a_bits) + 1):
            wa = -(-a_bits // na) if a_bits else 0
            wb = budget - wa
            if wb < 1:
                continue
            nb = max(1, -(-b_bits // wb))
            if best is None or na * nb < best[0] * best[1]:
                best = (na, nb, wa, wb)
        na, nb, wa, wb = best
        a_limbs = _limbs(A, na, wa)
        b_limbs = _limbs(B, nb, wb)
        acc = None
        for i, al in enumerate(a_limbs):
            for j, bl in enumerate(b_limbs):
                prod = (al @ bl).astype(np.uint64) % np.uint64(self.p)
                scale = pow(2, wa * i + wb * j, self.p)
                if scale != 1:
                    prod = self.mul(prod, np.uint64(scale))
                acc = prod if acc is None else self.add(acc, prod)
        return acc

    def to_bytes(self, a) -> bytes:
        """Little-endian 8-byte encoding of each element."""
        a = np.asarray(a)
        if self.native:
            return np.ascontiguousarray(a, dtype="<u8").tobytes()
        return b"".join(int(v).to_bytes(8, "little") for v in a.reshape(-1))

    def from_bytes(self, data: bytes, shape=None) -> np.ndarray:
        arr = np.frombuffer(data, dtype="<u8").astype(np.uint64)
        if not self.native:
            arr = arr.astype(object)
        out_of_range = np.any(arr >= np.uint64(self.p)) if self.native else any(v >= self.p for v in arr)
        if out_of_range:
            raise ValueError("encoded element out of field range")
        return arr.reshape(shape) if shape is not None else arr


def _bit_length(a: np.ndarray) -> int:
    return int(a.max()).bit_length() if a.size else 0


def _limbs(a: np.ndarray, n: int, width: int) -> list[np.ndarray]:
    if n == 1:
        return [a.astype(np.float64)]
    mask = np.uint64((1 << width) - 1)
    return [((a >> np.uint64(i * width)) & mask).astype(np.float64) for i in range(n)]


@dataclass(frozen=True)
class FieldElement:
    value: int
    modulus: FieldModulus

    def __post_init__(self) -> None:
        if not 0 <= self.value < self.modulus.p:
            raise ValueError(f"{self.value} is not reduced mod {self.modulus.p}")

    @classmethod
    def of(cls, value: int, modulus: FieldModulus) -> FieldElement:
        return cls(int(value) % modulus.p, modulus)

    def __int__(self) -> int:
        return self.value

    def __add__(self, other: FieldElement) -> FieldElement:
        return field_op(self, other, "add")

    def __sub__(self, other: FieldElement) -> FieldElement:
        return field_op(self, other, "sub")

    def __mul__(self, other: FieldElement) -> FieldElement:
        return field_op(self, other, "mul")

    def __neg__(self) -> FieldElement:
        return field_op(self, self, "neg")


def field_op(
    a: FieldElement, b: FieldElement, kind: Literal["add", "sub", "mul", "neg"]
) -> FieldElement:
    """Apply one modular operation; ``neg`` ignores ``b``'s value."""
    if a.modulus != b.modulus:
        raise ModulusMismatch(f"p={a.modulus.p} vs p={b.modulus.p}")
    p = a.modulus.p
    if kind == "add":
        v = a.value + b.value
    elif kind == "sub":
        v = a.value - b.value
    elif kind == "mul":
        v = a.value * b.value
    elif kind == "neg":
        v = -a.value
    else:
        raise ValueError(f"unknown field operation {kind!r}")
    return FieldElement(v % p, a.modulus)


def sample_uniform(
    rng: np.random.Generator,
    modulus: FieldModulus,
    size=None,
    upper: int | None = None,
):
    """Uniform draws from ``[0, p)`` or from ``[0, upper]`` when ``upper`` is given.

    Membership masks use ``upper = p - k - 1`` so that adding a value in
    ``[0, k]`` can never wrap around the modulus.
    """
    high = modulus.p if upper is None else upper + 1
    if high <= 0:
        raise ValueError("sampling range must be non-empty")
    if high > modulus.p:
        raise ValueError("sampling range exceeds the field")
    draws = rng.integers(0, high, size=size, dtype=np.uint64)
    if size is None:
        return FieldElement(int(draws), modulus)
    return draws if modulus.native else draws.astype(object)


@dataclass(frozen=True)
class FixedPointCodec:
    """Signed fixed-point reals embedded in F_p.

    ``max_components`` and ``max_magnitude`` describe the largest inner
    product the codec must hold after one multiplication; construction
    fails if that would not fit below p/2.
    """

    fraction_bits: int = 12
    modulus: FieldModulus = FieldModulus()
    max_components: int = 2**16
    max_magnitude: float = 4.0

    def __post_init__(self) -> None:
        if self.fraction_bits < 0:
            raise ValueError("fraction_bits must be non-negative")
        need = 2 * self.fraction_bits + math.ceil(
            math.log2(max(1.0, self.max_components * self.max_magnitude**2))
        )
        if need >= math.log2(self.modulus.p):
            raise ValueError(
                f"codec needs {need} bits of headroom but p has {math.log2(self.modulus.p):.1f}"
            )

    @property
    def scale(self) -> int:
        return 1 << self.fraction_bits

    def encode(self, x) -> int | np.ndarray:
        p = self.modulus.p
        arr = np.asarray(x, dtype=np.float64)
        if np.any(np.abs(arr) * self.scale >= p / 2) or not np.all(np.isfinite(arr)):
            raise FixedPointOverflow(f"value out of range for f={self.fraction_bits}, p={p}")
        ints = np.rint(arr * self.scale).astype(np.int64)
        if arr.ndim == 0:
            return int(ints) % p
        return self.modulus.array(ints.astype(object))

    def decode(self, e, scale_levels: int = 1):
        if scale_levels not in (1, 2):
            raise ValueError("scale_levels must be 1 or 2")
        p = self.modulus.p
        divisor = float(1 << (self.fraction_bits * scale_levels))
        if np.ndim(e) == 0:
            v = int(e) % p
            return (v - p if v > p // 2 else v) / divisor
        vals = [int(v) % p for v in np.asarray(e).reshape(-1)]
        centered = [v - p if v > p // 2 else v for v in vals]
        return (np.array(centered, dtype=np.float64) / divisor).reshape(np.shape(e))


def encode_fixed(x, codec: FixedPointCodec):
    return codec.encode(x)


def decode_fixed(e, codec: FixedPointCodec, scale_levels: int = 1):
    return codec.decode(e, scale_levels)
