"""Bit-packed tensors and the binary / fixed-point dot products.

Encoding: logical +1 is bit 1, logical -1 is bit 0. A tensor of
``width x height x depth`` is stored as uint32 words of shape
``(height, width, ceil(depth / 32))``; element ``(w, h, d)`` is bit
``d % 32`` (LSB first) of word ``d // 32`` in the ``(h, w)`` column.
Bits past ``depth`` in the last word of every column are zero.
"""
from dataclasses import dataclass

import numpy as np

from . import kernels

WORDBITS = 32
FIXED_MAX = 31


def n_words(nbits):
    return -(-nbits // WORDBITS)


def valid_mask(nbits):
    """Mask of the valid bits in the final word of an ``nbits`` vector."""
    r = nbits % WORDBITS
    return np.uint32(0xFFFFFFFF if r == 0 else (1 << r) - 1)


def _pack_bits(bits, nbits):
    """Pack a ``(..., nbits)`` 0/1 array along the last axis."""
    nw = n_words(nbits)
    padded = np.zeros(bits.shape[:-1] + (nw * WORDBITS,), dtype=np.uint8)
    padded[..., :nbits] = bits
    packed = np.packbits(padded, axis=-1, bitorder="little")
    return np.ascontiguousarray(packed).view("<u4").astype(np.uint32)


def _unpack_bits(words, nbits):
    b = np.ascontiguousarray(words.astype("<u4")).view(np.uint8)
    return np.unpackbits(b, axis=-1, bitorder="little")[..., :nbits]


@dataclass(frozen=True, eq=False)
class BitVectorSlice:
    """A flat run of ``n`` bits in packed words."""

    n: int
    words: np.ndarray

    def __post_init__(self):
        w = np.ascontiguousarray(self.words, dtype=np.uint32)
        w.setflags(write=False)
        object.__setattr__(self, "words", w)
        if w.ndim != 1 or w.size != n_words(self.n):
            raise ValueError(f"{w.size} words cannot hold exactly {self.n} bits")
        if self.n and w[-1] & ~valid_mask(self.n):
            raise ValueError("padding bits beyond n must be zero")

    @classmethod
    def from_pm1(cls, values):
        v = np.asarray(values).ravel()
        _check_pm1(v)
        return cls(v.size, _pack_bits((v > 0).astype(np.uint8), v.size))

    def to_pm1(self):
        return _unpack_bits(self.words, self.n).astype(np.int8) * 2 - 1

    def __invert__(self):
        return BitVectorSlice(self.n, ~self.words & _masks(self.n))


def _masks(nbits):
    m = np.full(n_words(nbits), 0xFFFFFFFF, dtype=np.uint32)
    if m.size:
        m[-1] = valid_mask(nbits)
    return m


def _check_pm1(v):
    if v.size and not np.all((v == 1) | (v == -1)):
        raise ValueError("values must be +1 or -1")


@dataclass(frozen=True, eq=False)
class BitTensor:
    width: int
    height: int
    depth: int
    words: np.ndarray

    def __post_init__(self):
        w = np.ascontiguousarray(self.words, dtype=np.uint32)
        w.setflags(write=False)
        object.__setattr__(self, "words", w)
        expect = (self.height, self.width, n_words(self.depth))
        if w.shape != expect:
            raise ValueError(f"words shape {w.shape} != {expect}")
        if self.depth and np.any(w[..., -1] & ~valid_mask(self.depth)):
            raise ValueError("padding bits in the final word must be zero")

    @property
    def dims(self):
        return self.width, self.height, self.depth

    @classmethod
    def from_bits(cls, bits):
        """Build from a ``(height, width, depth)`` array of 0/1."""
        bits = np.asarray(bits, dtype=np.uint8)
        if bits.ndim != 3:
            raise ValueError("expected (height, width, depth) bits")
        h, w, d = bits.shape
        return cls(w, h, d, _pack_bits(bits, d))

    def bits(self):
        """Logical bits as a ``(height, width, depth)`` uint8 array."""
        return _unpack_bits(self.words, self.depth)

    def unpack(self):
        return self.bits().astype(np.int8) * 2 - 1

    def flatten(self):
        """Whole tensor as one vector, logical order ``(h, w, d)``."""
        n = self.width * self.height * self.depth
        if self.depth % WORDBITS == 0:
            return BitVectorSlice(n, self.words.reshape(-1))
        return BitVectorSlice(n, _pack_bits(self.bits().reshape(-1), n))

    def as_column(self):
        """Flattened as a 1x1xN tensor, the shape FC layers consume."""
        v = self.flatten()
        return BitTensor(1, 1, v.n, v.words.reshape(1, 1, -1))

    def __eq__(self, other):
        if not isinstance(other, BitTensor):
            return NotImplemented
        return self.dims == other.dims and np.array_equal(self.words, other.words)


@dataclass(frozen=True, eq=False)
class FixedTensor:
    """Small signed integers in [-31, 31], shape ``(height, width, depth)``."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 3:
            raise ValueError("expected (height, width, depth) values")
        if not np.issubdtype(v.dtype, np.integer):
            raise ValueError("fixed-point values must be integers")
        if v.size and (v.min() < -FIXED_MAX or v.max() > FIXED_MAX):
            raise ValueError(f"values must lie in [-{FIXED_MAX}, {FIXED_MAX}]")
        v = np.ascontiguousarray(v, dtype=np.int32)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]

    @property
    def depth(self):
        return self.values.shape[2]


def pack(values, dims):
    """Pack +/-1 values into a BitTensor.

    ``dims`` is ``(width, height, depth)``; ``values`` is any array-like
    whose row-major flattening is in ``(h, w, d)`` order.
    """
    width, height, depth = dims
    v = np.asarray(values).ravel()
    if v.size != width * height * depth:
        raise ValueError(f"got {v.size} values for dims {dims}")
    _check_pm1(v)
    return BitTensor.from_bits((v > 0).astype(np.uint8).reshape(height, width, depth))


def unpack(t):
    return t.unpack()


def xnor_dot(a, w):
    """Number of matching positions between two packed vectors."""
    if a.n != w.n:
        raise ValueError(f"length mismatch: {a.n} vs {w.n}")
    if a.n == 0:
        return 0
    return int(kernels.impl().xnor_dot_words(a.words, w.words, valid_mask(a.n)))


def fixed_dot(a, w):
    a = np.asarray(a).ravel()
    w = np.asarray(w).ravel()
    if a.size != w.size:
        raise ValueError(f"length mismatch: {a.size} vs {w.size}")
    _check_pm1(w)
    if a.size and np.abs(a).max() > FIXED_MAX:
        raise ValueError(f"inputs must lie in [-{FIXED_MAX}, {FIXED_MAX}]")
    return int(np.dot(a.astype(np.int64), w.astype(np.int64)))


def compensate(y, cnum):
    """Map a match count back to the +/-1 dot product: ``2y - cnum``."""
    if cnum <= 0:
        raise ValueError("cnum must be positive")
    if not 0 <= y <= cnum:
        raise ValueError(f"match count {y} outside [0, {cnum}]")
    return 2 * y - cnum
