"""Packed binary linear algebra over {-1, +1}.

Element i of a vector lives in bit ``i % 64`` of word ``i // 64``
(little-endian within the word); a set bit decodes to +1 and a clear bit
to -1. Bits past the logical length are zero after every operation, so
popcounts never need per-call masking.

Batches of vectors (a mini-batch of activations, a row of gates per
sample) are stored as a ``PackedBitMatrix`` with one sample per row.
"""

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .config import WORD_BITS
from .errors import DimensionError

WORD_DTYPE = np.dtype(np.uint64)

# Upper bound on uint64 words materialized by one broadcast XOR block
_BLOCK_WORDS = 1 << 22

# Signed integer vector (pre-activations, logits)
IntVector = np.ndarray


def word_count(length: int) -> int:
    """Number of 64-bit words needed to hold ``length`` bits."""
    return (length + WORD_BITS - 1) // WORD_BITS


def pack_bits(bits: np.ndarray) -> np.ndarray:
    """Pack a boolean array along its last axis into uint64 words."""
    bits = np.asarray(bits, dtype=bool)
    length = bits.shape[-1]
    words = word_count(length)
    if words == 0:
        return np.zeros(bits.shape[:-1] + (0,), dtype=WORD_DTYPE)

    padded = words * WORD_BITS
    if padded != length:
        pad = [(0, 0)] * (bits.ndim - 1) + [(0, padded - length)]
        bits = np.pad(bits, pad)

    packed = np.ascontiguousarray(np.packbits(bits, axis=-1, bitorder="little"))
    return packed.view("<u8").astype(WORD_DTYPE, copy=False)


def unpack_bits(words: np.ndarray, length: int) -> np.ndarray:
    """Inverse of ``pack_bits``: boolean array with ``length`` entries on the last axis."""
    if length == 0:
        return np.zeros(words.shape[:-1] + (0,), dtype=bool)
    raw = np.ascontiguousarray(words.astype("<u8", copy=False)).view(np.uint8)
    return np.unpackbits(raw, axis=-1, count=length, bitorder="little").astype(bool)


def tail_mask(length: int) -> np.ndarray:
    """Words with every valid bit set and every pad bit clear."""
    return pack_bits(np.ones(length, dtype=bool))


def popcount(words: np.ndarray) -> np.ndarray:
    """Set bits per row (summed over the last axis)."""
    return np.bitwise_count(words).sum(axis=-1, dtype=np.int64)


def _frozen(array: np.ndarray) -> np.ndarray:
    if array.flags.writeable or not array.flags.c_contiguous:
        array = np.array(array, order="C")
        array.setflags(write=False)
    return array


def _require_pm1(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values)
    if values.size and not np.all((values == 1) | (values == -1)):
        raise ValueError("values must be +1 or -1")
    return values > 0


@dataclass(frozen=True, eq=False)
class BitVector:
    """A +/-1 vector stored one bit per element."""

    length: int
    words: np.ndarray

    def __post_init__(self):
        """Validate shape and the zero-pad invariant."""
        if self.length < 0:
            raise ValueError("length must be non-negative")

        words = np.asarray(self.words, dtype=WORD_DTYPE)
        if words.shape != (word_count(self.length),):
            raise ValueError(
                f"expected {word_count(self.length)} words for length {self.length}, got shape {words.shape}"
            )
        if words.size and np.any(words & ~tail_mask(self.length)):
            raise ValueError("pad bits must be zero")

        object.__setattr__(self, "words", _frozen(words))

    @classmethod
    def from_bits(cls, bits) -> "BitVector":
        bits = np.asarray(bits, dtype=bool).ravel()
        return cls(bits.size, pack_bits(bits))

    @classmethod
    def from_pm1(cls, values) -> "BitVector":
        return cls.from_bits(_require_pm1(np.asarray(values).ravel()))

    @classmethod
    def ones(cls, length: int) -> "BitVector":
        """The all +1 vector."""
        return cls(length, tail_mask(length))

    def to_bits(self) -> np.ndarray:
        return unpack_bits(self.words, self.length)

    def to_pm1(self) -> np.ndarray:
        return self.to_bits().astype(np.int8) * 2 - 1

    def negate(self) -> "BitVector":
        return type(self)(self.length, ~self.words & tail_mask(self.length))

    def __len__(self) -> int:
        return self.length

    def __eq__(self, other) -> bool:
        if not isinstance(other, BitVector):
            return NotImplemented
        return self.length == other.length and np.array_equal(self.words, other.words)

    __hash__ = None


class GateVector(BitVector):
    """Backward gate: bit 1 passes the error signal, bit 0 blocks it."""

    @classmethod
    def from_mask(cls, passes) -> "GateVector":
        return cls.from_bits(passes)

    def passes(self) -> np.ndarray:
        return self.to_bits()

    def count(self) -> int:
        return int(popcount(self.words))


@dataclass(frozen=True, eq=False)
class PackedBitMatrix:
    """A +/-1 matrix stored row-major, one bit per entry, rows padded to whole words."""

    rows: int
    cols: int
    data: np.ndarray

    def __post_init__(self):
        """Validate shape and per-row pad bits."""
        if self.rows < 0 or self.cols < 0:
            raise ValueError("matrix dimensions must be non-negative")

        data = np.asarray(self.data, dtype=WORD_DTYPE)
        expected = (self.rows, word_count(self.cols))
        if data.shape != expected:
            raise ValueError(f"expected data of shape {expected}, got {data.shape}")
        if data.size and np.any(data & ~tail_mask(self.cols)):
            raise ValueError("pad bits must be zero")

        object.__setattr__(self, "data", _frozen(data))

    @property
    def row_stride_words(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @classmethod
    def from_bits(cls, bits) -> "PackedBitMatrix":
        bits = np.asarray(bits, dtype=bool)
        if bits.ndim != 2:
            raise ValueError("expected a 2-D array")
        return cls(bits.shape[0], bits.shape[1], pack_bits(bits))

    @classmethod
    def from_pm1(cls, values) -> "PackedBitMatrix":
        values = np.asarray(values)
        if values.ndim != 2:
            raise ValueError("expected a 2-D array")
        return cls.from_bits(_require_pm1(values))

    @classmethod
    def stack(cls, vectors: Sequence[BitVector], cols: int | None = None) -> "PackedBitMatrix":
        """One row per vector; ``cols`` is required when ``vectors`` is empty."""
        if not vectors:
            if cols is None:
                raise ValueError("cols is required to stack zero vectors")
            return cls(0, cols, np.zeros((0, word_count(cols)), dtype=WORD_DTYPE))
        lengths = {v.length for v in vectors}
        if len(lengths) != 1:
            raise DimensionError(f"cannot stack vectors of lengths {sorted(lengths)}")
        return cls(len(vectors), vectors[0].length, np.stack([v.words for v in vectors]))

    @classmethod
    def concat(cls, blocks: Iterable["PackedBitMatrix"]) -> "PackedBitMatrix":
        """Rows of every block, in order."""
        blocks = list(blocks)
        cols = {b.cols for b in blocks}
        if len(cols) != 1:
            raise DimensionError(f"cannot concatenate blocks with widths {sorted(cols)}")
        return cls(sum(b.rows for b in blocks), blocks[0].cols, np.concatenate([b.data for b in blocks]))

    def to_bits(self) -> np.ndarray:
        return unpack_bits(self.data, self.cols)

    def to_pm1(self) -> np.ndarray:
        return self.to_bits().astype(np.int8) * 2 - 1

    def row(self, index: int) -> BitVector:
        return BitVector(self.cols, self.data[index])

    def select(self, indices) -> "PackedBitMatrix":
        """Rows at ``indices`` (any integer index array)."""
        indices = np.asarray(indices, dtype=np.intp)
        return PackedBitMatrix(indices.size, self.cols, self.data[indices])

    @cached_property
    def T(self) -> "PackedBitMatrix":
        return PackedBitMatrix.from_bits(self.to_bits().T)

    def __len__(self) -> int:
        return self.rows

    def __eq__(self, other) -> bool:
        if not isinstance(other, PackedBitMatrix):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.data, other.data)

    __hash__ = None


def as_batch(x: BitVector | PackedBitMatrix) -> PackedBitMatrix:
    """View a single vector as a one-row batch."""
    if isinstance(x, PackedBitMatrix):
        return x
    return PackedBitMatrix(1, x.length, x.words[None, :])


def _block_rows(words_per_row: int) -> int:
    return max(1, _BLOCK_WORDS // max(1, words_per_row))


def dot_pm1(a: BitVector, b: BitVector) -> int:
    """Inner product of two +/-1 vectors: 2 * popcount(XNOR(a, b)) - length."""
    if a.length != b.length:
        raise DimensionError(f"length mismatch: {a.length} != {b.length}")
    # popcount of XNOR over valid bits is length minus popcount of XOR
    agree = a.length - int(popcount(a.words ^ b.words))
    return 2 * agree - a.length


def matmul_pm1(weights: PackedBitMatrix, inputs: PackedBitMatrix) -> np.ndarray:
    """Batched ``W a``: entry (n, i) is the dot of input row n with weight row i."""
    if weights.cols != inputs.cols:
        raise DimensionError(f"weights have {weights.cols} columns, inputs have width {inputs.cols}")

    out = np.empty((inputs.rows, weights.rows), dtype=np.int64)
    step = _block_rows(weights.rows * weights.row_stride_words)
    for start in range(0, inputs.rows, step):
        stop = start + step
        disagree = popcount(inputs.data[start:stop, None, :] ^ weights.data[None, :, :])
        out[start:stop] = weights.cols - 2 * disagree
    return out


def matvec_pm1(weights: PackedBitMatrix, a: BitVector) -> IntVector:
    """``z = W a`` for a single +/-1 vector."""
    return matmul_pm1(weights, as_batch(a))[0]


def gated_matmul_transpose(
    weights: PackedBitMatrix, gates: PackedBitMatrix, targets: PackedBitMatrix
) -> np.ndarray:
    """Batched ``W^T (g * b)`` with ternary ``g * b`` kept as two bit planes.

    ``gates`` is the magnitude plane and ``targets`` the sign plane; entry
    (n, j) counts passed rows agreeing with column j minus those disagreeing.
    """
    if gates.cols != weights.rows or targets.cols != weights.rows:
        raise DimensionError(
            f"weights have {weights.rows} rows, gates width {gates.cols}, targets width {targets.cols}"
        )
    if gates.rows != targets.rows:
        raise DimensionError(f"{gates.rows} gate rows for {targets.rows} target rows")

    columns = weights.T
    out = np.empty((targets.rows, weights.cols), dtype=np.int64)
    step = _block_rows(columns.rows * columns.row_stride_words)
    for start in range(0, targets.rows, step):
        stop = start + step
        g = gates.data[start:stop, None, :]
        mismatched = popcount(g & (targets.data[start:stop, None, :] ^ columns.data[None, :, :]))
        passed = popcount(gates.data[start:stop])
        out[start:stop] = passed[:, None] - 2 * mismatched
    return out


def gated_matvec_transpose(weights: PackedBitMatrix, gate: GateVector, b: BitVector) -> IntVector:
    """``v_j = sum_i g_i b_i W_ij`` for one gate / target pair."""
    if not (weights.rows == gate.length == b.length):
        raise DimensionError(
            f"weights have {weights.rows} rows, gate length {gate.length}, target length {b.length}"
        )
    return gated_matmul_transpose(weights, as_batch(gate), as_batch(b))[0]


def sign_to_bits(z) -> BitVector:
    """+1 where ``z >= 0``, -1 where negative."""
    return BitVector.from_bits(np.asarray(z) >= 0)


def sign_rows(z: np.ndarray) -> PackedBitMatrix:
    """Row-wise ``sign_to_bits`` over a 2-D integer array."""
    return PackedBitMatrix.from_bits(np.asarray(z) >= 0)


def outer_pm1(u: BitVector, v: BitVector) -> PackedBitMatrix:
    """``u v^T``: row i is ``v`` where ``u_i = +1`` and ``-v`` otherwise."""
    rows = np.where(u.to_bits()[:, None], v.words[None, :], v.negate().words[None, :])
    return PackedBitMatrix(u.length, v.length, rows.reshape(u.length, v.words.size))


def masked_outer_sum(targets: PackedBitMatrix, masks: np.ndarray, inputs: PackedBitMatrix) -> np.ndarray:
    """``sum_mu M^mu * (t^mu (x^mu)^T)`` for row-wise masks, as an integer matrix.

    ``targets`` is N x K, ``masks`` a boolean N x K array selecting rows per
    sample, ``inputs`` N x F. Unselected rows contribute nothing.
    """
    masks = np.asarray(masks, dtype=bool)
    if targets.rows != inputs.rows or masks.shape != targets.shape:
        raise DimensionError(
            f"targets {targets.shape}, masks {masks.shape}, inputs {inputs.shape} do not align"
        )

    picked = np.flatnonzero(masks.any(axis=1))
    if picked.size == 0:
        return np.zeros((targets.cols, inputs.cols), dtype=np.int64)

    signed = targets.select(picked).to_pm1().astype(np.int64) * masks[picked]
    return signed.T @ inputs.select(picked).to_pm1().astype(np.int64)
