"""Bit-packed {-1, +1} matrices and an XNOR-popcount product.

Layout: row-major, each row padded to a whole number of 64-bit words.
Within a word, column ``64*w + j`` lives in bit ``j`` (little-endian).
A set bit encodes +1, a clear bit -1; pad bits are always zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import Tensor
from .errors import ContractError, DimensionError

WORD_BITS = 64


def words_per_row(cols: int) -> int:
    return max(1, -(-cols // WORD_BITS))


@dataclass(frozen=True, eq=False)
class PackedMatrix:
    rows: int
    cols: int
    words: np.ndarray  # uint64, shape (rows, words_per_row(cols))

    def __post_init__(self):
        expected = (self.rows, words_per_row(self.cols))
        if self.words.shape != expected or self.words.dtype != np.uint64:
            raise ContractError(f"packed words must be uint64{expected}, got {self.words.dtype}{self.words.shape}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.rows, self.cols

    @property
    def nbytes(self) -> int:
        return self.words.nbytes

    def row_mask(self) -> np.ndarray:
        """Per-word mask of the bits that hold real entries (same for every row)."""
        return _valid_bits(self.cols)

    def unpack(self) -> np.ndarray:
        as_bytes = self.words.astype("<u8", copy=False).view(np.uint8).reshape(self.rows, -1)
        bits = np.unpackbits(as_bytes, axis=1, bitorder="little")[:, : self.cols]
        return bits.astype(np.float64) * 2.0 - 1.0

    def transpose(self) -> "PackedMatrix":
        return pack(self.unpack().T)

    def __eq__(self, other) -> bool:
        return (isinstance(other, PackedMatrix) and self.shape == other.shape
                and np.array_equal(self.words, other.words))


def _valid_bits(cols: int) -> np.ndarray:
    n = words_per_row(cols)
    mask = np.full(n, np.uint64(0xFFFFFFFFFFFFFFFF), dtype=np.uint64)
    tail = cols - (n - 1) * WORD_BITS
    if tail < WORD_BITS:
        mask[-1] = np.uint64((1 << tail) - 1)
    return mask


def pack(matrix) -> PackedMatrix:
    """Pack a 2-D array whose entries are exactly -1 or +1."""
    m = np.asarray(matrix.data if isinstance(matrix, Tensor) else matrix, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionError(f"pack expects a 2-D matrix, got shape {m.shape}")
    if not np.all(np.abs(m) == 1.0):
        raise ContractError("pack requires every entry to be -1 or +1")
    rows, cols = m.shape
    n = words_per_row(cols)
    bits = np.zeros((rows, n * WORD_BITS), dtype=np.uint8)
    bits[:, :cols] = m > 0
    as_bytes = np.packbits(bits, axis=1, bitorder="little")
    words = np.ascontiguousarray(as_bytes).view("<u8").astype(np.uint64).reshape(rows, n)
    return PackedMatrix(rows, cols, words)


def xnor_popcount(a_words: np.ndarray, bt_words: np.ndarray, k: int) -> np.ndarray:
    """Signed dot products between rows of ``a_words`` and rows of ``bt_words``.

    Both operands hold ``k`` valid bits per row.  Returns an int64 matrix
    with entry ``2 * popcount(XNOR(a_i, b_j)) - k``.
    """
    mask = _valid_bits(k)
    agree = np.zeros((a_words.shape[0], bt_words.shape[0]), dtype=np.int64)
    for w in range(a_words.shape[1]):
        x = ~(a_words[:, w, None] ^ bt_words[None, :, w]) & mask[w]
        agree += np.bitwise_count(x).astype(np.int64)
    return 2 * agree - k


def packed_matmul(a: PackedMatrix, b: PackedMatrix) -> Tensor:
    """Product of two packed +-1 matrices, exact, as a float64 tensor."""
    if a.cols != b.rows:
        raise DimensionError(f"packed_matmul inner extents disagree: {a.shape} @ {b.shape}")
    bt = b.transpose()
    return Tensor(xnor_popcount(a.words, bt.words, a.cols).astype(np.float64))


def packed_matmul_t(a: PackedMatrix, bt: PackedMatrix) -> np.ndarray:
    """Same as :func:`packed_matmul` with the right operand supplied pre-transposed."""
    if a.cols != bt.cols:
        raise DimensionError(f"packed_matmul_t inner extents disagree: {a.shape} vs {bt.shape}^T")
    return xnor_popcount(a.words, bt.words, a.cols).astype(np.float64)
