"""Bit-packing of code matrices into 32-bit words and blocked layouts.

Codes pack column-wise along the row dimension: one word carries 16 (2-bit)
or 8 (4-bit) consecutive row codes of a single column; 3-bit codes fill a
little-endian 96-bit stream across three consecutive words (code ``j`` of a
32-code run sits at bit offset ``3 j``).  Word extraction is
shift-right-then-mask, so code 0 occupies the least significant bits.

A laid-out matrix is split into ``m_b`` x ``t_b`` blocks stored one after
another in Morton (Z-curve) order of their ``(row_block, col_block)`` grid
coordinates, row index interleaved into the even bits.  Within a block,
words are ordered word-row major with the column index fastest, which the
generated micro-kernels read as consecutive lane vectors.  Only words that
exist in the unpadded matrix are stored; ghost positions implied by block
padding are materialized at execution time.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .config import ConfigError, QuantConfig, check_row_count, pack_unit
from .perfmodel import TilePlan
from .quant import CodeMatrix


class Layout(enum.Enum):
    ROW_SEQUENTIAL = 0
    ZCURVE = 1


class PackError(ValueError):
    """Packing input violates a layout precondition."""


_BYTE_SHIFTS = np.array([0, 8, 16, 24], dtype=np.uint32)


def pack_words(codes, bits: int) -> np.ndarray:
    """Pack a code vector into 32-bit words.

    The code count must fill whole packing units (one word for 2/4-bit,
    three words for 3-bit); codes must be below ``2^bits``.
    """
    c = np.asarray(codes)
    if c.ndim != 1:
        raise PackError(f"codes must be 1-D, got shape {c.shape}")
    if c.size and (c.min() < 0 or c.max() >= (1 << bits)):
        raise PackError(f"codes out of range for {bits}-bit packing")
    unit_codes, unit_words = pack_unit(bits)
    if c.size % unit_codes != 0:
        raise PackError(
            f"code count {c.size} is not a multiple of {unit_codes}")
    c = c.astype(np.uint32)
    if bits != 3:
        per = 32 // bits
        shifts = (np.arange(per, dtype=np.uint32) * bits).astype(np.uint32)
        return np.bitwise_or.reduce(c.reshape(-1, per) << shifts, axis=1)
    # 3-bit: expand each group of 32 codes to its 96-bit little-endian stream.
    groups = c.reshape(-1, 32)
    bit_idx = np.arange(3, dtype=np.uint32)
    stream = ((groups[:, :, None] >> bit_idx) & 1).astype(np.uint8)
    stream = stream.reshape(-1, 96)
    by = np.packbits(stream, axis=1, bitorder="little")  # (ngroups, 12)
    by = by.reshape(-1, unit_words, 4).astype(np.uint32)
    words = np.bitwise_or.reduce(by << _BYTE_SHIFTS, axis=2)
    return words.reshape(-1)


def unpack_words(words, bits: int) -> np.ndarray:
    """Exact inverse of :func:`pack_words`; returns uint8 codes."""
    w = np.asarray(words, dtype=np.uint32)
    if w.ndim != 1:
        raise PackError(f"words must be 1-D, got shape {w.shape}")
    unit_codes, unit_words = pack_unit(bits)
    if w.size % unit_words != 0:
        raise PackError(f"word count {w.size} is not a multiple of {unit_words}")
    if bits != 3:
        per = 32 // bits
        shifts = (np.arange(per, dtype=np.uint32) * bits).astype(np.uint32)
        mask = np.uint32((1 << bits) - 1)
        return ((w[:, None] >> shifts) & mask).astype(np.uint8).reshape(-1)
    by = ((w[:, None] >> _BYTE_SHIFTS) & np.uint32(0xFF)).astype(np.uint8)
    stream = np.unpackbits(by.reshape(-1, 12), axis=1, bitorder="little")
    trits = stream.reshape(-1, 32, 3).astype(np.uint8)
    weights = np.array([1, 2, 4], dtype=np.uint8)
    return (trits * weights).sum(axis=2, dtype=np.uint8).reshape(-1)


def _spread_even(v: int) -> int:
    v &= 0xFFFFFFFF
    v = (v | (v << 16)) & 0x0000FFFF0000FFFF
    v = (v | (v << 8)) & 0x00FF00FF00FF00FF
    v = (v | (v << 4)) & 0x0F0F0F0F0F0F0F0F
    v = (v | (v << 2)) & 0x3333333333333333
    v = (v | (v << 1)) & 0x5555555555555555
    return v


def morton_index(row_block: int, col_block: int) -> int:
    """Interleave block coordinates: row bits to even, column bits to odd."""
    if row_block < 0 or col_block < 0:
        raise PackError("block coordinates must be non-negative")
    return _spread_even(row_block) | (_spread_even(col_block) << 1)


def block_order(row_blocks: int, col_blocks: int) -> list[tuple[int, int]]:
    """Grid coordinates sorted by Morton index, i.e. the storage order."""
    coords = [(rb, cb) for rb in range(row_blocks) for cb in range(col_blocks)]
    coords.sort(key=lambda rc: morton_index(rc[0], rc[1]))
    return coords


@dataclass
class PackedMatrix:
    """Bit-packed, optionally Z-curve-blocked weights plus their parameters.

    ``words`` holds exactly ``n * m * bits / 32`` entries: the unpadded word
    set, permuted into storage order.  ``scales``/``zeros`` are the
    ``(groups, m)`` float32 parameter arrays of the source
    :class:`~qigen.quant.CodeMatrix`.
    """

    words: np.ndarray
    n: int
    m: int
    config: QuantConfig
    scales: np.ndarray
    zeros: np.ndarray
    plan: TilePlan
    layout: Layout = Layout.ZCURVE
    _exec_cache: object = field(default=None, repr=False, compare=False)

    @property
    def groups(self) -> int:
        return self.scales.shape[0]

    def word_count(self) -> int:
        return self.n * self.m * self.config.bits // 32

    def payload_bits(self) -> tuple[int, int, int]:
        """(weight_bits, scale_bits, zero_bits) of the stored payload."""
        g = self.groups
        return (self.config.bits * self.n * self.m,
                32 * g * self.m,
                self.config.zero_bits() * g * self.m)

    def validate(self) -> None:
        if self.words.shape != (self.word_count(),):
            raise PackError(
                f"word count {self.words.size} != {self.word_count()}")
        if self.scales.shape != self.zeros.shape:
            raise PackError("scales/zeros shape mismatch")


def _grid(n: int, m: int, plan: TilePlan) -> tuple[int, int]:
    return (-(-n // plan.m_b), -(-m // plan.t_b))


def _check_plan_config(plan: TilePlan, config: QuantConfig, n: int) -> None:
    unit_rows, _ = pack_unit(config.bits)
    if plan.m_b % unit_rows != 0:
        raise PackError(
            f"plan m_b={plan.m_b} does not cover whole {config.bits}-bit "
            f"packed words (needs a multiple of {unit_rows})")
    g = config.group_size
    if g is not None and plan.m_b % g != 0:
        raise PackError(
            f"plan m_b={plan.m_b} splits quantization groups of size {g}")


def _storage_permutation(n: int, m: int, bits: int, plan: TilePlan,
                         layout: Layout) -> np.ndarray:
    """Map storage position -> word-row-sequential position.

    Word-row-sequential places word ``(r, k, c)`` (word-group row r, word k
    of the unit, column c) at ``(r * K + k) * m + c``.
    """
    unit_rows, k_words = pack_unit(bits)
    wr_total = n // unit_rows
    if layout is Layout.ROW_SEQUENTIAL:
        return np.arange(wr_total * k_words * m, dtype=np.int64)
    wgb = plan.m_b // unit_rows
    rb_count, cb_count = _grid(n, m, plan)
    perm = np.empty(wr_total * k_words * m, dtype=np.int64)
    pos = 0
    kk = np.arange(k_words, dtype=np.int64)
    for rb, cb in block_order(rb_count, cb_count):
        r0, r1 = rb * wgb, min((rb + 1) * wgb, wr_total)
        c0, c1 = cb * plan.t_b, min((cb + 1) * plan.t_b, m)
        rr = np.arange(r0, r1, dtype=np.int64)
        cc = np.arange(c0, c1, dtype=np.int64)
        idx = ((rr[:, None, None] * k_words + kk[None, :, None]) * m
               + cc[None, None, :])
        size = idx.size
        perm[pos:pos + size] = idx.reshape(-1)
        pos += size
    return perm


def _pack_matrix_rowseq(cm: CodeMatrix) -> np.ndarray:
    """Pack all columns and arrange words in word-row-sequential order."""
    n, m = cm.codes.shape
    bits = cm.config.bits
    check_row_count(n, bits)
    _, k_words = pack_unit(bits)
    col_streams = cm.codes.T.reshape(-1)  # per-column row-major code streams
    words = pack_words(col_streams, bits)
    words_per_col = words.size // m
    # (m, wr*K) -> (wr*K, m) so column index varies fastest
    return np.ascontiguousarray(words.reshape(m, words_per_col).T).reshape(-1)


def lay_out_blocks(cm: CodeMatrix, plan: TilePlan,
                   layout: Layout = Layout.ZCURVE) -> PackedMatrix:
    """Pack a code matrix and permute its words into the blocked layout."""
    cm.validate()
    _check_plan_config(plan, cm.config, cm.n)
    rowseq = _pack_matrix_rowseq(cm)
    perm = _storage_permutation(cm.n, cm.m, cm.config.bits, plan, layout)
    return PackedMatrix(rowseq[perm], cm.n, cm.m, cm.config,
                        np.ascontiguousarray(cm.scales),
                        np.ascontiguousarray(cm.zeros), plan, layout)


def extract_codes(pm: PackedMatrix) -> CodeMatrix:
    """Invert the blocked layout and unpack codes (test/oracle path)."""
    pm.validate()
    bits = pm.config.bits
    perm = _storage_permutation(pm.n, pm.m, bits, pm.plan, pm.layout)
    rowseq = np.empty_like(pm.words)
    rowseq[perm] = pm.words
    _, k_words = pack_unit(bits)
    words_per_col = rowseq.size // pm.m
    by_col = np.ascontiguousarray(rowseq.reshape(words_per_col, pm.m).T)
    codes = unpack_words(by_col.reshape(-1), bits)
    codes = codes.reshape(pm.m, pm.n).T
    return CodeMatrix(np.ascontiguousarray(codes), pm.scales, pm.zeros,
                      pm.config)
