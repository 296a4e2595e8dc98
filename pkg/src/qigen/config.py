"""Quantization configuration and shared validation helpers."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

#: Sentinel for one quantization group per matrix column.
FULL_COLUMN = None

SUPPORTED_BITS = (2, 3, 4)


class ZeroMode(enum.Enum):
    """Storage mode for the zero-point: 32-bit real or a b-bit integer code."""

    REAL32 = "real32"
    QUANTIZED = "quantized"

    @classmethod
    def coerce(cls, value: "ZeroMode | str") -> "ZeroMode":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ConfigError(f"unknown zero mode {value!r}; expected one of "
                              f"{[m.value for m in cls]}") from None


class ConfigError(ValueError):
    """Invalid quantization or planner configuration."""


@dataclass(frozen=True)
class QuantConfig:
    """Bit width, group size, and zero-point storage for one weight matrix.

    ``group_size=None`` (:data:`FULL_COLUMN`) means one scale/zero pair per
    column.  Otherwise every column is split into contiguous groups of
    ``group_size`` rows, each with its own pair.
    """

    bits: int = 4
    group_size: int | None = FULL_COLUMN
    zero_mode: ZeroMode = ZeroMode.REAL32

    def __post_init__(self) -> None:
        if self.bits not in SUPPORTED_BITS:
            raise ConfigError(f"bits must be one of {SUPPORTED_BITS}, got {self.bits}")
        if self.group_size is not None:
            if not isinstance(self.group_size, int) or self.group_size <= 0:
                raise ConfigError(f"group_size must be a positive integer or "
                                  f"FULL_COLUMN, got {self.group_size!r}")
        object.__setattr__(self, "zero_mode", ZeroMode.coerce(self.zero_mode))

    @property
    def levels(self) -> int:
        return 1 << self.bits

    @property
    def max_code(self) -> int:
        return (1 << self.bits) - 1

    def groups_for_rows(self, n: int) -> int:
        """Number of groups per column of an ``n``-row matrix."""
        g = self.group_size
        if g is None:
            return 1
        if n % g != 0:
            raise ConfigError(f"group size {g} does not divide row count {n}")
        return n // g

    def effective_group_size(self, n: int) -> int:
        return n if self.group_size is None else self.group_size

    def zero_bits(self) -> int:
        return 32 if self.zero_mode is ZeroMode.REAL32 else self.bits


def codes_per_word(bits: int) -> int:
    """Codes carried by one 32-bit word (for 3-bit, per word of a triple)."""
    if bits not in SUPPORTED_BITS:
        raise ConfigError(f"unsupported bit width {bits}")
    return 32 // bits if bits != 3 else 32 // 3


def pack_unit(bits: int) -> tuple[int, int]:
    """(codes, words) forming one indivisible packing unit.

    2- and 4-bit codes fill single words; 3-bit codes fill 96-bit triples.
    """
    if bits == 3:
        return 32, 3
    if bits in (2, 4):
        return 32 // bits, 1
    raise ConfigError(f"unsupported bit width {bits}")


def row_alignment(bits: int) -> int:
    """Row-count granularity at which packed words contain whole rows."""
    return pack_unit(bits)[0]


def check_row_count(n: int, bits: int) -> None:
    """Rows must fill whole packing units so word counts are exact."""
    unit = row_alignment(bits)
    if n % unit != 0:
        raise ConfigError(
            f"row count {n} must be a multiple of {unit} for {bits}-bit packing")


def lcm(*values: int) -> int:
    out = 1
    for v in values:
        out = math.lcm(out, v)
    return out


def as_f32_matrix(arr, name: str = "matrix") -> np.ndarray:
    """Validate and convert to a 2-D float32 array with finite entries."""
    out = np.asarray(arr, dtype=np.float32)
    if out.ndim != 2:
        raise ConfigError(f"{name} must be 2-D, got shape {out.shape}")
    if out.size == 0:
        raise ConfigError(f"{name} must be non-empty")
    if not np.all(np.isfinite(out)):
        raise ConfigError(f"{name} contains non-finite values")
    return out


def as_f32_vector(arr, name: str = "vector") -> np.ndarray:
    out = np.asarray(arr, dtype=np.float32)
    if out.ndim != 1:
        raise ConfigError(f"{name} must be 1-D, got shape {out.shape}")
    if out.size == 0:
        raise ConfigError(f"{name} must be non-empty")
    if not np.all(np.isfinite(out)):
        raise ConfigError(f"{name} contains non-finite values")
    return out
