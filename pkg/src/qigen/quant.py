"""Round-to-nearest group quantization of weight matrices, column-wise.

A group of real weights ``x`` maps to integer codes via
``code = clamp(rnd(x / s + z), 0, 2^b - 1)`` with step
``s = (max(x) - min(x)) / (2^b - 1)`` and zero-point ``z = -min(x) / s``;
dequantization is ``s * (code - z)``.  Rounding is half away from zero.
A constant group (``max == min == c``) uses ``s = 1``, ``z = -c`` and all-zero
codes, which reconstructs exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import (
    ConfigError,
    QuantConfig,
    ZeroMode,
    as_f32_matrix,
    as_f32_vector,
)


@dataclass(frozen=True)
class GroupParams:
    """Scale and zero-point of one quantization group (both in code units)."""

    scale: float
    zero: float


@dataclass
class CodeMatrix:
    """Integer codes plus per-(group, column) parameters for an n-by-m matrix.

    ``codes`` is ``(n, m)`` uint8; ``scales`` and ``zeros`` are
    ``(groups, m)`` float32 (zeros hold integral values in QUANTIZED mode).
    """

    codes: np.ndarray
    scales: np.ndarray
    zeros: np.ndarray
    config: QuantConfig

    @property
    def n(self) -> int:
        return self.codes.shape[0]

    @property
    def m(self) -> int:
        return self.codes.shape[1]

    @property
    def groups(self) -> int:
        return self.scales.shape[0]

    def validate(self) -> None:
        n, m = self.codes.shape
        g = self.config.groups_for_rows(n)
        if self.scales.shape != (g, m) or self.zeros.shape != (g, m):
            raise ConfigError(
                f"params shape {self.scales.shape} does not match "
                f"{g} groups x {m} columns")
        if self.codes.max(initial=0) > self.config.max_code:
            raise ConfigError("codes exceed the bit-width mask")


def _round_half_away(v: np.ndarray) -> np.ndarray:
    return np.copysign(np.floor(np.abs(v) + 0.5), v)


def _quantize_blocks(x: np.ndarray, bits: int, zero_mode: ZeroMode):
    """Quantize ``x`` of shape (groups, group_size, m) along axis 1.

    Parameter math runs in float64 against the float32-stored scale so the
    half-step round-trip bound survives the narrowing.
    """
    max_code = (1 << bits) - 1
    x64 = x.astype(np.float64)
    mins = x64.min(axis=1, keepdims=True)
    maxs = x64.max(axis=1, keepdims=True)
    span = maxs - mins
    s = np.where(span == 0.0, 1.0, span / max_code)
    s32 = s.astype(np.float32)
    z = -mins / s32.astype(np.float64)
    if zero_mode is ZeroMode.QUANTIZED:
        z32 = np.clip(_round_half_away(z), 0.0, max_code).astype(np.float32)
    else:
        z32 = z.astype(np.float32)
    v = x64 / s32.astype(np.float64) + z32.astype(np.float64)
    codes = np.clip(_round_half_away(v), 0.0, max_code).astype(np.uint8)
    return codes, s32.squeeze(axis=1), z32.squeeze(axis=1)


def quantize_group(x, bits: int, zero_mode: ZeroMode | str = ZeroMode.REAL32):
    """Quantize one group of weights.

    Returns ``(codes, GroupParams)``; raises :class:`ConfigError` on empty or
    non-finite input.
    """
    xv = as_f32_vector(x, "group")
    if bits not in (2, 3, 4):
        raise ConfigError(f"bits must be one of (2, 3, 4), got {bits}")
    zero_mode = ZeroMode.coerce(zero_mode)
    codes, s, z = _quantize_blocks(xv.reshape(1, -1, 1), bits, zero_mode)
    return codes.reshape(-1), GroupParams(float(s[0, 0]), float(z[0, 0]))


def dequantize(codes, params: GroupParams) -> np.ndarray:
    """Reconstruct ``s * (code - z)`` as float32."""
    c = np.asarray(codes)
    s = np.float32(params.scale)
    z = np.float32(params.zero)
    return (s * (c.astype(np.float32) - z)).astype(np.float32)


def quantize_matrix(w, config: QuantConfig) -> CodeMatrix:
    """Quantize a weight matrix column-wise with contiguous row groups."""
    wm = as_f32_matrix(w, "weight matrix")
    n, m = wm.shape
    groups = config.groups_for_rows(n)
    g = n // groups
    blocks = wm.reshape(groups, g, m)
    codes, scales, zeros = _quantize_blocks(blocks, config.bits, config.zero_mode)
    return CodeMatrix(codes.reshape(n, m), scales, zeros, config)


def dequantize_matrix(cm: CodeMatrix) -> np.ndarray:
    """Reconstruct the full float32 matrix from codes and group parameters."""
    n, m = cm.codes.shape
    groups = cm.scales.shape[0]
    g = n // groups
    c = cm.codes.reshape(groups, g, m).astype(np.float32)
    s = cm.scales[:, None, :]
    z = cm.zeros[:, None, :]
    return (s * (c - z)).reshape(n, m).astype(np.float32)
