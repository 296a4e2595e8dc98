"""Generator for specialized quantized-GEMV kernel source.

Each kernel is emitted as a self-contained Python module written against the
:mod:`qigen.vecops` vocabulary, specialized for one bit width, grouping
mode, register tile, and cache block.  The structure is fixed:

* a block loop over Morton-ordered cache blocks handed in by the runtime,
* per ``t_u * lanes``-column stripe, output accumulators loaded once,
  row steps of ``m_u`` broadcast inputs fused-multiply-added with unpacked
  weight vectors, accumulators stored once,
* the scale/zero correction: once per column against the total input sum
  for full-column grouping, or per group against per-group input sums with
  an accumulator flush at every group boundary.

Generation is deterministic: equal descriptors produce byte-identical
source.  Register accounting follows the micro-kernel model (broadcasts +
weight vectors + accumulators); packed-word vectors are only held in named
locals when they fit inside that same budget.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

from . import vecops
from .config import SUPPORTED_BITS, pack_unit
from .perfmodel import TilePlan, register_cost


class KernelGenError(ValueError):
    """Descriptor cannot be realized as a kernel."""


@dataclass(frozen=True)
class KernelDescriptor:
    """Everything that determines one generated kernel's source."""

    bits: int
    group_size: int | None
    tile: TilePlan
    lanes: int = 8

    def __post_init__(self) -> None:
        if self.bits not in SUPPORTED_BITS:
            raise KernelGenError(f"unsupported bit width {self.bits}")
        if self.lanes != vecops.LANES:
            raise KernelGenError(
                f"vector layer is {vecops.LANES}-lane; got lanes={self.lanes}")
        unit_rows, _ = pack_unit(self.bits)
        t = self.tile
        if t.m_b % unit_rows != 0:
            raise KernelGenError(
                f"m_b={t.m_b} must cover whole packed words "
                f"(multiple of {unit_rows})")
        if t.t_b % (t.t_u * self.lanes) != 0:
            raise KernelGenError(
                f"t_b={t.t_b} must cover whole register stripes "
                f"(multiple of {t.t_u * self.lanes})")
        g = self.group_size
        if g is not None:
            if g < 1:
                raise KernelGenError(f"group size must be positive, got {g}")
            if t.m_b % g != 0:
                raise KernelGenError(
                    f"m_b={t.m_b} must hold whole groups of {g}")

    @property
    def name(self) -> str:
        tag = "fc" if self.group_size is None else f"g{self.group_size}"
        return f"q{self.bits}_{tag}_{self.tile.m_u}x{self.tile.t_u}"

    @property
    def filename(self) -> str:
        return f"{self.name}.gen.py"

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "entry_symbol": self.name,
            "file": self.filename,
            "bits": self.bits,
            "group_size": self.group_size,
            "m_u": self.tile.m_u,
            "t_u": self.tile.t_u,
            "m_b": self.tile.m_b,
            "t_b": self.tile.t_b,
            "lanes": self.lanes,
        }


@dataclass(frozen=True)
class KernelSource:
    """Generated module text plus the symbol to call."""

    source_text: str
    entry_symbol: str
    descriptor: KernelDescriptor


def _mask(bits: int) -> int:
    return (1 << bits) - 1


def _extract_expr(bits: int, row: int, word: "_WordAccess") -> str:
    """Float lane-vector of the codes for one row of one lane group.

    Shift-right then mask; 3-bit codes that straddle a word boundary are
    reassembled with a shifted-or of the neighbouring word's low bits.
    """
    if bits != 3:
        inner = f"vand(vsrli({word.ref(0)}, {row * bits}), MASK)"
        return f"vcvt_int_float({inner})"
    bit = 3 * row
    k, off = bit // 32, bit % 32
    if off <= 29:
        inner = f"vand(vsrli({word.ref(k)}, {off}), MASK)"
    else:
        lo_bits = 32 - off
        hi_mask = (1 << (3 - lo_bits)) - 1
        inner = (f"vor(vsrli({word.ref(k)}, {off}), "
                 f"vslli(vand({word.ref(k + 1)}, {hi_mask}), {lo_bits}))")
    return f"vcvt_int_float({inner})"


class _WordAccess:
    """Resolves the k-th word vector of the current (word-group, lane-group).

    Cached mode references named locals loaded once per word-group;
    uncached mode inlines the load into the extraction expression.
    """

    def __init__(self, cached: bool, t_b: int, lanes: int, k_words: int,
                 fragment: bool = False):
        self.cached = cached
        self.t_b = t_b
        self.lanes = lanes
        self.k_words = k_words
        self.fragment = fragment
        self.reg = 0
        self.base = "pw"
        self.wg_words = 0  # static word offset of the current word-group

    def at(self, reg: int, wg_offset_words: int) -> "_WordAccess":
        self.reg = reg
        self.wg_words = wg_offset_words
        return self

    def var(self, k: int) -> str:
        if self.fragment:
            return f"w{k}" if self.k_words > 1 else "w"
        if self.k_words > 1:
            return f"w{k}_{self.reg}"
        return f"w{self.reg}"

    def addr(self, k: int) -> str:
        off = self.wg_words + k * self.t_b + self.reg * self.lanes
        return f"{self.base} + {off}" if off else self.base

    def ref(self, k: int) -> str:
        if self.cached:
            return self.var(k)
        return f"vload(words, {self.addr(k)})"


class _Writer:
    def __init__(self) -> None:
        self.lines: list[str] = []
        self.level = 0

    def put(self, text: str = "") -> None:
        self.lines.append(("    " * self.level + text) if text else "")

    def text(self) -> str:
        return "\n".join(self.lines) + "\n"


def _should_cache_words(desc: KernelDescriptor) -> bool:
    _, k_words = pack_unit(desc.bits)
    t = desc.tile
    live = t.t_u + k_words * t.t_u + t.m_u + 1
    return live <= register_cost(t.m_u, t.t_u)


def _emit_word_group(w: _Writer, desc: KernelDescriptor, acc: str,
                     wg_offset_words: int, row_base: int, x_base: str,
                     boundary_every: int | None,
                     flush) -> None:
    """Rows of one packed word-group: broadcasts and fused multiply-adds.

    ``boundary_every`` marks group boundaries (in rows relative to the
    surrounding group-aligned region); ``flush(group_index, more_rows)`` is
    called to emit the per-group correction.
    """
    bits, lanes = desc.bits, desc.lanes
    unit_rows, k_words = pack_unit(bits)
    t_u, m_u = desc.tile.t_u, desc.tile.m_u
    cached = _should_cache_words(desc)
    words = _WordAccess(cached, desc.tile.t_b, lanes)
    if cached:
        for t in range(t_u):
            words.at(t, wg_offset_words)
            for k in range(k_words):
                w.put(f"{words.var(k)} = vload(words, {words.addr(k)})")
    row = 0
    while row < unit_rows:
        step_end = min(row + m_u, unit_rows)
        if boundary_every is not None:
            next_boundary = ((row_base + row) // boundary_every + 1) * boundary_every
            step_end = min(step_end, next_boundary - row_base)
        for j, r in enumerate(range(row, step_end)):
            off = row_base + r
            idx = f"{x_base} + {off}" if off else x_base
            w.put(f"xb{j} = vbroadcast(x[{idx}])")
        for j, r in enumerate(range(row, step_end)):
            for t in range(t_u):
                expr = _extract_expr(bits, r, words.at(t, wg_offset_words))
                w.put(f"{acc}{t} = vfmadd(xb{j}, {expr}, {acc}{t})")
        row = step_end
        if boundary_every is not None and (row_base + row) % boundary_every == 0:
            last = (row == unit_rows)
            flush((row_base + row) // boundary_every - 1, not last)


def _emit_flush(w: _Writer, desc: KernelDescriptor, gi_expr: str,
                reset: bool) -> None:
    t_u = desc.tile.t_u
    w.put(f"xg = xsums[{gi_expr}]")
    w.put(f"pb = ({gi_expr}) * mpad + yoff")
    for t in range(t_u):
        off = f" + {t * desc.lanes}" if t else ""
        w.put(f"sv = vload(scales, pb{off})")
        w.put(f"zv = vload(zeros, pb{off})")
        w.put(f"tv = vfmadd(zv, vbroadcast(-xg), ia{t})")
        w.put(f"ya{t} = vfmadd(sv, tv, ya{t})")
    if reset:
        for t in range(t_u):
            w.put(f"ia{t} = vbroadcast(F0)")


def _emit_stripe_fc(w: _Writer, desc: KernelDescriptor) -> None:
    """Full-column stripe: raw integer dot products accumulate into y."""
    unit_rows, k_words = pack_unit(desc.bits)
    t_u, lanes = desc.tile.t_u, desc.lanes
    ktb = k_words * desc.tile.t_b
    wg_count = desc.tile.m_b // unit_rows
    for t in range(t_u):
        off = f" + {t * lanes}" if t else ""
        w.put(f"acc{t} = vload(y, yoff{off})")
    w.put(f"for wg in range({wg_count}):")
    w.level += 1
    w.put(f"pw = wb + wg * {ktb} + coff")
    w.put("px = xbase + wg")
    _emit_word_group(w, desc, "acc", 0, 0, f"px * {unit_rows}",
                     None, None)
    w.level -= 1
    for t in range(t_u):
        off = f" + {t * lanes}" if t else ""
        w.put(f"vstore(y, yoff{off}, acc{t})")


def _emit_stripe_grouped(w: _Writer, desc: KernelDescriptor) -> None:
    """Grouped stripe: per-group integer accumulators flushed into y."""
    g = desc.group_size
    unit_rows, k_words = pack_unit(desc.bits)
    t_u, lanes = desc.tile.t_u, desc.lanes
    ktb = k_words * desc.tile.t_b
    gpb = desc.tile.m_b // g
    for t in range(t_u):
        off = f" + {t * lanes}" if t else ""
        w.put(f"ya{t} = vload(y, yoff{off})")
    if g % unit_rows == 0:
        wg_per_group = g // unit_rows
        w.put(f"for gseg in range({gpb}):")
        w.level += 1
        w.put(f"gi = rb * {gpb} + gseg")
        for t in range(t_u):
            w.put(f"ia{t} = vbroadcast(F0)")
        w.put(f"for wgl in range({wg_per_group}):")
        w.level += 1
        w.put(f"pw = wb + (gseg * {wg_per_group} + wgl) * {ktb} + coff")
        w.put(f"px = xbase + gseg * {g} + wgl * {unit_rows}")
        _emit_word_group(w, desc, "ia", 0, 0, "px", None, None)
        w.level -= 1
        _emit_flush(w, desc, "gi", reset=False)
        w.level -= 1
    else:
        # Group boundaries fall inside packed word-groups; unroll one
        # group-aligned period of lcm(unit_rows, g) rows.
        period_rows = math.lcm(unit_rows, g)
        period_wg = period_rows // unit_rows
        periods = desc.tile.m_b // period_rows
        groups_per_period = period_rows // g
        w.put(f"for per in range({periods}):")
        w.level += 1
        w.put(f"gi0 = rb * {gpb} + per * {groups_per_period}")
        w.put(f"pw = wb + per * {period_wg * ktb} + coff")
        w.put(f"px = xbase + per * {period_rows}")
        for t in range(t_u):
            w.put(f"ia{t} = vbroadcast(F0)")

        def flush(j: int, more: bool) -> None:
            _emit_flush(w, desc, f"gi0 + {j}" if j else "gi0", reset=more)

        for wg in range(period_wg):
            _emit_word_group(w, desc, "ia", wg * ktb, wg * unit_rows, "px",
                             g, flush)
        w.level -= 1
    for t in range(t_u):
        off = f" + {t * lanes}" if t else ""
        w.put(f"vstore(y, yoff{off}, ya{t})")


def _emit_epilogue_fc(w: _Writer, desc: KernelDescriptor) -> None:
    """One correction per column: y = s * (y - z * total_input_sum)."""
    lanes, t_b = desc.lanes, desc.tile.t_b
    w.put("xhat = xsums[0]")
    w.put("for cb in range(cb_lo, cb_hi):")
    w.level += 1
    w.put(f"for cg in range({t_b // lanes}):")
    w.level += 1
    w.put(f"c = cb * {t_b} + cg * {lanes}")
    w.put("sv = vload(scales, c)")
    w.put("zv = vload(zeros, c)")
    w.put("yv = vload(y, c)")
    w.put("tv = vfmadd(zv, vbroadcast(-xhat), yv)")
    w.put("vstore(y, c, vfmadd(sv, tv, vbroadcast(F0)))")
    w.level -= 2


def _used_ops(desc: KernelDescriptor) -> list[str]:
    ops = ["vand", "vbroadcast", "vcvt_int_float", "vfmadd", "vload",
           "vsrli", "vstore"]
    if desc.bits == 3:
        ops += ["vor", "vslli"]
    return sorted(ops)


def generate_unpack(bits: int, lanes: int) -> str:
    """Standalone extraction fragment: all codes of one packed word unit."""
    if bits not in SUPPORTED_BITS:
        raise KernelGenError(f"unsupported bit width {bits}")
    if lanes != vecops.LANES:
        raise KernelGenError(
            f"vector layer is {vecops.LANES}-lane; got lanes={lanes}")
    unit_rows, k_words = pack_unit(bits)
    w = _Writer()
    w.put(f"mask = np.uint32({_mask(bits)})")
    words = _WordAccess(cached=True, t_b=0, lanes=lanes)
    words.reg = ""  # names w0_, w1_, ... collapse to w0, w1
    for i in range(unit_rows):
        expr = _extract_expr(bits, i, words).replace("MASK", "mask")
        w.put(f"l{i} = {expr}")
    return w.text()


def generate_micro_kernel(desc: KernelDescriptor,
                          vregs: int | None = None) -> str:
    """Stripe-core fragment: accumulator loads, row steps, stores."""
    if vregs is not None and register_cost(desc.tile.m_u, desc.tile.t_u) > vregs:
        raise KernelGenError(
            f"register tile ({desc.tile.m_u}, {desc.tile.t_u}) needs "
            f"{register_cost(desc.tile.m_u, desc.tile.t_u)} > {vregs} registers")
    w = _Writer()
    _emit_stripe_fc(w, desc)
    return w.text()


def generate_qgemv(desc: KernelDescriptor,
                   vregs: int | None = None) -> KernelSource:
    """Emit the complete kernel module for a descriptor."""
    if vregs is not None and register_cost(desc.tile.m_u, desc.tile.t_u) > vregs:
        raise KernelGenError(
            f"register tile ({desc.tile.m_u}, {desc.tile.t_u}) needs "
            f"{register_cost(desc.tile.m_u, desc.tile.t_u)} > {vregs} registers")
    tile = desc.tile
    stripes = tile.t_b // (tile.t_u * desc.lanes)
    w = _Writer()
    w.put(f'"""Generated qGEMV kernel {desc.name}; do not edit."""')
    w.put()
    w.put("import numpy as np")
    w.put()
    w.put("from qigen.vecops import (")
    w.put(f"    {', '.join(_used_ops(desc))},")
    w.put(")")
    w.put()
    w.put(f"BITS = {desc.bits}")
    w.put(f"GROUP_SIZE = {0 if desc.group_size is None else desc.group_size}")
    w.put(f"M_U, T_U = {tile.m_u}, {tile.t_u}")
    w.put(f"M_B, T_B = {tile.m_b}, {tile.t_b}")
    w.put(f"LANES = {desc.lanes}")
    w.put()
    w.put(f"MASK = np.uint32({_mask(desc.bits)})")
    w.put("F0 = np.float32(0.0)")
    w.put()
    w.put()
    w.put(f"def {desc.name}(words, scales, zeros, x, xsums, y, n, m,")
    w.put(f"{' ' * (len(desc.name) + 5)}blk_off, blk_rb, blk_cb, nblk,")
    w.put(f"{' ' * (len(desc.name) + 5)}cb_lo, cb_hi, cb_count):")
    w.level += 1
    w.put(f"mpad = cb_count * {tile.t_b}")
    w.put("for bi in range(nblk):")
    w.level += 1
    w.put("wb = blk_off[bi]")
    w.put("rb = blk_rb[bi]")
    w.put("cb = blk_cb[bi]")
    w.put(f"xbase = rb * {tile.m_b}")
    w.put(f"ybase = cb * {tile.t_b}")
    w.put(f"for st in range({stripes}):")
    w.level += 1
    w.put(f"coff = st * {tile.t_u * desc.lanes}")
    w.put("yoff = ybase + coff")
    if desc.group_size is None:
        _emit_stripe_fc(w, desc)
    else:
        _emit_stripe_grouped(w, desc)
    w.level -= 2
    if desc.group_size is None:
        _emit_epilogue_fc(w, desc)
    w.level -= 1
    return KernelSource(w.text(), desc.name, desc)


def write_kernels(descriptors: list[KernelDescriptor],
                  out_dir: str | Path) -> Path:
    """Generate kernel modules plus a manifest; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for desc in descriptors:
        src = generate_qgemv(desc)
        (out / desc.filename).write_text(src.source_text)
        entries.append(desc.to_dict())
    entries.sort(key=lambda e: e["name"])
    manifest = out / "manifest.json"
    manifest.write_text(json.dumps({"kernels": entries}, indent=2,
                                   sort_keys=True) + "\n")
    return manifest
