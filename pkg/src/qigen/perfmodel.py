"""Register-tile and cache-block selection from a hardware descriptor.

The register tile ``(m_u, t_u)`` must satisfy ``m_u + m_u*t_u + t_u <= vregs``
(one register per broadcast input value, per live weight vector, and per
output accumulator).  The cache block ``(m_b, t_b)`` maximizes its L1
footprint ``32*m_b + bits*m_b*t_b + 32*t_b`` subject to the cache capacity,
with both sizes multiples of the register tile.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from .config import ConfigError, QuantConfig, pack_unit


class PlanError(ValueError):
    """No tile satisfies the hardware model constraints."""


@dataclass(frozen=True)
class HardwareSpec:
    """CPU execution resources used by the performance model.

    ``l1_bits`` is the L1 data-cache capacity in bits, ``vregs`` the number
    of architectural vector registers, ``lanes`` the 32-bit elements per
    vector register.
    """

    l1_bits: int = 262144  # 32 KiB
    vregs: int = 16
    lanes: int = 8
    threads: int = 1

    def __post_init__(self) -> None:
        for name in ("l1_bits", "vregs", "lanes", "threads"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.l1_bits < 4096:
            raise ConfigError(f"l1_bits must be at least 4096, got {self.l1_bits}")


DEFAULT_HARDWARE = HardwareSpec()

_HW_KEYS = ("l1_bits", "vregs", "lanes", "threads")


def load_hardware_spec(path: str | Path) -> HardwareSpec:
    """Parse a ``key = value`` hardware descriptor file."""
    values: dict[str, int] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = [p.strip() for p in (line.split("=", 1) if "=" in line
                                     else line.split(None, 1))]
        if len(parts) != 2 or parts[0] not in _HW_KEYS:
            raise ConfigError(f"{path}:{lineno}: expected '<key> = <int>' with "
                              f"key in {_HW_KEYS}, got {raw!r}")
        try:
            values[parts[0]] = int(parts[1])
        except ValueError:
            raise ConfigError(f"{path}:{lineno}: non-integer value {parts[1]!r}") from None
    return HardwareSpec(**values)


def save_hardware_spec(hw: HardwareSpec, path: str | Path) -> None:
    text = "".join(f"{k} = {getattr(hw, k)}\n" for k in _HW_KEYS)
    Path(path).write_text(text)


@dataclass(frozen=True)
class TilePlan:
    """Register tile (m_u, t_u) and cache block (m_b, t_b)."""

    m_u: int
    t_u: int
    m_b: int
    t_b: int

    def __post_init__(self) -> None:
        for name in ("m_u", "t_u", "m_b", "t_b"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise PlanError(f"{name} must be a positive integer, got {v!r}")
        if self.m_b % self.m_u != 0 or self.t_b % self.t_u != 0:
            raise PlanError(f"block ({self.m_b}, {self.t_b}) is not a multiple "
                            f"of the register tile ({self.m_u}, {self.t_u})")

    def register_cost(self) -> int:
        return register_cost(self.m_u, self.t_u)

    def block_cost(self, bits: int) -> int:
        return block_cost(bits, self.m_b, self.t_b)

    def check_model(self, hw: HardwareSpec, bits: int) -> None:
        """Raise unless all three model constraints hold."""
        if self.register_cost() > hw.vregs:
            raise PlanError(f"register tile ({self.m_u}, {self.t_u}) needs "
                            f"{self.register_cost()} > {hw.vregs} registers")
        if self.block_cost(bits) > hw.l1_bits:
            raise PlanError(f"cache block ({self.m_b}, {self.t_b}) needs "
                            f"{self.block_cost(bits)} > {hw.l1_bits} bits")


def register_cost(m_u: int, t_u: int) -> int:
    return m_u + m_u * t_u + t_u


def block_cost(bits: int, m_b: int, t_b: int) -> int:
    return 32 * m_b + bits * m_b * t_b + 32 * t_b


def feasible_register_tiles(vregs: int) -> list[tuple[int, int]]:
    """All (m_u, t_u) pairs within the register budget."""
    out = []
    for m_u in range(1, vregs + 1):
        for t_u in range(1, vregs + 1):
            if register_cost(m_u, t_u) <= vregs:
                out.append((m_u, t_u))
    return out


def select_register_tile(
    hw: HardwareSpec,
    ranker: Callable[[int, int], float] | None = None,
) -> tuple[int, int]:
    """Pick a register tile within the budget.

    Without a ranker the pair maximizing ``m_u * t_u`` wins (larger ``t_u``
    breaking ties); a ranker replaces that score with a measured throughput.
    """
    if hw.vregs < 3:
        raise PlanError(f"need at least 3 vector registers, have {hw.vregs}")
    candidates = feasible_register_tiles(hw.vregs)
    if not candidates:
        raise PlanError(f"no feasible register tile for {hw.vregs} registers")
    if ranker is None:
        return max(candidates, key=lambda p: (p[0] * p[1], p[1]))
    return max(candidates, key=lambda p: (ranker(p[0], p[1]), p[0] * p[1], p[1]))


def _capped_multiples(step: int, limit: int) -> int:
    """Largest multiple of step not exceeding limit, or step if none fits."""
    return max(step, (limit // step) * step)


def select_cache_block(
    hw: HardwareSpec,
    bits: int,
    m_u: int,
    t_u: int,
    dims: tuple[int, int],
    *,
    m_align: int = 1,
    t_align: int = 1,
) -> tuple[int, int]:
    """Maximize the cache footprint over tile multiples within L1.

    Candidates are multiples of ``lcm(m_u, m_align)`` and
    ``lcm(t_u, t_align)`` capped at the matrix dimensions (rounded up to one
    step when a dimension is smaller than the step).  Ties resolve to the
    larger ``t_b``, then the larger ``m_b``.
    """
    n, m = dims
    if n < 1 or m < 1:
        raise PlanError(f"matrix dims must be positive, got {dims}")
    m_step = math.lcm(m_u, m_align)
    t_step = math.lcm(t_u, t_align)
    m_cap = _capped_multiples(m_step, n)
    t_cap = _capped_multiples(t_step, m)
    gamma = hw.l1_bits
    best: tuple[int, int, int] | None = None  # (objective, t_b, m_b)
    for m_b in range(m_step, m_cap + 1, m_step):
        denom = bits * m_b + 32
        t_fit = (gamma - 32 * m_b) // denom if gamma > 32 * m_b else 0
        t_b = min(t_cap, (t_fit // t_step) * t_step)
        if t_b < t_step:
            continue
        key = (block_cost(bits, m_b, t_b), t_b, m_b)
        if best is None or key > best:
            best = key
    if best is None:
        raise PlanError(
            f"minimal block ({m_step}, {t_step}) exceeds the L1 budget of "
            f"{gamma} bits at {bits}-bit weights")
    return best[2], best[1]


def plan(
    hw: HardwareSpec,
    config: QuantConfig,
    dims: tuple[int, int],
    ranker: Callable[[int, int], float] | None = None,
) -> TilePlan:
    """Derive a full tile plan whose blocks are layout- and kernel-ready.

    On top of the model constraints, ``m_b`` is aligned so blocks hold whole
    packed words and whole quantization groups, and ``t_b`` so blocks hold
    whole ``t_u``-register lane stripes.
    """
    m_u, t_u = select_register_tile(hw, ranker)
    unit_rows, _ = pack_unit(config.bits)
    m_align = unit_rows if config.group_size is None else math.lcm(
        unit_rows, config.group_size)
    m_b, t_b = select_cache_block(hw, config.bits, m_u, t_u, dims,
                                  m_align=m_align, t_align=t_u * hw.lanes)
    tile = TilePlan(m_u, t_u, m_b, t_b)
    tile.check_model(hw, config.bits)
    return tile
