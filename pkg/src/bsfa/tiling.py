"""Block-grid geometry: tile sizes, causal reachability, and frontier sets.

The key/value axis is split into blocks of ``b_n`` tokens and the query axis
into blocks of ``b_m`` tokens.  A kv block is a *frontier* block of query
block ``i`` when its key range overlaps the query rows of block ``i``; these
blocks straddle the causal boundary and are always processed by the engine.
Blocks entirely before the boundary are *off-frontier* (the gated ones) and
blocks entirely after it are unreachable under causal masking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ConfigurationError


@dataclass(frozen=True)
class TileConfig:
    """Query/kv block sizes.  Defaults match the common 128x64 tiling."""

    b_m: int = 128
    b_n: int = 64

    def __post_init__(self):
        if self.b_m < 1 or self.b_n < 1:
            raise ConfigurationError(f"block sizes must be >= 1, got {self.b_m}x{self.b_n}")
        if self.b_m % self.b_n != 0 and self.b_n % self.b_m != 0:
            raise ConfigurationError(
                f"one block size must divide the other, got b_m={self.b_m}, b_n={self.b_n}"
            )

    @property
    def alignment(self) -> int:
        """Sequence lengths are padded to a multiple of this."""
        return math.lcm(self.b_m, self.b_n)

    def num_q_blocks(self, n: int) -> int:
        return -(-n // self.b_m)

    def num_kv_blocks(self, n: int) -> int:
        return -(-n // self.b_n)

    def padded_len(self, n: int) -> int:
        a = self.alignment
        return -(-n // a) * a


def frontier_blocks(i: int, tiles: TileConfig, n: int | None = None) -> range:
    """kv blocks whose key range intersects the rows of query block ``i``.

    With ``n`` given, the range is clamped to the kv-block grid of an
    ``n``-token sequence (relevant only for a ragged final query block).
    """
    lo = (i * tiles.b_m) // tiles.b_n
    hi = -(-((i + 1) * tiles.b_m) // tiles.b_n)
    if n is not None:
        hi = min(hi, tiles.num_kv_blocks(n))
    return range(lo, hi)


def off_frontier_count(i: int, tiles: TileConfig) -> int:
    """Number of causally reachable kv blocks strictly before the frontier."""
    return (i * tiles.b_m) // tiles.b_n


def frontier_count(i: int, tiles: TileConfig, n: int | None = None) -> int:
    return len(frontier_blocks(i, tiles, n))
