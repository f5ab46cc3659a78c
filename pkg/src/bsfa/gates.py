"""Pluggable block-gate policies.

A gate sees the score tile of an off-frontier block and answers keep/skip.
Gates are stateless and read-only during a run; frontier blocks never reach
them (the engine processes those unconditionally).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import RunningStats, ScoreTile
from .errors import ConfigurationError
from .thresholds import ThresholdTensor, threshold_lookup
from .tiling import TileConfig


@dataclass(frozen=True)
class GateContext:
    """Identifies where in the model a run sits, for threshold lookup."""

    layer: int = 0
    head: int = 0
    k_level: int | None = None
    query_block: int = 0


class Gate:
    name = "gate"

    def validate(self, tiles: TileConfig, ctx: GateContext) -> None:
        pass

    def decide(self, tile: ScoreTile, i: int, j: int, stats: RunningStats,
               ctx: GateContext, tiles: TileConfig) -> bool:
        raise NotImplementedError


class DenseGate(Gate):
    """Keeps every reachable block (the exact-attention endpoint)."""

    name = "dense"

    def decide(self, tile, i, j, stats, ctx, tiles):
        return True


class FrontierOnlyGate(Gate):
    """Skips every off-frontier block (the maximal-sparsity endpoint)."""

    name = "frontier"

    def decide(self, tile, i, j, stats, ctx, tiles):
        return False


class ThresholdGate(Gate):
    """Keep iff the tile maximum strictly exceeds the calibrated threshold."""

    name = "threshold"

    def __init__(self, tensor: ThresholdTensor):
        self.tensor = tensor

    def validate(self, tiles, ctx):
        if ctx.k_level is None:
            raise ConfigurationError("threshold gate needs ctx.k_level")
        self.tensor.level_index(ctx.k_level)
        if (tiles.b_m, tiles.b_n) != (self.tensor.b_m, self.tensor.b_n):
            raise ConfigurationError(
                f"run tiles {tiles.b_m}x{tiles.b_n} differ from calibration tiles "
                f"{self.tensor.b_m}x{self.tensor.b_n}; recalibrate instead of rescaling"
            )

    def decide(self, tile, i, j, stats, ctx, tiles):
        return tile.s_max > threshold_lookup(self.tensor, ctx)


class SlidingWindowGate(Gate):
    """Keep blocks within a trailing window of ``w`` tokens.

    Block j is kept when its key range intersects
    [max(0, i*b_m - w), (i+1)*b_m), i.e. some query row of block i has
    block j inside its trailing window.
    """

    name = "sliding-window"

    def __init__(self, window: int):
        if window < 0:
            raise ConfigurationError(f"window must be >= 0, got {window}")
        self.window = window

    def decide(self, tile, i, j, stats, ctx, tiles):
        return ((j + 1) * tiles.b_n > i * tiles.b_m - self.window
                and j * tiles.b_n < (i + 1) * tiles.b_m)


class RunningMaxGate(Gate):
    """Skip when the tile's row maxima sit far below the running maxima.

    Skips iff max over rows of (local row max - running row max) < lambda,
    evaluated before the tile is merged into the running statistics.  On the
    first block of a query block the running maxima are -inf, so the
    difference is +inf and the block is kept.
    """

    name = "running-max"

    def __init__(self, lam: float):
        self.lam = float(lam)

    def decide(self, tile, i, j, stats, ctx, tiles):
        local = tile.s.max(axis=1)
        diff = local - stats.m  # -inf running max gives +inf
        return bool(diff.max() >= self.lam)


def dense_gate() -> DenseGate:
    return DenseGate()


def frontier_only_gate() -> FrontierOnlyGate:
    return FrontierOnlyGate()


def threshold_gate(tensor: ThresholdTensor) -> ThresholdGate:
    return ThresholdGate(tensor)


def sliding_window_gate(window: int) -> SlidingWindowGate:
    return SlidingWindowGate(window)


def running_max_gate(lam: float) -> RunningMaxGate:
    return RunningMaxGate(lam)
