"""Analytic FLOP, memory-traffic, and density accounting.

QK scores are charged for every causally reachable tile regardless of
gating (the gate needs them); only the PV multiply, softmax exponentials,
and V traffic scale with the retained-block density.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .tiling import TileConfig, frontier_count, off_frontier_count


@dataclass(frozen=True)
class CostConfig:
    n: int
    d: int
    h: int = 1
    tiles: TileConfig = field(default_factory=TileConfig)
    causal: bool = True

    @property
    def d_model(self) -> int:
        return self.h * self.d


@dataclass
class CostReport:
    qk_flops: float = 0.0
    pv_flops: float = 0.0
    softmax_ops: float = 0.0
    gate_overhead_ops: float = 0.0
    projection_flops: float = 0.0
    v_traffic_elements: float = 0.0
    k_traffic_elements: float = 0.0
    density_predicted: float | None = None
    density_measured_mean: float | None = None
    density_measured_std: float | None = None


def tile_counts(n: int, tiles: TileConfig, causal: bool = True) -> tuple[int, int]:
    """(total reachable tiles, frontier tiles) per head, n padded up."""
    n = tiles.padded_len(n)
    m_q = n // tiles.b_m
    m_kv = n // tiles.b_n
    frontier = sum(frontier_count(i, tiles, n) for i in range(m_q))
    if causal:
        reachable = sum(off_frontier_count(i, tiles) for i in range(m_q)) + frontier
    else:
        reachable = m_q * m_kv
    return reachable, frontier


def predicted_density(n: int, tiles: TileConfig, k: int) -> float:
    """Targeted fraction of causally reachable blocks under a top-k budget.

    Pooled over query blocks: sum_i (min(k, A_i) + F_i) / sum_i (A_i + F_i)
    with A_i reachable off-frontier blocks and F_i frontier blocks at i.
    """
    if k < 0:
        raise InvalidInputError(f"k must be >= 0, got {k}")
    n = tiles.padded_len(n)
    m_q = n // tiles.b_m
    kept = 0
    total = 0
    for i in range(m_q):
        a = off_frontier_count(i, tiles)
        f = frontier_count(i, tiles, n)
        kept += min(k, a) + f
        total += a + f
    return kept / total


def measured_density(traces_by_sample) -> tuple[float, float]:
    """Mean and population std of per-sample retained fractions.

    ``traces_by_sample`` is a sequence of samples, each a sequence of
    GateTrace objects (one per layer/head run of that sample).
    """
    fractions = []
    for traces in traces_by_sample:
        traces = list(traces)
        if not traces:
            continue
        kept = sum(t.kept_blocks() for t in traces)
        reachable = sum(t.reachable_blocks() for t in traces)
        fractions.append(kept / reachable)
    if not fractions:
        raise InvalidInputError("no traces to measure density from")
    arr = np.asarray(fractions)
    return float(arr.mean()), float(arr.std())


def per_tile_matmul_flops(tiles: TileConfig, d: int) -> int:
    """FLOPs of one B_M x B_N x d matmul (each of QK and PV costs this)."""
    return 2 * tiles.b_m * tiles.b_n * d


def attention_flops(cfg: CostConfig, density: float) -> CostReport:
    if not 0.0 <= density <= 1.0:
        raise InvalidInputError(f"density must be in [0, 1], got {density}")
    reachable, frontier = tile_counts(cfg.n, cfg.tiles, cfg.causal)
    gated = reachable - frontier
    per_tile = per_tile_matmul_flops(cfg.tiles, cfg.d)
    bmn = cfg.tiles.b_m * cfg.tiles.b_n
    return CostReport(
        qk_flops=per_tile * reachable * cfg.h,
        pv_flops=per_tile * reachable * density * cfg.h,
        softmax_ops=bmn * reachable * density * cfg.h,
        gate_overhead_ops=(bmn + 1) * gated * cfg.h,  # per-tile max plus compare
        projection_flops=8 * cfg.n * cfg.d_model ** 2,  # QKV and output projections
    )


def hbm_traffic(cfg: CostConfig, density: float) -> tuple[float, float]:
    """(key traffic, value traffic) in elements; keys are always loaded."""
    if not 0.0 <= density <= 1.0:
        raise InvalidInputError(f"density must be in [0, 1], got {density}")
    reachable, _ = tile_counts(cfg.n, cfg.tiles, cfg.causal)
    per_block = cfg.tiles.b_n * cfg.d
    return per_block * reachable * cfg.h, per_block * reachable * density * cfg.h


def projection_vs_attention_ratio(n: int, d_model: int) -> float:
    """Quadratic attention cost over linear projection cost: n / d_model."""
    if n < 1 or d_model < 1:
        raise InvalidInputError("n and d_model must be >= 1")
    return (n ** 2 * d_model) / (n * d_model ** 2)


def threshold_tensor_size(s: int, l: int, h: int, n_max: int, b_m: int) -> int:
    """Value count of an S x L x H x ceil(n_max / b_m) threshold tensor."""
    if min(s, l, h, n_max, b_m) < 1:
        raise InvalidInputError("all arguments must be >= 1")
    return s * l * h * (-(-n_max // b_m))


# The ten published predicted-density reference points for the default
# 128x64 tiling: sequence length -> {k: density}.
TABLE1_PREDICTED = {
    32768: {64: 0.24, 96: 0.35, 128: 0.45, 192: 0.62},
    65536: {192: 0.35, 256: 0.44, 384: 0.62},
    131072: {512: 0.44, 768: 0.61, 1024: 0.76},
}


def table1_rows(tiles: TileConfig | None = None):
    """(n, k, reference density, computed density) for all published configs."""
    tiles = tiles or TileConfig()
    rows = []
    for n, entries in TABLE1_PREDICTED.items():
        for k, ref in entries.items():
            rows.append((n, k, ref, predicted_density(n, tiles, k)))
    return rows
