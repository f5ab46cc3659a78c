"""Tiled streaming attention engine: online softmax with per-block gating.

Single-precision throughout.  Each query block keeps running row maxima
``m``, normalizers ``l``, and an un-scaled accumulator; kept kv blocks are
folded in with the usual rescale/accumulate update.  Off-frontier blocks are
scored, then offered to the gate; skipped blocks leave the running
statistics untouched.  Frontier blocks bypass the gate and are processed
with the causal mask applied element-wise.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .core import AttentionOutput, BlockMask, HeadInput
from .errors import NumericError
from .tiling import TileConfig, frontier_blocks

UNREACHABLE = 0
SKIPPED = 1
FRONTIER = 2
KEPT = 3

_F32_NEG_INF = np.float32(-np.inf)


@dataclass
class ScoreTile:
    """Pre-softmax scores of one (query block, kv block) pair."""

    s: np.ndarray  # (b_m, b_n) float32, masked entries -inf

    @property
    def s_max(self) -> float:
        return float(self.s.max())


@dataclass
class RunningStats:
    """Online-softmax state for one query block."""

    m: np.ndarray        # (b_m,) running row maxima
    l: np.ndarray        # (b_m,) running normalizers
    o_tilde: np.ndarray  # (b_m, d) un-scaled accumulator

    @classmethod
    def init(cls, b_m: int, d: int) -> "RunningStats":
        return cls(
            m=np.full(b_m, -np.inf, dtype=np.float32),
            l=np.zeros(b_m, dtype=np.float32),
            o_tilde=np.zeros((b_m, d), dtype=np.float32),
        )

    def update(self, s: np.ndarray, v_block: np.ndarray) -> None:
        """Fold one score tile and its value block into the running state."""
        m_new = np.maximum(self.m, s.max(axis=1))
        # rows with no visible key yet keep m = -inf; substitute 0 so the
        # exponentials stay defined (they evaluate to 0 for those rows)
        m_safe = np.where(np.isneginf(m_new), np.float32(0.0), m_new)
        p = np.exp(s - m_safe[:, None])
        alpha = np.exp(self.m - m_safe)
        self.o_tilde *= alpha[:, None]
        self.o_tilde += p @ v_block
        self.l = self.l * alpha + p.sum(axis=1)
        self.m = m_new


@dataclass
class GateTrace:
    """Per-(query block, kv block) keep/skip record of one gated head run."""

    decisions: np.ndarray  # (m_q, m_kv) int8, codes above
    tiles: TileConfig
    causal: bool
    layer: int = 0
    head: int = 0

    def to_mask(self) -> BlockMask:
        return BlockMask(self.decisions >= FRONTIER)

    def kept_blocks(self) -> int:
        """Blocks actually processed, frontier included."""
        return int((self.decisions >= FRONTIER).sum())

    def reachable_blocks(self) -> int:
        return int((self.decisions != UNREACHABLE).sum())

    def retained_off_frontier(self) -> np.ndarray:
        """Kept off-frontier block count per query block."""
        return (self.decisions == KEPT).sum(axis=1)

    def density(self) -> float:
        return self.kept_blocks() / self.reachable_blocks()


def pad_to_blocks(inp: HeadInput, tiles: TileConfig) -> tuple[HeadInput, int]:
    """Pad Q/K/V to the block-grid alignment by repeating their last rows.

    Padded rows behave as causal positions n, n+1, ...; callers drop output
    rows at or beyond the returned valid length.
    """
    n = inp.seq_len
    target = tiles.padded_len(n)
    if target == n:
        return inp, n
    pad = target - n

    def _extend(m):
        return np.concatenate([m, np.repeat(m[-1:], pad, axis=0)])

    return HeadInput(_extend(inp.q), _extend(inp.k), _extend(inp.v), causal=inp.causal), n


def flash_forward(
    inp: HeadInput,
    tiles: TileConfig,
    gate,
    ctx=None,
    threads: int = 1,
    inject_fault: bool = False,
) -> tuple[AttentionOutput, GateTrace]:
    """Run the gated streaming attention for one head.

    ``gate`` is any object with ``validate(tiles, ctx)`` and
    ``decide(tile, i, j, stats, ctx, tiles)`` (see bsfa.gates).  Query blocks
    are independent, so ``threads > 1`` processes them concurrently with
    per-block private statistics; results are identical to the serial run.
    """
    from .gates import GateContext  # local import to avoid a cycle

    if ctx is None:
        ctx = GateContext()
    gate.validate(tiles, ctx)

    padded, valid_len = pad_to_blocks(inp, tiles)
    n = padded.seq_len
    d = padded.head_dim
    b_m, b_n = tiles.b_m, tiles.b_n
    m_q, m_kv = tiles.num_q_blocks(n), tiles.num_kv_blocks(n)
    causal = padded.causal
    scale = np.float32(1.0 / np.sqrt(d))

    q, k, v = padded.q, padded.k, padded.v
    out = np.empty((n, d), dtype=np.float32)
    lse = np.empty(n, dtype=np.float32)
    decisions = np.zeros((m_q, m_kv), dtype=np.int8)

    def process_query_block(i: int) -> None:
        fr = frontier_blocks(i, tiles)
        reach_hi = fr.stop - 1 if causal else m_kv - 1
        stats = RunningStats.init(b_m, d)
        qi = q[i * b_m:(i + 1) * b_m]
        row_pos = np.arange(i * b_m, (i + 1) * b_m)
        for j in range(reach_hi + 1):
            kj = k[j * b_n:(j + 1) * b_n]
            s = (qi @ kj.T) * scale
            if not causal and (j + 1) * b_n > valid_len:
                # padded keys are invisible; under causal masking the
                # position rule already excludes them for valid rows
                key_pos = np.arange(j * b_n, (j + 1) * b_n)
                s[:, key_pos >= valid_len] = _F32_NEG_INF
            if fr.start <= j < fr.stop:
                if causal:
                    key_pos = np.arange(j * b_n, (j + 1) * b_n)
                    s[row_pos[:, None] < key_pos[None, :]] = _F32_NEG_INF
                decisions[i, j] = FRONTIER
            else:
                keep = gate.decide(ScoreTile(s), i, j, stats, replace(ctx, query_block=i), tiles)
                decisions[i, j] = KEPT if keep else SKIPPED
                if not keep:
                    continue
            stats.update(s, v[j * b_n:(j + 1) * b_n])
        if inject_fault and i == 0:
            stats.o_tilde[0, 0] += np.float32(1e-2)  # testing hook for the verifier
        if not np.isfinite(stats.o_tilde).all() or not (stats.l > 0).all():
            raise NumericError(f"non-finite accumulator in query block {i}")
        sl = slice(i * b_m, (i + 1) * b_m)
        out[sl] = stats.o_tilde / stats.l[:, None]
        lse[sl] = stats.m + np.log(stats.l)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(process_query_block, range(m_q)))
    else:
        for i in range(m_q):
            process_query_block(i)

    trace = GateTrace(decisions=decisions, tiles=tiles, causal=causal,
                      layer=ctx.layer, head=ctx.head)
    return AttentionOutput(o=out[:valid_len], logsumexp=lse[:valid_len]), trace
