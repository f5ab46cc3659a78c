"""Double-precision reference attention: the correctness oracle.

Everything here is deliberately simple and slow: two-pass, max-subtracted
softmax computed in float64 on the full score matrix.  The streaming engine
is always checked against these functions, never the other way around.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateRowError, InvalidInputError
from .tiling import TileConfig, frontier_blocks

_NEG_INF = np.float64(-np.inf)


@dataclass
class HeadInput:
    """One attention head's query/key/value matrices plus sequence metadata.

    Matrices are stored as contiguous float32 (the engine's working
    precision); the oracle upcasts to float64 from these exact values.
    """

    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    causal: bool = True

    def __post_init__(self):
        self.q = np.ascontiguousarray(self.q, dtype=np.float32)
        self.k = np.ascontiguousarray(self.k, dtype=np.float32)
        self.v = np.ascontiguousarray(self.v, dtype=np.float32)
        for name, m in (("q", self.q), ("k", self.k), ("v", self.v)):
            if m.ndim != 2:
                raise InvalidInputError(f"{name} must be 2-D, got shape {m.shape}")
            if m.shape != self.q.shape:
                raise InvalidInputError(
                    f"q/k/v shapes differ: q={self.q.shape}, {name}={m.shape}"
                )
            if not np.isfinite(m).all():
                raise InvalidInputError(f"{name} contains non-finite entries")
        n, d = self.q.shape
        if n < 1 or d < 1:
            raise InvalidInputError(f"need n >= 1 and d >= 1, got n={n}, d={d}")

    @property
    def seq_len(self) -> int:
        return self.q.shape[0]

    @property
    def head_dim(self) -> int:
        return self.q.shape[1]


@dataclass
class AttentionOutput:
    o: np.ndarray          # (n, d)
    logsumexp: np.ndarray  # (n,) per-row m + log(l)


@dataclass
class BlockMask:
    """Boolean (query block x kv block) grid of allowed blocks."""

    allowed: np.ndarray

    def __post_init__(self):
        self.allowed = np.asarray(self.allowed, dtype=bool)
        if self.allowed.ndim != 2:
            raise InvalidInputError(f"mask must be 2-D, got shape {self.allowed.shape}")

    @classmethod
    def all_true(cls, n: int, tiles: TileConfig) -> "BlockMask":
        return cls(np.ones((tiles.num_q_blocks(n), tiles.num_kv_blocks(n)), dtype=bool))

    @classmethod
    def frontier_only(cls, n: int, tiles: TileConfig) -> "BlockMask":
        allowed = np.zeros((tiles.num_q_blocks(n), tiles.num_kv_blocks(n)), dtype=bool)
        for i in range(allowed.shape[0]):
            fr = frontier_blocks(i, tiles, n)
            allowed[i, fr.start:fr.stop] = True
        return cls(allowed)

    def check(self, n: int, tiles: TileConfig, causal: bool) -> None:
        """Assert the structural invariants: frontier on, unreachable off."""
        mq, mkv = self.allowed.shape
        if mq != tiles.num_q_blocks(n) or mkv != tiles.num_kv_blocks(n):
            raise InvalidInputError(
                f"mask shape {self.allowed.shape} does not match the "
                f"{tiles.num_q_blocks(n)}x{tiles.num_kv_blocks(n)} block grid"
            )
        for i in range(mq):
            fr = frontier_blocks(i, tiles, n)
            if not self.allowed[i, fr.start:fr.stop].all():
                raise InvalidInputError(f"frontier block disallowed at query block {i}")
            if causal and fr.stop < mkv and self.allowed[i, fr.stop:].any():
                raise InvalidInputError(f"unreachable block allowed at query block {i}")


def _reference(inp: HeadInput, allow: np.ndarray) -> AttentionOutput:
    """Restricted softmax attention in float64 over an explicit key mask."""
    if not allow.any(axis=1).all():
        bad = int(np.flatnonzero(~allow.any(axis=1))[0])
        raise DegenerateRowError(f"query row {bad} has an empty allowed key set")
    q = inp.q.astype(np.float64)
    k = inp.k.astype(np.float64)
    v = inp.v.astype(np.float64)
    s = (q @ k.T) / np.sqrt(np.float64(inp.head_dim))
    s = np.where(allow, s, _NEG_INF)
    m = s.max(axis=1)
    p = np.exp(s - m[:, None])
    l = p.sum(axis=1)
    o = (p @ v) / l[:, None]
    return AttentionOutput(o=o, logsumexp=m + np.log(l))


def _causal_allow(n: int) -> np.ndarray:
    idx = np.arange(n)
    return idx[None, :] <= idx[:, None]


def dense_attention(inp: HeadInput) -> AttentionOutput:
    """softmax(QK^T / sqrt(d)) V with optional causal mask, in float64."""
    n = inp.seq_len
    allow = _causal_allow(n) if inp.causal else np.ones((n, n), dtype=bool)
    return _reference(inp, allow)


def masked_dense_attention(inp: HeadInput, mask: BlockMask, tiles: TileConfig) -> AttentionOutput:
    """Dense attention restricted, per query row, to keys in allowed blocks."""
    n = inp.seq_len
    mask.check(n, tiles, inp.causal)
    rb = np.arange(n) // tiles.b_m
    kb = np.arange(n) // tiles.b_n
    allow = mask.allowed[rb][:, kb]
    if inp.causal:
        allow = allow & _causal_allow(n)
    return _reference(inp, allow)


def max_rel_err(actual: np.ndarray, expected: np.ndarray) -> float:
    """max |actual - expected| / (1 + max |expected|)."""
    a = np.asarray(actual, dtype=np.float64)
    e = np.asarray(expected, dtype=np.float64)
    return float(np.max(np.abs(a - e)) / (1.0 + np.max(np.abs(e))))
