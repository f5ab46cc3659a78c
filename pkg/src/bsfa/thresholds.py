"""Calibrated gate thresholds and their binary file format.

Thresholds live in pre-softmax score units (QK^T / sqrt(d) scale) and are
indexed by (sparsity level, layer, head, query-block position).  The file
format is bit-exact little-endian: magic "BSFA", u32 version, u32 shape and
tile fields, the sparsity levels, then the raw float32 payload.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, FormatError

MAGIC = b"BSFA"
VERSION = 1
_HEADER = struct.Struct("<4sIIIIIIII")  # magic, version, S, L, H, P, b_m, b_n, n_max


@dataclass(eq=False)
class ThresholdTensor:
    """S x L x H x P threshold scores plus the calibration geometry."""

    values: np.ndarray          # (S, L, H, P) float32, +/-inf sentinels allowed
    k_levels: tuple[int, ...]   # retained-block counts, strictly increasing
    n_max: int                  # max calibrated sequence length (padded)
    b_m: int
    b_n: int
    diagnostics: object | None = None

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float32)
        self.k_levels = tuple(int(k) for k in self.k_levels)
        if self.values.ndim != 4:
            raise ConfigurationError(f"threshold tensor must be 4-D, got {self.values.shape}")
        if self.values.shape[0] != len(self.k_levels):
            raise ConfigurationError(
                f"{self.values.shape[0]} level slices but {len(self.k_levels)} k levels"
            )
        if any(b >= a for a, b in zip(self.k_levels[1:], self.k_levels)):
            raise ConfigurationError(f"k levels must be strictly increasing: {self.k_levels}")
        if self.values.shape[3] != -(-self.n_max // self.b_m):
            raise ConfigurationError(
                f"P={self.values.shape[3]} inconsistent with n_max={self.n_max}, b_m={self.b_m}"
            )

    @property
    def num_levels(self) -> int:
        return self.values.shape[0]

    @property
    def num_layers(self) -> int:
        return self.values.shape[1]

    @property
    def num_heads(self) -> int:
        return self.values.shape[2]

    @property
    def num_positions(self) -> int:
        return self.values.shape[3]

    def level_index(self, k: int) -> int:
        try:
            return self.k_levels.index(k)
        except ValueError:
            raise ConfigurationError(
                f"sparsity level k={k} not calibrated; available levels: {list(self.k_levels)}"
            ) from None


def threshold_lookup(t: ThresholdTensor, ctx) -> float:
    """Threshold for (layer, head, query block) at the selected k level.

    Query-block positions beyond the calibrated range reuse the last
    calibrated position.
    """
    s = t.level_index(ctx.k_level)
    if not (0 <= ctx.layer < t.num_layers and 0 <= ctx.head < t.num_heads):
        raise ConfigurationError(
            f"(layer={ctx.layer}, head={ctx.head}) outside calibrated "
            f"{t.num_layers}x{t.num_heads} grid"
        )
    p = min(ctx.query_block, t.num_positions - 1)
    return float(t.values[s, ctx.layer, ctx.head, p])


def save_thresholds(t: ThresholdTensor, path) -> None:
    s, l, h, p = t.values.shape
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, s, l, h, p, t.b_m, t.b_n, t.n_max))
        f.write(struct.pack(f"<{s}I", *t.k_levels))
        f.write(t.values.astype("<f4", copy=False).tobytes())


def load_thresholds(path) -> ThresholdTensor:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, s, l, h, p, b_m, b_n, n_max = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    expected = _HEADER.size + 4 * s + 4 * s * l * h * p
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(raw)}")
    k_levels = struct.unpack_from(f"<{s}I", raw, _HEADER.size)
    values = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size + 4 * s).reshape(s, l, h, p)
    try:
        return ThresholdTensor(values=values.copy(), k_levels=k_levels,
                               n_max=n_max, b_m=b_m, b_n=b_n)
    except ConfigurationError as e:
        raise FormatError(f"{path}: inconsistent header fields: {e}") from e
