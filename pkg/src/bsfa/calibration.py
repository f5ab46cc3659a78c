"""Threshold calibration: sort block maxima, pick the top-k cutoff, average.

For every (layer, head, query-block position) the off-frontier tile maxima
are sorted descending; the threshold is the (k+1)-th largest value, i.e. the
largest value that must be skipped, so that a strict ``s_max > T`` gate
retains exactly the top k when maxima are distinct.  Per-sample thresholds
are averaged across calibration samples in sorted sample-id order.

Tile maxima are computed with the same per-tile float32 matmul the engine
uses, so calibration and inference see bit-identical scores.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, FormatError, InvalidInputError
from .thresholds import ThresholdTensor
from .tiling import TileConfig, off_frontier_count


@dataclass
class CalibrationSample:
    """Per-(layer, head) Q and K activations of one calibration input."""

    sample_id: int
    q: np.ndarray            # (L, H, N, d) float32
    k: np.ndarray            # (L, H, N, d) float32
    v: np.ndarray | None = None

    def __post_init__(self):
        self.q = np.ascontiguousarray(self.q, dtype=np.float32)
        self.k = np.ascontiguousarray(self.k, dtype=np.float32)
        if self.v is not None:
            self.v = np.ascontiguousarray(self.v, dtype=np.float32)
        if self.q.ndim != 4 or self.q.shape != self.k.shape:
            raise InvalidInputError(
                f"sample {self.sample_id}: q/k must be matching 4-D arrays, "
                f"got {self.q.shape} and {self.k.shape}"
            )
        if self.v is not None and self.v.shape != self.q.shape:
            raise InvalidInputError(f"sample {self.sample_id}: v shape {self.v.shape} differs")

    @property
    def seq_len(self) -> int:
        return self.q.shape[2]


@dataclass
class CalibrationDump:
    num_layers: int
    num_heads: int
    head_dim: int
    samples: list[CalibrationSample] = field(default_factory=list)

    def __post_init__(self):
        for s in self.samples:
            if s.q.shape[0] != self.num_layers or s.q.shape[1] != self.num_heads \
                    or s.q.shape[3] != self.head_dim:
                raise ConfigurationError(
                    f"sample {s.sample_id} shape {s.q.shape} inconsistent with dump "
                    f"(L={self.num_layers}, H={self.num_heads}, d={self.head_dim})"
                )


@dataclass
class BlockMaximaProfile:
    """Descending-sorted off-frontier tile maxima per (layer, head, position)."""

    num_layers: int
    num_heads: int
    num_positions: int
    maxima: dict  # (layer, head, position) -> float32 array, sorted descending


@dataclass
class CalibrationDiagnostics:
    num_samples: int
    tie_counts: dict            # k level -> positions where the cutoff is tied
    threshold_stats: dict       # k level -> (min, mean, max) over finite entries


def _pad_rows(m: np.ndarray, target: int) -> np.ndarray:
    if m.shape[0] == target:
        return m
    return np.concatenate([m, np.repeat(m[-1:], target - m.shape[0], axis=0)])


def collect_block_maxima(sample: CalibrationSample, tiles: TileConfig) -> BlockMaximaProfile:
    """Tile maxima of all causally reachable off-frontier blocks, sorted."""
    n_pad = tiles.padded_len(sample.seq_len)
    num_p = n_pad // tiles.b_m
    d = sample.q.shape[3]
    scale = np.float32(1.0 / np.sqrt(d))
    b_m, b_n = tiles.b_m, tiles.b_n

    maxima = {}
    for l in range(sample.q.shape[0]):
        for h in range(sample.q.shape[1]):
            q = _pad_rows(sample.q[l, h], n_pad)
            k = _pad_rows(sample.k[l, h], n_pad)
            if not (np.isfinite(q).all() and np.isfinite(k).all()):
                raise InvalidInputError(f"sample {sample.sample_id}: non-finite activations")
            for p in range(num_p):
                qp = q[p * b_m:(p + 1) * b_m]
                a = off_frontier_count(p, tiles)
                vals = np.empty(a, dtype=np.float32)
                for j in range(a):
                    # same shapes and dtype as the engine's score tiles
                    s = (qp @ k[j * b_n:(j + 1) * b_n].T) * scale
                    vals[j] = s.max()
                vals[::-1].sort()  # descending, in place
                maxima[(l, h, p)] = vals
    return BlockMaximaProfile(
        num_layers=sample.q.shape[0],
        num_heads=sample.q.shape[1],
        num_positions=num_p,
        maxima=maxima,
    )


def thresholds_from_maxima(profile: BlockMaximaProfile, k: int) -> np.ndarray:
    """Per-(layer, head, position) cutoffs for one sparsity level.

    Returns an (L, H, P) float64 array with +inf where k = 0 and -inf where
    fewer than k+1 off-frontier blocks are reachable (retain everything).
    """
    if k < 0:
        raise ConfigurationError(f"k must be >= 0, got {k}")
    out = np.empty((profile.num_layers, profile.num_heads, profile.num_positions))
    for (l, h, p), vals in profile.maxima.items():
        if k == 0:
            out[l, h, p] = np.inf
        elif len(vals) <= k:
            out[l, h, p] = -np.inf
        else:
            out[l, h, p] = np.float64(vals[k])
    return out


def _tie_count(profile: BlockMaximaProfile, k: int) -> int:
    """Positions where the k-th and (k+1)-th maxima coincide (strict > then
    retains fewer than k blocks)."""
    if k == 0:
        return 0
    return sum(
        1 for vals in profile.maxima.values()
        if len(vals) > k and vals[k - 1] == vals[k]
    )


def calibrate(dump: CalibrationDump, k_levels, tiles: TileConfig) -> ThresholdTensor:
    """Build the threshold tensor by averaging per-sample cutoffs.

    Sentinels dominate a position's mean only when every covering sample
    produces the sentinel; mixed finite/sentinel positions average the
    finite values.  Positions beyond a short sample's last query block get
    no contribution from that sample.
    """
    if not dump.samples:
        raise ConfigurationError("calibration dump has no samples")
    k_levels = [int(k) for k in k_levels]
    if not k_levels:
        raise ConfigurationError("need at least one sparsity level")
    if any(a >= b for a, b in zip(k_levels, k_levels[1:])):
        raise ConfigurationError(f"k levels must be strictly increasing: {k_levels}")

    samples = sorted(dump.samples, key=lambda s: s.sample_id)
    n_max = max(tiles.padded_len(s.seq_len) for s in samples)
    num_p = n_max // tiles.b_m
    s_lv = len(k_levels)
    shape = (s_lv, dump.num_layers, dump.num_heads, num_p)

    finite_sum = np.zeros(shape)
    finite_cnt = np.zeros(shape, dtype=np.int64)
    neg_cnt = np.zeros(shape, dtype=np.int64)
    pos_cnt = np.zeros(shape, dtype=np.int64)
    covered = np.zeros(num_p, dtype=bool)
    tie_counts = {k: 0 for k in k_levels}

    for sample in samples:
        profile = collect_block_maxima(sample, tiles)
        covered[:profile.num_positions] = True
        for si, k in enumerate(k_levels):
            t = thresholds_from_maxima(profile, k)
            tie_counts[k] += _tie_count(profile, k)
            region = (si, slice(None), slice(None), slice(0, profile.num_positions))
            finite = np.isfinite(t)
            finite_sum[region] += np.where(finite, t, 0.0)
            finite_cnt[region] += finite
            neg_cnt[region] += np.isneginf(t)
            pos_cnt[region] += np.isposinf(t)

    if not covered.all():
        raise ConfigurationError("some calibrated positions are covered by no sample")

    with np.errstate(invalid="ignore"):
        values = np.where(finite_cnt > 0, finite_sum / np.maximum(finite_cnt, 1), 0.0)
    values = np.where((finite_cnt == 0) & (neg_cnt > 0), -np.inf, values)
    values = np.where((finite_cnt == 0) & (neg_cnt == 0) & (pos_cnt > 0), np.inf, values)
    values = values.astype(np.float32)

    # larger k must never raise the cutoff at a fixed (layer, head, position)
    assert not (values[1:] > values[:-1]).any(), "threshold monotonicity violated"

    stats = {}
    for si, k in enumerate(k_levels):
        finite_vals = values[si][np.isfinite(values[si])]
        if finite_vals.size:
            stats[k] = (float(finite_vals.min()), float(finite_vals.mean()),
                        float(finite_vals.max()))
        else:
            stats[k] = (None, None, None)

    diag = CalibrationDiagnostics(num_samples=len(samples), tie_counts=tie_counts,
                                  threshold_stats=stats)
    return ThresholdTensor(values=values, k_levels=tuple(k_levels), n_max=n_max,
                           b_m=tiles.b_m, b_n=tiles.b_n, diagnostics=diag)


# --- calibration dump disk format -------------------------------------------
#
# A directory with manifest.json:
#   {"num_layers": L, "num_heads": H, "head_dim": d,
#    "samples": [{"id": 0, "seq_len": N, "path": "sample_0000.bin", "has_v": true}, ...]}
# Each blob is raw little-endian float32 in layout
# [layer][head][tensor: Q=0, K=1, V=2 if present][row][col].

MANIFEST_NAME = "manifest.json"


def save_dump(dump: CalibrationDump, directory) -> str:
    os.makedirs(directory, exist_ok=True)
    entries = []
    for s in sorted(dump.samples, key=lambda s: s.sample_id):
        name = f"sample_{s.sample_id:04d}.bin"
        has_v = s.v is not None
        parts = [s.q, s.k] + ([s.v] if has_v else [])
        blob = np.stack(parts, axis=2)  # (L, H, T, N, d)
        with open(os.path.join(directory, name), "wb") as f:
            f.write(blob.astype("<f4", copy=False).tobytes())
        entries.append({"id": s.sample_id, "seq_len": s.seq_len, "path": name, "has_v": has_v})
    manifest = {
        "num_layers": dump.num_layers,
        "num_heads": dump.num_heads,
        "head_dim": dump.head_dim,
        "samples": entries,
    }
    path = os.path.join(directory, MANIFEST_NAME)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def load_dump(directory) -> CalibrationDump:
    path = directory
    if os.path.isdir(path):
        path = os.path.join(path, MANIFEST_NAME)
    try:
        with open(path, "r", encoding="utf-8") as f:
            manifest = json.load(f)
    except OSError:
        raise
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: invalid manifest JSON: {e}") from e
    try:
        num_layers = int(manifest["num_layers"])
        num_heads = int(manifest["num_heads"])
        head_dim = int(manifest["head_dim"])
        entries = manifest["samples"]
    except (KeyError, TypeError) as e:
        raise FormatError(f"{path}: manifest missing field: {e}") from e

    base = os.path.dirname(path)
    samples = []
    for e in entries:
        n = int(e["seq_len"])
        t = 3 if e["has_v"] else 2
        blob_path = os.path.join(base, e["path"])
        count = num_layers * num_heads * t * n * head_dim
        data = np.fromfile(blob_path, dtype="<f4")
        if data.size != count:
            raise FormatError(
                f"{blob_path}: expected {count} float32 values, found {data.size}"
            )
        blob = data.reshape(num_layers, num_heads, t, n, head_dim)
        samples.append(CalibrationSample(
            sample_id=int(e["id"]),
            q=blob[:, :, 0],
            k=blob[:, :, 1],
            v=blob[:, :, 2] if t == 3 else None,
        ))
    return CalibrationDump(num_layers=num_layers, num_heads=num_heads,
                           head_dim=head_dim, samples=samples)
