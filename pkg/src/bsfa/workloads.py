"""Deterministic synthetic workload generators.

Every generator derives its randomness from a seed-keyed stream per
(sample, layer, head, tensor), so parallel generation and re-generation are
byte-reproducible and distinct heads get genuinely different content.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .calibration import CalibrationDump, CalibrationSample
from .core import HeadInput
from .errors import ConfigurationError, NumericError
from .tiling import TileConfig, frontier_blocks, off_frontier_count

KIND_RANDOM = "random"
KIND_NEEDLE = "needle"
KIND_STRUCTURED = "structured"
KIND_MODEL_DUMP = "model-dump"

# The planted retrieval probe: the last query row is rescaled to this many
# standard key norms so the planted score is deterministic and dominant.
PROBE_ROW_SCALE = 1.5

# Structured elevation strength; chosen so elevated tiles clearly dominate
# background tile maxima without saturating the score range.
_ELEVATION = 6.0

_Q, _K, _V, _AUX = 0, 1, 2, 3


@dataclass
class WorkloadSpec:
    kind: str = KIND_RANDOM
    n: int = 1024
    d: int = 64
    layers: int = 1
    heads: int = 1
    seed: int = 0
    needle_position: int = 0
    needle_strength: float = 10.0
    sink_width: int = 0
    window_width: int = 0
    heavy_hitter_count: int = 0


@dataclass
class NeedleSample:
    head: HeadInput
    needle_block: int   # kv-block index holding the planted keys
    probe_row: int      # query row the needle is aligned with
    probe_block: int    # query block containing the probe row


def _rng(spec: WorkloadSpec, sample: int, layer: int, head: int, tag: int):
    return np.random.default_rng(
        np.random.SeedSequence([spec.seed, sample, layer, head, tag])
    )


def _randn(spec, sample, layer, head, tag):
    return _rng(spec, sample, layer, head, tag).standard_normal(
        (spec.n, spec.d)).astype(np.float32)


def gen_random(spec: WorkloadSpec, sample: int = 0, layer: int = 0,
               head: int = 0, causal: bool = True) -> HeadInput:
    """i.i.d. standard-normal Q, K, V."""
    return HeadInput(
        q=_randn(spec, sample, layer, head, _Q),
        k=_randn(spec, sample, layer, head, _K),
        v=_randn(spec, sample, layer, head, _V),
        causal=causal,
    )


def gen_needle(spec: WorkloadSpec, tiles: TileConfig, sample: int = 0,
               layer: int = 0, head: int = 0) -> NeedleSample:
    """Random background with one key block aligned to the final query row.

    The planted block's tile maximum is needle_strength * PROBE_ROW_SCALE,
    which must strictly dominate every background off-frontier maximum at
    the probe query block (checked at generation time).
    """
    n, d = spec.n, spec.d
    if not 0 <= spec.needle_position < n - tiles.b_n:
        raise ConfigurationError(
            f"needle position {spec.needle_position} must lie in [0, {n - tiles.b_n})"
        )
    probe_row = n - 1
    probe_block = probe_row // tiles.b_m
    needle_block = spec.needle_position // tiles.b_n
    fr = frontier_blocks(probe_block, tiles)
    if fr.start <= needle_block < fr.stop:
        raise ConfigurationError(
            f"needle block {needle_block} falls in the frontier of probe block "
            f"{probe_block}; move the needle earlier"
        )

    inp = gen_random(spec, sample, layer, head)
    if spec.needle_strength == 0:
        return NeedleSample(inp, needle_block, probe_row, probe_block)

    q, k = inp.q, inp.k
    u = q[probe_row] / np.linalg.norm(q[probe_row])
    q[probe_row] = (PROBE_ROW_SCALE * np.sqrt(d) * u).astype(np.float32)
    lo, hi = needle_block * tiles.b_n, (needle_block + 1) * tiles.b_n
    k[lo:hi] = (spec.needle_strength * u).astype(np.float32)

    if spec.needle_strength >= 10:
        _check_needle_margin(inp, tiles, probe_block, needle_block)
    return NeedleSample(HeadInput(q, k, inp.v, causal=True),
                        needle_block, probe_row, probe_block)


def _check_needle_margin(inp: HeadInput, tiles: TileConfig, probe_block: int,
                         needle_block: int) -> None:
    scale = np.float32(1.0 / np.sqrt(inp.head_dim))
    b_m, b_n = tiles.b_m, tiles.b_n
    qp = inp.q[probe_block * b_m:(probe_block + 1) * b_m]
    planted = None
    background = -np.inf
    for j in range(off_frontier_count(probe_block, tiles)):
        s_max = float(((qp @ inp.k[j * b_n:(j + 1) * b_n].T) * scale).max())
        if j == needle_block:
            planted = s_max
        else:
            background = max(background, s_max)
    if planted is None or planted - background <= 1.0:
        raise NumericError(
            f"planted block fails to dominate: needle max {planted}, "
            f"background max {background}"
        )


def gen_structured(spec: WorkloadSpec, sample: int = 0, layer: int = 0,
                   head: int = 0) -> HeadInput:
    """Sink, trailing-window, and heavy-hitter keys with elevated similarity.

    Elevated key rows and all query rows share a bias along a per-(layer,
    head) direction, so the corresponding blocks dominate the block-maxima
    profile.  With no elevated rows the output equals gen_random bit for bit.
    """
    n, d = spec.n, spec.d
    if spec.sink_width + spec.window_width >= n:
        raise ConfigurationError("sink_width + window_width must be < n")
    inp = gen_random(spec, sample, layer, head)

    elevated = np.zeros(n, dtype=bool)
    elevated[:spec.sink_width] = True
    if spec.window_width:
        elevated[n - spec.window_width:] = True
    if spec.heavy_hitter_count:
        # heavy-hitter positions are a property of the (layer, head) pair,
        # stable across samples from the same seed
        aux = _rng(spec, 0, layer, head, _AUX)
        hh = aux.choice(n, size=spec.heavy_hitter_count, replace=False)
        elevated[hh] = True
    if not elevated.any():
        return inp

    aux = _rng(spec, 0, layer, head, _AUX + 10)
    g = aux.standard_normal(d)
    g /= np.linalg.norm(g)
    amp = np.sqrt(_ELEVATION * np.sqrt(d))
    bias = (amp * g).astype(np.float32)
    inp.q += bias
    inp.k[elevated] += bias
    return HeadInput(inp.q, inp.k, inp.v, causal=True)


def _default_structured(spec: WorkloadSpec) -> WorkloadSpec:
    if spec.sink_width or spec.window_width or spec.heavy_hitter_count:
        return spec
    from dataclasses import replace
    return replace(spec, sink_width=64, window_width=128, heavy_hitter_count=2)


def gen_head(spec: WorkloadSpec, tiles: TileConfig, sample: int = 0,
             layer: int = 0, head: int = 0) -> HeadInput:
    if spec.kind == KIND_RANDOM:
        return gen_random(spec, sample, layer, head)
    if spec.kind == KIND_NEEDLE:
        return gen_needle(spec, tiles, sample, layer, head).head
    if spec.kind == KIND_STRUCTURED:
        return gen_structured(spec, sample, layer, head)
    raise ConfigurationError(f"unknown workload kind {spec.kind!r}")


def gen_model_dump(spec: WorkloadSpec, num_samples: int = 16,
                   sample_offset: int = 0, include_v: bool = True) -> CalibrationDump:
    """Calibration dump mixing random and structured heads.

    Head (l, h) alternates between structured and random content so
    thresholds genuinely vary across the (layer, head) grid.  Use
    ``sample_offset`` to draw additional disjoint samples from the same
    distribution (e.g. a held-out evaluation split).
    """
    structured_spec = _default_structured(spec)
    samples = []
    for s in range(sample_offset, sample_offset + num_samples):
        q = np.empty((spec.layers, spec.heads, spec.n, spec.d), dtype=np.float32)
        k = np.empty_like(q)
        v = np.empty_like(q) if include_v else None
        for l in range(spec.layers):
            for h in range(spec.heads):
                if (l * spec.heads + h) % 2 == 0:
                    head = gen_structured(structured_spec, s, l, h)
                else:
                    head = gen_random(spec, s, l, h)
                q[l, h] = head.q
                k[l, h] = head.k
                if include_v:
                    v[l, h] = head.v
        samples.append(CalibrationSample(sample_id=s, q=q, k=k, v=v))
    return CalibrationDump(num_layers=spec.layers, num_heads=spec.heads,
                           head_dim=spec.d, samples=samples)


def gen_dump(spec: WorkloadSpec, tiles: TileConfig, num_samples: int = 1,
             sample_offset: int = 0, include_v: bool = True) -> CalibrationDump:
    """Any workload kind as an on-disk-able calibration dump."""
    if spec.kind == KIND_MODEL_DUMP:
        return gen_model_dump(spec, num_samples, sample_offset, include_v)
    samples = []
    for s in range(sample_offset, sample_offset + num_samples):
        q = np.empty((spec.layers, spec.heads, spec.n, spec.d), dtype=np.float32)
        k = np.empty_like(q)
        v = np.empty_like(q) if include_v else None
        for l in range(spec.layers):
            for h in range(spec.heads):
                head = gen_head(spec, tiles, s, l, h)
                q[l, h] = head.q
                k[l, h] = head.k
                if include_v:
                    v[l, h] = head.v
        samples.append(CalibrationSample(sample_id=s, q=q, k=k, v=v))
    return CalibrationDump(num_layers=spec.layers, num_heads=spec.heads,
                           head_dim=spec.d, samples=samples)
