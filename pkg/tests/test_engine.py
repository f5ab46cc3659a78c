import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bsfa import (BlockMask, HeadInput, TileConfig, dense_attention,
                  flash_forward, masked_dense_attention, max_rel_err,
                  pad_to_blocks)
from bsfa.engine import FRONTIER, KEPT, SKIPPED, UNREACHABLE
from bsfa.gates import dense_gate, frontier_only_gate
from helpers import make_head

RTOL = 1e-4


@pytest.mark.parametrize("n", [64, 100, 128, 130, 257, 512])
@pytest.mark.parametrize("causal", [True, False])
def test_dense_gate_matches_oracle(n, causal):
    rng = np.random.default_rng(n * 2 + causal)
    tiles = TileConfig(128, 64)
    inp = make_head(rng, n, 32, causal=causal)
    out, _ = flash_forward(inp, tiles, dense_gate())
    ref = dense_attention(inp)
    assert out.o.shape == (n, 32)
    assert max_rel_err(out.o, ref.o) <= RTOL
    assert max_rel_err(out.logsumexp, ref.logsumexp) <= RTOL


@settings(max_examples=25, deadline=None)
@given(n=st.integers(1, 200), d=st.sampled_from([4, 16, 33]),
       causal=st.booleans())
def test_dense_gate_matches_oracle_property(n, d, causal):
    rng = np.random.default_rng(n * 1000 + d)
    inp = make_head(rng, n, d, causal=causal)
    out, _ = flash_forward(inp, TileConfig(64, 64), dense_gate())
    assert max_rel_err(out.o, dense_attention(inp).o) <= RTOL


def test_frontier_only_matches_masked_oracle():
    rng = np.random.default_rng(7)
    tiles = TileConfig(128, 64)
    inp = make_head(rng, 512, 32)
    out, trace = flash_forward(inp, tiles, frontier_only_gate())
    mask = BlockMask.frontier_only(512, tiles)
    np.testing.assert_array_equal(trace.to_mask().allowed, mask.allowed)
    ref = masked_dense_attention(inp, mask, tiles)
    assert max_rel_err(out.o, ref.o) <= RTOL


def test_trace_decision_codes():
    rng = np.random.default_rng(8)
    tiles = TileConfig(128, 64)
    inp = make_head(rng, 256, 16)
    _, trace = flash_forward(inp, tiles, dense_gate())
    np.testing.assert_array_equal(
        trace.decisions,
        [[FRONTIER, FRONTIER, UNREACHABLE, UNREACHABLE],
         [KEPT, KEPT, FRONTIER, FRONTIER]],
    )
    assert trace.kept_blocks() == 6
    assert trace.reachable_blocks() == 6
    assert trace.density() == 1.0
    np.testing.assert_array_equal(trace.retained_off_frontier(), [0, 2])

    _, trace = flash_forward(inp, tiles, frontier_only_gate())
    assert trace.decisions[1, 0] == SKIPPED
    assert trace.density() == pytest.approx(4 / 6)


def test_threads_are_bitwise_identical():
    rng = np.random.default_rng(9)
    tiles = TileConfig(64, 64)
    inp = make_head(rng, 640, 32)
    a, ta = flash_forward(inp, tiles, dense_gate(), threads=1)
    b, tb = flash_forward(inp, tiles, dense_gate(), threads=4)
    np.testing.assert_array_equal(a.o, b.o)
    np.testing.assert_array_equal(a.logsumexp, b.logsumexp)
    np.testing.assert_array_equal(ta.decisions, tb.decisions)


def test_inject_fault_perturbs_output():
    rng = np.random.default_rng(10)
    tiles = TileConfig(64, 64)
    inp = make_head(rng, 128, 16)
    clean, _ = flash_forward(inp, tiles, dense_gate())
    dirty, _ = flash_forward(inp, tiles, dense_gate(), inject_fault=True)
    assert not np.array_equal(clean.o, dirty.o)
    assert max_rel_err(dirty.o, dense_attention(inp).o) > RTOL


def test_pad_to_blocks_repeats_last_rows():
    rng = np.random.default_rng(11)
    tiles = TileConfig(128, 64)
    inp = make_head(rng, 130, 8)
    padded, valid = pad_to_blocks(inp, tiles)
    assert valid == 130
    assert padded.seq_len == 256
    np.testing.assert_array_equal(padded.q[:130], inp.q)
    np.testing.assert_array_equal(padded.q[130:], np.broadcast_to(inp.q[-1], (126, 8)))
    aligned, valid = pad_to_blocks(make_head(rng, 256, 8), tiles)
    assert aligned.seq_len == 256 and valid == 256
