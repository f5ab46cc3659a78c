import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bsfa import (CostConfig, TileConfig, attention_flops, hbm_traffic,
                  measured_density, predicted_density,
                  projection_vs_attention_ratio, threshold_tensor_size)
from bsfa.costs import per_tile_matmul_flops, table1_rows, tile_counts
from bsfa.engine import GateTrace
from bsfa.errors import InvalidInputError

TILES = TileConfig(128, 64)


def test_per_tile_matmul_flops():
    assert per_tile_matmul_flops(TILES, 128) == 2 * 128 * 64 * 128 == 2_097_152


def test_tile_counts_causal():
    # n=512: A_i = 2i, F_i = 2 -> reachable = (0+2+4+6) + 8 = 20
    reachable, frontier = tile_counts(512, TILES, causal=True)
    assert (reachable, frontier) == (20, 8)
    assert tile_counts(512, TILES, causal=False) == (32, 8)
    assert tile_counts(400, TILES, causal=True) == (20, 8)  # pads to 512


def test_predicted_density_endpoints():
    assert predicted_density(512, TILES, 0) == pytest.approx(8 / 20)
    assert predicted_density(512, TILES, 10 ** 6) == 1.0
    with pytest.raises(InvalidInputError):
        predicted_density(512, TILES, -1)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(128, 8192), k=st.integers(0, 64))
def test_predicted_density_bounds(n, k):
    rho = predicted_density(n, TILES, k)
    assert 0 < rho <= 1
    assert predicted_density(n, TILES, k + 1) >= rho


def test_projection_attention_crossover():
    assert projection_vs_attention_ratio(131072, 4096) == 32.0
    assert projection_vs_attention_ratio(4096, 4096) == 1.0


def test_threshold_tensor_size():
    assert threshold_tensor_size(1, 32, 32, 65536, 128) == 524_288
    assert threshold_tensor_size(3, 32, 32, 65536, 128) == 1_572_864
    assert threshold_tensor_size(1, 1, 1, 100, 128) == 1


def test_skipped_block_savings():
    cfg = CostConfig(n=4096, d=128, tiles=TILES)
    reachable, _ = tile_counts(4096, TILES)
    dense = attention_flops(cfg, 1.0)
    sparse = attention_flops(cfg, 0.5)
    skipped = reachable * 0.5
    # each skipped block saves one PV matmul and one V block load
    assert dense.pv_flops - sparse.pv_flops == skipped * 2 * 128 * 64 * 128
    assert dense.qk_flops == sparse.qk_flops  # scores are always computed
    (_, v_dense), (_, v_sparse) = hbm_traffic(cfg, 1.0), hbm_traffic(cfg, 0.5)
    assert v_dense - v_sparse == skipped * 64 * 128  # B_N * d elements


def test_traffic_fraction_at_half_density():
    cfg = CostConfig(n=4096, d=128, tiles=TILES)
    k1, v1 = hbm_traffic(cfg, 1.0)
    k2, v2 = hbm_traffic(cfg, 0.5)
    assert (k2 + v2) / (k1 + v1) == 0.75
    with pytest.raises(InvalidInputError):
        hbm_traffic(cfg, 1.5)


def test_total_flops_converge_to_half():
    cfg = CostConfig(n=8192, d=64, tiles=TILES)
    dense = attention_flops(cfg, 1.0)
    total_dense = dense.qk_flops + dense.pv_flops
    for rho in (0.0, 0.25, 0.5, 1.0):
        r = attention_flops(cfg, rho)
        assert (r.qk_flops + r.pv_flops) / total_dense == (1 + rho) / 2


def test_measured_density():
    d0 = np.array([[2, 2, 0, 0], [3, 1, 2, 2]], dtype=np.int8)
    d1 = np.array([[2, 2, 0, 0], [3, 3, 2, 2]], dtype=np.int8)
    t0 = GateTrace(decisions=d0, tiles=TILES, causal=True)
    t1 = GateTrace(decisions=d1, tiles=TILES, causal=True)
    mean, std = measured_density([[t0], [t1]])
    assert mean == pytest.approx((5 / 6 + 1.0) / 2)
    assert std == pytest.approx(abs(5 / 6 - 1.0) / 2)
    with pytest.raises(InvalidInputError):
        measured_density([])


def test_reference_density_table_shape():
    rows = table1_rows()
    assert len(rows) == 10
    assert {n for n, _, _, _ in rows} == {32768, 65536, 131072}
