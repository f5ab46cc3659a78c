import pytest

from bsfa import TileConfig, frontier_blocks, frontier_count, off_frontier_count
from bsfa.errors import ConfigurationError


def test_square_tiling_frontier_is_diagonal_block():
    tiles = TileConfig(64, 64)
    assert list(frontier_blocks(3, tiles)) == [3]


def test_wide_query_blocks_cover_two_kv_blocks():
    tiles = TileConfig(128, 64)
    assert list(frontier_blocks(0, tiles)) == [0, 1]
    assert list(frontier_blocks(5, tiles)) == [10, 11]


def test_tall_kv_blocks():
    tiles = TileConfig(64, 128)
    assert list(frontier_blocks(3, tiles)) == [1]
    assert off_frontier_count(3, tiles) == 1


def test_frontier_clamped_to_grid():
    tiles = TileConfig(128, 64)
    # n=130: 2 query blocks but only 3 kv blocks
    assert list(frontier_blocks(1, tiles, n=130)) == [2]


def test_off_frontier_counts():
    tiles = TileConfig(128, 64)
    assert off_frontier_count(0, tiles) == 0
    assert off_frontier_count(2, tiles) == 4
    assert frontier_count(2, tiles) == 2


def test_incompatible_block_sizes_rejected():
    with pytest.raises(ConfigurationError):
        TileConfig(96, 64)
    with pytest.raises(ConfigurationError):
        TileConfig(0, 64)


def test_padded_len():
    tiles = TileConfig(128, 64)
    assert tiles.padded_len(130) == 256
    assert tiles.padded_len(256) == 256
    assert TileConfig(64, 128).padded_len(70) == 128
