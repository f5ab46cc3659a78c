import struct

import numpy as np
import pytest

from bsfa import (GateContext, ThresholdTensor, load_thresholds,
                  save_thresholds, threshold_lookup)
from bsfa.errors import ConfigurationError, FormatError


def _tensor():
    rng = np.random.default_rng(0)
    values = rng.standard_normal((2, 3, 4, 8)).astype(np.float32)
    values[0, 0, 0, 0] = np.inf
    values[1, 2, 3, 7] = -np.inf
    return ThresholdTensor(values=values, k_levels=(4, 16), n_max=1024,
                           b_m=128, b_n=64)


def test_round_trip_bit_exact(tmp_path):
    t = _tensor()
    path = tmp_path / "thr.bin"
    save_thresholds(t, path)
    loaded = load_thresholds(path)
    np.testing.assert_array_equal(loaded.values, t.values)
    assert np.isposinf(loaded.values[0, 0, 0, 0])
    assert np.isneginf(loaded.values[1, 2, 3, 7])
    assert (loaded.k_levels, loaded.n_max, loaded.b_m, loaded.b_n) == \
        (t.k_levels, t.n_max, t.b_m, t.b_n)
    save_thresholds(loaded, tmp_path / "thr2.bin")
    assert (tmp_path / "thr.bin").read_bytes() == (tmp_path / "thr2.bin").read_bytes()


def test_lookup_clamps_position():
    t = _tensor()
    ctx = GateContext(layer=1, head=2, k_level=16, query_block=100)
    assert threshold_lookup(t, ctx) == float(t.values[1, 1, 2, 7])
    assert threshold_lookup(t, GateContext(layer=0, head=0, k_level=4)) == np.inf
    with pytest.raises(ConfigurationError):
        threshold_lookup(t, GateContext(layer=5, head=0, k_level=4))
    with pytest.raises(ConfigurationError):
        t.level_index(99)


def test_constructor_validation():
    values = np.zeros((2, 1, 1, 8), dtype=np.float32)
    with pytest.raises(ConfigurationError):
        ThresholdTensor(values=values, k_levels=(4,), n_max=1024, b_m=128, b_n=64)
    with pytest.raises(ConfigurationError):
        ThresholdTensor(values=values, k_levels=(16, 4), n_max=1024, b_m=128, b_n=64)
    with pytest.raises(ConfigurationError):
        ThresholdTensor(values=values, k_levels=(4, 16), n_max=2048, b_m=128, b_n=64)


def test_format_errors(tmp_path):
    t = _tensor()
    path = tmp_path / "thr.bin"
    save_thresholds(t, path)
    raw = bytearray(path.read_bytes())

    bad_magic = tmp_path / "magic.bin"
    bad_magic.write_bytes(b"XXXX" + bytes(raw[4:]))
    with pytest.raises(FormatError):
        load_thresholds(bad_magic)

    bad_version = tmp_path / "version.bin"
    bad_version.write_bytes(raw[:4] + struct.pack("<I", 99) + bytes(raw[8:]))
    with pytest.raises(FormatError):
        load_thresholds(bad_version)

    truncated = tmp_path / "trunc.bin"
    truncated.write_bytes(bytes(raw[:-8]))
    with pytest.raises(FormatError):
        load_thresholds(truncated)

    empty = tmp_path / "empty.bin"
    empty.write_bytes(b"")
    with pytest.raises(FormatError):
        load_thresholds(empty)
