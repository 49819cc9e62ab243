import struct
import tempfile
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dice.dtf import read_dtf
from dice_export.dtf import atomic_write_bytes, dtf_bytes, write_dtf


def test_golden_header_bytes():
    raw = dtf_bytes(np.arange(6, dtype=np.float32).reshape(2, 3))
    assert raw[:4] == b"DTF1"
    assert raw[4] == 1  # float32 tag
    assert raw[5] == 2  # rank
    assert raw[6:12] == b"\x00" * 6
    assert struct.unpack_from("<2Q", raw, 12) == (2, 3)
    payload = np.frombuffer(raw, dtype="<f4", offset=28)
    assert payload.tolist() == [0, 1, 2, 3, 4, 5]


def test_scalar_promotes_to_rank_one():
    raw = dtf_bytes(np.float32(3.0))
    assert raw[5] == 1
    assert struct.unpack_from("<Q", raw, 12) == (1,)


def test_oversized_rank_rejected():
    with pytest.raises(ValueError, match="rank"):
        dtf_bytes(np.zeros((1,) * 9, dtype=np.float32))


def test_primary_reader_round_trip(tmp_path):
    for shape in [(4,), (3, 5), (2, 3, 4)]:
        arr = np.random.default_rng(1).normal(size=shape).astype(np.float32)
        path = tmp_path / f"r{len(shape)}.dtf"
        write_dtf(path, arr)
        back = read_dtf(path)
        assert back.shape == shape
        assert np.array_equal(back, arr)


def test_float64_written_as_f32(tmp_path):
    arr = np.array([1.0, 1.0 / 3.0], dtype=np.float64)
    write_dtf(tmp_path / "a.dtf", arr)
    back = read_dtf(tmp_path / "a.dtf")
    assert back.dtype == np.float32
    assert np.array_equal(back, arr.astype(np.float32))


def test_atomic_write_leaves_no_temp_files(tmp_path):
    write_dtf(tmp_path / "a.dtf", np.ones(3))
    atomic_write_bytes(tmp_path / "b.bin", b"payload")
    names = {p.name for p in tmp_path.iterdir()}
    assert names == {"a.dtf", "b.bin"}
    assert (tmp_path / "b.bin").read_bytes() == b"payload"


def test_atomic_write_replaces_existing(tmp_path):
    target = tmp_path / "x.dtf"
    write_dtf(target, np.zeros(2))
    write_dtf(target, np.ones(2))
    assert np.array_equal(read_dtf(target), np.ones(2, dtype=np.float32))


@settings(max_examples=25, deadline=None)
@given(
    dims=st.lists(st.integers(min_value=1, max_value=5), min_size=1, max_size=4),
    seed=st.integers(min_value=0, max_value=2**32 - 1),
)
def test_round_trip_random_shapes(dims, seed):
    arr = np.random.default_rng(seed).normal(size=tuple(dims)).astype(np.float32)
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "t.dtf"
        write_dtf(path, arr)
        assert np.array_equal(read_dtf(path), arr)
