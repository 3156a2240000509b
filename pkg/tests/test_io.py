import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from wct.fileio import (
    MAGIC,
    ContainerError,
    create_container,
    read_container,
    read_header,
    read_pgm,
    write_container,
    write_csv,
    write_pgm,
    write_profile_csv,
)

shapes = st.lists(st.integers(0, 6), min_size=1, max_size=3).map(tuple)
floats = st.floats(allow_nan=True, allow_infinity=True, width=64)
meta = st.dictionaries(
    st.text(min_size=1, max_size=8).filter(lambda k: k not in ("kind", "dims", "dtype", "order")),
    st.one_of(st.integers(-10**6, 10**6), st.floats(allow_nan=False, allow_infinity=False), st.text(max_size=10)),
    max_size=4,
)


@settings(max_examples=50, deadline=None)
@given(values=shapes.flatmap(lambda s: arrays(np.float64, s, elements=floats)), meta=meta,
       kind=st.sampled_from(["beam", "cone", "radon", "gtable", "image"]))
def test_round_trip_bit_exact(tmp_path_factory, values, meta, kind):
    path = tmp_path_factory.mktemp("c") / "x.wct"
    write_container(path, kind, values, meta)
    back = read_container(path)
    assert back.kind == kind
    assert back.values.shape == values.shape
    assert back.values.tobytes() == np.ascontiguousarray(values).tobytes()
    for key, val in meta.items():
        assert back.header[key] == val
    mm = read_container(path, mmap=True)
    assert np.asarray(mm.values).tobytes() == values.tobytes()


def test_layout(tmp_path):
    path = write_container(tmp_path / "a.wct", "gtable", np.arange(6.0).reshape(2, 3), {"n": 3})
    raw = path.read_bytes()
    assert raw[:4] == MAGIC
    (hlen,) = struct.unpack("<Q", raw[4:12])
    assert (12 + hlen) % 8 == 0
    header, offset = read_header(path)
    assert header["dims"] == [2, 3] and header["dtype"] == "<f8" and header["n"] == 3
    np.testing.assert_array_equal(np.frombuffer(raw[offset:], "<f8"), np.arange(6.0))


def test_memmap_container(tmp_path):
    mm = create_container(tmp_path / "m.wct", "cone", (3, 4, 5), {"k": 1})
    mm[:] = np.arange(60.0).reshape(3, 4, 5)
    mm.flush()
    del mm
    back = read_container(tmp_path / "m.wct")
    np.testing.assert_array_equal(back.values.ravel(), np.arange(60.0))


def test_corrupt_magic(tmp_path):
    path = tmp_path / "bad.wct"
    path.write_bytes(b"XXXX" + bytes(16))
    with pytest.raises(ContainerError, match="magic"):
        read_container(path)


def test_truncated_payload(tmp_path):
    path = write_container(tmp_path / "t.wct", "beam", np.ones((4, 4)))
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(ContainerError, match="payload"):
        read_container(path)


def test_header_length_past_end(tmp_path):
    path = tmp_path / "h.wct"
    path.write_bytes(MAGIC + struct.pack("<Q", 10**6) + b"{}")
    with pytest.raises(ContainerError):
        read_container(path)


def test_unknown_kind(tmp_path):
    with pytest.raises(ContainerError):
        write_container(tmp_path / "k.wct", "movie", np.zeros(2))


def test_pgm_window(tmp_path):
    img = np.array([[-1.0, 0.0], [0.5, 1.0]])
    lo, hi = write_pgm(tmp_path / "a.pgm", img)
    assert (lo, hi) == (-1.0, 1.0)
    back = read_pgm(tmp_path / "a.pgm")
    # rows flipped so the top row of the picture is the largest second coordinate
    assert back.shape == (2, 2)
    assert back.min() == 0 and back.max() == 255
    assert sorted(back.ravel().tolist()) == [0, 128, 191, 255]


def test_pgm_constant_image(tmp_path):
    write_pgm(tmp_path / "c.pgm", np.full((3, 3), 7.0))
    assert not read_pgm(tmp_path / "c.pgm").any()


def test_profile_csv(tmp_path):
    path = write_profile_csv(tmp_path / "p.csv", [0.0, 0.1], [1.0, 0.5], [0.9, 0.4])
    lines = path.read_text().splitlines()
    assert lines[0] == "s,reference,reconstruction"
    assert lines[1] == "0.0,1.0,0.9"


def test_csv_floats_round_trip(tmp_path):
    x = 0.1 + 0.2
    path = write_csv(tmp_path / "m.csv", ["metric", "value"], [("rel_l2", x)])
    assert float(path.read_text().splitlines()[1].split(",")[1]) == x
