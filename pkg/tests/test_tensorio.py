import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from hdfm.tensorio import (
    TensorFormatError,
    decode_tensor,
    encode_tensor,
    read_pnm,
    read_tensor,
    to_uint8,
    write_pnm,
    write_tensor,
)


@settings(max_examples=60, deadline=None)
@given(
    arrays(
        st.sampled_from([np.float32, np.float64]),
        array_shapes(min_dims=0, max_dims=4, min_side=0, max_side=5),
        elements=st.floats(allow_nan=True, allow_infinity=True, width=32),
    )
)
def test_round_trip_is_bitwise(arr):
    back = decode_tensor(encode_tensor(arr))
    assert back.dtype == arr.dtype and back.shape == arr.shape
    assert back.tobytes() == arr.tobytes()


def test_header_layout():
    buf = encode_tensor(np.arange(6, dtype=np.float32).reshape(2, 3))
    assert buf[:4] == b"HDT1"
    assert buf[4:6] == bytes([0, 2])
    assert buf[6:14] == (2).to_bytes(4, "little") + (3).to_bytes(4, "little")
    assert len(buf) == 14 + 6 * 4


def test_file_round_trip(tmp_path):
    arr = np.random.default_rng(0).standard_normal((2, 3, 4, 5))
    back = read_tensor(write_tensor(tmp_path / "a.hdt", arr))
    assert back.tobytes() == arr.tobytes()


@pytest.mark.parametrize(
    "buf",
    [
        b"",
        b"XXXX\x01\x01\x01\x00\x00\x00",
        b"HDT1\x07\x01\x01\x00\x00\x00",
        b"HDT1\x01\x03\x01\x00",
        b"HDT1\x01\x01\x02\x00\x00\x00" + b"\x00" * 8,
    ],
)
def test_malformed_tensors_rejected(buf):
    with pytest.raises(TensorFormatError):
        decode_tensor(buf)


def test_unsupported_dtype():
    with pytest.raises(TypeError):
        encode_tensor(np.zeros(3, dtype=np.int32))


def test_uint8_mapping():
    np.testing.assert_array_equal(to_uint8(np.array([-2.0, -1.0, 0.0, 1.0, 3.0])), [0, 0, 128, 255, 255])


@pytest.mark.parametrize("shape", [(5, 7), (5, 7, 1), (4, 6, 3)])
def test_pnm_round_trip(tmp_path, shape):
    img = np.random.default_rng(1).uniform(-1, 1, shape)
    back = read_pnm(write_pnm(tmp_path / "img.pnm", img))
    np.testing.assert_array_equal(back, to_uint8(img).reshape(back.shape))


def test_pnm_rejects_bad_shape(tmp_path):
    with pytest.raises(ValueError):
        write_pnm(tmp_path / "x.pgm", np.zeros((4, 4, 2)))
