import struct

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from robustcast.tensor_core import (
    GridLayout,
    InvalidShapeError,
    TensorFormatError,
    box_filter_3x3,
    box_filter_3x3_adjoint,
    read_tensor,
    sigmoid,
    tensor_from_bytes,
    tensor_to_bytes,
    write_tensor,
)

finite = st.floats(-700, 700, allow_nan=False)


def test_sigmoid_examples():
    assert sigmoid(0.0) == 0.5
    assert abs(sigmoid(40.0) - 1.0) <= 1e-15
    mpmath.mp.dps = 50
    expected = float(mpmath.exp(-40) / (1 + mpmath.exp(-40)))
    assert sigmoid(-40.0) == pytest.approx(expected, rel=1e-15)


def test_sigmoid_extremes_stay_finite():
    with np.errstate(all="raise"):
        out = sigmoid(np.array([-700.0, -40.0, 0.0, 40.0, 700.0]))
    assert np.all(np.isfinite(out))
    assert np.all((out > 0) & (out <= 1))


@given(arrays(np.float64, st.integers(1, 20), elements=finite))
def test_sigmoid_symmetry(t):
    assert np.all(np.abs(sigmoid(t) + sigmoid(-t) - 1.0) <= 1e-15)


def _loop_box(p, mode):
    H, W = p.shape
    out = np.zeros_like(p)
    for i in range(H):
        for j in range(W):
            s = 0.0
            for a in (-1, 0, 1):
                for b in (-1, 0, 1):
                    s += p[min(max(i + a, 0), H - 1), min(max(j + b, 0), W - 1)]
            out[i, j] = s / 9 if mode == "mean" else s
    return out


@given(st.floats(-1e6, 1e6))
def test_box_filter_constant_plane(c):
    plane = np.full((4, 5), c)
    np.testing.assert_array_max_ulp(box_filter_3x3(plane, "mean"), plane, maxulp=1)
    np.testing.assert_array_max_ulp(box_filter_3x3(plane, "sum"), 9 * plane, maxulp=1)
    assert np.array_equal(box_filter_3x3(np.full((3, 3), 2.5), "mean"), np.full((3, 3), 2.5))


def test_box_filter_impulse_against_loop_oracle():
    p = np.zeros((3, 3))
    p[1, 1] = 9.0
    out = box_filter_3x3(p, "mean")
    assert out[1, 1] == 1.0
    # corner (0,0): neighbours (clipped) include the centre once -> 9/9
    assert out[0, 0] == _loop_box(p, "mean")[0, 0] == 1.0
    np.testing.assert_allclose(out, _loop_box(p, "mean"), rtol=0, atol=1e-15)


@settings(max_examples=50)
@given(arrays(np.float64, st.tuples(st.integers(1, 3), st.integers(1, 7), st.integers(1, 7)),
              elements=st.floats(-10, 10)))
def test_box_filter_matches_loop_and_mean_is_sum_over_nine(p):
    s = box_filter_3x3(p, "sum")
    m = box_filter_3x3(p, "mean")
    assert np.array_equal(m, s / 9.0)
    for k in range(p.shape[0]):
        np.testing.assert_allclose(s[k], _loop_box(p[k], "sum"), atol=1e-12)


def test_box_filter_adjoint_identity(rng):
    p = rng.normal(size=(2, 6, 5))
    s = rng.normal(size=(2, 6, 5))
    for mode in ("mean", "sum"):
        lhs = np.sum(box_filter_3x3(p, mode) * s)
        rhs = np.sum(p * box_filter_3x3_adjoint(s, mode))
        assert lhs == pytest.approx(rhs, rel=1e-12)


def test_box_filter_rejects_bad_rank():
    with pytest.raises(InvalidShapeError):
        box_filter_3x3(np.zeros(5))
    with pytest.raises(InvalidShapeError):
        box_filter_3x3(np.zeros((3, 0)))


@settings(max_examples=40)
@given(st.data())
def test_roundtrip_random_ranks(tmp_path_factory, data):
    shape = data.draw(st.lists(st.integers(1, 4), min_size=1, max_size=5))
    t = data.draw(arrays(np.float64, tuple(shape), elements=st.floats(allow_nan=False, width=64)))
    path = tmp_path_factory.mktemp("nwt") / "t.nwt"
    write_tensor(t, path)
    back = read_tensor(path)
    assert back.shape == t.shape
    assert back.tobytes() == t.tobytes()


def test_scalar_roundtrip(tmp_path):
    write_tensor(np.float64(3.25), tmp_path / "s.nwt")
    back = read_tensor(tmp_path / "s.nwt")
    assert back.shape == () and back[()] == 3.25


def test_header_layout():
    buf = tensor_to_bytes(np.arange(6.0).reshape(2, 3))
    assert buf[:4] == bytes([0x4E, 0x57, 0x54, 0x31])
    assert buf[4] == 0x01 and buf[5] == 2 and buf[6:8] == b"\0\0"
    assert struct.unpack("<2Q", buf[8:24]) == (2, 3)
    assert len(buf) == 24 + 6 * 8


def test_format_errors():
    buf = bytearray(tensor_to_bytes(np.ones((2, 2))))
    bad = bytes(b"XWT1") + bytes(buf[4:])
    with pytest.raises(TensorFormatError, match="bad magic"):
        tensor_from_bytes(bad)
    with pytest.raises(TensorFormatError, match="payload"):
        tensor_from_bytes(bytes(buf[:-3]))
    buf[4] = 0x07
    with pytest.raises(TensorFormatError, match="dtype code"):
        tensor_from_bytes(bytes(buf))


def test_grid_layout_contract():
    lay = GridLayout()
    assert lay.input_shape == (4, 4, 48, 48)
    assert lay.label_shape == (1, 8, 16, 16)
    assert lay.crop_offset == (16, 16)
    with pytest.raises(InvalidShapeError):
        GridLayout(height=48, width=40)
    with pytest.raises(InvalidShapeError):
        GridLayout(label_height=64, label_width=64)
