"""Dense float64 arrays, sigmoid, 3x3 box filtering and the NWT1 file format.

Tensors are plain ``numpy.ndarray`` objects with dtype float64; spatial axes
are always the last two (H then W).
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"NWT1"
DTYPE_F64 = 0x01
_HEADER = struct.Struct("<4sBBH")


class InvalidShapeError(ValueError):
    pass


class TensorFormatError(ValueError):
    pass


@dataclass(frozen=True)
class GridLayout:
    channels: int = 4
    frames_in: int = 4
    frames_out: int = 8
    height: int = 48
    width: int = 48
    label_height: int = 16
    label_width: int = 16

    def __post_init__(self):
        if self.height != self.width:
            raise InvalidShapeError(f"grid must be square, got {self.height}x{self.width}")
        if self.label_height > self.height or self.label_width > self.width:
            raise InvalidShapeError("label window larger than input window")
        if (self.height - self.label_height) % 2 or (self.width - self.label_width) % 2:
            raise InvalidShapeError("label window cannot be centered in the input window")
        for name in ("channels", "frames_in", "frames_out", "label_height", "label_width"):
            if getattr(self, name) < 1:
                raise InvalidShapeError(f"{name} must be positive")

    @property
    def input_shape(self):
        return (self.channels, self.frames_in, self.height, self.width)

    @property
    def label_shape(self):
        return (1, self.frames_out, self.label_height, self.label_width)

    @property
    def crop_offset(self):
        return ((self.height - self.label_height) // 2, (self.width - self.label_width) // 2)

    def crop(self, a):
        """Central label window of the trailing two axes of ``a``."""
        r0, c0 = self.crop_offset
        return a[..., r0:r0 + self.label_height, c0:c0 + self.label_width]

    def to_dict(self):
        return dict(self.__dict__)


def as_tensor(a) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64)


def sigmoid(t):
    t = np.asarray(t, dtype=np.float64)
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out if out.ndim else out[()]


def _check_planes(p):
    p = np.asarray(p, dtype=np.float64)
    if p.ndim < 2:
        raise InvalidShapeError(f"need rank >= 2, got shape {p.shape}")
    if p.shape[-1] < 1 or p.shape[-2] < 1:
        raise InvalidShapeError(f"empty spatial plane {p.shape[-2:]}")
    return p


def box_filter_3x3(p, mode="mean", border="replicate"):
    """3x3 neighbourhood sum or mean on every trailing HxW plane.

    The nine terms are added as ``centre + (((N+S) + (E+W)) + ((NW+SE) + (NE+SW)))``.
    Pairing opposite neighbours makes the rounding identical under all eight
    square symmetries, so D4-transformed inputs give bitwise-permuted outputs.
    A constant plane c sums to 9c with a single rounding; its mean can be 1 ulp
    away from c.
    """
    if border != "replicate":
        raise ValueError(f"unsupported border mode {border!r}")
    if mode not in ("mean", "sum"):
        raise ValueError(f"unsupported kernel mode {mode!r}")
    p = _check_planes(p)
    edges, corners = _ring(p)
    s = p + (edges + corners)
    return s / 9.0 if mode == "mean" else s


def _ring(p):
    H, W = p.shape[-2:]
    pad = [(0, 0)] * (p.ndim - 2) + [(1, 1), (1, 1)]
    q = np.pad(p, pad, mode="edge")

    def at(di, dj):
        return q[..., 1 + di:1 + di + H, 1 + dj:1 + dj + W]

    edges = (at(-1, 0) + at(1, 0)) + (at(0, -1) + at(0, 1))
    corners = (at(-1, -1) + at(1, 1)) + (at(-1, 1) + at(1, -1))
    return edges, corners


def neighbour_sum_3x3(p):
    """Sum of the eight replicate-bordered neighbours, centre excluded.

    Residuals against the box filter are formed from this without the
    cancellation in ``p - box_filter_3x3(p)``: a constant plane c gives
    exactly 8c here.
    """
    p = _check_planes(p)
    edges, corners = _ring(p)
    return edges + corners


def box_filter_3x3_adjoint(s, mode="mean"):
    """Transpose of :func:`box_filter_3x3` (replicate border) applied to ``s``."""
    s = _check_planes(s)
    H, W = s.shape[-2:]
    q = np.zeros(s.shape[:-2] + (H + 2, W + 2))
    for a in range(3):
        for b in range(3):
            q[..., a:a + H, b:b + W] += s
    # fold the replicated border back onto the edge pixels
    q[..., 1, :] += q[..., 0, :]
    q[..., H, :] += q[..., H + 1, :]
    q[..., :, 1] += q[..., :, 0]
    q[..., :, W] += q[..., :, W + 1]
    out = q[..., 1:H + 1, 1:W + 1]
    return out / 9.0 if mode == "mean" else out.copy()


def exact_sum(a) -> float:
    """Order-independent (correctly rounded) sum of all elements."""
    return math.fsum(np.asarray(a, dtype=np.float64).ravel().tolist())


def exact_mean(a) -> float:
    """Order-independent mean, exact for constant arrays.

    The sum is taken relative to the maximum, ``m + fsum(a - m) / n``, so a
    constant array returns its value without the rounding of ``n * c / n``.
    """
    a = np.asarray(a, dtype=np.float64)
    m = float(a.max())
    return m + exact_sum(a - m) / a.size


def tensor_to_bytes(t) -> bytes:
    t = np.asarray(t, dtype="<f8")
    if t.ndim > 255:
        raise TensorFormatError("rank: more than 255 axes")
    head = _HEADER.pack(MAGIC, DTYPE_F64, t.ndim, 0)
    dims = struct.pack(f"<{t.ndim}Q", *t.shape)
    return head + dims + np.ascontiguousarray(t).tobytes()


def tensor_from_bytes(buf: bytes) -> np.ndarray:
    if len(buf) < _HEADER.size:
        raise TensorFormatError("header: truncated")
    magic, dtype, rank, reserved = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise TensorFormatError("bad magic")
    if dtype != DTYPE_F64:
        raise TensorFormatError(f"dtype code: unknown value 0x{dtype:02x}")
    if reserved != 0:
        raise TensorFormatError("reserved: bytes 6-7 must be zero")
    off = _HEADER.size
    if len(buf) < off + 8 * rank:
        raise TensorFormatError("extents: truncated")
    shape = struct.unpack_from(f"<{rank}Q", buf, off)
    off += 8 * rank
    n = math.prod(shape)
    if len(buf) != off + 8 * n:
        raise TensorFormatError(f"payload: expected {8 * n} bytes, found {len(buf) - off}")
    data = np.frombuffer(buf, dtype="<f8", count=n, offset=off)
    return data.astype(np.float64).reshape(shape)


def write_tensor(t, path):
    Path(path).write_bytes(tensor_to_bytes(t))


def read_tensor(path) -> np.ndarray:
    return tensor_from_bytes(Path(path).read_bytes())
