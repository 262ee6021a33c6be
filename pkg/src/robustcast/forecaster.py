"""Small reference forecaster: two 3x3 convolutions with ReLU, dropout and a
1x1 head, with hand-written backpropagation.

Input ``x`` is ``(B, C, T_in, H, W)`` (or a single ``(C, T_in, H, W)``
sample); the channel and time axes are fused into ``C*T_in`` input planes.
Logits are ``(B, 1, T_out, h, w)``, the central window of the full map.
Only the part of the trunk that feeds the window is evaluated; the result is
identical to same-padding the full grid and cropping afterwards.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .losses import ContractError
from .tensor_core import GridLayout, InvalidShapeError, read_tensor, write_tensor

PARAM_NAMES = ("conv1_w", "conv1_b", "conv2_w", "conv2_b", "head_w", "head_b")


@dataclass
class ModelParams:
    conv1_w: np.ndarray  # (F1, C*T_in, 3, 3)
    conv1_b: np.ndarray
    conv2_w: np.ndarray  # (F1, F1, 3, 3)
    conv2_b: np.ndarray
    head_w: np.ndarray  # (T_out, F1)
    head_b: np.ndarray
    layout: GridLayout = field(default_factory=GridLayout)
    dropout_rate: float = 0.4

    @property
    def features(self):
        return self.conv1_w.shape[0]

    def arrays(self):
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def n_parameters(self):
        return sum(a.size for a in self.arrays().values())

    def copy(self):
        return ModelParams(**{k: v.copy() for k, v in self.arrays().items()},
                           layout=self.layout, dropout_rate=self.dropout_rate)

    def save(self, directory):
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        index = {}
        for name, arr in self.arrays().items():
            write_tensor(arr, d / f"{name}.nwt")
            index[name] = f"{name}.nwt"
        meta = {"tensors": index, "layout": self.layout.to_dict(),
                "dropout_rate": self.dropout_rate, "features": self.features}
        (d / "params.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, directory):
        d = Path(directory)
        index_path = d / "params.json"
        if not index_path.is_file():
            raise FileNotFoundError(f"missing parameter index: {index_path}")
        meta = json.loads(index_path.read_text())
        arrays = {name: read_tensor(d / fname) for name, fname in meta["tensors"].items()}
        return cls(**arrays, layout=GridLayout(**meta["layout"]), dropout_rate=meta["dropout_rate"])


@dataclass
class ParamGrads:
    conv1_w: np.ndarray
    conv1_b: np.ndarray
    conv2_w: np.ndarray
    conv2_b: np.ndarray
    head_w: np.ndarray
    head_b: np.ndarray

    def arrays(self):
        return {name: getattr(self, name) for name in PARAM_NAMES}


@dataclass
class ForwardTrace:
    cols1: np.ndarray
    pre1: np.ndarray
    inside: np.ndarray
    cols2: np.ndarray
    pre2: np.ndarray
    keep: np.ndarray | None
    h2: np.ndarray
    consumed: bool = False


def init_params(layout: GridLayout = GridLayout(), features=16, seed=0, dropout_rate=0.4):
    """He-uniform weights (variance 2/fan_in) and zero biases."""
    if features < 1:
        raise ValueError("features must be >= 1")
    rng = np.random.Generator(np.random.Philox(seed))
    cin = layout.channels * layout.frames_in

    def he(shape, fan_in):
        a = np.sqrt(6.0 / fan_in)
        return rng.uniform(-a, a, size=shape)

    return ModelParams(
        conv1_w=he((features, cin, 3, 3), 9 * cin),
        conv1_b=np.zeros(features),
        conv2_w=he((features, features, 3, 3), 9 * features),
        conv2_b=np.zeros(features),
        head_w=he((layout.frames_out, features), features),
        head_b=np.zeros(layout.frames_out),
        layout=layout,
        dropout_rate=dropout_rate,
    )


def _im2col(a):
    """``(B, H, W, C)`` -> ``(B*(H-2)*(W-2), C*9)`` valid 3x3 patches."""
    win = sliding_window_view(a, (3, 3), axis=(1, 2))  # (B, H-2, W-2, C, 3, 3)
    return win.reshape(-1, a.shape[3] * 9)


def _col2im(dcols, shape):
    B, Ho, Wo, C = shape
    d = dcols.reshape(B, Ho, Wo, C, 3, 3)
    out = np.zeros((B, Ho + 2, Wo + 2, C))
    for ki in range(3):
        for kj in range(3):
            out[:, ki:ki + Ho, kj:kj + Wo, :] += d[..., ki, kj]
    return out


def _batch(params, x):
    x = np.asarray(x, dtype=np.float64)
    lay = params.layout
    single = x.ndim == 4
    if single:
        x = x[None]
    if x.ndim != 5 or x.shape[1:3] != (lay.channels, lay.frames_in) or x.shape[3] != x.shape[4]:
        raise InvalidShapeError(f"input shape {x.shape} does not match layout {lay.input_shape}")
    return x, single


def forward(params: ModelParams, x, train=False, seed=None, full=False):
    """Logits for a batch.  ``train=True`` applies inverted dropout with a mask
    drawn from ``seed``; ``full=True`` returns the uncropped ``H x W`` map."""
    x, single = _batch(params, x)
    lay = params.layout
    B, C, T, H, W = x.shape
    if full:
        r0, c0, h, w = 0, 0, H, W
    else:
        h, w = lay.label_height, lay.label_width
        if h > H or w > W:
            raise InvalidShapeError(f"label window {h}x{w} exceeds input {H}x{W}")
        r0, c0 = (H - h) // 2, (W - w) // 2
    xi = x.reshape(B, C * T, H, W).transpose(0, 2, 3, 1)
    if r0 >= 2 and c0 >= 2:
        xw = xi[:, r0 - 2:r0 + h + 2, c0 - 2:c0 + w + 2, :]
    else:
        xw = np.pad(xi, ((0, 0), (2, 2), (2, 2), (0, 0)))[:, r0:r0 + h + 4, c0:c0 + w + 4, :]

    F1 = params.features
    cols1 = _im2col(xw)
    pre1 = (cols1 @ params.conv1_w.reshape(F1, -1).T + params.conv1_b).reshape(B, h + 2, w + 2, F1)
    # layer-1 outputs lying outside the grid are the zero padding of layer 2
    rows = np.arange(r0 - 1, r0 + h + 1)
    cols = np.arange(c0 - 1, c0 + w + 1)
    inside = (((rows >= 0) & (rows < H))[:, None] & ((cols >= 0) & (cols < W))[None, :]).astype(np.float64)
    a1 = np.maximum(pre1, 0.0) * inside[None, :, :, None]

    cols2 = _im2col(a1)
    pre2 = (cols2 @ params.conv2_w.reshape(F1, -1).T + params.conv2_b).reshape(B, h, w, F1)
    h2 = np.maximum(pre2, 0.0)
    keep = None
    rate = params.dropout_rate
    if train and rate > 0:
        rng = np.random.Generator(np.random.Philox(0 if seed is None else seed))
        keep = (rng.random(h2.shape) >= rate) / (1.0 - rate)
        h2 = h2 * keep

    out = h2.reshape(-1, F1) @ params.head_w.T + params.head_b
    logits = out.reshape(B, h, w, lay.frames_out).transpose(0, 3, 1, 2)[:, None]
    logits = np.ascontiguousarray(logits)
    trace = ForwardTrace(cols1, pre1, inside, cols2, pre2, keep, h2)
    return (logits[0] if single else logits), trace


def backward(params: ModelParams, trace: ForwardTrace, grad_logits) -> ParamGrads:
    if trace.consumed:
        raise ContractError("forward trace already consumed by a backward pass")
    g = np.asarray(grad_logits, dtype=np.float64)
    B, h, w, F1 = trace.pre2.shape
    T = params.head_w.shape[0]
    if g.ndim == 4:
        g = g[None]
    if g.shape != (B, 1, T, h, w):
        raise ContractError(f"gradient shape {g.shape} does not match trace {(B, 1, T, h, w)}")
    trace.consumed = True

    gl = g[:, 0].transpose(0, 2, 3, 1).reshape(-1, T)
    head_w = gl.T @ trace.h2.reshape(-1, F1)
    head_b = gl.sum(axis=0)

    dh2 = (gl @ params.head_w).reshape(B, h, w, F1)
    if trace.keep is not None:
        dh2 = dh2 * trace.keep
    dpre2 = (dh2 * (trace.pre2 > 0)).reshape(-1, F1)
    conv2_w = (dpre2.T @ trace.cols2).reshape(params.conv2_w.shape)
    conv2_b = dpre2.sum(axis=0)

    da1 = _col2im(dpre2 @ params.conv2_w.reshape(F1, -1), (B, h, w, F1))
    dpre1 = (da1 * trace.inside[None, :, :, None] * (trace.pre1 > 0)).reshape(-1, F1)
    conv1_w = (dpre1.T @ trace.cols1).reshape(params.conv1_w.shape)
    conv1_b = dpre1.sum(axis=0)
    return ParamGrads(conv1_w, conv1_b, conv2_w, conv2_b, head_w, head_b)


def predict_logits(params: ModelParams):
    """Eval-mode logits function ``x -> logits`` for ensembling."""
    def f(x):
        return forward(params, x, train=False)[0]
    return f
