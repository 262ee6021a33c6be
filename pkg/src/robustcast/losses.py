"""Positive-weighted BCE plus spatial and temporal smoothness penalties on the
predicted probability maps, each with an exact gradient.

All tensors are ``(..., T_out, h, w)``; leading axes are samples and every
reduction is a mean over samples.  Scalar reductions use an exactly rounded
sum so results do not depend on pixel order.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor_core import (
    InvalidShapeError,
    box_filter_3x3_adjoint,
    exact_mean,
    exact_sum,
    neighbour_sum_3x3,
    sigmoid,
)


class ContractError(ValueError):
    pass


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 0.1
    beta: float = 0.1
    pos_weight: float = 4.0
    kernel_mode: str = "mean"
    norm_mode: str = "l1"

    def __post_init__(self):
        if min(self.alpha, self.beta, self.pos_weight) < 0:
            raise ContractError("alpha, beta and pos_weight must be non-negative")
        if self.kernel_mode not in ("mean", "sum"):
            raise ContractError(f"kernel_mode must be 'mean' or 'sum', got {self.kernel_mode!r}")
        if self.norm_mode not in ("l1", "l2"):
            raise ContractError(f"norm_mode must be 'l1' or 'l2', got {self.norm_mode!r}")


@dataclass
class LossReport:
    bce: float
    spatial: float
    temporal: float
    total: float
    grad_logits: np.ndarray = field(repr=False)

    def csv_row(self, step):
        return f"{step},{self.bce!r},{self.spatial!r},{self.temporal!r},{self.total!r}"


CSV_HEADER = "step,bce,spatial,temporal,total"


def _softplus(z):
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def bce_loss(logits, labels, cfg=LossConfig()):
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if z.shape != y.shape:
        raise ContractError(f"logits {z.shape} and labels {y.shape} differ in shape")
    if not np.all((y == 0) | (y == 1)):
        raise ContractError("labels must be binary (0 or 1)")
    w = cfg.pos_weight
    # -log p = softplus(-z), -log(1-p) = softplus(z)
    per = w * y * _softplus(-z) + (1.0 - y) * _softplus(z)
    n = z.size
    p = sigmoid(z)
    grad = (w * y * (p - 1.0) + (1.0 - y) * p) / n
    return exact_sum(per) / n, grad


def _frames(prob):
    p = np.asarray(prob, dtype=np.float64)
    if p.ndim < 3:
        raise InvalidShapeError(f"probability maps need shape (..., T, h, w), got {p.shape}")
    if p.shape[-1] < 1 or p.shape[-2] < 1:
        raise InvalidShapeError(f"empty spatial plane {p.shape[-2:]}")
    return p


def spatial_residual(p, mode="mean"):
    """``p - K(p)`` per plane, written as ``-n`` (sum) or ``(8p - n) / 9``
    (mean) with ``n`` the neighbour sum, so constant planes give exactly 0
    and 8c."""
    n = neighbour_sum_3x3(p)
    if mode == "sum":
        return -n
    return (8.0 * p - n) / 9.0


def spatial_smooth_loss(prob, cfg=LossConfig()):
    """Mean over frames of the per-pixel deviation from the 3x3 neighbourhood
    statistic (``l1``: mean |d|; ``l2``: per-frame RMS of d)."""
    p = _frames(prob)
    mode = cfg.kernel_mode
    d = spatial_residual(p, mode)
    h, w = p.shape[-2:]
    n_frames = p.size // (h * w)
    if cfg.norm_mode == "l1":
        value = exact_mean(np.abs(d))
        s = np.sign(d) / p.size
    else:
        flat = d.reshape(n_frames, h * w)
        rms = np.sqrt(np.array([exact_sum(row * row) for row in flat]) / (h * w))
        value = exact_mean(rms)
        safe = np.where(rms > 0, rms, 1.0)
        s = np.where(rms[:, None] > 0, flat / (h * w * safe[:, None]), 0.0).reshape(p.shape) / n_frames
    grad = s - box_filter_3x3_adjoint(s, mode=mode)
    return value, grad


def temporal_smooth_loss(prob, cfg=LossConfig()):
    """Average over consecutive frame pairs of the per-pair mean absolute
    (``l1``) or root-mean-square (``l2``) difference."""
    p = _frames(prob)
    T, h, w = p.shape[-3:]
    if T < 2:
        raise ContractError(f"temporal smoothness needs at least 2 lead times, got {T}")
    q = p.reshape(-1, T, h, w)
    S = q.shape[0]
    e = q[:, :-1] - q[:, 1:]
    pairs = S * (T - 1)
    if cfg.norm_mode == "l1":
        value = exact_mean(np.abs(e))
        ge = np.sign(e) / (pairs * h * w)
    else:
        flat = e.reshape(pairs, h * w)
        rms = np.sqrt(np.array([exact_sum(row * row) for row in flat]) / (h * w))
        value = exact_mean(rms)
        safe = np.where(rms > 0, rms, 1.0)
        ge = np.where(rms[:, None] > 0, flat / (h * w * safe[:, None]), 0.0).reshape(e.shape) / pairs
    grad = np.zeros_like(q)
    grad[:, :-1] += ge
    grad[:, 1:] -= ge
    return value, grad.reshape(p.shape)


def total_loss(logits, labels, cfg=LossConfig()) -> LossReport:
    z = np.asarray(logits, dtype=np.float64)
    bce, g = bce_loss(z, labels, cfg)
    p = sigmoid(z)
    # both smooth terms are always reported, even when their weight is zero
    spatial, gs = spatial_smooth_loss(p, cfg)
    temporal, gt = temporal_smooth_loss(p, cfg) if z.shape[-3] >= 2 else (0.0, 0.0)
    grad = g + (cfg.alpha * gs + cfg.beta * gt) * p * (1.0 - p)
    total = bce + cfg.alpha * spatial + cfg.beta * temporal
    return LossReport(bce, spatial, temporal, total, grad)
