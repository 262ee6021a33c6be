"""Central finite-difference checks of the loss and model gradients.

A coordinate whose +/-h perturbation flips an |.| sign or a ReLU gate lies on
a kink where the derivative does not exist; such coordinates are skipped and
counted rather than compared.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .forecaster import PARAM_NAMES, backward, forward, init_params
from .losses import LossConfig, bce_loss, spatial_residual, spatial_smooth_loss, temporal_smooth_loss, total_loss
from .tensor_core import GridLayout, sigmoid

STEP = 1e-5
FLOOR = 1e-8


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    checked: int
    skipped: int


def relative_error(analytic, numeric, floor=FLOOR):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def _prob_signature(p, cfg):
    d = spatial_residual(p, cfg.kernel_mode)
    e = p[..., :-1, :, :] - p[..., 1:, :, :]
    return np.concatenate([np.sign(d).ravel(), np.sign(e).ravel()])


def _fd(fn, x, analytic, signature=None, step=STEP):
    worst, checked, skipped = 0.0, 0, 0
    base_sig = signature(x) if signature else None
    for idx in np.ndindex(x.shape):
        xp = x.copy()
        xm = x.copy()
        xp[idx] += step
        xm[idx] -= step
        if signature is not None and not (np.array_equal(signature(xp), base_sig)
                                          and np.array_equal(signature(xm), base_sig)):
            skipped += 1
            continue
        num = (fn(xp) - fn(xm)) / (2 * step)
        worst = max(worst, relative_error(analytic[idx], num))
        checked += 1
    return worst, checked, skipped


def check_losses(seed, shape=(1, 2, 5, 5), cfg=None):
    """Finite-difference check of every loss term on one random instance."""
    cfg = LossConfig() if cfg is None else cfg
    rng = np.random.default_rng(seed)
    z = rng.normal(0.0, 2.0, size=shape)
    y = (rng.random(shape) < 0.4).astype(np.float64)
    p = sigmoid(z)
    out = []

    _, g = bce_loss(z, y, cfg)
    out.append(CheckResult("bce", *_fd(lambda t: bce_loss(t, y, cfg)[0], z, g)))

    def psig(q):
        return _prob_signature(q, cfg)

    _, g = spatial_smooth_loss(p, cfg)
    out.append(CheckResult("spatial", *_fd(lambda q: spatial_smooth_loss(q, cfg)[0], p, g, psig)))
    _, g = temporal_smooth_loss(p, cfg)
    out.append(CheckResult("temporal", *_fd(lambda q: temporal_smooth_loss(q, cfg)[0], p, g, psig)))

    rep = total_loss(z, y, cfg)
    out.append(CheckResult("total", *_fd(lambda t: total_loss(t, y, cfg).total, z, rep.grad_logits,
                                         lambda t: psig(sigmoid(t)))))
    return out


MICRO_LAYOUT = GridLayout(channels=2, frames_in=2, frames_out=2, height=8, width=8,
                          label_height=4, label_width=4)


def check_model(seed, layout=MICRO_LAYOUT, features=4, cfg=None):
    """End-to-end check of ``total_loss(forward(params, x))`` against
    ``backward`` for every parameter, eval mode."""
    cfg = LossConfig() if cfg is None else cfg
    rng = np.random.default_rng(seed)
    params = init_params(layout, features, seed=seed)
    params.conv1_b[:] = rng.normal(0, 0.1, features)
    params.conv2_b[:] = rng.normal(0, 0.1, features)
    params.head_b[:] = rng.normal(0, 0.1, layout.frames_out)
    x = rng.normal(0, 1, size=(2,) + layout.input_shape)
    y = (rng.random((2,) + layout.label_shape) < 0.4).astype(np.float64)

    def loss_of(pr):
        return total_loss(forward(pr, x)[0], y, cfg).total

    def signature(pr):
        logits, tr = forward(pr, x)
        return np.concatenate([(tr.pre1 > 0).ravel(), (tr.pre2 > 0).ravel(),
                               _prob_signature(sigmoid(logits), cfg)])

    logits, trace = forward(params, x)
    grads = backward(params, trace, total_loss(logits, y, cfg).grad_logits).arrays()
    base_sig = signature(params)
    worst, checked, skipped = 0.0, 0, 0
    for name in PARAM_NAMES:
        arr = getattr(params, name)
        for idx in np.ndindex(arr.shape):
            pp, pm = params.copy(), params.copy()
            getattr(pp, name)[idx] += STEP
            getattr(pm, name)[idx] -= STEP
            if not (np.array_equal(signature(pp), base_sig) and np.array_equal(signature(pm), base_sig)):
                skipped += 1
                continue
            num = (loss_of(pp) - loss_of(pm)) / (2 * STEP)
            worst = max(worst, relative_error(grads[name][idx], num))
            checked += 1
    return CheckResult("model", worst, checked, skipped)


def run_gradcheck(seeds=20):
    """Worst relative error per term over ``seeds`` random instances."""
    summary = {}
    for s in range(seeds):
        for r in check_losses(s) + [check_model(s)]:
            prev = summary.get(r.name)
            if prev is None:
                summary[r.name] = r
            else:
                summary[r.name] = CheckResult(r.name, max(prev.max_rel_error, r.max_rel_error),
                                              prev.checked + r.checked, prev.skipped + r.skipped)
    return summary
