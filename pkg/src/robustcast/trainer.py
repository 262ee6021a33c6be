"""AdamW training loop with a validation-driven step-size decay and
geometric augmentation sampling.

Randomness comes from numpy's counter-based Philox generator keyed by
``(seed, purpose, epoch, step)``, so a run is reproducible bit for bit.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .forecaster import ModelParams, PARAM_NAMES, backward, forward
from .geometry import ALL_TRANSFORMS, IDENTITY, PAPER_POLICY, ROT180, GeomTransform, apply
from .losses import CSV_HEADER, LossConfig, total_loss

log = logging.getLogger(__name__)

AUG_MODES = ("none", "paper", "random_d4", "inverse")
_AUG_CHOICES = {
    "none": (IDENTITY,),
    "paper": (IDENTITY,) + PAPER_POLICY,
    "random_d4": ALL_TRANSFORMS,
    "inverse": (IDENTITY, ROT180),
}


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 0.1
    batch_size: int = 16
    epochs: int = 15
    lr_decay_factor: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    aug_policy: str = "paper"
    loss: LossConfig = field(default_factory=LossConfig)
    seed: int = 0
    features: int = 16
    dropout_rate: float = 0.4
    checkpoint_every: int = 0

    def __post_init__(self):
        if isinstance(self.loss, dict):
            self.loss = LossConfig(**self.loss)
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        if not 0 < self.lr_decay_factor < 1:
            raise ConfigError("lr_decay_factor must lie in (0, 1)")
        if self.aug_policy not in AUG_MODES:
            raise ConfigError(f"aug_policy must be one of {AUG_MODES}, got {self.aug_policy!r}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be positive")

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_json(cls, path):
        doc = json.loads(Path(path).read_text())
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown TrainConfig fields: {sorted(unknown)}")
        return cls(**doc)


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adamw_step(params: ModelParams, grads, state: AdamState, cfg: TrainConfig, lr=None):
    """One in-place AdamW update; returns ``(params, state)``.

    Weight decay is decoupled: ``theta -= lr * wd * theta`` before the
    bias-corrected adaptive step.
    """
    lr = cfg.lr if lr is None else lr
    garrs = grads.arrays() if hasattr(grads, "arrays") else grads
    for name in PARAM_NAMES:
        if not np.all(np.isfinite(garrs[name])):
            bad = int(np.count_nonzero(~np.isfinite(garrs[name])))
            raise FloatingPointError(f"non-finite gradient for parameter {name!r} ({bad} elements)")
    state.step += 1
    t = state.step
    bc1 = 1.0 - cfg.beta1 ** t
    bc2 = 1.0 - cfg.beta2 ** t
    for name in PARAM_NAMES:
        theta = getattr(params, name)
        g = garrs[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(theta)
            state.v[name] = np.zeros_like(theta)
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        if cfg.weight_decay:
            theta -= lr * cfg.weight_decay * theta
        theta -= (lr / bc1) * m / (np.sqrt(v) / np.sqrt(bc2) + cfg.eps)
    return params, state


def make_rng(seed, *stream):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, stream)])))


def sample_augmentation(policy_mode: str, rng) -> GeomTransform:
    choices = _AUG_CHOICES.get(policy_mode)
    if choices is None:
        raise ConfigError(f"unknown augmentation mode {policy_mode!r}")
    if len(choices) == 1:
        return choices[0]
    return choices[int(rng.integers(len(choices)))]


def augment_pair(g: GeomTransform, x, y):
    """Apply the same spatial transform to inputs and labels."""
    return apply(g, x), apply(g, y)


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)   # dicts per epoch
    steps: list = field(default_factory=list)  # (step, bce, spatial, temporal, total)
    transforms: list = field(default_factory=list)  # per step: (input transform, label transform)

    HEADER = ("epoch", "bce", "spatial", "temporal", "total", "val_total", "lr")

    @property
    def lr_trace(self):
        return [r["lr"] for r in self.rows]

    @property
    def val_losses(self):
        return [r["val_total"] for r in self.rows]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.HEADER)
            for r in self.rows:
                w.writerow([r["epoch"]] + [repr(float(r[k])) for k in self.HEADER[1:]])

    def steps_to_csv(self, path):
        with open(path, "w") as fh:
            fh.write(CSV_HEADER + "\n")
            for s in self.steps:
                fh.write(",".join([str(s[0])] + [repr(float(v)) for v in s[1:]]) + "\n")


def _check_data(name, X, Y, layout):
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if len(X) == 0:
        raise ConfigError(f"{name} set is empty")
    if X.shape[1:] != layout.input_shape or Y.shape[1:] != layout.label_shape or len(X) != len(Y):
        raise ConfigError(f"{name} arrays {X.shape}/{Y.shape} do not match layout "
                          f"{layout.input_shape}/{layout.label_shape}")
    return X, Y


def dataset_loss(params, X, Y, loss_cfg, batch_size=64):
    """Eval-mode total loss over a dataset, weighted per sample."""
    totals = []
    for i in range(0, len(X), batch_size):
        logits, _ = forward(params, X[i:i + batch_size], train=False)
        rep = total_loss(logits, Y[i:i + batch_size], loss_cfg)
        totals.append(rep.total * len(logits))
    return float(np.sum(totals) / len(X))


def train(params: ModelParams, train_data, val_data, cfg: TrainConfig, checkpoint_dir=None):
    """Train ``params`` (copied, not mutated) and return ``(params, TrainLog)``.

    ``train_data`` and ``val_data`` are ``(X, Y)`` pairs of stacked inputs
    ``(N, C, T_in, H, W)`` and labels ``(N, 1, T_out, h, w)``.
    """
    X, Y = _check_data("training", *train_data, params.layout)
    Xv, Yv = _check_data("validation", *val_data, params.layout)
    params = params.copy()
    state = AdamState()
    tlog = TrainLog()
    lr = cfg.lr
    prev_val = None
    step = 0
    aug_rng = make_rng(cfg.seed, 1)
    for epoch in range(1, cfg.epochs + 1):
        order = make_rng(cfg.seed, 2, epoch).permutation(len(X))
        sums = np.zeros(4)
        n_batches = 0
        for start in range(0, len(X), cfg.batch_size):
            idx = np.sort(order[start:start + cfg.batch_size])
            g = sample_augmentation(cfg.aug_policy, aug_rng)
            xb, yb = augment_pair(g, X[idx], Y[idx])
            tlog.transforms.append((g.name, g.name))
            drop_seed = int(make_rng(cfg.seed, 3, step).integers(2 ** 63))
            logits, trace = forward(params, xb, train=True, seed=drop_seed)
            rep = total_loss(logits, yb, cfg.loss)
            grads = backward(params, trace, rep.grad_logits)
            adamw_step(params, grads, state, cfg, lr=lr)
            step += 1
            tlog.steps.append((step, rep.bce, rep.spatial, rep.temporal, rep.total))
            sums += (rep.bce, rep.spatial, rep.temporal, rep.total)
            n_batches += 1
        val = dataset_loss(params, Xv, Yv, cfg.loss)
        means = sums / n_batches
        tlog.rows.append(dict(epoch=epoch, bce=means[0], spatial=means[1], temporal=means[2],
                              total=means[3], val_total=val, lr=lr))
        log.info("epoch %d train %.5f val %.5f lr %.3g", epoch, means[3], val, lr)
        if checkpoint_dir is not None and cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
            params.save(Path(checkpoint_dir) / f"epoch{epoch:03d}")
        if prev_val is not None and val > prev_val:
            lr *= cfg.lr_decay_factor
        prev_val = val
    return params, tlog
