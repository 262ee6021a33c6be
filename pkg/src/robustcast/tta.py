"""Geometric augmentation ensemble: average of back-transformed probability
maps predicted from transformed copies of the input by a single model."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import ALL_TRANSFORMS, IDENTITY, PAPER_POLICY, VFLIP, GeomTransform, apply, inverse, parse_transform
from .tensor_core import exact_mean, sigmoid

PRESETS = {
    "identity": (IDENTITY,),
    "paper_main": (IDENTITY, VFLIP),
    "paper_full": (IDENTITY,) + PAPER_POLICY,
}
_CANONICAL = {g: i for i, g in enumerate(ALL_TRANSFORMS)}


class EnsembleConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EnsembleConfig:
    members: tuple = PRESETS["paper_full"]
    aggregate: str = "mean"

    def __post_init__(self):
        members = tuple(parse_transform(m) if isinstance(m, str) else m for m in self.members)
        if not members:
            raise EnsembleConfigError("ensemble needs at least one member")
        if len(set(members)) != len(members):
            raise EnsembleConfigError("ensemble members must be distinct")
        if self.aggregate != "mean":
            raise EnsembleConfigError(f"unsupported aggregate {self.aggregate!r}")
        object.__setattr__(self, "members", members)

    @classmethod
    def preset(cls, name):
        try:
            return cls(PRESETS[name])
        except KeyError:
            raise EnsembleConfigError(f"unknown ensemble preset {name!r}; choose from {sorted(PRESETS)}") from None


def _as_config(cfg):
    if cfg is None:
        return EnsembleConfig.preset("identity")
    if isinstance(cfg, str):
        return EnsembleConfig.preset(cfg)
    if isinstance(cfg, EnsembleConfig):
        return cfg
    return EnsembleConfig(tuple(cfg))


def ensemble_predict(predict_logits, x, cfg=None):
    """Mean over members g of ``g^-1(sigmoid(F(g(x))))``.

    ``predict_logits`` maps an input batch (or sample) to logits in eval mode.
    Members are summed in a fixed canonical order, so the result does not
    depend on how the member list is ordered.
    """
    cfg = _as_config(cfg)
    x = np.asarray(x, dtype=np.float64)
    members = sorted(cfg.members, key=_CANONICAL.__getitem__)
    if members == [IDENTITY]:
        return sigmoid(predict_logits(x))
    total = None
    for g in members:
        xg = apply(g, x)
        if xg.shape != x.shape:
            raise EnsembleConfigError(f"member {g.name} changes the input shape {x.shape} -> {xg.shape}")
        p = apply(inverse(g), sigmoid(predict_logits(xg)))
        total = p if total is None else total + p
    return total / len(members)


def equivariance_gap(predict_logits, x, g: GeomTransform) -> float:
    """Mean |g^-1(P(g x)) - P(x)| between probability maps."""
    base = sigmoid(predict_logits(x))
    back = apply(inverse(g), sigmoid(predict_logits(apply(g, x))))
    return exact_mean(np.abs(back - base))
