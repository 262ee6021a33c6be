"""Dihedral (D4) transforms acting on the two trailing spatial axes.

Frame convention: row index i grows southward, column index j grows eastward.
A displacement vector is ``(dx, dy)`` = (east, south).  A transform is stored
canonically as ``k`` counterclockwise quarter turns followed by an optional
vertical flip (row reversal).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor_core import InvalidShapeError


@dataclass(frozen=True)
class GeomTransform:
    rotation: int = 0
    vflip: bool = False

    def __post_init__(self):
        object.__setattr__(self, "rotation", int(self.rotation) % 4)
        object.__setattr__(self, "vflip", bool(self.vflip))

    @property
    def name(self) -> str:
        if self.rotation == 0:
            return "vflip" if self.vflip else "id"
        base = f"rot{90 * self.rotation}"
        return base + "+vflip" if self.vflip else base

    @property
    def matrix(self) -> np.ndarray:
        """Linear action on ``(dx, dy)`` displacement vectors."""
        rot = np.array([[0, 1], [-1, 0]])  # east -> north under one ccw quarter turn
        m = np.linalg.matrix_power(rot, self.rotation)
        if self.vflip:
            m = np.array([[1, 0], [0, -1]]) @ m
        return m.astype(np.int64)

    def __call__(self, t):
        return apply(self, t)

    def __repr__(self):
        return f"GeomTransform({self.name})"


IDENTITY = GeomTransform(0, False)
ROT90 = GeomTransform(1, False)
ROT180 = GeomTransform(2, False)
ROT270 = GeomTransform(3, False)
VFLIP = GeomTransform(0, True)
ROT90_VFLIP = GeomTransform(1, True)
ROT180_VFLIP = GeomTransform(2, True)
ROT270_VFLIP = GeomTransform(3, True)

ALL_TRANSFORMS = (IDENTITY, ROT90, ROT180, ROT270, VFLIP, ROT90_VFLIP, ROT180_VFLIP, ROT270_VFLIP)
_BY_NAME = {g.name: g for g in ALL_TRANSFORMS}
_BY_MATRIX = {g.matrix.tobytes(): g for g in ALL_TRANSFORMS}

# Augmentation policy: only transforms that keep at least one motion direction
# of a west-to-east regime.  Verbatim list, including the Rot270+VFlip /
# Rot90+VFlip asymmetry.
PAPER_POLICY = (ROT90, ROT180_VFLIP, ROT270, ROT270_VFLIP, VFLIP)


@dataclass(frozen=True)
class AugPolicy:
    members: tuple = PAPER_POLICY
    include_identity_in_ensemble: bool = True

    def __post_init__(self):
        members = tuple(self.members)
        if len(set(members)) != len(members):
            raise ValueError("augmentation policy members must be distinct")
        object.__setattr__(self, "members", members)

    def ensemble_members(self):
        if self.include_identity_in_ensemble and IDENTITY not in self.members:
            return (IDENTITY,) + self.members
        return self.members


def parse_transform(name: str) -> GeomTransform:
    key = name.strip().lower()
    if key in ("identity", "none"):
        key = "id"
    try:
        return _BY_NAME[key]
    except KeyError:
        raise ValueError(f"unknown transform {name!r}; expected one of {sorted(_BY_NAME)}") from None


def apply(g: GeomTransform, t):
    t = np.asarray(t)
    if t.ndim < 2:
        raise InvalidShapeError(f"transform needs rank >= 2, got shape {t.shape}")
    out = np.rot90(t, k=g.rotation, axes=(-2, -1))
    if g.vflip:
        out = out[..., ::-1, :]
    return np.ascontiguousarray(out)


def compose(g2: GeomTransform, g1: GeomTransform) -> GeomTransform:
    """The transform equal to applying ``g1`` first, then ``g2``."""
    return _BY_MATRIX[(g2.matrix @ g1.matrix).tobytes()]


def inverse(g: GeomTransform) -> GeomTransform:
    if g.vflip:
        return g  # every reflection is an involution
    return GeomTransform(-g.rotation)


def transform_vector(g: GeomTransform, v):
    dx, dy = g.matrix @ np.asarray(v, dtype=np.float64)
    return np.array([dx, dy])
