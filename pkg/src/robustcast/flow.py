"""Block-matching motion estimation, direction histograms and the
direction-overlap admissibility audit for geometric augmentations."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import ALL_TRANSFORMS, GeomTransform, transform_vector
from .tensor_core import InvalidShapeError

log = logging.getLogger(__name__)

N_BINS = 16
BIN_WIDTH = 360.0 / N_BINS
# bin k is centred on k * 22.5 degrees (0 = east, counterclockwise)
BIN_CENTERS = np.arange(N_BINS) * BIN_WIDTH


@dataclass
class FlowField:
    u: np.ndarray
    v: np.ndarray
    valid: np.ndarray


@dataclass
class DirectionHistogram:
    mass: np.ndarray

    @property
    def bins(self):
        return BIN_CENTERS

    def dominant(self, dominance_fraction=0.5):
        top = self.mass.max()
        if top <= 0:
            return np.array([], dtype=int)
        return np.flatnonzero(self.mass >= dominance_fraction * top)


def block_matching_flow(frame_a, frame_b, block=8, search_radius=4, texture_threshold=1e-6):
    """Integer displacement of each block of ``frame_a`` into ``frame_b``.

    Blocks tile the frame (the last partial row/column of blocks is anchored at
    the far edge); every pixel receives its block's displacement.  Candidates
    are scored by SSD against ``frame_b`` padded by edge replication; ties go to
    the smallest |d|, then smallest dy, then smallest dx.
    """
    a = np.asarray(frame_a, dtype=np.float64)
    b = np.asarray(frame_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise InvalidShapeError(f"frames must be matching 2-D planes, got {a.shape} and {b.shape}")
    if block < 3 or search_radius < 1:
        raise ValueError("block must be >= 3 and search_radius >= 1")
    H, W = a.shape
    r = search_radius
    bp = np.pad(b, r, mode="edge")

    offsets = [(dx, dy) for dy in range(-r, r + 1) for dx in range(-r, r + 1)]
    offsets.sort(key=lambda d: (d[0] ** 2 + d[1] ** 2, d[1], d[0]))

    u = np.zeros((H, W))
    v = np.zeros((H, W))
    valid = np.zeros((H, W))
    bh, bw = min(block, H), min(block, W)
    rows = sorted({min(i, H - bh) for i in range(0, H, bh)})
    cols = sorted({min(j, W - bw) for j in range(0, W, bw)})
    for i0 in rows:
        for j0 in cols:
            ref = a[i0:i0 + bh, j0:j0 + bw]
            if ref.var() < texture_threshold:
                continue
            best, best_cost = (0, 0), math.inf
            for dx, dy in offsets:
                cand = bp[i0 + r + dy:i0 + r + dy + bh, j0 + r + dx:j0 + r + dx + bw]
                cost = float(np.sum((cand - ref) ** 2))
                if cost < best_cost:
                    best, best_cost = (dx, dy), cost
            u[i0:i0 + bh, j0:j0 + bw] = best[0]
            v[i0:i0 + bh, j0:j0 + bw] = best[1]
            valid[i0:i0 + bh, j0:j0 + bw] = 1.0
    return FlowField(u, v, valid)


def direction_histogram(f: FlowField, min_speed=0.5, normalize=True) -> DirectionHistogram:
    speed = np.hypot(f.u, f.v)
    keep = (f.valid > 0) & (speed >= min_speed) & (speed > 0)
    mass = np.zeros(N_BINS)
    if keep.any():
        ang = np.degrees(np.arctan2(-f.v[keep], f.u[keep])) % 360.0
        idx = np.floor((ang + BIN_WIDTH / 2) / BIN_WIDTH).astype(int) % N_BINS
        np.add.at(mass, idx, speed[keep])
        if normalize:
            mass = mass / mass.sum()
    return DirectionHistogram(mass)


def _unit(angle_deg):
    a = math.radians(angle_deg)
    return np.array([math.cos(a), -math.sin(a)])  # (dx east, dy south)


def _angle(vec):
    return math.degrees(math.atan2(-vec[1], vec[0])) % 360.0


def angular_distance(a, b):
    d = abs(a - b) % 360.0
    return min(d, 360.0 - d)


def admissible(g: GeomTransform, hist: DirectionHistogram, dominance_fraction=0.5, max_angle=90.0) -> bool:
    """True when ``g`` maps some dominant direction to within ``max_angle``
    degrees of a dominant direction.  An empty histogram admits everything."""
    dom = [BIN_CENTERS[k] for k in hist.dominant(dominance_fraction)]
    if not dom:
        return True
    for d in dom:
        mapped = _angle(transform_vector(g, _unit(d)))
        # snap float noise; images of bin centres under D4 are bin centres
        mapped = round(mapped / BIN_WIDTH) * BIN_WIDTH % 360.0
        if any(angular_distance(mapped, e) <= max_angle + 1e-9 for e in dom):
            return True
    return False


def mean_direction(hist: DirectionHistogram):
    """Circular mean angle (degrees) of the histogram mass, or None."""
    if hist.mass.sum() <= 0:
        return None
    vec = sum(m * _unit(c) for m, c in zip(hist.mass, BIN_CENTERS))
    return _angle(vec)


def flow_for_sequence(x, layout=None, block=8, search_radius=4, channel=0):
    """Flow between the first and last input frames of one ``C x T_in x H x W`` sample."""
    x = np.asarray(x)
    return block_matching_flow(x[channel, 0], x[channel, -1], block=block, search_radius=search_radius)


@dataclass
class AuditReport:
    rows: list  # (region, transform name, dominant bins str, verdict)
    histograms: dict
    n_sequences: dict
    warnings: list

    def verdict(self, region, g):
        name = g.name if isinstance(g, GeomTransform) else g
        for reg, t, _, ok in self.rows:
            if reg == region and t == name:
                return ok
        raise KeyError((region, name))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["region", "transform", "dominant_bins", "verdict"])
            for row in self.rows:
                reg, t, dom, ok = row
                w.writerow([reg, t, dom, "admissible" if ok else "inadmissible"])
            for msg in self.warnings:
                fh.write(f"# warning: {msg}\n")


def audit_sequences(sequences_by_region, block=8, search_radius=4, min_speed=0.5,
                    dominance_fraction=0.5, max_angle=90.0, transforms=ALL_TRANSFORMS):
    """Pool per-region direction histograms and judge every transform.

    ``sequences_by_region`` maps region id to an iterable of input tensors.
    """
    rows, hists, counts, warnings = [], {}, {}, []
    for region in sorted(sequences_by_region):
        mass = np.zeros(N_BINS)
        n = 0
        for x in sequences_by_region[region]:
            f = flow_for_sequence(x, block=block, search_radius=search_radius)
            mass += direction_histogram(f, min_speed=min_speed, normalize=False).mass
            n += 1
        total = mass.sum()
        hist = DirectionHistogram(mass / total if total > 0 else mass)
        hists[region], counts[region] = hist, n
        if n == 0:
            warnings.append(f"region {region} has no sequences; all transforms vacuously admissible")
        dom = " ".join(f"{BIN_CENTERS[k]:g}" for k in hist.dominant(dominance_fraction))
        for g in transforms:
            rows.append((region, g.name, dom, admissible(g, hist, dominance_fraction, max_angle)))
    if not sequences_by_region:
        warnings.append("empty dataset: zero sequences audited, all transforms vacuously admissible")
        for g in transforms:
            rows.append(("*", g.name, "", True))
    for msg in warnings:
        log.warning(msg)
    return AuditReport(rows, hists, counts, warnings)


def audit_policy(manifest, policy=None, split="train", **params):
    """Audit all eight D4 elements over the sequences of ``split`` in a manifest.

    ``policy`` only selects which verdicts are echoed in the log; the report
    always covers the whole group.
    """
    from .tensor_core import read_tensor

    by_region = {}
    for region, _, x_path, _ in manifest.entries(split):
        if not Path(x_path).is_file():
            raise FileNotFoundError(f"unreadable sequence file: {x_path}")
        by_region.setdefault(region, []).append(x_path)

    report = audit_sequences({r: (read_tensor(p) for p in paths) for r, paths in by_region.items()},
                             **params)
    if policy is not None:
        for region in report.histograms:
            rejected = [g.name for g in policy if not report.verdict(region, g)]
            if rejected:
                log.info("region %s: policy members outside the observed directions: %s",
                         region, ", ".join(rejected))
    return report


def flow_to_svg(f: FlowField, step=8, scale=3.0, cell=8) -> str:
    """Arrow overlay, one arrow per valid block centre, as an SVG document."""
    H, W = f.u.shape
    lines = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W * cell}" height="{H * cell}" '
             f'viewBox="0 0 {W * cell} {H * cell}">',
             f'<rect width="{W * cell}" height="{H * cell}" fill="black"/>']
    for i in range(step // 2, H, step):
        for j in range(step // 2, W, step):
            if not f.valid[i, j]:
                continue
            du, dv = f.u[i, j], f.v[i, j]
            if du == 0 and dv == 0:
                continue
            x0, y0 = (j + 0.5) * cell, (i + 0.5) * cell
            x1, y1 = x0 + du * scale * cell / 2, y0 + dv * scale * cell / 2
            lines.append(f'<line class="arrow" x1="{x0:.2f}" y1="{y0:.2f}" x2="{x1:.2f}" y2="{y1:.2f}" '
                         f'stroke="lime" stroke-width="2"/>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"
