"""IoU / mIoU evaluation, rain-frequency maps and PPM rendering.

mIoU averages IoU over lead times within a region, then over regions.  A
(region, lead) cell with no positives in prediction or truth has undefined
IoU and is left out of both means.
"""
from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .losses import ContractError


def _binary(a, name):
    a = np.asarray(a)
    if not np.all((a == 0) | (a == 1)):
        raise ContractError(f"{name} must be binary")
    return a.astype(bool)


def confusion(pred_binary, gt_binary):
    p = _binary(pred_binary, "prediction")
    g = _binary(gt_binary, "ground truth")
    if p.shape != g.shape:
        raise ContractError(f"shape mismatch {p.shape} vs {g.shape}")
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    return tp, fp, fn, p.size - tp - fp - fn


def iou_from_counts(tp, fp, fn):
    denom = tp + fp + fn
    return None if denom == 0 else tp / denom


def iou(pred_binary, gt_binary):
    """TP / (TP + FP + FN), or None when both masks are empty."""
    tp, fp, fn, _ = confusion(pred_binary, gt_binary)
    return iou_from_counts(tp, fp, fn)


def _mean_defined(values):
    vals = [v for v in values if v is not None]
    return math.fsum(vals) / len(vals) if vals else None


@dataclass
class EvalReport:
    threshold: float = 0.5
    counts: dict = field(default_factory=lambda: defaultdict(lambda: np.zeros(4, dtype=np.int64)))

    def add(self, pred_binary, gt_binary, regions):
        """Accumulate ``(N, 1, T, h, w)`` masks; ``regions[n]`` labels sample n."""
        p = _binary(pred_binary, "prediction")
        g = _binary(gt_binary, "ground truth")
        if p.shape != g.shape:
            raise ContractError(f"shape mismatch {p.shape} vs {g.shape}")
        p = p.reshape(p.shape[0], -1, *p.shape[-2:])
        g = g.reshape(g.shape[0], -1, *g.shape[-2:])
        for n, reg in enumerate(regions):
            tp = np.count_nonzero(p[n] & g[n], axis=(1, 2))
            fp = np.count_nonzero(p[n] & ~g[n], axis=(1, 2))
            fn = np.count_nonzero(~p[n] & g[n], axis=(1, 2))
            tn = p.shape[-1] * p.shape[-2] - tp - fp - fn
            for lead in range(p.shape[1]):
                self.counts[(str(reg), lead)] += (tp[lead], fp[lead], fn[lead], tn[lead])
        return self

    def regions(self):
        return sorted({r for r, _ in self.counts})

    def leads(self, region):
        return sorted(lead for r, lead in self.counts if r == region)

    def iou(self, region, lead):
        tp, fp, fn, _ = self.counts[(region, lead)]
        return iou_from_counts(int(tp), int(fp), int(fn))

    def region_miou(self, region):
        return _mean_defined(self.iou(region, lead) for lead in self.leads(region))

    @property
    def miou(self):
        return _mean_defined(self.region_miou(r) for r in self.regions())

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["region", "lead", "tp", "fp", "fn", "tn", "iou"])
            for reg in self.regions():
                for lead in self.leads(reg):
                    tp, fp, fn, tn = (int(v) for v in self.counts[(reg, lead)])
                    v = self.iou(reg, lead)
                    w.writerow([reg, lead, tp, fp, fn, tn, "undefined" if v is None else repr(v)])


def write_summary_csv(path, rows, regions):
    """Leaderboard-style table: ``method,<region>...,miou`` in percent."""
    def fmt(v):
        return "undefined" if v is None else f"{100 * v:.2f}"

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", *regions, "miou"])
        for method, report in rows:
            w.writerow([method, *(fmt(report.region_miou(r)) for r in regions), fmt(report.miou)])


def evaluate_predictions(prob, labels, regions, prob_threshold=0.5, report=None):
    report = EvalReport(prob_threshold) if report is None else report
    pred = (np.asarray(prob) >= prob_threshold).astype(np.int8)
    return report.add(pred, labels, regions)


def evaluate(predict_proba, manifest, split="test", prob_threshold=0.5, batch_size=64):
    """Score ``predict_proba`` (inputs -> rain probabilities) on a manifest split."""
    missing = manifest.missing_files(split)
    if missing:
        raise FileNotFoundError("missing dataset files: " + ", ".join(missing))
    entries = list(manifest.entries(split))
    if not entries:
        raise ContractError(f"split {split!r} has no sequences")
    from .tensor_core import read_tensor

    report = EvalReport(prob_threshold)
    for i in range(0, len(entries), batch_size):
        chunk = entries[i:i + batch_size]
        X = np.stack([read_tensor(e[2]) for e in chunk])
        Y = np.stack([read_tensor(e[3]) for e in chunk])
        evaluate_predictions(predict_proba(X), Y, [e[0] for e in chunk], prob_threshold, report)
    return report


def rain_frequency_map(manifest, region):
    if region not in manifest.region_ids():
        raise ContractError(f"unknown region {region!r}")
    _, Y, _ = manifest.load_split(None, region=region, inputs=False)
    if len(Y) == 0:
        return np.zeros((manifest.layout.label_height, manifest.layout.label_width))
    return Y.reshape(-1, *Y.shape[-2:]).mean(axis=0)


def _ppm(rgb):
    rgb = np.asarray(rgb, dtype=np.uint8)
    h, w, _ = rgb.shape
    return f"P6\n{w} {h}\n255\n".encode() + rgb.tobytes()


def frequency_ppm(freq, vmax=None):
    """Green-intensity rendering: more frequent rain, brighter green."""
    f = np.asarray(freq, dtype=np.float64)
    top = f.max() if vmax is None else vmax
    scaled = np.zeros_like(f) if top <= 0 else np.clip(f / top, 0.0, 1.0)
    g = np.round(255 * scaled).astype(np.uint8)
    rgb = np.stack([np.zeros_like(g), g, np.zeros_like(g)], axis=-1)
    return _ppm(rgb)


def probability_ppm(prob, rain_mask=None):
    """Grey probability map; observed rain pixels are tinted yellow."""
    p = np.clip(np.asarray(prob, dtype=np.float64), 0.0, 1.0)
    v = np.round(255 * p).astype(np.uint8)
    rgb = np.stack([v, v, v], axis=-1)
    if rain_mask is not None:
        m = np.asarray(rain_mask) > 0
        rgb[m, 0] = np.maximum(rgb[m, 0], 200)
        rgb[m, 1] = np.maximum(rgb[m, 1], 200)
    return _ppm(rgb)
