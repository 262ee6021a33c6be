"""Synthetic advective-rain benchmark with regional wind regimes, rain
climatology hotspots and seasonality.

Each region advects Gaussian rain cells along its wind; cells are born at
positions drawn from a per-region frequency-bias map.  Inputs are four
deterministic views of the rain-rate field, labels are the future rain mask
(rate >= 0.2 mm/h) on the central window.
"""
from __future__ import annotations

import dataclasses
import json
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .tensor_core import GridLayout, read_tensor, write_tensor

RAIN_THRESHOLD = 0.2  # mm/h
BURN_IN = 24


class DatasetError(ValueError):
    pass


@dataclass
class RegionSpec:
    region_id: str
    wind_mean: tuple = (1.0, 0.0)  # px/frame, (east, south)
    wind_jitter: float = 0.1
    cell_birth_rate: float = 0.15
    season_amplitude: float = 0.3
    season_phase: float = 0.0  # radians
    intensity_mean: float = 3.0  # mm/h, lognormal peak
    intensity_sigma: float = 0.5
    radius_mean: float = 3.0  # px, Gaussian sigma of a cell
    radius_std: float = 0.8
    decay: float = 0.9  # per-frame intensity factor
    hotspots: list = field(default_factory=list)  # [(row, col, sigma, weight), ...]
    bias_floor: float = 0.15

    def __post_init__(self):
        self.wind_mean = tuple(float(v) for v in self.wind_mean)
        self.hotspots = [tuple(float(v) for v in h) for h in self.hotspots]
        if self.cell_birth_rate < 0:
            raise DatasetError("cell_birth_rate must be >= 0")
        if self.radius_mean <= 0:
            raise DatasetError("radius_mean must be > 0")
        if self.bias_floor < 0 or any(h[3] < 0 for h in self.hotspots):
            raise DatasetError("frequency bias must be non-negative")

    def frequency_bias(self, height, width):
        ii, jj = np.mgrid[0:height, 0:width].astype(np.float64)
        bias = np.full((height, width), self.bias_floor)
        for r, c, s, wgt in self.hotspots:
            bias += wgt * np.exp(-((ii - r) ** 2 + (jj - c) ** 2) / (2 * s * s))
        return bias

    def to_dict(self):
        return dataclasses.asdict(self)


def shift_field(f, dx, dy):
    """Bilinear backward warp by a constant displacement, zero inflow."""
    H, W = f.shape
    ix, fx = math.floor(dx), dx - math.floor(dx)
    iy, fy = math.floor(dy), dy - math.floor(dy)
    out = np.zeros_like(f)
    for oy, wy in ((iy, 1.0 - fy), (iy + 1, fy)):
        for ox, wx in ((ix, 1.0 - fx), (ix + 1, fx)):
            wgt = wy * wx
            if wgt == 0.0 or abs(oy) >= H or abs(ox) >= W:
                continue
            dst_r = slice(max(oy, 0), H + min(oy, 0))
            src_r = slice(max(-oy, 0), H + min(-oy, 0))
            dst_c = slice(max(ox, 0), W + min(ox, 0))
            src_c = slice(max(-ox, 0), W + min(-ox, 0))
            out[dst_r, dst_c] += wgt * f[src_r, src_c]
    return out


def _stamp(f, r, c, peak, sigma):
    H, W = f.shape
    ii = np.arange(H)[:, None]
    jj = np.arange(W)[None, :]
    f += peak * np.exp(-((ii - r) ** 2 + (jj - c) ** 2) / (2 * sigma * sigma))


def seasonal_factor(spec: RegionSpec, day_of_year):
    return max(0.0, 1.0 + spec.season_amplitude * math.sin(2 * math.pi * day_of_year / 365.0 + spec.season_phase))


def simulate_field(spec: RegionSpec, height, width, n_frames, rng, burn_in=BURN_IN):
    """Rain-rate frames ``(n_frames + 1, H, W)``; frame 0 is the lag frame."""
    wind = np.asarray(spec.wind_mean) + spec.wind_jitter * rng.standard_normal(2)
    rate = spec.cell_birth_rate * seasonal_factor(spec, rng.uniform(0, 365))
    bias = spec.frequency_bias(height, width).ravel()
    prob = bias / bias.sum()
    f = np.zeros((height, width))
    frames = []
    for t in range(burn_in + n_frames + 1):
        f = spec.decay * shift_field(f, wind[0], wind[1])
        for _ in range(rng.poisson(rate)):
            k = rng.choice(prob.size, p=prob)
            r, c = divmod(k, width)
            peak = rng.lognormal(math.log(spec.intensity_mean), spec.intensity_sigma)
            sigma = max(0.75, spec.radius_mean + spec.radius_std * rng.standard_normal())
            _stamp(f, r + rng.uniform(-0.5, 0.5), c + rng.uniform(-0.5, 0.5), peak, sigma)
        if t >= burn_in:
            frames.append(f.copy())
    return np.stack(frames), wind


def input_views(frames):
    """``(C=4, T, H, W)`` views of consecutive frames ``(T+1, H, W)``:
    rate, blurred rate, one-frame-lagged rate, gradient magnitude."""
    cur, lag = frames[1:], frames[:-1]
    blur = np.stack([gaussian_filter(fr, sigma=2.0, mode="nearest") for fr in cur])
    gy, gx = np.gradient(cur, axis=(1, 2))
    grad = np.sqrt(gx * gx + gy * gy)
    return np.stack([cur, blur, lag, grad])


def stream_seed(seed, region_id, sequence):
    return np.random.SeedSequence([int(seed), zlib.crc32(region_id.encode()), int(sequence)])


def generate_sequence(spec: RegionSpec, layout: GridLayout = GridLayout(), t_total=None, seed=0, sequence=0):
    """Return ``(input, label, truth)`` for one sequence.

    ``truth`` holds the rain-rate frames ``(t_total + 1, H, W)``, the first
    being the lag frame that precedes input frame 0.
    """
    t_total = layout.frames_in + layout.frames_out if t_total is None else t_total
    if t_total < layout.frames_in + layout.frames_out:
        raise DatasetError(f"t_total {t_total} < T_in + T_out")
    rng = np.random.Generator(np.random.Philox(stream_seed(seed, spec.region_id, sequence)))
    truth, _ = simulate_field(spec, layout.height, layout.width, t_total, rng)
    x = input_views(truth[:layout.frames_in + 1])
    fut = truth[layout.frames_in + 1:layout.frames_in + 1 + layout.frames_out]
    y = (layout.crop(fut) >= RAIN_THRESHOLD).astype(np.float64)[None]
    return x, y, truth


# ---------------------------------------------------------------- benchmark


def _unit(deg, speed=1.0):
    a = math.radians(deg)
    return (round(speed * math.cos(a), 6) + 0.0, round(-speed * math.sin(a), 6) + 0.0)  # no -0.0


def default_config():
    """Three train regions (E, SE, NE winds), one validation region and two
    held-out regions whose winds point away from every training wind."""
    def region(rid, split, year, angle, hotspots, phase=0.0):
        spec = RegionSpec(rid, wind_mean=_unit(angle), hotspots=hotspots, season_phase=phase)
        return {"split": split, "year": year, "spec": spec.to_dict()}

    return {
        "seed": 0,
        "layout": GridLayout().to_dict(),
        "sequences": {"train": 200, "val": 60, "test": 100},
        "regions": [
            region("R01", "train", 2019, 0.0, [(20, 26, 5, 1.5), (29, 28, 4, 1.0)]),
            region("R02", "train", 2019, 315.0, [(24, 18, 5, 1.5), (30, 30, 4, 1.2)]),
            region("R03", "train", 2019, 45.0, [(18, 26, 5, 1.5), (28, 22, 4, 1.0)]),
            region("R04", "val", 2019, 22.5, [(22, 22, 5, 1.5)]),
            region("R08", "test", 2021, 225.0, [(26, 26, 5, 1.5), (18, 30, 4, 1.0)], phase=math.pi / 2),
            region("R09", "test", 2021, 180.0, [(20, 28, 5, 1.5), (30, 20, 4, 1.0)], phase=math.pi / 2),
        ],
    }


@dataclass
class DatasetManifest:
    root: Path
    layout: GridLayout
    regions: list  # dicts: region_id, split, year, spec
    seed: int
    files: list  # dicts: region, split, seq, input, label (paths relative to root)

    def specs(self):
        return {r["region_id"]: RegionSpec(**r["spec"]) for r in self.regions}

    def region_ids(self, split=None):
        return [r["region_id"] for r in self.regions if split is None or r["split"] == split]

    def entries(self, split=None, region=None):
        for f in self.files:
            if (split is None or f["split"] == split) and (region is None or f["region"] == region):
                yield f["region"], f["seq"], self.root / f["input"], self.root / f["label"]

    def missing_files(self, split=None):
        out = []
        for _, _, xp, yp in self.entries(split):
            out += [str(p) for p in (xp, yp) if not p.is_file()]
        return out

    def load_split(self, split, region=None, inputs=True):
        """Stacked ``(X, Y, region_ids)`` for a split (``X`` is None if not requested)."""
        missing = self.missing_files(split)
        if missing:
            raise FileNotFoundError("missing dataset files: " + ", ".join(missing))
        xs, ys, regs = [], [], []
        for reg, _, xp, yp in self.entries(split, region):
            if inputs:
                xs.append(read_tensor(xp))
            ys.append(read_tensor(yp))
            regs.append(reg)
        X = np.stack(xs) if inputs and xs else None
        Y = np.stack(ys) if ys else np.zeros((0,) + self.layout.label_shape)
        return X, Y, np.array(regs)

    def to_json(self):
        doc = {"layout": self.layout.to_dict(), "seed": self.seed, "regions": self.regions, "files": self.files}
        return json.dumps(doc, indent=1, sort_keys=True) + "\n"

    def save(self):
        (self.root / "manifest.json").write_text(self.to_json())

    @classmethod
    def load(cls, path):
        p = Path(path)
        if p.is_dir():
            p = p / "manifest.json"
        if not p.is_file():
            raise FileNotFoundError(f"manifest not found: {p}")
        doc = json.loads(p.read_text())
        return cls(p.parent, GridLayout(**doc["layout"]), doc["regions"], doc["seed"], doc["files"])


def build_benchmark(config=None, root="data", force=False, seed=None):
    """Generate every sequence of ``config`` under ``root`` and write the manifest."""
    cfg = default_config() if config is None else config
    seed = cfg.get("seed", 0) if seed is None else seed
    layout = GridLayout(**cfg.get("layout", {}))
    regions = cfg["regions"]
    splits = [r["split"] for r in regions]
    if splits.count("train") < 3 or splits.count("test") < 2:
        raise DatasetError("benchmark needs at least 3 train and 2 test regions")
    train_ids = {r["spec"]["region_id"] for r in regions if r["split"] == "train"}
    test = [r for r in regions if r["split"] == "test"]
    if train_ids & {r["spec"]["region_id"] for r in test}:
        raise DatasetError("test regions must not appear in the training split")
    train_years = {r["year"] for r in regions if r["split"] == "train"}
    if train_years & {r["year"] for r in test}:
        raise DatasetError("test year tags must differ from training year tags")

    root = Path(root)
    if (root / "manifest.json").exists() and not force:
        raise FileExistsError(f"{root} already holds a dataset; pass force=True to overwrite")
    root.mkdir(parents=True, exist_ok=True)
    n_per_split = cfg.get("sequences", {})
    files, region_docs = [], []
    for r in regions:
        spec = RegionSpec(**r["spec"])
        split = r["split"]
        region_docs.append({"region_id": spec.region_id, "split": split, "year": r["year"], "spec": spec.to_dict()})
        d = root / spec.region_id / split
        d.mkdir(parents=True, exist_ok=True)
        for s in range(int(n_per_split.get(split, 10))):
            x, y, _ = generate_sequence(spec, layout, seed=seed, sequence=s)
            name = f"{s:04d}"
            write_tensor(x, d / f"{name}.input.nwt")
            write_tensor(y, d / f"{name}.label.nwt")
            files.append({"region": spec.region_id, "split": split, "seq": s,
                          "input": f"{spec.region_id}/{split}/{name}.input.nwt",
                          "label": f"{spec.region_id}/{split}/{name}.label.nwt"})
    manifest = DatasetManifest(root, layout, region_docs, seed, files)
    manifest.save()
    return manifest
