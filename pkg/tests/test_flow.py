import math
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

from robustcast.flow import (
    BIN_CENTERS,
    DirectionHistogram,
    FlowField,
    admissible,
    angular_distance,
    audit_policy,
    audit_sequences,
    block_matching_flow,
    direction_histogram,
    flow_to_svg,
    mean_direction,
)
from robustcast.geometry import (
    ALL_TRANSFORMS,
    IDENTITY,
    ROT90,
    ROT180,
    ROT180_VFLIP,
    ROT270,
    apply,
    compose,
    inverse,
    transform_vector,
)
from robustcast.synthdata import RegionSpec, generate_sequence
from robustcast.tensor_core import GridLayout, InvalidShapeError


def textured(rng, n=32):
    return gaussian_filter(rng.normal(size=(n, n)), 1.5)


def shift_replicate(a, dx, dy):
    H, W = a.shape
    ii = np.clip(np.arange(H) - dy, 0, H - 1)
    jj = np.clip(np.arange(W) - dx, 0, W - 1)
    return a[np.ix_(ii, jj)]


def hist_at(*angles):
    mass = np.zeros(16)
    for a in angles:
        mass[int(round(a / 22.5)) % 16] = 1.0
    return DirectionHistogram(mass / mass.sum())


def test_zero_motion(rng):
    a = textured(rng)
    f = block_matching_flow(a, a)
    assert f.valid.all()
    assert not f.u.any() and not f.v.any()


def test_constructed_translation(rng):
    a = textured(rng)
    b = shift_replicate(a, 2, 1)
    f = block_matching_flow(a, b)
    inner = (slice(8, 24), slice(8, 24))
    assert np.all(f.u[inner] == 2) and np.all(f.v[inner] == 1)
    assert np.all(np.abs(f.u) <= 4) and np.all(np.abs(f.v) <= 4)


def test_constant_frames_have_no_texture():
    a = np.full((16, 16), 0.3)
    f = block_matching_flow(a, a)
    assert not f.valid.any()
    assert not direction_histogram(f).mass.any()


def test_shape_mismatch():
    with pytest.raises(InvalidShapeError):
        block_matching_flow(np.zeros((8, 8)), np.zeros((8, 9)))


@pytest.mark.parametrize("g", ALL_TRANSFORMS, ids=lambda g: g.name)
def test_flow_equivariance(rng, g):
    a = textured(rng)
    b = shift_replicate(a, 2, -1)
    f = block_matching_flow(a, b)
    fg = block_matching_flow(apply(g, a), apply(g, b))
    # flow of transformed frames, pulled back to original pixels
    u_back = apply(inverse(g), fg.u)
    v_back = apply(inverse(g), fg.v)
    expect = g.matrix @ np.stack([f.u.ravel(), f.v.ravel()])
    assert np.array_equal(u_back.ravel(), expect[0])
    assert np.array_equal(v_back.ravel(), expect[1])


def test_histogram_examples():
    ones = np.ones((4, 4))
    east = direction_histogram(FlowField(ones, 0 * ones, ones))
    assert east.mass[0] == 1.0
    south = direction_histogram(FlowField(0 * ones, ones, ones))
    assert BIN_CENTERS[np.argmax(south.mass)] == 270.0 and south.mass.max() == 1.0
    empty = direction_histogram(FlowField(ones, ones, 0 * ones))
    assert not empty.mass.any()


def test_histogram_normalized(rng):
    f = FlowField(rng.integers(-3, 4, (12, 12)).astype(float), rng.integers(-3, 4, (12, 12)).astype(float),
                  (rng.random((12, 12)) < 0.7).astype(float))
    h = direction_histogram(f)
    assert abs(h.mass.sum() - 1.0) <= 1e-12
    assert np.all(h.mass >= 0)


def test_admissible_examples():
    east = hist_at(0)
    assert not admissible(ROT180, east)
    assert admissible(IDENTITY, east)
    assert admissible(ROT180_VFLIP, hist_at(0, 270))
    assert admissible(ROT90, DirectionHistogram(np.zeros(16)))


def test_single_direction_quarter_turn_rule():
    for k, d in enumerate(BIN_CENTERS):
        h = hist_at(d)
        for g in ALL_TRANSFORMS:
            v = transform_vector(g, (math.cos(math.radians(d)), -math.sin(math.radians(d))))
            mapped = math.degrees(math.atan2(-v[1], v[0])) % 360
            diff = min(abs(mapped - d), 360 - abs(mapped - d))
            assert admissible(g, h) == (diff <= 90 + 1e-9), (d, g)


def test_admissible_invariant_under_histogram_rotation(rng):
    # rotating the histogram by a quarter turn conjugates the verdict of every rotation
    for _ in range(20):
        mass = rng.random(16) * (rng.random(16) < 0.3)
        if not mass.any():
            continue
        h = DirectionHistogram(mass / mass.sum())
        hr = DirectionHistogram(np.roll(h.mass, 4))
        for g in (IDENTITY, ROT90, ROT180, ROT270):
            assert admissible(g, h) == admissible(compose(ROT90, compose(g, inverse(ROT90))), hr)
        assert admissible(IDENTITY, h)


def eastward_inputs(n, seed=0):
    spec = RegionSpec("E", wind_mean=(1.0, 0.0), wind_jitter=0.0, cell_birth_rate=0.6)
    return [generate_sequence(spec, GridLayout(), seed=seed, sequence=s)[0] for s in range(n)]


def isotropic_inputs(n):
    out = []
    for s in range(n):
        a = 2 * math.pi * s / n
        spec = RegionSpec("ISO", wind_mean=(math.cos(a), -math.sin(a)), wind_jitter=0.0, cell_birth_rate=0.6)
        out.append(generate_sequence(spec, GridLayout(), seed=3, sequence=s)[0])
    return out


def test_audit_eastward_region():
    rep = audit_sequences({"east": eastward_inputs(4)})
    assert rep.verdict("east", IDENTITY)
    assert not rep.verdict("east", ROT180)
    assert angular_distance(mean_direction(rep.histograms["east"]), 0.0) <= 15


def test_audit_isotropic_region():
    rep = audit_sequences({"iso": isotropic_inputs(16)})
    assert all(rep.verdict("iso", g) for g in ALL_TRANSFORMS)


def test_audit_empty_dataset(tmp_path):
    rep = audit_sequences({})
    assert rep.warnings
    assert all(ok for *_, ok in rep.rows) and len(rep.rows) == 8
    rep.to_csv(tmp_path / "a.csv")
    text = (tmp_path / "a.csv").read_text()
    assert text.startswith("region,transform,dominant_bins,verdict")
    assert "# warning:" in text


def test_audit_policy_on_manifest(small_bench, tmp_path):
    rep = audit_policy(small_bench, split="train")
    assert set(rep.histograms) == {"R01", "R02", "R03"}
    assert all(rep.verdict(r, IDENTITY) for r in rep.histograms)
    rep.to_csv(tmp_path / "audit.csv")
    rows = (tmp_path / "audit.csv").read_text().splitlines()
    assert len(rows) == 1 + 3 * 8


def test_audit_policy_missing_file(small_bench, tmp_path):
    import dataclasses
    broken = dataclasses.replace(small_bench, files=small_bench.files + [
        {"region": "R01", "split": "train", "seq": 999, "input": "nope.input.nwt", "label": "nope.label.nwt"}])
    with pytest.raises(FileNotFoundError, match="nope.input.nwt"):
        audit_policy(broken)


def test_svg_arrows_share_one_angle():
    ones = np.ones((24, 24))
    svg = flow_to_svg(FlowField(2 * ones, 0 * ones, ones))
    root = ET.fromstring(svg)
    arrows = [e for e in root.iter() if e.get("class") == "arrow"]
    assert arrows
    angles = {round(math.atan2(float(e.get("y2")) - float(e.get("y1")),
                               float(e.get("x2")) - float(e.get("x1"))), 9) for e in arrows}
    assert angles == {0.0}
