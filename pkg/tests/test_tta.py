import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robustcast.forecaster import init_params, predict_logits
from robustcast.geometry import ALL_TRANSFORMS, IDENTITY, PAPER_POLICY, ROT90, VFLIP, apply, inverse
from robustcast.tensor_core import GridLayout, sigmoid
from robustcast.tta import PRESETS, EnsembleConfig, EnsembleConfigError, ensemble_predict, equivariance_gap

LAY = GridLayout(channels=2, frames_in=2, frames_out=3, height=12, width=12, label_height=4, label_width=4)


def pixelwise(x):
    """Exactly equivariant model: logit = first input plane on the centre window."""
    x = np.asarray(x)
    c = x[..., :1, :1, 4:8, 4:8]
    return np.repeat(c, 3, axis=-3)


def test_identity_member_is_bitwise_single_pass(rng):
    f = predict_logits(init_params(LAY, 4, seed=0))
    x = rng.normal(size=(3,) + LAY.input_shape)
    assert np.array_equal(ensemble_predict(f, x, EnsembleConfig((IDENTITY,))), sigmoid(f(x)))
    assert np.array_equal(ensemble_predict(f, x, "identity"), sigmoid(f(x)))


@pytest.mark.parametrize("preset", sorted(PRESETS))
def test_equivariant_model_collapses(rng, preset):
    x = rng.normal(size=(2,) + LAY.input_shape)
    out = ensemble_predict(pixelwise, x, preset)
    assert np.max(np.abs(out - sigmoid(pixelwise(x)))) <= 1e-12


def test_equivariant_model_collapses_any_member_set(rng):
    x = rng.normal(size=(1,) + LAY.input_shape)
    single = sigmoid(pixelwise(x))
    for k in range(1, 9):
        for members in itertools.islice(itertools.combinations(ALL_TRANSFORMS, k), 6):
            out = ensemble_predict(pixelwise, x, members)
            assert np.max(np.abs(out - single)) <= 1e-12


def test_two_member_hand_evaluation():
    c, d = 1.3, -0.4

    def broken(x):
        # constant c on the raw input, d on the flipped one
        flipped = x[..., -1, 0] == 1.0
        val = np.where(flipped.any(axis=(-1, -2)), d, c)
        return np.broadcast_to(val[:, None, None, None, None], (x.shape[0], 1, 3, 4, 4)).copy()

    x = np.zeros((1,) + LAY.input_shape)
    x[..., 0, 0] = 1.0
    out = ensemble_predict(broken, x, (IDENTITY, VFLIP))
    expect = (sigmoid(c) + sigmoid(d)) / 2
    assert np.all(out == expect)


def test_convex_combination_and_permutation(rng):
    f = predict_logits(init_params(LAY, 4, seed=1))
    x = rng.normal(size=(2,) + LAY.input_shape)
    members = (IDENTITY,) + PAPER_POLICY
    preds = np.stack([ensemble_predict(f, x, (g,)) for g in members])
    out = ensemble_predict(f, x, members)
    assert np.all(out >= preds.min(axis=0) - 1e-15) and np.all(out <= preds.max(axis=0) + 1e-15)
    for perm in itertools.islice(itertools.permutations(members), 0, 720, 97):
        assert np.array_equal(ensemble_predict(f, x, perm), out)


def test_single_member_matches_definition(rng):
    f = predict_logits(init_params(LAY, 4, seed=2))
    x = rng.normal(size=(1,) + LAY.input_shape)
    for g in ALL_TRANSFORMS:
        expect = apply(inverse(g), sigmoid(f(apply(g, x))))
        assert np.array_equal(ensemble_predict(f, x, (g,)), expect)


def test_equivariance_gap(rng):
    f = predict_logits(init_params(LAY, 4, seed=3))
    x = rng.normal(size=(1,) + LAY.input_shape)
    assert equivariance_gap(f, x, IDENTITY) == 0.0
    for g in ALL_TRANSFORMS:
        assert equivariance_gap(pixelwise, x, g) <= 1e-12
    assert equivariance_gap(f, x, ROT90) > 0


@settings(max_examples=20, deadline=None)
@given(st.lists(st.sampled_from(ALL_TRANSFORMS), min_size=1, max_size=8, unique=True))
def test_output_in_unit_interval(members):
    x = np.random.default_rng(len(members)).normal(size=(1,) + LAY.input_shape) * 30
    out = ensemble_predict(pixelwise, x, members)
    assert np.all((out >= 0) & (out <= 1))


def test_config_errors():
    with pytest.raises(EnsembleConfigError):
        EnsembleConfig(())
    with pytest.raises(EnsembleConfigError):
        EnsembleConfig((VFLIP, VFLIP))
    with pytest.raises(EnsembleConfigError):
        EnsembleConfig.preset("everything")
    with pytest.raises(EnsembleConfigError):
        EnsembleConfig((IDENTITY,), aggregate="median")
    assert EnsembleConfig(("id", "vflip")).members == PRESETS["paper_main"]
    assert len(EnsembleConfig().members) == 6
