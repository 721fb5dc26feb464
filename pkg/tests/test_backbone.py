import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stagegaze.backbone import Backbone, BackboneConfig, extract_features, flatten_features, unflatten_features
from stagegaze.numerics import ConfigError, ShapeError, Tensor, finite_diff_check


def test_default_shape_contract():
    bb = Backbone(BackboneConfig(), np.random.default_rng(0))
    frames = np.random.default_rng(1).uniform(size=(30, 64, 64, 3))
    out = extract_features(frames, bb)
    assert out.shape == (30, 8, 8, 32)
    assert np.all(np.isfinite(out.data))
    assert BackboneConfig().feature_dim == 2048


def test_identical_frames_identical_features():
    bb = Backbone(BackboneConfig(), np.random.default_rng(0))
    f = np.random.default_rng(2).uniform(size=(1, 64, 64, 3))
    out = bb(np.concatenate([f, f])).data
    assert np.array_equal(out[0], out[1])


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_frame_permutation_permutes_outputs(seed):
    rng = np.random.default_rng(seed)
    cfg = BackboneConfig(image_size=(16, 16), channels_per_stage=[4, 4], out_channels=4, out_spatial=(2, 2))
    bb = Backbone(cfg, rng)
    frames = rng.uniform(size=(5, 16, 16, 3))
    perm = rng.permutation(5)
    assert np.array_equal(bb(frames).data[perm], bb(frames[perm]).data)


def test_wrong_image_size_is_shape_error():
    bb = Backbone(BackboneConfig(), np.random.default_rng(0))
    with pytest.raises(ShapeError):
        bb(np.zeros((2, 32, 32, 3)))


def test_ladder_must_reach_output_grid():
    with pytest.raises(ConfigError):
        BackboneConfig(image_size=(64, 64), out_spatial=(4, 4)).validate()
    with pytest.raises(ConfigError):
        BackboneConfig(image_size=(60, 60), out_spatial=(8, 8)).validate()


def test_flatten_round_trip():
    v = np.arange(2048.0)
    x = unflatten_features(v, (8, 8), 32)
    assert x.shape == (8, 8, 32)
    assert np.array_equal(flatten_features(x), v)
    assert flatten_features(np.zeros((8, 8, 256))).shape == (16384,)
    assert x[0, 0, 1] == 1.0 and x[0, 1, 0] == 32.0


def test_backbone_gradient():
    rng = np.random.default_rng(4)
    cfg = BackboneConfig(image_size=(16, 16), channels_per_stage=[3, 4], out_channels=3, out_spatial=(2, 2))
    bb = Backbone(cfg, rng)
    frames = rng.uniform(size=(2, 16, 16, 3))
    readout = Tensor(rng.normal(size=(2, 2, 2, 3)))
    rep = finite_diff_check(lambda: (bb(frames) * readout).sum(), bb.parameters())
    assert rep.passed, rep.failures[:3]


def test_kernel_must_be_odd():
    with pytest.raises(ConfigError):
        BackboneConfig(kernel=4).validate()
    assert BackboneConfig().kernel == 5
