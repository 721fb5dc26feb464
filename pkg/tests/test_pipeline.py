import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stagegaze.backbone import BackboneConfig
from stagegaze.numerics import ConfigError, finite_diff_check
from stagegaze.pipeline import ModelConfig, StageModel
from stagegaze.sam import SamConfig
from stagegaze.tsm import LossConfig, TsmConfig, stage_loss


def tiny(variant="hybrid", tsm="lstm", lam=0.0, seed=0) -> ModelConfig:
    return ModelConfig(
        backbone=BackboneConfig(image_size=(16, 16), channels_per_stage=[3, 4], out_channels=4, out_spatial=(2, 2)),
        sam=SamConfig(variant=variant, d=8, attn_heads=2, attn_head_dim=4, dual_hidden=4, groups=2),
        tsm=TsmConfig(variant=tsm, d_t=6, heads=2, layers=1, max_seq_len=12),
        loss=LossConfig(lam=lam), init_seed=seed)


def test_default_forward_shapes():
    m = StageModel(ModelConfig()).eval()
    frames = np.random.default_rng(0).uniform(size=(2, 4, 64, 64, 3))
    out = m(frames, keep_maps=True)
    assert out.gaze.shape == (2, 4, 2)
    assert out.attention_maps.shape == (2, 4, 2, 8, 8)
    assert m.predict(frames[0]).shape == (4, 2)
    assert m.frame_features(frames[0]).shape == (4, 2048)


def test_inconsistent_widths_fail_at_build_time():
    cfg = ModelConfig()
    cfg.sam.in_channels = 16
    with pytest.raises(ConfigError):
        StageModel(cfg)
    cfg = ModelConfig()
    cfg.tsm.d_in = 100
    with pytest.raises(ConfigError):
        StageModel(cfg)


def test_config_dict_round_trip():
    cfg = tiny("cross", "transformer", lam=0.001)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        ModelConfig.from_dict({"backbone": {"bogus": 1}})


def test_eval_mode_is_deterministic():
    m = StageModel(tiny())
    frames = np.random.default_rng(1).uniform(size=(5, 16, 16, 3))
    assert np.array_equal(m.predict(frames), m.predict(frames))
    assert m.training  # predict restores the mode


@settings(max_examples=6, deadline=None)
@given(seed=st.integers(0, 1000), variant=st.sampled_from(["dual", "cross", "hybrid", "hybrid_dagger",
                                                           "concat_residual"]),
       tsm=st.sampled_from(["lstm", "transformer"]))
def test_end_to_end_causality(seed, variant, tsm):
    m = StageModel(tiny(variant, tsm, seed=seed))
    rng = np.random.default_rng(seed)
    frames = rng.uniform(size=(6, 16, 16, 3))
    base = m.predict(frames)
    t = int(rng.integers(0, 5))
    f2 = frames.copy()
    f2[t + 1] = rng.uniform(size=(16, 16, 3))
    assert np.array_equal(m.predict(f2)[:t + 1], base[:t + 1])


def test_constant_video_with_zeroed_positions_predicts_constant():
    m = StageModel(tiny("hybrid", "transformer")).eval()
    m.tsm.zero_positions = True
    frame = np.random.default_rng(2).uniform(size=(16, 16, 3))
    frames = np.broadcast_to(frame, (5, 16, 16, 3)).copy()
    pred = m.predict(frames)
    assert np.allclose(pred, pred[0], atol=1e-12)


@pytest.mark.parametrize("tsm", ["lstm", "transformer"])
def test_full_model_gradient(tsm):
    m = StageModel(tiny("hybrid", tsm, lam=0.01, seed=3)).eval()
    rng = np.random.default_rng(4)
    frames = rng.uniform(size=(3, 16, 16, 3))
    gaze = rng.uniform(-0.4, 0.4, size=(3, 2))
    pog = rng.uniform(size=(3, 2))

    def f():
        out = m(frames)
        return stage_loss(out.gaze, gaze, m.cfg.loss, out.pog, pog)

    rep = finite_diff_check(f, m.parameters())
    assert rep.passed, rep.failures[:3]


def test_parameter_sharing_across_time():
    m = StageModel(tiny())
    before = [id(p) for p in m.parameters()]
    m.predict(np.random.default_rng(0).uniform(size=(4, 16, 16, 3)))
    m.predict(np.random.default_rng(0).uniform(size=(7, 16, 16, 3)))
    assert [id(p) for p in m.parameters()] == before
