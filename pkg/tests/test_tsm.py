import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stagegaze.numerics import ConfigError, Parameter, Tensor, finite_diff_check
from stagegaze.numerics.tensor import ARCCOS_EPS
from stagegaze.tsm import (GazePredictionLayer, LossConfig, TsmConfig, angular_error_angles_deg, angular_error_deg,
                           build_tsm, pitch_yaw_to_vec, stage_loss, tsm_lstm, tsm_transformer, vec_to_pitch_yaw)

# the Tensor loss path clamps cosines to [-1+eps, 1-eps], so "exact" zeros become this floor
LOSS_FLOOR = np.degrees(np.arccos(1 - ARCCOS_EPS))


def lstm(d_in=3, d_t=4, seed=0, **kw):
    return build_tsm(TsmConfig(variant="lstm", d_t=d_t, **kw), d_in, np.random.default_rng(seed))


def transformer(d_in=3, d_t=4, seed=0, **kw):
    kw = {"heads": 2, "layers": 2, "max_seq_len": 12, **kw}
    return build_tsm(TsmConfig(variant="transformer", d_t=d_t, **kw), d_in, np.random.default_rng(seed))


# causality ---------------------------------------------------------------------

@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000), variant=st.sampled_from(["lstm", "transformer"]), n=st.integers(2, 10))
def test_perturbing_later_inputs_leaves_earlier_outputs_bit_identical(seed, variant, n):
    rng = np.random.default_rng(seed)
    tsm = lstm(seed=seed) if variant == "lstm" else transformer(seed=seed)
    z = rng.normal(size=(2, n, 3))
    t = int(rng.integers(0, n - 1))
    base = tsm(Tensor(z)).data
    z2 = z.copy()
    z2[:, t + 1:] += rng.normal(size=z2[:, t + 1:].shape)
    assert np.array_equal(tsm(Tensor(z2)).data[:, :t + 1], base[:, :t + 1])


# LSTM oracles -------------------------------------------------------------------

def test_lstm_zero_input_zero_bias_gives_zero():
    tsm = lstm()
    assert np.array_equal(tsm(Tensor(np.zeros((5, 3)))).data, np.zeros((5, 4)))


def test_lstm_scalar_recurrence_oracle():
    # d=1, no input norm; input gate and output gate forced open, forget gate forced closed
    tsm = lstm(d_in=1, d_t=1, input_norm=False)
    cell = tsm.cells[0]
    wx, bx = 0.7, np.array([60.0, -60.0, 0.1, 60.0])
    cell.w_x.weight.data[:] = [[0.0, 0.0, wx, 0.0]]
    cell.w_x.bias.data[:] = bx
    cell.w_h.weight.data[:] = [[0.0, 0.0, -0.4, 0.0]]
    z = np.array([[0.5], [-1.0], [2.0]])
    e = tsm_lstm(Tensor(z), tsm).data[:, 0]
    sig = lambda v: 1 / (1 + np.exp(-v))
    h = c = 0.0
    ref = []
    for x in z[:, 0]:
        g = np.tanh(wx * x + 0.1 - 0.4 * h)
        c = sig(-60.0) * c + sig(60.0) * g
        h = sig(60.0) * np.tanh(c)
        ref.append(h)
    assert np.allclose(e, ref, atol=1e-15)
    # with the forget gate closed the cell is (to 1e-26) just the current candidate
    assert np.allclose(e, np.tanh(np.tanh(wx * z[:, 0] + 0.1 - 0.4 * np.concatenate([[0.0], ref[:-1]]))),
                       atol=1e-12)


# transformer oracles -------------------------------------------------------------

def test_transformer_single_token_oracle():
    tsm = transformer(input_norm=False, layers=1)
    z = np.random.default_rng(1).normal(size=(1, 3))
    e = tsm_transformer(Tensor(z), tsm).data

    def ln(x, m):
        return (x - x.mean(-1, keepdims=True)) / np.sqrt(x.var(-1, keepdims=True) + m.eps) * m.gamma.data + m.beta.data

    def lin(x, m):
        return x @ m.weight.data + m.bias.data

    def gelu(x):
        return 0.5 * x * (1 + np.tanh(np.sqrt(2 / np.pi) * (x + 0.044715 * x ** 3)))

    blk = tsm.blocks[0]
    x = lin(z, tsm.proj) + tsm.pos.data[:1]
    x = x + lin(lin(ln(x, blk.ln1), blk.attn.v_proj), blk.attn.out_proj)
    x = x + lin(gelu(lin(ln(x, blk.ln2), blk.mlp.fc1)), blk.mlp.fc2)
    ref = ln(x, tsm.ln_f)
    assert np.max(np.abs(e - ref)) < 1e-12


def test_transformer_position_embeddings_matter():
    tsm = transformer(input_norm=False)
    z = np.tile(np.random.default_rng(2).normal(size=(1, 3)), (4, 1))
    base = tsm(Tensor(z)).data
    tsm.pos.data[[0, 1]] = tsm.pos.data[[1, 0]]
    assert not np.array_equal(tsm(Tensor(z)).data[3], base[3])


def test_transformer_length_limit():
    with pytest.raises(ValueError, match="max_seq_len"):
        transformer(max_seq_len=4)(Tensor(np.zeros((5, 3))))


def test_transformer_config_divisibility():
    with pytest.raises(ConfigError):
        TsmConfig(variant="transformer", d_t=10, heads=3).validate()
    with pytest.raises(ConfigError):
        TsmConfig(variant="gru").validate()


def test_full_scale_transformer_shape():
    # six layers at width 128; six heads do not divide 128, so eight are used
    tsm = build_tsm(TsmConfig(variant="transformer", d_t=128, heads=8, layers=6, max_seq_len=30), 192,
                    np.random.default_rng(0))
    assert tsm(Tensor(np.zeros((30, 192)))).shape == (30, 128)


# prediction layer ---------------------------------------------------------------

def test_gpl_zero_weights_predict_origin():
    gpl = GazePredictionLayer(4, np.random.default_rng(0))
    for p in gpl.parameters():
        p.data[...] = 0.0
    gaze, pog = gpl(Tensor(np.random.default_rng(1).normal(size=(5, 4))))
    assert np.array_equal(gaze.data, np.zeros((5, 2))) and pog is None


def test_gpl_is_timestamp_shared():
    gpl = GazePredictionLayer(4, np.random.default_rng(0), with_pog=True)
    e = np.random.default_rng(1).normal(size=(6, 4))
    perm = np.random.default_rng(2).permutation(6)
    g1, p1 = gpl(Tensor(e))
    g2, p2 = gpl(Tensor(e[perm]))
    assert np.array_equal(g1.data[perm], g2.data) and np.array_equal(p1.data[perm], p2.data)


def test_gpl_gradient():
    rng = np.random.default_rng(3)
    gpl = GazePredictionLayer(4, rng, with_pog=True)
    e = Parameter(rng.normal(size=(3, 4)))
    w = Tensor(rng.normal(size=(3, 2)))
    rep = finite_diff_check(lambda: ((gpl(e)[0] + gpl(e)[1]) * w).sum(), gpl.parameters() + [e])
    assert rep.passed, rep.failures[:3]


# geometry ---------------------------------------------------------------------

def test_vector_convention_anchors():
    assert np.allclose(pitch_yaw_to_vec(np.array([0.0, 0.0])), [0, 0, -1])
    assert np.allclose(pitch_yaw_to_vec(np.array([np.pi / 2, 0.0])), [0, -1, 0])
    assert np.allclose(pitch_yaw_to_vec(np.array([0.0, np.pi / 2])), [-1, 0, 0])


def test_angular_error_examples():
    a, b = np.array([1.0, 0, 0]), np.array([0, 1.0, 0])
    assert angular_error_deg(a, a) == 0.0
    assert angular_error_deg(a, b) == 90.0
    got = angular_error_angles_deg(np.array([[0.0, 0.2]]), np.array([[0.0, 0.0]]))[0]
    assert abs(got - 11.459155902616464) < 1e-9
    assert abs(got - 0.2 * 180 / np.pi) < 1e-12
    with pytest.raises(ValueError):
        angular_error_deg(np.zeros(3), a)


unit = st.tuples(st.floats(-1.5, 1.5), st.floats(-3.0, 3.0))


@settings(max_examples=100, deadline=None)
@given(a=unit, b=unit, c=unit)
def test_angular_error_symmetry_and_triangle(a, b, c):
    va, vb, vc = (pitch_yaw_to_vec(np.array(x)) for x in (a, b, c))
    assert abs(np.linalg.norm(va) - 1) < 1e-9
    ab, ba = angular_error_deg(va, vb), angular_error_deg(vb, va)
    assert ab == ba
    assert 0 <= ab <= 180
    assert angular_error_deg(va, vc) <= ab + angular_error_deg(vb, vc) + 1e-9


@settings(max_examples=100, deadline=None)
@given(p=st.floats(-np.pi / 2 + 1e-3, np.pi / 2 - 1e-3), y=st.floats(-np.pi + 1e-6, np.pi - 1e-6))
def test_vector_round_trip(p, y):
    back = vec_to_pitch_yaw(pitch_yaw_to_vec(np.array([p, y])))
    assert np.max(np.abs(back - [p, y])) < 1e-9


# loss -----------------------------------------------------------------------

def test_loss_examples():
    g = np.random.default_rng(0).uniform(-0.5, 0.5, size=(2, 3, 2))
    perfect = stage_loss(Tensor(g), g, LossConfig()).item()
    assert 0 <= perfect <= LOSS_FLOOR + 1e-12
    # every frame exactly 90 degrees off: label straight ahead, prediction straight up
    pred = np.tile([np.pi / 2, 0.0], (2, 3, 1))
    assert abs(stage_loss(Tensor(pred), np.zeros((2, 3, 2)), LossConfig()).item() - 90.0) < 1e-9


def test_loss_lambda_composition():
    # angular term exactly 10 degrees on every frame, PoG residual norm exactly 5
    pred = np.tile([0.0, np.radians(10.0)], (1, 4, 1))
    true_pog = np.zeros((1, 4, 2))
    pred_pog = np.tile([3.0, 4.0], (1, 4, 1))
    loss = stage_loss(Tensor(pred), np.zeros((1, 4, 2)), LossConfig(lam=0.001), Tensor(pred_pog), true_pog).item()
    assert abs(loss - 10.005) < 1e-9


def test_loss_errors():
    with pytest.raises(ValueError):
        stage_loss(Tensor(np.zeros((3, 2))), np.zeros((3, 2)), LossConfig(lam=0.1))
    with pytest.raises(ConfigError):
        LossConfig(lam=float("nan")).validate()
    with pytest.raises(ValueError):
        stage_loss(Tensor(np.zeros((3, 2))), np.zeros((4, 2)), LossConfig())


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_loss_nonnegative_and_positive_off_target(seed):
    rng = np.random.default_rng(seed)
    g = rng.uniform(-0.5, 0.5, size=(2, 4, 2))
    off = g + rng.normal(scale=0.1, size=g.shape)
    assert stage_loss(Tensor(off), g, LossConfig()).item() > LOSS_FLOOR
    assert stage_loss(Tensor(g), g, LossConfig()).item() >= 0


@pytest.mark.parametrize("variant", ["lstm", "transformer"])
def test_tsm_gradients(variant):
    rng = np.random.default_rng(4)
    tsm = lstm(seed=4) if variant == "lstm" else transformer(seed=4)
    z = Parameter(rng.normal(size=(4, 3)))
    w = Tensor(rng.normal(size=(4, 4)))
    rep = finite_diff_check(lambda: (tsm(z) * w).sum(), tsm.parameters() + [z])
    assert rep.passed, rep.failures[:3]


def test_loss_gradient_away_from_clamp():
    rng = np.random.default_rng(5)
    g = rng.uniform(-0.5, 0.5, size=(2, 3, 2))
    pred = Parameter(g + rng.normal(scale=0.2, size=g.shape))
    rep = finite_diff_check(lambda: stage_loss(pred, g, LossConfig()), [pred])
    assert rep.passed, rep.failures[:3]


def test_default_depth_per_variant():
    assert TsmConfig(variant="lstm").depth == 1
    assert TsmConfig(variant="transformer").depth == 2
    assert len(build_tsm(TsmConfig(variant="transformer", d_t=4), 3, np.random.default_rng(0)).blocks) == 2
    assert TsmConfig(variant="transformer", layers=6).depth == 6
