import dataclasses

import numpy as np
import pytest

from hava import autodiff as ad
from hava import pose_model as pm
from hava.anim_model import ConfigError
from hava.data import PoseTrack


# kernel 1 keeps the conv chain valid at tiny patch lengths
TINY = dict(
    in_channels=4, in_len=5, conv_channels=(3, 3, 3, 3, 3, 3, 2),
    conv_kernel=1, lstm_hidden=6,
)


def tiny_model(seed=0, **over):
    cfg = pm.PoseConfig(**{**TINY, **over})
    return pm.PoseModel(cfg, seed=seed)


def rand_patches(model, t, seed=0):
    cfg = model.cfg
    rng = np.random.default_rng(seed)
    return rng.normal(size=(t, cfg.in_channels, cfg.in_len))


def zero_params(model):
    for _, p in model.params.items():
        p.data[:] = 0.0


# ----------------------------------------------------------------- config


def test_default_config_valid():
    cfg = pm.PoseConfig().validate()
    # 16 columns through seven kernel-3 stride-1 convs leave 2
    assert cfg.encoding_dim() == 64 * 2


@pytest.mark.parametrize("bad,msg", [
    (dict(in_channels=0), "positive"),
    (dict(conv_channels=(8, 8)), "7 conv channels"),
    (dict(conv_strides=(1, 1)), "7 conv strides"),
    (dict(conv_kernel=0), "conv_kernel"),
    (dict(lstm_hidden=0), "lstm_hidden"),
    (dict(chunk_len=0), "chunk_len"),
    (dict(leaky_slope=1.0), "leaky_slope"),
])
def test_config_validation_errors(bad, msg):
    cfg = dataclasses.replace(pm.PoseConfig(), **bad)
    with pytest.raises(ConfigError, match=msg):
        cfg.validate()


def test_patch_too_short_for_conv_chain():
    cfg = dataclasses.replace(pm.PoseConfig(), in_len=14)
    with pytest.raises(ConfigError, match="pose encoder"):
        cfg.validate()


def test_forget_gate_bias_starts_open():
    model = tiny_model()
    assert np.all(model.params["psm.lstm0.b_f"].data == 1.0)
    assert np.all(model.params["psm.lstm1.b_f"].data == 1.0)
    assert np.all(model.params["psm.lstm0.b_i"].data == 0.0)


# ---------------------------------------------------------------- encoder


def test_encode_shape():
    model = tiny_model()
    out = model.encode(rand_patches(model, 3))
    assert out.shape == (3, model.cfg.encoding_dim())


def test_encode_rejects_bad_shape():
    model = tiny_model()
    with pytest.raises(ad.ShapeError, match="expected patches"):
        model.encode(np.zeros((2, 3, 5)))


def test_zero_params_zero_encoding():
    model = tiny_model()
    zero_params(model)
    out = model.encode(rand_patches(model, 2))
    assert np.all(out.data == 0.0)


def test_first_conv_preactivation_is_linear_in_input():
    # before the first activation the encoder is affine, so adding a
    # constant c to every input sample shifts each output channel by
    # c times the summed kernel weights of that channel
    model = tiny_model(seed=5, conv_kernel=3, in_len=15)
    w = model.params["psm.conv0.w"]
    b = model.params["psm.conv0.b"]
    x = rand_patches(model, 2, seed=7)
    c = 0.73
    base = ad.conv1d(ad.Value(x), w, b).data
    shifted = ad.conv1d(ad.Value(x + c), w, b).data
    expect = c * w.data.sum(axis=(1, 2))
    assert np.allclose(shifted - base, expect[None, :, None], atol=1e-10)


# -------------------------------------------------------------- recurrence


def test_zero_params_zero_track():
    model = tiny_model()
    zero_params(model)
    track = pm.predict_pose_track(model, rand_patches(model, 6))
    assert isinstance(track, PoseTrack)
    assert np.all(track.vectors == 0.0)
    assert track.vectors.shape == (6, 3)


def test_track_anchored_to_first_frame():
    model = tiny_model(seed=3)
    track = pm.predict_pose_track(model, rand_patches(model, 5, seed=9))
    assert np.array_equal(track.vectors[0], np.zeros(3))


def test_single_frame_track_is_zero():
    model = tiny_model(seed=4)
    track = pm.predict_pose_track(model, rand_patches(model, 1, seed=11))
    assert track.vectors.shape == (1, 3)
    assert np.all(track.vectors == 0.0)


def test_empty_clip():
    model = tiny_model()
    track = pm.predict_pose_track(model, np.zeros((0, 4, 5)))
    assert track.vectors.shape == (0, 3)


def test_raw_track_threads_state():
    model = tiny_model(seed=6)
    enc = model.encode(rand_patches(model, 4, seed=13))
    r, state = model.raw_track(enc)
    assert r.shape == (4, 3)
    h1, c1, h2, c2 = state
    assert h1.shape == (1, model.cfg.lstm_hidden)
    # constant input still moves the state, so repeated frames differ
    const = np.tile(rand_patches(model, 1, seed=15), (3, 1, 1))
    rows = pm.predict_pose_track(model, const).vectors
    assert not np.allclose(rows[1], rows[2])


def test_chunked_recurrence_matches_unchunked():
    model = tiny_model(seed=8)
    patches = rand_patches(model, 9, seed=17)
    enc = model.encode(patches)
    full, _ = model.raw_track(enc)

    state = None
    parts = []
    for start in range(0, 9, 4):
        chunk = ad.take_rows(enc, start, min(start + 4, 9))
        r, state = model.raw_track(chunk, state)
        # detach the carried state exactly as training does
        state = tuple(ad.Value(s.data.copy()) for s in state)
        parts.append(r.data)
    assert np.allclose(np.concatenate(parts, axis=0), full.data,
                       rtol=0, atol=1e-12)


def test_same_seed_deterministic():
    p = rand_patches(tiny_model(), 5, seed=19)
    a = pm.predict_pose_track(tiny_model(seed=21), p)
    b = pm.predict_pose_track(tiny_model(seed=21), p)
    assert np.array_equal(a.vectors, b.vectors)


def test_pose_gradients():
    model = tiny_model(seed=10)
    patches = rand_patches(model, 3, seed=23)

    def loss():
        enc = model.encode(patches)
        r, _ = model.raw_track(enc)
        return ad.vsum(ad.mul(r, r))

    err = ad.finite_diff_check(loss, model.params, sample=4)
    assert err < 1e-6


# ------------------------------------------------------------- magnitudes


def test_pose_magnitude_track_values():
    track = PoseTrack(np.array([[0.0, 0.0, 0.0], [0.3, 0.4, 0.0]]))
    mags = pm.pose_magnitude_track(track)
    assert np.allclose(mags, [0.0, 0.5], atol=1e-15)


def test_pose_magnitude_accepts_raw_array():
    mags = pm.pose_magnitude_track(np.array([[1.0, 0.0, 0.0]]))
    assert mags.shape == (1,)
    assert mags[0] == 1.0
