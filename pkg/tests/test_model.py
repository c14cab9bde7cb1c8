"""Generator, attention, losses, discriminator, checkpoints."""

import numpy as np
import pytest

from speculens import model as M
from speculens import tensor as T
from speculens.checkpoint import (
    load_checkpoint,
    load_model_checkpoint,
    save_checkpoint,
    save_model_checkpoint,
)
from speculens.errors import ConfigError, DimensionError, ParameterError

MICRO = M.ModelConfig(
    frame_size=24,
    enc_widths=(6, 8),
    channels=8,
    layers=1,
    heads=((3, 3), (2, 2)),
    disc_widths=(4, 6),
)


@pytest.fixture(autouse=True)
def float64_mode():
    with T.using_dtype(np.float64):
        yield


def conv1x1_oracle(x, w, b):
    return np.einsum("kchw,oc->kohw", x, w[:, :, 0, 0]) + b[None, :, None, None]


def attention_oracle(feats, valid_px, r1, r2, wq, bq, wk, bk, wv, bv):
    # Similarity, masked softmax, weighted sum: straight from the
    # definitions, one patch pair at a time.
    kf, c, hf, wf = feats.shape
    nh, nw = hf // r1, wf // r2
    q = conv1x1_oracle(feats, wq, bq)
    k = conv1x1_oracle(feats, wk, bk)
    v = conv1x1_oracle(feats, wv, bv)

    def patches(x):
        rows = []
        for t in range(kf):
            for i in range(nh):
                for j in range(nw):
                    block = x[t, :, i * r1 : (i + 1) * r1, j * r2 : (j + 1) * r2]
                    rows.append(block.transpose(1, 2, 0).reshape(-1))
        return np.array(rows)

    pq, pk, pv = patches(q), patches(k), patches(v)
    ok = []
    for t in range(kf):
        for i in range(nh):
            for j in range(nw):
                ok.append(
                    valid_px[t, i * r1 : (i + 1) * r1, j * r2 : (j + 1) * r2].max() > 0.5
                )
    ok = np.array(ok)
    total, d = pq.shape
    alpha = np.zeros((total, total))
    for qi in range(total):
        if not ok.any():
            continue
        s = np.array([pq[qi] @ pk[kj] for kj in range(total)]) / np.sqrt(d)
        e = np.exp(s[ok] - s[ok].max())
        alpha[qi, ok] = e / e.sum()
    o = alpha @ pv
    out = np.zeros_like(feats)
    r = 0
    for t in range(kf):
        for i in range(nh):
            for j in range(nw):
                out[t, :, i * r1 : (i + 1) * r1, j * r2 : (j + 1) * r2] = (
                    o[r].reshape(r1, r2, c).transpose(2, 0, 1)
                )
                r += 1
    return out, alpha


def random_head(rng, c):
    mk = lambda shape: rng.standard_normal(shape)
    return (
        mk((c, c, 1, 1)), mk((c,)),
        mk((c, c, 1, 1)), mk((c,)),
        mk((c, c, 1, 1)), mk((c,)),
    )


# -- attention ------------------------------------------------------------


def test_head_attention_matches_direct_formula():
    rng = np.random.default_rng(42)
    feats = rng.standard_normal((2, 3, 4, 4))
    valid = (rng.random((2, 4, 4)) > 0.3).astype(np.float64)
    weights = random_head(rng, 3)
    got = M.head_attention(
        T.Tensor(feats), valid, 2, 2, *(T.Tensor(w) for w in weights)
    ).numpy()
    want, _ = attention_oracle(feats, valid, 2, 2, *weights)
    assert np.max(np.abs(got - want)) < 1e-10


def test_attention_rows_sum_to_one_and_masked_keys_zero():
    rng = np.random.default_rng(43)
    feats = rng.standard_normal((2, 2, 4, 4))
    valid = np.ones((2, 4, 4))
    valid[1] = 0.0  # all patches of frame 2 invalid
    weights = random_head(rng, 2)
    _, alpha = M.head_attention(
        T.Tensor(feats), valid, 2, 2, *(T.Tensor(w) for w in weights),
        return_weights=True,
    )
    a = alpha.numpy()
    assert np.all(np.abs(a.sum(axis=1) - 1.0) < 1e-6)
    assert np.all(a[:, 4:] == 0.0)  # frame 2 contributes nothing


def test_attention_single_valid_key_gets_weight_one():
    rng = np.random.default_rng(44)
    feats = rng.standard_normal((1, 2, 4, 4))
    valid = np.zeros((1, 4, 4))
    valid[0, 0, 0] = 1.0  # only patch (0,0) valid
    weights = random_head(rng, 2)
    out, alpha = M.head_attention(
        T.Tensor(feats), valid, 2, 2, *(T.Tensor(w) for w in weights),
        return_weights=True,
    )
    a = alpha.numpy()
    assert np.all(np.abs(a[:, 0] - 1.0) < 1e-12)
    assert np.all(a[:, 1:] == 0.0)
    # Every output patch is the value projection of the one valid patch.
    v = conv1x1_oracle(feats, *weights[4:])
    ref = v[0, :, 0:2, 0:2]
    o = out.numpy()
    for i in (0, 2):
        for j in (0, 2):
            assert np.max(np.abs(o[0, :, i : i + 2, j : j + 2] - ref)) < 1e-10


def test_attention_identical_keys_split_evenly():
    rng = np.random.default_rng(45)
    half = rng.standard_normal((1, 2, 2, 2))
    feats = np.concatenate([half, half], axis=3)  # two identical 2x2 patches
    valid = np.ones((1, 2, 4))
    weights = random_head(rng, 2)
    _, alpha = M.head_attention(
        T.Tensor(feats), valid, 2, 2, *(T.Tensor(w) for w in weights),
        return_weights=True,
    )
    a = alpha.numpy()
    assert np.max(np.abs(a - 0.5)) < 1e-12


def test_attention_all_keys_invalid_gives_zero_output():
    rng = np.random.default_rng(46)
    feats = rng.standard_normal((1, 2, 4, 4))
    weights = random_head(rng, 2)
    out = M.head_attention(
        T.Tensor(feats), np.zeros((1, 4, 4)), 2, 2,
        *(T.Tensor(w) for w in weights),
    )
    assert np.all(out.numpy() == 0.0)


def test_attention_invariant_to_key_frame_order():
    rng = np.random.default_rng(47)
    feats = rng.standard_normal((3, 2, 4, 4))
    valid = (rng.random((3, 4, 4)) > 0.2).astype(np.float64)
    weights = [T.Tensor(w) for w in random_head(rng, 2)]
    out_a = M.head_attention(T.Tensor(feats), valid, 2, 2, *weights).numpy()
    perm = [0, 2, 1]
    out_b = M.head_attention(
        T.Tensor(feats[perm]), valid[perm], 2, 2, *weights
    ).numpy()
    assert np.max(np.abs(out_a[0] - out_b[0])) < 1e-10


def test_patch_validity_any_pixel():
    valid = np.zeros((1, 4, 4))
    valid[0, 1, 1] = 1.0
    ok = M.patch_validity(valid, 2, 2)
    assert ok.tolist() == [True, False, False, False]
    with pytest.raises(DimensionError):
        M.patch_validity(valid, 3, 2)


# -- transformer layer ----------------------------------------------------


def test_transformer_layer_matches_slice_oracle():
    rng = np.random.default_rng(48)
    gen = M.Generator(MICRO, rng=np.random.default_rng(0))
    feats = rng.standard_normal((2, 8, 6, 6))
    valid = (rng.random((2, 6, 6)) > 0.3).astype(np.float64)
    got = gen.transformer_layer(T.Tensor(feats), valid, 0).numpy()

    p = {k: v.numpy() for k, v in gen.params.items()}
    ch = 4
    slices = []
    for hi, (r1, r2) in enumerate(MICRO.heads):
        pre = f"l0.h{hi}"
        out, _ = attention_oracle(
            feats[:, hi * ch : (hi + 1) * ch], valid, r1, r2,
            p[f"{pre}.q.w"], p[f"{pre}.q.b"],
            p[f"{pre}.k.w"], p[f"{pre}.k.b"],
            p[f"{pre}.v.w"], p[f"{pre}.v.b"],
        )
        slices.append(out)
    mixed = conv1x1_oracle(np.concatenate(slices, axis=1), p["l0.mix.w"], p["l0.mix.b"])
    h = feats + mixed

    def conv3x3(x, w, b):
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        out = np.zeros((x.shape[0], w.shape[0]) + x.shape[2:])
        for i in range(3):
            for j in range(3):
                out += np.einsum(
                    "kchw,oc->kohw", xp[:, :, i : i + 6, j : j + 6], w[:, :, i, j]
                )
        return out + b[None, :, None, None]

    r = conv3x3(h, p["l0.res1.w"], p["l0.res1.b"])
    r = np.where(r > 0, r, 0.2 * r)
    want = h + conv3x3(r, p["l0.res2.w"], p["l0.res2.b"])
    assert np.max(np.abs(got - want)) < 1e-10


def test_transformer_layer_zero_residual_path_is_skip_plus_mix():
    rng = np.random.default_rng(49)
    gen = M.Generator(MICRO, rng=np.random.default_rng(0))
    for name in ("l0.res1.w", "l0.res1.b", "l0.res2.w", "l0.res2.b"):
        gen.params[name].data[...] = 0.0
    feats = rng.standard_normal((1, 8, 6, 6))
    valid = np.ones((1, 6, 6))
    out = gen.transformer_layer(T.Tensor(feats), valid, 0).numpy()

    p = {k: v.numpy() for k, v in gen.params.items()}
    slices = []
    for hi, (r1, r2) in enumerate(MICRO.heads):
        pre = f"l0.h{hi}"
        att, _ = attention_oracle(
            feats[:, hi * 4 : (hi + 1) * 4], valid, r1, r2,
            p[f"{pre}.q.w"], p[f"{pre}.q.b"],
            p[f"{pre}.k.w"], p[f"{pre}.k.b"],
            p[f"{pre}.v.w"], p[f"{pre}.v.b"],
        )
        slices.append(att)
    mix = conv1x1_oracle(np.concatenate(slices, axis=1), p["l0.mix.w"], p["l0.mix.b"])
    assert np.max(np.abs(out - (feats + mix))) < 1e-10


def test_head_count_must_divide_channels():
    with pytest.raises(ConfigError, match="divisible"):
        M.ModelConfig(frame_size=24, channels=9, heads=((3, 3), (2, 2)))


def test_head_patch_must_divide_feature_map():
    with pytest.raises(ConfigError, match="divide"):
        M.ModelConfig(frame_size=24, channels=8, heads=((4, 4),))


# -- generator forward ----------------------------------------------------


def test_encode_output_geometry():
    gen = M.Generator(MICRO)
    x = T.Tensor(np.zeros((3, 4, 24, 24)))
    feats = gen.encode(x)
    assert feats.shape == (3, 8, 6, 6)
    assert np.all(np.isfinite(feats.numpy()))
    full = M.ModelConfig()
    assert full.feature_size == 72


def test_encode_identical_frames_identical_features():
    gen = M.Generator(MICRO)
    rng = np.random.default_rng(50)
    frame = rng.random((1, 4, 24, 24))
    feats = gen.encode(T.Tensor(np.concatenate([frame, frame], axis=0))).numpy()
    assert np.array_equal(feats[0], feats[1])


def test_encode_rejects_wrong_geometry():
    gen = M.Generator(MICRO)
    with pytest.raises(DimensionError):
        gen.encode(T.Tensor(np.zeros((1, 3, 24, 24))))
    with pytest.raises(DimensionError):
        gen.encode(T.Tensor(np.zeros((1, 4, 32, 32))))


def test_forward_shape_range_and_finiteness():
    gen = M.Generator(MICRO)
    rng = np.random.default_rng(51)
    frames = rng.random((3, 3, 24, 24))
    masks = np.zeros((3, 1, 24, 24))  # nothing missing
    out = gen.forward(frames, masks).numpy()
    assert out.shape == (3, 3, 24, 24)
    assert np.all(np.isfinite(out))
    assert np.all((out >= 0.0) & (out <= 1.0))


def test_single_frame_mode_equals_multi_on_one_frame_clip():
    gen = M.Generator(MICRO)
    rng = np.random.default_rng(52)
    frames = rng.random((1, 3, 24, 24))
    masks = (rng.random((1, 1, 24, 24)) < 0.2).astype(np.float64)
    s = M.SamplingConfig(neighbor_radius=2, distant_stride=4)
    idx_a, out_a = gen.generator_forward(frames, masks, s, 0, single_frame_mode=True)
    idx_b, out_b = gen.generator_forward(frames, masks, s, 0, single_frame_mode=False)
    assert idx_a == idx_b == [0]
    assert np.array_equal(out_a.numpy(), out_b.numpy())


def test_window_indices_examples():
    s = M.SamplingConfig(neighbor_radius=2, distant_stride=4)
    assert M.window_indices(10, 4, s) == [0, 2, 3, 4, 5, 6, 8]
    # Off the left edge: neighbors clamp to 0.
    assert M.window_indices(10, 0, s) == [0, 1, 2, 4, 8]
    # Off the right edge.
    assert M.window_indices(10, 9, s) == [0, 4, 7, 8, 9]
    assert M.window_indices(10, 4, s, single_frame_mode=True) == [4]
    with pytest.raises(ParameterError):
        M.window_indices(10, 10, s)


def test_sampling_config_validation():
    with pytest.raises(ParameterError):
        M.SamplingConfig(neighbor_radius=-1)
    with pytest.raises(ParameterError):
        M.SamplingConfig(distant_stride=0)


def test_mask_channel_conditions_the_encoder():
    gen = M.Generator(MICRO)
    rng = np.random.default_rng(53)
    frames = rng.random((1, 3, 24, 24))
    m0 = np.zeros((1, 1, 24, 24))
    m1 = np.zeros((1, 1, 24, 24))
    m1[0, 0, :8, :8] = 1.0
    out0 = gen.forward(frames, m0).numpy()
    out1 = gen.forward(frames, m1).numpy()
    assert not np.array_equal(out0, out1)


# -- composite and losses -------------------------------------------------


def test_composite_extremes_and_oracle():
    rng = np.random.default_rng(54)
    x = rng.random((2, 3, 4, 4))
    y = rng.random((2, 3, 4, 4))
    m = (rng.random((2, 1, 4, 4)) < 0.5).astype(np.float64)
    assert np.array_equal(M.composite(x, np.zeros_like(m), y), x)
    assert np.array_equal(M.composite(x, np.ones_like(m), y), y)
    got = M.composite(x, m, y)
    for k in range(2):
        for c in range(3):
            for i in range(4):
                for j in range(4):
                    want = y[k, c, i, j] if m[k, 0, i, j] else x[k, c, i, j]
                    assert got[k, c, i, j] == want


def test_losses_zero_when_prediction_equals_target():
    rng = np.random.default_rng(55)
    y = rng.random((2, 3, 6, 6))
    m = (rng.random((2, 1, 6, 6)) < 0.4).astype(np.float64)
    pred = T.Tensor(y.copy())
    assert M.loss_hole(y, pred, m).item() == 0.0
    assert M.loss_valid(y, pred, m).item() == 0.0


def test_losses_constant_difference():
    rng = np.random.default_rng(56)
    y = rng.random((1, 3, 8, 8))
    pred = T.Tensor(y + 0.2)
    m = np.zeros((1, 1, 8, 8))
    m[0, 0, 2:5, 2:5] = 1.0
    assert abs(M.loss_hole(y, pred, m).item() - 0.2) < 1e-12
    assert abs(M.loss_valid(y, pred, m).item() - 0.2) < 1e-12


def test_losses_match_loop_oracle():
    rng = np.random.default_rng(57)
    y = rng.random((2, 3, 4, 4))
    yhat = rng.random((2, 3, 4, 4))
    m = (rng.random((2, 1, 4, 4)) < 0.5).astype(np.float64)
    got_h = M.loss_hole(y, T.Tensor(yhat), m).item()
    got_v = M.loss_valid(y, T.Tensor(yhat), m).item()
    num_h = num_v = 0.0
    for k in range(2):
        for c in range(3):
            for i in range(4):
                for j in range(4):
                    d = abs(y[k, c, i, j] - yhat[k, c, i, j])
                    if m[k, 0, i, j]:
                        num_h += d
                    else:
                        num_v += d
    den_h = 3 * m.sum()
    den_v = 3 * (1 - m).sum()
    assert abs(got_h - num_h / den_h) < 1e-12
    assert abs(got_v - num_v / den_v) < 1e-12


def test_loss_hole_empty_mask_defined_zero():
    y = np.zeros((1, 3, 4, 4))
    pred = T.Tensor(np.ones((1, 3, 4, 4)))
    assert M.loss_hole(y, pred, np.zeros((1, 1, 4, 4))).item() == 0.0
    assert M.loss_valid(y, pred, np.ones((1, 1, 4, 4))).item() == 0.0


def test_adversarial_closed_forms():
    zeros = T.Tensor(np.zeros((1, 1, 2, 3, 3)))
    assert M.loss_adv_generator(zeros).item() == 0.0
    assert M.loss_discriminator(zeros, zeros).item() == 2.0
    real = T.Tensor(np.full((1, 1, 2, 3, 3), 2.0))
    fake = T.Tensor(np.full((1, 1, 2, 3, 3), -2.0))
    assert M.loss_discriminator(real, fake).item() == 0.0


def test_adversarial_matches_direct_formula():
    rng = np.random.default_rng(58)
    dr = rng.standard_normal((1, 1, 2, 4, 4))
    df = rng.standard_normal((1, 1, 2, 4, 4))
    got = M.loss_discriminator(T.Tensor(dr), T.Tensor(df)).item()
    want = np.maximum(1.0 - dr, 0.0).mean() + np.maximum(1.0 + df, 0.0).mean()
    assert abs(got - want) < 1e-12
    assert abs(M.loss_adv_generator(T.Tensor(df)).item() - (-df.mean())) < 1e-12


def test_total_loss_weighting():
    w = M.LossWeights()
    assert (w.lambda_hole, w.lambda_valid, w.lambda_adv) == (1.0, 1.0, 0.01)
    got = M.total_loss((0.5, 0.2, 1.0), w)
    assert abs(got - 0.71) < 1e-12
    assert M.total_loss((0.0, 0.0, 0.0), w) == 0.0
    parts = tuple(T.Tensor(np.array(v)) for v in (0.5, 0.2, 1.0))
    assert abs(M.total_loss(parts, w).item() - 0.71) < 1e-12


# -- discriminator --------------------------------------------------------


def test_discriminator_score_map_shape_and_gradient_flow():
    disc = M.Discriminator(MICRO)
    rng = np.random.default_rng(59)
    frames = rng.random((2, 3, 24, 24))
    scores = disc.forward(frames)
    assert scores.shape == (1, 1, 2, 6, 6)
    assert np.all(np.isfinite(scores.numpy()))
    loss = M.loss_discriminator(scores, disc.forward(rng.random((2, 3, 24, 24))))
    loss.backward()
    assert disc.params["d0.w"].grad is not None
    assert np.any(disc.params["d0.w"].grad != 0.0)


def test_generator_gets_gradient_through_discriminator():
    gen = M.Generator(MICRO)
    disc = M.Discriminator(MICRO)
    rng = np.random.default_rng(60)
    frames = rng.random((2, 3, 24, 24))
    masks = (rng.random((2, 1, 24, 24)) < 0.3).astype(np.float64)
    yhat = gen.forward(frames, masks)
    loss = M.loss_adv_generator(disc.forward(yhat))
    loss.backward()
    g = gen.params["enc.c1.w"].grad
    assert g is not None and np.any(g != 0.0)


# -- checkpoints ----------------------------------------------------------


def test_checkpoint_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(61)
    tensors = {
        "a.w": rng.standard_normal((3, 4)).astype(np.float32),
        "b.w": rng.standard_normal((2, 2, 2)).astype(np.float64),
        "c.step": np.arange(5, dtype=np.float32),
    }
    path = tmp_path / "ck.bin"
    save_checkpoint(path, tensors, step=123, config={"x": 1, "n": "two"})
    back, step, config = load_checkpoint(path)
    assert step == 123
    assert config == {"x": 1, "n": "two"}
    assert set(back) == set(tensors)
    for name in tensors:
        assert back[name].dtype == tensors[name].dtype
        assert np.array_equal(back[name], tensors[name])
        assert back[name].tobytes() == tensors[name].tobytes()


def test_checkpoint_file_is_reproducible(tmp_path):
    rng = np.random.default_rng(62)
    tensors = {"w": rng.standard_normal((4, 4)).astype(np.float32)}
    p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
    save_checkpoint(p1, tensors, step=7, config={"k": 1})
    save_checkpoint(p2, tensors, step=7, config={"k": 1})
    assert p1.read_bytes() == p2.read_bytes()


def test_model_checkpoint_restores_both_networks(tmp_path):
    gen = M.Generator(MICRO, rng=np.random.default_rng(1))
    disc = M.Discriminator(MICRO, rng=np.random.default_rng(2))
    path = tmp_path / "model.bin"
    save_model_checkpoint(path, gen, disc, step=55, extra_config={"note": 1})
    gen2 = M.Generator(MICRO, rng=np.random.default_rng(9))
    disc2 = M.Discriminator(MICRO, rng=np.random.default_rng(10))
    step, config = load_model_checkpoint(path, gen2, disc2)
    assert step == 55
    assert config["model"]["channels"] == 8
    assert M.ModelConfig.from_dict(config["model"]) == MICRO
    for name in gen.params:
        assert np.array_equal(gen.params[name].data, gen2.params[name].data)
    for name in disc.params:
        assert np.array_equal(disc.params[name].data, disc2.params[name].data)


def test_checkpoint_rejects_garbage(tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"NOTACKPT" + b"\x00" * 32)
    with pytest.raises(ConfigError, match="magic"):
        load_checkpoint(bad)
    trunc = tmp_path / "trunc.bin"
    rng = np.random.default_rng(63)
    save_checkpoint(trunc, {"w": rng.standard_normal((8, 8))}, step=1)
    data = trunc.read_bytes()
    trunc.write_bytes(data[: len(data) - 16])
    with pytest.raises(ConfigError, match="truncated"):
        load_checkpoint(trunc)


def test_load_state_shape_mismatch_raises(tmp_path):
    gen = M.Generator(MICRO)
    state = gen.state()
    state["enc.c1.w"] = state["enc.c1.w"][:, :3]
    with pytest.raises(DimensionError, match="enc.c1.w"):
        gen.load_state(state)
    del state["enc.c1.w"]
    with pytest.raises(ConfigError, match="missing"):
        gen.load_state(state)
