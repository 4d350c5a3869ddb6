"""Dense block, spatial attention and temporal attention."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stfa import tensor as T
from stfa.errors import ShapeError
from stfa.spatial import (apply_spatial_attention, as_maps, init_spatial_attention,
                          spatial_attention_maps)
from stfa.temporal import (TemporalConfig, apply_temporal_attention, embed_patches, encode,
                           init_temporal, patchify, pool_to_grid, template_attention,
                           temporal_path, unpatchify)
from stfa.tensor import Tensor, grad_check
from stfa.texture import DenseBlockConfig, dense_block_forward, init_dense_block

SEEDS = range(5)


def _trainable(params):
    names = sorted(params)
    return names, [params[k] for k in names]


# --- dense block -----------------------------------------------------------------

def test_empty_dense_block_is_identity(rng):
    cfg = DenseBlockConfig(layers=0, growth=4, in_channels=3)
    x = Tensor(rng.random((3, 5, 5)))
    out = dense_block_forward(x, cfg, {})
    np.testing.assert_array_equal(out.data, x.data)


@pytest.mark.parametrize("layers,growth,c_in", [(2, 3, 4), (3, 8, 3), (1, 1, 1), (4, 2, 5)])
def test_dense_block_channel_arithmetic(layers, growth, c_in, rng):
    cfg = DenseBlockConfig(layers, growth, c_in)
    x = Tensor(rng.random((c_in, 6, 7)))
    out = dense_block_forward(x, cfg, init_dense_block(cfg, rng))
    assert out.shape == (c_in + layers * growth, 6, 7) == (cfg.out_channels, 6, 7)
    # input channels come first, untouched
    np.testing.assert_array_equal(out.data[:c_in], x.data)


def test_dense_block_rejects_channel_mismatch(rng):
    cfg = DenseBlockConfig(2, 3, 4)
    params = init_dense_block(cfg, rng)
    params["dense/layer1/weight"] = Tensor(np.zeros((3, 5, 3, 3)))
    with pytest.raises(ShapeError, match="layer1"):
        dense_block_forward(Tensor(rng.random((4, 5, 5))), cfg, params)


@pytest.mark.parametrize("seed", SEEDS)
def test_dense_block_gradients(seed):
    rng = np.random.default_rng(seed)
    cfg = DenseBlockConfig(2, 3, 2)
    names, tensors = _trainable(init_dense_block(cfg, rng))
    x = Tensor(rng.standard_normal((2, 5, 5)))

    def fn(x, *ps):
        return dense_block_forward(x, cfg, dict(zip(names, ps)))

    report = grad_check(fn, [x, *tensors], name="dense_block", seed=seed)
    assert report.passed, report


# --- spatial attention ---------------------------------------------------------------

def test_zero_features_give_zero_maps(rng):
    params = init_spatial_attention(6, 4, rng)
    maps = spatial_attention_maps(Tensor(np.zeros((6, 5, 5))), params, 4)
    assert maps.shape == (4, 5, 5) and not maps.data.any()


def test_identity_kernel_map_is_relu(rng):
    feats = rng.standard_normal((1, 4, 4))
    params = {"spatial/weight": Tensor(np.ones((1, 1, 1, 1))), "spatial/bias": Tensor(np.zeros(1))}
    maps = spatial_attention_maps(Tensor(feats), params, 1)
    np.testing.assert_array_equal(maps.data[0], np.maximum(feats[0], 0.0))


def test_map_count_checked(rng):
    with pytest.raises(ValueError):
        spatial_attention_maps(Tensor(np.zeros((2, 3, 3))), init_spatial_attention(2, 1, rng), 0)


def test_maps_non_negative_over_100_seeds():
    for seed in range(100):
        r = np.random.default_rng(seed)
        params = {"spatial/weight": Tensor(r.standard_normal((4, 5, 1, 1))),
                  "spatial/bias": Tensor(r.standard_normal(4))}
        maps = spatial_attention_maps(Tensor(r.standard_normal((5, 6, 6))), params, 4)
        assert np.all(maps.data >= 0)
        assert all(np.all(m.weights >= 0) for m in as_maps(maps))


def test_uniform_unit_map_is_identity(rng):
    x = Tensor(rng.standard_normal((3, 5, 5)))
    out = apply_spatial_attention(x, Tensor(np.ones((4, 5, 5))))
    assert out.data.tobytes() == x.data.tobytes()


def test_zero_map_zeroes_output(rng):
    out = apply_spatial_attention(Tensor(rng.standard_normal((3, 5, 5))), Tensor(np.zeros((2, 5, 5))))
    assert not out.data.any()


def test_patch_map_concentrates_energy(rng):
    m = np.zeros((1, 8, 8))
    m[0, 2:5, 3:6] = 1.0
    out = apply_spatial_attention(Tensor(rng.standard_normal((3, 8, 8))), Tensor(m)).data
    outside = np.ones((8, 8), bool)
    outside[2:5, 3:6] = False
    assert np.sum(np.abs(out[:, outside])) == 0.0
    assert np.sum(np.abs(out[:, ~outside])) > 0.0


def test_spatial_extent_mismatch(rng):
    with pytest.raises(ShapeError):
        apply_spatial_attention(Tensor(np.zeros((3, 5, 5))), Tensor(np.ones((1, 4, 5))))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-100, 100))
def test_spatial_guidance_is_linear(seed, a):
    r = np.random.default_rng(seed)
    x = r.standard_normal((3, 4, 4))
    maps = Tensor(np.abs(r.standard_normal((2, 4, 4))))
    lhs = apply_spatial_attention(Tensor(a * x), maps).data
    rhs = a * apply_spatial_attention(Tensor(x), maps).data
    np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-12 * max(1.0, abs(a)))


@pytest.mark.parametrize("seed", SEEDS)
def test_spatial_attention_gradients(seed):
    rng = np.random.default_rng(seed)
    params = init_spatial_attention(3, 2, rng)
    params["spatial/bias"] = Tensor(rng.standard_normal(2))
    names, tensors = _trainable(params)

    def fn(x, *ps):
        p = dict(zip(names, ps))
        return apply_spatial_attention(x, spatial_attention_maps(x, p, 2))

    report = grad_check(fn, [Tensor(rng.standard_normal((3, 4, 4))), *tensors], seed=seed)
    assert report.passed, report


# --- temporal attention: patches ---------------------------------------------------

def test_patchify_3x3_row_major():
    x = Tensor(np.arange(9.0).reshape(1, 3, 3))
    p = patchify(x)
    assert p.shape == (9, 1)
    np.testing.assert_array_equal(p.data[:, 0], np.arange(9.0))


def test_patchify_constant_input():
    p = patchify(Tensor(np.full((2, 6, 6), 0.7))).data
    assert p.shape == (9, 8)
    assert np.all(p == p[0])


def test_patchify_layout_on_6x6(rng):
    x = rng.random((2, 6, 6))
    p = patchify(Tensor(x)).data
    # patch 5 is grid row 1, col 2
    np.testing.assert_array_equal(p[5], x[:, 2:4, 4:6].ravel())


@pytest.mark.parametrize("seed", SEEDS)
def test_patchify_round_trip_bit_exact(seed):
    x = np.random.default_rng(seed).standard_normal((3, 6, 6))
    back = unpatchify(patchify(Tensor(x)), 3, 6, 6)
    assert back.data.tobytes() == x.tobytes()


def test_patchify_extent_checks():
    with pytest.raises(ShapeError):
        patchify(Tensor(np.zeros((1, 2, 2))))
    with pytest.raises(ShapeError):
        patchify(Tensor(np.zeros((1, 4, 6))))


def test_pool_to_grid_extents():
    for n, expect in [(8, 6), (4, 3), (9, 9), (32, 30)]:
        assert pool_to_grid(Tensor(np.zeros((2, n, n)))).shape == (2, expect, expect)


# --- temporal attention: embedding and encoder -------------------------------------------

def test_zero_embedding():
    params = {"temporal/embed/weight": Tensor(np.ones((4, 5))),
              "temporal/embed/position": Tensor(np.zeros((9, 5)))}
    out = embed_patches(Tensor(np.zeros((9, 4))), params)
    assert out.shape == (9, 5) and not out.data.any()


def test_identity_embedding(rng):
    p = rng.standard_normal((9, 4))
    params = {"temporal/embed/weight": Tensor(np.eye(4)),
              "temporal/embed/position": Tensor(np.zeros((9, 4)))}
    np.testing.assert_array_equal(embed_patches(Tensor(p), params).data, p)


def test_embedding_shape_mismatch():
    params = {"temporal/embed/weight": Tensor(np.ones((4, 5))),
              "temporal/embed/position": Tensor(np.zeros((9, 5)))}
    with pytest.raises(ShapeError):
        embed_patches(Tensor(np.zeros((9, 3))), params)


@pytest.mark.parametrize("seed", SEEDS)
def test_embedding_gradients(seed):
    rng = np.random.default_rng(seed)
    args = [Tensor(rng.standard_normal(s)) for s in [(9, 6), (6, 4), (9, 4)]]

    def fn(p, w, pos):
        return embed_patches(p, {"temporal/embed/weight": w, "temporal/embed/position": pos})

    assert grad_check(fn, args, seed=seed).passed


def _zero_encoder(c):
    cfg = TemporalConfig(embed_dim=c, mlp_dim=2 * c)
    params = init_temporal(cfg, np.random.default_rng(0))
    return {k: Tensor(np.zeros(v.shape)) for k, v in params.items()}


def test_zero_encoder_gives_zero():
    params = _zero_encoder(4)
    z, attn = encode(Tensor(np.zeros((9, 4))), Tensor(np.zeros((1, 4))), params)
    assert z.shape == (10, 4) and not z.data.any()
    assert attn.shape == (10, 10)


@pytest.mark.parametrize("seed", SEEDS)
def test_encoder_attention_rows_sum_to_one(seed):
    rng = np.random.default_rng(seed)
    cfg = TemporalConfig(embed_dim=8, mlp_dim=16)
    params = init_temporal(cfg, rng)
    _, attn = encode(Tensor(rng.standard_normal((9, 8)) * 3), params["temporal/class_token"], params)
    np.testing.assert_allclose(attn.data.sum(axis=1), 1.0, atol=1e-9)


ENCODER_KEYS = ["attn/query", "attn/key", "attn/value", "mlp/w1", "mlp/b1", "mlp/w2", "mlp/b2"]


@pytest.mark.parametrize("seed", SEEDS)
def test_encoder_gradients(seed):
    rng = np.random.default_rng(seed)
    cfg = TemporalConfig(embed_dim=4, mlp_dim=6)
    params = init_temporal(cfg, rng)
    params["temporal/mlp/b1"] = Tensor(rng.standard_normal(6) * 0.5)
    tensors = [params[f"temporal/{k}"] for k in ENCODER_KEYS]

    def fn(x, cls, *ps):
        p = {f"temporal/{k}": t for k, t in zip(ENCODER_KEYS, ps)}
        return encode(x, cls, p)[0]

    args = [Tensor(rng.standard_normal((9, 4))), Tensor(rng.standard_normal((1, 4))), *tensors]
    report = grad_check(fn, args, name="encode", seed=seed)
    assert report.passed, report


# --- template attention ---------------------------------------------------------

def test_equal_latents_give_uniform_map(rng):
    row = rng.standard_normal(5)
    latent = np.vstack([rng.standard_normal(5)] + [row] * 9)
    m = template_attention(Tensor(latent), Tensor(rng.standard_normal((5, 1)))).data
    np.testing.assert_allclose(m, np.full((3, 3), 1 / 9), atol=1e-15)


def test_aligned_template_saturates():
    latent = np.zeros((10, 9))
    latent[1:] = np.eye(9)
    template = np.zeros((9, 1))
    template[4] = 60.0
    m = template_attention(Tensor(latent), Tensor(template)).data
    assert m[1, 1] > 1 - 1e-12


@pytest.mark.parametrize("seed", range(20))
def test_template_map_is_distribution_with_matching_argmax(seed):
    rng = np.random.default_rng(seed)
    latent, template = rng.standard_normal((10, 6)), rng.standard_normal((6, 1))
    m = template_attention(Tensor(latent), Tensor(template)).data
    assert np.all(m >= 0)
    assert abs(m.sum() - 1.0) < 1e-9
    raw = latent[1:] @ template[:, 0]
    assert np.argmax(m.ravel()) == np.argmax(raw)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-20, 20))
def test_template_argmax_shift_invariant(seed, shift):
    rng = np.random.default_rng(seed)
    latent, template = rng.standard_normal((10, 6)), rng.standard_normal((6, 1))
    # adding shift*template/|t|^2 to every patch row adds `shift` to every dot product
    t = template[:, 0]
    moved = latent + shift * t / (t @ t)
    a = template_attention(Tensor(latent), Tensor(template)).data
    b = template_attention(Tensor(moved), Tensor(template)).data
    assert np.argmax(a) == np.argmax(b)
    np.testing.assert_allclose(a, b, atol=1e-9)


# --- temporal guidance ---------------------------------------------------------------

def test_uniform_temporal_map_divides_by_nine(rng):
    deep = rng.standard_normal((4, 6, 6))
    out = apply_temporal_attention(Tensor(deep), Tensor(np.full((3, 3), 1 / 9))).data
    np.testing.assert_array_equal(out, deep * (1 / 9))


def test_one_hot_temporal_map(rng):
    m = np.zeros((3, 3))
    m[0, 2] = 1.0
    out = apply_temporal_attention(Tensor(rng.standard_normal((2, 9, 9))), Tensor(m)).data
    mask = np.zeros((9, 9), bool)
    mask[0:3, 6:9] = True
    assert not out[:, ~mask].any() and out[:, mask].any()


def test_temporal_guidance_extent_checks():
    with pytest.raises(ShapeError):
        apply_temporal_attention(Tensor(np.zeros((2, 8, 8))), Tensor(np.ones((3, 3))))


@pytest.mark.parametrize("seed", SEEDS)
def test_temporal_guidance_is_linear(seed):
    rng = np.random.default_rng(seed)
    deep = rng.standard_normal((3, 6, 6))
    m = Tensor(rng.random((3, 3)))
    for a in (-3.0, 0.5, 7.25):
        lhs = apply_temporal_attention(Tensor(a * deep), m).data
        rhs = a * apply_temporal_attention(Tensor(deep), m).data
        np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-12)


# --- full temporal path ----------------------------------------------------------

def test_temporal_path_shapes(rng):
    cfg = TemporalConfig()
    att, token = temporal_path(Tensor(rng.random((2, 32, 32))), init_temporal(cfg, rng), cfg)
    assert att.shape == (3, 3) and token.shape == (cfg.embed_dim,)
    assert abs(att.data.sum() - 1) < 1e-9


@pytest.mark.parametrize("seed", SEEDS)
def test_temporal_path_gradients(seed):
    rng = np.random.default_rng(seed)
    cfg = TemporalConfig(feature_channels=2, pre_pool=2, embed_dim=6, mlp_dim=8, input_size=12)
    names, tensors = _trainable(init_temporal(cfg, rng))

    def fn(r, *ps):
        att, token = temporal_path(r, dict(zip(names, ps)), cfg)
        return T.concat([T.reshape(att, (9,)), token], axis=0)

    report = grad_check(fn, [Tensor(rng.random((2, 12, 12))), *tensors], name="temporal_path",
                        seed=seed, max_coords=20)
    assert report.passed, report
