import numpy as np
import pytest

from axialfuse.blocks import (
    CrossAttentionLayer, Encoder, EncoderConfig, MultiHeadAttention, RicaBlock, SelfAttentionLayer, TokenPrep,
)
from axialfuse.errors import ContractError, DimensionError
from axialfuse.gradcheck import check_module, randomize
from axialfuse.tensor import Tensor

F64 = np.float64


def _x(rng, *shape):
    return Tensor(rng.standard_normal(shape).astype(np.float32))


# -- RICA -----------------------------------------------------------------------


def test_rica_is_identity_at_init():
    rng = np.random.default_rng(0)
    x = _x(rng, 2, 7, 16)
    y = RicaBlock(16, rng)(x)
    assert y.shape == x.shape
    assert y.data.tobytes() == x.data.tobytes()


def test_rica_forced_open_gates_triple_input():
    rng = np.random.default_rng(1)
    block = RicaBlock(16, rng).astype(F64)
    block.conv_weight.data[:] = 0
    block.conv_bias.data[:] = 60.0  # sigmoid(60) == 1 in float64
    block.fc2.weight.data[:] = 0
    block.fc2.bias.data[:] = 60.0
    block.alpha_depth.data[:] = 1
    block.alpha_embed.data[:] = 1
    x = Tensor(rng.standard_normal((1, 5, 16)))
    g_d, g_e = block.gates(x)
    assert np.all(g_d.data == 1) and np.all(g_e.data == 1)
    np.testing.assert_array_equal(block(x).data, 3 * x.data)


def test_rica_gates_strictly_inside_unit_interval():
    rng = np.random.default_rng(2)
    block = randomize(RicaBlock(16, rng), rng)
    for g in block.gates(_x(rng, 3, 9, 16)):
        assert np.all(g.data > 0) and np.all(g.data < 1)


def test_rica_gradcheck():
    rng = np.random.default_rng(3)
    block = randomize(RicaBlock(16, rng), rng).astype(F64)
    x = Tensor(rng.standard_normal((2, 6, 16)), requires_grad=True)
    w = Tensor(rng.standard_normal((2, 6, 16)))
    assert check_module(block, lambda: (block(x) * w).sum(), [x], max_coords=None).max_rel_err < 1e-4


# -- tokens ------------------------------------------------------------------------


def test_tokens_for_64_slices():
    prep = TokenPrep(32, 64, np.random.default_rng(0))
    assert prep(Tensor(np.zeros((2, 64, 32), np.float32))).shape == (2, 65, 32)


def test_zero_input_zero_pos_gives_cls_then_zeros():
    prep = TokenPrep(8, 4, np.random.default_rng(0))
    prep.pos.data[:] = 0
    out = prep(Tensor(np.zeros((2, 4, 8), np.float32))).data
    for b in range(2):
        np.testing.assert_array_equal(out[b, 0], prep.cls.data[0])
        assert not out[b, 1:].any()


def test_token_width_mismatch():
    prep = TokenPrep(8, 4, np.random.default_rng(0))
    with pytest.raises(DimensionError):
        prep(Tensor(np.zeros((1, 4, 9), np.float32)))


# -- attention layers ------------------------------------------------------------------


def test_attention_rows_sum_to_one_in_every_head():
    rng = np.random.default_rng(4)
    for mode in ("self", "cross"):
        enc = Encoder(EncoderConfig(16, 2, 4, mode=mode), rng)
        q, kv = _x(rng, 2, 5, 16), _x(rng, 2, 7, 16)
        enc(q) if mode == "self" else enc(q, kv)
        probs = enc.attention_probs()
        assert len(probs) == 2
        for p in probs:
            np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-6)


def test_single_token_attention_is_value_projection():
    rng = np.random.default_rng(5)
    mha = randomize(MultiHeadAttention(8, 2, rng), rng).astype(F64)
    x = Tensor(rng.standard_normal((1, 1, 8)))
    expected = mha.out(mha.v(x)).data
    np.testing.assert_allclose(mha(x, x).data, expected, rtol=1e-12)


def test_self_attention_gradcheck():
    rng = np.random.default_rng(6)
    layer = randomize(SelfAttentionLayer(EncoderConfig(16, 1, 4), rng), rng, 0.1).astype(F64)
    t = Tensor(rng.standard_normal((1, 5, 16)), requires_grad=True)
    w = Tensor(rng.standard_normal((1, 5, 16)))
    assert check_module(layer, lambda: (layer(t) * w).sum(), [t], max_coords=None).max_rel_err < 1e-4


def test_cross_attention_gradcheck():
    rng = np.random.default_rng(7)
    layer = randomize(CrossAttentionLayer(EncoderConfig(16, 1, 4, mode="cross"), rng), rng, 0.1).astype(F64)
    q = Tensor(rng.standard_normal((1, 4, 16)), requires_grad=True)
    kv = Tensor(rng.standard_normal((1, 6, 16)), requires_grad=True)
    w = Tensor(rng.standard_normal((1, 4, 16)))
    assert check_module(layer, lambda: (layer(q, kv) * w).sum(), [q, kv], max_coords=None).max_rel_err < 1e-4


def _cross_pair(seed, e=16, h=4):
    """Same parameters, with and without the post-attention residual."""
    cfg = EncoderConfig(e, 1, h, mode="cross")
    plain = randomize(CrossAttentionLayer(cfg, np.random.default_rng(seed)), np.random.default_rng(seed + 1), 0.2)
    resid = randomize(CrossAttentionLayer(cfg, np.random.default_rng(seed), residual=True),
                      np.random.default_rng(seed + 1), 0.2)
    return plain, resid


@pytest.mark.parametrize("seed", range(20))
def test_single_key_output_ignores_query(seed):
    rng = np.random.default_rng(100 + seed)
    plain, resid = _cross_pair(seed)
    kv = _x(rng, 1, 1, 16)
    q1, q2 = _x(rng, 1, 5, 16), _x(rng, 1, 5, 16)
    a1, a2 = plain.attend(q1, kv).data, plain.attend(q2, kv).data
    assert a1.tobytes() == a2.tobytes()
    assert all(a1[0, i].tobytes() == a1[0, 0].tobytes() for i in range(5))
    r = resid.attend(q1, kv).data
    assert not np.array_equal(r, a1)
    np.testing.assert_allclose(r - a1, q1.data, atol=1e-6)


@pytest.mark.parametrize("seed", range(5))
def test_kv_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    enc = randomize(Encoder(EncoderConfig(16, 2, 4, mode="cross"), rng), rng, 0.1)
    q, kv = _x(rng, 2, 5, 16), _x(rng, 2, 9, 16)
    perm = rng.permutation(9)
    a = enc(q, kv).data
    b = enc(q, Tensor(kv.data[:, perm])).data
    assert np.abs(a - b).max() < 1e-5


def test_cross_encoder_is_asymmetric():
    diffs = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        enc = randomize(Encoder(EncoderConfig(16, 2, 4, mode="cross"), rng), rng, 0.1)
        a, b = _x(rng, 1, 6, 16), _x(rng, 1, 6, 16)
        diffs.append(np.abs(enc(a, b).data - enc(b, a).data).max())
    assert min(diffs) > 1e-3


def test_zero_layer_encoder_is_identity():
    rng = np.random.default_rng(0)
    x = _x(rng, 1, 4, 8)
    assert Encoder(EncoderConfig(8, 0, 2), rng)(x) is x
    assert Encoder(EncoderConfig(8, 0, 2, mode="cross"), rng)(x, _x(rng, 1, 3, 8)) is x


def test_mode_argument_contract():
    rng = np.random.default_rng(0)
    x = _x(rng, 1, 4, 8)
    with pytest.raises(ContractError):
        Encoder(EncoderConfig(8, 1, 2), rng)(x, x)
    with pytest.raises(ContractError):
        Encoder(EncoderConfig(8, 1, 2, mode="cross"), rng)(x)
    with pytest.raises(DimensionError):
        Encoder(EncoderConfig(8, 1, 2, mode="cross"), rng)(x, _x(rng, 1, 4, 4))


def test_cross_encoder_feeds_same_kv_to_every_layer():
    rng = np.random.default_rng(8)
    enc = randomize(Encoder(EncoderConfig(8, 3, 2, mode="cross"), rng), rng, 0.1)
    q, kv = _x(rng, 1, 3, 8), _x(rng, 1, 4, 8)
    manual = q
    for layer in enc.layers:
        manual = layer(manual, kv)
    assert enc(q, kv).data.tobytes() == manual.data.tobytes()


@pytest.mark.parametrize("e,n,h", [(768, 12, 12), (768, 6, 4), (32, 2, 2)])
def test_published_and_desk_configs_accepted(e, n, h):
    cfg = EncoderConfig(e, n, h, mode="cross")
    assert cfg.embed_dim // cfg.heads * cfg.heads == e


def test_indivisible_heads_rejected():
    with pytest.raises(ValueError):
        EncoderConfig(10, 1, 3)
