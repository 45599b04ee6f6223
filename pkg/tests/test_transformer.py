import numpy as np
import pytest

from conftest import rel_err
from polyml.errors import ShapeError
from polyml.nn.autograd import Tensor, numerical_grad, value_and_grad
from polyml.nn.transformer import (Seq2SeqTransformer, attention_weights, causal_mask,
                                   decoder_forward, encoder_forward, init_decoder_layer,
                                   init_encoder_layer, layer_norm, multi_head_attention,
                                   position_wise_ffn, positional_encoding, scaled_dot_attention,
                                   softmax)


def test_softmax():
    assert np.allclose(softmax(np.zeros(4)), 0.25)
    assert np.allclose(softmax(np.array([0.0, np.log(3)])), [0.25, 0.75])
    v = np.array([1.0, -2.0, 0.5])
    assert np.allclose(softmax(v + 100), softmax(v))
    assert abs(softmax(np.array([1000.0, 0.0])).sum() - 1) < 1e-12


def test_positional_encoding():
    pe = positional_encoding(10, 8)
    assert np.all(pe[0, 0::2] == 0) and np.all(pe[0, 1::2] == 1)
    assert np.all(np.abs(pe) <= 1)
    for d in (2, 4, 16):
        assert positional_encoding(2, d)[1, 0] == pytest.approx(np.sin(1.0))
    with pytest.raises(ValueError):
        positional_encoding(3, 5)


def test_attention_single_key_and_peaked(rng):
    V = rng.normal(size=(1, 3))
    assert np.allclose(scaled_dot_attention(rng.normal(size=(2, 4)), rng.normal(size=(1, 4)), V), V)
    K = np.eye(3) * np.sqrt(3)
    Q = np.array([[20.0, 0.0, 0.0]])  # logits (20, 0, 0)
    V = rng.normal(size=(3, 2))
    assert np.allclose(scaled_dot_attention(Q, K, V), V[0], atol=1e-8)


def test_attention_causal_mask(rng):
    Q, K = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    _, w = scaled_dot_attention(Q, K, rng.normal(size=(3, 2)), causal_mask(3), return_weights=True)
    assert w[0, 0] == pytest.approx(1.0) and np.all(w[0, 1:] == 0)
    assert np.all(np.abs(w.sum(1) - 1) < 1e-9)
    with pytest.raises(ShapeError):
        scaled_dot_attention(Q, rng.normal(size=(3, 5)), rng.normal(size=(3, 2)))


@pytest.mark.parametrize("seed", range(5))
def test_attention_rows_stochastic_under_masks(seed):
    g = np.random.default_rng(seed)
    Q, K = g.normal(size=(5, 4)) * 3, g.normal(size=(6, 4)) * 3
    mask = g.random((5, 6)) > 0.5
    mask[np.arange(5), g.integers(0, 6, 5)] = True
    for m in (None, mask, np.ones((5, 6), bool)):
        w = attention_weights(Q, K, m).data
        assert np.all(w >= 0) and np.all(np.abs(w.sum(-1) - 1) < 1e-9)
        if m is not None:
            assert np.all(w[~m] == 0)


def test_attention_row_shift_invariance(rng):
    Q, K = rng.normal(size=(4, 3)), rng.normal(size=(5, 3))
    logits = Q @ K.T / np.sqrt(3)
    shifted = softmax(logits + rng.normal(size=(4, 1)))
    assert np.allclose(shifted, attention_weights(Q, K).data)


def test_mha_reduces_and_shapes(rng):
    d = 4
    I = {k: np.eye(d) for k in ("WQ", "WK", "WV", "WO")}
    Q, K, V = rng.normal(size=(3, d)), rng.normal(size=(5, d)), rng.normal(size=(5, d))
    assert np.allclose(multi_head_attention(I, Q, K, V, n_heads=1), scaled_dot_attention(Q, K, V))
    P = {k: rng.normal(size=(8, 8)) for k in ("WQ", "WK", "WV", "WO")}
    for h in (1, 2, 4, 8):
        assert multi_head_attention(P, rng.normal(size=(3, 8)), rng.normal(size=(6, 8)),
                                    rng.normal(size=(6, 8)), n_heads=h).shape == (3, 8)
    with pytest.raises(ShapeError):
        multi_head_attention(P, Q[:, :3], Q[:, :3], Q[:, :3], n_heads=2)


def test_mha_key_permutation(rng):
    P = {k: rng.normal(size=(6, 6)) for k in ("WQ", "WK", "WV", "WO")}
    Q, K, V = rng.normal(size=(3, 6)), rng.normal(size=(5, 6)), rng.normal(size=(5, 6))
    mask = rng.random((3, 5)) > 0.3
    mask[:, 0] = True
    perm = rng.permutation(5)
    a = multi_head_attention(P, Q, K, V, mask, 2)
    b = multi_head_attention(P, Q, K[perm], V[perm], mask[:, perm], 2)
    assert np.max(np.abs(a - b)) < 1e-12


def test_ffn(rng):
    x = rng.normal(size=(4, 3))
    b2 = rng.normal(size=3)
    assert np.allclose(position_wise_ffn(x, np.zeros((3, 5)), np.zeros(5), np.zeros((5, 3)), b2), b2)
    same = np.tile(rng.normal(size=3), (4, 1))
    W1, b1, W2 = rng.normal(size=(3, 5)), rng.normal(size=5), rng.normal(size=(5, 3))
    out = position_wise_ffn(same, W1, b1, W2, b2)
    assert np.allclose(out, out[0])
    assert np.allclose(position_wise_ffn(x, W1, np.full(5, -1e3), W2, b2), b2)


def test_layer_norm(rng):
    x = rng.normal(size=(5, 8)) * 3 + 1
    out = layer_norm(x, np.ones(8), np.zeros(8))
    assert np.allclose(out.mean(-1), 0, atol=1e-12) and np.allclose(out.var(-1), 1, atol=1e-3)
    beta = rng.normal(size=8)
    assert np.allclose(layer_norm(np.full((1, 8), 2.5), np.ones(8), beta), beta)
    assert np.allclose(layer_norm(10 * x, np.ones(8), np.zeros(8)), out, atol=1e-5)
    with pytest.raises(ShapeError):
        layer_norm(np.ones((2, 1)), np.ones(1), np.zeros(1))


def test_zero_layers_identity(rng):
    x = rng.normal(size=(1, 4, 8))
    assert np.array_equal(encoder_forward({}, x, 0, 2), x)
    assert np.array_equal(decoder_forward({}, x, x, 0, 2), x)


def test_decoder_causality(rng):
    d = 8
    P = {}
    for i in range(2):
        P.update(init_encoder_layer(d, 16, rng, f"enc{i}."))
        P.update(init_decoder_layer(d, 16, rng, f"dec{i}."))
    memory = encoder_forward(P, rng.normal(size=(1, 4, d)), 2, 2)
    y = rng.normal(size=(1, 5, d))
    base = decoder_forward(P, y, memory, 2, 2)
    for t in range(5):
        y2 = y.copy()
        y2[0, t] += rng.normal(size=d)
        out = decoder_forward(P, y2, memory, 2, 2)
        assert np.array_equal(out[0, :t], base[0, :t])
        assert not np.allclose(out[0, t], base[0, t])


def test_micro_transformer_gradient(rng):
    m = Seq2SeqTransformer(5, d_model=8, n_heads=2, n_layers=1, d_ff=8, max_len=4, seed=1)
    src, tin, tout = rng.integers(0, 5, (2, 3)), rng.integers(0, 5, (2, 3)), rng.integers(0, 5, (2, 3))
    _, g = value_and_grad(lambda P: m.loss(P, src, tin, tout), m.params)
    fd = numerical_grad(lambda P: m.loss({k: Tensor(v) for k, v in P.items()}, src, tin, tout), m.params)
    assert rel_err(g, fd) < 1e-4
