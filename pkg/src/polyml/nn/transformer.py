"""Attention primitives and a small post-norm encoder-decoder transformer.

Masks are boolean with ``True`` meaning "may attend". Every function accepts
ndarrays or Tensors so the same code serves inference and training.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeError
from ..numeric import make_rng
from . import autograd as ag
from .optim import FitReport, TrainConfig, glorot_init, train_loop

LN_EPS = 1e-5
_NEG = -1e30


def softmax(v, axis=-1):
    out = ag.softmax(v, axis)
    return out if isinstance(v, ag.Tensor) else out.data


def positional_encoding(seq_len: int, d_model: int) -> np.ndarray:
    """PE[pos, 2i] = sin(pos / 10000^(2i/d)), PE[pos, 2i+1] = cos(same)."""
    if d_model % 2:
        raise ValueError("d_model must be even")
    pos = np.arange(seq_len)[:, None]
    i = np.arange(d_model // 2)[None, :]
    angle = pos / 10000.0 ** (2 * i / d_model)
    pe = np.zeros((seq_len, d_model))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe


def causal_mask(n: int) -> np.ndarray:
    return np.tril(np.ones((n, n), dtype=bool))


def attention_weights(Q, K, mask=None):
    dk = ag.value(Q).shape[-1]
    if ag.value(K).shape[-1] != dk:
        raise ShapeError(f"query dim {dk} != key dim {ag.value(K).shape[-1]}")
    logits = (Q @ ag.swapaxes(K, -1, -2)) * (1.0 / np.sqrt(dk))
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape[-2:] != ag.value(logits).shape[-2:]:
            raise ShapeError(f"mask shape {mask.shape} does not match logits {ag.value(logits).shape}")
        logits = ag.where(mask, logits, _NEG)
    return ag.softmax(logits, axis=-1)


def scaled_dot_attention(Q, K, V, mask=None, return_weights: bool = False):
    """softmax(Q K^T / sqrt(d_k) with masked logits at -inf) V."""
    if ag.value(K).shape[-2] != ag.value(V).shape[-2]:
        raise ShapeError("K and V need the same number of rows")
    wts = attention_weights(Q, K, mask)
    out = wts @ V
    plain = not any(isinstance(t, ag.Tensor) for t in (Q, K, V))
    if plain:
        out, wts = out.data, wts.data
    return (out, wts) if return_weights else out


def _split_heads(x, h):
    B, n, d = ag.value(x).shape
    return ag.transpose(ag.reshape(x, (B, n, h, d // h)), (0, 2, 1, 3))


def multi_head_attention(P: dict, Q_in, K_in, V_in, mask=None, n_heads: int = 1,
                         return_weights: bool = False):
    """Projections ``WQ, WK, WV`` (d_model x d_model, split evenly across heads)
    and output projection ``WO``. Inputs are (n, d) or (B, n, d)."""
    plain = not any(isinstance(t, ag.Tensor) for t in list(P.values()) + [Q_in, K_in, V_in])
    squeeze = ag.value(Q_in).ndim == 2
    if squeeze:
        Q_in, K_in, V_in = (ag.reshape(t, (1,) + ag.value(t).shape) for t in (Q_in, K_in, V_in))
    d_model = ag.value(Q_in).shape[-1]
    if d_model % n_heads:
        raise ShapeError(f"d_model {d_model} not divisible by {n_heads} heads")
    q = _split_heads(Q_in @ P["WQ"], n_heads)
    k = _split_heads(K_in @ P["WK"], n_heads)
    v = _split_heads(V_in @ P["WV"], n_heads)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        mask = mask[:, None] if mask.ndim == 3 else mask
    wts = attention_weights(q, k, mask)
    heads = wts @ v  # B, h, n, dv
    B, _, n, dv = ag.value(heads).shape
    concat = ag.reshape(ag.transpose(heads, (0, 2, 1, 3)), (B, n, n_heads * dv))
    out = concat @ P["WO"]
    if squeeze:
        out = ag.reshape(out, ag.value(out).shape[1:])
    if plain:
        out, wts = ag.value(out), ag.value(wts)
    return (out, wts) if return_weights else out


def position_wise_ffn(x, W1, b1, W2, b2):
    """max(0, x W1 + b1) W2 + b2 at every position."""
    out = ag.relu(x @ W1 + b1) @ W2 + b2
    return out if any(isinstance(t, ag.Tensor) for t in (x, W1, b1, W2, b2)) else out.data


def layer_norm(x, gamma, beta, eps: float = LN_EPS):
    """Per-position normalization over the last axis, then gamma * xhat + beta."""
    if ag.value(x).shape[-1] < 2:
        raise ShapeError("layer norm needs feature dimension >= 2")
    mu = ag.mean(x, axis=-1, keepdims=True)
    xc = x - mu
    var = ag.mean(xc * xc, axis=-1, keepdims=True)
    out = xc / ag.sqrt(var + eps) * gamma + beta
    return out if any(isinstance(t, ag.Tensor) for t in (x, gamma, beta)) else out.data


def _sub(P, prefix):
    n = len(prefix)
    return {k[n:]: v for k, v in P.items() if k.startswith(prefix)}


def encoder_layer(P, x, n_heads, mask=None):
    a = multi_head_attention(_sub(P, "attn."), x, x, x, mask, n_heads)
    x = layer_norm(x + a, P["ln1.g"], P["ln1.b"])
    f = position_wise_ffn(x, P["ffn.W1"], P["ffn.b1"], P["ffn.W2"], P["ffn.b2"])
    return layer_norm(x + f, P["ln2.g"], P["ln2.b"])


def decoder_layer(P, y, memory, n_heads, self_mask=None, cross_mask=None):
    """Causal self-attention, then encoder-decoder attention, then the FFN;
    each sub-layer is followed by residual add and layer norm."""
    a = multi_head_attention(_sub(P, "self."), y, y, y, self_mask, n_heads)
    y = layer_norm(y + a, P["ln1.g"], P["ln1.b"])
    c = multi_head_attention(_sub(P, "cross."), y, memory, memory, cross_mask, n_heads)
    y = layer_norm(y + c, P["ln2.g"], P["ln2.b"])
    f = position_wise_ffn(y, P["ffn.W1"], P["ffn.b1"], P["ffn.W2"], P["ffn.b2"])
    return layer_norm(y + f, P["ln3.g"], P["ln3.b"])


def encoder_forward(P, x, n_layers: int, n_heads: int, mask=None):
    d = ag.value(x).shape[-1]
    for i in range(n_layers):
        x = encoder_layer(_sub(P, f"enc{i}."), x, n_heads, mask)
        if ag.value(x).shape[-1] != d:
            raise ShapeError(f"encoder layer {i} changed d_model")
    return x


def decoder_forward(P, y, memory, n_layers: int, n_heads: int, cross_mask=None):
    n = ag.value(y).shape[-2]
    d = ag.value(y).shape[-1]
    for i in range(n_layers):
        y = decoder_layer(_sub(P, f"dec{i}."), y, memory, n_heads, causal_mask(n), cross_mask)
        if ag.value(y).shape[-1] != d:
            raise ShapeError(f"decoder layer {i} changed d_model")
    return y


def _attn_params(prefix, d, rng):
    return {f"{prefix}{k}": glorot_init(d, d, rng) for k in ("WQ", "WK", "WV", "WO")}


def _ln(prefix, d):
    return {f"{prefix}.g": np.ones(d), f"{prefix}.b": np.zeros(d)}


def _ffn(prefix, d, d_ff, rng):
    return {f"{prefix}ffn.W1": glorot_init(d, d_ff, rng), f"{prefix}ffn.b1": np.zeros(d_ff),
            f"{prefix}ffn.W2": glorot_init(d_ff, d, rng), f"{prefix}ffn.b2": np.zeros(d)}


def init_encoder_layer(d, d_ff, rng, prefix=""):
    P = _attn_params(prefix + "attn.", d, rng)
    P.update(_ffn(prefix, d, d_ff, rng))
    P.update(_ln(prefix + "ln1", d))
    P.update(_ln(prefix + "ln2", d))
    return P


def init_decoder_layer(d, d_ff, rng, prefix=""):
    P = _attn_params(prefix + "self.", d, rng)
    P.update(_attn_params(prefix + "cross.", d, rng))
    P.update(_ffn(prefix, d, d_ff, rng))
    for j in (1, 2, 3):
        P.update(_ln(f"{prefix}ln{j}", d))
    return P


@dataclass
class Seq2SeqTransformer:
    """Token-level encoder-decoder with learned embeddings scaled by sqrt(d_model)
    plus sinusoidal positions, and a linear output projection."""

    vocab_size: int
    d_model: int = 16
    n_heads: int = 2
    n_layers: int = 2
    d_ff: int = 32
    max_len: int = 16
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ShapeError("d_model must be divisible by n_heads")
        if not self.params:
            rng = make_rng(self.seed)
            d = self.d_model
            P = {"src_emb": rng.normal(0, d**-0.5, (self.vocab_size, d)),
                 "tgt_emb": rng.normal(0, d**-0.5, (self.vocab_size, d)),
                 "out.W": glorot_init(d, self.vocab_size, rng), "out.b": np.zeros(self.vocab_size)}
            for i in range(self.n_layers):
                P.update(init_encoder_layer(d, self.d_ff, rng, f"enc{i}."))
                P.update(init_decoder_layer(d, self.d_ff, rng, f"dec{i}."))
            self.params = P
        self._pe = positional_encoding(self.max_len, self.d_model)

    def _embed(self, table, tokens):
        tokens = np.asarray(tokens, dtype=int)
        n = tokens.shape[-1]
        if n > self.max_len:
            raise ShapeError(f"sequence length {n} exceeds max_len {self.max_len}")
        return table[tokens] * np.sqrt(self.d_model) + self._pe[:n]

    def logits(self, P, src, tgt_in):
        memory = encoder_forward(P, self._embed(P["src_emb"], src), self.n_layers, self.n_heads)
        y = decoder_forward(P, self._embed(P["tgt_emb"], tgt_in), memory, self.n_layers, self.n_heads)
        return y @ P["out.W"] + P["out.b"]

    def loss(self, P, src, tgt_in, tgt_out):
        """Mean token cross-entropy under teacher forcing."""
        lp = ag.log_softmax(self.logits(P, src, tgt_in), axis=-1)
        tgt_out = np.asarray(tgt_out, dtype=int)
        onehot = np.eye(self.vocab_size)[tgt_out]
        return -ag.mean(ag.tsum(lp * onehot, axis=-1))

    def greedy_decode(self, src, start_token: int, length: int) -> np.ndarray:
        src = np.atleast_2d(np.asarray(src, dtype=int))
        out = np.full((src.shape[0], 1), start_token, dtype=int)
        for _ in range(length):
            lg = ag.value(self.logits(self.params, src, out))[:, -1, :]
            out = np.concatenate([out, lg.argmax(-1)[:, None]], axis=1)
        return out[:, 1:]


def copy_task_data(n: int, length: int = 6, vocab: int = 10, seed: int = 0):
    """Source sequences over tokens 1..vocab-1 (0 is the start token)."""
    rng = make_rng(seed)
    src = rng.integers(1, vocab, size=(n, length))
    tgt_in = np.concatenate([np.zeros((n, 1), dtype=int), src[:, :-1]], axis=1)
    return src, tgt_in, src.copy()


def train_copy_task(length: int = 6, vocab: int = 10, n_train: int = 512, n_test: int = 200,
                    config: TrainConfig | None = None, seed: int = 0, **model_kw):
    """Train the toy copy model; returns (model, report, test token accuracy)."""
    config = config or TrainConfig(optimizer="adam", lr=0.01, epochs=60, batch_size=32, seed=seed)
    model = Seq2SeqTransformer(vocab, max_len=length + 1, seed=seed, **model_kw)
    src, tgt_in, tgt_out = copy_task_data(n_train, length, vocab, seed)
    XY = np.concatenate([src, tgt_in], axis=1)

    def loss_fn(P, xb, yb, rng):
        return model.loss(P, xb[:, :length], xb[:, length:], yb)

    report = train_loop(model.params, loss_fn, XY, tgt_out, config)
    ts, _, to = copy_task_data(n_test, length, vocab, seed + 1)
    pred = model.greedy_decode(ts, 0, length)
    acc = float(np.mean(pred == to))
    report.metrics["token_accuracy"] = acc
    return model, report, acc
