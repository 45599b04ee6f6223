"""Convolution (cross-correlation, no kernel flip), pooling, flattening,
SMILES tokenization / one-hot encoding and a small CNN regressor.

Image tensors are (batch, channels, height, width); flattening is
filter-major then row-major.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from ..errors import DataError, ShapeError
from ..numeric import make_rng
from . import autograd as ag
from .mlp import (Activation, BatchNorm, Dense, Dropout, Flatten, Network, apply_activation)
from .optim import TrainConfig, glorot_init


def conv_output_size(n: int, k: int, stride: int = 1, padding: int = 0) -> int:
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if n + 2 * padding < k:
        raise ShapeError(f"kernel {k} larger than padded input {n + 2 * padding}")
    return (n + 2 * padding - k) // stride + 1


def conv1d(x, kernel, stride: int = 1, padding: int = 0) -> np.ndarray:
    """out[j] = sum_m kernel[m] * padded[j*stride + m]."""
    x = np.asarray(x, dtype=float)
    k = np.asarray(kernel, dtype=float)
    n_out = conv_output_size(x.size, k.size, stride, padding)
    xp = np.pad(x, padding)
    return np.array([k @ xp[j * stride : j * stride + k.size] for j in range(n_out)])


def conv1d_matrix(n: int, kernel, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Matrix M with ``M @ pad(x) == conv1d(x)``: each row holds the kernel at its offset."""
    k = np.asarray(kernel, dtype=float)
    n_out = conv_output_size(n, k.size, stride, padding)
    M = np.zeros((n_out, n + 2 * padding))
    for j in range(n_out):
        M[j, j * stride : j * stride + k.size] = k
    return M


def _window_index(h, w, kh, kw, stride):
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    I = (np.arange(oh) * stride)[:, None, None, None] + np.arange(kh)[None, None, :, None]
    J = (np.arange(ow) * stride)[None, :, None, None] + np.arange(kw)[None, None, None, :]
    return np.broadcast_to(I, (oh, ow, kh, kw)), np.broadcast_to(J, (oh, ow, kh, kw))


def conv2d_batch(x, W, b=None, stride: int = 1, padding: int = 0):
    """Tensor-aware batched convolution: x (B,C,H,W), W (F,C,kh,kw) -> (B,F,oh,ow)."""
    B, C, H, Wd = ag.value(x).shape
    F, C2, kh, kw = ag.value(W).shape
    if C != C2:
        raise ShapeError(f"input has {C} channels, kernel expects {C2}")
    conv_output_size(H, kh, stride, padding)
    conv_output_size(Wd, kw, stride, padding)
    if padding:
        x = ag.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    I, J = _window_index(H + 2 * padding, Wd + 2 * padding, kh, kw, stride)
    oh, ow = I.shape[:2]
    patches = x[:, :, I, J]  # B, C, oh, ow, kh, kw
    cols = ag.reshape(ag.transpose(patches, (0, 2, 3, 1, 4, 5)), (B * oh * ow, C * kh * kw))
    out = cols @ ag.reshape(W, (F, C * kh * kw)).T
    if b is not None:
        out = out + b
    return ag.transpose(ag.reshape(out, (B, oh, ow, F)), (0, 3, 1, 2))


def conv2d(x, kernels, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Valid cross-correlation of one image.

    ``x`` is (H, W) or (C, H, W); ``kernels`` is (kh, kw), (F, kh, kw) or
    (F, C, kh, kw). Returns (F, oh, ow), or (oh, ow) for a single 2-D kernel.
    """
    x = np.asarray(x, dtype=float)
    k = np.asarray(kernels, dtype=float)
    single = k.ndim == 2
    if x.ndim == 2:
        x = x[None]
    if k.ndim == 2:
        k = k[None, None]
    elif k.ndim == 3:
        k = k[:, None] if x.shape[0] == 1 else k[None]
    out = ag.value(conv2d_batch(x[None], k, None, stride, padding))[0]
    return out[0] if single else out


def pool_batch(x, size: int, kind: str = "max", stride: int | None = None):
    """Tensor-aware 2-D pooling over (B,C,H,W); default stride = window."""
    stride = stride or size
    B, C, H, W = ag.value(x).shape
    if size > H or size > W:
        raise ShapeError(f"pool window {size} exceeds input {H}x{W}")
    I, J = _window_index(H, W, size, size, stride)
    win = x[:, :, I, J]  # B, C, oh, ow, size, size
    if kind == "max":
        return ag.tmax(win, axis=(4, 5))
    if kind in ("average", "avg", "mean"):
        return ag.mean(win, axis=(4, 5))
    raise ValueError(f"unknown pooling {kind!r}")


def pool(x, window: int, kind: str = "max", stride: int | None = None) -> np.ndarray:
    """1-D (vector) or 2-D (matrix / stack of maps) pooling without activation."""
    x = np.asarray(x, dtype=float)
    stride = stride or window
    if window < 1:
        raise ValueError("window must be >= 1")
    if x.ndim == 1:
        n_out = conv_output_size(x.size, window, stride)
        wins = np.stack([x[j * stride : j * stride + window] for j in range(n_out)])
        if kind == "max":
            return wins.max(1)
        if kind in ("average", "avg", "mean"):
            return wins.mean(1)
        raise ValueError(f"unknown pooling {kind!r}")
    squeeze = x.ndim == 2
    x4 = x[None, None] if squeeze else x[None]
    out = ag.value(pool_batch(x4, window, kind, stride))[0]
    return out[0] if squeeze else out


def flatten(feature_maps) -> np.ndarray:
    """Filter-major, then row-major concatenation."""
    return np.asarray(feature_maps, dtype=float).reshape(-1)


# --- layers for Network ----------------------------------------------------------


@dataclass
class Conv2D:
    in_channels: int
    filters: int
    kernel: tuple = (3, 3)
    stride: int = 1
    padding: int = 0
    activation: str = "relu"

    def init(self, rng):
        kh, kw = self.kernel
        fan_in = self.in_channels * kh * kw
        W = glorot_init(fan_in, self.filters, rng).T.reshape(self.filters, self.in_channels, kh, kw)
        return {"W": W, "b": np.zeros(self.filters)}

    def out_shape(self, shape):
        if len(shape) != 3 or shape[0] != self.in_channels:
            raise ShapeError(f"conv expects ({self.in_channels}, H, W), got {shape}")
        kh, kw = self.kernel
        return (self.filters, conv_output_size(shape[1], kh, self.stride, self.padding),
                conv_output_size(shape[2], kw, self.stride, self.padding))

    def forward(self, P, x, ctx):
        out = conv2d_batch(x, P["W"], None, self.stride, self.padding)
        return apply_activation(self.activation, out + ag.reshape(P["b"], (1, -1, 1, 1)))


@dataclass
class Pool2D:
    size: int = 2
    kind: str = "max"
    stride: int | None = None

    def init(self, rng):
        return {}

    def out_shape(self, shape):
        s = self.stride or self.size
        if self.size > shape[1] or self.size > shape[2]:
            raise ShapeError(f"pool window {self.size} exceeds map {shape[1:]}")
        return (shape[0], (shape[1] - self.size) // s + 1, (shape[2] - self.size) // s + 1)

    def forward(self, P, x, ctx):
        return pool_batch(x, self.size, self.kind, self.stride)


def cnn_architecture(input_shape, filters=(8, 4), kernel=(3, 3), dense=(16, 8), dropout=0.0,
                     batch_norm=True) -> list:
    """conv -> pool -> conv -> pool -> [batch norm] -> flatten -> dense... -> 1.

    The workshop layout (128/64 filters, dense 128/64) at adjustable width.
    """
    c = input_shape[0]
    layers = [Conv2D(c, filters[0], kernel), Pool2D(2)]
    for f_prev, f in zip(filters[:-1], filters[1:]):
        layers += [Conv2D(f_prev, f, kernel), Pool2D(2)]
    if batch_norm:
        layers.append(_ConvBatchNorm(filters[-1]))
    layers.append(Flatten())
    shape = tuple(input_shape)
    for layer in layers:
        shape = layer.out_shape(shape)
    prev = shape[0]
    for h in dense:
        layers.append(Dense(prev, h, "relu"))
        if dropout > 0:
            layers.append(Dropout(dropout))
        prev = h
    layers.append(Dense(prev, 1, "linear"))
    return layers


class _ConvBatchNorm(BatchNorm):
    def out_shape(self, shape):
        if shape[0] != self.n:
            raise ShapeError(f"batch norm over {self.n} channels, got {shape[0]}")
        return shape


def cnn_shape_trace(input_shape, layers) -> list[tuple]:
    return Network(layers, tuple(input_shape), params={"_": np.zeros(0)}).shape_trace()


def fit_cnn_regressor(images, targets, architecture=None, config: TrainConfig | None = None,
                      seed: int = 0):
    """Build the network (validating shapes up front) and train it by Adam on MSE.

    ``images`` is (N, H, W) or (N, C, H, W).
    """
    X = np.asarray(images, dtype=float)
    if X.ndim == 3:
        X = X[:, None]
    if X.ndim != 4:
        raise ShapeError("images must be (N, H, W) or (N, C, H, W)")
    layers = architecture if architecture is not None else cnn_architecture(X.shape[1:])
    net = Network(layers, X.shape[1:], seed=seed)
    config = config or TrainConfig(optimizer="adam", lr=0.001, epochs=200)
    report = net.fit(X, np.asarray(targets, dtype=float), config)
    return net, report


# --- SMILES ------------------------------------------------------------------

DEFAULT_SMILES_TOKENS = ["c", "n", "o", "C", "N", "F", "=", "O", "(", ")", "1", "2", "#",
                         "Cl", "/", "S", "Br"]


class SmilesVocab:
    def __init__(self, tokens=None):
        tokens = list(DEFAULT_SMILES_TOKENS if tokens is None else tokens)
        if len(set(tokens)) != len(tokens):
            raise DataError("vocabulary tokens must be unique")
        if any(not t for t in tokens):
            raise DataError("empty vocabulary token")
        self.tokens = tokens
        self.index = {t: i for i, t in enumerate(tokens)}
        self._by_length = sorted(tokens, key=len, reverse=True)

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, t):
        return t in self.index


def tokenize_smiles(s: str, vocab: SmilesVocab | None = None) -> list[str]:
    """Greedy longest-match tokenization; unknown symbols raise with their position."""
    vocab = vocab or SmilesVocab()
    out, pos = [], 0
    while pos < len(s):
        for t in vocab._by_length:
            if s.startswith(t, pos):
                out.append(t)
                pos += len(t)
                break
        else:
            raise DataError(f"unknown SMILES token {s[pos]!r} at position {pos}")
    return out


def smiles_one_hot(s: str, vocab: SmilesVocab | None = None, max_len: int = 65) -> np.ndarray:
    vocab = vocab or SmilesVocab()
    toks = tokenize_smiles(s, vocab)
    if len(toks) > max_len:
        raise DataError(f"SMILES has {len(toks)} tokens, more than max_len={max_len}")
    M = np.zeros((max_len, len(vocab)))
    for t, tok in enumerate(toks):
        M[t, vocab.index[tok]] = 1.0
    return M


def load_vocab(path) -> SmilesVocab:
    """One token per line; blank lines ignored."""
    with open(path, encoding="utf-8") as fh:
        return SmilesVocab([line.strip() for line in fh if line.strip()])


def read_smiles_csv(path) -> tuple[list[str], np.ndarray]:
    """CSV with ``smiles`` and ``target`` columns."""
    smiles, target = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"smiles", "target"} <= set(reader.fieldnames):
            raise DataError("SMILES CSV needs 'smiles' and 'target' columns")
        for i, row in enumerate(reader, start=2):
            try:
                target.append(float(row["target"]))
            except ValueError:
                raise DataError(f"row {i}, column 'target': not a number: {row['target']!r}") from None
            smiles.append(row["smiles"].strip())
    return smiles, np.array(target)


def encode_smiles_batch(smiles, vocab=None, max_len=None) -> np.ndarray:
    """(N, 1, max_len, |vocab|) one-hot images."""
    vocab = vocab or SmilesVocab()
    if max_len is None:
        max_len = max(len(tokenize_smiles(s, vocab)) for s in smiles)
    return np.stack([smiles_one_hot(s, vocab, max_len) for s in smiles])[:, None]
