"""Multilayer perceptrons.

Two flavours live here:

* :class:`ThresholdNetwork`: the classic three-layer perceptron with internal
  thresholds (``out = f(in @ W - T)``) trained by the explicit per-layer
  delta rule, one pattern at a time;
* :class:`Network`: a general layer stack (dense, dropout, batch norm,
  convolution, pooling) trained by the shared autodiff engine.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeError
from ..numeric import child_seeds, make_rng
from . import autograd as ag
from .optim import FitReport, TrainConfig, glorot_init, train_loop

ACTIVATIONS = ("sigmoid", "tanh", "relu", "softplus", "linear")


def activate(kind: str, x):
    x = np.asarray(x, dtype=float)
    if kind == "sigmoid":
        return ag._np_sigmoid(np.atleast_1d(x)).reshape(x.shape)
    if kind == "tanh":
        return np.tanh(x)
    if kind == "relu":
        return np.where(x > 0, x, 0.0)
    if kind == "softplus":
        return np.logaddexp(0.0, x)
    if kind == "linear":
        return x
    raise ValueError(f"unknown activation {kind!r}")


def activate_deriv(kind: str, x):
    """Derivative with respect to the pre-activation ``x``."""
    x = np.asarray(x, dtype=float)
    if kind == "sigmoid":
        s = activate("sigmoid", x)
        return s * (1.0 - s)
    if kind == "tanh":
        return 1.0 - np.tanh(x) ** 2
    if kind == "relu":
        return (x > 0).astype(float)
    if kind == "softplus":
        return activate("sigmoid", x)
    if kind == "linear":
        return np.ones_like(x)
    raise ValueError(f"unknown activation {kind!r}")


_TENSOR_ACT = {
    "sigmoid": ag.sigmoid, "tanh": ag.tanh, "relu": ag.relu,
    "softplus": ag.softplus, "linear": ag.identity,
}


def apply_activation(kind, x):
    try:
        return _TENSOR_ACT[kind](x)
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None


# --- threshold-form three-layer network ------------------------------------


@dataclass
class StepErrors:
    output: np.ndarray  # c(1-c)(d-c)
    hidden: np.ndarray  # b(1-b) sum_k w_jk eps_k, with the pre-update w


@dataclass
class ThresholdNetwork:
    """``a = f(l - T1)``, ``b = f(a @ v - T2)``, ``c = f(b @ w - T3)``.

    ``thresholds`` rows are T1, T2, T3. Updates follow the delta rule in the
    order w, T3, v (with the old w), T2; T1 stays fixed. With
    ``threshold_rule="descent"`` the thresholds move down the error gradient
    (``T - eta*eps``, since they enter with a minus sign); ``"printed"`` moves
    them the other way (``T + eta*eps``) as some textbook tables do.
    """

    v: np.ndarray
    w: np.ndarray
    thresholds: np.ndarray
    activation: str = "sigmoid"
    threshold_rule: str = "descent"
    _dv: np.ndarray | None = field(default=None, repr=False)
    _dw: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.v = np.array(self.v, dtype=float)
        self.w = np.array(self.w, dtype=float)
        self.thresholds = np.array(self.thresholds, dtype=float)
        if self.v.shape[1] != self.w.shape[0]:
            raise ShapeError("hidden sizes of v and w disagree")
        if self.threshold_rule not in ("descent", "printed"):
            raise ValueError("threshold_rule must be 'descent' or 'printed'")

    @property
    def T1(self):
        return self.thresholds[0]

    @property
    def T2(self):
        return self.thresholds[1]

    @property
    def T3(self):
        return self.thresholds[2]

    def forward(self, l):
        l = np.asarray(l, dtype=float)
        if l.shape[-1] != self.v.shape[0]:
            raise ShapeError(f"input has {l.shape[-1]} features, network expects {self.v.shape[0]}")
        f = self.activation
        a = activate(f, l - self.T1)
        b = activate(f, a @ self.v - self.T2)
        c = activate(f, b @ self.w - self.T3)
        return a, b, c

    def to_bias_form(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """(W, bias) per layer with bias = -T; the input layer has identity weights."""
        n = self.v.shape[0]
        return [(np.eye(n), -self.T1), (self.v.copy(), -self.T2), (self.w.copy(), -self.T3)]

    def backprop_step(self, l, d, lr: float = 0.7, momentum: float = 0.0):
        """One delta-rule update; returns (updated copy, errors)."""
        f = self.activation
        a, b, c = self.forward(l)
        d = np.asarray(d, dtype=float)
        eps_out = _deriv_from_output(f, c) * (d - c)
        eps_hid = _deriv_from_output(f, b) * (self.w @ eps_out)
        net = copy.deepcopy(self)
        sign = -1.0 if self.threshold_rule == "descent" else 1.0
        dw = lr * np.outer(b, eps_out)
        dv = lr * np.outer(a, eps_hid)
        if momentum and self._dw is not None:
            dw = dw + momentum * self._dw
            dv = dv + momentum * self._dv
        net.w = self.w + dw
        net.thresholds[2] = self.T3 + sign * lr * eps_out
        net.v = self.v + dv
        net.thresholds[1] = self.T2 + sign * lr * eps_hid
        net._dw, net._dv = dw, dv
        return net, StepErrors(eps_out, eps_hid)


def _deriv_from_output(kind, y):
    """Activation derivative expressed through the activation output."""
    if kind == "sigmoid":
        return y * (1.0 - y)
    if kind == "tanh":
        return 1.0 - y**2
    if kind == "linear":
        return np.ones_like(y)
    raise ValueError(f"threshold networks support sigmoid/tanh/linear, not {kind!r}")


def train_threshold_network(net: ThresholdNetwork, l, d, lr: float = 0.7, momentum: float = 0.0,
                            max_iter: int = 10_000, tol: float = 0.02) -> tuple[ThresholdNetwork, FitReport]:
    """Repeat single-pattern updates until every |d_k - c_k| < tol."""
    d = np.asarray(d, dtype=float)
    report = FitReport()
    for it in range(max_iter + 1):
        c = net.forward(l)[2]
        err = np.abs(d - c)
        report.loss_history.append(float(np.sum((d - c) ** 2)))
        if np.all(err < tol):
            report.converged = True
            break
        if it == max_iter:
            break
        net, _ = net.backprop_step(l, d, lr, momentum)
    report.epochs_run = it
    report.metrics = {"iterations": it, "output": c.tolist(), "abs_error": err.tolist()}
    return net, report


# --- general layer stack -------------------------------------------------------


def dropout_mask(shape, p: float, rng, training: bool = True) -> np.ndarray:
    """Inverted-dropout mask: 0 with probability p, else 1/(1-p); ones at inference."""
    if not 0 <= p < 1:
        raise ValueError("dropout rate must be in [0, 1)")
    if not training or p == 0:
        return np.ones(shape)
    keep = make_rng(rng).random(shape) >= p
    return keep / (1.0 - p)


def apply_dropout(x, p, rng, training=True):
    if not training or p == 0:
        return x
    return x * dropout_mask(ag.value(x).shape, p, rng, True)


BN_MOMENTUM = 0.9
BN_EPS = 1e-5


def batch_norm(x, gamma, beta, state: dict, training: bool, momentum: float = BN_MOMENTUM,
               eps: float = BN_EPS):
    """Normalize each feature (axis 0, and spatial axes for 4-D input).

    Training uses batch statistics and updates ``state['mean'|'var']`` as
    ``momentum * old + (1 - momentum) * batch``; inference uses the stored values.
    """
    xv = ag.value(x)
    axes = (0,) if xv.ndim == 2 else (0, 2, 3)
    shape = (1, -1) if xv.ndim == 2 else (1, -1, 1, 1)
    if training:
        n = int(np.prod([xv.shape[a] for a in axes]))
        if n < 2:
            raise ValueError("batch norm needs at least 2 values per feature in training mode")
        mu = ag.mean(x, axis=axes, keepdims=True)
        xc = x - mu
        var = ag.mean(xc * xc, axis=axes, keepdims=True)
        xhat = xc / ag.sqrt(var + eps)
        if state is not None:
            state["mean"] = momentum * state["mean"] + (1 - momentum) * ag.value(mu).reshape(-1)
            state["var"] = momentum * state["var"] + (1 - momentum) * ag.value(var).reshape(-1)
    else:
        xhat = (x - state["mean"].reshape(shape)) / np.sqrt(state["var"].reshape(shape) + eps)
    return xhat * ag.reshape(gamma, shape) + ag.reshape(beta, shape)


@dataclass
class Dense:
    n_in: int
    n_out: int
    activation: str = "linear"

    def init(self, rng):
        return {"W": glorot_init(self.n_in, self.n_out, rng), "b": np.zeros(self.n_out)}

    def out_shape(self, shape):
        if shape[-1] != self.n_in:
            raise ShapeError(f"dense layer expects {self.n_in} inputs, got {shape[-1]}")
        return (self.n_out,)

    def forward(self, P, x, ctx):
        return apply_activation(self.activation, x @ P["W"] + P["b"])


@dataclass
class Dropout:
    p: float = 0.25

    def init(self, rng):
        return {}

    def out_shape(self, shape):
        return shape

    def forward(self, P, x, ctx):
        return apply_dropout(x, self.p, ctx["rng"], ctx["training"])


@dataclass
class BatchNorm:
    n: int

    def init(self, rng):
        return {"gamma": np.ones(self.n), "beta": np.zeros(self.n)}

    def init_state(self):
        return {"mean": np.zeros(self.n), "var": np.ones(self.n)}

    def out_shape(self, shape):
        return shape

    def forward(self, P, x, ctx):
        return batch_norm(x, P["gamma"], P["beta"], ctx["state"], ctx["training"])


@dataclass
class Activation:
    kind: str

    def init(self, rng):
        return {}

    def out_shape(self, shape):
        return shape

    def forward(self, P, x, ctx):
        return apply_activation(self.kind, x)


@dataclass
class Flatten:
    def init(self, rng):
        return {}

    def out_shape(self, shape):
        return (int(np.prod(shape)),)

    def forward(self, P, x, ctx):
        return ag.reshape(x, (ag.value(x).shape[0], -1))


@dataclass
class Network:
    """Layer stack with parameters keyed ``"<layer>.<name>"``."""

    layers: list
    input_shape: tuple
    params: dict = field(default_factory=dict)
    state: dict = field(default_factory=dict)
    loss: str = "mse"
    seed: int = 0

    def __post_init__(self):
        self.input_shape = tuple(self.input_shape)
        self.shape_trace()
        if not self.params:
            rng = make_rng(self.seed)
            for i, (layer, s) in enumerate(zip(self.layers, child_seeds(rng, len(self.layers)))):
                for k, v in layer.init(make_rng(s)).items():
                    self.params[f"{i}.{k}"] = v
        for i, layer in enumerate(self.layers):
            if hasattr(layer, "init_state") and i not in self.state:
                self.state[i] = layer.init_state()

    def shape_trace(self) -> list[tuple]:
        """Per-layer output shapes (excluding the batch axis)."""
        shapes, s = [], self.input_shape
        for i, layer in enumerate(self.layers):
            try:
                s = tuple(layer.out_shape(s))
            except ShapeError as e:
                trace = " -> ".join(map(str, [self.input_shape] + shapes))
                raise ShapeError(f"layer {i} ({type(layer).__name__}): {e}; trace {trace}") from None
            shapes.append(s)
        return shapes

    def _layer_params(self, P, i):
        prefix = f"{i}."
        return {k[len(prefix):]: v for k, v in P.items() if k.startswith(prefix)}

    def apply(self, P, X, training=False, rng=None, state=None):
        ctx = {"training": training, "rng": make_rng(rng), "state": None}
        x = X
        for i, layer in enumerate(self.layers):
            ctx["state"] = (state or self.state).get(i)
            x = layer.forward(self._layer_params(P, i), x, ctx)
        return x

    def forward(self, X, training=False, rng=None):
        return ag.value(self.apply(self.params, np.asarray(X, dtype=float), training, rng))

    def predict(self, X):
        out = self.forward(X)
        return out[:, 0] if out.ndim == 2 and out.shape[1] == 1 else out

    def loss_value(self, P, X, Y, rng=None, training=True):
        out = self.apply(P, X, training, rng)
        Y = np.asarray(Y, dtype=float).reshape(ag.value(out).shape)
        diff = out - Y
        return ag.mean(diff * diff)

    def fit(self, X, Y, config: TrainConfig) -> FitReport:
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        if Y.ndim == 1:
            Y = Y[:, None]
        if X.shape[1:] != self.input_shape:
            raise ShapeError(f"input shape {X.shape[1:]} does not match network {self.input_shape}")
        report = train_loop(self.params, lambda P, xb, yb, rng: self.loss_value(P, xb, yb, rng),
                            X, Y, config)
        report.metrics["train_mse"] = float(np.mean((self.forward(X).reshape(Y.shape) - Y) ** 2))
        return report


def build_mlp(n_in: int, hidden=(64, 64, 64), n_out: int = 1, activation: str = "relu",
              dropout: float = 0.0, batch_norm: bool = False, seed: int = 0) -> Network:
    layers, prev = [], n_in
    for h in hidden:
        layers.append(Dense(prev, h, "linear" if batch_norm else activation))
        if batch_norm:
            layers += [BatchNorm(h), Activation(activation)]
        if dropout > 0:
            layers.append(Dropout(dropout))
        prev = h
    layers.append(Dense(prev, n_out, "linear"))
    return Network(layers, (n_in,), seed=seed)
