"""Simple RNN, LSTM and GRU cells, stacked sequence regressors, BPTT training
and bidirectional merging.

Sequences are (batch, time, feature). Initial states are zero. The GRU
candidate uses an input weight on x(t), ``g = tanh(x Wxg + (r*h) Whg + bg)``,
matching the LSTM candidate's form.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeError
from ..numeric import child_seeds, make_rng
from . import autograd as ag
from .optim import FitReport, TrainConfig, glorot_init, train_loop

CELL_WEIGHTS = {
    "simple": ["Wx", "Wy", "b"],
    "lstm": ["Wxf", "Whf", "bf", "Wxi", "Whi", "bi", "Wxo", "Who", "bo", "Wxg", "Whg", "bg"],
    "gru": ["Wxr", "Whr", "br", "Wxz", "Whz", "bz", "Wxg", "Whg", "bg"],
}


@dataclass
class RnnCell:
    kind: str
    n_in: int
    n_hidden: int
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in CELL_WEIGHTS:
            raise ValueError(f"unknown cell kind {self.kind!r}")
        if not self.params:
            self.params = init_cell_params(self.kind, self.n_in, self.n_hidden, self.seed)
        missing = set(CELL_WEIGHTS[self.kind]) - set(self.params)
        if missing:
            raise ShapeError(f"{self.kind} cell lacks weights {sorted(missing)}")
        for name, p in self.params.items():
            if name.startswith("b"):
                expect = (self.n_hidden,)
            elif name.startswith("Wx"):
                expect = (self.n_in, self.n_hidden)
            else:
                expect = (self.n_hidden, self.n_hidden)
            if np.shape(p) != expect:
                raise ShapeError(f"{name} has shape {np.shape(p)}, expected {expect}")


def init_cell_params(kind, n_in, n_hidden, seed=0) -> dict:
    rng = make_rng(seed)
    out = {}
    for name in CELL_WEIGHTS[kind]:
        if name.startswith("b"):
            out[name] = np.ones(n_hidden) if name == "bf" else np.zeros(n_hidden)
        elif name.startswith("Wx"):
            out[name] = glorot_init(n_in, n_hidden, rng)
        else:
            out[name] = glorot_init(n_hidden, n_hidden, rng)
    return out


def zero_state(kind, batch, n_hidden):
    h = np.zeros((batch, n_hidden))
    return (h, np.zeros((batch, n_hidden))) if kind == "lstm" else h


def cell_step(kind, P, x, state):
    """One time step on a batch; works on ndarrays or Tensors. Returns (y, state)."""
    if kind == "simple":
        y = ag.tanh(x @ P["Wx"] + state @ P["Wy"] + P["b"])
        return y, y
    if kind == "lstm":
        h, c = state
        f = ag.sigmoid(x @ P["Wxf"] + h @ P["Whf"] + P["bf"])
        i = ag.sigmoid(x @ P["Wxi"] + h @ P["Whi"] + P["bi"])
        o = ag.sigmoid(x @ P["Wxo"] + h @ P["Who"] + P["bo"])
        g = ag.tanh(x @ P["Wxg"] + h @ P["Whg"] + P["bg"])
        c = f * c + i * g
        h = o * ag.tanh(c)
        return h, (h, c)
    h = state
    r = ag.sigmoid(x @ P["Wxr"] + h @ P["Whr"] + P["br"])
    z = ag.sigmoid(x @ P["Wxz"] + h @ P["Whz"] + P["bz"])
    g = ag.tanh(x @ P["Wxg"] + (r * h) @ P["Whg"] + P["bg"])
    h = z * h + (1.0 - z) * g
    return h, h


def _batch(x, n_in):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[-1] != n_in:
        raise ShapeError(f"input has {x.shape[-1]} features, cell expects {n_in}")
    return x, single


def simple_rnn_step(cell: RnnCell, x_t, y_prev):
    x, single = _batch(x_t, cell.n_in)
    y = ag.value(cell_step("simple", cell.params, x, np.atleast_2d(y_prev))[0])
    return y[0] if single else y


def lstm_step(cell: RnnCell, x_t, state):
    x, single = _batch(x_t, cell.n_in)
    h, c = (np.atleast_2d(s) for s in state)
    y, (h, c) = cell_step("lstm", cell.params, x, (h, c))
    y, h, c = ag.value(y), ag.value(h), ag.value(c)
    return (y[0], (h[0], c[0])) if single else (y, (h, c))


def gru_step(cell: RnnCell, x_t, h_prev):
    x, single = _batch(x_t, cell.n_in)
    h = ag.value(cell_step("gru", cell.params, x, np.atleast_2d(h_prev))[0])
    return h[0] if single else h


def _as_sequences(X):
    if isinstance(X, (list, tuple)) and X and np.ndim(X[0]) >= 1:
        lengths = {len(s) for s in X}
        if len(lengths) > 1:
            raise ShapeError("ragged sequences: all sequences must have the same length")
    X = np.asarray(X, dtype=float)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3:
        raise ShapeError("sequences must be (batch, time, feature)")
    if X.shape[1] < 1:
        raise ShapeError("sequences need T >= 1")
    return X


def _run(kind, P, X, n_hidden):
    """Tensor-aware unroll; returns list of per-step outputs (batch, hidden)."""
    B, T = ag.value(X).shape[:2]
    state = zero_state(kind, B, n_hidden)
    outs = []
    for t in range(T):
        y, state = cell_step(kind, P, X[:, t, :], state)
        outs.append(y)
    return outs


def run_sequence(cell: RnnCell, X) -> np.ndarray:
    """Outputs for every time step, shape (batch, time, hidden); 2-D input gives (time, hidden)."""
    seqs = _as_sequences(X)  # validates raggedness before anything inspects X
    single = np.ndim(X) == 2
    X = seqs
    if X.shape[2] != cell.n_in:
        raise ShapeError(f"input has {X.shape[2]} features, cell expects {cell.n_in}")
    out = np.stack([ag.value(y) for y in _run(cell.kind, cell.params, X, cell.n_hidden)], axis=1)
    return out[0] if single else out


@dataclass
class RecurrentRegressor:
    """Stacked recurrent layers with a linear read-out at every step.

    Parameters are stored flat as ``"<layer>.<weight>"`` plus ``"head.W"`` and
    ``"head.b"``.
    """

    kind: str
    n_in: int
    hidden: tuple = (64, 32)
    n_out: int = 1
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(self.hidden)
        if not self.params:
            seeds = child_seeds(make_rng(self.seed), len(self.hidden) + 1)
            sizes = (self.n_in,) + self.hidden
            for i, h in enumerate(self.hidden):
                for k, v in init_cell_params(self.kind, sizes[i], h, seeds[i]).items():
                    self.params[f"{i}.{k}"] = v
            self.params["head.W"] = glorot_init(self.hidden[-1], self.n_out, seeds[-1])
            self.params["head.b"] = np.zeros(self.n_out)

    def cells(self) -> list[RnnCell]:
        sizes = (self.n_in,) + self.hidden
        return [RnnCell(self.kind, sizes[i], h,
                        {k.split(".", 1)[1]: v for k, v in self.params.items() if k.startswith(f"{i}.")})
                for i, h in enumerate(self.hidden)]

    def apply(self, P, X):
        """Per-step predictions (batch, time, n_out) as a Tensor or array."""
        seq = X
        for i, h in enumerate(self.hidden):
            Pi = {k.split(".", 1)[1]: v for k, v in P.items() if k.startswith(f"{i}.")}
            seq = ag.stack(_run(self.kind, Pi, seq, h), axis=1)
        return seq @ P["head.W"] + P["head.b"]

    def predict(self, X) -> np.ndarray:
        """Prediction at the last time step, shape (batch,) for one output."""
        out = ag.value(self.apply(self.params, _as_sequences(X)))[:, -1, :]
        return out[:, 0] if self.n_out == 1 else out

    def loss(self, P, X, Y, loss_window: int):
        """Sum over the last ``loss_window`` steps of the per-step mean squared error."""
        out = self.apply(P, X)
        T = ag.value(out).shape[1]
        Y = np.asarray(Y, dtype=float).reshape(ag.value(out).shape[0], -1, self.n_out)
        diff = out[:, T - loss_window :, :] - Y[:, Y.shape[1] - loss_window :, :]
        return ag.mean(diff * diff, axis=(0, 2)).sum()


def bptt_train(model: RecurrentRegressor, X, Y, loss_window: int = 1,
               config: TrainConfig | None = None) -> FitReport:
    """Backpropagation through time over the unrolled stack.

    ``Y`` is (batch, time, n_out) per-step targets, or (batch, n_out) / (batch,)
    targets for the final step only (then ``loss_window`` must be 1).
    """
    config = config or TrainConfig(optimizer="adam", lr=0.001)
    X = _as_sequences(X)
    T = X.shape[1]
    if not 1 <= loss_window <= T:
        raise ValueError(f"loss_window must be in [1, {T}]")
    Y = np.asarray(Y, dtype=float)
    if Y.ndim < 3:
        if loss_window != 1:
            raise ValueError("final-step targets only support loss_window = 1")
        Y = Y.reshape(len(Y), 1, -1)
    report = train_loop(model.params, lambda P, xb, yb, rng: model.loss(P, xb, yb, loss_window),
                        X, Y, config)
    report.metrics["train_mse"] = float(ag.value(model.loss(model.params, X, Y, loss_window)) / loss_window)
    return report


def bidirectional(forward_cell: RnnCell, backward_cell: RnnCell, X, merge: str = "mean"):
    """Run one cell forward and one on the reversed sequence; merge per step.

    ``merge="mean"`` averages (regression); ``"geometric"`` averages in log space,
    for probability outputs.
    """
    if forward_cell.n_hidden != backward_cell.n_hidden:
        raise ShapeError("forward and backward cells must have the same hidden size")
    seqs = _as_sequences(X)
    single = np.ndim(X) == 2
    X = seqs
    fwd = run_sequence(forward_cell, X)
    bwd = run_sequence(backward_cell, X[:, ::-1, :])[:, ::-1, :]
    if merge == "mean":
        out = 0.5 * (fwd + bwd)
    elif merge == "geometric":
        with np.errstate(divide="ignore"):
            out = np.exp(0.5 * (np.log(fwd) + np.log(bwd)))
    else:
        raise ValueError("merge must be 'mean' or 'geometric'")
    return out[0] if single else out


def make_windows(X, y, window: int):
    """Sliding windows of length ``window`` ending at each row from window-1 on."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if window < 1 or window > len(X):
        raise ValueError("window must be in [1, n_rows]")
    idx = np.arange(window - 1, len(X))
    seqs = np.stack([X[i - window + 1 : i + 1] for i in idx])
    return seqs, y[idx]
