import numpy as np
import pytest

from conftest import rel_err
from polyml.errors import TrainingDivergedError
from polyml.nn import autograd as ag
from polyml.nn.autograd import Tensor, numerical_grad, value_and_grad
from polyml.nn.optim import (AdamState, TrainConfig, adam_update, add_weight_decay,
                             clip_gradient, glorot_init, train_loop)

OPS = {
    "add_mul": lambda P: ag.tsum(P["a"] * P["b"] + P["a"]),
    "div_pow": lambda P: ag.tsum((P["a"] ** 2) / (P["b"] * P["b"] + 1.0)),
    "exp_log_tanh": lambda P: ag.tsum(ag.log(ag.exp(P["a"]) + 1.0) * ag.tanh(P["b"])),
    "sigmoid_softplus": lambda P: ag.tsum(ag.sigmoid(P["a"]) * ag.softplus(P["b"])),
    "matmul": lambda P: ag.tsum(ag.tanh(P["a"] @ P["b"].T)),
    "softmax": lambda P: ag.tsum(ag.softmax(P["a"], axis=-1) * P["b"]),
    "log_softmax": lambda P: ag.tsum(ag.log_softmax(P["a"]) * P["b"]),
    "max_mean": lambda P: ag.mean(ag.tmax(P["a"] * P["b"], axis=1)),
    "reshape_transpose": lambda P: ag.tsum(ag.transpose(ag.reshape(P["a"], (3, 4))) @ ag.reshape(P["b"], (3, 4))),
    "concat_stack": lambda P: ag.tsum(ag.concat([P["a"], P["b"]], axis=0) ** 2 * ag.stack([P["a"], P["b"]]).mean()),
    "getitem_sqrt": lambda P: ag.tsum(ag.sqrt(P["a"][:, 1:] ** 2 + 1.0) * P["b"][:, :3]),
    "where_relu": lambda P: ag.tsum(ag.where(ag.value(P["a"]) > 0, P["a"], P["b"]) + ag.relu(P["b"])),
    "broadcast": lambda P: ag.tsum((P["a"] + P["b"].sum(axis=0, keepdims=True)) ** 2),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradients(name, rng):
    P = {"a": rng.normal(size=(3, 4)), "b": rng.normal(size=(3, 4))}
    fn = OPS[name]
    _, g = value_and_grad(fn, P)
    fd = numerical_grad(lambda Q: fn({k: Tensor(v) for k, v in Q.items()}), P)
    assert rel_err(g, fd) < 1e-5


def test_tensor_basics():
    t = Tensor([[1.0, 2.0]], requires_grad=True)
    y = (t * 3).sum()
    y.backward()
    assert np.array_equal(t.grad, [[3.0, 3.0]])
    assert y.item() == 9.0 and t.shape == (1, 2)


def test_constant_function_zero_grads():
    v, g = value_and_grad(lambda P: 5.0, {"a": np.ones(3)})
    assert v == 5.0 and np.all(g["a"] == 0)


def test_adam_zero_grad_unchanged():
    p = {"w": np.array([1.0, -2.0])}
    adam_update(AdamState(), p, {"w": np.zeros(2)}, TrainConfig(lr=0.001, optimizer="adam"))
    assert np.array_equal(p["w"], [1.0, -2.0])


def test_adam_unit_step():
    p = {"w": np.array([0.0])}
    cfg = TrainConfig(lr=0.001, optimizer="adam")
    s = AdamState()
    for _ in range(2000):
        before = p["w"].copy()
        adam_update(s, p, {"w": np.array([3.7])}, cfg)
    assert abs(before[0] - p["w"][0]) == pytest.approx(0.001, rel=1e-4)
    assert (cfg.beta1, cfg.beta2) == (0.9, 0.999)


def test_clip_gradient():
    g = np.array([6.0, 8.0])
    c = clip_gradient(g, 1.0)
    assert np.linalg.norm(c) == pytest.approx(1.0) and np.allclose(c / np.linalg.norm(c), g / 10)
    assert clip_gradient(np.array([0.1, 0.2]), 1.0).tolist() == [0.1, 0.2]
    assert np.array_equal(clip_gradient(np.zeros(3), 1.0), np.zeros(3))
    d = clip_gradient({"a": np.array([3.0]), "b": np.array([4.0])}, 1.0)
    assert d["a"][0] == pytest.approx(0.6)


def test_glorot():
    W = glorot_init(200, 200, 0)
    assert abs(W.var() / (2 / 400) - 1) < 0.1
    assert abs(W.mean()) < 3 * np.sqrt(2 / 400) / 200
    assert np.array_equal(W, glorot_init(200, 200, 0))
    with pytest.raises(ValueError):
        glorot_init(0, 3, 0)


def test_weight_decay_gradient(rng):
    P = {"W": rng.normal(size=(3, 2)), "b": rng.normal(size=2)}
    X = rng.normal(size=(5, 3))
    lam = 0.01
    base = lambda Q: ag.mean((X @ Q["W"] + Q["b"]) ** 2)
    _, g = value_and_grad(base, P)
    g = add_weight_decay(P, g, lam)
    fd = numerical_grad(lambda Q: base({k: Tensor(v) for k, v in Q.items()}) + lam * np.sum(Q["W"] ** 2), P)
    assert rel_err(g, fd) < 1e-6


def test_train_config_validation():
    for bad in (dict(lr=0), dict(momentum=2), dict(dropout=1.0), dict(weight_decay=-1),
                dict(optimizer="x"), dict(beta1=1.0), dict(clip=0), dict(batch_size=0)):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


def test_train_loop_descends_and_diverges(rng):
    X = rng.normal(size=(30, 2))
    Y = X @ np.array([[1.0], [-2.0]])
    loss = lambda P, xb, yb, r: ag.mean((xb @ P["W"] - yb) ** 2)
    P = {"W": np.zeros((2, 1))}
    rep = train_loop(P, loss, X, Y, TrainConfig(lr=0.05, epochs=50))
    h = rep.loss_history
    assert all(b <= a for a, b in zip(h, h[1:]))
    assert np.allclose(P["W"].ravel(), [1, -2], atol=1e-2)
    with pytest.raises(TrainingDivergedError), np.errstate(all="ignore"):
        train_loop({"W": np.zeros((2, 1))}, loss, X * 1e3, Y * 1e3, TrainConfig(lr=50, epochs=200))
