import math

import numpy as np
import pytest

from polyml import pipeline as pl
from polyml import serialize
from polyml.clustering import gmm_fit, kmeans_fit
from polyml.linear import fit_ridge

FAST = {
    "ols": {}, "ridge": {"model.alpha": "0.5"}, "lasso": {"model.alpha": "0.01"},
    "logistic": {"model.epochs": "50"}, "svm": {"model.max_passes": "2"},
    "svr": {"model.epochs": "50"}, "tree": {"model.max_depth": "4"},
    "random-forest": {"model.n_estimators": "5", "model.max_depth": "4"},
    "adaboost": {"model.n_estimators": "5"}, "gboost": {"model.n_estimators": "5"},
    "stack": {"model.n_estimators": "3", "model.k_folds": "3"},
    "mlp": {"model.hidden": "8,8", "model.epochs": "3"},
    "rbfn": {"model.L": "4", "model.epochs": "5", "model.kmeans_iters": "50"},
    "lstm": {"model.hidden": "4", "model.epochs": "2", "model.window": "3"},
    "gru": {"model.hidden": "4", "model.epochs": "2", "model.window": "3"},
}
CLASSIFIERS = {"logistic", "svm", "adaboost", "rbfn"}


def fit(name, **extra):
    raw = {"model.name": name, "data.n": "120", "seed": "3", **FAST[name], **extra}
    if name in CLASSIFIERS:
        raw["task"] = "classification"
    cfg = pl.build_config(raw)
    prep = pl.prepare(cfg)
    fitted, _ = pl.fit_prepared(cfg, prep)
    return cfg, prep, fitted


@pytest.mark.parametrize("name", sorted(FAST))
def test_fitted_model_round_trip(name):
    cfg, prep, fitted = fit(name)
    text = serialize.dumps(fitted)
    back = serialize.loads(text)
    assert type(back) is pl.FittedModel
    rows = prep.splits["test"]
    if cfg.task == "sequence":
        rows = rows[rows >= fitted.window - 1]
    assert np.array_equal(fitted.predict_prepared(prep.X, rows), back.predict_prepared(prep.X, rows))
    assert serialize.dumps(back) == text


def test_round_trip_file(tmp_path, rng):
    m = fit_ridge(rng.normal(size=(20, 3)), rng.normal(size=20), 0.3)
    serialize.save(m, tmp_path / "m.json")
    back = serialize.load(tmp_path / "m.json")
    assert np.array_equal(back.weights, m.weights) and back.bias == m.bias


def test_clustering_models_round_trip(rng):
    X = rng.normal(size=(60, 2))
    km = kmeans_fit(X, 3, rng=0)
    gm = gmm_fit(X, 2, rng=0)
    for m in (km, gm):
        back = serialize.loads(serialize.dumps(m))
        assert np.array_equal(back.predict(X), m.predict(X))
    assert serialize.loads(serialize.dumps(gm)).log_likelihood == gm.log_likelihood


def test_containers_and_special_values():
    obj = {1: (np.float64(0.5), [np.int64(3), None]), "nan": math.inf, (1, 2): True,
           "arr": np.arange(6, dtype=np.int32).reshape(2, 3), "obj": np.array(["a", 1], dtype=object)}
    back = serialize.loads(serialize.dumps(obj))
    assert back[1] == (0.5, [3, None])
    assert back["nan"] == math.inf and back[(1, 2)] is True
    assert back["arr"].dtype == np.int32 and back["arr"].shape == (2, 3)
    assert list(back["obj"]) == ["a", 1]


def test_refuses_foreign_types():
    with pytest.raises(ValueError):
        serialize.loads('{"__type__": "os:system", "fields": {}}')
    with pytest.raises(TypeError):
        serialize.dumps(object())
