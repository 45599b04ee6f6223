"""Run configuration, model registry and the train / grid-search / importance /
plot-data procedures behind the command line.

A config file is flat ``key = value`` text with dotted keys::

    # comments start with '#'
    task = regression
    model.name = random-forest
    model.n_estimators = 100
    data.source = synth-hdpe
    data.n = 2400
    split.train = 0.75
    split.val = 0
    split.test = 0.25

Unknown keys and ill-typed values raise :class:`ConfigError` naming the key.
"""
from __future__ import annotations

import csv
import io
import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import clustering as cl
from . import ensemble as ens
from . import linear, metrics, svm
from .data import (CATEGORICAL, NUMERIC, Dataset, SplitSpec, drop_correlated, fit_standardizer,
                   kfold_indices, read_csv, split_indices, synth_hdpe, synth_quadratic, synth_smiles)
from .errors import ConfigError, DataError, PolymlError, UndefinedMetricError
from .trees import fit_tree

SCHEMA_VERSION = 1
SOURCES = ("synth-hdpe", "synth-quadratic", "synth-smiles", "file")
TASKS = ("regression", "classification", "sequence", "clustering")
SEED_MAX = 2**64 - 1


# --- typed parameters ----------------------------------------------------------


@dataclass(frozen=True)
class Param:
    kind: str  # int | float | bool | str | ints | choice
    default: object = None
    lo: float | None = None
    hi: float | None = None
    choices: tuple = ()
    optional: bool = False  # accepts "none"
    open_lo: bool = False

    def coerce(self, key: str, raw):
        if isinstance(raw, str):
            text = raw.strip()
            if self.optional and text.lower() in ("none", "null", ""):
                return None
        else:
            text = raw
            if raw is None:
                if self.optional:
                    return None
                raise ConfigError(f"{key}: value required")
        try:
            if self.kind == "int":
                v = _as_int(text)
            elif self.kind == "float":
                v = float(text)
                if not math.isfinite(v):
                    raise ValueError
            elif self.kind == "bool":
                v = _as_bool(text)
            elif self.kind == "ints":
                items = text.split(",") if isinstance(text, str) else list(text)
                v = tuple(_as_int(t) for t in items)
                if not v:
                    raise ValueError
            elif self.kind == "choice":
                v = str(text)
                if v not in self.choices:
                    raise ConfigError(f"{key}: {v!r} is not one of {', '.join(self.choices)}")
            else:
                v = str(text)
        except ConfigError:
            raise
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: cannot parse {raw!r} as {self.kind}") from None
        for x in (v if self.kind == "ints" else (v,)):
            if self.lo is not None and (x < self.lo or (self.open_lo and x == self.lo)):
                op = ">" if self.open_lo else ">="
                raise ConfigError(f"{key}: must be {op} {self.lo}, got {x}")
            if self.hi is not None and x > self.hi:
                raise ConfigError(f"{key}: must be <= {self.hi}, got {x}")
        return v


def _as_int(t) -> int:
    if isinstance(t, bool):
        raise ValueError
    if isinstance(t, int):
        return t
    if isinstance(t, float):
        if not t.is_integer():
            raise ValueError
        return int(t)
    return int(str(t).strip())


def _as_bool(t) -> bool:
    if isinstance(t, bool):
        return t
    s = str(t).strip().lower()
    if s in ("true", "yes", "1", "on"):
        return True
    if s in ("false", "no", "0", "off"):
        return False
    raise ValueError


def _pos(kind="float", default=None, **kw):
    return Param(kind, default, lo=0, open_lo=True, **kw)


GENERAL = {
    "task": Param("choice", None, choices=TASKS, optional=True),
    "seed": Param("int", 0, lo=0, hi=SEED_MAX),
    "out": Param("str", "run"),
    "data.source": Param("choice", "synth-hdpe", choices=SOURCES),
    "data.n": Param("int", 2400, lo=1),
    "data.noise_sd": Param("float", 0.05, lo=0),
    "data.path": Param("str", None, optional=True),
    "data.label": Param("str", None, optional=True),
    "data.categorical": Param("str", "", optional=True),
    "split.train": Param("float", 0.75, lo=0, hi=1),
    "split.val": Param("float", 0.0, lo=0, hi=1),
    "split.test": Param("float", 0.25, lo=0, hi=1),
    "split.shuffle": Param("bool", None, optional=True),
    "preprocess.standardize": Param("bool", True),
    "preprocess.drop_correlated": Param("bool", False),
    "preprocess.threshold": Param("float", 0.95, lo=0, hi=1),
    "cv.k_folds": Param("int", 5, lo=2),
}


# --- model registry ----------------------------------------------------------------

ADAM = {"lr": _pos("float", 0.001), "beta1": Param("float", 0.9, lo=0, hi=0.999999),
        "beta2": Param("float", 0.999, lo=0, hi=0.999999)}


@dataclass
class ModelEntry:
    family: str  # supervised | sequence | cluster | toy
    tasks: tuple
    params: dict
    fit: Callable
    scale_y: bool = False
    importance: bool = False


def _train_config(hp, seed):
    from .nn.optim import TrainConfig

    return TrainConfig(optimizer="adam", lr=hp["lr"], beta1=hp["beta1"], beta2=hp["beta2"],
                       epochs=hp["epochs"], batch_size=hp["batch_size"], seed=seed)


def _tree_opts(hp):
    return {"max_depth": hp.get("max_depth"), "min_samples_leaf": hp.get("min_samples_leaf", 1)}


def _fit_ols(X, y, hp, seed, task):
    return linear.fit_ols(X, y), []


def _fit_ridge(X, y, hp, seed, task):
    return linear.fit_ridge(X, y, hp["alpha"]), []


def _fit_lasso(X, y, hp, seed, task):
    return linear.fit_lasso(X, y, hp["alpha"], max_iter=hp["max_iter"], tol=hp["tol"]), []


def _fit_logistic(X, y, hp, seed, task):
    _binary(y, "logistic")
    m = linear.fit_logistic(X, y, lr=hp["lr"], epochs=hp["epochs"])
    return m, [float(v) for v in m.history]


def _fit_svm(X, y, hp, seed, task):
    _binary(y, "svm")
    k = svm.Kernel(hp["kernel"], gamma=hp["gamma"] or 1.0 / X.shape[1], degree=hp["degree"])
    return _PlusMinus(svm.fit_svm_dual(X, 2 * y - 1, C=hp["C"], kernel=k,
                                       max_passes=hp["max_passes"], seed=seed)), []


def _fit_svr(X, y, hp, seed, task):
    m = svm.fit_svr_linear(X, y, C=hp["C"], epsilon=hp["epsilon"], epochs=hp["epochs"], lr=hp["lr"])
    return m, [float(v) for v in m.history]


def _fit_tree(X, y, hp, seed, task):
    crit = hp["criterion"] or ("variance" if task == "regression" else "gini")
    return fit_tree(X, y, criterion=crit, task=task, rng=seed, **_tree_opts(hp)), []


def _fit_forest(X, y, hp, seed, task):
    return ens.fit_random_forest(X, y, hp["n_estimators"], hp["max_features"], _tree_opts(hp),
                                 rng=seed, task=task), []


def _fit_adaboost(X, y, hp, seed, task):
    _binary(y, "adaboost")
    return _PlusMinus(ens.fit_adaboost(X, 2 * y - 1, hp["n_estimators"], rng=seed)), []


def _fit_gboost(X, y, hp, seed, task):
    m = ens.fit_gradient_boosting(X, y, hp["n_estimators"], hp["learning_rate"],
                                  tree_options={"max_depth": hp["max_depth"]},
                                  leaf_l2=hp["leaf_l2"], rng=seed)
    return m, [float(v) for v in m.history]


def _fit_stack(X, y, hp, seed, task):
    factories = [lambda X_, y_, r: linear.fit_ridge(X_, y_, hp["alpha"]),
                 ens.tree_learner(max_depth=hp["max_depth"], task="regression"),
                 lambda X_, y_, r: ens.fit_random_forest(X_, y_, hp["n_estimators"], rng=r,
                                                         task="regression")]
    return ens.fit_stacking(factories, X, y, hp["k_folds"], rng=seed), []


def _fit_mlp(X, y, hp, seed, task):
    from .nn.mlp import build_mlp

    net = build_mlp(X.shape[1], hp["hidden"], 1, hp["activation"], hp["dropout"],
                    hp["batch_norm"], seed=seed)
    report = net.fit(X, y, _train_config(hp, seed))
    return net, report.loss_history


def _fit_rbfn(X, y, hp, seed, task):
    _binary(y, "rbfn")
    m = cl.rbfn_fit(X, y, hp["L"], hp["P"], hp["kmeans_iters"], hp["lr"], hp["epochs"], rng=seed)
    return m, list(m.history)


def _fit_recurrent(kind):
    def fit(X, y, hp, seed, task):
        from .nn.recurrent import RecurrentRegressor, bptt_train

        model = RecurrentRegressor(kind, X.shape[2], hp["hidden"], 1, seed=seed)
        report = bptt_train(model, X, y, 1, _train_config(hp, seed))
        return model, report.loss_history

    return fit


def _fit_cnn(X, y, hp, seed, task):
    from .nn.conv import cnn_architecture, fit_cnn_regressor

    arch = cnn_architecture(X.shape[1:], hp["filters"], (hp["kernel"],) * len(hp["filters"]),
                            hp["dense"], batch_norm=hp["batch_norm"])
    net, report = fit_cnn_regressor(X, y, arch, _train_config(hp, seed), seed)
    return net, report.loss_history


def _fit_kmeans(X, hp, seed):
    m = cl.kmeans_fit(X, hp["k"], hp["n_init"], rng=seed)
    return m, m.labels, {"inertia": float(m.inertia)}, [float(v) for v in m.history]


def _fit_dbscan(X, hp, seed):
    r = cl.dbscan_fit(X, hp["eps"], hp["min_samples"])
    return r, r.labels, {"n_noise": int(np.sum(r.labels == cl.NOISE))}, []


def _fit_gmm(X, hp, seed):
    m = cl.gmm_fit(X, hp["k"], rng=seed)
    return m, m.predict(X), {"log_likelihood": float(m.log_likelihood[-1])}, \
        [float(-v) for v in m.log_likelihood]


def _fit_hierarchical(X, hp, seed):
    d = cl.hierarchical_fit(X, hp["linkage"])
    return d, cl.cut(d, k=hp["k"]), {}, []


def _fit_kpca(X, hp, seed):
    k = svm.Kernel(hp["kernel"], gamma=hp["gamma"] or 1.0 / X.shape[1], degree=hp["degree"])
    m = cl.kernel_pca_fit(X, k, hp["n_components"])
    return m, None, {"eigenvalues": [float(v) for v in m.eigenvalues]}, []


@dataclass
class _PlusMinus:
    """Adapter for learners trained on {-1, +1} labels; predicts {0, 1}."""

    inner: object

    def predict(self, X):
        return (np.asarray(self.inner.predict(X)) > 0).astype(int)


def _binary(y, name):
    if np.unique(y).size > 2:
        raise ConfigError(f"model.name: {name} supports binary classification only")


TREE = {"max_depth": Param("int", None, lo=1, optional=True),
        "min_samples_leaf": Param("int", 1, lo=1)}
KERNEL = {"kernel": Param("choice", "rbf", choices=("linear", "polynomial", "rbf")),
          "gamma": _pos("float", None, optional=True), "degree": Param("int", 2, lo=1)}
NN = dict(ADAM, epochs=Param("int", 100, lo=0), batch_size=Param("int", 32, lo=1, optional=True))

REGISTRY: dict[str, ModelEntry] = {
    "ols": ModelEntry("supervised", ("regression",), {}, _fit_ols),
    "ridge": ModelEntry("supervised", ("regression",), {"alpha": Param("float", 1.0, lo=0)}, _fit_ridge),
    "lasso": ModelEntry("supervised", ("regression",),
                        {"alpha": Param("float", 1.0, lo=0), "max_iter": Param("int", 100_000, lo=1),
                         "tol": _pos("float", 1e-6)},
                        _fit_lasso),
    "logistic": ModelEntry("supervised", ("classification",),
                           {"lr": _pos("float", 0.1), "epochs": Param("int", 1000, lo=1)}, _fit_logistic),
    "svm": ModelEntry("supervised", ("classification",),
                      dict(KERNEL, C=_pos("float", 1.0), max_passes=Param("int", 5, lo=1)), _fit_svm),
    "svr": ModelEntry("supervised", ("regression",),
                      {"C": _pos("float", 1.0), "epsilon": Param("float", 0.1, lo=0),
                       "epochs": Param("int", 2000, lo=1), "lr": _pos("float", 0.01)},
                      _fit_svr, scale_y=True),
    "tree": ModelEntry("supervised", ("regression", "classification"),
                       dict(TREE, criterion=Param("choice", None, optional=True,
                                                  choices=("variance", "gini", "entropy", "gain_ratio"))),
                       _fit_tree, importance=True),
    "random-forest": ModelEntry("supervised", ("regression", "classification"),
                                dict(TREE, n_estimators=Param("int", 100, lo=1),
                                     max_features=Param("int", None, lo=1, optional=True)),
                                _fit_forest, importance=True),
    "adaboost": ModelEntry("supervised", ("classification",),
                           {"n_estimators": Param("int", 50, lo=1)}, _fit_adaboost),
    "gboost": ModelEntry("supervised", ("regression",),
                         {"n_estimators": Param("int", 100, lo=1), "learning_rate": _pos("float", 0.1),
                          "max_depth": Param("int", 3, lo=1), "leaf_l2": Param("float", 0.0, lo=0)},
                         _fit_gboost, importance=True),
    "stack": ModelEntry("supervised", ("regression",),
                        {"k_folds": Param("int", 5, lo=2), "alpha": Param("float", 1.0, lo=0),
                         "max_depth": Param("int", 6, lo=1), "n_estimators": Param("int", 20, lo=1)},
                        _fit_stack),
    "mlp": ModelEntry("supervised", ("regression",),
                      dict(NN, hidden=Param("ints", (64, 64, 64), lo=1),
                           dropout=Param("float", 0.25, lo=0, hi=0.99),
                           activation=Param("choice", "relu", choices=("relu", "sigmoid", "tanh")),
                           batch_norm=Param("bool", False)),
                      _fit_mlp, scale_y=True),
    "rbfn": ModelEntry("supervised", ("classification",),
                       {"L": Param("int", 10, lo=2), "P": Param("int", 2, lo=1),
                        "kmeans_iters": Param("int", 2000, lo=0), "lr": _pos("float", 0.5),
                        "epochs": Param("int", 200, lo=1)}, _fit_rbfn),
    "lstm": ModelEntry("sequence", ("sequence",),
                       dict(NN, hidden=Param("ints", (64, 32), lo=1), window=Param("int", 1, lo=1),
                            epochs=Param("int", 50, lo=0)),
                       _fit_recurrent("lstm"), scale_y=True),
    "gru": ModelEntry("sequence", ("sequence",),
                      dict(NN, hidden=Param("ints", (64, 32), lo=1), window=Param("int", 1, lo=1),
                           epochs=Param("int", 50, lo=0)),
                      _fit_recurrent("gru"), scale_y=True),
    "cnn": ModelEntry("image", ("regression",),
                      dict(NN, filters=Param("ints", (8, 4), lo=1), kernel=Param("int", 3, lo=1),
                           dense=Param("ints", (16, 8), lo=1), batch_norm=Param("bool", True),
                           max_len=Param("int", 65, lo=1), epochs=Param("int", 50, lo=0),
                           batch_size=Param("int", 16, lo=1, optional=True)),
                      _fit_cnn, scale_y=True),
    "transformer-toy": ModelEntry("toy", ("sequence",),
                                  {"length": Param("int", 6, lo=1), "vocab": Param("int", 10, lo=2),
                                   "n_train": Param("int", 512, lo=1), "n_test": Param("int", 200, lo=1),
                                   "epochs": Param("int", 60, lo=0), "lr": _pos("float", 0.01),
                                   "batch_size": Param("int", 32, lo=1),
                                   "d_model": Param("int", 16, lo=2), "n_heads": Param("int", 2, lo=1),
                                   "n_layers": Param("int", 2, lo=1), "d_ff": Param("int", 32, lo=1)},
                                  None),
    "kmeans": ModelEntry("cluster", ("clustering",),
                         {"k": Param("int", 3, lo=1), "n_init": Param("int", 10, lo=1),
                          "sweep": Param("bool", True)}, _fit_kmeans),
    "dbscan": ModelEntry("cluster", ("clustering",),
                         {"eps": _pos("float", 0.5), "min_samples": Param("int", 5, lo=1)}, _fit_dbscan),
    "gmm": ModelEntry("cluster", ("clustering",), {"k": Param("int", 3, lo=1)}, _fit_gmm),
    "hierarchical": ModelEntry("cluster", ("clustering",),
                               {"k": Param("int", 3, lo=1),
                                "linkage": Param("choice", "single",
                                                 choices=("single", "complete", "average"))},
                               _fit_hierarchical),
    "kpca": ModelEntry("cluster", ("clustering",),
                       dict(KERNEL, n_components=Param("int", 2, lo=1)), _fit_kpca),
}

DEFAULT_TASK = {"supervised": "regression", "sequence": "sequence", "image": "regression",
                "toy": "sequence", "cluster": "clustering"}


# --- config ------------------------------------------------------------------------


@dataclass
class RunConfig:
    task: str
    model: str
    hyperparameters: dict
    data: dict
    split: SplitSpec
    preprocess: dict
    seed: int
    out: str
    k_folds: int = 5
    grid: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"task": self.task, "model": self.model, "hyperparameters": _plain(self.hyperparameters),
                "data": dict(self.data), "seed": self.seed,
                "split": {"train": self.split.train, "val": self.split.val, "test": self.split.test,
                          "shuffle": self.split.shuffle},
                "preprocess": dict(self.preprocess)}


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Flat ``key = value`` lines into an ordered dict of raw strings."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in out:
            raise ConfigError(f"{key}: duplicate key ({source}:{lineno})")
        out[key] = value
    return out


def read_config(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"--config: file not found: {p}")
    return parse_config_text(p.read_text(encoding="utf-8"), str(p))


def build_config(raw: dict, seed=None, out=None) -> RunConfig:
    """Validate raw key/values into a :class:`RunConfig`; CLI seed/out override."""
    raw = dict(raw)
    if "model.name" not in raw:
        raise ConfigError("model.name: required")
    name = raw.pop("model.name").strip()
    if name not in REGISTRY:
        raise ConfigError(f"model.name: unknown model {name!r}; registered models: "
                          + ", ".join(REGISTRY))
    entry = REGISTRY[name]
    vals, hp, grid = {}, {}, {}
    for key, value in raw.items():
        if key in GENERAL:
            vals[key] = GENERAL[key].coerce(key, value)
        elif key.startswith("model."):
            pname = key[len("model."):]
            if pname not in entry.params:
                raise ConfigError(f"{key}: unknown hyperparameter for {name}; valid: "
                                  + (", ".join(entry.params) or "(none)"))
            hp[pname] = entry.params[pname].coerce(key, value)
        elif key.startswith("grid."):
            pname = key[len("grid."):]
            if pname not in entry.params:
                raise ConfigError(f"{key}: unknown hyperparameter for {name}")
            grid[pname] = parse_grid_values(key, value, entry.params[pname])
        else:
            raise ConfigError(f"{key}: unknown key")
    for k, p in GENERAL.items():
        vals.setdefault(k, p.default)
    for k, p in entry.params.items():
        hp.setdefault(k, p.default)
    if seed is not None:
        vals["seed"] = GENERAL["seed"].coerce("--seed", seed)
    if out is not None:
        vals["out"] = str(out)
    task = vals["task"] or DEFAULT_TASK[entry.family]
    if task not in entry.tasks:
        raise ConfigError(f"task: model {name} supports {', '.join(entry.tasks)}, not {task}")
    shuffle = vals["split.shuffle"]
    if shuffle is None:
        shuffle = task != "sequence"
    if task == "sequence" and shuffle:
        raise ConfigError("split.shuffle: sequence models need contiguous (unshuffled) splits")
    fr = (vals["split.train"], vals["split.val"], vals["split.test"])
    if vals["split.train"] <= 0 or abs(sum(fr) - 1.0) > 1e-9:
        raise ConfigError(f"split: fractions {fr} must be non-negative, train > 0, summing to 1")
    source = vals["data.source"]
    if source == "file":
        for k in ("data.path", "data.label"):
            if not vals[k]:
                raise ConfigError(f"{k}: required when data.source = file")
    if name == "cnn" and source not in ("synth-smiles", "file"):
        raise ConfigError("data.source: cnn needs SMILES data (synth-smiles or file)")
    if source == "synth-smiles" and name != "cnn":
        raise ConfigError("data.source: synth-smiles only feeds the cnn model")
    if source == "synth-quadratic" and task in ("classification", "sequence"):
        raise ConfigError(f"data.source: synth-quadratic has no {task} target")
    if name in ("rbfn",) and hp["P"] >= hp["L"]:
        raise ConfigError("model.P: must be smaller than model.L")
    data = {k[5:]: vals[k] for k in GENERAL if k.startswith("data.")}
    if "data.n" not in raw and source == "synth-quadratic":
        data["n"] = 200
    if "data.n" not in raw and source == "synth-smiles":
        data["n"] = 20
    return RunConfig(task, name, hp, data,
                     SplitSpec(*fr, shuffle=shuffle, seed=vals["seed"]),
                     {"standardize": vals["preprocess.standardize"],
                      "drop_correlated": vals["preprocess.drop_correlated"],
                      "threshold": vals["preprocess.threshold"]},
                     vals["seed"], vals["out"], vals["cv.k_folds"], grid)


def parse_grid_values(key, text: str, param: Param) -> list:
    """Grid cells are ``;``-separated when any ``;`` is present, otherwise ``,``-separated."""
    sep = ";" if ";" in text else ("," if param.kind != "ints" else ";")
    items = [t for t in (s.strip() for s in text.split(sep)) if t]
    if not items:
        raise ConfigError(f"{key}: grid needs at least one value")
    return [param.coerce(key, t) for t in items]


def _plain(v):
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, (tuple, list)):
        return [_plain(x) for x in v]
    return v


# --- data ----------------------------------------------------------------------------


def generate(source: str, n: int, seed: int = 0, noise_sd: float = 0.05) -> Dataset:
    if n < 1:
        raise DataError("n must be >= 1")
    if source == "synth-hdpe":
        return synth_hdpe(n, seed, noise_sd)
    if source == "synth-quadratic":
        return synth_quadratic(n, seed, noise_sd)
    if source == "synth-smiles":
        return synth_smiles(n, seed)
    raise ConfigError(f"--source: unknown source {source!r}; choose from "
                      + ", ".join(s for s in SOURCES if s != "file"))


def schema_lines(d: Dataset) -> list[str]:
    lines = [f"{c}\t{d.kinds[c]}" + ("\tlabel" if c == d.label else "") for c in d.columns]
    return lines + [f"# rows: {d.n_rows}"]


def load_dataset(cfg: RunConfig) -> Dataset:
    data = cfg.data
    if data["source"] != "file":
        return generate(data["source"], data["n"], cfg.seed, data["noise_sd"])
    path = Path(data["path"])
    if not path.is_file():
        raise DataError(f"data.path: file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        header = next(csv.reader(fh), None)
    if not header:
        raise DataError(f"data.path: {path} has no header row")
    cats = {c.strip() for c in (data["categorical"] or "").split(",") if c.strip()}
    if cfg.task == "classification":
        cats.add(data["label"])
    if cfg.model == "cnn":
        cats.add("smiles")
    unknown = (cats | {data["label"]}) - set(header)
    if unknown:
        raise ConfigError(f"data: columns {sorted(unknown)} not in {path} header {header}")
    schema = [(c, CATEGORICAL if c in cats else NUMERIC) for c in header]
    from .data import drop_missing

    return drop_missing(read_csv(path, schema, label=data["label"]))


@dataclass
class Prepared:
    X: np.ndarray  # rows x features (or images)
    y: np.ndarray
    features: list
    splits: dict  # name -> row indices
    index: np.ndarray  # original row ids
    classes: list | None = None
    x_scaler: object = None
    y_mean: float = 0.0
    y_std: float = 1.0


def prepare(cfg: RunConfig, d: Dataset | None = None) -> Prepared:
    """Split first, then fit the correlation filter and scalers on the training rows only."""
    d = load_dataset(cfg) if d is None else d
    n = d.n_rows
    if n == 0:
        raise DataError("dataset is empty")
    idx = dict(zip(("train", "val", "test"), split_indices(n, cfg.split)))
    tr = idx["train"]
    if cfg.model == "cnn":
        from .nn.conv import encode_smiles_batch

        X = encode_smiles_batch(list(d.values["smiles"]), max_len=cfg.hyperparameters["max_len"])
        features = ["smiles"]
        y = d.y().astype(float)
    else:
        features = [c for c in d.feature_names if d.kinds[c] == NUMERIC]
        if len(features) != len(d.feature_names):
            bad = sorted(set(d.feature_names) - set(features))
            raise ConfigError(f"data.categorical: categorical features {bad} are not supported here")
        if not features:
            raise DataError("no numeric feature columns")
        if cfg.preprocess["drop_correlated"] and len(features) > 1:
            kept = drop_correlated(d.take(tr), cfg.preprocess["threshold"], features).feature_names
            features = [c for c in features if c in kept]
        X = d.X(features).astype(float)
        y = d.y()
    classes = None
    if cfg.task == "classification":
        if d.kinds[d.label] == NUMERIC:
            # numeric labels (synthetic MI) are split at the training median into low / high
            thr = float(np.median(y[tr]))
            y = np.where(y > thr, "high", "low").astype(object)
        classes = sorted(set(y.tolist()), key=str)
        if len(classes) < 2:
            raise DataError("classification needs at least two classes")
        lookup = {c: i for i, c in enumerate(classes)}
        y = np.array([lookup[v] for v in y.tolist()], dtype=int)
    elif cfg.task != "clustering" or d.label is not None:
        y = np.asarray(y, dtype=float)
    prep = Prepared(X, y, features, idx, np.arange(n), classes)
    if cfg.preprocess["standardize"] and cfg.model != "cnn":
        if len(tr) < 2:
            raise DataError("standardizing needs at least 2 training rows")
        prep.x_scaler = fit_standardizer(X[tr], features)
        prep.X = prep.x_scaler.transform(X)
    if REGISTRY[cfg.model].scale_y:
        ytr = prep.y[tr]
        prep.y_mean = float(ytr.mean())
        prep.y_std = float(ytr.std(ddof=1)) if len(ytr) > 1 and ytr.std() > 0 else 1.0
    return prep


# --- fitted bundle ------------------------------------------------------------------


@dataclass
class FittedModel:
    name: str
    task: str
    features: list
    estimator: object
    x_scaler: object = None
    y_mean: float = 0.0
    y_std: float = 1.0
    classes: list | None = None
    window: int = 1
    hyperparameters: dict = field(default_factory=dict)

    def predict_prepared(self, X, rows=None) -> np.ndarray:
        """Predictions on already-transformed inputs (``rows`` selects targets for windows)."""
        if self.task == "sequence":
            rows = np.arange(len(X)) if rows is None else np.asarray(rows)
            seqs = _windows_at(X, rows, self.window)
            out = self.estimator.predict(seqs)
        else:
            out = self.estimator.predict(X if rows is None else X[rows])
        out = np.asarray(out, dtype=float).ravel()
        return out * self.y_std + self.y_mean if self.task != "classification" else out

    def predict(self, X_raw, rows=None) -> np.ndarray:
        X = np.asarray(X_raw, dtype=float)
        if self.x_scaler is not None:
            X = self.x_scaler.transform(X)
        return self.predict_prepared(X, rows)


def _windows_at(X, rows, window):
    rows = np.asarray(rows, dtype=int)
    if np.any(rows < window - 1):
        raise DataError(f"rows before index {window - 1} have no full window")
    return np.stack([X[r - window + 1 : r + 1] for r in rows])


def _seq_rows(rows, window):
    return rows[rows >= window - 1]


def fit_prepared(cfg: RunConfig, prep: Prepared, rows=None, hp=None, seed=None):
    """Fit the configured model on ``rows`` (default: the training split)."""
    entry = REGISTRY[cfg.model]
    hp = dict(cfg.hyperparameters if hp is None else hp)
    seed = cfg.seed if seed is None else seed
    rows = prep.splits["train"] if rows is None else rows
    y = (prep.y - prep.y_mean) / prep.y_std if entry.scale_y else prep.y
    window = hp.get("window", 1)
    if cfg.task == "sequence":
        rows = _seq_rows(rows, window)
        if len(rows) == 0:
            raise DataError("window longer than the training split")
        X = _windows_at(prep.X, rows, window)
    else:
        X = prep.X[rows]
    est, history = entry.fit(X, y[rows], hp, seed, cfg.task)
    fitted = FittedModel(cfg.model, cfg.task, prep.features, est, prep.x_scaler, prep.y_mean,
                         prep.y_std, prep.classes, window, _plain(hp))
    return fitted, [float(v) for v in history]


# --- metrics --------------------------------------------------------------------------


def _safe(fn, *args):
    try:
        v = float(fn(*args))
    except UndefinedMetricError:
        return None
    return v if math.isfinite(v) else None


def regression_metrics(y, pred) -> dict:
    return {"n": int(len(y)), "rmse": _safe(metrics.rmse, y, pred), "r2": _safe(metrics.r2, y, pred),
            "nrmse": _safe(metrics.nrmse_percent, y, pred)}


def classification_metrics(y, pred, n_classes) -> dict:
    y = np.asarray(y, dtype=int)
    pred = np.asarray(pred, dtype=int)
    out = {"n": int(len(y)), "accuracy": float(np.mean(y == pred))}
    if n_classes == 2:
        cm = metrics.confusion(y, pred, labels=[0, 1])
        for k, fn in (("precision", metrics.precision), ("recall", metrics.recall), ("f1", metrics.f1)):
            out[k] = _safe(fn, cm)
    else:
        per = metrics.per_class_scores(y, pred)
        for k in ("precision", "recall", "f1"):
            vals = [s[k] for s in per.values() if s[k] is not None]
            out[k] = float(np.mean(vals)) if vals else None
    return out


# --- train ------------------------------------------------------------------------------


@dataclass
class RunResult:
    report: dict
    model: object
    predictions: list  # (row id, actual, predicted) for the test split


def run_training(cfg: RunConfig, d: Dataset | None = None) -> RunResult:
    entry = REGISTRY[cfg.model]
    base = {"schema_version": SCHEMA_VERSION, "model": cfg.model, "task": cfg.task, "seed": cfg.seed,
            "config": cfg.as_dict()}
    if entry.family == "toy":
        return _run_toy(cfg, base)
    prep = prepare(cfg, d)
    if entry.family == "cluster":
        return _run_cluster(cfg, prep, base)
    fitted, history = fit_prepared(cfg, prep)
    report = dict(base, features=list(prep.features), loss_history=history, epochs=len(history))
    splits = {}
    preds = []
    for name, rows in prep.splits.items():
        if cfg.task == "sequence":
            rows = _seq_rows(rows, fitted.window)
        if len(rows) == 0:
            continue
        p = fitted.predict_prepared(prep.X, rows)
        if cfg.task == "classification":
            splits[name] = classification_metrics(prep.y[rows], p, len(prep.classes))
        else:
            splits[name] = regression_metrics(prep.y[rows], p)
        if name == "test":
            actual = prep.y[rows]
            if cfg.task == "classification":
                actual = [prep.classes[i] for i in actual]
                p = [prep.classes[int(i)] for i in p]
            preds = list(zip(prep.index[rows].tolist(), list(actual), list(p)))
    report["splits"] = splits
    headline = splits.get("test") or splits.get("val") or splits["train"]
    keys = ("accuracy", "precision", "recall", "f1") if cfg.task == "classification" else ("rmse", "r2", "nrmse")
    for k in keys:
        report[k] = headline.get(k)
    if cfg.task == "classification":
        report["classes"] = [str(c) for c in prep.classes]
    return RunResult(_finite_report(report), fitted, preds)


def _run_cluster(cfg, prep, base):
    hp = cfg.hyperparameters
    X = prep.X[prep.splits["train"]]
    if cfg.model in ("kmeans", "gmm", "hierarchical") and hp["k"] > len(X):
        raise ConfigError(f"model.k: {hp['k']} exceeds the {len(X)} training rows")
    est, labels, extra, history = REGISTRY[cfg.model].fit(X, hp, cfg.seed)
    report = dict(base, features=list(prep.features), loss_history=history, epochs=len(history), **extra)
    if labels is not None:
        labels = np.asarray(labels)
        found = sorted(set(labels.tolist()) - {cl.NOISE})
        report["n_clusters"] = len(found)
        mask = labels != cl.NOISE
        report["silhouette"] = (_safe(metrics.silhouette_score, X[mask], labels[mask])
                                if 2 <= len(found) < mask.sum() else None)
    if cfg.model == "kmeans" and hp["sweep"]:
        ks = [k for k in range(2, 9) if k < len(X)]
        sweep = cl.silhouette_by_k(X, ks, rng=cfg.seed)
        report["silhouette_by_k"] = [[k, float(sweep[k])] for k in ks]
    fitted = FittedModel(cfg.model, cfg.task, prep.features, est, prep.x_scaler,
                         hyperparameters=_plain(hp))
    return RunResult(_finite_report(report), fitted, [])


def _run_toy(cfg, base):
    from .nn.optim import TrainConfig
    from .nn.transformer import train_copy_task

    hp = cfg.hyperparameters
    if hp["d_model"] % hp["n_heads"] or hp["d_model"] % 2:
        raise ConfigError("model.d_model: must be even and divisible by model.n_heads")
    tc = TrainConfig(optimizer="adam", lr=hp["lr"], epochs=hp["epochs"], batch_size=hp["batch_size"],
                     seed=cfg.seed)
    model, rep, acc = train_copy_task(hp["length"], hp["vocab"], hp["n_train"], hp["n_test"], tc,
                                      seed=cfg.seed, d_model=hp["d_model"], n_heads=hp["n_heads"],
                                      n_layers=hp["n_layers"], d_ff=hp["d_ff"])
    report = dict(base, loss_history=[float(v) for v in rep.loss_history], epochs=len(rep.loss_history),
                  token_accuracy=acc)
    return RunResult(_finite_report(report), FittedModel(cfg.model, cfg.task, [], model,
                                                         hyperparameters=_plain(hp)), [])


def _finite_report(report):
    def walk(v, path):
        if isinstance(v, dict):
            for k, x in v.items():
                walk(x, f"{path}.{k}" if path else k)
        elif isinstance(v, (list, tuple)):
            for i, x in enumerate(v):
                walk(x, f"{path}[{i}]")
        elif isinstance(v, float) and not math.isfinite(v):
            from .errors import TrainingDivergedError

            raise TrainingDivergedError(f"report field {path} is not finite")

    walk(report, "")
    return report


def report_json(report: dict) -> str:
    return json.dumps(report, indent=2) + "\n"


def predictions_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["row", "actual", "predicted"])
    for r, a, p in rows:
        w.writerow([r, _fmt(a), _fmt(p)])
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


# --- grid search ----------------------------------------------------------------------


@dataclass
class GridResult:
    params: list  # parameter names in grid order
    cells: list  # list of dicts
    scores: list  # mean CV RMSE per cell
    fold_scores: list
    best_index: int

    @property
    def best(self) -> dict:
        return self.cells[self.best_index]

    def table_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.params + ["mean_rmse"])
        for cell, s in zip(self.cells, self.scores):
            w.writerow([_grid_fmt(cell[p]) for p in self.params] + [repr(float(s))])
        return buf.getvalue()


def _grid_fmt(v):
    if isinstance(v, (tuple, list)):
        return ",".join(map(str, v))
    return "none" if v is None else str(v)


def grid_cells(grid: dict) -> list[dict]:
    if not grid:
        raise ConfigError("grid: at least one hyperparameter with values is required")
    names = list(grid)
    return [dict(zip(names, combo)) for combo in itertools.product(*(grid[n] for n in names))]


def grid_search(cfg: RunConfig, grid: dict | None = None, k_folds: int | None = None,
                d: Dataset | None = None) -> GridResult:
    """Exhaustive grid, k-fold CV RMSE on the non-test rows; ties go to the earliest cell.

    Folds are drawn once from the seed and shared by every cell. Scaling is fitted on
    the training split, as for ``train``.
    """
    grid = cfg.grid if grid is None else grid
    k = cfg.k_folds if k_folds is None else k_folds
    if cfg.task != "regression" or REGISTRY[cfg.model].family not in ("supervised", "image"):
        raise ConfigError("model.name: grid search supports regression models only")
    cells = grid_cells(grid)
    prep = prepare(cfg, d)
    pool = np.concatenate([prep.splits["train"], prep.splits["val"]])
    if k < 2:
        raise ConfigError("cv.k_folds: must be >= 2")
    if k > len(pool):
        raise DataError(f"k_folds={k} exceeds number of rows {len(pool)}")
    folds = [pool[f] for f in kfold_indices(len(pool), k, cfg.seed)]
    scores, fold_scores = [], []
    for cell in cells:
        hp = dict(cfg.hyperparameters, **cell)
        per = []
        for i, f in enumerate(folds):
            train_rows = np.concatenate([g for j, g in enumerate(folds) if j != i])
            fitted, _ = fit_prepared(cfg, prep, train_rows, hp)
            per.append(metrics.rmse(prep.y[f], fitted.predict_prepared(prep.X, f)))
        fold_scores.append(per)
        scores.append(float(np.mean(per)))
    best = int(np.argmin(scores))  # argmin returns the first minimum
    return GridResult(list(grid), cells, scores, fold_scores, best)


# --- importance / plot data ------------------------------------------------------------


def importance_table(fitted: FittedModel) -> list[tuple[str, float]]:
    entry = REGISTRY.get(fitted.name)
    if entry is None or not entry.importance:
        supported = ", ".join(k for k, v in REGISTRY.items() if v.importance)
        raise ConfigError(f"importance unsupported for model {fitted.name!r}; supported: {supported}")
    fi = ens.mdi_importance(fitted.estimator, fitted.features)
    order = np.argsort(-fi.scores, kind="stable")
    return [(fi.names[i], float(fi.scores[i])) for i in order]


def series_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for x, y in rows:
        w.writerow([_fmt(x), _fmt(y)])
    return buf.getvalue()


def plot_series(report: dict, predictions: list | None = None) -> dict[str, str]:
    """Two-column CSV texts keyed by file name."""
    out = {}
    loss = report.get("loss_history") or []
    if loss:
        out["loss.csv"] = series_csv(["epoch", "loss"], [(i + 1, float(v)) for i, v in enumerate(loss)])
    if report.get("silhouette_by_k"):
        out["silhouette.csv"] = series_csv(["k", "silhouette"],
                                           [(int(k), float(s)) for k, s in report["silhouette_by_k"]])
    if predictions:
        out["actual.csv"] = series_csv(["row", "actual"], [(r, a) for r, a, _ in predictions])
        out["predicted.csv"] = series_csv(["row", "predicted"], [(r, p) for r, _, p in predictions])
    return out


def read_predictions(path) -> list:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["row", "actual", "predicted"]:
            raise DataError(f"{path}: unexpected header {header}")
        for r, a, p in reader:
            rows.append((int(r), _num(a), _num(p)))
    return rows


def _num(s):
    try:
        return float(s)
    except ValueError:
        return s


__all__ = [
    "REGISTRY", "RunConfig", "FittedModel", "GridResult", "RunResult", "PolymlError",
    "build_config", "parse_config_text", "read_config", "generate", "run_training", "grid_search",
    "importance_table", "plot_series", "prepare", "fit_prepared",
]
