"""JSON round-tripping of fitted models.

Dataclasses are stored as ``{"__type__": "module:Class", "fields": {...}}``
(fields starting with an underscore are caches and are skipped), arrays as
``{"__ndarray__": [...], "dtype": ..., "shape": [...]}``, and mappings as
key/value pair lists so non-string keys survive. Only classes from this
package are reconstructed.
"""
from __future__ import annotations

import dataclasses
import importlib
import json
import math

import numpy as np

PACKAGE = __name__.rsplit(".", 1)[0]


def to_jsonable(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        fields = {f.name: to_jsonable(getattr(obj, f.name))
                  for f in dataclasses.fields(obj) if not f.name.startswith("_")}
        cls = type(obj)
        return {"__type__": f"{cls.__module__}:{cls.__qualname__}", "fields": fields}
    if isinstance(obj, np.ndarray):
        if obj.dtype == object:
            return {"__ndarray__": [to_jsonable(v) for v in obj.ravel().tolist()],
                    "dtype": "object", "shape": list(obj.shape)}
        return {"__ndarray__": obj.ravel().tolist(), "dtype": obj.dtype.str, "shape": list(obj.shape)}
    if isinstance(obj, dict):
        return {"__dict__": [[to_jsonable(k), to_jsonable(v)] for k, v in obj.items()]}
    if isinstance(obj, tuple):
        return {"__tuple__": [to_jsonable(v) for v in obj]}
    if isinstance(obj, list):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        obj = float(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return {"__float__": repr(obj)}
    if obj is None or isinstance(obj, (bool, int, float, str)):
        return obj
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _resolve(path: str):
    module, _, qual = path.partition(":")
    if not (module == PACKAGE or module.startswith(PACKAGE + ".")):
        raise ValueError(f"refusing to load foreign type {path!r}")
    obj = importlib.import_module(module)
    for part in qual.split("."):
        obj = getattr(obj, part)
    return obj


def from_jsonable(obj):
    if isinstance(obj, list):
        return [from_jsonable(v) for v in obj]
    if not isinstance(obj, dict):
        return obj
    if "__type__" in obj:
        cls = _resolve(obj["__type__"])
        kwargs = {k: from_jsonable(v) for k, v in obj["fields"].items()}
        init = {f.name for f in dataclasses.fields(cls) if f.init}
        inst = cls(**{k: v for k, v in kwargs.items() if k in init})
        for k, v in kwargs.items():
            if k not in init:
                setattr(inst, k, v)
        return inst
    if "__ndarray__" in obj:
        if obj["dtype"] == "object":
            arr = np.empty(len(obj["__ndarray__"]), dtype=object)
            arr[:] = [from_jsonable(v) for v in obj["__ndarray__"]]
            return arr.reshape(obj["shape"])
        return np.array(obj["__ndarray__"], dtype=np.dtype(obj["dtype"])).reshape(obj["shape"])
    if "__dict__" in obj:
        return {_hashable(from_jsonable(k)): from_jsonable(v) for k, v in obj["__dict__"]}
    if "__tuple__" in obj:
        return tuple(from_jsonable(v) for v in obj["__tuple__"])
    if "__float__" in obj:
        return float(obj["__float__"])
    return {k: from_jsonable(v) for k, v in obj.items()}


def _hashable(k):
    return tuple(k) if isinstance(k, list) else k


def dumps(obj, **kw) -> str:
    return json.dumps(to_jsonable(obj), **kw)


def loads(text: str):
    return from_jsonable(json.loads(text))


def save(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(obj))
        fh.write("\n")


def load(path):
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())
