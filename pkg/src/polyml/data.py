"""Dataset container, CSV ingestion, preprocessing, splitting and synthetic data."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import DataError
from .numeric import make_rng

NUMERIC = "numeric"
CATEGORICAL = "categorical"


@dataclass
class Dataset:
    """Column-oriented table.

    Numeric columns are float64 arrays, categorical columns are object arrays
    of strings. Missing cells are tracked in ``missing`` (rows x columns) and
    hold 0.0 / "" in the value arrays, so numeric storage never contains NaN.
    """

    columns: list[str]
    kinds: dict[str, str]
    values: dict[str, np.ndarray]
    missing: np.ndarray = None
    label: str | None = None

    def __post_init__(self):
        n = self.n_rows
        for c in self.columns:
            if len(self.values[c]) != n:
                raise DataError(f"column {c!r} has {len(self.values[c])} rows, expected {n}")
        if self.missing is None:
            self.missing = np.zeros((n, len(self.columns)), dtype=bool)
        if self.label is not None and self.label not in self.columns:
            raise DataError(f"label {self.label!r} not among columns")

    @classmethod
    def from_arrays(cls, data: Mapping[str, Sequence], label=None, kinds=None) -> "Dataset":
        kinds = dict(kinds or {})
        values = {}
        for name, col in data.items():
            arr = np.asarray(col)
            kind = kinds.get(name)
            if kind is None:
                kind = NUMERIC if arr.dtype.kind in "biuf" else CATEGORICAL
                kinds[name] = kind
            if kind == NUMERIC:
                arr = arr.astype(float)
                if not np.all(np.isfinite(arr)):
                    raise DataError(f"column {name!r}: non-finite value")
            else:
                arr = arr.astype(object)
            values[name] = arr
        return cls(list(data), kinds, values, label=label)

    @property
    def n_rows(self) -> int:
        if not self.columns:
            return 0
        return len(self.values[self.columns[0]])

    @property
    def feature_names(self) -> list[str]:
        return [c for c in self.columns if c != self.label]

    def __len__(self):
        return self.n_rows

    def column(self, name) -> np.ndarray:
        return self.values[name]

    def X(self, columns=None) -> np.ndarray:
        cols = self.feature_names if columns is None else list(columns)
        if any(self.kinds[c] != NUMERIC for c in cols):
            return np.column_stack([self.values[c] for c in cols]).astype(object)
        if not cols:
            return np.zeros((self.n_rows, 0))
        return np.column_stack([self.values[c] for c in cols])

    def y(self) -> np.ndarray:
        if self.label is None:
            raise DataError("dataset has no label column")
        return self.values[self.label]

    def take(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        return Dataset(
            list(self.columns),
            dict(self.kinds),
            {c: self.values[c][idx] for c in self.columns},
            self.missing[idx],
            self.label,
        )

    def where(self, column, value) -> "Dataset":
        return self.take(np.flatnonzero(self.values[column] == value))

    def select(self, columns) -> "Dataset":
        columns = list(columns)
        pos = [self.columns.index(c) for c in columns]
        label = self.label if self.label in columns else None
        return Dataset(
            columns,
            {c: self.kinds[c] for c in columns},
            {c: self.values[c] for c in columns},
            self.missing[:, pos],
            label,
        )

    def with_values(self, updates: Mapping[str, np.ndarray]) -> "Dataset":
        values = dict(self.values)
        values.update({k: np.asarray(v, dtype=float) for k, v in updates.items()})
        return Dataset(list(self.columns), dict(self.kinds), values, self.missing.copy(), self.label)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(self.to_csv_text())

    def to_csv_text(self) -> str:
        import io

        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for i in range(self.n_rows):
            row = []
            for j, c in enumerate(self.columns):
                if self.missing[i, j]:
                    row.append("")
                elif self.kinds[c] == NUMERIC:
                    row.append(repr(float(self.values[c][i])))
                else:
                    row.append(str(self.values[c][i]))
            w.writerow(row)
        return buf.getvalue()


def read_csv(path, schema, label=None) -> Dataset:
    """Read a UTF-8, RFC-4180 CSV with a mandatory header row.

    ``schema`` maps column name to kind (``"numeric"`` or ``"categorical"``),
    or is a sequence of ``(name, kind)`` pairs; its order must match the
    header. Empty fields are treated as missing.
    """
    schema = list(schema.items()) if isinstance(schema, Mapping) else list(schema)
    names = [n for n, _ in schema]
    kinds = dict(schema)
    path = Path(path)
    if not path.exists():
        raise DataError(f"file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: missing header row") from None
        if header != names:
            raise DataError(f"{path}: header {header} does not match schema {names}")
        raw = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(names):
                raise DataError(f"{path}: row {lineno} has {len(row)} fields, expected {len(names)}")
            raw.append(row)
    n = len(raw)
    missing = np.zeros((n, len(names)), dtype=bool)
    values = {}
    for j, name in enumerate(names):
        if kinds[name] == NUMERIC:
            col = np.zeros(n)
            for i, row in enumerate(raw):
                cell = row[j].strip()
                if cell == "":
                    missing[i, j] = True
                    continue
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(
                        f"{path}: row {i + 2}, column {name!r}: cannot parse {cell!r} as number"
                    ) from None
                if not math.isfinite(v):
                    raise DataError(f"{path}: row {i + 2}, column {name!r}: non-finite value")
                col[i] = v
        elif kinds[name] == CATEGORICAL:
            col = np.empty(n, dtype=object)
            for i, row in enumerate(raw):
                col[i] = row[j]
                missing[i, j] = row[j] == ""
        else:
            raise DataError(f"unknown column kind {kinds[name]!r} for {name!r}")
        values[name] = col
    return Dataset(names, kinds, values, missing, label)


def drop_missing(d: Dataset) -> Dataset:
    return d.take(np.flatnonzero(~d.missing.any(axis=1)))


@dataclass
class StandardScaler:
    """Per-column (x - mean) / std with the sample (n-1) standard deviation."""

    columns: list[str]
    mean: np.ndarray
    std: np.ndarray

    def transform(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mean) / self.std

    def inverse_transform(self, Z) -> np.ndarray:
        return np.asarray(Z, dtype=float) * self.std + self.mean

    def apply(self, d: Dataset) -> Dataset:
        return d.with_values(
            {c: (d.values[c] - m) / s for c, m, s in zip(self.columns, self.mean, self.std)}
        )

    def invert(self, d: Dataset) -> Dataset:
        return d.with_values(
            {c: d.values[c] * s + m for c, m, s in zip(self.columns, self.mean, self.std)}
        )


def fit_standardizer(d: Dataset | np.ndarray, columns=None) -> StandardScaler:
    if isinstance(d, Dataset):
        columns = list(columns) if columns is not None else [
            c for c in d.columns if d.kinds[c] == NUMERIC
        ]
        X = d.X(columns).astype(float)
    else:
        X = np.asarray(d, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        columns = list(columns) if columns is not None else [str(i) for i in range(X.shape[1])]
    if X.shape[0] < 2:
        raise DataError("standardizer needs at least 2 rows")
    mean = X.mean(axis=0)
    std = X.std(axis=0, ddof=1)
    for c, s in zip(columns, std):
        if not s > 0:
            raise DataError(f"column {c!r} is constant; cannot standardize")
    return StandardScaler(columns, mean, std)


def minmax_normalize(d: Dataset, columns, lo=0.0, hi=1.0) -> Dataset:
    updates = {}
    for c in columns:
        v = d.values[c]
        vmin, vmax = v.min(), v.max()
        if not vmax > vmin:
            raise DataError(f"column {c!r} is degenerate (max == min)")
        updates[c] = lo + (v - vmin) * (hi - lo) / (vmax - vmin)
    return d.with_values(updates)


def max_normalize(values, maximum=None) -> np.ndarray:
    """Divide by the column maximum (or a given engineering maximum)."""
    v = np.asarray(values, dtype=float)
    m = np.max(v, axis=0) if maximum is None else np.asarray(maximum, dtype=float)
    if np.any(m == 0):
        raise DataError("maximum is zero")
    return v / m


def correlation_matrix(d: Dataset, columns=None) -> np.ndarray:
    cols = columns or [c for c in d.columns if d.kinds[c] == NUMERIC]
    X = d.X(cols).astype(float)
    if X.shape[0] < 2:
        raise DataError("correlation needs at least 2 rows")
    Xc = X - X.mean(axis=0)
    norms = np.sqrt((Xc**2).sum(axis=0))
    for c, s in zip(cols, norms):
        if s == 0:
            raise DataError(f"column {c!r} has zero variance")
    R = (Xc.T @ Xc) / np.outer(norms, norms)
    R = np.clip((R + R.T) / 2, -1.0, 1.0)
    np.fill_diagonal(R, 1.0)
    return R


def drop_correlated(d: Dataset, threshold=0.95, columns=None) -> Dataset:
    """Drop the later column of every pair with |r| > threshold."""
    cols = columns or [c for c in d.feature_names if d.kinds[c] == NUMERIC]
    R = correlation_matrix(d, cols)
    dropped = set()
    for i in range(len(cols)):
        for j in range(i):
            if abs(R[i, j]) > threshold:
                dropped.add(cols[i])
                break
    return d.select([c for c in d.columns if c not in dropped])


@dataclass
class SplitSpec:
    train: float = 0.7
    val: float = 0.15
    test: float = 0.15
    shuffle: bool = True
    seed: int = 0

    def __post_init__(self):
        fr = (self.train, self.val, self.test)
        if any(f < 0 for f in fr) or self.train <= 0 or abs(sum(fr) - 1.0) > 1e-9:
            raise DataError(f"invalid split fractions {fr}")


def split_sizes(n: int, spec: SplitSpec) -> tuple[int, int, int]:
    n_val = int(math.floor(n * spec.val + 1e-9))
    n_test = int(math.floor(n * spec.test + 1e-9))
    return n - n_val - n_test, n_val, n_test


def split_indices(n: int, spec: SplitSpec):
    if n == 0:
        raise DataError("cannot split an empty dataset")
    order = make_rng(spec.seed).permutation(n) if spec.shuffle else np.arange(n)
    n_tr, n_val, _ = split_sizes(n, spec)
    return order[:n_tr], order[n_tr : n_tr + n_val], order[n_tr + n_val :]


def train_val_test_split(d: Dataset, spec: SplitSpec):
    """Partition rows; with ``shuffle=False`` the splits are contiguous blocks."""
    return tuple(d.take(i) for i in split_indices(d.n_rows, spec))


def kfold_indices(n: int, k: int, rng) -> list[np.ndarray]:
    if k < 2:
        raise DataError("k_folds must be >= 2")
    if k > n:
        raise DataError(f"k_folds={k} exceeds number of rows {n}")
    perm = make_rng(rng).permutation(n)
    return np.array_split(perm, k)


# --- synthetic data -------------------------------------------------------

HDPE_FEATURES = ["C2", "H2", "CAT", "HX", "C3", "T", "P", "H2/C2", "C3/C4"]
HDPE_LABEL = "MI"

# Ground truth:
#   ln MI = 0.35 + 1.6 ln(H2/C2 * 1000) + 0.04 (T - 80) + 0.06 (P - 8)
#           - 0.5 (C3/C4 - 0.5) + 0.1 (CAT - 1)
# H2/C2 is recomputed from the H2 and C2 inputs, so MI is strictly increasing
# in H2 at fixed other inputs. Hydrogen carries most of the variance by design.
HDPE_COEF = {
    "intercept": 0.35,
    "ratio": 1.6,
    "T": 0.04,
    "P": 0.06,
    "C3/C4": -0.5,
    "CAT": 0.1,
}


def hdpe_ground_truth(C2, H2, CAT, T, P, C3C4) -> np.ndarray:
    c = HDPE_COEF
    ratio = np.asarray(H2, dtype=float) / np.asarray(C2, dtype=float)
    log_mi = (
        c["intercept"]
        + c["ratio"] * np.log(ratio * 1000.0)
        + c["T"] * (np.asarray(T) - 80.0)
        + c["P"] * (np.asarray(P) - 8.0)
        + c["C3/C4"] * (np.asarray(C3C4) - 0.5)
        + c["CAT"] * (np.asarray(CAT) - 1.0)
    )
    return np.exp(log_mi)


def _smooth_walk(rng, n, scale, corr_len):
    """Zero-mean smooth random trajectory (moving average of white noise)."""
    w = max(1, int(corr_len))
    noise = rng.standard_normal(n + 2 * w)
    kernel = np.hanning(2 * w + 1)
    kernel /= np.sqrt((kernel**2).sum())
    return scale * np.convolve(noise, kernel, mode="valid")[:n]


def synth_hdpe(n_rows: int, seed: int = 0, noise_sd: float = 0.0) -> Dataset:
    """Synthetic HDPE plant trajectories (one row per minute) with MI label.

    Process trajectories depend only on ``seed``; label noise is drawn from a
    separate stream, so ``noise_sd=0`` gives the ground truth on the same inputs.
    """
    if n_rows < 1:
        raise DataError("n_rows must be >= 1")
    ss = np.random.SeedSequence(int(seed))
    traj_ss, noise_ss = ss.spawn(2)
    traj_rng = np.random.Generator(np.random.PCG64(traj_ss))
    noise_rng = np.random.Generator(np.random.PCG64(noise_ss))
    t = np.arange(n_rows, dtype=float)

    def wave(period, phase):
        return np.sin(2 * np.pi * t / period + phase)

    C2 = 30.0 + 1.0 * wave(700, 0.3) + _smooth_walk(traj_rng, n_rows, 0.4, 40)
    H2 = 0.030 + 0.010 * wave(450, 1.1) + _smooth_walk(traj_rng, n_rows, 0.004, 30)
    H2 = np.maximum(H2, 0.004)
    CAT = 1.0 + 0.05 * wave(300, 2.0) + _smooth_walk(traj_rng, n_rows, 0.03, 25)
    HX = 60.0 + 3.0 * wave(520, 0.7) + _smooth_walk(traj_rng, n_rows, 1.5, 35)
    C3 = 2.0 + 0.2 * wave(380, 2.6) + _smooth_walk(traj_rng, n_rows, 0.1, 30)
    T = 80.0 + 1.0 * wave(610, 1.9) + _smooth_walk(traj_rng, n_rows, 0.5, 30)
    P = 8.0 + 0.3 * wave(480, 0.2) + _smooth_walk(traj_rng, n_rows, 0.15, 30)
    C3C4 = 0.5 + 0.04 * wave(260, 1.4) + _smooth_walk(traj_rng, n_rows, 0.02, 20)
    MI = hdpe_ground_truth(C2, H2, CAT, T, P, C3C4)
    if noise_sd > 0:
        MI = MI + noise_rng.normal(0.0, noise_sd, size=n_rows)
    data = {
        "C2": C2, "H2": H2, "CAT": CAT, "HX": HX, "C3": C3, "T": T, "P": P,
        "H2/C2": H2 / C2, "C3/C4": C3C4, "MI": MI,
    }
    return Dataset.from_arrays(data, label=HDPE_LABEL)


QUADRATIC_X_RANGE = (-3.0, 3.0)


def quadratic_truth(x):
    x = np.asarray(x, dtype=float)
    return 0.3 * x**2 - 0.3 * x + 0.3


def synth_quadratic(n: int, seed: int = 0, noise_sd: float = 0.0, x=None) -> Dataset:
    """y = 0.3 x^2 - 0.3 x + 0.3 + N(0, noise_sd), x ~ U(-3, 3) unless given."""
    if n < 1:
        raise DataError("n must be >= 1")
    rng = make_rng(seed)
    if x is None:
        x = rng.uniform(*QUADRATIC_X_RANGE, size=n)
    x = np.asarray(x, dtype=float)
    y = quadratic_truth(x)
    if noise_sd > 0:
        y = y + rng.normal(0.0, noise_sd, size=x.shape)
    return Dataset.from_arrays({"x": x, "y": y}, label="y")


# Target for the SMILES fixture (a glass-transition-like temperature, K):
#   Tg = 250 + 12 n_aromatic_c + 9 n_ring_digits + 6 n_O - 4 n_C + 15 n_halogen
SMILES_TARGET_WEIGHTS = {"c": 12.0, "1": 4.5, "2": 4.5, "O": 6.0, "C": -4.0, "F": 15.0, "Cl": 15.0, "Br": 15.0}

_SMILES_FIXTURE = [
    "CC", "CCC", "CC(C)C", "C=C", "CC=C", "CCO", "CC(=O)O", "c1ccccc1", "Cc1ccccc1",
    "Oc1ccccc1", "CCl", "CBr", "FC(F)F", "C#N", "CC#N", "CCN", "c1ccc2ccccc2c1",
    "CC(C)(C)O", "C/C=C/C", "CSC",
]


def smiles_target(smiles: str) -> float:
    from .nn.conv import tokenize_smiles

    tokens = tokenize_smiles(smiles)
    return 250.0 + sum(SMILES_TARGET_WEIGHTS.get(t, 0.0) for t in tokens)


def synth_smiles(n: int = 20, seed: int = 0) -> Dataset:
    """Small molecule fixture with a documented token-count target."""
    if n < 1:
        raise DataError("n must be >= 1")
    base = list(_SMILES_FIXTURE)
    rng = make_rng(seed)
    if n <= len(base):
        chosen = base[:n]
    else:
        chosen = base + [base[i] for i in rng.integers(0, len(base), size=n - len(base))]
    targets = [smiles_target(s) for s in chosen]
    return Dataset.from_arrays(
        {"smiles": np.array(chosen, dtype=object), "target": np.array(targets)},
        label="target",
        kinds={"smiles": CATEGORICAL, "target": NUMERIC},
    )
