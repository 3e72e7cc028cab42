"""Datasets, CSV ingestion, preprocessing and synthetic generators."""

import csv
import dataclasses
import math
import os
from typing import Optional

import numpy as np


class CSVFormatError(ValueError):
    """Raised when a dataset CSV cannot be parsed."""


@dataclasses.dataclass(frozen=True)
class Dataset:
    """A design matrix ``X`` (N x d) with target ``y`` (length N).

    ``true_support`` holds 0-based feature indices when the generating model
    is known. ``true_weights`` is the generating coefficient vector, if any.
    Arrays are made read-only on construction so a Dataset can be shared
    between workers.
    """

    X: np.ndarray
    y: np.ndarray
    feature_names: Optional[tuple] = None
    true_support: Optional[tuple] = None
    true_weights: Optional[np.ndarray] = None
    preprocessed: bool = False
    name: str = "dataset"

    def __post_init__(self):
        X = np.array(self.X, dtype=float)
        y = np.array(self.y, dtype=float)
        if X.ndim != 2:
            raise ValueError(f"X must be 2-dimensional, got shape {X.shape}")
        if y.ndim != 1:
            raise ValueError(f"y must be 1-dimensional, got shape {y.shape}")
        n, d = X.shape
        if n < 1 or d < 1:
            raise ValueError(f"need N >= 1 and d >= 1, got {X.shape}")
        if y.shape[0] != n:
            raise ValueError(f"y has length {y.shape[0]}, X has {n} rows")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        if self.feature_names is not None:
            names = tuple(str(s) for s in self.feature_names)
            if len(names) != d:
                raise ValueError(f"{len(names)} feature names for {d} columns")
            object.__setattr__(self, "feature_names", names)
        if self.true_support is not None:
            support = tuple(sorted({int(i) for i in self.true_support}))
            if support and (support[0] < 0 or support[-1] >= d):
                raise ValueError("true_support index out of range")
            object.__setattr__(self, "true_support", support)
        if self.true_weights is not None:
            w = np.array(self.true_weights, dtype=float)
            if w.shape != (d,):
                raise ValueError(f"true_weights must have shape ({d},)")
            w.setflags(write=False)
            object.__setattr__(self, "true_weights", w)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


@dataclasses.dataclass(frozen=True)
class SynthSpec:
    """Parameters of the sparse linear-model generator."""

    n: int
    d: int
    n_nonzero: int = 8
    noise_variance: float = 1.5
    bernoulli_p: float = 0.4
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.d < 1:
            raise ValueError("n and d must be positive")
        if not 0 <= self.n_nonzero <= self.d:
            raise ValueError(f"n_nonzero={self.n_nonzero} must lie in [0, d={self.d}]")
        if not self.noise_variance > 0:
            raise ValueError("noise_variance must be positive")
        if not 0.0 <= self.bernoulli_p <= 1.0:
            raise ValueError("bernoulli_p must lie in [0, 1]")


def _parse_float(cell):
    try:
        value = float(cell)
    except ValueError:
        return None
    return value if math.isfinite(value) else None


def load_csv(path, target):
    """Reads a dataset from a comma-separated file.

    The first line is treated as a header if any of its cells is not a
    number. ``target`` is a header name, or a 0-based column index (an int,
    or a digit string when the file has no header).
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"dataset file not found: {path}")
    with open(path, newline="") as fh:
        rows = [row for row in csv.reader(fh)]
    # Skip blank trailing lines.
    numbered = [(i + 1, row) for i, row in enumerate(rows) if any(c.strip() for c in row)]
    if not numbered:
        raise CSVFormatError(f"{path}: file is empty")

    header = None
    first_line, first = numbered[0]
    if any(_parse_float(c) is None for c in first):
        header = [c.strip() for c in first]
        numbered = numbered[1:]
    if not numbered:
        raise CSVFormatError(f"{path}: no data rows")

    width = len(header) if header is not None else len(numbered[0][1])
    if width < 2:
        raise CSVFormatError(f"{path}: need a target and at least one feature column")

    if header is not None and isinstance(target, str) and target in header:
        target_col = header.index(target)
    else:
        try:
            target_col = int(target)
        except (TypeError, ValueError):
            raise CSVFormatError(f"{path}: target column {target!r} not found") from None
        if not 0 <= target_col < width:
            raise CSVFormatError(f"{path}: target column index {target_col} out of range")

    data = np.empty((len(numbered), width))
    for r, (line_no, row) in enumerate(numbered):
        if len(row) != width:
            raise CSVFormatError(
                f"{path}: row {line_no} has {len(row)} fields, expected {width}")
        for c, cell in enumerate(row):
            value = _parse_float(cell)
            if value is None:
                col = header[c] if header is not None else str(c)
                raise CSVFormatError(
                    f"{path}: row {line_no}, column {col}: cannot parse {cell!r} as a finite number")
            data[r, c] = value

    feature_cols = [c for c in range(width) if c != target_col]
    names = [header[c] for c in feature_cols] if header is not None else None
    stem = os.path.splitext(os.path.basename(path))[0]
    return Dataset(X=data[:, feature_cols], y=data[:, target_col],
                   feature_names=names, name=stem)


def preprocess(ds):
    """Centers every column and scales columns and target to unit max-norm.

    Columns are centered and then divided by their infinity-norm; the target
    is only divided by its infinity-norm. All-zero columns (after centering)
    are left as zeros.
    """
    X = ds.X - ds.X.mean(axis=0)
    # Constant columns can leave rounding dust after centering; zero them exactly.
    constant = np.ptp(ds.X, axis=0) == 0
    X[:, constant] = 0.0
    col_norm = np.abs(X).max(axis=0)
    X = X / np.where(col_norm > 0, col_norm, 1.0)
    y_norm = np.abs(ds.y).max()
    y = ds.y / y_norm if y_norm > 0 else ds.y.copy()
    return ds.replace(X=X, y=y, preprocessed=True)


def standardize_columns(X):
    """Returns columns centered to mean 0 and scaled to unit variance."""
    Z = X - X.mean(axis=0)
    sd = Z.std(axis=0)
    return Z / np.where(sd > 0, sd, 1.0)


def fan_signal_floor(n):
    """Minimum nonzero magnitude ``4 ln(n) / sqrt(n)`` of the Fan generator."""
    return 4.0 * math.log(n) / math.sqrt(n)


def gen_synth_fan(spec):
    """Draws the sparse linear-model benchmark and preprocesses it.

    Draw order from ``default_rng(spec.seed)``: X (n x d standard normal),
    support indices, sign bits, magnitudes, noise. Nonzero weights are
    ``(-1)**u * (a + |z|)`` with ``u ~ Bernoulli(p)`` and ``z ~ N(0, 1)``.
    """
    rng = np.random.default_rng(spec.seed)
    X = rng.standard_normal((spec.n, spec.d))
    support = np.sort(rng.choice(spec.d, size=spec.n_nonzero, replace=False))
    u = rng.random(spec.n_nonzero) < spec.bernoulli_p
    z = rng.standard_normal(spec.n_nonzero)
    noise = rng.normal(0.0, math.sqrt(spec.noise_variance), size=spec.n)

    w = np.zeros(spec.d)
    w[support] = np.where(u, -1.0, 1.0) * (fan_signal_floor(spec.n) + np.abs(z))
    y = X @ w + noise
    ds = Dataset(X=X, y=y, true_support=support.tolist(), true_weights=w,
                 name=f"synth-fan-n{spec.n}-d{spec.d}")
    return preprocess(ds)


_INSTABILITY_N = 100
_INSTABILITY_D = 100
_INSTABILITY_NOISE_VARIANCE = 0.1
# Every 10th row (1-based rows 10, 20, ..., 100) follows the second model.
OUTLIER_ROWS = tuple(range(9, _INSTABILITY_N, 10))


def _instability_weights():
    w1 = np.zeros(_INSTABILITY_D)
    w1[:5] = 1.0
    w2 = np.zeros(_INSTABILITY_D)
    w2[-5:] = 1.0
    return w1, w2


def _instability_draw(seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((_INSTABILITY_N, _INSTABILITY_D))
    noise = rng.normal(0.0, math.sqrt(_INSTABILITY_NOISE_VARIANCE), size=_INSTABILITY_N)
    return X, noise


def gen_instability_w1(seed):
    """100 x 100 Gaussian design, target driven by features 1-5 only."""
    w1, _ = _instability_weights()
    X, noise = _instability_draw(seed)
    return Dataset(X=X, y=X @ w1 + noise, true_support=range(5), true_weights=w1,
                   name="instability-w1")


def gen_instability_w1w2(seed):
    """Like :func:`gen_instability_w1` but rows 10, 20, ..., 100 use features 96-100.

    With ten contiguous blocks of ten rows each block holds exactly one of
    these outlier rows.
    """
    w1, w2 = _instability_weights()
    X, noise = _instability_draw(seed)
    y = X @ w1 + noise
    rows = list(OUTLIER_ROWS)
    y[rows] = X[rows] @ w2 + noise[rows]
    return Dataset(X=X, y=y, true_support=range(5), true_weights=w1,
                   name="instability-w1w2")


def metadata_path(csv_path):
    return str(csv_path) + ".meta"


def write_csv(ds, path, metadata=None):
    """Writes ``ds`` as CSV (target column ``y`` last) plus a ``.meta`` sidecar.

    The sidecar is plain ``key = value`` text. ``metadata`` adds extra keys,
    e.g. the generator parameters.
    """
    names = list(ds.feature_names) if ds.feature_names else [f"x{j}" for j in range(ds.d)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(names + ["y"])
        for row, target in zip(ds.X, ds.y):
            writer.writerow([repr(float(v)) for v in row] + [repr(float(target))])

    meta = {"name": ds.name, "n": ds.n, "d": ds.d, "target": "y",
            "preprocessed": str(ds.preprocessed).lower()}
    meta.update(metadata or {})
    if ds.true_support is not None:
        meta["true_support"] = ",".join(str(i) for i in ds.true_support)
    if ds.true_weights is not None:
        nz = np.flatnonzero(ds.true_weights)
        meta["true_weights"] = ",".join(f"{i}:{float(ds.true_weights[i])!r}" for i in nz)
    with open(metadata_path(path), "w") as fh:
        for key, value in meta.items():
            fh.write(f"{key} = {value}\n")


def read_keyvalue(path):
    """Parses a ``key = value`` file; ``#`` starts a comment."""
    out = {}
    with open(path) as fh:
        for line_no, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}: line {line_no}: expected 'key = value'")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def load_dataset(path, target="y"):
    """:func:`load_csv` plus whatever the ``.meta`` sidecar knows, if present."""
    ds = load_csv(path, target)
    meta_file = metadata_path(path)
    if not os.path.exists(meta_file):
        return ds
    meta = read_keyvalue(meta_file)
    changes = {}
    if meta.get("name"):
        changes["name"] = meta["name"]
    if meta.get("true_support"):
        changes["true_support"] = [int(s) for s in meta["true_support"].split(",")]
    if meta.get("true_weights"):
        w = np.zeros(ds.d)
        for item in meta["true_weights"].split(","):
            idx, value = item.split(":")
            w[int(idx)] = float(value)
        changes["true_weights"] = w
    return ds.replace(**changes)
