"""Datasets, normalization, stratified folds and the synthetic stand-in."""

from __future__ import annotations

import csv
import hashlib
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .seeding import rng_for

LABEL = "label"


@dataclass(frozen=True)
class Normalization:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, features: np.ndarray) -> Normalization:
        mean = features.mean(axis=0)
        std = features.std(axis=0)
        std = np.where(std > 0, std, 1.0)
        return cls(mean, std)

    def apply(self, features: np.ndarray) -> np.ndarray:
        return (features - self.mean) / self.std

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> Normalization:
        return cls(np.array(d["mean"], dtype=float), np.array(d["std"], dtype=float))


@dataclass(frozen=True)
class Dataset:
    """Raw features plus labels.  ``normalization`` is fitted on these rows."""

    features: np.ndarray
    labels: np.ndarray
    feature_names: tuple[str, ...]
    normalization: Normalization

    @classmethod
    def build(cls, features, labels, feature_names=None) -> Dataset:
        x = np.array(features, dtype=float)
        y = np.array(labels, dtype=np.int64)
        if x.ndim != 2 or y.shape != (x.shape[0],):
            raise DataError("features must be N x n and labels length N")
        if not np.all(np.isfinite(x)):
            raise DataError("features contain NaN or Inf")
        if not np.all((y == 0) | (y == 1)):
            raise DataError("labels must be 0 or 1")
        names = tuple(feature_names) if feature_names is not None else tuple(
            f"x{k}" for k in range(x.shape[1]))
        if len(names) != x.shape[1]:
            raise DataError("feature_names length does not match feature count")
        x.setflags(write=False)
        y.setflags(write=False)
        return cls(x, y, names, Normalization.fit(x))

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> Dataset:
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset.build(self.features[idx], self.labels[idx], self.feature_names)

    def normalized(self, norm: Normalization | None = None) -> np.ndarray:
        return (norm or self.normalization).apply(self.features)

    def class_counts(self) -> tuple[int, int]:
        ones = int(self.labels.sum())
        return len(self) - ones, ones

    def fingerprint(self) -> str:
        return hashlib.sha256(to_csv_text(self).encode()).hexdigest()


def to_csv_text(ds: Dataset) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([*ds.feature_names, LABEL])
    for row, y in zip(ds.features, ds.labels):
        w.writerow([repr(float(v)) for v in row] + [int(y)])
    return buf.getvalue()


def save_csv(ds: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(to_csv_text(ds))


def load_csv(path) -> Dataset:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"cannot read dataset {path}: {exc.strerror or exc}") from exc
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if LABEL not in header:
        raise DataError(f"{path}: no '{LABEL}' column in header")
    li = header.index(LABEL)
    names = [h for j, h in enumerate(header) if j != li]
    feats, labels = [], []
    for r, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise DataError(f"{path}: row {r} has {len(row)} cells, expected {len(header)}")
        vals = []
        for j, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                raise DataError(f"{path}: non-numeric value {cell!r} at row {r}, column "
                                f"'{header[j]}'") from None
            if not math.isfinite(v):
                raise DataError(f"{path}: missing or non-finite value at row {r}, column '{header[j]}'")
            if j == li:
                if v not in (0.0, 1.0):
                    raise DataError(f"{path}: label {cell!r} at row {r} is not 0 or 1")
                labels.append(int(v))
            else:
                vals.append(v)
        feats.append(vals)
    if not feats:
        raise DataError(f"{path}: no data rows")
    return Dataset.build(np.array(feats), np.array(labels), names)


# --------------------------------------------------------------------------
# Iris

IRIS_FEATURES = ("sepal_length", "sepal_width", "petal_length", "petal_width")
_IRIS_CLASSES = {"setosa": 0, "versicolor": 1, "virginica": 1}


def iris_label(name: str) -> int:
    key = name.strip().lower()
    if key.startswith("iris-"):
        key = key[5:]
    if key not in _IRIS_CLASSES:
        raise DataError(f"unexpected iris class {name!r}")
    return _IRIS_CLASSES[key]


def prepare_iris(rows) -> Dataset:
    """Binary Iris: setosa -> 0, versicolor and virginica -> 1.

    ``rows`` are ``(f1, f2, f3, f4, class_name)`` records.
    """
    feats, labels = [], []
    for r in rows:
        if len(r) != 5:
            raise DataError(f"iris row must have 4 features and a class, got {r!r}")
        feats.append([float(v) for v in r[:4]])
        labels.append(iris_label(str(r[4])))
    return Dataset.build(feats, labels, IRIS_FEATURES)


def read_iris_raw(path) -> list[list[str]]:
    """Rows of a raw UCI ``iris.data`` style file (no header)."""
    with open(path, newline="") as fh:
        return [row for row in csv.reader(fh) if row and any(c.strip() for c in row)]


def bundled_iris_rows() -> list[list]:
    from sklearn.datasets import load_iris

    raw = load_iris()
    return [[*map(float, x), str(raw.target_names[t])] for x, t in zip(raw.data, raw.target)]


# --------------------------------------------------------------------------
# Heart Disease (UCI Cleveland)

HEART_FEATURES = ("age", "sex", "cp", "trestbps", "chol", "fbs", "restecg", "thalach", "exang",
                  "oldpeak", "slope", "ca", "thal")


def read_heart_raw(path) -> list[list[str]]:
    """Rows of UCI ``processed.cleveland.data`` (13 attributes plus ``num``, no header)."""
    try:
        with open(path, newline="") as fh:
            return [row for row in csv.reader(fh) if row and any(c.strip() for c in row)]
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror or exc}") from exc


def prepare_heart(rows, drop_missing: bool = True) -> Dataset:
    """Binary Heart Disease: ``num == 0`` -> 0, ``num > 0`` -> 1.

    Rows with ``?`` cells are dropped (never imputed) unless ``drop_missing``
    is false, in which case they are an error.
    """
    feats, labels = [], []
    for r, row in enumerate(rows, start=1):
        if len(row) != 14:
            raise DataError(f"heart row {r} has {len(row)} cells, expected 14")
        if any(c.strip() == "?" for c in row):
            if drop_missing:
                continue
            raise DataError(f"heart row {r} has a missing value")
        try:
            vals = [float(c) for c in row]
        except ValueError:
            raise DataError(f"heart row {r} has a non-numeric cell") from None
        feats.append(vals[:13])
        labels.append(int(vals[13] > 0))
    return Dataset.build(feats, labels, HEART_FEATURES)


# --------------------------------------------------------------------------
# folds

@dataclass(frozen=True)
class FoldPlan:
    k: int
    assignments: np.ndarray
    seed: int

    def test_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != fold)


def make_folds(ds: Dataset, k: int = 5, seed: int = 0) -> FoldPlan:
    """Stratified k-fold: each class is shuffled, then both are dealt round-robin.

    Dealing continues across the class boundary, so fold sizes differ by at
    most one and every fold's per-class count is within one of the others.
    """
    zeros, ones = ds.class_counts()
    if min(zeros, ones) < k:
        raise DataError(f"each class needs at least {k} rows for {k}-fold CV, got {zeros}/{ones}")
    rng = rng_for(seed, 0xF01D)
    order = np.concatenate([rng.permutation(np.flatnonzero(ds.labels == c)) for c in (0, 1)])
    assignments = np.empty(len(ds), dtype=np.int64)
    assignments[order] = np.arange(order.size) % k
    return FoldPlan(k, assignments, seed)


# --------------------------------------------------------------------------
# synthetic replication-like data

@dataclass(frozen=True)
class SynthGenerator:
    """Two Gaussians sharing an anisotropic covariance ``L L^T``."""

    mean0: np.ndarray
    mean1: np.ndarray
    chol: np.ndarray
    prior1: float

    def log_likelihood_ratio(self, x: np.ndarray) -> np.ndarray:
        # log p(x|1) - log p(x|0) for a shared covariance: linear in x
        sol = lambda v: np.linalg.solve(self.chol, v.T).T  # noqa: E731
        w0 = sol(x - self.mean0)
        w1 = sol(x - self.mean1)
        return 0.5 * (np.sum(w0 * w0, axis=1) - np.sum(w1 * w1, axis=1))

    def bayes_predict(self, x: np.ndarray) -> np.ndarray:
        threshold = math.log((1 - self.prior1) / self.prior1)
        return (self.log_likelihood_ratio(x) > threshold).astype(np.int64)

    def sample(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        n1 = int(round(n * self.prior1))
        y = np.array([0] * (n - n1) + [1] * n1, dtype=np.int64)
        y = y[rng.permutation(n)]
        z = rng.standard_normal((n, self.chol.shape[0]))
        x = z @ self.chol.T + np.where(y[:, None] == 1, self.mean1, self.mean0)
        return x, y


def synth_generator(n_features: int = 41, seed: int = 0, separation: float = 1.683,
                    prior1: float = 0.5, n_latent: int = 4, noise: float = 0.3) -> SynthGenerator:
    """Generator whose Bayes accuracy is ``Phi(separation / 2)`` for balanced classes.

    Features are ``n_latent`` shared factors plus idiosyncratic noise (relative
    size ``noise``) with unequal per-feature scales, so the covariance is
    anisotropic and strongly correlated.  The class means differ along the
    factor subspace by Mahalanobis distance ``separation``; the default 1.683
    gives Bayes accuracy 0.80.
    """
    rng = rng_for(seed, 0x5A17)
    n = n_features
    r = max(1, min(n_latent, n))
    loadings = rng.standard_normal((n, r))
    scales = np.exp(rng.uniform(-1.0, 1.0, size=n))
    idio = noise * rng.uniform(0.5, 1.5, size=n)
    cov = (loadings @ loadings.T + np.diag(idio ** 2)) * np.outer(scales, scales)
    chol = np.linalg.cholesky(cov)
    direction = (loadings @ rng.standard_normal(r)) * scales
    # rescale so the Mahalanobis distance between means is exactly `separation`
    w = np.linalg.solve(chol, direction)
    direction = direction * (separation / np.linalg.norm(w))
    mean0 = rng.normal(0.0, 1.0, size=n) * scales
    return SynthGenerator(mean0, mean0 + direction, chol, prior1)


def synth_replication_like(n_rows: int = 192, n_features: int = 41, seed: int = 0,
                           **kwargs) -> Dataset:
    gen = synth_generator(n_features, seed, **kwargs)
    x, y = gen.sample(n_rows, rng_for(seed, 0x5A18))
    return Dataset.build(x, y, [f"f{k:02d}" for k in range(n_features)])
