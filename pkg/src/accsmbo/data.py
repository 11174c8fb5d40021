"""Datasets: svmlight parsing, deterministic splits and synthetic generators."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .acquisition import MetaRecord, write_meta_records
from .exceptions import DataFormatError, InvalidInputError

TRAIN_FRACTION = 0.7
# below this density the split matrices stay sparse
DENSE_THRESHOLD = 0.25


@dataclass(frozen=True, eq=False)
class Dataset:
    X: sp.csr_matrix
    y: np.ndarray
    n_features: int
    train_idx: np.ndarray
    val_idx: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.X.shape[0] != len(self.y):
            raise InvalidInputError("row count and label count differ")
        if not np.all(np.isin(self.y, (-1.0, 1.0))):
            raise InvalidInputError("labels must be -1 or +1")
        both = np.concatenate([self.train_idx, self.val_idx])
        if len(both) != len(self.y) or len(np.unique(both)) != len(self.y):
            raise InvalidInputError("train/validation indices must partition the rows")

    @property
    def n_samples(self) -> int:
        return self.X.shape[0]

    @property
    def density(self) -> float:
        n, p = self.X.shape
        return self.X.nnz / float(n * p) if n * p else 0.0

    def _part(self, name: str, idx: np.ndarray):
        if name not in self._cache:
            Xp = self.X[idx]
            if self.density >= DENSE_THRESHOLD:
                Xp = np.ascontiguousarray(Xp.toarray())
            self._cache[name] = (Xp, self.y[idx].astype(float))
        return self._cache[name]

    def train(self):
        """``(X, y)`` of the training split; dense ndarray or CSR by density."""
        return self._part("train", self.train_idx)

    def validation(self):
        return self._part("val", self.val_idx)


def split_indices(n: int, seed: int = 0, train_fraction: float = TRAIN_FRACTION):
    if n < 2:
        raise InvalidInputError("need at least two samples to split")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(np.floor(train_fraction * n + 0.5))
    n_train = min(max(n_train, 1), n - 1)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def make_dataset(X, y, n_features: int | None = None, seed: int = 0) -> Dataset:
    X = sp.csr_matrix(X, dtype=float)
    y = normalize_labels(np.asarray(y, dtype=float))
    if n_features is not None and n_features > X.shape[1]:
        X = sp.csr_matrix((X.data, X.indices, X.indptr), shape=(X.shape[0], n_features))
    train_idx, val_idx = split_indices(X.shape[0], seed)
    return Dataset(X, y, X.shape[1], train_idx, val_idx)


def normalize_labels(y: np.ndarray) -> np.ndarray:
    """Map a two-valued label vector onto {-1, +1}; {0, 1} maps 0 -> -1."""
    values = set(np.unique(y).tolist())
    if values <= {-1.0, 1.0}:
        return y.astype(float)
    if values <= {0.0, 1.0}:
        return np.where(y > 0, 1.0, -1.0)
    raise DataFormatError(f"labels must be binary (+-1 or 0/1), found {sorted(values)[:5]}")


def parse_svmlight(text_lines, source: str = "<input>"):
    """Parse ``label idx:val ...`` lines (1-based indices) into CSR data."""
    labels, indptr, indices, data = [], [0], [], []
    max_index = 0
    for lineno, raw in enumerate(text_lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            labels.append(float(parts[0]))
        except ValueError:
            raise DataFormatError(f"{source}:{lineno}: bad label {parts[0]!r}") from None
        last = 0
        for tok in parts[1:]:
            idx_s, sep, val_s = tok.partition(":")
            if not sep:
                raise DataFormatError(f"{source}:{lineno}: expected idx:value, got {tok!r}")
            if idx_s == "qid":
                continue
            try:
                idx, val = int(idx_s), float(val_s)
            except ValueError:
                raise DataFormatError(f"{source}:{lineno}: bad feature {tok!r}") from None
            if idx < 1:
                raise DataFormatError(f"{source}:{lineno}: feature indices are 1-based, got {idx}")
            if idx <= last:
                raise DataFormatError(f"{source}:{lineno}: feature indices must increase")
            last = idx
            max_index = max(max_index, idx)
            indices.append(idx - 1)
            data.append(val)
        indptr.append(len(indices))
    if not labels:
        raise DataFormatError(f"{source}: no samples")
    X = sp.csr_matrix(
        (np.asarray(data, float), np.asarray(indices, np.int64), np.asarray(indptr, np.int64)),
        shape=(len(labels), max_index),
    )
    return X, np.asarray(labels)


def load_dataset(path, seed: int = 0, n_features: int | None = None) -> Dataset:
    path = Path(path)
    try:
        with path.open() as fh:
            X, y = parse_svmlight(fh, str(path))
    except OSError as exc:
        raise DataFormatError(f"{path}: {exc.strerror}") from exc
    return make_dataset(X, y, n_features=n_features, seed=seed)


def _fmt(v: float) -> str:
    return format(float(v), ".6g")


def write_svmlight(X, y, path) -> None:
    X = sp.csr_matrix(X)
    with Path(path).open("w") as fh:
        for i in range(X.shape[0]):
            lo, hi = X.indptr[i], X.indptr[i + 1]
            feats = " ".join(f"{j + 1}:{_fmt(v)}" for j, v in zip(X.indices[lo:hi], X.data[lo:hi]))
            label = "+1" if y[i] > 0 else "-1"
            fh.write(f"{label} {feats}\n" if feats else f"{label}\n")


def synthetic_classification(
    n_samples: int = 1458,
    n_features: int = 38,
    sparsity: float = 0.0,
    label_noise: float = 0.1,
    seed: int = 0,
):
    """Linear-teacher binary data with values in (0, 1) and flipped labels.

    Each entry is non-zero with probability ``1 - sparsity``.  Labels come
    from the sign of a centred random linear score; a ``label_noise``
    fraction of them is flipped.
    """
    if not 0.0 <= sparsity < 1.0:
        raise InvalidInputError("sparsity must lie in [0, 1)")
    if not 0.0 <= label_noise < 0.5:
        raise InvalidInputError("label noise must lie in [0, 0.5)")
    rng = np.random.default_rng(seed)
    mask = rng.random((n_samples, n_features)) >= sparsity
    values = np.round(rng.uniform(0.0, 1.0, (n_samples, n_features)), 6)
    values[values == 0.0] = 1e-6
    dense = np.where(mask, values, 0.0)
    teacher = rng.normal(size=n_features)
    score = (dense - dense.mean(axis=0)) @ teacher
    y = np.where(score >= 0, 1.0, -1.0)
    flip = rng.random(n_samples) < label_noise
    y[flip] = -y[flip]
    return sp.csr_matrix(dense), y


def synthetic_meta_records(
    n_records: int = 200,
    center: float = 0.3,
    spread: float = 0.05,
    tags: tuple[str, str, str] = ("logloss", "binary-classification", "sparse"),
    other_fraction: float = 0.25,
    delete_fraction: float = 0.0,
    seed: int = 0,
    bounds: tuple[float, float] = (0.0, 1.0),
) -> list[MetaRecord]:
    """Best-value records clustered around ``center`` plus off-tag clutter.

    ``delete_fraction`` drops that share of records at random, mirroring an
    incomplete metalearning database.
    """
    lo, hi = bounds
    rng = np.random.default_rng(seed)
    n_other = int(round(other_fraction * n_records))
    values = np.clip(rng.normal(center, spread, n_records - n_other), lo, hi)
    records = [MetaRecord(*tags, v) for v in values]
    other_tags = ("f1", "multiclass-classification", "dense")
    records += [MetaRecord(*other_tags, v) for v in rng.uniform(lo, hi, n_other)]
    order = rng.permutation(len(records))
    records = [records[i] for i in order]
    if delete_fraction > 0:
        keep = rng.random(len(records)) >= delete_fraction
        records = [r for r, k in zip(records, keep) if k]
    # values are written with repr; round-trip them now so in-memory == on-disk
    return [MetaRecord(*r.tags, float(repr(float(r.best_point[0])))) for r in records]


def gen_synthetic(kind: str, params: dict, seed: int, out_path) -> Path:
    """Write a synthetic svmlight dataset (``kind="svmlight"``) or record CSV (``"meta"``)."""
    out_path = Path(out_path)
    params = dict(params)
    if kind == "svmlight":
        X, y = synthetic_classification(seed=seed, **params)
        write_svmlight(X, y, out_path)
    elif kind == "meta":
        write_meta_records(synthetic_meta_records(seed=seed, **params), out_path)
    else:
        raise InvalidInputError(f"unknown synthetic kind {kind!r}")
    return out_path
