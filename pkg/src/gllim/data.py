"""Training data container and headerless-CSV ingestion."""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParseError, ShapeError


@dataclass(frozen=True)
class Dataset:
    """Observed pairs (t_n, y_n); ``W_true`` is kept only for diagnostics."""

    T: np.ndarray
    Y: np.ndarray
    W_true: np.ndarray | None = None

    def __post_init__(self):
        Y = np.atleast_2d(np.asarray(self.Y, dtype=float))
        T = np.asarray(self.T, dtype=float)
        if T.ndim == 1:
            T = T.reshape(Y.shape[0], -1)
        if T.ndim != 2 or Y.ndim != 2:
            raise ShapeError("T and Y must be 2-d arrays")
        if Y.shape[0] < 1:
            raise ShapeError("dataset is empty")
        if T.shape[0] != Y.shape[0]:
            raise ShapeError(f"T has {T.shape[0]} rows but Y has {Y.shape[0]}")
        if not (np.all(np.isfinite(T)) and np.all(np.isfinite(Y))):
            raise ShapeError("dataset contains non-finite entries")
        object.__setattr__(self, "T", T)
        object.__setattr__(self, "Y", Y)
        if self.W_true is not None:
            W = np.asarray(self.W_true, dtype=float).reshape(Y.shape[0], -1)
            object.__setattr__(self, "W_true", W)

    @property
    def N(self):
        return self.Y.shape[0]

    @property
    def D(self):
        return self.Y.shape[1]

    @property
    def L_t(self):
        return self.T.shape[1]

    def subset(self, idx):
        W = None if self.W_true is None else self.W_true[idx]
        return Dataset(self.T[idx], self.Y[idx], W)


def unsupervised(Y):
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    return Dataset(np.zeros((Y.shape[0], 0)), Y)


@dataclass
class Standardizer:
    """Per-column affine map to zero mean and unit variance."""

    shift: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X):
        X = np.asarray(X, dtype=float)
        shift = X.mean(axis=0)
        scale = X.std(axis=0)
        scale[scale == 0] = 1.0
        return cls(shift, scale)

    def transform(self, X):
        return (np.asarray(X, dtype=float) - self.shift) / self.scale

    def inverse(self, X):
        return np.asarray(X, dtype=float) * self.scale + self.shift

    def to_dict(self):
        return {"shift": self.shift.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["shift"], dtype=float), np.asarray(d["scale"], dtype=float))


def read_csv_matrix(path, header=False):
    """Parse a numeric CSV into an (N, P) array, reporting the bad line."""
    path = Path(path)
    rows = []
    width = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if header and lineno == 1:
                continue
            line = line.strip()
            if not line:
                continue
            cells = line.split(",")
            try:
                row = [float(c) for c in cells]
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-numeric cell", path, lineno) from None
            if not all(np.isfinite(row)):
                raise ParseError(f"{path}:{lineno}: non-finite cell", path, lineno)
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise ParseError(
                    f"{path}:{lineno}: expected {width} columns, got {len(row)}", path, lineno
                )
            rows.append(row)
    if not rows:
        raise ParseError(f"{path}: no data rows", path, None)
    return np.array(rows, dtype=float)


@dataclass
class LoadedData:
    data: Dataset
    t_scaler: Standardizer | None = None
    y_scaler: Standardizer | None = None
    info: dict = field(default_factory=dict)


def load_dataset(path_t, path_y, standardize=False, header=False):
    """Read T (optional) and Y CSV files into a validated :class:`Dataset`."""
    Y = read_csv_matrix(path_y, header)
    if path_t is None:
        T = np.zeros((Y.shape[0], 0))
    else:
        T = read_csv_matrix(path_t, header)
        if T.shape[0] != Y.shape[0]:
            raise ParseError(
                f"row-count mismatch: {path_t} has {T.shape[0]} rows, {path_y} has {Y.shape[0]}",
                path_t,
                min(T.shape[0], Y.shape[0]) + 1 + int(header),
            )
    t_scaler = y_scaler = None
    if standardize:
        y_scaler = Standardizer.fit(Y)
        Y = y_scaler.transform(Y)
        if T.shape[1]:
            t_scaler = Standardizer.fit(T)
            T = t_scaler.transform(T)
    data = Dataset(T, Y)
    info = {"N": data.N, "D": data.D, "L_t": data.L_t}
    return LoadedData(data, t_scaler, y_scaler, info)
