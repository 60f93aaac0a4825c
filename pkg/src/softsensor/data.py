"""Datasets, FIR design matrices, auto-scaling, segmentation and VIF."""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np


class DataError(ValueError):
    """Raised for malformed input data."""


class ZeroVarianceWarning(UserWarning):
    pass


PROCESS = "process"
TARGET = "target"
IGNORE = "ignore"


@dataclass(frozen=True)
class Dataset:
    """Time-ordered process measurements with one or more quality variables."""

    values: np.ndarray
    targets: np.ndarray
    var_names: tuple
    target_names: tuple
    sample_period: Optional[float] = None

    def __post_init__(self):
        values = np.array(self.values, dtype=float, ndmin=2)
        targets = np.array(self.targets, dtype=float)
        if targets.ndim == 1:
            targets = targets[:, None]
        if values.shape[0] < 1:
            raise DataError("dataset has zero rows")
        if targets.shape[0] != values.shape[0]:
            raise DataError(
                f"values has {values.shape[0]} rows but targets has {targets.shape[0]}"
            )
        if not (np.all(np.isfinite(values)) and np.all(np.isfinite(targets))):
            raise DataError("dataset contains missing or non-finite values")
        if len(self.var_names) != values.shape[1]:
            raise DataError("var_names length does not match number of process variables")
        if len(self.target_names) != targets.shape[1]:
            raise DataError("target_names length does not match number of targets")
        values.setflags(write=False)
        targets.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "targets", targets)
        object.__setattr__(self, "var_names", tuple(self.var_names))
        object.__setattr__(self, "target_names", tuple(self.target_names))

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def n_vars(self) -> int:
        return self.values.shape[1]

    @property
    def n_targets(self) -> int:
        return self.targets.shape[1]

    def rows(self, start: int, stop: int) -> "Dataset":
        return Dataset(
            self.values[start:stop],
            self.targets[start:stop],
            self.var_names,
            self.target_names,
            self.sample_period,
        )

    def select_vars(self, indices: Sequence[int]) -> "Dataset":
        indices = list(indices)
        return Dataset(
            self.values[:, indices],
            self.targets,
            [self.var_names[i] for i in indices],
            self.target_names,
            self.sample_period,
        )


@dataclass(frozen=True)
class DesignMatrix:
    """FIR-lagged predictors aligned with one response.

    Row ``i`` corresponds to original time index ``row_offset + i``. Column ``j``
    holds variable ``j % r`` at lag ``j // r``.
    """

    X: np.ndarray
    y: np.ndarray
    lag_order: int
    n_vars: int
    row_offset: int
    col_names: tuple = field(default=())

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.row_offset, self.row_offset + self.X.shape[0])

    def lag_block(self, lag: int) -> np.ndarray:
        r = self.n_vars
        return self.X[:, lag * r:(lag + 1) * r]


def load_dataset(
    path,
    schema: Mapping[str, str],
    delimiter: str = ",",
    sample_period: Optional[float] = None,
) -> Dataset:
    """Read a CSV file with a header row into a :class:`Dataset`.

    ``schema`` maps every header column to ``"process"``, ``"target"`` or
    ``"ignore"``. Lines starting with ``#`` are treated as comments.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"dataset file not found: {path}")
    with path.open(newline="") as fh:
        lines = [ln for ln in fh if not ln.lstrip().startswith("#") and ln.strip()]
    reader = csv.reader(lines, delimiter=delimiter)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise DataError(f"{path}: empty file (no header row)") from None

    unknown = [h for h in header if h not in schema]
    if unknown:
        raise DataError(f"{path}: columns without a role: {unknown}")
    missing = [c for c in schema if c not in header]
    if missing:
        raise DataError(f"{path}: schema references absent columns: {missing}")
    for col, role in schema.items():
        if role not in (PROCESS, TARGET, IGNORE):
            raise DataError(f"unknown role {role!r} for column {col!r}")

    proc_idx = [i for i, h in enumerate(header) if schema[h] == PROCESS]
    targ_idx = [i for i, h in enumerate(header) if schema[h] == TARGET]
    if not targ_idx:
        raise DataError("schema defines no target column")

    rows = []
    # data rows are numbered from 1, header excluded
    for rownum, raw in enumerate(reader, start=1):
        if len(raw) != len(header):
            raise DataError(
                f"{path}: row {rownum} has {len(raw)} fields, expected {len(header)}"
            )
        parsed = []
        for col, cell in zip(header, raw):
            if schema[col] == IGNORE:
                parsed.append(0.0)
                continue
            try:
                val = float(cell)
            except ValueError:
                raise DataError(
                    f"{path}: non-numeric value {cell!r} at row {rownum}, column {col!r}"
                ) from None
            if not np.isfinite(val):
                raise DataError(f"{path}: non-finite value at row {rownum}, column {col!r}")
            parsed.append(val)
        rows.append(parsed)
    if not rows:
        raise DataError(f"{path}: zero data rows")

    arr = np.asarray(rows, dtype=float)
    return Dataset(
        arr[:, proc_idx],
        arr[:, targ_idx],
        [header[i] for i in proc_idx],
        [header[i] for i in targ_idx],
        sample_period,
    )


def build_fir_matrix(ds: Dataset, target_index: int = 0, n: int = 0) -> DesignMatrix:
    """Stack current and ``n`` lagged samples of every process variable."""
    N, r = ds.values.shape
    if not 0 <= target_index < ds.n_targets:
        raise DataError(f"target_index {target_index} out of range for {ds.n_targets} targets")
    if n < 0:
        raise DataError("lag order must be non-negative")
    if n >= N:
        raise DataError(f"lag order {n} leaves no rows (N={N})")
    blocks = [ds.values[n - lag:N - lag] for lag in range(n + 1)]
    X = np.hstack(blocks)
    y = ds.targets[n:, target_index].copy()
    names = tuple(
        name if lag == 0 else f"{name}[t-{lag}]"
        for lag in range(n + 1)
        for name in ds.var_names
    )
    return DesignMatrix(X, y, n, r, n, names)


@dataclass(frozen=True)
class Scaler:
    """Column means/stds of a training block plus the response statistics.

    ``keep`` flags columns with nonzero variance; excluded columns are dropped
    by :meth:`transform_X`.
    """

    means: np.ndarray
    stds: np.ndarray
    y_mean: float
    y_std: float
    keep: np.ndarray

    @property
    def n_features(self) -> int:
        return self.means.shape[0]

    def transform_X(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return (X[..., self.keep] - self.means[self.keep]) / self.stds[self.keep]

    def transform_y(self, y) -> np.ndarray:
        return (np.asarray(y, dtype=float) - self.y_mean) / self.y_std

    def inverse_X(self, Xs) -> np.ndarray:
        Xs = np.asarray(Xs, dtype=float)
        out = np.broadcast_to(self.means, Xs.shape[:-1] + self.means.shape).copy()
        out[..., self.keep] = Xs * self.stds[self.keep] + self.means[self.keep]
        return out

    def inverse_y(self, ys):
        return np.asarray(ys, dtype=float) * self.y_std + self.y_mean

    def to_dict(self) -> dict:
        return {
            "means": self.means.tolist(),
            "stds": self.stds.tolist(),
            "y_mean": float(self.y_mean),
            "y_std": float(self.y_std),
            "keep": self.keep.astype(bool).tolist(),
        }

    @classmethod
    def from_dict(cls, d) -> "Scaler":
        return cls(
            np.asarray(d["means"], dtype=float),
            np.asarray(d["stds"], dtype=float),
            float(d["y_mean"]),
            float(d["y_std"]),
            np.asarray(d["keep"], dtype=bool),
        )


# relative tolerance below which a column's spread counts as zero
_ZERO_VAR_RTOL = 1e-12


def autoscale_fit(X, y, warn: bool = True) -> Scaler:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise DataError("need a 2-D predictor block with at least two rows")
    means = X.mean(axis=0)
    stds = X.std(axis=0, ddof=1)
    scale = np.maximum(np.abs(means), 1.0)
    keep = stds > _ZERO_VAR_RTOL * scale
    if not keep.any():
        raise DataError("all predictor columns have zero variance")
    if warn and not keep.all():
        warnings.warn(
            f"{int((~keep).sum())} zero-variance column(s) excluded from modeling",
            ZeroVarianceWarning,
            stacklevel=2,
        )
    stds = np.where(keep, stds, 1.0)
    y_mean = float(y.mean())
    y_std = float(y.std(ddof=1))
    if not y_std > _ZERO_VAR_RTOL * max(abs(y_mean), 1.0):
        # constant response: centering alone, scale left at one
        y_std = 1.0
    return Scaler(means, stds, y_mean, y_std, keep)


def autoscale_apply(scaler: Scaler, X, y=None):
    Xs = scaler.transform_X(X)
    if y is None:
        return Xs, None
    return Xs, scaler.transform_y(y)


def segment(ds, k: int, train_size: int, test_size: int) -> list:
    """Split the rows of ``ds`` into ``k`` successive train/test regions.

    ``ds`` may be a :class:`Dataset` or a row count. Returns a list of
    ``(train, test)`` pairs of ``range`` objects over row indices.
    """
    N = ds.n_samples if isinstance(ds, Dataset) else int(ds)
    if k < 1 or train_size < 1 or test_size < 1:
        raise DataError("segments, train_size and test_size must be positive")
    length = train_size + test_size
    if k * length > N:
        raise DataError(
            f"insufficient data: {k} segments of {train_size}+{test_size} rows need "
            f"{k * length}, have {N}"
        )
    out = []
    for i in range(k):
        start = i * length
        out.append(
            (range(start, start + train_size), range(start + train_size, start + length))
        )
    return out


def vif(X) -> np.ndarray:
    """Variance inflation factor of every column.

    Computed from the inverse of the correlation matrix; columns that are
    (numerically) linear combinations of others get ``inf``.
    """
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    if p == 1:
        return np.ones(1)
    Xc = X - X.mean(axis=0)
    norms = np.linalg.norm(Xc, axis=0)
    out = np.full(p, np.inf)
    ok = norms > 0
    Z = Xc[:, ok] / norms[ok]
    R = Z.T @ Z
    # smallest eigenvalue against machine precision decides singularity
    evals, evecs = np.linalg.eigh(R)
    tol = evals.max() * max(R.shape) * np.finfo(float).eps * 10
    good = evals > tol
    if good.all():
        inv_diag = np.einsum("ij,j,ij->i", evecs, 1.0 / evals, evecs)
        out[ok] = np.maximum(inv_diag, 1.0)
        return out
    # singular: columns loading on null directions are infinitely inflated
    null_load = np.abs(evecs[:, ~good]).max(axis=1) > 1e-8
    inv_diag = np.einsum("ij,j,ij->i", evecs[:, good], 1.0 / evals[good], evecs[:, good])
    vals = np.where(null_load, np.inf, np.maximum(inv_diag, 1.0))
    out[ok] = vals
    return out


def dataset_csv_text(ds: Dataset, header_lines: Sequence[str] = ()) -> str:
    """Render ``ds`` in the CSV schema accepted by :func:`load_dataset`.

    ``header_lines`` are emitted first as ``#`` comments. Values use ``repr``
    so that a round trip is exact.
    """
    out = [f"# {line}" for line in header_lines]
    out.append(",".join(list(ds.var_names) + list(ds.target_names)))
    for z, y in zip(ds.values, ds.targets):
        out.append(",".join(repr(float(v)) for v in (*z, *y)))
    return "\n".join(out) + "\n"


def dataset_schema(ds: Dataset) -> dict:
    schema = {name: PROCESS for name in ds.var_names}
    schema.update({name: TARGET for name in ds.target_names})
    return schema
