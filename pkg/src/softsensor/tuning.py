"""Repeated K-fold cross-validation over the PLS component count or the Lasso penalty."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .data import autoscale_fit
from .learners import fit, lasso_path, normalize_learner, pls_path, predict_many

PLS_MAX_COMPONENTS = 25
LASSO_GRID_SIZE = 30
LASSO_GRID_RANGE = (1e-6, 1.0)
TIE_TOL = 1e-12


def default_lasso_grid(n: int = LASSO_GRID_SIZE) -> tuple:
    lo, hi = LASSO_GRID_RANGE
    return tuple(float(v) for v in np.logspace(np.log10(lo), np.log10(hi), n))


def default_pls_grid(n_features: int, max_fit_rows: Optional[int] = None) -> tuple:
    """Component counts ``1..min(25, d)``, further limited by the smallest training fold."""
    top = min(PLS_MAX_COMPONENTS, int(n_features))
    if max_fit_rows is not None:
        top = min(top, int(max_fit_rows) - 1)
    if top < 1:
        raise ValueError("not enough rows to fit even one PLS component")
    return tuple(range(1, top + 1))


def default_grid(learner: str, n_features: int, max_fit_rows: Optional[int] = None) -> tuple:
    learner = normalize_learner(learner)
    if learner == "pls":
        return default_pls_grid(n_features, max_fit_rows)
    if learner == "lasso":
        return default_lasso_grid()
    raise ValueError("RVM has no tuning parameter")


@dataclass(frozen=True)
class TuningSpec:
    learner: str
    grid: tuple
    folds: int = 10
    repeats: int = 20
    seed: int = 0

    def __post_init__(self):
        learner = normalize_learner(self.learner)
        if learner == "rvm":
            raise ValueError("RVM is not cross-validated: it has no tuning parameter")
        object.__setattr__(self, "learner", learner)
        grid = tuple(self.grid)
        if not grid:
            raise ValueError("tuning grid is empty")
        if learner == "pls":
            if any(int(g) != g or not 1 <= g <= PLS_MAX_COMPONENTS for g in grid):
                raise ValueError(f"PLS grid values must be integers in 1..{PLS_MAX_COMPONENTS}")
            grid = tuple(int(g) for g in grid)
        else:
            if any(not np.isfinite(g) or g < 0 for g in grid):
                raise ValueError("Lasso grid values must be finite and non-negative")
            grid = tuple(float(g) for g in grid)
        object.__setattr__(self, "grid", grid)
        if self.folds < 2:
            raise ValueError("folds must be at least 2")
        if self.repeats < 1:
            raise ValueError("repeats must be at least 1")


@dataclass(frozen=True)
class TuningResult:
    best_param: float
    grid: tuple
    cv_curve: np.ndarray  # mean CV-RMSE per grid point
    per_fold: np.ndarray  # repeats x folds x grid, raw fold RMSEs
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "best_param": self.best_param,
            "grid": list(self.grid),
            "cv_curve": self.cv_curve.tolist(),
            "per_fold": self.per_fold.tolist(),
            "metadata": self.metadata,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def fold_assignments(n: int, folds: int, repeats: int, seed: int) -> list:
    """Validation index sets: one list of ``folds`` disjoint arrays per repeat."""
    rng = np.random.default_rng(seed)
    return [np.array_split(rng.permutation(n), folds) for _ in range(repeats)]


def _path(learner, Xtr, ytr, values):
    scaler = autoscale_fit(Xtr, ytr, warn=False)
    Xs = scaler.transform_X(Xtr)
    ys = scaler.transform_y(ytr)
    if learner == "pls":
        top = int(max(values))
        achievable = min(top, Xs.shape[1], Xs.shape[0] - 1)
        path = pls_path(Xs, ys, achievable, scaler)
        # component counts past the column rank reuse the saturated model
        rows = [path[min(int(v), achievable) - 1] for v in values]
        return np.array(rows), scaler
    return lasso_path(Xs, ys, values, scaler), scaler


def _select(values, curve, learner) -> float:
    m = curve.min()
    tied = np.flatnonzero(curve - m <= TIE_TOL * max(1.0, abs(m)))
    cand = [values[i] for i in tied]
    # the most parsimonious of the tied models
    return min(cand) if learner == "pls" else max(cand)


def cv_tune(X, y, spec: TuningSpec) -> TuningResult:
    """Grid search by repeated K-fold CV.

    ``X``/``y`` are in model units; the auto-scaler is refit on every training
    fold so that validation rows never inform the scaling. Fold RMSEs are
    measured on the original response scale.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    N = X.shape[0]
    K = spec.folds
    if N < K:
        raise ValueError(f"window of {N} samples is smaller than folds={K}")
    min_train = N - int(np.ceil(N / K))
    if spec.learner == "pls" and max(spec.grid) > min_train - 1:
        raise ValueError(
            f"fold too small for L={max(spec.grid)}: smallest training fold has {min_train} rows"
        )

    # duplicates share one evaluation so they cannot perturb the choice
    values = sorted(set(spec.grid))
    pos = {v: i for i, v in enumerate(values)}
    errs = np.empty((spec.repeats, K, len(values)))
    for r, assignment in enumerate(fold_assignments(N, K, spec.repeats, spec.seed)):
        for f, val_idx in enumerate(assignment):
            mask = np.ones(N, dtype=bool)
            mask[val_idx] = False
            coefs, scaler = _path(spec.learner, X[mask], y[mask], values)
            Xv = (X[val_idx] - scaler.means) / scaler.stds
            pred_s = Xv @ coefs.T
            pred = pred_s * scaler.y_std + scaler.y_mean
            resid = pred - y[val_idx][:, None]
            errs[r, f] = np.sqrt(np.mean(resid ** 2, axis=0))

    curve_u = errs.mean(axis=(0, 1))
    best = _select(values, curve_u, spec.learner)
    idx = [pos[v] for v in spec.grid]
    return TuningResult(
        best_param=best,
        grid=spec.grid,
        cv_curve=curve_u[idx],
        per_fold=errs[:, :, idx],
        metadata={"learner": spec.learner, "folds": K, "repeats": spec.repeats,
                  "seed": spec.seed, "n_rows": N},
    )


def per_window_tune(X, y, spec: TuningSpec) -> TuningResult:
    """Single-pass K-fold CV inside one moving window."""
    single = TuningSpec(spec.learner, spec.grid, spec.folds, 1, spec.seed)
    res = cv_tune(X, y, single)
    res.metadata["repeats_requested"] = spec.repeats
    res.metadata["repeats"] = 1
    return res


def make_spec(learner: str, X, folds: int = 10, repeats: int = 20, seed: int = 0,
              grid: Optional[Sequence] = None) -> TuningSpec:
    """Spec with the default grid for ``X``'s shape when ``grid`` is omitted."""
    X = np.asarray(X)
    N, p = X.shape
    if grid is None:
        min_train = N - int(np.ceil(N / folds)) if N >= folds else N
        grid = default_grid(learner, p, min_train)
    return TuningSpec(learner, tuple(grid), folds, repeats, seed)


def cv_score(learner: str, X, y, param=None, folds: int = 10, repeats: int = 20,
             seed: int = 0) -> float:
    """Mean repeated K-fold RMSE of one fixed learner configuration.

    Used to rank FIR lag orders for learners without a tuning grid (RVM); the
    fold assignment is the one :func:`cv_tune` draws for the same seed.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    N = X.shape[0]
    if N < folds:
        raise ValueError(f"window of {N} samples is smaller than folds={folds}")
    errs = []
    for assignment in fold_assignments(N, folds, repeats, seed):
        for val_idx in assignment:
            mask = np.ones(N, dtype=bool)
            mask[val_idx] = False
            model = fit(learner, X[mask], y[mask], param)
            pred, _ = predict_many(model, X[val_idx])
            errs.append(np.sqrt(np.mean((pred - y[val_idx]) ** 2)))
    return float(np.mean(errs))
