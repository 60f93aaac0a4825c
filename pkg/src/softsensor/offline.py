"""Static models: tune on a training block, fit once, predict a test block."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import Dataset, build_fir_matrix
from .learners import fit, normalize_learner, predict_many
from .tuning import cv_tune, make_spec


@dataclass
class OfflineResult:
    learner: str
    lag_order: int
    param: Optional[float]
    t: np.ndarray  # original row indices of the test predictions
    y: np.ndarray
    yhat: np.ndarray
    variance: Optional[np.ndarray] = None
    tuning: dict = field(default_factory=dict)

    @property
    def errors(self) -> np.ndarray:
        return self.y - self.yhat

    def rmse(self) -> float:
        return float(np.sqrt(np.mean(self.errors ** 2)))


def run_offline(ds: Dataset, learner: str, train_rows: range, test_rows: range,
                lag_order: int = 0, folds: int = 10, repeats: int = 20, seed: int = 0,
                grid=None, target_index: int = 0) -> OfflineResult:
    """Rows are original dataset indices; rows earlier than the lag order are skipped."""
    learner = normalize_learner(learner)
    dm = build_fir_matrix(ds, target_index, lag_order)
    off = dm.row_offset
    tr = np.array([r for r in train_rows if r >= off], dtype=np.int64)
    te = np.array([r for r in test_rows if r >= off], dtype=np.int64)
    if tr.size < 2 or te.size == 0:
        raise ValueError("empty training or test block after applying the lag order")
    X, y = dm.X[tr - off], dm.y[tr - off]
    param, tuning = None, {}
    if learner != "rvm":
        res = cv_tune(X, y, make_spec(learner, X, folds, repeats, seed, grid))
        param, tuning = res.best_param, res.to_dict()
    model = fit(learner, X, y, param)
    mean, var = predict_many(model, dm.X[te - off])
    return OfflineResult(learner, lag_order, param, te, dm.y[te - off], mean, var, tuning)
