from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..data import Scaler


class FitError(RuntimeError):
    """A learner failed to produce a model."""


@dataclass(frozen=True)
class Prediction:
    mean: float
    variance: Optional[float] = None


def identity_scaler(p: int) -> Scaler:
    return Scaler(np.zeros(p), np.ones(p), 0.0, 1.0, np.ones(p, dtype=bool))


def expand_coef(coef, scaler: Optional[Scaler]) -> np.ndarray:
    """Place coefficients of retained columns into a full-length vector."""
    coef = np.asarray(coef, dtype=float)
    if scaler is None or scaler.keep.all():
        return coef.copy()
    beta = np.zeros(scaler.n_features)
    beta[scaler.keep] = coef
    return beta


def standardize_full(scaler: Scaler, X) -> np.ndarray:
    """Standardize every column; excluded columns end up as ``x - mean``.

    Their coefficients are zero, so the value does not matter.
    """
    X = np.asarray(X, dtype=float)
    if X.shape[-1] != scaler.n_features:
        raise ValueError(
            f"expected {scaler.n_features} predictors, got {X.shape[-1]}"
        )
    return (X - scaler.means) / scaler.stds


class LinearModel:
    """Mixin for models with ``beta``/``intercept`` on the standardized scale."""

    learner = "linear"

    def predict_standardized(self, Xs) -> np.ndarray:
        # row-wise reduction: a row's prediction does not depend on the block it sits in
        return np.einsum("ij,j->i", np.atleast_2d(Xs), self.beta) + self.intercept

    def predict(self, X) -> np.ndarray:
        """Predictions in original target units for a block of raw rows."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Xs = standardize_full(self.scaler, X)
        return self.scaler.inverse_y(self.predict_standardized(Xs))

    @property
    def n_features(self) -> int:
        return self.beta.shape[0]

    def raw_coefficients(self):
        """Slope and offset of the prediction rule in original units."""
        sc = self.scaler
        slope = sc.y_std * self.beta / sc.stds
        offset = sc.y_mean + sc.y_std * self.intercept - slope @ sc.means
        return slope, float(offset)
