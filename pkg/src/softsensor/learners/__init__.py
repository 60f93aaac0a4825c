"""PLS, Lasso and RVM regression sharing one linear prediction rule."""
from __future__ import annotations

import json
from typing import Optional

import numpy as np

from ..data import Scaler, autoscale_fit
from ._base import FitError, LinearModel, Prediction, standardize_full
from .lasso import LassoConvergenceError, LassoModel, lasso_fit, lasso_path
from .pls import PlsConvergenceError, PlsModel, pls_fit, pls_path
from .rvm import RvmFitError, RvmModel, rvm_fit

LEARNERS = ("pls", "lasso", "rvm")

__all__ = [
    "LEARNERS",
    "FitError",
    "LassoConvergenceError",
    "LassoModel",
    "PlsConvergenceError",
    "PlsModel",
    "Prediction",
    "RvmFitError",
    "RvmModel",
    "fit",
    "lasso_fit",
    "lasso_path",
    "model_from_json",
    "model_to_json",
    "pls_fit",
    "pls_path",
    "predict",
    "predict_many",
    "rvm_fit",
]


def normalize_learner(name: str) -> str:
    key = name.strip().lower()
    if key not in LEARNERS:
        raise ValueError(f"unknown learner {name!r}; expected one of {LEARNERS}")
    return key


def fit(learner: str, X, y, param=None, *, scaler: Optional[Scaler] = None, warn=False):
    """Auto-scale raw ``X``/``y`` and fit the named learner.

    ``param`` is the component count for PLS, lambda for Lasso and the
    stopping tolerance for RVM (default 1e-3).
    """
    learner = normalize_learner(learner)
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if scaler is None:
        scaler = autoscale_fit(X, y, warn=warn)
    Xs = scaler.transform_X(X)
    ys = scaler.transform_y(y)
    if learner == "pls":
        if param is None:
            raise ValueError("PLS needs a component count")
        L = min(int(param), Xs.shape[1], Xs.shape[0] - 1)
        return pls_fit(Xs, ys, L, scaler)
    if learner == "lasso":
        if param is None:
            raise ValueError("Lasso needs a lambda")
        return lasso_fit(Xs, ys, float(param), scaler)
    tol = 1e-3 if param is None else float(param)
    return rvm_fit(Xs, ys, tol, scaler)


def predict(model: LinearModel, x) -> Prediction:
    """Predict one raw predictor vector."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != model.n_features:
        raise ValueError(f"expected a vector of {model.n_features} predictors, got shape {x.shape}")
    mean = float(model.predict(x[None, :])[0])
    var = None
    if isinstance(model, RvmModel):
        var = float(model.predict_variance(x[None, :])[0])
    return Prediction(mean, var)


def predict_many(model: LinearModel, X):
    """Means (and RVM variances, else ``None``) for a block of raw rows."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    mean = model.predict(X)
    var = model.predict_variance(X) if isinstance(model, RvmModel) else None
    return mean, var


def model_to_dict(model: LinearModel) -> dict:
    d = {
        "learner": model.learner,
        "scaler": model.scaler.to_dict(),
        "beta": model.beta.tolist(),
        "intercept": float(model.intercept),
    }
    if isinstance(model, PlsModel):
        d["internals"] = {
            "n_components": model.n_components,
            "requested_components": model.requested_components,
            "weights": model.weights.tolist(),
            "x_loadings": model.x_loadings.tolist(),
            "inner_coef": model.inner_coef.tolist(),
        }
    elif isinstance(model, LassoModel):
        d["internals"] = {"lambda": model.lam, "active_set": model.active_set.tolist()}
    elif isinstance(model, RvmModel):
        d["internals"] = {
            "relevant": model.relevant.tolist(),
            "mu": model.mu.tolist(),
            "Sigma": model.Sigma.tolist(),
            "alpha": model.alpha.tolist(),
            "sigma2": model.sigma2,
            "n_iter": model.n_iter,
        }
    return d


def model_to_json(model: LinearModel) -> str:
    return json.dumps(model_to_dict(model), sort_keys=True)


def model_from_json(text: str) -> LinearModel:
    """Rebuild a model for prediction; training scores are not stored."""
    d = json.loads(text)
    scaler = Scaler.from_dict(d["scaler"])
    beta = np.asarray(d["beta"], dtype=float)
    inner = d.get("internals", {})
    learner = d["learner"]
    if learner == "pls":
        W = np.asarray(inner["weights"], dtype=float).reshape(-1, inner["n_components"])
        P = np.asarray(inner["x_loadings"], dtype=float).reshape(W.shape)
        return PlsModel(
            inner["n_components"], W, np.zeros((0, W.shape[1])), P,
            np.asarray(inner["inner_coef"], dtype=float), beta, scaler,
            inner["requested_components"], d["intercept"],
        )
    if learner == "lasso":
        return LassoModel(inner["lambda"], beta, scaler, d["intercept"])
    if learner == "rvm":
        rel = np.asarray(inner["relevant"], dtype=int)
        Sigma = np.asarray(inner["Sigma"], dtype=float).reshape(len(rel), len(rel))
        return RvmModel(
            rel, np.asarray(inner["mu"], dtype=float), Sigma,
            np.asarray(inner["alpha"], dtype=float), inner["sigma2"], beta,
            d["intercept"], scaler, (), inner["n_iter"],
        )
    raise ValueError(f"unknown learner tag {learner!r}")
