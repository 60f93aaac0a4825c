"""PLS1 regression by NIPALS with deflation."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..data import Scaler
from ._base import FitError, LinearModel, expand_coef, identity_scaler

MAX_INNER_ITER = 500
INNER_TOL = 1e-12
_STALL_TOL = 1e-8
_STALL_ITERS = 3
# deflated blocks below this fraction of the original norm count as exhausted
_EXHAUSTED_RTOL = 1e-10


class PlsConvergenceError(FitError):
    def __init__(self, component):
        super().__init__(f"NIPALS did not converge for component {component}")
        self.component = component


@dataclass(frozen=True)
class PlsModel(LinearModel):
    n_components: int
    weights: np.ndarray  # p_kept x L, unit columns
    scores: np.ndarray  # N x L
    x_loadings: np.ndarray  # p_kept x L
    inner_coef: np.ndarray  # L
    beta: np.ndarray  # p, standardized scale
    scaler: Scaler
    requested_components: int = 0
    intercept: float = 0.0
    learner: str = field(default="pls", init=False)

    def beta_path(self) -> np.ndarray:
        """Coefficient vectors for 1..L components, shape (L, p)."""
        return _beta_path(self.weights, self.x_loadings, self.inner_coef, self.scaler)


def _beta_path(W, P, q, scaler) -> np.ndarray:
    L = W.shape[1]
    out = np.zeros((L, scaler.n_features if scaler is not None else W.shape[0]))
    for l in range(1, L + 1):
        Wl, Pl = W[:, :l], P[:, :l]
        R = Wl @ np.linalg.solve(Pl.T @ Wl, np.eye(l))
        out[l - 1] = expand_coef(R @ q[:l], scaler)
    return out


def pls_fit(Xs, ys, n_components: int, scaler: Optional[Scaler] = None) -> PlsModel:
    """Fit a PLS1 model on auto-scaled data.

    Parameters
    ----------
    Xs : ndarray, shape (N, p)
        Standardized predictors (retained columns only when ``scaler`` is given).
    ys : ndarray, shape (N,)
        Standardized response.
    n_components : int
        Number of latent components, ``1 <= L <= min(p, N - 1)``.
    scaler : Scaler, optional
        Scaling used to produce ``Xs``/``ys``; stored on the model so that raw
        rows can be predicted.

    Returns
    -------
    PlsModel
        If the deflated predictor block is exhausted early the model holds fewer
        components than requested; ``requested_components`` keeps the request.
    """
    Xs = np.asarray(Xs, dtype=float)
    ys = np.asarray(ys, dtype=float).ravel()
    N, p = Xs.shape
    L = int(n_components)
    if not 1 <= L <= min(p, N - 1):
        raise ValueError(f"n_components={L} outside [1, {min(p, N - 1)}]")
    if scaler is None:
        scaler = identity_scaler(p)

    E = Xs.copy()
    f = ys.copy()
    x_norm0 = np.linalg.norm(E)
    cov_norm0 = np.linalg.norm(E.T @ f)
    W, P, T, q = [], [], [], []
    for comp in range(L):
        xty = E.T @ f
        if (
            np.linalg.norm(E) <= _EXHAUSTED_RTOL * x_norm0
            or np.linalg.norm(xty) <= _EXHAUSTED_RTOL * max(cov_norm0, 1e-300)
        ):
            break
        u = f
        w_old = None
        best, stalled = np.inf, 0
        for _ in range(MAX_INNER_ITER):
            w = E.T @ u
            w /= np.linalg.norm(w)
            t = E @ w
            c = (f @ t) / (t @ t)
            u = f / c
            if w_old is not None:
                step = np.linalg.norm(w - w_old)
                if step < INNER_TOL:
                    break
                # a nearly exhausted block can sit on a rounding floor above the
                # tolerance; accept once the change stops shrinking
                if step < best:
                    best, stalled = step, 0
                else:
                    stalled += 1
                if step < _STALL_TOL and stalled >= _STALL_ITERS:
                    break
            w_old = w
        else:
            raise PlsConvergenceError(comp + 1)
        tt = t @ t
        pl = E.T @ t / tt
        E = E - np.outer(t, pl)
        f = f - c * t
        W.append(w)
        P.append(pl)
        T.append(t)
        q.append(c)

    if not W:
        # response orthogonal to every predictor: the zero model
        W_arr = np.zeros((p, 0))
        return PlsModel(0, W_arr, np.zeros((N, 0)), W_arr, np.zeros(0),
                        np.zeros(scaler.n_features), scaler, L)

    W_arr = np.column_stack(W)
    P_arr = np.column_stack(P)
    q_arr = np.asarray(q)
    R = W_arr @ np.linalg.solve(P_arr.T @ W_arr, np.eye(len(q)))
    beta = expand_coef(R @ q_arr, scaler)
    return PlsModel(len(q), W_arr, np.column_stack(T), P_arr, q_arr, beta, scaler, L)


def pls_path(Xs, ys, max_components: int, scaler: Optional[Scaler] = None) -> np.ndarray:
    """Coefficients for ``1..max_components`` from a single NIPALS run.

    Rows past an early stop repeat the last achieved solution.
    """
    model = pls_fit(Xs, ys, max_components, scaler)
    p = model.beta.shape[0]
    out = np.zeros((max_components, p))
    if model.n_components:
        path = model.beta_path()
        out[: model.n_components] = path
        out[model.n_components:] = path[-1]
    return out
