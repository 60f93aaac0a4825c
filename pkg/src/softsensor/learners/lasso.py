"""Lasso by cyclic coordinate descent with soft-thresholding.

Descent is warm-started from the exact piecewise-linear solution path
(homotopy), which keeps the sweep count low on collinear designs; the
descent itself certifies the optimality conditions.

The objective is the unnormalized form

    0.5 * sum((y - X @ beta) ** 2) + lam * sum(abs(beta))

on auto-scaled data, so ``lam`` grows with the number of rows for a fixed
amount of shrinkage (divide by N to compare with mean-loss conventions).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numba
import numpy as np

from ..data import Scaler
from ._base import FitError, LinearModel, expand_coef, identity_scaler

COEF_TOL = 1e-7
KKT_TOL = 1e-6
MAX_SWEEPS = 100_000
_CHUNK = 2000


class LassoConvergenceError(FitError):
    def __init__(self, sweeps, gap):
        super().__init__(
            f"coordinate descent did not converge in {sweeps} sweeps (duality gap {gap:.3g})"
        )
        self.gap = gap


@dataclass(frozen=True)
class LassoModel(LinearModel):
    lam: float
    beta: np.ndarray
    scaler: Scaler
    intercept: float = 0.0
    n_sweeps: int = 0
    learner: str = field(default="lasso", init=False)

    @property
    def active_set(self) -> np.ndarray:
        return np.flatnonzero(self.beta)


@numba.njit(cache=True)
def _soft(z, lam):
    if z > lam:
        return z - lam
    if z < -lam:
        return z + lam
    return 0.0


@numba.njit(cache=True)
def _dot(a, b):
    acc = 0.0
    for i in range(a.shape[0]):
        acc += a[i] * b[i]
    return acc


@numba.njit(cache=True)
def _kkt_violation(Xt, r, beta, lam):
    # Xt is the transposed design, one contiguous row per predictor
    worst = 0.0
    for j in range(Xt.shape[0]):
        g = -_dot(Xt[j], r)
        if beta[j] > 0.0:
            v = abs(g + lam)
        elif beta[j] < 0.0:
            v = abs(g - lam)
        else:
            v = max(abs(g) - lam, 0.0)
        if v > worst:
            worst = v
    return worst


@numba.njit(cache=True)
def _residual(Xt, y, beta):
    r = y.copy()
    for j in range(Xt.shape[0]):
        if beta[j] != 0.0:
            r -= beta[j] * Xt[j]
    return r


@numba.njit(cache=True)
def _cd(Xt, y, lam, beta, coef_tol, kkt_tol, max_sweeps):
    p = Xt.shape[0]
    col_sq = np.empty(p)
    for j in range(p):
        col_sq[j] = _dot(Xt[j], Xt[j])
    r = _residual(Xt, y, beta)
    for sweep in range(1, max_sweeps + 1):
        max_delta = 0.0
        for j in range(p):
            if col_sq[j] == 0.0:
                continue
            old = beta[j]
            rho = _dot(Xt[j], r) + col_sq[j] * old
            new = _soft(rho, lam) / col_sq[j]
            if new != old:
                r -= (new - old) * Xt[j]
                beta[j] = new
                d = abs(new - old)
                if d > max_delta:
                    max_delta = d
        if max_delta < coef_tol:
            # recompute the residual to shed accumulated rounding
            r = _residual(Xt, y, beta)
            if _kkt_violation(Xt, r, beta, lam) <= kkt_tol:
                return beta, sweep, True
    return beta, max_sweeps, False


def objective(Xs, ys, beta, lam) -> float:
    r = ys - Xs @ beta
    return 0.5 * float(r @ r) + lam * float(np.abs(beta).sum())


def kkt_residual(Xs, ys, beta, lam) -> float:
    """Largest violation of the Lasso optimality conditions."""
    Xs = np.asarray(Xs, dtype=float)
    r = np.asarray(ys, dtype=float) - Xs @ beta
    Xt = np.ascontiguousarray(Xs.T)
    return float(_kkt_violation(Xt, r, np.asarray(beta, dtype=float), float(lam)))


def duality_gap(Xs, ys, beta, lam) -> float:
    r = ys - Xs @ beta
    primal = 0.5 * r @ r + lam * np.abs(beta).sum()
    corr = np.abs(Xs.T @ r).max() if Xs.shape[1] else 0.0
    theta = r * min(1.0, lam / corr) if corr > 0 else r
    dual = 0.5 * ys @ ys - 0.5 * (ys - theta) @ (ys - theta)
    return float(primal - dual)


def lambda_max(Xs, ys) -> float:
    return float(np.abs(np.asarray(Xs).T @ np.asarray(ys)).max())


@numba.njit(cache=True)
def _chol_solve(GA, s, pivot_rtol):
    """Solve ``GA d = s`` by Cholesky; ``ok`` is False when a pivot collapses."""
    n = GA.shape[0]
    Lc = np.zeros((n, n))
    for j in range(n):
        d = GA[j, j]
        for k in range(j):
            d -= Lc[j, k] * Lc[j, k]
        if not d > pivot_rtol * GA[j, j]:
            return s, False
        Lc[j, j] = np.sqrt(d)
        for i in range(j + 1, n):
            v = GA[i, j]
            for k in range(j):
                v -= Lc[i, k] * Lc[j, k]
            Lc[i, j] = v / Lc[j, j]
    z = np.empty(n)
    for i in range(n):
        v = s[i]
        for k in range(i):
            v -= Lc[i, k] * z[k]
        z[i] = v / Lc[i, i]
    x = np.empty(n)
    for i in range(n - 1, -1, -1):
        v = z[i]
        for k in range(i + 1, n):
            v -= Lc[k, i] * x[k]
        x[i] = v / Lc[i, i]
    return x, True


@numba.njit(cache=True)
def _homotopy(G, xty, lam_min, max_steps):
    p = G.shape[0]
    beta = np.zeros(p)
    lams = np.empty(max_steps + 1)
    betas = np.zeros((max_steps + 1, p))
    c = xty.copy()
    lam = 0.0
    j0 = 0
    for j in range(p):
        if abs(c[j]) > lam:
            lam = abs(c[j])
            j0 = j
    lams[0] = lam
    n_knots = 1
    if lam <= lam_min or lam == 0.0:
        return lams[:1], betas[:1]
    in_set = np.zeros(p, dtype=np.bool_)
    in_set[j0] = True
    eps = 1e-12 * max(lam, 1.0)
    for _ in range(max_steps):
        A = np.flatnonzero(in_set)
        k = A.shape[0]
        GA = np.empty((k, k))
        sg = np.empty(k)
        for a in range(k):
            sg[a] = 1.0 if c[A[a]] > 0 else -1.0
            for b in range(k):
                GA[a, b] = G[A[a], A[b]]
        d, ok = _chol_solve(GA, sg, 1e-10)
        if not ok:
            break
        step = lam - lam_min
        event = -1
        join = True
        for j in range(p):
            if in_set[j]:
                continue
            aj = 0.0
            for a in range(k):
                aj += G[j, A[a]] * d[a]
            den = 1.0 - aj
            if den > 1e-14:
                delta = (lam - c[j]) / den
                if eps < delta < step:
                    step, event, join = delta, j, True
            den = 1.0 + aj
            if den > 1e-14:
                delta = (lam + c[j]) / den
                if eps < delta < step:
                    step, event, join = delta, j, True
        for a in range(k):
            if d[a] != 0.0:
                delta = -beta[A[a]] / d[a]
                if eps < delta < step:
                    step, event, join = delta, A[a], False
        for a in range(k):
            beta[A[a]] += step * d[a]
        lam = lam_min if event < 0 else lam - step
        if event >= 0 and not join:
            beta[event] = 0.0
            in_set[event] = False
        # correlations from the Gram matrix: X'(y - X beta) = X'y - G beta
        for j in range(p):
            acc = xty[j]
            for i in range(p):
                if beta[i] != 0.0:
                    acc -= G[j, i] * beta[i]
            c[j] = acc
        lams[n_knots] = lam
        betas[n_knots] = beta
        n_knots += 1
        if event < 0:
            break
        if join:
            in_set[event] = True
        if not in_set.any():
            break
    return lams[:n_knots], betas[:n_knots]


def homotopy_path(Xs, ys, lam_min: float = 0.0, max_steps: int = 0):
    """Knots of the piecewise-linear solution path from ``lambda_max`` down.

    Returns ``(lams, betas)`` with decreasing ``lams``. Between two knots the
    solution is linear in lambda. The path stops early when the active
    columns become linearly dependent; below the last knot it is undefined.
    """
    Xs = np.asarray(Xs, dtype=float)
    ys = np.asarray(ys, dtype=float).ravel()
    N, p = Xs.shape
    if p == 0:
        return np.zeros(1), np.zeros((1, 0))
    max_steps = max_steps or 8 * (p + N)
    return _homotopy(Xs.T @ Xs, Xs.T @ ys, float(lam_min), int(max_steps))


def path_point(lams, betas, lam: float):
    """Solution at ``lam`` by linear interpolation between knots, else ``None``."""
    if lam >= lams[0]:
        return np.zeros(betas.shape[1])
    if lam < lams[-1]:
        return None
    k = int(np.searchsorted(-lams, -lam, side="left"))
    hi, lo = lams[k - 1], lams[k]
    if hi == lo:
        return betas[k].copy()
    w = (hi - lam) / (hi - lo)
    return (1.0 - w) * betas[k - 1] + w * betas[k]


def _solve(Xs, ys, lam, beta0=None, coef_tol=COEF_TOL, kkt_tol=KKT_TOL, max_sweeps=MAX_SWEEPS):
    Xs = np.asarray(Xs, dtype=float)
    ys = np.ascontiguousarray(ys, dtype=float).ravel()
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    p = Xs.shape[1]
    if p == 0 or lam >= lambda_max(Xs, ys):
        # the zero vector is optimal; skip descent so rounding cannot revive a coefficient
        return np.zeros(p), 0
    if beta0 is None:
        # start descent from the homotopy solution when it reaches lam
        lams, betas = homotopy_path(Xs, ys, lam)
        beta0 = path_point(lams, betas, lam)
    beta = np.zeros(p) if beta0 is None else np.array(beta0, dtype=float)
    Xt = np.ascontiguousarray(Xs.T)
    sweeps = 0
    while sweeps < max_sweeps:
        chunk = min(_CHUNK, max_sweeps - sweeps)
        beta, done, ok = _cd(Xt, ys, float(lam), beta, coef_tol, kkt_tol, chunk)
        sweeps += done
        if ok:
            return beta, sweeps
        # descent crawls on ill-conditioned blocks; jump along the current sign pattern
        cand = _support_step(Xs, ys, lam, beta)
        if objective(Xs, ys, cand, lam) < objective(Xs, ys, beta, lam):
            beta = cand
    raise LassoConvergenceError(sweeps, duality_gap(Xs, ys, beta, lam))


def _support_step(Xs, ys, lam, beta):
    """Move towards the stationary point of the current support and signs.

    The step is cut at the first sign change and that coordinate is zeroed,
    as in an active-set method.
    """
    S = np.flatnonzero(beta)
    if S.size == 0:
        return beta
    s = np.sign(beta[S])
    XS = Xs[:, S]
    target = np.linalg.lstsq(XS.T @ XS, XS.T @ ys - lam * s, rcond=None)[0]
    d = target - beta[S]
    flip = np.sign(target) != s
    out = beta.copy()
    if not flip.any():
        out[S] = target
        return out
    ratios = np.where(flip, -beta[S] / np.where(flip, d, 1.0), np.inf)
    k = int(np.argmin(ratios))
    out[S] = beta[S] + ratios[k] * d
    out[S[k]] = 0.0
    return out


def lasso_fit(Xs, ys, lam: float, scaler: Optional[Scaler] = None, beta0=None) -> LassoModel:
    """Fit on auto-scaled data; the intercept is zero because ``ys`` is centered."""
    Xs = np.asarray(Xs, dtype=float)
    if scaler is None:
        scaler = identity_scaler(Xs.shape[1])
    coef, sweeps = _solve(Xs, ys, lam, beta0)
    return LassoModel(float(lam), expand_coef(coef, scaler), scaler, 0.0, sweeps)


def lasso_path(Xs, ys, lams, scaler: Optional[Scaler] = None) -> np.ndarray:
    """Warm-started solutions for each ``lam``; rows follow the input order."""
    lams = np.asarray(lams, dtype=float)
    order = np.argsort(-lams, kind="stable")
    Xs = np.asarray(Xs, dtype=float)
    p_full = scaler.n_features if scaler is not None else Xs.shape[1]
    out = np.zeros((len(lams), p_full))
    ys = np.asarray(ys, dtype=float).ravel()
    knots, kbetas = homotopy_path(Xs, ys, float(lams.min()) if len(lams) else 0.0)
    beta = np.zeros(Xs.shape[1])
    for i in order:
        start = path_point(knots, kbetas, lams[i])
        beta, _ = _solve(Xs, ys, lams[i], beta if start is None else start)
        out[i] = expand_coef(beta, scaler)
    return out
