"""Linear-basis relevance vector machine.

Hyperparameters are optimized with the sequential marginal-likelihood scheme:
at each step the single basis update (add, re-estimate or delete) with the
largest evidence gain is applied, and the noise precision is re-estimated
after every step but kept only when it raises the evidence. The log-evidence
is therefore non-decreasing over the accepted iterations.

The design matrix is ``[1 | Xs]``; column 0 is the bias.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numba
import numpy as np

from ..data import Scaler
from ._base import FitError, LinearModel, identity_scaler, standardize_full

DEFAULT_TOL = 1e-3
PRUNE_ALPHA = 1e12
MAX_ITER = 1000
SIGMA2_FLOOR = 1e-12
_LOG_2PI = float(np.log(2.0 * np.pi))


class RvmFitError(FitError):
    """Posterior precision matrix could not be factorized."""


@dataclass(frozen=True)
class RvmModel(LinearModel):
    relevant: np.ndarray  # indices into [bias, x_0 .. x_{p-1}]
    mu: np.ndarray
    Sigma: np.ndarray
    alpha: np.ndarray
    sigma2: float
    beta: np.ndarray
    intercept: float
    scaler: Scaler
    log_evidence: tuple = ()
    n_iter: int = 0
    converged: bool = True
    learner: str = field(default="rvm", init=False)

    @property
    def relevant_set(self) -> np.ndarray:
        """Retained predictor columns (bias excluded), full-width indices."""
        kept = np.flatnonzero(self.scaler.keep)
        cols = self.relevant[self.relevant > 0] - 1
        return kept[cols]

    def basis(self, Xs_full) -> np.ndarray:
        Xs_kept = np.atleast_2d(Xs_full)[:, self.scaler.keep]
        Phi = np.hstack([np.ones((Xs_kept.shape[0], 1)), Xs_kept])
        return Phi[:, self.relevant]

    def predictive_variance_standardized(self, Xs_full) -> np.ndarray:
        Phi = self.basis(Xs_full)
        return self.sigma2 + np.einsum("ij,jk,ik->i", Phi, self.Sigma, Phi)

    def predict_variance(self, X) -> np.ndarray:
        Xs = standardize_full(self.scaler, np.atleast_2d(np.asarray(X, dtype=float)))
        return self.predictive_variance_standardized(Xs) * self.scaler.y_std ** 2


@numba.njit(cache=True, error_model="numpy")
def _cholesky(H):
    n = H.shape[0]
    Lc = np.zeros((n, n))
    for j in range(n):
        d = H[j, j]
        for k in range(j):
            d -= Lc[j, k] * Lc[j, k]
        if not d > 0.0:
            return Lc, False
        Lc[j, j] = np.sqrt(d)
        for i in range(j + 1, n):
            v = H[i, j]
            for k in range(j):
                v -= Lc[i, k] * Lc[j, k]
            Lc[i, j] = v / Lc[j, j]
    return Lc, True


@numba.njit(cache=True, error_model="numpy")
def _posterior(G, Phit_y, yy, N, act, alpha, b):
    """Posterior moments, log-evidence and sparsity/quality factors S, Q."""
    M = G.shape[0]
    k = act.shape[0]
    H = np.empty((k, k))
    for i in range(k):
        for j in range(k):
            H[i, j] = b * G[act[i], act[j]]
        H[i, i] += alpha[act[i]]
    Lc, ok = _cholesky(H)
    S = np.empty(M)
    Q = np.empty(M)
    if not ok:
        return False, np.zeros((k, k)), np.zeros(k), 0.0, S, Q
    Linv = np.zeros((k, k))
    for j in range(k):
        Linv[j, j] = 1.0 / Lc[j, j]
        for i in range(j + 1, k):
            v = 0.0
            for m in range(j, i):
                v -= Lc[i, m] * Linv[m, j]
            Linv[i, j] = v / Lc[i, i]
    Sigma = Linv.T @ Linv
    py = np.empty(k)
    for i in range(k):
        py[i] = Phit_y[act[i]]
    mu = b * (Sigma @ py)
    logdet_sigma = 0.0
    log_alpha = 0.0
    for i in range(k):
        logdet_sigma -= 2.0 * np.log(Lc[i, i])
        log_alpha += np.log(alpha[act[i]])
    # log|C| = -N log b - log|Sigma| - sum log alpha ; y'C^-1 y = b y'(y - Phi mu)
    fit = b * (yy - py @ mu)
    logdet_c = -N * np.log(b) - logdet_sigma - log_alpha
    logev = -0.5 * (N * _LOG_2PI + logdet_c + fit)
    GA = np.empty((M, k))
    for i in range(M):
        for j in range(k):
            GA[i, j] = G[i, act[j]]
    GS = GA @ Sigma
    GSy = GS @ py
    for i in range(M):
        acc = 0.0
        for j in range(k):
            acc += GS[i, j] * GA[i, j]
        S[i] = b * G[i, i] - b * b * acc
        Q[i] = b * Phit_y[i] - b * b * GSy[i]
    return True, Sigma, mu, logev, S, Q


@numba.njit(cache=True, error_model="numpy")
def _sbl(G, Phit_y, yy, N, y_var, tol, max_iter, prune_alpha, sigma2_floor):
    M = G.shape[0]
    history = np.empty(2 * max_iter + 1)
    alpha = np.full(M, np.inf)
    noise_sd = max(1e-6, 0.1 * np.sqrt(y_var))
    b = 1.0 / (noise_sd * noise_sd)
    # start from the single basis best aligned with the target
    best = 0
    best_proj = -1.0
    for i in range(M):
        if G[i, i] > 0.0:
            proj = abs(Phit_y[i]) / np.sqrt(G[i, i])
            if proj > best_proj:
                best_proj = proj
                best = i
    s0 = b * G[best, best]
    q0 = b * Phit_y[best]
    alpha[best] = s0 * s0 / (q0 * q0 - s0) if q0 * q0 > s0 else 1000.0
    act = np.array([best], dtype=np.int64)
    ok, Sigma, mu, logev, S, Q = _posterior(G, Phit_y, yy, N, act, alpha, b)
    if not ok:
        return act, alpha, b, Sigma, mu, history[:0], 0, False, False
    history[0] = logev
    n_hist = 1
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        delta_ml = np.full(M, -np.inf)
        new_alpha = np.full(M, np.inf)
        kind = np.zeros(M, dtype=np.int64)  # 1 re-estimate, 2 delete, 3 add
        any_add = False
        any_del = False
        max_dlog = 0.0
        for i in range(M):
            inside = np.isfinite(alpha[i])
            if inside:
                den = alpha[i] - S[i]
                s = alpha[i] * S[i] / den
                q = alpha[i] * Q[i] / den
            else:
                s = S[i]
                q = Q[i]
            theta = q * q - s
            if inside and theta > 0.0 and s * s / theta <= prune_alpha:
                na = s * s / theta
                d = 1.0 / na - 1.0 / alpha[i]
                delta_ml[i] = 0.5 * (d * Q[i] ** 2 / (d * S[i] + 1.0) - np.log1p(S[i] * d))
                new_alpha[i] = na
                kind[i] = 1
                dl = abs(np.log(na) - np.log(alpha[i]))
                if dl > max_dlog:
                    max_dlog = dl
            elif inside:
                delta_ml[i] = -0.5 * (Q[i] ** 2 / (S[i] + alpha[i]) - np.log1p(S[i] / alpha[i]))
                kind[i] = 2
                if delta_ml[i] > 0.0:
                    any_del = True
            elif theta > 0.0 and S[i] > 0.0 and s * s / theta <= prune_alpha:
                quot = Q[i] ** 2 / S[i]
                delta_ml[i] = 0.5 * (quot - 1.0 - np.log(quot))
                new_alpha[i] = s * s / theta
                kind[i] = 3
                if delta_ml[i] > 0.0:
                    any_add = True
        j = 0
        for i in range(M):
            if delta_ml[i] > delta_ml[j]:
                j = i
        alpha_changed = False
        if delta_ml[j] > 1e-12 * max(1.0, abs(logev)):
            alpha_c = alpha.copy()
            if kind[j] == 2:
                alpha_c[j] = np.inf
                act_c = np.empty(act.shape[0] - 1, dtype=np.int64)
                m = 0
                for a in act:
                    if a != j:
                        act_c[m] = a
                        m += 1
            else:
                alpha_c[j] = new_alpha[j]
                if kind[j] == 3:
                    act_c = np.append(act, j)
                else:
                    act_c = act.copy()
            ok, Sg, mu_c, lev, S_c, Q_c = _posterior(G, Phit_y, yy, N, act_c, alpha_c, b)
            if not ok:
                return act, alpha, b, Sigma, mu, history[:n_hist], it, False, False
            if lev >= logev:
                act = act_c
                alpha = alpha_c
                Sigma, mu, logev, S, Q = Sg, mu_c, lev, S_c, Q_c
                history[n_hist] = logev
                n_hist += 1
                alpha_changed = True

        # noise precision, kept only when the evidence rises
        k = act.shape[0]
        gamma_sum = 0.0
        rss = yy
        for i in range(k):
            gamma_sum += 1.0 - alpha[act[i]] * Sigma[i, i]
            rss -= 2.0 * mu[i] * Phit_y[act[i]]
            for m in range(k):
                rss += mu[i] * G[act[i], act[m]] * mu[m]
        if rss > 0.0:
            new_b = min((N - gamma_sum) / rss, 1.0 / sigma2_floor)
        else:
            new_b = 1.0 / sigma2_floor
        noise_dlog = 0.0
        if new_b > 0.0 and new_b != b:
            ok, Sg, mu_c, lev, S_c, Q_c = _posterior(G, Phit_y, yy, N, act, alpha, new_b)
            if ok and lev > logev:
                noise_dlog = abs(np.log(new_b) - np.log(b))
                b = new_b
                Sigma, mu, logev, S, Q = Sg, mu_c, lev, S_c, Q_c
                history[n_hist] = logev
                n_hist += 1

        if not any_add and not any_del and max_dlog < tol and noise_dlog < tol:
            converged = True
            break
        if not alpha_changed and noise_dlog == 0.0:
            # no admissible move raises the evidence
            converged = True
            break
    return act, alpha, b, Sigma, mu, history[:n_hist], it, converged, True


def rvm_fit(
    Xs,
    ys,
    tol: float = DEFAULT_TOL,
    scaler: Optional[Scaler] = None,
    max_iter: int = MAX_ITER,
    prune_alpha: float = PRUNE_ALPHA,
) -> RvmModel:
    """Fit a sparse Bayesian linear model on auto-scaled data.

    ``tol`` bounds the change in log-alpha and log noise precision at
    convergence. Raises :class:`RvmFitError` when the posterior precision is
    not positive definite.
    """
    Xs = np.asarray(Xs, dtype=float)
    ys = np.asarray(ys, dtype=float).ravel()
    if tol <= 0:
        raise ValueError("tol must be positive")
    N, p = Xs.shape
    if scaler is None:
        scaler = identity_scaler(p)
    Phi = np.hstack([np.ones((N, 1)), Xs])
    G = Phi.T @ Phi
    Phit_y = Phi.T @ ys
    yy = float(ys @ ys)
    y_var = float(ys.var()) if N > 1 else 0.0
    if not (np.all(np.isfinite(G)) and np.all(np.isfinite(Phit_y))):
        raise RvmFitError("non-finite design")
    act, alpha, b, Sigma, mu, history, it, converged, ok = _sbl(
        G, Phit_y, yy, float(N), y_var, float(tol), int(max_iter),
        float(prune_alpha), SIGMA2_FLOOR,
    )
    if not ok:
        raise RvmFitError("posterior precision matrix is not positive definite")

    order = np.argsort(act)
    A = act[order]
    mu = mu[order]
    Sigma = Sigma[np.ix_(order, order)]
    coef = np.zeros(Phi.shape[1])
    coef[A] = mu
    beta = np.zeros(scaler.n_features)
    beta[scaler.keep] = coef[1:]
    return RvmModel(
        relevant=A,
        mu=mu,
        Sigma=Sigma,
        alpha=alpha[A],
        sigma2=max(1.0 / b, SIGMA2_FLOOR),
        beta=beta,
        intercept=float(coef[0]),
        scaler=scaler,
        log_evidence=tuple(history.tolist()),
        n_iter=int(it),
        converged=bool(converged),
    )


def log_evidence_direct(Xs, ys, relevant, alpha, sigma2) -> float:
    """Log marginal likelihood from the dense N x N covariance.

    Independent of the bookkeeping used during fitting.
    """
    Xs = np.asarray(Xs, dtype=float)
    ys = np.asarray(ys, dtype=float).ravel()
    N = len(ys)
    Phi = np.hstack([np.ones((N, 1)), Xs])[:, relevant]
    C = sigma2 * np.eye(N) + Phi @ np.diag(1.0 / np.asarray(alpha)) @ Phi.T
    _, logdet = np.linalg.slogdet(C)
    return float(-0.5 * (N * _LOG_2PI + logdet + ys @ np.linalg.solve(C, ys)))
