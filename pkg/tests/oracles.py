"""Second implementations used as test oracles.

Each oracle follows a different computational route from the package code so
agreement is evidence of correctness rather than of shared mistakes.
"""
import itertools
import math

import numpy as np
from scipy import optimize, special


def lasso_enumerate(X, y, lam):
    """Exact minimizer of 0.5*||y - X b||^2 + lam*||b||_1 by support/sign enumeration.

    For every support S and sign vector s the stationarity condition gives
    b_S = (X_S'X_S)^-1 (X_S'y - lam*s); candidates with consistent signs are
    scored on the objective and the best one wins.
    """
    X = np.asarray(X, float)
    y = np.asarray(y, float)
    p = X.shape[1]
    best, best_obj = np.zeros(p), 0.5 * y @ y
    for signs in itertools.product((-1, 0, 1), repeat=p):
        S = [j for j in range(p) if signs[j] != 0]
        if not S:
            continue
        XS = X[:, S]
        G = XS.T @ XS
        if np.linalg.cond(G) > 1e12:
            continue
        s = np.array([signs[j] for j in S], float)
        bS = np.linalg.solve(G, XS.T @ y - lam * s)
        if np.any(np.sign(bS) != s):
            continue
        b = np.zeros(p)
        b[S] = bS
        obj = 0.5 * np.sum((y - X @ b) ** 2) + lam * np.abs(b).sum()
        if obj < best_obj - 1e-15:
            best, best_obj = b, obj
    return best


def lasso_lbfgs(X, y, lam):
    """Smooth reformulation b = u - v with u, v >= 0 solved by L-BFGS-B."""
    X = np.asarray(X, float)
    y = np.asarray(y, float)
    p = X.shape[1]

    def f(z):
        u, v = z[:p], z[p:]
        r = y - X @ (u - v)
        g = -X.T @ r
        return 0.5 * r @ r + lam * z.sum(), np.concatenate([g + lam, -g + lam])

    res = optimize.minimize(f, np.zeros(2 * p), jac=True, method="L-BFGS-B",
                            bounds=[(0, None)] * (2 * p),
                            options={"ftol": 1e-16, "gtol": 1e-12, "maxiter": 20000})
    return res.x[:p] - res.x[p:]


def f_upper_quantile(d1, d2, alpha):
    """Upper-alpha quantile of F(d1, d2) through the inverse regularized beta."""
    x = special.betaincinv(d1 / 2.0, d2 / 2.0, 1.0 - alpha)
    return (d2 / d1) * x / (1.0 - x)


def md_threshold(p, W, alpha):
    coef = p * (W - 1) * (W + 1) / (W * (W - p))
    return coef * f_upper_quantile(p, W - p, alpha)


def trimmed_t(a, b, gamma):
    """Trimmed-mean t on |a| - |b| written with explicit loops over order statistics."""
    d = [abs(x) - abs(z) for x, z in zip(a, b)]
    n = len(d)
    g = int(math.floor(gamma * n))
    s = sorted(d)
    core = s[g:n - g]
    tm = sum(core) / len(core)
    lo, hi = s[g], s[n - g - 1]
    w = [min(max(x, lo), hi) for x in d]
    wm = sum(w) / n
    sw = math.sqrt(sum((x - wm) ** 2 for x in w) / (n - 1))
    return (1 - 2 * gamma) * math.sqrt(n) * tm / sw, n - 2 * g - 1


def midranks(v):
    v = list(v)
    order = sorted(range(len(v)), key=lambda i: v[i])
    ranks = [0.0] * len(v)
    i = 0
    while i < len(v):
        j = i
        while j + 1 < len(v) and v[order[j + 1]] == v[order[i]]:
            j += 1
        for k in range(i, j + 1):
            ranks[order[k]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def wilcoxon_enumerate(a, b):
    """W+ and exact one-sided tail probabilities by visiting all 2^n sign patterns."""
    d = [x - z for x, z in zip(a, b) if x != z]
    r = midranks([abs(x) for x in d])
    w = sum(rk for rk, x in zip(r, d) if x > 0)
    n = len(d)
    ge = le = 0
    for signs in itertools.product((0, 1), repeat=n):
        s = sum(rk for rk, bit in zip(r, signs) if bit)
        ge += s >= w - 1e-9
        le += s <= w + 1e-9
    total = 2 ** n
    return w, ge / total, le / total
