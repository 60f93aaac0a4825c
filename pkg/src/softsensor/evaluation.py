"""Accuracy metrics and robust paired comparisons of prediction errors."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Optional

import numpy as np
from scipy import stats


class DegenerateSampleError(ValueError):
    """Every paired difference is zero."""


def rmse(y, yhat) -> float:
    y = np.asarray(y, dtype=float).ravel()
    yhat = np.asarray(yhat, dtype=float).ravel()
    if y.size == 0:
        raise ValueError("rmse of an empty sample")
    if y.shape != yhat.shape:
        raise ValueError(f"length mismatch: {y.size} vs {yhat.size}")
    return float(np.sqrt(np.mean((y - yhat) ** 2)))


def pct_rmse(rmse_ref: float, rmse_j: float) -> float:
    """Percent accuracy gain of a learner over the reference; positive is better."""
    if not rmse_ref > 0:
        raise ValueError("reference RMSE must be positive")
    return 100.0 * (rmse_ref - rmse_j) / rmse_ref


def _trim_count(n: int, gamma: float) -> int:
    if not 0 <= gamma < 0.5:
        raise ValueError("gamma must lie in [0, 0.5)")
    g = int(math.floor(n * gamma))
    if n < 2 * g + 1:
        raise ValueError(f"cannot trim {g} from each end of {n} values")
    return g


def winsorize(x, gamma: float) -> np.ndarray:
    """Clamp the ``g = floor(n * gamma)`` extremes at each end; order is preserved."""
    x = np.asarray(x, dtype=float).ravel()
    g = _trim_count(x.size, gamma)
    if g == 0:
        return x.copy()
    s = np.sort(x)
    return np.clip(x, s[g], s[x.size - g - 1])


def trimmed_mean(x, gamma: float) -> float:
    x = np.asarray(x, dtype=float).ravel()
    g = _trim_count(x.size, gamma)
    kept = np.sort(x)[g:x.size - g]
    # summation rounding can push the mean one ulp outside the kept values
    return float(np.clip(kept.mean(), kept[0], kept[-1]))


def winsorized_std(x, gamma: float) -> float:
    w = winsorize(x, gamma)
    return float(np.sqrt(np.sum((w - w.mean()) ** 2) / (w.size - 1)))


@dataclass(frozen=True)
class RobustTestConfig:
    gamma: float = 0.1
    alpha: float = 0.01

    def __post_init__(self):
        if not 0 <= self.gamma < 0.5:
            raise ValueError("gamma must lie in [0, 0.5)")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")


@dataclass(frozen=True)
class RobustTestResult:
    statistic: float
    df: int
    p_value: float
    reject: bool
    degenerate: bool = False
    note: str = "df = n - 2g - 1"


def robust_t_test(err_a, err_b, cfg: RobustTestConfig = RobustTestConfig()) -> RobustTestResult:
    """Trimmed-mean t test on ``|err_a| - |err_b|``; two-sided.

    A negative statistic means ``a`` has the smaller absolute errors.
    """
    a = np.asarray(err_a, dtype=float).ravel()
    b = np.asarray(err_b, dtype=float).ravel()
    if a.shape != b.shape:
        raise ValueError(f"paired samples differ in length: {a.size} vs {b.size}")
    n = a.size
    g = int(math.floor(n * cfg.gamma))
    if n < 2 * g + 2:
        raise ValueError(f"need at least {2 * g + 2} pairs, got {n}")
    d = np.abs(a) - np.abs(b)
    tm = trimmed_mean(d, cfg.gamma)
    sw = winsorized_std(d, cfg.gamma)
    df = n - 2 * g - 1
    if sw == 0.0:
        return RobustTestResult(0.0, df, 1.0, False, degenerate=True)
    t = (1.0 - 2.0 * cfg.gamma) * math.sqrt(n) * tm / sw
    p = float(2.0 * stats.t.sf(abs(t), df))
    return RobustTestResult(float(t), df, p, p < cfg.alpha)


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float  # sum of ranks of the positive differences
    p_value: float
    n: int  # pairs left after dropping zero differences
    method: str  # "exact" or "normal"
    alternative: str


EXACT_MAX_N = 25


def _exact_upper_tail(ranks2: np.ndarray, w2: int) -> float:
    """P(W+ >= w) under random signs, with ranks and w doubled to integers."""
    total = int(ranks2.sum())
    counts = np.zeros(total + 1)
    counts[0] = 1.0
    for r in ranks2:
        r = int(r)
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts = counts + shifted
    counts /= counts.sum()
    return float(counts[w2:].sum())


def wilcoxon_signed_rank(a, b, alternative: str = "two-sided") -> WilcoxonResult:
    """Signed-rank test of ``a - b``.

    Zero differences are dropped, ties get mid-ranks. The null distribution is
    enumerated exactly up to 25 pairs; beyond that a tie-corrected normal
    approximation is used. ``alternative="greater"`` tests ``a > b``.
    """
    if alternative not in ("two-sided", "greater", "less"):
        raise ValueError(f"unknown alternative {alternative!r}")
    d = np.asarray(a, dtype=float).ravel() - np.asarray(b, dtype=float).ravel()
    d = d[d != 0]
    n = d.size
    if n == 0:
        raise DegenerateSampleError("all paired differences are zero")
    ranks = stats.rankdata(np.abs(d))
    w = float(ranks[d > 0].sum())

    if n <= EXACT_MAX_N:
        ranks2 = np.rint(2 * ranks).astype(np.int64)
        w2 = int(round(2 * w))
        upper = _exact_upper_tail(ranks2, w2)
        # lower tail: P(W+ <= w) = P(W- >= total - w)
        lower = _exact_upper_tail(ranks2, int(ranks2.sum()) - w2)
        method = "exact"
    else:
        mean = n * (n + 1) / 4.0
        _, tie_counts = np.unique(np.abs(d), return_counts=True)
        var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(tie_counts ** 3 - tie_counts) / 48.0
        z = (w - mean) / math.sqrt(var)
        upper = float(stats.norm.sf(z))
        lower = float(stats.norm.cdf(z))
        method = "normal"

    if alternative == "greater":
        p = upper
    elif alternative == "less":
        p = lower
    else:
        p = min(1.0, 2.0 * min(upper, lower))
    return WilcoxonResult(w, float(p), n, method, alternative)


@dataclass
class EvalReport:
    """RMSE, %RMSE and robust tests of several learners against a reference."""

    reference: str
    rmse: dict
    pct_rmse: dict
    robust_t: dict
    wilcoxon: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "reference": self.reference,
            "rmse": self.rmse,
            "pct_rmse": self.pct_rmse,
            "robust_t": {k: asdict(v) for k, v in self.robust_t.items()},
            "wilcoxon": {k: asdict(v) for k, v in self.wilcoxon.items()},
            "config": self.config,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def _rows(self):
        for name in self.rmse:
            t = self.robust_t.get(name)
            yield {
                "learner": name,
                "rmse": self.rmse[name],
                "pct_rmse": self.pct_rmse[name],
                "robust_t": "" if t is None else t.statistic,
                "df": "" if t is None else t.df,
                "p_value": "" if t is None else t.p_value,
                "significant": "" if t is None else ("x" if t.reject else ""),
            }

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = ["learner", "rmse", "pct_rmse", "robust_t", "df", "p_value", "significant"]
        writer = csv.DictWriter(buf, cols, lineterminator="\n")
        writer.writeheader()
        for row in self._rows():
            writer.writerow({k: _fmt(v) for k, v in row.items()})
        return buf.getvalue()

    def to_text(self) -> str:
        header = f"{'learner':<24}{'RMSE':>14}{'%RMSE':>10}{'T_t':>10}{'df':>6}{'p':>11}  sig"
        lines = [header, "-" * len(header)]
        for row in self._rows():
            t = row["robust_t"]
            lines.append(
                f"{row['learner']:<24}{row['rmse']:>14.6g}{row['pct_rmse']:>10.2f}"
                + (f"{t:>10.3f}{row['df']:>6}{row['p_value']:>11.3g}" if t != "" else " " * 27)
                + f"  {row['significant']}"
            )
        return "\n".join(lines) + "\n"


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def compare(errors: Mapping[str, np.ndarray], reference: str,
            cfg: RobustTestConfig = RobustTestConfig(), rmses: Optional[Mapping] = None,
            config: Optional[dict] = None) -> EvalReport:
    """Build an :class:`EvalReport` from per-learner test errors ``y - yhat``."""
    if reference not in errors:
        raise KeyError(f"reference {reference!r} missing from the compared learners")
    ref = np.asarray(errors[reference], dtype=float)
    r = {k: (float(rmses[k]) if rmses else float(np.sqrt(np.mean(np.square(v)))))
         for k, v in errors.items()}
    pct = {k: pct_rmse(r[reference], v) for k, v in r.items()}
    tests, wil = {}, {}
    for k, v in errors.items():
        v = np.asarray(v, dtype=float)
        if v.shape != ref.shape:
            raise ValueError(f"trace {k!r} has {v.size} errors, reference has {ref.size}")
        if k == reference:
            continue
        tests[k] = robust_t_test(v, ref, cfg)
        try:
            wil[k] = wilcoxon_signed_rank(np.abs(v), np.abs(ref))
        except DegenerateSampleError:
            pass
    conf = {"gamma": cfg.gamma, "alpha": cfg.alpha, **(config or {})}
    return EvalReport(reference, r, pct, tests, wil, conf)
