import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import softsensor.online as online
from oracles import md_threshold
from softsensor.data import Dataset
from softsensor.learners import FitError, fit
from softsensor.offline import run_offline
from softsensor.online import (
    AUDIT_LOG, OnlineConfig, PredictionTrace, audit_leakage, grow_size, mahalanobis_d2,
    mahalanobis_ub, nearest_neighbors, read_trace_csv, run_jitl, run_mw, run_mw_adaptive,
    run_online,
)


def linear_stream(seed=0, N=160, r=3, noise=0.05):
    rng = np.random.default_rng(seed)
    Z = rng.normal(size=(N, r))
    y = Z @ np.arange(1.0, r + 1) + noise * rng.normal(size=N)
    return Dataset(Z, y, [f"z{i}" for i in range(r)], ["y"])


def cfg(**kw):
    base = dict(scheme="MW", learner="pls", W=30, initial_ts_size=100, folds=5, ts_repeats=2)
    base.update(kw)
    return OnlineConfig(**base)


# ------------------------------------------------------------------ config

def test_config_validation():
    with pytest.raises(ValueError):
        cfg(scheme="EWMA")
    with pytest.raises(ValueError):
        cfg(W=1)
    with pytest.raises(ValueError):
        cfg(W=120)
    with pytest.raises(ValueError):
        cfg(scheme="JITL", nn_count=150)
    with pytest.raises(ValueError):
        cfg(tuning_mode="X")
    assert cfg(scheme="mw-d").scheme == "MW-D"


# ------------------------------------------------------------- moving window

def test_mw_bookkeeping():
    ds = linear_stream()
    tr = run_mw(ds, cfg())
    assert tr.t == list(range(100, 160))
    for k, idx in zip(tr.t, tr.train_indices):
        np.testing.assert_array_equal(idx, np.arange(k - 30, k))
    assert set(tr.window_size) == {30}
    assert audit_leakage(tr) == 0


def test_mw_lagged_bookkeeping():
    ds = linear_stream()
    tr = run_mw(ds, cfg(lag_order=2, learner="lasso", grid=(0.01,)))
    np.testing.assert_array_equal(tr.train_indices[0], np.arange(70, 100))
    assert all(p == 0.01 for p in tr.param)


@pytest.mark.parametrize("learner", ["pls", "lasso", "rvm"])
def test_constant_process(learner):
    rng = np.random.default_rng(1)
    N = 140
    Z = 5.0 + 1e-3 * rng.normal(size=(N, 2))
    y = 2.0 + 0.01 * rng.normal(size=N)
    ds = Dataset(Z, y, ["a", "b"], ["y"])
    tr = run_mw(ds, cfg(learner=learner, W=40, grid=None if learner == "rvm" else
                        ((1,) if learner == "pls" else (1.0,))))
    assert tr.rmse() == pytest.approx(0.01, rel=0.35)


def test_w_mode_retunes_each_window():
    ds = linear_stream(2, N=130)
    tr = run_mw(ds, cfg(learner="pls", tuning_mode="W", W=40))
    assert len(tr) == 30
    assert all(1 <= p <= 3 for p in tr.param)
    assert tr.tuning["mode"] == "W"


def test_fit_failure_reuses_previous_model(monkeypatch):
    ds = linear_stream(3, N=110)
    calls = {"n": 0}
    real_fit = online.fit

    def flaky(learner, X, y, param=None, **kw):
        calls["n"] += 1
        if calls["n"] == 4:
            raise FitError("synthetic failure")
        return real_fit(learner, X, y, param, **kw)

    monkeypatch.setattr(online, "fit", flaky)
    tr = run_mw(ds, cfg(learner="rvm"))
    assert tr.fallback == [False, False, False, True] + [False] * 6
    # the fallback prediction comes from the model fitted on the previous window
    prev = real_fit("rvm", ds.values[72:102], ds.targets[72:102, 0])
    assert tr.yhat[3] == pytest.approx(float(prev.predict(ds.values[103:104])[0]), rel=1e-12)


def test_determinism_and_csv(tmp_path):
    ds = linear_stream(4)
    a = run_online(ds, cfg(learner="lasso"))
    b = run_online(ds, cfg(learner="lasso"))
    assert a.to_csv(["x=1"]) == b.to_csv(["x=1"])
    assert a.to_json() == b.to_json()
    back = read_trace_csv(a.to_csv(["config_hash=abc"]))
    assert back["header"] == ["config_hash=abc"]
    np.testing.assert_array_equal(back["columns"]["yhat"], a.yhat)


def test_first_prediction_continuity_with_offline():
    ds = linear_stream(5, N=140)
    for learner in ("pls", "lasso", "rvm"):
        tr = run_mw(ds, cfg(learner=learner, W=100, grid=None))
        off = run_offline(ds, learner, range(0, 100), range(100, 140), lag_order=0,
                          folds=5, repeats=2, seed=0)
        assert tr.yhat[0] == off.yhat[0]


# -------------------------------------------------------------- Mahalanobis

def test_md2_examples(rng):
    W = rng.normal(size=(40, 3))
    assert mahalanobis_d2(W.mean(axis=0), W) == pytest.approx(0.0, abs=1e-20)
    # whitened window: sample covariance is the identity
    Q, _ = np.linalg.qr(rng.normal(size=(40, 3)) - 0)
    Q = Q - Q.mean(axis=0)
    L = np.linalg.cholesky(np.cov(Q, rowvar=False))
    Wn = Q @ np.linalg.inv(L).T
    x = rng.normal(size=3)
    assert mahalanobis_d2(x, Wn) == pytest.approx(np.sum((x - Wn.mean(axis=0)) ** 2), rel=1e-5)


def test_md2_two_dimensional_hand_inverse():
    W = np.array([[0.0, 0.0], [2.0, 1.0], [4.0, 1.0], [2.0, 4.0], [1.0, 2.0]])
    m = W.mean(axis=0)
    D = W - m
    a, b, d = D[:, 0] @ D[:, 0] / 4, D[:, 0] @ D[:, 1] / 4, D[:, 1] @ D[:, 1] / 4
    eps = 1e-6 * (a + d) / 2
    a, d = a + eps, d + eps
    det = a * d - b * b
    x = np.array([3.0, -1.0])
    u, v = x - m
    expected = (d * u * u - 2 * b * u * v + a * v * v) / det
    assert mahalanobis_d2(x, W) == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("p", [2, 5, 10])
@pytest.mark.parametrize("W", [30, 50, 100])
@pytest.mark.parametrize("alpha", [0.01, 0.05])
def test_ub_against_beta_quantile(p, W, alpha):
    assert mahalanobis_ub(p, W, alpha) == pytest.approx(md_threshold(p, W, alpha), rel=1e-6)


def test_ub_properties():
    from scipy import stats
    assert mahalanobis_ub(5, 50, 0.01) == pytest.approx(12495 / 2250 * stats.f.isf(0.01, 5, 45))
    # alpha -> 1 drives the F quantile, and the threshold, to zero
    limit = [mahalanobis_ub(4, 40, 1 - 10.0 ** -k) for k in (2, 4, 8, 12)]
    assert all(b < a for a, b in zip(limit, limit[1:])) and limit[-1] < 1e-5
    coef = [p * 49 * 51 / (50 * (50 - p)) for p in (2, 4, 8, 16)]
    assert coef == sorted(coef) and len(set(coef)) == 4
    with pytest.raises(ValueError):
        mahalanobis_ub(10, 10, 0.01)


def test_growth_sequence():
    seq = [50]
    for _ in range(4):
        seq.append(grow_size(seq[-1]))
    assert seq == [50, 60, 72, 87, 105]


@given(st.integers(1, 10**6))
def test_growth_is_ceiling(n):
    assert grow_size(n) == math.ceil(n * 6 / 5)


def test_adaptive_no_growth_in_distribution():
    rng = np.random.default_rng(6)
    N = 400
    Z = rng.normal(size=(N, 2))
    ds = Dataset(Z, Z @ [1.0, 1.0] + 0.1 * rng.normal(size=N), ["a", "b"], ["y"])
    tr = run_mw_adaptive(ds, cfg(scheme="MW-D", W=60, initial_ts_size=200, grid=(2,)))
    assert np.mean(tr.grew_window) <= 0.05
    assert min(tr.window_size) >= 60


def test_adaptive_grows_to_full_history_for_outlier():
    rng = np.random.default_rng(7)
    N = 160
    Z = rng.normal(size=(N, 2))
    Z[150] += 100.0
    ds = Dataset(Z, Z @ [1.0, 1.0], ["a", "b"], ["y"])
    tr = run_mw_adaptive(ds, cfg(scheme="MW-D", W=30, initial_ts_size=100, grid=(2,)))
    i = tr.t.index(150)
    assert tr.grew_window[i] and tr.window_size[i] == 150
    assert all(30 <= w <= k for w, k in zip(tr.window_size, tr.t))


# ---------------------------------------------------------------------- JITL

def test_neighbors_ties_prefer_recent():
    H = np.array([[0.0], [1.0], [1.0], [-1.0], [3.0]])
    idx, d2 = nearest_neighbors(H, np.arange(5), np.array([0.0]), 4)
    assert idx.tolist() == [0, 3, 2, 1]
    assert np.all(np.diff(d2) >= 0)


def test_jitl_exact_match_included():
    ds = linear_stream(8, N=130)
    Z = np.array(ds.values)
    Z[110] = Z[20]
    ds = Dataset(Z, ds.targets, ds.var_names, ds.target_names)
    tr = run_jitl(ds, cfg(scheme="JITL", nn_count=25, grid=(2,)))
    assert 20 in tr.train_indices[tr.t.index(110)]


def test_jitl_saturated_neighbourhood_is_global_model():
    ds = linear_stream(9, N=120)
    tr = run_jitl(ds, cfg(scheme="JITL", nn_count=100, grid=(2,)))
    m = fit("pls", ds.values[:100], ds.targets[:100, 0], 2)
    assert tr.yhat[0] == pytest.approx(float(m.predict(ds.values[100:101])[0]), rel=1e-12)
    assert sorted(tr.train_indices[0].tolist()) == list(range(100))


def test_jitl_beats_mw_on_alternating_regimes():
    rng = np.random.default_rng(10)
    N = 400
    regime = (np.arange(N) // 5) % 2
    centre = np.where(regime[:, None] == 0, [-4.0, 0.0], [4.0, 0.0])
    Z = centre + rng.normal(size=(N, 2))
    y = np.where(regime == 0, 2 * Z[:, 1], -2 * Z[:, 1] + 3) + 0.1 * rng.normal(size=N)
    ds = Dataset(Z, y, ["a", "b"], ["y"])
    j = run_jitl(ds, cfg(scheme="JITL", nn_count=30, initial_ts_size=200, grid=(2,)))
    m = run_mw(ds, cfg(W=40, initial_ts_size=200, grid=(2,)))
    assert j.rmse() < 0.5 * m.rmse()


def test_every_trace_audited():
    n = len(AUDIT_LOG)
    run_online(linear_stream(11, N=110), cfg(scheme="JITL", nn_count=20, grid=(1,)))
    assert len(AUDIT_LOG) == n + 1 and AUDIT_LOG[-1][1] == 0


def test_audit_detects_leak():
    tr = PredictionTrace(cfg())
    tr.append(5, 0.0, 0.0, None, np.arange(0, 6), 1)
    tr.append(6, 0.0, 0.0, None, np.arange(1, 6), 1)
    assert audit_leakage(tr) == 1
