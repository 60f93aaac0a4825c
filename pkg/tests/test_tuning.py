import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from softsensor.tuning import (
    TuningSpec, cv_score, cv_tune, default_grid, default_lasso_grid, fold_assignments,
    make_spec, per_window_tune,
)


def problem(seed, N=60, p=6):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(N, p)) * 3 + 1
    y = X @ rng.normal(size=p) + rng.normal(size=N)
    return X, y


def test_grids():
    g = default_lasso_grid()
    assert len(g) == 30 and g[0] == pytest.approx(1e-6) and g[-1] == pytest.approx(1.0)
    assert np.allclose(np.diff(np.log10(g)), np.log10(g[1]) - np.log10(g[0]))
    assert default_grid("pls", 40) == tuple(range(1, 26))
    assert default_grid("pls", 7) == tuple(range(1, 8))
    assert default_grid("pls", 40, max_fit_rows=9) == tuple(range(1, 9))


def test_spec_validation():
    with pytest.raises(ValueError):
        TuningSpec("rvm", (1,))
    with pytest.raises(ValueError):
        TuningSpec("pls", ())
    with pytest.raises(ValueError):
        TuningSpec("pls", (26,))
    with pytest.raises(ValueError):
        TuningSpec("pls", (2,), folds=1)
    with pytest.raises(ValueError):
        TuningSpec("lasso", (-1.0,))


def test_single_value_grid():
    X, y = problem(0)
    res = cv_tune(X, y, TuningSpec("pls", (3,), repeats=2))
    assert res.best_param == 3 and res.cv_curve.shape == (1,)


def test_deterministic_given_seed():
    X, y = problem(1)
    spec = TuningSpec("lasso", default_lasso_grid(), repeats=3, seed=5)
    a, b = cv_tune(X, y, spec), cv_tune(X, y, spec)
    assert a.best_param == b.best_param
    np.testing.assert_array_equal(a.per_fold, b.per_fold)
    assert a.to_json() == b.to_json()


@given(st.integers(10, 80), st.integers(2, 10), st.integers(1, 4), st.integers(0, 2**31))
def test_folds_partition_every_repeat(n, k, reps, seed):
    if n < k:
        return
    for assignment in fold_assignments(n, k, reps, seed):
        joined = np.concatenate(assignment)
        assert sorted(joined.tolist()) == list(range(n))
        assert len(assignment) == k


def test_curve_invariant_to_grid_order_and_duplicates():
    X, y = problem(2)
    grid = (1, 2, 3, 4, 5)
    base = cv_tune(X, y, TuningSpec("pls", grid, repeats=2, seed=1))
    rev = cv_tune(X, y, TuningSpec("pls", grid[::-1], repeats=2, seed=1))
    np.testing.assert_array_equal(base.cv_curve, rev.cv_curve[::-1])
    dup = cv_tune(X, y, TuningSpec("pls", grid + (2, 2, 4), repeats=2, seed=1))
    assert dup.best_param == base.best_param
    assert base.best_param == grid[int(np.argmin(base.cv_curve))]


def test_ties_prefer_parsimony():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(40, 4))
    y = rng.normal(size=40)
    # every lambda above lambda_max gives the same zero model
    res = cv_tune(X, y, TuningSpec("lasso", (1e3, 1e4, 1e5), repeats=1))
    assert res.best_param == 1e5
    Xr = np.column_stack([X[:, 0], X[:, 0] * 2 + 1])  # rank one: L=1 and L=2 coincide
    res = cv_tune(Xr, X[:, 0] + 0.1 * y, TuningSpec("pls", (1, 2), repeats=1))
    assert res.best_param == 1


def test_two_latent_directions_monte_carlo():
    # X is rank two up to small sensor noise; y is a noisy function of the two latents
    hits = 0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        T = rng.normal(size=(80, 2))
        X = T @ rng.normal(size=(2, 12)) + 0.01 * rng.normal(size=(80, 12))
        y = T @ np.array([1.0, -0.8]) + 0.2 * rng.normal(size=80)
        res = cv_tune(X, y, TuningSpec("pls", tuple(range(1, 11)), repeats=20, seed=seed))
        hits += res.best_param in (1, 2, 3)
    assert hits >= 45


def test_per_window_forces_single_repeat():
    X, y = problem(4, N=10, p=3)
    res = per_window_tune(X, y, TuningSpec("lasso", (0.01, 0.1), repeats=20))
    assert res.metadata["repeats"] == 1 and res.metadata["repeats_requested"] == 20
    assert res.per_fold.shape == (1, 10, 2)  # ten folds of one row: leave-one-out


def test_errors():
    X, y = problem(5, N=8, p=3)
    with pytest.raises(ValueError, match="window of 8 samples"):
        per_window_tune(X, y, TuningSpec("pls", (1,)))
    X, y = problem(5, N=20, p=20)
    with pytest.raises(ValueError, match="fold too small"):
        cv_tune(X, y, TuningSpec("pls", (20,), folds=10, repeats=1))


def test_make_spec_and_cv_score():
    X, y = problem(6, N=30, p=12)
    spec = make_spec("pls", X, folds=10, repeats=1)
    assert max(spec.grid) == 12
    assert cv_score("rvm", X, y, folds=5, repeats=1) > 0
