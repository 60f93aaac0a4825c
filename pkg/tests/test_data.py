import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from softsensor.data import (
    DataError, Dataset, ZeroVarianceWarning, autoscale_apply, autoscale_fit,
    build_fir_matrix, dataset_csv_text, dataset_schema, load_dataset, segment, vif,
)


def _write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_three_rows(tmp_path):
    p = _write(tmp_path, "z1,z2,y\n1,2,3\n4,5,6\n7,8,9\n")
    ds = load_dataset(p, {"z1": "process", "z2": "process", "y": "target"})
    assert (ds.n_samples, ds.n_vars, ds.n_targets) == (3, 2, 1)
    np.testing.assert_array_equal(ds.values[:, 1], [2, 5, 8])
    np.testing.assert_array_equal(ds.targets[:, 0], [3, 6, 9])


def test_blank_cell_names_row(tmp_path):
    p = _write(tmp_path, "z1,y\n1,2\n,3\n")
    with pytest.raises(DataError, match="row 2"):
        load_dataset(p, {"z1": "process", "y": "target"})


def test_header_only_file(tmp_path):
    p = _write(tmp_path, "z1,y\n")
    with pytest.raises(DataError, match="zero data rows"):
        load_dataset(p, {"z1": "process", "y": "target"})


def test_ingestion_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path / "missing.csv", {"a": "process"})
    ragged = _write(tmp_path, "z1,y\n1,2\n3\n")
    with pytest.raises(DataError, match="row 2 has 1 fields"):
        load_dataset(ragged, {"z1": "process", "y": "target"})
    text = _write(tmp_path, "z1,y\n1,abc\n")
    with pytest.raises(DataError, match="column 'y'"):
        load_dataset(text, {"z1": "process", "y": "target"})
    unmapped = _write(tmp_path, "z1,z2,y\n1,2,3\n")
    with pytest.raises(DataError, match="without a role"):
        load_dataset(unmapped, {"z1": "process", "y": "target"})


def test_ignore_role_and_delimiter(tmp_path):
    p = _write(tmp_path, "# comment\nstamp;z1;y\nmonday;1.5;2\ntuesday;2.5;3\n")
    ds = load_dataset(p, {"stamp": "ignore", "z1": "process", "y": "target"}, delimiter=";")
    assert ds.var_names == ("z1",)
    np.testing.assert_array_equal(ds.values[:, 0], [1.5, 2.5])


def test_csv_round_trip_is_exact(tmp_path, rng):
    ds = Dataset(rng.normal(size=(6, 3)), rng.normal(size=6), ["a", "b", "c"], ["y"])
    p = _write(tmp_path, dataset_csv_text(ds, ["seed=1"]))
    back = load_dataset(p, dataset_schema(ds))
    np.testing.assert_array_equal(back.values, ds.values)
    np.testing.assert_array_equal(back.targets, ds.targets)


def test_fir_small_example():
    z = np.arange(10, dtype=float).reshape(5, 2)
    ds = Dataset(z, np.arange(5.0), ["z1", "z2"], ["y"])
    dm = build_fir_matrix(ds, 0, 1)
    assert dm.X.shape == (4, 4)
    np.testing.assert_array_equal(dm.X[0], [z[1, 0], z[1, 1], z[0, 0], z[0, 1]])
    np.testing.assert_array_equal(dm.y, [1, 2, 3, 4])
    assert dm.row_offset == 1


def test_fir_identity_and_width():
    ds = Dataset(np.ones((12, 19)) * np.arange(12)[:, None], np.zeros(12),
                 [f"v{i}" for i in range(19)], ["y"])
    np.testing.assert_array_equal(build_fir_matrix(ds, 0, 0).X, ds.values)
    assert build_fir_matrix(ds, 0, 8).n_features == 171
    with pytest.raises(DataError):
        build_fir_matrix(ds, 0, 12)


@given(st.integers(2, 4), st.integers(0, 4), st.integers(8, 15), st.integers(0, 2**31))
def test_fir_lag_blocks(r, n, N, seed):
    z = np.random.default_rng(seed).normal(size=(N, r))
    ds = Dataset(z, np.zeros(N), [f"v{i}" for i in range(r)], ["y"])
    dm = build_fir_matrix(ds, 0, n)
    assert dm.X.shape == (N - n, (n + 1) * r)
    # dropping lag blocks > 0 reproduces the lag-0 matrix on the same rows
    np.testing.assert_array_equal(dm.lag_block(0), build_fir_matrix(ds, 0, 0).X[n:])
    for lag in range(n + 1):
        np.testing.assert_array_equal(dm.lag_block(lag), z[n - lag:N - lag])


def test_autoscale_example():
    sc = autoscale_fit(np.array([[1.0], [2.0], [3.0]]), np.array([0.0, 1.0, 2.0]))
    assert sc.means[0] == 2.0 and sc.stds[0] == 1.0
    Xs, _ = autoscale_apply(sc, np.array([[1.0], [2.0], [3.0]]))
    np.testing.assert_array_equal(Xs[:, 0], [-1, 0, 1])


def test_constant_column_flagged():
    X = np.column_stack([np.arange(5.0), np.full(5, 3.0)])
    with pytest.warns(ZeroVarianceWarning):
        sc = autoscale_fit(X, np.arange(5.0))
    assert sc.keep.tolist() == [True, False]
    assert sc.transform_X(X).shape == (5, 1)
    with pytest.raises(DataError):
        autoscale_fit(np.ones((4, 2)), np.arange(4.0))


@given(arrays(float, (12, 3), elements=st.floats(-1e3, 1e3)), st.integers(0, 2**31))
def test_autoscale_properties(X, seed):
    X = X + np.random.default_rng(seed).normal(size=X.shape)  # avoid exact constants
    y = np.random.default_rng(seed + 1).normal(size=12)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        sc = autoscale_fit(X, y)
    Xs = sc.transform_X(X)
    assert np.all(np.abs(Xs.mean(axis=0)) <= 1e-12 * max(1.0, np.abs(X).max()))
    np.testing.assert_allclose(sc.inverse_X(Xs)[:, sc.keep], X[:, sc.keep], atol=1e-10 * max(1.0, np.abs(X).max()))
    np.testing.assert_allclose(sc.inverse_y(sc.transform_y(y)), y, atol=1e-10)


def test_segment_examples():
    segs = segment(600, 2, 250, 50)
    assert [(s[0].start, s[0].stop, s[1].start, s[1].stop) for s in segs] == [
        (0, 250, 250, 300), (300, 550, 550, 600)]
    (tr, te), = segment(700, 1, 300, 400)
    assert (tr, te) == (range(0, 300), range(300, 700))
    with pytest.raises(DataError, match="insufficient"):
        segment(700, 3, 250, 50)


@given(st.integers(1, 6), st.integers(1, 30), st.integers(1, 30), st.integers(0, 50))
def test_segments_disjoint_and_ordered(k, tr, te, extra):
    segs = segment(k * (tr + te) + extra, k, tr, te)
    flat = [i for a, b in segs for i in (*a, *b)]
    assert flat == sorted(flat) and len(set(flat)) == len(flat)


def test_vif_cases(rng):
    # centered orthogonal columns
    H = np.array([[1, 1, 1], [1, -1, 1], [-1, 1, 1], [-1, -1, 1]], float)[:, :2]
    np.testing.assert_allclose(vif(H), [1.0, 1.0])
    # exact sample correlation 0.9: noise orthogonalized against a
    a = rng.normal(size=2000)
    a = (a - a.mean()) / a.std()
    e = rng.normal(size=2000)
    e -= e.mean()
    e -= (e @ a) / (a @ a) * a
    e /= e.std()
    b = 0.9 * a + np.sqrt(0.19) * e
    np.testing.assert_allclose(vif(np.column_stack([a, b])), 1 / (1 - 0.81), rtol=1e-9)
    dup = vif(np.column_stack([a, a, e]))
    assert np.isinf(dup[0]) and np.isinf(dup[1]) and np.isfinite(dup[2])


@given(st.integers(0, 2**31))
def test_vif_at_least_one(seed):
    X = np.random.default_rng(seed).normal(size=(30, 5))
    v = vif(X)
    assert np.all(v[np.isfinite(v)] >= 1.0)
