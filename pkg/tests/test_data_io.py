import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from factmle import CovarianceInput, DomainError, ParseError, SyntheticSpec, generate_synthetic, load_csv, save_csv
from factmle.data_io import GroundTruth, InputMode, write_truth


def _write(tmp_path, text, name="in.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def test_data_csv_centers_columns(tmp_path):
    cov = load_csv(_write(tmp_path, "1,2\n3,4\n5,6\n"))
    assert cov.mode is InputMode.DATA and cov.n == 3 and cov.p == 2
    np.testing.assert_array_equal(cov.x, [[-2, -2], [0, 0], [2, 2]])
    np.testing.assert_allclose(cov.s, np.full((2, 2), 8 / 3), rtol=1e-15)


def test_covariance_csv_identity(tmp_path):
    cov = load_csv(_write(tmp_path, "1,0\n0,1\n"), mode="cov")
    np.testing.assert_array_equal(cov.s, np.eye(2))
    assert cov.n is None and not cov.has_x


def test_header_is_skipped(tmp_path):
    cov = load_csv(_write(tmp_path, "a,b\n1,0\n0,1\n"), has_header=True, mode="cov")
    np.testing.assert_array_equal(cov.s, np.eye(2))


@pytest.mark.parametrize("text, mode, exc", [
    ("1,0\n0,0\n", "cov", DomainError),
    ("1,2,3\n4,5,6\n", "cov", DomainError),
    ("1,x\n2,3\n", "data", ParseError),
    ("1,2\n3\n", "data", ParseError),
    ("", "data", ParseError),
    ("1,2\n1,3\n", "data", DomainError),  # zero variance in column 0
])
def test_bad_inputs(tmp_path, text, mode, exc):
    with pytest.raises(exc):
        load_csv(_write(tmp_path, text), mode=mode)


def test_covariance_is_symmetrized():
    s = np.array([[2.0, 1.0], [1.0 + 1e-14, 3.0]])
    cov = CovarianceInput.from_covariance(s)
    np.testing.assert_array_equal(cov.s, cov.s.T)


def test_arrays_are_read_only(small_cov):
    with pytest.raises(ValueError):
        small_cov.x[0, 0] = 1.0


def test_large_p_keeps_only_x():
    rng = np.random.default_rng(0)
    cov = CovarianceInput.from_data(rng.standard_normal((5, 40)), materialize=False)
    assert cov.s is None
    b = rng.standard_normal((40, 3))
    dense = cov.x.T @ cov.x / cov.n
    np.testing.assert_allclose(cov.matmul(b), dense @ b, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(cov.quad(b), b.T @ dense @ b, rtol=1e-12, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.lists(st.floats(-1e6, 1e6, allow_subnormal=False), min_size=3, max_size=3),
                min_size=2, max_size=6))
def test_csv_round_trip_is_exact(tmp_path_factory, rows):
    a = np.array(rows)
    path = tmp_path_factory.mktemp("rt") / "a.csv"
    save_csv(path, a)
    try:
        direct = CovarianceInput.from_data(a)
    except DomainError:
        return  # a constant column is legitimately rejected
    back = load_csv(path, mode="data")
    np.testing.assert_array_equal(back.x, direct.x)
    np.testing.assert_array_equal(back.s, direct.s)


def test_save_load_covariance_bitwise(tmp_path, rng):
    s = rng.standard_normal((4, 4))
    s = s @ s.T + np.eye(4)
    path = tmp_path / "s.csv"
    save_csv(path, s)
    np.testing.assert_array_equal(load_csv(path, mode="cov").s, s)


def test_generated_columns_are_centered():
    cov, _ = generate_synthetic(SyntheticSpec(p=20, n=300, r0=3, seed=5))
    sd = cov.x.std(axis=0)
    assert np.all(np.abs(cov.x.mean(axis=0)) <= 1e-9 * sd)
    np.testing.assert_allclose(cov.s, cov.x.T @ cov.x / cov.n, rtol=0, atol=0)


def test_figure_one_shape():
    cov, truth = generate_synthetic(SyntheticSpec(p=200, n=2200, r0=8, seed=0))
    assert cov.x.shape == (2200, 200)
    assert truth.L0.shape == (200, 8) and truth.psi0.shape == (200,)
    assert np.all(truth.psi0 > 0)


def test_seed_determinism():
    spec = SyntheticSpec(p=10, n=50, r0=2, seed=7)
    a, ta = generate_synthetic(spec)
    b, tb = generate_synthetic(spec)
    np.testing.assert_array_equal(a.x, b.x)
    np.testing.assert_array_equal(ta.L0, tb.L0)


@pytest.mark.parametrize("kw", [
    dict(loading_var=0.0), dict(r0=10), dict(uniqueness_mean=0.0), dict(n=0),
])
def test_invalid_spec(kw):
    base = dict(p=10, n=50, r0=2)
    base.update(kw)
    with pytest.raises(DomainError):
        SyntheticSpec(**base)


def test_large_sample_covariance_matches_truth():
    # statistical smoke test: entries within 5 standard errors
    cov, truth = generate_synthetic(SyntheticSpec(p=4, n=200_000, r0=1, loading_mean=1.0,
                                                  uniqueness_mean=1.0, seed=11))
    sig = truth.covariance()
    se = np.sqrt((sig ** 2 + np.outer(np.diag(sig), np.diag(sig))) / cov.n)
    assert np.all(np.abs(cov.s - sig) <= 5 * se)


def test_truth_json(tmp_path):
    _, truth = generate_synthetic(SyntheticSpec(p=5, n=10, r0=2, seed=3))
    path = tmp_path / "t.json"
    write_truth(path, truth)
    d = json.loads(path.read_text())
    assert set(d) == {"psi0", "L0", "seed"} and d["seed"] == 3
    back = GroundTruth.from_json(path.read_text())
    np.testing.assert_array_equal(back.L0, truth.L0)
