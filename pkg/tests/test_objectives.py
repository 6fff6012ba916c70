import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dcdgd import objectives as obj


def rel_err(g, fd):
    return float(np.max(np.abs(g - fd)) / max(np.max(np.abs(g)), 1.0))


def assert_fd(f, dim, seed=0, tol=1e-5, scale=1.0):
    rng = np.random.default_rng(seed)
    for _ in range(10):
        x = rng.standard_normal(dim) * scale
        assert rel_err(f.grad(x), obj.finite_difference_grad(f.value, x)) <= tol


def write_csv(path, rows):
    path.write_text("\n".join(",".join(str(v) for v in r) for r in rows) + "\n")
    return path


def fixture_rows(n, features, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, features))
    y = (X[:, 0] > 0).astype(int)
    return [list(x) + [int(t)] for x, t in zip(X, y)]


# ---------------------------------------------------------------- synthetic five

def test_synthetic_values_at_zero():
    f = obj.make_synthetic_five(seed=3, dim=6)
    vals = [fi.value(np.zeros(6)) for fi in f.locals]
    for i, fi in enumerate(f.locals):
        want = math.log1p(fi.b ** 2 / 2) if i < 2 else fi.b ** 2 / 2
        assert vals[i] == pytest.approx(want, rel=1e-15)
    assert f.value(np.zeros(6)) == pytest.approx(sum(vals), rel=1e-12)


def test_synthetic_kinds_and_determinism():
    a = obj.make_synthetic_five(seed=1)
    b = obj.make_synthetic_five(seed=1)
    assert [type(fi).__name__ for fi in a.locals] == ["LogCauchy"] * 2 + ["LeastSquares"] * 3
    assert a.dim == 10 and a.n == 5
    for fa, fb in zip(a.locals, b.locals):
        np.testing.assert_array_equal(fa.a, fb.a)


def test_least_squares_gradient_and_L():
    f = obj.make_synthetic_five(seed=2).locals[2]
    x = np.random.default_rng(0).standard_normal(10)
    np.testing.assert_allclose(f.grad(x), (f.a @ x - f.b) * f.a, rtol=1e-15)
    assert rel_err(f.grad(x), obj.finite_difference_grad(f.value, x)) <= 1e-6
    assert f.L_est == pytest.approx(f.a @ f.a, rel=1e-9)


def test_log_cauchy_curvature_at_root():
    f = obj.make_synthetic_five(seed=4).locals[0]
    a = f.a
    # point on the hyperplane a^T x + b = 0
    x0 = -f.b * a / (a @ a)
    h = 1e-4
    d = a / np.linalg.norm(a)
    second = (f.value(x0 + h * d) - 2 * f.value(x0) + f.value(x0 - h * d)) / h ** 2
    assert second == pytest.approx(a @ a, rel=1e-5)
    assert f.L_est >= a @ a * (1 - 1e-12)


def test_synthetic_gradients_finite_differences():
    f = obj.make_synthetic_five(seed=5)
    for fi in f.locals:
        assert_fd(fi, f.dim)


def test_global_sum_consistency():
    f = obj.make_synthetic_five(seed=6)
    rng = np.random.default_rng(1)
    for _ in range(5):
        x = rng.standard_normal(10)
        assert f.value(x) == pytest.approx(sum(fi.value(x) for fi in f.locals), rel=1e-12)
        np.testing.assert_allclose(f.grad(x), sum(fi.grad(x) for fi in f.locals), rtol=1e-12, atol=1e-14)
        X = np.tile(x, (5, 1))
        np.testing.assert_allclose(f.local_values(X), [fi.value(x) for fi in f.locals])


def test_global_rejects_mixed_dims():
    with pytest.raises(ValueError, match="dimension"):
        obj.GlobalObjective((obj.LeastSquares(np.ones(2), 0.0), obj.LeastSquares(np.ones(3), 0.0)))


def test_reference_optimum_reaches_zero_for_underdetermined_problem():
    f = obj.GlobalObjective(tuple(obj.LeastSquares(np.eye(4)[i] + 0.1, 1.0) for i in range(3)))
    val, x = obj.reference_optimum(f, iterations=20_000)
    assert val < 1e-20
    assert np.sum(f.grad(x) ** 2) <= 1e-24


# ---------------------------------------------------------------- L estimation

def test_identity_quadratic_L():
    q = obj.Quadratic(np.eye(5), np.zeros(5))
    assert obj.estimate_L(q) == pytest.approx(1.0, rel=1e-9)


def test_quadratic_L_matches_eigvalsh():
    rng = np.random.default_rng(2)
    M = rng.standard_normal((6, 6))
    H = M @ M.T
    q = obj.Quadratic(H, rng.standard_normal(6))
    assert q.L_est == pytest.approx(np.linalg.eigvalsh(H)[-1], rel=1e-8)
    assert_fd(q, 6)


def test_power_iteration_nonconvergence_reports_residual():
    H = np.diag([1.0, -1.0])  # equal-magnitude eigenvalues never separate
    with pytest.raises(obj.ConvergenceError) as exc:
        obj.power_iteration(lambda v: H @ v, 2, max_iter=50)
    assert exc.value.residual > 0


def test_logistic_L_bounds_directional_curvature():
    rng = np.random.default_rng(3)
    Z = rng.standard_normal((40, 8))
    y = (rng.random(40) < 0.5).astype(float)
    f = obj.LogisticNonconvex(Z, y, 0.1)
    L = f.L_est
    want = np.linalg.eigvalsh(Z.T @ Z)[-1] / (4 * 40) + 0.2
    assert L == pytest.approx(want, rel=1e-8)
    h = 1e-3
    for _ in range(20):
        x = rng.standard_normal(8)
        d = rng.standard_normal(8)
        d /= np.linalg.norm(d)
        second = (f.value(x + h * d) - 2 * f.value(x) + f.value(x - h * d)) / h ** 2
        assert second <= L


# ---------------------------------------------------------------- logistic

def test_logistic_at_zero():
    rng = np.random.default_rng(4)
    Z = rng.standard_normal((10, 5))
    y = np.array([0, 1] * 5, dtype=float)
    f = obj.LogisticNonconvex(Z, y, 0.1)
    assert f.value(np.zeros(5)) == pytest.approx(math.log(2), rel=1e-15)
    assert obj.regularizer(np.zeros(5), 0.1) == 0.0


def test_logistic_gradient_finite_differences():
    rng = np.random.default_rng(5)
    Z = rng.standard_normal((30, 7))
    y = (rng.random(30) < 0.4).astype(float)
    f = obj.LogisticNonconvex(Z, y, 0.1)
    assert_fd(f, 7, scale=2.0)


def test_logistic_is_stable_for_large_margins():
    Z = np.array([[1000.0], [-1000.0]])
    f = obj.LogisticNonconvex(Z, np.array([0.0, 1.0]), 0.0)
    assert math.isfinite(f.value(np.array([1.0])))
    assert f.value(np.array([1.0])) == pytest.approx(1000.0)
    assert np.all(np.isfinite(f.grad(np.array([1.0]))))


def test_regularizer_gradient_at_one():
    g = obj.regularizer_grad(np.array([1.0]), 0.1)
    assert g[0] == pytest.approx(0.05, rel=1e-15)


def test_regularizer_bounds_on_grid():
    rho = 0.3
    u = np.linspace(-50, 50, 200_001)
    vals = rho * u ** 2 / (1 + u ** 2)
    assert vals.min() >= 0 and vals.max() <= rho
    gmax = np.max(np.abs(obj.regularizer_grad(u, rho)))
    assert gmax <= rho * 3 * math.sqrt(3) / 8 * (1 + 1e-12)
    assert gmax == pytest.approx(rho * 3 * math.sqrt(3) / 8, rel=1e-6)


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=20), st.floats(0.0, 5.0))
def test_regularizer_bounds_property(xs, rho):
    x = np.array(xs)
    D = x.size
    r = obj.regularizer(x, rho)
    assert -1e-12 <= r <= rho * D * (1 + 1e-12)
    assert np.linalg.norm(obj.regularizer_grad(x, rho)) <= rho * 3 * math.sqrt(3) / 8 * math.sqrt(D) * (1 + 1e-9)


def test_empty_partition_block_rejected():
    ds = obj.Dataset(np.zeros((3, 2)), np.zeros(3), "x", False)
    with pytest.raises(ValueError, match="empty"):
        obj.make_logistic_nonconvex(ds, [])


# ---------------------------------------------------------------- data loading

def test_three_row_fixture_standardized_exactly(tmp_path):
    p = write_csv(tmp_path / "d.csv", [[1, 10, 0], [2, 10, 1], [3, 10, 1]])
    ds = obj.load_csv_dataset(p, feature_count=2)
    # column 0: mean 2, population std sqrt(2/3); column 1 constant -> centred only
    s = math.sqrt(2 / 3)
    np.testing.assert_allclose(ds.features[:, 0], [-1 / s, 0.0, 1 / s], rtol=1e-15)
    np.testing.assert_array_equal(ds.features[:, 1], [0.0, 0.0, 0.0])
    np.testing.assert_array_equal(ds.labels, [0, 1, 1])
    assert ds.rows == 3 and ds.standardized


def test_loader_without_standardization(tmp_path):
    p = write_csv(tmp_path / "d.csv", [[1, 10, 0], [2, 11, 1]])
    ds = obj.load_csv_dataset(p, feature_count=2, standardize_features=False)
    np.testing.assert_array_equal(ds.features, [[1, 10], [2, 11]])


def test_loader_errors(tmp_path):
    with pytest.raises(obj.DatasetError, match="not found"):
        obj.load_csv_dataset(tmp_path / "missing.data")
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(obj.DatasetError, match="no data rows"):
        obj.load_csv_dataset(empty, feature_count=2)
    bad = tmp_path / "bad.csv"
    bad.write_text("1,2,0\n1,x,1\n")
    with pytest.raises(obj.DatasetError, match=r"bad.csv:2"):
        obj.load_csv_dataset(bad, feature_count=2)
    short = tmp_path / "short.csv"
    short.write_text("1,2,0\n1,1\n")
    with pytest.raises(obj.DatasetError, match=r"short.csv:2: expected 3 fields"):
        obj.load_csv_dataset(short, feature_count=2)
    label = tmp_path / "label.csv"
    label.write_text("1,2,0\n1,1,2\n")
    with pytest.raises(obj.DatasetError, match=r"label.csv:2: label 2"):
        obj.load_csv_dataset(label, feature_count=2)


def test_loader_checksum(tmp_path):
    p = write_csv(tmp_path / "d.csv", fixture_rows(5, 3))
    digest = obj.file_checksum(p)
    assert obj.load_csv_dataset(p, feature_count=3, expected_checksum=digest).checksum == digest
    with pytest.raises(obj.DatasetError, match="checksum"):
        obj.load_csv_dataset(p, feature_count=3, expected_checksum="0" * 64)


def test_loader_57_features(tmp_path):
    p = write_csv(tmp_path / "spam.data", fixture_rows(50, 57))
    ds = obj.load_csv_dataset(p)
    assert ds.features.shape == (50, 57)
    np.testing.assert_allclose(ds.features.mean(axis=0), 0.0, atol=1e-14)


# ---------------------------------------------------------------- partition

def test_partition_spambase_sizes():
    part = obj.partition_even(4601, 10, seed=0)
    assert sorted(part.sizes) == [460] * 9 + [461]
    allidx = np.concatenate(part.blocks)
    assert np.array_equal(np.sort(allidx), np.arange(4601))


def test_partition_extremes():
    assert obj.partition_even(4601, 1).sizes == (4601,)
    assert set(obj.partition_even(4601, 4601).sizes) == {1}
    with pytest.raises(ValueError):
        obj.partition_even(10, 0)
    with pytest.raises(ValueError):
        obj.partition_even(10, 11)


@given(st.integers(1, 500), st.integers(1, 50), st.integers(0, 100))
def test_partition_property(n, N, seed):
    if N > n:
        return
    part = obj.partition_even(n, N, seed)
    sizes = part.sizes
    assert max(sizes) - min(sizes) <= 1
    assert sum(sizes) == n
    assert len(set(np.concatenate(part.blocks).tolist())) == n
    again = obj.partition_even(n, N, seed)
    assert all(np.array_equal(a, b) for a, b in zip(part.blocks, again.blocks))


def test_logistic_global_from_dataset(tmp_path):
    p = write_csv(tmp_path / "d.csv", fixture_rows(40, 4))
    ds = obj.load_csv_dataset(p, feature_count=4)
    g = obj.make_logistic_global(ds, 4, rho=0.1, seed=0)
    assert g.n == 4 and g.dim == 4
    assert g.value(np.zeros(4)) == pytest.approx(4 * math.log(2))
    assert_fd(g, 4)
