import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pfsense.exceptions import SingularMatrix
from pfsense.numkit import (
    eigenvalues,
    format_float,
    is_positive_definite,
    lu_solve,
    min_real_eig_sym_part,
    nuclear_norm,
    read_matrix_csv,
    spectral_norm,
    svd,
    svt,
    truncate,
    write_matrix_csv,
)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def test_lu_identity_and_diag():
    b = np.array([3.0, -1.0])
    np.testing.assert_array_equal(lu_solve(np.eye(2), b), b)
    np.testing.assert_allclose(lu_solve([[2, 0], [0, 4]], [2, 8]), [1, 2])


def test_lu_random_residual(rng):
    a = rng.normal(size=(50, 50)) + 10 * np.eye(50)
    b = rng.normal(size=(50, 3))
    x = lu_solve(a, b)
    assert np.abs(a @ x - b).max() <= 1e-10 * np.abs(b).max()


def test_lu_singular():
    with pytest.raises(SingularMatrix):
        lu_solve([[1.0, 2.0], [2.0, 4.0]], [1.0, 1.0])


def test_truncate_diag():
    np.testing.assert_allclose(truncate(svd(np.diag([3.0, 2, 1])), 2), np.diag([3.0, 2, 0]),
                               atol=1e-14)


def test_rank_one(rng):
    a = np.outer(rng.normal(size=5), rng.normal(size=7))
    s = svd(a).sigma
    assert s[1] < 1e-12 * s[0]


def test_svd_factors(rng):
    a = rng.normal(size=(10, 20))
    f = svd(a)
    assert np.all(np.diff(f.sigma) <= 0)
    assert np.linalg.norm(f.u.T @ f.u - np.eye(10)) < 1e-10
    assert np.linalg.norm(f.v.T @ f.v - np.eye(10)) < 1e-10
    np.testing.assert_allclose(truncate(f, 10), a, atol=1e-10)


def test_truncate_is_best_rank_r(rng):
    a = rng.normal(size=(6, 8))
    best = np.linalg.norm(a - truncate(svd(a), 2))
    for _ in range(20):
        other = rng.normal(size=(6, 2)) @ rng.normal(size=(2, 8))
        assert np.linalg.norm(a - other) >= best


def test_spectral_norm_examples(rng):
    assert spectral_norm(np.diag([3.0, 2.0])) == pytest.approx(3.0, abs=1e-12)
    q, _ = np.linalg.qr(rng.normal(size=(6, 6)))
    assert spectral_norm(q) == pytest.approx(1.0, abs=1e-10)
    a = rng.normal(size=(30, 30))
    assert spectral_norm(a) == pytest.approx(svd(a).sigma[0], abs=1e-9)


@settings(max_examples=50, deadline=None)
@given(arrays(float, (4, 5), elements=finite), arrays(float, (5, 3), elements=finite))
def test_spectral_norm_submultiplicative(a, b):
    assert spectral_norm(a @ b) <= spectral_norm(a) * spectral_norm(b) + 1e-9


def test_eigenvalues_examples():
    np.testing.assert_allclose(sorted(eigenvalues(np.diag([1.0, -2, 3])).real), [-2, 1, 3])
    ev = eigenvalues(np.array([[0.0, -1.0], [1.0, 0.0]]))
    np.testing.assert_allclose(sorted(ev.imag), [-1, 1], atol=1e-14)
    # x^3 - 6x^2 + 11x - 6 = (x-1)(x-2)(x-3)
    comp = np.array([[6.0, -11.0, 6.0], [1, 0, 0], [0, 1, 0]])
    np.testing.assert_allclose(sorted(eigenvalues(comp).real), [1, 2, 3], atol=1e-8)


def test_eigenvalues_transpose(rng):
    a = rng.normal(size=(20, 20))
    e1 = np.sort_complex(eigenvalues(a))
    e2 = np.sort_complex(eigenvalues(a.T))
    np.testing.assert_allclose(e1, e2, atol=1e-8)


def test_min_eig_sym_part():
    a = np.array([[1.0, 5.0], [-5.0, 1.0]])  # skew part does not matter
    assert min_real_eig_sym_part(a) == pytest.approx(1.0)
    assert is_positive_definite(a)
    assert not is_positive_definite(-np.eye(3))


def test_svt_examples(rng):
    a = rng.normal(size=(4, 6))
    np.testing.assert_allclose(svt(a, 0), a, atol=1e-12)
    np.testing.assert_allclose(svt(a, svd(a).sigma[0]), 0, atol=1e-12)
    np.testing.assert_allclose(svt(np.diag([3.0, 1.0]), 2.0), np.diag([1.0, 0.0]), atol=1e-12)


@pytest.mark.parametrize("d,tau", [((3.0, 1.0, 0.5), 0.7), ((2.0, 2.0, 0.1), 1.5)])
def test_svt_is_prox(d, tau):
    a = np.diag(d)
    x = svt(a, tau)
    best = 0.5 * np.sum((x - a) ** 2) + tau * nuclear_norm(x)
    grid = np.linspace(0, 3, 31)
    for s0 in grid:
        for s1 in grid:
            for s2 in grid[::3]:
                y = np.diag([s0, s1, s2])
                assert 0.5 * np.sum((y - a) ** 2) + tau * nuclear_norm(y) >= best - 1e-12


def test_csv_roundtrip(tmp_path, rng):
    a = rng.normal(size=(3, 4))
    p = tmp_path / "m.csv"
    write_matrix_csv(p, a)
    np.testing.assert_array_equal(read_matrix_csv(p), a)
    assert format_float(0.1) == "0.10000000000000001"
