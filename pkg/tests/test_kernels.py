import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from saddlerb.errors import NoConvergence, NotSPD, SingularSystem
from saddlerb.kernels import SaddleFactor, SPDFactor, eig_extreme, solve_saddle, solve_spd


def laplacian_1d(n, shift=0.0):
    return sp.diags([-np.ones(n - 1), (2.0 + shift) * np.ones(n), -np.ones(n - 1)], [-1, 0, 1],
                    format="csr")


def random_spd(rng, n):
    Q = rng.standard_normal((n, n))
    return Q @ Q.T + n * np.eye(n)


@given(st.integers(2, 30), st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_solve_spd_matches_dense(n, seed):
    rng = np.random.default_rng(seed)
    M = random_spd(rng, n)
    b = rng.standard_normal(n)
    x = solve_spd(sp.csr_matrix(M), b)
    np.testing.assert_allclose(x, np.linalg.solve(M, b), rtol=1e-9, atol=1e-12)


def test_spd_factor_rejects_indefinite():
    M = sp.diags([1.0, -1.0, 2.0], format="csr")
    with pytest.raises(NotSPD):
        SPDFactor(M)


def test_spd_factor_rejects_non_square():
    with pytest.raises(ValueError):
        SPDFactor(sp.csr_matrix(np.ones((2, 3))))


def test_saddle_solve_residual(rng):
    n, m = 40, 10
    A = laplacian_1d(n, 0.1)
    B = sp.csr_matrix(rng.standard_normal((m, n)))
    f, g = rng.standard_normal(n), rng.standard_normal(m)
    u, p = solve_saddle(A, B, f, g)
    np.testing.assert_allclose(A @ u + B.T @ p, f, atol=1e-10)
    np.testing.assert_allclose(B @ u, g, atol=1e-10)


def test_saddle_rejects_zero_row(rng):
    A = laplacian_1d(6)
    B = sp.csr_matrix(np.vstack([rng.standard_normal(6), np.zeros(6)]))
    with pytest.raises(SingularSystem):
        SaddleFactor(A, B)


def test_saddle_rejects_rank_deficient_b(rng):
    A = laplacian_1d(6)
    row = rng.standard_normal(6)
    B = sp.csr_matrix(np.vstack([row, 2.0 * row]))
    with pytest.raises(SingularSystem):
        SaddleFactor(A, B)


@pytest.mark.parametrize("which", ["min", "max"])
def test_eig_extreme_dense_and_lanczos_agree(which):
    n = 300
    M = laplacian_1d(n, 0.05)
    G = sp.diags(np.linspace(1.0, 2.0, n), format="csr")
    ref = sla.eigh(M.toarray(), G.toarray(), eigvals_only=True)
    expected = ref[0] if which == "min" else ref[-1]
    dense = eig_extreme(M, G, which)
    lanczos = eig_extreme(M, G, which, dense_below=10)
    assert dense.value == pytest.approx(expected, rel=1e-10)
    assert lanczos.value == pytest.approx(expected, rel=1e-8)
    assert lanczos.residual_norm <= 1e-8


def test_eig_extreme_absmin_indefinite():
    n = 200
    d = np.linspace(-3.0, 5.0, n) + 0.013
    M = sp.diags(d, format="csr")
    G = sp.identity(n, format="csr")
    expected = d[np.argmin(np.abs(d))]
    assert eig_extreme(M, G, "absmin").value == pytest.approx(expected, rel=1e-12)
    assert eig_extreme(M, G, "absmin", dense_below=10).value == pytest.approx(expected, rel=1e-8)


def test_eig_extreme_bad_selector():
    with pytest.raises(ValueError):
        eig_extreme(np.eye(2), np.eye(2), "median")


def test_eig_extreme_reports_no_convergence():
    n = 400
    M = laplacian_1d(n)
    with pytest.raises(NoConvergence):
        eig_extreme(M, sp.identity(n, format="csr"), "min", dense_below=10, maxiter=1)
