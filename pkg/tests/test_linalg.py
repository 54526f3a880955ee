import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse as sp

from gwtransport.linalg import (BlockSparseMatrix, FactorizationError, IndefiniteMatrixError, bicgstab, block_ilu0,
                                block_ssor, cg, gmres, is_block_lower_triangular, solve, symmetric_gauss_seidel)


def spd(rng, n=50):
    a = rng.standard_normal((n, n))
    return a @ a.T + n * np.eye(n)


def test_identity_one_iteration(rng):
    b = rng.standard_normal(6)
    a = BlockSparseMatrix.from_dense(np.eye(6), 2)
    for method in (bicgstab, gmres, cg):
        x, rep = method(a, b)
        np.testing.assert_allclose(x, b)
        assert rep.iterations <= 1 and rep.converged


def test_diagonal_blocks():
    a = BlockSparseMatrix.from_dense(np.diag([2.0, 4.0]), 2)
    x, rep = bicgstab(a, np.array([2.0, 4.0]))
    np.testing.assert_allclose(x, [1.0, 1.0])


def test_gmres_nonsymmetric():
    a = BlockSparseMatrix.from_dense(np.array([[1.0, 1.0], [0.0, 1.0]]), 1)
    x, _ = gmres(a, np.array([2.0, 1.0]))
    np.testing.assert_allclose(x, [1.0, 1.0])


@pytest.mark.parametrize("method", [bicgstab, gmres, cg])
@pytest.mark.parametrize("prec", [None, "ssor", "ilu0"])
def test_random_spd_against_dense_lu(method, prec, rng):
    A = spd(rng)
    b = rng.standard_normal(50)
    exact = sla.lu_solve(sla.lu_factor(A), b)
    a = BlockSparseMatrix.from_dense(A, 5)
    p = {"ssor": block_ssor, "ilu0": block_ilu0}[prec](a) if prec else None
    x, rep = method(a, b, p, 1e-10, max_iter=500)
    assert rep.converged
    assert np.linalg.norm(x - exact) <= 1e-6 * np.linalg.norm(exact)


def test_cg_and_bicgstab_agree(rng):
    a = BlockSparseMatrix.from_dense(spd(rng, 30), 3)
    b = rng.standard_normal(30)
    x1, _ = cg(a, b, reduction=1e-9)
    x2, _ = bicgstab(a, b, reduction=1e-9)
    assert np.linalg.norm(x1 - x2) <= 10 * 1e-9 * np.linalg.norm(x1) * 100


def test_cg_detects_indefinite():
    a = BlockSparseMatrix.from_dense(np.diag([1.0, -1.0]), 1)
    with pytest.raises(IndefiniteMatrixError):
        cg(a, np.array([1.0, 1.0]))


def test_ssor_exact_for_block_diagonal(rng):
    A = sla.block_diag(*[spd(rng, 3) for _ in range(4)])
    a = BlockSparseMatrix.from_dense(A, 3)
    r = rng.standard_normal(12)
    np.testing.assert_allclose(A @ block_ssor(a)(r), r, atol=1e-12)
    np.testing.assert_allclose(A @ block_ilu0(a)(r), r, atol=1e-12)


def _lower_block(rng, nb=5, b=2):
    A = np.tril(rng.standard_normal((nb * b, nb * b)))
    A += 4 * np.eye(nb * b)
    return A


def test_forward_sweep_exact_for_lower_triangular(rng):
    A = _lower_block(rng)
    a = BlockSparseMatrix.from_dense(A, 2)
    rhs = rng.standard_normal(10)
    x = symmetric_gauss_seidel(a, rhs, sweeps=1)
    assert np.linalg.norm(A @ x - rhs) < 1e-12 * np.linalg.norm(rhs)
    np.testing.assert_allclose(A @ block_ilu0(a)(rhs), rhs, atol=1e-12)


def test_ssor_matches_dense_sweep(rng):
    A = spd(rng, 3)
    r = rng.standard_normal(3)
    D = np.diag(np.diag(A))
    L = np.tril(A, -1)
    U = np.triu(A, 1)
    # omega = 1: M = (D + L) D^-1 (D + U)
    M = (D + L) @ np.linalg.inv(D) @ (D + U)
    z = block_ssor(BlockSparseMatrix.from_dense(A, 1))(r)
    np.testing.assert_allclose(z, np.linalg.solve(M, r), rtol=1e-12)


def test_ilu0_full_pattern_is_lu(rng):
    A = spd(rng, 4) + np.triu(rng.standard_normal((4, 4)), 1)
    r = rng.standard_normal(4)
    z = block_ilu0(BlockSparseMatrix.from_dense(A, 1))(r)
    np.testing.assert_allclose(z, np.linalg.solve(A, r), rtol=1e-12)


def test_singular_diagonal_block_reported():
    A = np.eye(4)
    A[2:, 2:] = 0.0
    A[2, 0] = 1.0
    a = BlockSparseMatrix.from_dense(A, 2)
    with pytest.raises(FactorizationError):
        block_ssor(a)
    with pytest.raises(FactorizationError):
        block_ilu0(a)


def test_block_triangular_detection():
    assert is_block_lower_triangular(BlockSparseMatrix.from_dense(np.eye(4), 2))
    a = BlockSparseMatrix.from_dense(np.array([[1.0, 1.0], [0.0, 1.0]]), 1)
    assert not is_block_lower_triangular(a)
    assert is_block_lower_triangular(a, permutation=[1, 0])


def test_permuted_roundtrip(rng):
    A = rng.standard_normal((6, 6))
    a = BlockSparseMatrix.from_dense(A, 2)
    p = a.permuted([2, 0, 1])
    idx = np.concatenate([np.arange(4, 6), np.arange(0, 2), np.arange(2, 4)])
    np.testing.assert_allclose(p.toarray(), A[np.ix_(idx, idx)])


def test_matvec_matches_scipy(rng):
    A = sp.random(20, 20, density=0.3, random_state=1, format="csr") + sp.eye(20)
    a = BlockSparseMatrix.from_scipy(A, 2)
    x = rng.standard_normal(20)
    np.testing.assert_allclose(a.matvec(x), A @ x, atol=1e-14)


def test_matrix_market_export(tmp_path):
    import scipy.io
    A = np.arange(16.0).reshape(4, 4) + 1
    BlockSparseMatrix.from_dense(A, 2).write_matrix_market(tmp_path / "a.mtx")
    np.testing.assert_allclose(scipy.io.mmread(str(tmp_path / "a.mtx")).toarray(), A)


def test_ssor_exact_for_lower_triangular_system(rng):
    # one-way coupled blocks: SSOR with omega = 1 is an exact solve, so BiCGSTAB needs one step
    A = _lower_block(rng, 8, 2)
    a = BlockSparseMatrix.from_dense(A, 2)
    _, plain = bicgstab(a, np.ones(16), None, 1e-10)
    _, pre = bicgstab(a, np.ones(16), block_ssor(a), 1e-10)
    assert pre.iterations == 1 and plain.iterations > 1


def test_solve_front_end(rng):
    a = BlockSparseMatrix.from_dense(spd(rng, 12), 3)
    b = rng.standard_normal(12)
    for s in ("bicgstab", "gmres", "cg"):
        x, rep = solve(a, b, s, "ilu0", 1e-10)
        assert rep.converged and rep.solver == s
