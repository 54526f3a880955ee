"""Block SSOR, block ILU(0) and block Gauss-Seidel on BSR storage.

The sweeps are sequential over block rows and compiled with numba.
"""

from __future__ import annotations

import numba as nb
import numpy as np

from .matrix import BlockSparseMatrix

_jit = {"nogil": True, "cache": True}


class FactorizationError(ArithmeticError):
    def __init__(self, row: int, what: str = "diagonal block"):
        super().__init__(f"singular {what} in block row {row}")
        self.row = row


def _invert_diagonal(a: BlockSparseMatrix) -> np.ndarray:
    diag = a.diagonal_index
    missing = np.flatnonzero(diag < 0)
    if missing.size:
        raise FactorizationError(int(missing[0]), "(missing) diagonal block")
    d = a.blocks[diag]
    scale = np.abs(d).reshape(a.n, -1).max(axis=1)
    cond_ok = np.ones(a.n, dtype=bool)
    if a.block_size == 1:
        cond_ok = d[:, 0, 0] != 0
    else:
        cond = np.linalg.cond(d)
        cond_ok = np.isfinite(cond) & (cond < 1e14)
    bad = np.flatnonzero(~cond_ok | (scale == 0))
    if bad.size:
        raise FactorizationError(int(bad[0]))
    return np.linalg.inv(d)


@nb.njit(**_jit)
def _blk_mv_sub(acc, blk, x, j, b, factor):
    for r in range(b):
        s = 0.0
        for c in range(b):
            s += blk[r, c] * x[j * b + c]
        acc[r] -= factor * s


@nb.njit(**_jit)
def _blk_solve(out, inv, acc, i, b):
    for r in range(b):
        s = 0.0
        for c in range(b):
            s += inv[r, c] * acc[c]
        out[i * b + r] = s


@nb.njit(**_jit)
def _ssor_apply(indptr, indices, blocks, diag, dinv, r, omega):
    n = indptr.shape[0] - 1
    b = blocks.shape[1]
    y = np.zeros_like(r)
    acc = np.empty(b)
    # (D + omega L) y = omega (2 - omega) r
    for i in range(n):
        for q in range(b):
            acc[q] = omega * (2.0 - omega) * r[i * b + q]
        for k in range(indptr[i], indptr[i + 1]):
            j = indices[k]
            if j < i:
                _blk_mv_sub(acc, blocks[k], y, j, b, omega)
        _blk_solve(y, dinv[i], acc, i, b)
    # w = D y ; (D + omega U) z = w
    z = np.zeros_like(r)
    for i in range(n - 1, -1, -1):
        dk = blocks[diag[i]]
        for q in range(b):
            s = 0.0
            for c in range(b):
                s += dk[q, c] * y[i * b + c]
            acc[q] = s
        for k in range(indptr[i], indptr[i + 1]):
            j = indices[k]
            if j > i:
                _blk_mv_sub(acc, blocks[k], z, j, b, omega)
        _blk_solve(z, dinv[i], acc, i, b)
    return z


@nb.njit(**_jit)
def _gs_sweep(indptr, indices, blocks, dinv, rhs, x, forward):
    n = indptr.shape[0] - 1
    b = blocks.shape[1]
    acc = np.empty(b)
    for step in range(n):
        i = step if forward else n - 1 - step
        for q in range(b):
            acc[q] = rhs[i * b + q]
        for k in range(indptr[i], indptr[i + 1]):
            j = indices[k]
            if j != i:
                _blk_mv_sub(acc, blocks[k], x, j, b, 1.0)
        _blk_solve(x, dinv[i], acc, i, b)


@nb.njit(**_jit)
def _ilu0_factor(indptr, indices, blocks, diag):
    """In-place block ILU(0). Returns -1 on success or the failing block row."""
    n = indptr.shape[0] - 1
    b = blocks.shape[1]
    marker = np.full(n, -1, dtype=np.int64)
    dinv = np.zeros((n, b, b))
    for i in range(n):
        for k in range(indptr[i], indptr[i + 1]):
            marker[indices[k]] = k
        for kk in range(indptr[i], indptr[i + 1]):
            kcol = indices[kk]
            if kcol >= i:
                break
            # L_ik = A_ik U_kk^{-1}
            lik = blocks[kk] @ dinv[kcol]
            blocks[kk][:, :] = lik
            for m in range(indptr[kcol], indptr[kcol + 1]):
                j = indices[m]
                if j > kcol and marker[j] >= 0:
                    blocks[marker[j]][:, :] -= lik @ blocks[m]
        dk = blocks[diag[i]].copy()
        cond = np.linalg.cond(dk)
        if not np.isfinite(cond) or cond > 1e14:
            return i, dinv
        dinv[i] = np.linalg.inv(dk)
        for k in range(indptr[i], indptr[i + 1]):
            marker[indices[k]] = -1
    return -1, dinv


@nb.njit(**_jit)
def _ilu0_apply(indptr, indices, lu, dinv, r):
    n = indptr.shape[0] - 1
    b = lu.shape[1]
    y = r.copy()
    acc = np.empty(b)
    for i in range(n):
        for k in range(indptr[i], indptr[i + 1]):
            j = indices[k]
            if j < i:
                for q in range(b):
                    acc[q] = 0.0
                _blk_mv_sub(acc, lu[k], y, j, b, 1.0)
                for q in range(b):
                    y[i * b + q] += acc[q]
    z = np.zeros_like(r)
    for i in range(n - 1, -1, -1):
        for q in range(b):
            acc[q] = y[i * b + q]
        for k in range(indptr[i], indptr[i + 1]):
            j = indices[k]
            if j > i:
                _blk_mv_sub(acc, lu[k], z, j, b, 1.0)
        _blk_solve(z, dinv[i], acc, i, b)
    return z


class Preconditioner:
    """Callable approximating A^{-1} r."""

    name = "identity"

    def __call__(self, r: np.ndarray) -> np.ndarray:
        return r.copy()


class BlockSSOR(Preconditioner):
    """M = (D + wL) D^{-1} (D + wU) / (w (2 - w)) with dense diagonal blocks."""

    name = "ssor"

    def __init__(self, a: BlockSparseMatrix, omega: float = 1.0):
        if not 0.0 < omega < 2.0:
            raise ValueError("relaxation must lie in (0, 2)")
        self.a = a
        self.omega = float(omega)
        self.dinv = _invert_diagonal(a)

    def __call__(self, r):
        a = self.a
        return _ssor_apply(a.indptr, a.indices, a.blocks, a.diagonal_index, self.dinv,
                           np.ascontiguousarray(r, dtype=float), self.omega)


class BlockILU0(Preconditioner):
    """Incomplete block LU on the sparsity pattern of A (no fill-in)."""

    name = "ilu0"

    def __init__(self, a: BlockSparseMatrix):
        self.a = a
        if np.any(a.diagonal_index < 0):
            raise FactorizationError(int(np.flatnonzero(a.diagonal_index < 0)[0]), "(missing) diagonal block")
        self.lu = a.blocks.copy()
        fail, self.dinv = _ilu0_factor(a.indptr, a.indices, self.lu, a.diagonal_index)
        if fail >= 0:
            raise FactorizationError(int(fail), "pivot block")

    def __call__(self, r):
        a = self.a
        return _ilu0_apply(a.indptr, a.indices, self.lu, self.dinv, np.ascontiguousarray(r, dtype=float))


def block_ssor(a: BlockSparseMatrix, omega: float = 1.0) -> BlockSSOR:
    return BlockSSOR(a, omega)


def block_ilu0(a: BlockSparseMatrix) -> BlockILU0:
    return BlockILU0(a)


def make_preconditioner(a: BlockSparseMatrix, name: str | None, omega: float = 1.0) -> Preconditioner:
    if name in (None, "none", "identity"):
        return Preconditioner()
    if name == "ssor":
        return BlockSSOR(a, omega)
    if name == "ilu0":
        return BlockILU0(a)
    raise ValueError(f"unknown preconditioner {name!r}")


def symmetric_gauss_seidel(a: BlockSparseMatrix, b: np.ndarray, x0=None, sweeps: int = 1) -> np.ndarray:
    """Forward then backward block Gauss-Seidel sweeps."""
    dinv = _invert_diagonal(a)
    x = np.zeros(a.shape[0]) if x0 is None else np.array(x0, dtype=float)
    rhs = np.ascontiguousarray(b, dtype=float)
    for _ in range(sweeps):
        _gs_sweep(a.indptr, a.indices, a.blocks, dinv, rhs, x, True)
        _gs_sweep(a.indptr, a.indices, a.blocks, dinv, rhs, x, False)
    return x
