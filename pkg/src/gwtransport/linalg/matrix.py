"""CSR-of-dense-blocks storage."""

from __future__ import annotations

import numpy as np
import scipy.io
import scipy.sparse as sp


class BlockSparseMatrix:
    """Square block-sparse matrix with constant block size.

    Storage is BSR: ``indptr``/``indices`` in block units and ``blocks`` of shape
    ``(nnzb, b, b)``. Column indices are sorted and unique within each row.
    """

    def __init__(self, indptr, indices, blocks):
        self.indptr = np.ascontiguousarray(indptr, dtype=np.int64)
        self.indices = np.ascontiguousarray(indices, dtype=np.int64)
        self.blocks = np.ascontiguousarray(blocks, dtype=np.float64)
        if self.blocks.ndim != 3 or self.blocks.shape[1] != self.blocks.shape[2]:
            raise ValueError("blocks must have shape (nnzb, b, b)")
        self.n = self.indptr.shape[0] - 1
        self._check()
        self._bsr = sp.bsr_matrix((self.blocks, self.indices, self.indptr), shape=self.shape)
        self._diag = None

    def _check(self):
        if self.indices.size < 2:
            return
        same_row = np.diff(self.block_rows()) == 0
        bad = same_row & (np.diff(self.indices) <= 0)
        if bad.any():
            row = int(self.block_rows()[np.flatnonzero(bad)[0]])
            raise ValueError(f"block row {row}: column indices must be sorted and unique")

    @property
    def block_size(self) -> int:
        return self.blocks.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        m = self.n * self.block_size
        return (m, m)

    @property
    def nnzb(self) -> int:
        return self.indices.shape[0]

    @classmethod
    def from_scipy(cls, mat, block_size: int) -> "BlockSparseMatrix":
        bsr = sp.bsr_matrix(mat, blocksize=(block_size, block_size))
        bsr.sum_duplicates()
        bsr.sort_indices()
        return cls(bsr.indptr, bsr.indices, bsr.data)

    @classmethod
    def from_dense(cls, a, block_size: int = 1) -> "BlockSparseMatrix":
        a = np.asarray(a, dtype=float)
        n = a.shape[0] // block_size
        blocks = a.reshape(n, block_size, n, block_size).transpose(0, 2, 1, 3)
        nz = np.array([[np.any(blocks[i, j] != 0) or i == j for j in range(n)] for i in range(n)])
        indptr = np.concatenate([[0], np.cumsum(nz.sum(axis=1))])
        rows, cols = np.nonzero(nz)
        return cls(indptr, cols, blocks[rows, cols])

    @classmethod
    def from_triplets(cls, rows, cols, blocks, n_block_rows: int) -> "BlockSparseMatrix":
        """Sum duplicate (row, col) blocks."""
        b = blocks.shape[1]
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        key = rows * n_block_rows + cols
        order = np.argsort(key, kind="stable")
        key = key[order]
        starts = np.flatnonzero(np.concatenate([[True], key[1:] != key[:-1]]))
        uniq = key[starts]
        flat = np.asarray(blocks, dtype=float)[order].reshape(key.size, b * b)
        summed = np.add.reduceat(flat, starts, axis=0).reshape(-1, b, b)
        urows = uniq // n_block_rows
        indptr = np.zeros(n_block_rows + 1, dtype=np.int64)
        np.add.at(indptr, urows + 1, 1)
        return cls(np.cumsum(indptr), uniq % n_block_rows, summed)

    def to_scipy(self) -> sp.csr_matrix:
        return self._bsr.tocsr()

    def toarray(self) -> np.ndarray:
        return self._bsr.toarray()

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self._bsr @ x

    def __matmul__(self, x):
        return self.matvec(x)

    @property
    def diagonal_index(self) -> np.ndarray:
        """Position of the diagonal block of every row in ``blocks`` (-1 if absent)."""
        if self._diag is None:
            diag = np.full(self.n, -1, dtype=np.int64)
            rows = np.repeat(np.arange(self.n), np.diff(self.indptr))
            hit = np.flatnonzero(self.indices == rows)
            diag[rows[hit]] = hit
            self._diag = diag
        return self._diag

    def block_rows(self) -> np.ndarray:
        return np.repeat(np.arange(self.n), np.diff(self.indptr))

    def permuted(self, order) -> "BlockSparseMatrix":
        """Symmetric block permutation: new row r is old row ``order[r]``."""
        order = np.asarray(order, dtype=np.int64)
        pos = np.empty_like(order)
        pos[order] = np.arange(order.size)
        rows = pos[self.block_rows()]
        cols = pos[self.indices]
        return BlockSparseMatrix.from_triplets(rows, cols, self.blocks, self.n)

    def write_matrix_market(self, path) -> None:
        scipy.io.mmwrite(str(path), self.to_scipy())


def is_block_lower_triangular(a: BlockSparseMatrix, permutation=None, tol: float = 0.0) -> bool:
    """True iff every block with an entry above ``tol`` lies on/below the diagonal.

    ``permutation[r]`` is the original block row placed at position ``r``.
    """
    if permutation is None:
        pos = np.arange(a.n)
    else:
        permutation = np.asarray(permutation, dtype=np.int64)
        if np.unique(permutation).size != a.n or permutation.size != a.n:
            raise ValueError("permutation must be a bijection on block rows")
        pos = np.empty(a.n, dtype=np.int64)
        pos[permutation] = np.arange(a.n)
    rows = pos[a.block_rows()]
    cols = pos[a.indices]
    nonzero = np.abs(a.blocks).reshape(a.nnzb, -1).max(axis=1) > tol
    return not np.any(nonzero & (cols > rows))
