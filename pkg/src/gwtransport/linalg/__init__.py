"""Block-sparse storage, Krylov solvers and block preconditioners."""

from .krylov import SOLVERS, IndefiniteMatrixError, SolveReport, bicgstab, cg, gmres
from .matrix import BlockSparseMatrix, is_block_lower_triangular
from .precond import (
    BlockILU0,
    BlockSSOR,
    FactorizationError,
    Preconditioner,
    block_ilu0,
    block_ssor,
    make_preconditioner,
    symmetric_gauss_seidel,
)


def solve(a, b, solver: str = "bicgstab", preconditioner: str | None = "ssor", reduction: float = 1e-8,
          max_iter: int = 1000, omega: float = 1.0, restart: int = 50):
    """Build the named preconditioner and run the named Krylov method."""
    prec = make_preconditioner(a, preconditioner, omega)
    if solver == "gmres":
        return gmres(a, b, prec, reduction, restart=restart, max_iter=max_iter)
    if solver not in SOLVERS:
        raise ValueError(f"unknown solver {solver!r}")
    return SOLVERS[solver](a, b, prec, reduction, max_iter=max_iter)


__all__ = [
    "BlockILU0", "BlockSSOR", "BlockSparseMatrix", "FactorizationError", "IndefiniteMatrixError",
    "Preconditioner", "SOLVERS", "SolveReport", "bicgstab", "block_ilu0", "block_ssor", "cg", "gmres",
    "is_block_lower_triangular", "make_preconditioner", "solve", "symmetric_gauss_seidel",
]
