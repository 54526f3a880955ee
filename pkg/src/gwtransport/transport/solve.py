"""Discrete transport fields and the linear solve."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..fem_core import DofLayout, QkBasis, gauss_rule, lagrange_nodes
from ..linalg import solve as krylov_solve
from ..mesh import Mesh


@dataclass
class DiscreteField:
    """Coefficient vector tagged with its space ('dg', 'cg' or 'fv')."""

    mesh: Mesh
    layout: DofLayout
    coef: np.ndarray

    @property
    def space(self) -> str:
        return self.layout.space

    @property
    def degree(self) -> int:
        return self.layout.degree

    @property
    def basis(self) -> QkBasis:
        return QkBasis(self.degree, self.mesh.dim)

    def cell_coefficients(self) -> np.ndarray:
        """(n_cells, n_local) local coefficients in layout cell order."""
        return self.coef[self.layout.cell_dofs]

    def values_at(self, ref) -> np.ndarray:
        """Values at reference points ``ref`` (np, d) of every cell -> (n_cells, np)."""
        return self.cell_coefficients() @ self.basis.values(np.asarray(ref, dtype=float)).T

    def gradients_at(self, ref) -> np.ndarray:
        """Physical gradients (n_cells, np, d)."""
        g = self.basis.gradients(np.asarray(ref, dtype=float))
        size = self.mesh.cell_size(self.layout.cells)
        return np.einsum("ci,pia->cpa", self.cell_coefficients(), g) / size[:, None, :]

    def evaluate(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        leaf = self.mesh.locate(x)
        pos = np.full(self.mesh.level.shape[0], -1, dtype=np.int64)
        pos[self.layout.cells] = np.arange(self.layout.cells.size)
        p = pos[leaf]
        ref = np.clip((x - self.mesh.cell_lower(leaf)) / self.mesh.cell_size(leaf), 0.0, 1.0)
        vals = self.basis.values(ref)
        return np.einsum("pi,pi->p", self.cell_coefficients()[p], vals)

    def sample_points(self) -> np.ndarray:
        """Reference points for range metrics: Lagrange nodes (corners for k <= 1) and Gauss points."""
        d = self.mesh.dim
        k = max(self.degree, 1)
        z = lagrange_nodes(k)
        nodes = np.array(np.meshgrid(*[z] * d, indexing="ij")).reshape(d, -1).T
        return np.concatenate([nodes, gauss_rule(k + 1, d).points])

    def extrema(self) -> tuple[float, float]:
        if self.space == "cg":
            return float(self.coef.min()), float(self.coef.max())
        v = self.values_at(self.sample_points())
        return float(v.min()), float(v.max())

    def in_leaf_order(self) -> np.ndarray:
        """Local coefficients reordered to ascending leaf ids (independent of the cell permutation)."""
        order = np.argsort(self.layout.cells)
        return self.cell_coefficients()[order]


def solve_transport(system, solver: str = "bicgstab", preconditioner: str | None = "ilu0",
                    reduction: float = 1e-8, max_iter: int = 5000, omega: float = 1.0):
    """Solve an assembled system; returns (DiscreteField, SolveReport)."""
    x, rep = krylov_solve(system.matrix, system.rhs, solver, preconditioner, reduction,
                          max_iter=max_iter, omega=omega)
    return DiscreteField(system.mesh, system.layout, x), rep


def range_metrics(field: DiscreteField) -> tuple[float, float]:
    return field.extrema()


def overshoot_metric(u_min: float, u_max: float, u_hat: float) -> float:
    """Relative violation of the physical range [0, u_hat]."""
    if u_hat <= 0:
        raise ValueError("u_hat must be positive")
    return max(max(0.0, -u_min) / u_hat, max(0.0, u_max - u_hat) / u_hat)
