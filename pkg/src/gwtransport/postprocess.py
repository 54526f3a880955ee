"""Diffusive L2 projection of DG solutions onto continuous Q1, and range metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fem_core import QkBasis, UnsupportedSpaceError, build_layout, gauss_rule
from .flow import q1_reference_matrices, scatter_q1
from .linalg import BlockSparseMatrix, solve as krylov_solve
from .transport.solve import DiscreteField, overshoot_metric


@dataclass
class ProjectionConfig:
    eps_h: float | None = None      # default: h^2 / 2 with h the cell diagonal
    reduction: float = 1e-8
    solver: str = "cg"
    preconditioner: str = "ssor"

    def __post_init__(self):
        if self.eps_h is not None and self.eps_h < 0:
            raise ValueError("eps_h must be >= 0")


def diffusive_l2_projection(u_dg: DiscreteField, config: ProjectionConfig | None = None):
    """Solve (eps_h grad u, grad v) + (u, v) = (u_dg, v) in Q1 without boundary conditions."""
    config = config or ProjectionConfig()
    mesh = u_dg.mesh
    if not mesh.is_uniform:
        raise UnsupportedSpaceError("the projection needs a structured mesh without hanging nodes")
    layout = build_layout(mesh, "cg", 1, u_dg.layout.cells)
    h = mesh.uniform_grid().spacing
    eps_h = 0.5 * float(np.sum(h**2)) if config.eps_h is None else config.eps_h
    stiff, mass = q1_reference_matrices(h, mesh.dim)
    n = layout.n_dofs
    ncell = layout.cells.size
    a = scatter_q1(layout, np.broadcast_to(eps_h * stiff + mass, (ncell,) + mass.shape), n)

    rule = gauss_rule(max(u_dg.degree, 1) + 1, mesh.dim)
    vals = u_dg.values_at(rule.points)                    # layout cells coincide
    phi = QkBasis(1, mesh.dim).values(rule.points)
    vol = float(np.prod(h))
    load = np.einsum("q,cq,qi->ci", rule.weights * vol, vals, phi)
    rhs = np.bincount(layout.cell_dofs.ravel(), load.ravel(), minlength=n)
    x, rep = krylov_solve(BlockSparseMatrix.from_scipy(a, 1), rhs, config.solver, config.preconditioner,
                          config.reduction, max_iter=5000)
    return DiscreteField(mesh, layout, x), rep


def range_metrics(field: DiscreteField) -> tuple[float, float]:
    return field.extrema()


def compare_ranges(fields: dict, u_hat: float) -> list[dict]:
    """One row per labelled field: u_min, u_max and the overshoot metric."""
    rows = []
    for label, f in fields.items():
        lo, hi = f.extrema()
        rows.append({"field": label, "dofs": f.layout.n_dofs, "u_min": lo, "u_max": hi,
                     "overshoot": overshoot_metric(lo, hi, u_hat)})
    return rows


def sample_line(field: DiscreteField, start, end, n: int = 201) -> tuple[np.ndarray, np.ndarray]:
    """Values along the segment start -> end; returns (arc length, value)."""
    start = np.asarray(start, dtype=float)
    end = np.asarray(end, dtype=float)
    t = np.linspace(0.0, 1.0, n)
    x = start[None, :] + t[:, None] * (end - start)[None, :]
    return t * np.linalg.norm(end - start), field.evaluate(x)


def level_crossing(s: np.ndarray, v: np.ndarray, level: float = 0.5) -> float:
    """First arc-length position where the sampled profile crosses ``level`` (linear interpolation)."""
    d = v - level
    idx = np.flatnonzero(np.sign(d[:-1]) != np.sign(d[1:]))
    if idx.size == 0:
        return float("nan")
    i = idx[0]
    if d[i + 1] == d[i]:
        return float(s[i])
    return float(s[i] - d[i] * (s[i + 1] - s[i]) / (d[i + 1] - d[i]))
