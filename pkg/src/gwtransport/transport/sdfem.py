"""Streamline-diffusion (SUPG) Q1 finite elements on a uniform mesh.

Works with the non-conservative form -div(D grad u) + q.grad u + mu' u = s,
where mu' = mu + div q, and imposes Dirichlet data strongly at the vertices of
the selected boundary faces.
"""

from __future__ import annotations

import time

import numpy as np

from ..fem_core import QkBasis, build_layout, gauss_rule
from ..flow import eliminate_dirichlet, scatter_q1, vertex_coordinates
from ..linalg import BlockSparseMatrix
from ..mesh import Mesh, face_diameter
from .coeffs import TransportCoeffs, evaluate, mesh_peclet, penalty_gamma, sdfem_delta
from .dg import TransportSystem, boundary_dirichlet_mask, classify_faces


def dirichlet_vertices(mesh: Mesh, layout, dmask) -> np.ndarray:
    """Vertices lying on any Dirichlet boundary face."""
    f = mesh.faces
    grid = mesh.uniform_grid()
    h = grid.spacing
    shape = layout.vertex_shape
    origin = np.asarray(grid.origin)
    nodes = []
    for i in np.flatnonzero(dmask):
        lo = np.rint((f.lower[i] - origin) / h).astype(np.int64)
        hi = np.rint((f.upper[i] - origin) / h).astype(np.int64)
        rng = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
        idx = np.stack([g.ravel() for g in np.meshgrid(*rng, indexing="ij")], axis=1)
        stride = np.cumprod((1,) + tuple(shape[:-1]))
        nodes.append(idx @ stride)
    return np.unique(np.concatenate(nodes)) if nodes else np.zeros(0, dtype=np.int64)


def assemble_sdfem(mesh: Mesh, velocity, coeffs: TransportCoeffs, dirichlet_faces=None, zeta: str = "upwind",
                   quad_order: int = 2, stabilize: bool = True) -> TransportSystem:
    t0 = time.perf_counter()
    layout = build_layout(mesh, "cg", 1)
    d = mesh.dim
    cells = layout.cells
    basis = QkBasis(1, d)
    rule = gauss_rule(quad_order, d)
    lower = mesh.cell_lower(cells)
    size = mesh.cell_size(cells)
    base = mesh.base_cell(cells)
    x = lower[:, None, :] + size[:, None, :] * rule.points[None]
    q = velocity(x, base[:, None])
    D = coeffs.dispersion(q)
    mu = evaluate(coeffs.reaction, x, base[:, None]) + velocity.divergence(base)[:, None]
    src = evaluate(coeffs.source, x, base[:, None])
    phi = basis.values(rule.points)
    grad = basis.gradients(rule.points)[None] / size[:, None, None, :]
    w = rule.weights[None, :] * mesh.cell_volume(cells)[:, None]

    h = mesh.cell_diameter(cells)
    qc = velocity(mesh.cell_center(cells), base)
    qnorm = np.linalg.norm(qc, axis=1)
    delta = sdfem_delta(h, qnorm, mesh_peclet(qnorm, h, coeffs), zeta) if stabilize else np.zeros(cells.size)

    qgrad = np.einsum("cqa,cqia->cqi", q, grad)                # q . grad phi_i
    test = phi[None] + delta[:, None, None] * qgrad            # v + delta q.grad v
    trial = qgrad + mu[:, :, None] * phi[None]                  # q.grad u + mu' u
    local = np.einsum("cqia,cqab,cqjb->cij", grad, D, grad * w[:, :, None, None])
    local += np.einsum("cq,cqi,cqj->cij", w, test, trial)
    load = np.einsum("cq,cqi->ci", w * src, test)

    n = layout.n_dofs
    a = scatter_q1(layout, local, n)
    rhs = np.bincount(layout.cell_dofs.ravel(), load.ravel(), minlength=n)

    f = mesh.faces
    classes, _ = classify_faces(mesh, velocity)
    dmask = boundary_dirichlet_mask(f, classes, dirichlet_faces)
    nodes = dirichlet_vertices(mesh, layout, dmask)
    xv = vertex_coordinates(mesh, layout.vertex_shape)
    ud = evaluate(coeffs.dirichlet, xv[nodes], mesh.grid.locate(xv[nodes]))
    a, rhs = eliminate_dirichlet(a, rhs, nodes, ud, symmetric=True)

    # penalty-like weight used by the estimator's boundary jump term
    dc = coeffs.dispersion(velocity(f.center, mesh.base_cell(f.minus)))
    nrm = f.normal
    gamma = penalty_gamma(10.0, np.einsum("fa,fab,fb->f", nrm, dc, nrm), 1, d, face_diameter(f))
    return TransportSystem(BlockSparseMatrix.from_scipy(a, 1), rhs, layout, mesh, "sdfem", 1, coeffs, velocity,
                           gamma, dmask, classes, time.perf_counter() - t0,
                           {"delta": delta, "dirichlet_nodes": nodes})
