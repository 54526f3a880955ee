"""Symmetric weighted interior penalty DG(k) with upwind convection.

The conservative form div(-D grad u + q u) + mu u = s is discretised on the leaf
cells of a (possibly hanging-node) mesh. Dirichlet data are imposed weakly
(Nitsche) on the selected boundary faces; the convective inflow enters through
the upwind flux on every boundary face.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import time

import numpy as np

from ..fem_core import DofLayout, QkBasis, build_layout, gauss_rule
from ..linalg import BlockSparseMatrix
from ..mesh import Mesh, face_diameter
from .coeffs import INFLOW, TransportCoeffs, classify_boundary, evaluate, omega_weights, penalty_gamma


class AssemblyError(ValueError):
    pass


@dataclass
class TransportSystem:
    matrix: BlockSparseMatrix
    rhs: np.ndarray
    layout: DofLayout
    mesh: Mesh
    method: str
    degree: int
    coeffs: TransportCoeffs
    velocity: object
    face_gamma: np.ndarray          # penalty per face (0 where unused)
    dirichlet_face: np.ndarray      # bool per face
    boundary_class: np.ndarray      # per face: -1 inflow, 0, +1 outflow (0 on interior faces)
    assembly_time: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def n_dofs(self) -> int:
        return self.layout.n_dofs


def face_quadrature(faces, idx, rule) -> tuple[np.ndarray, np.ndarray]:
    """Physical quadrature points (nf, nq, d) and weights (nf, nq) on faces ``idx``."""
    d = faces.lower.shape[1]
    lo = faces.lower[idx]
    hi = faces.upper[idx]
    axis = faces.axis[idx]
    ref = np.zeros((idx.size, rule.size, d))
    for a in range(d):
        sel = axis == a
        if not sel.any():
            continue
        tang = [b for b in range(d) if b != a]
        for j, b in enumerate(tang):
            ref[sel, :, b] = rule.points[None, :, j]
    x = lo[:, None, :] + (hi - lo)[:, None, :] * ref
    w = rule.weights[None, :] * faces.measure[idx][:, None]
    return x, w


def _side_basis(mesh, basis, cells, x):
    lower = mesh.cell_lower(cells)
    size = mesh.cell_size(cells)
    ref = np.clip((x - lower[:, None, :]) / size[:, None, :], 0.0, 1.0)
    return basis.values(ref), basis.gradients(ref) / size[:, None, None, :]


def boundary_dirichlet_mask(faces, classes, rule) -> np.ndarray:
    """Boolean per face from a rule: 'inflow', 'all', an iterable of sides or a mask."""
    nb = faces.is_boundary
    if rule is None or (isinstance(rule, str) and rule == "inflow"):
        return nb & (classes == INFLOW)
    if isinstance(rule, str) and rule == "all":
        return nb.copy()
    rule = np.asarray(rule)
    if rule.dtype == bool:
        if rule.shape != nb.shape:
            raise AssemblyError("Dirichlet face mask must have one entry per face")
        return rule & nb
    return nb & np.isin(faces.boundary_side, rule)


def classify_faces(mesh: Mesh, velocity) -> tuple[np.ndarray, np.ndarray]:
    """Boundary class per face from q.n at the face centre, plus q.n itself."""
    f = mesh.faces
    x = f.center
    q = velocity(x, mesh.base_cell(f.minus))
    qn = np.einsum("fa,fa->f", q, f.normal)
    classes = np.zeros(len(f), dtype=np.int64)
    b = f.is_boundary
    scale = float(np.linalg.norm(q[b], axis=1).max()) if b.any() else 0.0
    classes[b] = classify_boundary(qn[b], scale)
    return classes, qn


def assemble_dg(mesh: Mesh, k: int, velocity, coeffs: TransportCoeffs, order=None, dirichlet_faces=None,
                c_gamma: float = 10.0, quad_order: int | None = None) -> TransportSystem:
    """Assemble the SWIP-DG(k) system in the cell order ``order`` (default: leaf ids)."""
    t0 = time.perf_counter()
    if k < 1:
        raise AssemblyError("DG degree must be >= 1")
    d = mesh.dim
    layout = build_layout(mesh, "dg", k, order)
    cells = layout.cells
    if np.unique(cells).size != mesh.n_leaves or not np.array_equal(np.sort(cells), mesh.leaves):
        raise AssemblyError("cell order must be a permutation of the leaf cells")
    pos = np.full(mesh.level.shape[0], -1, dtype=np.int64)
    pos[cells] = np.arange(cells.size)
    basis = QkBasis(k, d)
    nq = quad_order or k + 1
    rule = gauss_rule(nq, d)
    frule = gauss_rule(nq, d - 1)

    rows, cols, blocks = [], [], []
    rhs = np.zeros((cells.size, basis.size))

    # cells
    lower = mesh.cell_lower(cells)
    size = mesh.cell_size(cells)
    base = mesh.base_cell(cells)
    x = lower[:, None, :] + size[:, None, :] * rule.points[None]
    q = velocity(x, base[:, None])
    D = coeffs.dispersion(q)
    mu = evaluate(coeffs.reaction, x, base[:, None])
    src = evaluate(coeffs.source, x, base[:, None])
    phi = basis.values(rule.points)
    grad = basis.gradients(rule.points)[None] / size[:, None, None, :]
    w = rule.weights[None, :] * mesh.cell_volume(cells)[:, None]
    dgrad = np.einsum("cqab,cqjb->cqja", D, grad)
    a_cell = np.einsum("cq,cqia,cqja->cij", w, grad, dgrad)
    a_cell -= np.einsum("cq,qj,cqa,cqia->cij", w, phi, q, grad)
    a_cell += np.einsum("cq,qi,qj->cij", w * mu, phi, phi)
    rhs += np.einsum("cq,qi->ci", w * src, phi)
    rows.append(np.arange(cells.size))
    cols.append(np.arange(cells.size))
    blocks.append(a_cell)

    f = mesh.faces
    classes, _ = classify_faces(mesh, velocity)
    dmask = boundary_dirichlet_mask(f, classes, dirichlet_faces)
    hf = face_diameter(f)
    gamma = np.zeros(len(f))
    normal = f.normal
    centers = f.center

    # interior faces
    ni = f.n_interior
    if ni:
        idx = np.arange(ni)
        cm, cp = f.minus[idx], f.plus[idx]
        bm, bp = mesh.base_cell(cm), mesh.base_cell(cp)
        xf, wf = face_quadrature(f, idx, frule)
        n = normal[idx]
        qm = velocity(xf, bm[:, None])
        qp = velocity(xf, bp[:, None])
        qn = np.einsum("fqa,fa->fq", qm, n)
        Dm = coeffs.dispersion(qm)
        Dp = coeffs.dispersion(qp)
        dcm = coeffs.dispersion(velocity(centers[idx], bm))
        dcp = coeffs.dispersion(velocity(centers[idx], bp))
        delta_m = np.einsum("fa,fab,fb->f", n, dcm, n)
        delta_p = np.einsum("fa,fab,fb->f", n, dcp, n)
        om, op, deff = omega_weights(delta_m, delta_p)
        gamma[idx] = penalty_gamma(c_gamma, deff, k, d, hf[idx])
        vm, gm = _side_basis(mesh, basis, cm, xf)
        vp, gp = _side_basis(mesh, basis, cp, xf)
        fm = om[:, None, None] * np.einsum("fa,fqab,fqib->fqi", n, Dm, gm)
        fp = op[:, None, None] * np.einsum("fa,fqab,fqib->fqi", n, Dp, gp)
        up_m = (qn >= 0).astype(float)
        sides = {0: (vm, fm, 1.0, up_m, cm), 1: (vp, fp, -1.0, 1.0 - up_m, cp)}
        g = gamma[idx][:, None] * wf
        for s, (vs, fs, ss, _, cs) in sides.items():
            for r, (vr, fr, sr, upr, cr) in sides.items():
                blk = ss * sr * np.einsum("fq,fqi,fqj->fij", g, vs, vr)
                blk -= ss * np.einsum("fq,fqi,fqj->fij", wf, vs, fr)
                blk -= sr * np.einsum("fq,fqj,fqi->fij", wf, vr, fs)
                blk += ss * np.einsum("fq,fqi,fqj->fij", wf * qn * upr, vs, vr)
                rows.append(pos[cs])
                cols.append(pos[cr])
                blocks.append(blk)

    # boundary faces
    idx = np.arange(ni, len(f))
    if idx.size:
        cm = f.minus[idx]
        bm = mesh.base_cell(cm)
        xf, wf = face_quadrature(f, idx, frule)
        n = normal[idx]
        qb = velocity(xf, bm[:, None])
        qn = np.einsum("fqa,fa->fq", qb, n)
        ud = evaluate(coeffs.dirichlet, xf, bm[:, None])
        vm, gm = _side_basis(mesh, basis, cm, xf)
        blk = np.einsum("fq,fqi,fqj->fij", wf * np.maximum(qn, 0.0), vm, vm)
        bvec = np.einsum("fq,fqi->fi", -wf * np.minimum(qn, 0.0) * ud, vm)
        dir_local = dmask[idx]
        if dir_local.any():
            j = np.flatnonzero(dir_local)
            Db = coeffs.dispersion(qb[j])
            dc = coeffs.dispersion(velocity(centers[idx[j]], bm[j]))
            deff = np.einsum("fa,fab,fb->f", n[j], dc, n[j])
            gamma[idx[j]] = penalty_gamma(c_gamma, deff, k, d, hf[idx[j]])
            flux = np.einsum("fa,fqab,fqib->fqi", n[j], Db, gm[j])
            gw = gamma[idx[j]][:, None] * wf[j]
            blk[j] += np.einsum("fq,fqi,fqj->fij", gw, vm[j], vm[j])
            blk[j] -= np.einsum("fq,fqi,fqj->fij", wf[j], vm[j], flux)
            blk[j] -= np.einsum("fq,fqj,fqi->fij", wf[j], vm[j], flux)
            bvec[j] += np.einsum("fq,fqi->fi", gw * ud[j], vm[j])
            bvec[j] -= np.einsum("fq,fqi->fi", wf[j] * ud[j], flux)
        rows.append(pos[cm])
        cols.append(pos[cm])
        blocks.append(blk)
        np.add.at(rhs, pos[cm], bvec)

    matrix = BlockSparseMatrix.from_triplets(np.concatenate(rows), np.concatenate(cols),
                                             np.concatenate(blocks), cells.size)
    return TransportSystem(matrix, rhs.ravel(), layout, mesh, "dg", k, coeffs, velocity, gamma, dmask,
                           classes, time.perf_counter() - t0, {"c_gamma": c_gamma})
