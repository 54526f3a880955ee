"""Steady Darcy flow on the level-0 mesh.

Two discretisations are provided: cell-centred finite volumes with two-point
fluxes (followed by an RT0 reconstruction of the velocity) and continuous Q1
elements with a pointwise Darcy velocity. Both solve

    div(-K grad phi) = w_inj - w_ext

with Dirichlet heads on selected domain sides and no-flow elsewhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fem_core import QkBasis, build_layout
from .field import ConductivityField, well_rates
from .linalg import BlockSparseMatrix, solve as krylov_solve
from .mesh import GridSpec, Mesh, MeshError


class SingularSystemError(ValueError):
    pass


def harmonic_average(k_minus, k_plus):
    k_minus = np.asarray(k_minus, dtype=float)
    k_plus = np.asarray(k_plus, dtype=float)
    if np.any(k_minus <= 0) or np.any(k_plus <= 0):
        raise ValueError("conductivities must be positive")
    return 2.0 * k_minus * k_plus / (k_minus + k_plus)


def _dirichlet_value(spec, x):
    return np.asarray(spec(x), dtype=float) if callable(spec) else np.full(len(x), float(spec))


def _require_level0(mesh: Mesh):
    if mesh.max_level != 0:
        raise MeshError("flow is solved on the level-0 mesh only")


def _conductivity(mesh, K):
    k = K.K if isinstance(K, ConductivityField) else np.broadcast_to(np.asarray(K, dtype=float), (mesh.grid.n_cells,))
    return np.asarray(k, dtype=float)


# CCFV -------------------------------------------------------------------------

@dataclass
class CCFVSystem:
    matrix: BlockSparseMatrix
    rhs: np.ndarray
    trans: np.ndarray           # per face transmissibility (0 on no-flow faces)
    dirichlet: np.ndarray       # per face head value (nan where not Dirichlet)


def assemble_ccfv(mesh: Mesh, K, wells=(), dirichlet: dict | None = None, shift: float = 0.0) -> CCFVSystem:
    """Two-point flux system.

    ``dirichlet`` maps a boundary side ``2*axis + (0 lower | 1 upper)`` to a head
    value or a callable of the face centre. Other sides are no-flow. The system
    is written for ``phi - shift``, which avoids cancellation for large heads.
    """
    _require_level0(mesh)
    dirichlet = dirichlet or {}
    if not dirichlet:
        raise SingularSystemError("no Dirichlet boundary: the head is determined only up to a constant")
    k = _conductivity(mesh, K)
    f = mesh.faces
    n = mesh.grid.n_cells
    xc = mesh.cell_center(np.arange(n))
    area = f.measure
    ni = f.n_interior
    im, ip = f.minus[:ni], f.plus[:ni]
    trans = np.zeros(len(f))
    trans[:ni] = harmonic_average(k[im], k[ip]) * area[:ni] / np.linalg.norm(xc[ip] - xc[im], axis=1)

    head = np.full(len(f), np.nan)
    side = f.boundary_side
    centers = f.center
    for s, spec in dirichlet.items():
        sel = np.flatnonzero(side == s)
        if sel.size == 0:
            raise ValueError(f"boundary side {s} does not exist")
        head[sel] = _dirichlet_value(spec, centers[sel])
        dist = np.linalg.norm(centers[sel] - xc[f.minus[sel]], axis=1)
        trans[sel] = k[f.minus[sel]] * area[sel] / dist

    bd = np.flatnonzero(~np.isnan(head))
    rows = np.concatenate([im, ip, im, ip, f.minus[bd]])
    cols = np.concatenate([im, ip, ip, im, f.minus[bd]])
    t = trans[:ni]
    vals = np.concatenate([t, t, -t, -t, trans[bd]])
    a = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    w_inj, w_ext = well_rates(mesh.grid, wells)
    rhs = (w_inj - w_ext) * mesh.cell_volume(np.arange(n))
    np.add.at(rhs, f.minus[bd], trans[bd] * (head[bd] - shift))
    return CCFVSystem(BlockSparseMatrix.from_scipy(a, 1), rhs, trans, head)


@dataclass
class FVHead:
    mesh: Mesh
    values: np.ndarray          # per level-0 cell
    face_flux: np.ndarray       # q . n_f per face (m/s)
    report: object = None

    @property
    def space(self):
        return "fv"


def _linear_solve(matrix: BlockSparseMatrix, rhs, solver: str, reduction: float):
    if solver == "direct":
        lu = spla.splu(matrix.to_scipy().tocsc())
        x = lu.solve(rhs)
        for _ in range(2):  # iterative refinement keeps the mass balance at round-off
            x += lu.solve(rhs - matrix.matvec(x))
        return x, None
    return krylov_solve(matrix, rhs, solver, "ssor", reduction, max_iter=20000)


def ccfv_face_flux(mesh: Mesh, system: CCFVSystem, phi: np.ndarray, shift: float = 0.0) -> np.ndarray:
    """Normal flux per unit area; ``phi`` may be given relative to ``shift``."""
    f = mesh.faces
    ni = f.n_interior
    flux = np.zeros(len(f))
    flux[:ni] = system.trans[:ni] * (phi[f.minus[:ni]] - phi[f.plus[:ni]])
    bd = np.flatnonzero(~np.isnan(system.dirichlet))
    flux[bd] = system.trans[bd] * (phi[f.minus[bd]] - (system.dirichlet[bd] - shift))
    return flux / f.measure


def solve_ccfv(mesh: Mesh, K, wells=(), dirichlet=None, solver: str = "direct", reduction: float = 1e-12) -> FVHead:
    """Assemble and solve; fluxes are per unit face area.

    The default sparse direct solve keeps the discrete mass balance at round-off
    level, which the RT0 divergence check relies on.
    """
    probe = assemble_ccfv(mesh, K, wells, dirichlet)
    shift = float(np.nanmean(probe.dirichlet))
    system = assemble_ccfv(mesh, K, wells, dirichlet, shift)
    rel, rep = _linear_solve(system.matrix, system.rhs, solver, reduction)
    return FVHead(mesh, rel + shift, ccfv_face_flux(mesh, system, rel, shift), rep)


# RT0 --------------------------------------------------------------------------

class Velocity:
    """Velocity field evaluated at points, optionally with known level-0 cells."""

    def __call__(self, x, base_cells=None) -> np.ndarray:
        raise NotImplementedError

    def divergence(self, base_cells) -> np.ndarray:
        raise NotImplementedError


class ConstantVelocity(Velocity):
    def __init__(self, q):
        self.q = np.asarray(q, dtype=float)

    def __call__(self, x, base_cells=None):
        x = np.asarray(x)
        return np.broadcast_to(self.q, x.shape).copy()

    def divergence(self, base_cells):
        return np.zeros(np.shape(base_cells))

    def head(self, x, base_cells=None):
        """Potential with -grad = q (unit conductivity)."""
        return -np.asarray(x) @ self.q


@dataclass
class RT0Velocity(Velocity):
    """q_i(x) = a[c, i] + b[c, i] * x_i on level-0 cell c."""

    grid: GridSpec
    a: np.ndarray
    b: np.ndarray

    def __call__(self, x, base_cells=None):
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1, x.shape[-1])
        c = self.grid.locate(flat) if base_cells is None else np.broadcast_to(base_cells, x.shape[:-1]).ravel()
        return (self.a[c] + self.b[c] * flat).reshape(x.shape)

    def divergence(self, base_cells):
        return self.b[np.asarray(base_cells)].sum(axis=-1)


def rt0_reconstruct(mesh: Mesh, face_flux) -> RT0Velocity:
    """Per cell and axis, interpolate the two opposite face fluxes linearly."""
    _require_level0(mesh)
    f = mesh.faces
    n, d = mesh.grid.n_cells, mesh.dim
    lo = np.zeros((n, d))
    hi = np.zeros((n, d))
    comp = np.asarray(face_flux, dtype=float) * f.sign  # component along +e_axis
    upper_of_minus = f.sign > 0
    hi[f.minus[upper_of_minus], f.axis[upper_of_minus]] = comp[upper_of_minus]
    lo[f.minus[~upper_of_minus], f.axis[~upper_of_minus]] = comp[~upper_of_minus]
    inner = np.arange(f.n_interior)
    lo[f.plus[inner], f.axis[inner]] = comp[inner]
    cells = np.arange(n)
    lower = mesh.cell_lower(cells)
    h = mesh.cell_size(cells)
    b = (hi - lo) / h
    a = lo - b * lower
    return RT0Velocity(mesh.grid, a, b)


# Q1 FEM flow ------------------------------------------------------------------

def q1_reference_matrices(h, d):
    """Q1 stiffness (per unit conductivity) and mass matrices on a box of sides h."""
    from .fem_core import gauss_rule
    basis = QkBasis(1, d)
    rule = gauss_rule(2, d)
    val = basis.values(rule.points)
    grad = basis.gradients(rule.points) / np.asarray(h)
    vol = float(np.prod(h))
    stiff = np.einsum("q,qia,qja->ij", rule.weights, grad, grad) * vol
    mass = np.einsum("q,qi,qj->ij", rule.weights, val, val) * vol
    return stiff, mass


def boundary_vertex_mask(shape, sides) -> np.ndarray:
    """Vertices (first axis fastest) lying on the given domain sides."""
    idx = np.stack([g.ravel(order="F") for g in np.meshgrid(*[np.arange(s) for s in shape], indexing="ij")], axis=1)
    mask = np.zeros(idx.shape[0], dtype=bool)
    for s in sides:
        a, up = divmod(int(s), 2)
        mask |= idx[:, a] == (shape[a] - 1 if up else 0)
    return mask


def vertex_coordinates(mesh: Mesh, shape) -> np.ndarray:
    grid = mesh.uniform_grid()
    idx = np.stack([g.ravel(order="F") for g in np.meshgrid(*[np.arange(s) for s in shape], indexing="ij")], axis=1)
    return np.asarray(grid.origin) + idx * grid.spacing


def scatter_q1(layout, local: np.ndarray, n: int) -> sp.csr_matrix:
    """Assemble cell matrices (n_cells, 2^d, 2^d) into a global CSR matrix."""
    dofs = layout.cell_dofs
    rows = np.repeat(dofs, dofs.shape[1], axis=1).ravel()
    cols = np.tile(dofs, (1, dofs.shape[1])).ravel()
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def eliminate_dirichlet(a: sp.csr_matrix, rhs, nodes, values, symmetric=True):
    """Strong Dirichlet rows; with ``symmetric`` the columns are moved to the rhs too."""
    rhs = np.asarray(rhs, dtype=float).copy()
    g = np.zeros(a.shape[0])
    g[nodes] = values
    keep = np.ones(a.shape[0])
    keep[nodes] = 0.0
    if symmetric:
        rhs -= a @ g
    d = sp.diags(keep)
    a = (d @ a @ d) if symmetric else (d @ a)
    a = (a + sp.diags(1.0 - keep)).tocsr()
    rhs[nodes] = values
    return a, rhs


@dataclass
class FEMFlowSystem:
    matrix: BlockSparseMatrix
    rhs: np.ndarray
    layout: object


def assemble_fem_flow(mesh: Mesh, K, wells=(), dirichlet: dict | None = None) -> FEMFlowSystem:
    _require_level0(mesh)
    dirichlet = dirichlet or {}
    if not dirichlet:
        raise SingularSystemError("no Dirichlet boundary: the head is determined only up to a constant")
    k = _conductivity(mesh, K)
    layout = build_layout(mesh, "cg", 1)
    n = layout.n_dofs
    h = mesh.grid.spacing
    stiff, mass = q1_reference_matrices(h, mesh.dim)
    cells = layout.cells
    a = scatter_q1(layout, k[cells][:, None, None] * stiff, n)
    w_inj, w_ext = well_rates(mesh.grid, wells)
    load = (w_inj - w_ext)[cells][:, None] * mass.sum(axis=1)[None, :]
    rhs = np.bincount(layout.cell_dofs.ravel(), load.ravel(), minlength=n)
    xv = vertex_coordinates(mesh, layout.vertex_shape)
    nodes, vals = [], []
    for s, spec in sorted(dirichlet.items()):
        sel = np.flatnonzero(boundary_vertex_mask(layout.vertex_shape, [s]))
        nodes.append(sel)
        vals.append(_dirichlet_value(spec, xv[sel]))
    nodes = np.concatenate(nodes)
    vals = np.concatenate(vals)
    # corners shared by two sides: the later side wins, consistently
    nodes, last = np.unique(nodes[::-1], return_index=True)
    vals = vals[::-1][last]
    a, rhs = eliminate_dirichlet(a, rhs, nodes, vals, symmetric=True)
    return FEMFlowSystem(BlockSparseMatrix.from_scipy(a, 1), rhs, layout)


@dataclass
class Q1Head:
    mesh: Mesh
    values: np.ndarray          # nodal
    layout: object
    report: object = None

    @property
    def space(self):
        return "cg"


def solve_fem_flow(mesh: Mesh, K, wells=(), dirichlet=None, solver: str = "cg",
                   reduction: float = 1e-12) -> Q1Head:
    system = assemble_fem_flow(mesh, K, wells, dirichlet)
    phi, rep = _linear_solve(system.matrix, system.rhs, solver, reduction)
    return Q1Head(mesh, phi, system.layout, rep)


class DarcyQ1Velocity(Velocity):
    """q = -K_t grad(phi_h) evaluated directly from the bilinear head."""

    def __init__(self, head: Q1Head, K):
        self.mesh = head.mesh
        self.grid = head.mesh.grid
        self.k = _conductivity(head.mesh, K)
        self.coef = np.empty(head.layout.cell_dofs.shape)
        self.coef[head.layout.cells] = head.values[head.layout.cell_dofs]
        self.basis = QkBasis(1, self.mesh.dim)

    def __call__(self, x, base_cells=None):
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1, x.shape[-1])
        c = self.grid.locate(flat) if base_cells is None else np.broadcast_to(base_cells, x.shape[:-1]).ravel()
        lower = self.mesh.cell_lower(c)
        h = self.grid.spacing
        grad = self.basis.gradients((flat - lower) / h) / h
        g = np.einsum("pi,pia->pa", self.coef[c], grad)
        return (-self.k[c][:, None] * g).reshape(x.shape)

    def divergence(self, base_cells):
        # bilinear heads have vanishing pure second derivatives
        return np.zeros(np.shape(base_cells))


def darcy_direct(head: Q1Head, K) -> DarcyQ1Velocity:
    return DarcyQ1Velocity(head, K)


# local quadratic head -----------------------------------------------------------

@dataclass
class LocalHead:
    """phi~ = sum_j A_j (x_j - c_j)^2 + B_j (x_j - c_j) + phi_c on each level-0 cell."""

    grid: GridSpec
    center: np.ndarray
    A: np.ndarray
    B: np.ndarray
    phi_c: np.ndarray

    def __call__(self, x, base_cells=None):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        c = self.grid.locate(x) if base_cells is None else np.asarray(base_cells)
        r = x - self.center[c]
        return (self.A[c] * r**2 + self.B[c] * r).sum(axis=1) + self.phi_c[c]

    def coefficients(self, cell: int):
        """(a, b, c0) of the expanded form sum a_j x_j^2 + b_j x_j + c0."""
        A, B, c = self.A[cell], self.B[cell], self.center[cell]
        a = A
        b = B - 2.0 * A * c
        c0 = self.phi_c[cell] + float(np.sum(A * c**2 - B * c))
        return a, b, c0


def reconstruct_local_head(mesh: Mesh, velocity: RT0Velocity, K, phi_center) -> LocalHead:
    """Quadratic head per level-0 cell matching phi at the centre and
    -K d(phi~)/dx_j = q_j at the 2d face centres."""
    _require_level0(mesh)
    k = _conductivity(mesh, K)
    if np.any(k <= 0):
        raise ValueError("conductivity must be positive")
    cells = np.arange(mesh.grid.n_cells)
    c = mesh.cell_center(cells)
    A = -velocity.b / (2.0 * k[:, None])
    B = -(velocity.a + velocity.b * c) / k[:, None]
    return LocalHead(mesh.grid, c, A, B, np.asarray(phi_center, dtype=float).copy())


def leaf_head(mesh: Mesh, head) -> np.ndarray:
    """Head value at every leaf centre, in ``mesh.leaves`` order."""
    leaves = mesh.leaves
    if isinstance(head, np.ndarray):
        if head.shape[0] == leaves.size:
            return head
        if head.shape[0] == mesh.grid.n_cells:
            return head[mesh.base_cell(leaves)]
        raise ValueError("head array size matches neither the leaves nor the level-0 cells")
    if isinstance(head, FVHead):
        return head.values[mesh.base_cell(leaves)]
    x = mesh.cell_center(leaves)
    if isinstance(head, (LocalHead,)):
        return head(x, mesh.base_cell(leaves))
    if hasattr(head, "head"):
        return head.head(x)
    return np.asarray(head(x), dtype=float)


def downwind_order(mesh: Mesh, head) -> np.ndarray:
    """Leaf ids sorted by decreasing head; ties by ascending id."""
    values = leaf_head(mesh, head)
    leaves = mesh.leaves
    return leaves[np.lexsort((leaves, -values))]
