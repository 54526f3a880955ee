"""Reference-element machinery: tensor Gauss rules, Q_k Lagrange bases, DOF layouts."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
import itertools

import numpy as np
from numpy.polynomial import legendre

from .mesh import Mesh, MeshError


class UnsupportedSpaceError(MeshError):
    pass


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray   # (n, d) on [0, 1]^d
    weights: np.ndarray  # (n,), sum to 1

    @property
    def size(self) -> int:
        return self.weights.shape[0]


@lru_cache(maxsize=None)
def _gauss_1d(order: int):
    x, w = legendre.leggauss(order)
    return 0.5 * (x + 1.0), 0.5 * w


def gauss_rule(order: int, d: int) -> QuadratureRule:
    """Tensor Gauss-Legendre rule with ``order`` points per axis on [0,1]^d.

    Exact for polynomials of per-axis degree <= 2*order - 1. ``d = 0`` gives the
    single-point rule used for face integrals in 1-D.
    """
    if order < 1:
        raise ValueError(f"quadrature order must be >= 1, got {order}")
    if d == 0:
        return QuadratureRule(np.zeros((1, 0)), np.ones(1))
    x, w = _gauss_1d(order)
    # x fastest
    pts = np.array([p[::-1] for p in itertools.product(x, repeat=d)])
    wts = np.array([np.prod(p) for p in itertools.product(w, repeat=d)])
    return QuadratureRule(pts, wts)


@lru_cache(maxsize=None)
def lagrange_nodes(k: int) -> np.ndarray:
    """1-D nodes on [0,1]: cell centre for k=0, Gauss-Lobatto otherwise."""
    if k == 0:
        return np.array([0.5])
    if k == 1:
        return np.array([0.0, 1.0])
    inner = legendre.Legendre.basis(k).deriv().roots()
    return 0.5 * (np.concatenate([[-1.0], np.sort(inner.real), [1.0]]) + 1.0)


@lru_cache(maxsize=None)
def _lagrange_coeffs(k: int) -> np.ndarray:
    z = lagrange_nodes(k)
    vander = np.vander(z, k + 1, increasing=True)
    return np.linalg.inv(vander)  # column i: monomial coefficients of L_i


def _eval_1d(k: int, t: np.ndarray, deriv: int) -> np.ndarray:
    c = _lagrange_coeffs(k)
    powers = np.arange(k + 1)
    out = np.zeros(t.shape + (k + 1,))
    for p in powers[deriv:]:
        fac = np.prod(np.arange(p - deriv + 1, p + 1)) if deriv else 1.0
        out += fac * (t[..., None] ** (p - deriv)) * c[p]
    return out


class QkBasis:
    """Tensor-product Lagrange basis of Q_k on [0,1]^d, first axis fastest."""

    def __init__(self, k: int, d: int):
        if k < 0:
            raise ValueError("degree must be >= 0")
        self.k = k
        self.d = d
        self.multi = np.array([m[::-1] for m in itertools.product(range(k + 1), repeat=d)], dtype=np.int64)

    @property
    def size(self) -> int:
        return (self.k + 1) ** self.d

    @property
    def nodes(self) -> np.ndarray:
        z = lagrange_nodes(self.k)
        return z[self.multi]

    def _tables(self, x, deriv):
        x = np.asarray(x, dtype=float)
        return [_eval_1d(self.k, x[..., a], deriv) for a in range(self.d)]

    def values(self, x) -> np.ndarray:
        tab = self._tables(x, 0)
        out = np.ones(np.asarray(x).shape[:-1] + (self.size,))
        for a in range(self.d):
            out *= tab[a][..., self.multi[:, a]]
        return out

    def gradients(self, x) -> np.ndarray:
        v = self._tables(x, 0)
        g = self._tables(x, 1)
        shape = np.asarray(x).shape[:-1] + (self.size, self.d)
        out = np.ones(shape)
        for a in range(self.d):
            for b in range(self.d):
                tab = g[b] if a == b else v[b]
                out[..., a] *= tab[..., self.multi[:, b]]
        return out

    def second_derivatives(self, x) -> np.ndarray:
        """Pure second derivatives d^2/dx_a^2, shape (..., size, d)."""
        v = self._tables(x, 0)
        h = self._tables(x, 2)
        shape = np.asarray(x).shape[:-1] + (self.size, self.d)
        out = np.ones(shape)
        for a in range(self.d):
            for b in range(self.d):
                tab = h[b] if a == b else v[b]
                out[..., a] *= tab[..., self.multi[:, b]]
        return out

    def evaluate(self, x):
        return self.values(x), self.gradients(x)

    def interpolate(self, func) -> np.ndarray:
        """Nodal coefficients of a function given on the reference cell."""
        return func(self.nodes)


def eval_basis(basis: QkBasis, x):
    return basis.evaluate(x)


@dataclass(frozen=True)
class DofLayout:
    space: str            # "dg", "cg" or "fv"
    degree: int
    cells: np.ndarray     # leaf ids in DOF (block) order
    block_size: int
    n_dofs: int
    cell_dofs: np.ndarray  # (n_cells, block_size) global dof of each local basis function
    vertex_shape: tuple | None = None

    @property
    def position(self) -> dict:
        return {int(c): i for i, c in enumerate(self.cells)}


def structured_vertex_dofs(mesh: Mesh, cells: np.ndarray) -> tuple[np.ndarray, tuple]:
    """Q1 vertex numbering (first axis fastest) of a uniform mesh."""
    grid = mesh.uniform_grid()
    shape = tuple(n + 1 for n in grid.cells_per_axis)
    offs = QkBasis(1, mesh.dim).multi
    corner = mesh.index[cells][:, None, :] + offs[None, :, :]
    dofs = np.zeros(corner.shape[:2], dtype=np.int64)
    stride = 1
    for a, n in enumerate(shape):
        dofs += corner[..., a] * stride
        stride *= n
    return dofs, shape


def build_layout(mesh: Mesh, space: str, k: int = 1, order=None) -> DofLayout:
    space = space.lower()
    cells = mesh.leaves if order is None else np.asarray(order, dtype=np.int64)
    if space == "dg":
        nloc = (k + 1) ** mesh.dim
        dofs = np.arange(cells.size * nloc, dtype=np.int64).reshape(cells.size, nloc)
        return DofLayout("dg", k, cells, nloc, cells.size * nloc, dofs)
    if space == "fv":
        return DofLayout("fv", 0, cells, 1, cells.size, np.arange(cells.size)[:, None])
    if space == "cg":
        if k != 1:
            raise UnsupportedSpaceError("only Q1 continuous elements are supported")
        if not mesh.is_uniform:
            raise UnsupportedSpaceError("continuous Q1 layout requires a mesh without hanging nodes")
        dofs, shape = structured_vertex_dofs(mesh, cells)
        return DofLayout("cg", 1, cells, 1, int(np.prod(shape)), dofs, shape)
    raise UnsupportedSpaceError(f"unknown space {space!r}")
