"""Axis-parallel hierarchical quadrilateral (hexahedral) meshes.

A :class:`Mesh` stores every cell ever created by refinement in flat arrays.
Cells are addressed by a stable integer id; a cell on level ``l`` with integer
index ``I`` covers ``origin + [I, I+1) * H / 2**l`` where ``H`` is the level-0
cell size. Level-0 ids are the lexicographic (x fastest) structured ordering.

Faces are rebuilt from the leaf set. Hanging faces are stored as the fine-side
sub-faces, so every face has a single well-defined geometry.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
import itertools

import numpy as np


class MeshError(ValueError):
    """Invalid mesh construction or adaptation request."""


@dataclass(frozen=True)
class GridSpec:
    extents: tuple[float, ...]
    cells_per_axis: tuple[int, ...]
    origin: tuple[float, ...] | None = None

    def __post_init__(self):
        ext = tuple(float(e) for e in self.extents)
        cells = tuple(int(n) for n in self.cells_per_axis)
        if len(ext) != len(cells) or len(ext) not in (1, 2, 3):
            raise MeshError("extents and cells_per_axis must have equal length 1..3")
        if any(e <= 0 for e in ext):
            raise MeshError(f"extents must be positive, got {ext}")
        if any(n < 1 for n in cells):
            raise MeshError(f"cell counts must be >= 1, got {cells}")
        origin = (0.0,) * len(ext) if self.origin is None else tuple(float(o) for o in self.origin)
        object.__setattr__(self, "extents", ext)
        object.__setattr__(self, "cells_per_axis", cells)
        object.__setattr__(self, "origin", origin)

    @property
    def dim(self) -> int:
        return len(self.extents)

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.cells_per_axis))

    @property
    def spacing(self) -> np.ndarray:
        return np.asarray(self.extents) / np.asarray(self.cells_per_axis)

    def refined(self, times: int = 1) -> "GridSpec":
        """Structured grid with every axis subdivided ``2**times`` times."""
        return GridSpec(self.extents, tuple(n * 2**times for n in self.cells_per_axis), self.origin)

    def locate(self, x: np.ndarray) -> np.ndarray:
        """Structured cell id containing each point (points on faces go to the upper cell, clipped)."""
        x = np.atleast_2d(x)
        idx = np.floor((x - np.asarray(self.origin)) / self.spacing).astype(np.int64)
        idx = np.clip(idx, 0, np.asarray(self.cells_per_axis) - 1)
        return ravel_index(idx, self.cells_per_axis)


def ravel_index(idx: np.ndarray, shape) -> np.ndarray:
    """Lexicographic id with the first axis running fastest."""
    out = np.zeros(idx.shape[0], dtype=np.int64)
    stride = 1
    for a, n in enumerate(shape):
        out += idx[:, a] * stride
        stride *= int(n)
    return out


def _child_offsets(d: int) -> np.ndarray:
    # x fastest, matching the tensor basis ordering
    return np.array([c[::-1] for c in itertools.product((0, 1), repeat=d)], dtype=np.int64)


@dataclass(frozen=True)
class Faces:
    """Oriented face set of the leaf mesh (interior faces first, then boundary)."""

    minus: np.ndarray       # t^- cell id
    plus: np.ndarray        # t^+ cell id, -1 on the boundary
    axis: np.ndarray        # normal axis
    sign: np.ndarray        # n_f = sign * e_axis (+1 for interior faces)
    lower: np.ndarray       # face box (n_faces, d); lower[axis] == upper[axis]
    upper: np.ndarray
    h_minus: np.ndarray     # diameter of the full face of t^-
    h_plus: np.ndarray      # diameter of the full face of t^+ (== h_minus on boundary)
    n_interior: int

    def __len__(self):
        return self.minus.shape[0]

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @property
    def normal(self) -> np.ndarray:
        d = self.lower.shape[1]
        n = np.zeros((len(self), d))
        n[np.arange(len(self)), self.axis] = self.sign
        return n

    @property
    def measure(self) -> np.ndarray:
        ext = self.upper - self.lower
        ext[np.arange(len(self)), self.axis] = 1.0
        return np.prod(ext, axis=1)

    @property
    def is_boundary(self) -> np.ndarray:
        return self.plus < 0

    @property
    def diameter(self) -> np.ndarray:
        return face_diameter(self)

    @property
    def boundary_side(self) -> np.ndarray:
        """2*axis + (0 for the lower, 1 for the upper domain side); -1 on interior faces."""
        side = 2 * self.axis + (self.sign > 0)
        return np.where(self.is_boundary, side, -1)


def face_diameter(faces: Faces) -> np.ndarray:
    """Penalty length h_f = min(h_f^-, h_f^+); boundary faces use h_f^-."""
    return np.minimum(faces.h_minus, faces.h_plus)


class Mesh:
    """Hierarchical axis-parallel mesh with 1-irregular hanging nodes.

    Instances are treated as immutable; :meth:`adapt` returns a new mesh.
    """

    def __init__(self, grid: GridSpec, level, index, parent, first_child, alive, log=None):
        self.grid = grid
        self.level = level
        self.index = index
        self.parent = parent
        self.first_child = first_child
        self.alive = alive
        self.adapt_log = log or {}
        for arr in (level, index, parent, first_child, alive):
            arr.flags.writeable = False

    # construction -----------------------------------------------------------
    @classmethod
    def structured(cls, spec: GridSpec) -> "Mesh":
        d = spec.dim
        n = spec.n_cells
        grids = np.meshgrid(*[np.arange(m) for m in spec.cells_per_axis], indexing="ij")
        # ravel in Fortran order so that axis 0 runs fastest
        index = np.stack([g.ravel(order="F") for g in grids], axis=1).astype(np.int64)
        return cls(
            spec,
            level=np.zeros(n, dtype=np.int64),
            index=index.reshape(n, d),
            parent=np.full(n, -1, dtype=np.int64),
            first_child=np.full(n, -1, dtype=np.int64),
            alive=np.ones(n, dtype=bool),
        )

    # basic geometry ---------------------------------------------------------
    @property
    def dim(self) -> int:
        return self.grid.dim

    @property
    def n_children(self) -> int:
        return 2**self.dim

    @cached_property
    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.alive & (self.first_child < 0))

    @property
    def n_leaves(self) -> int:
        return self.leaves.shape[0]

    @property
    def max_level(self) -> int:
        return int(self.level[self.leaves].max())

    def cell_size(self, ids) -> np.ndarray:
        ids = np.asarray(ids)
        return self.grid.spacing[None, :] / (2.0 ** self.level[ids])[:, None]

    def cell_lower(self, ids) -> np.ndarray:
        ids = np.asarray(ids)
        return np.asarray(self.grid.origin)[None, :] + self.index[ids] * self.cell_size(ids)

    def cell_center(self, ids) -> np.ndarray:
        return self.cell_lower(ids) + 0.5 * self.cell_size(ids)

    def cell_volume(self, ids) -> np.ndarray:
        return np.prod(self.cell_size(ids), axis=1)

    def cell_diameter(self, ids) -> np.ndarray:
        return np.linalg.norm(self.cell_size(ids), axis=1)

    def base_cell(self, ids) -> np.ndarray:
        """Level-0 ancestor id of each cell."""
        ids = np.asarray(ids)
        idx = self.index[ids] >> self.level[ids][:, None]
        return ravel_index(idx, self.grid.cells_per_axis)

    @property
    def is_uniform(self) -> bool:
        """All leaves on one level (no hanging nodes)."""
        lv = self.level[self.leaves]
        return bool(lv.min() == lv.max())

    def uniform_grid(self) -> GridSpec:
        if not self.is_uniform:
            raise MeshError("mesh has hanging nodes")
        return self.grid.refined(self.max_level)

    # lookup -----------------------------------------------------------------
    @cached_property
    def _bits(self) -> int:
        return (62 - 6) // self.dim

    def _keys(self, level, index) -> np.ndarray:
        key = np.asarray(level, dtype=np.int64) << (self._bits * self.dim)
        for a in range(self.dim):
            key = key | (index[:, a].astype(np.int64) << (self._bits * a))
        return key

    @cached_property
    def _lookup(self):
        ids = np.flatnonzero(self.alive)
        keys = self._keys(self.level[ids], self.index[ids])
        order = np.argsort(keys)
        return keys[order], ids[order]

    def find(self, level, index) -> np.ndarray:
        """Id of the alive cell with the given level/index, or -1."""
        keys, ids = self._lookup
        q = self._keys(level, index)
        pos = np.searchsorted(keys, q)
        pos = np.minimum(pos, keys.shape[0] - 1)
        return np.where(keys[pos] == q, ids[pos], -1)

    def _level_extent(self, level) -> np.ndarray:
        return np.asarray(self.grid.cells_per_axis)[None, :] << np.asarray(level)[:, None]

    def locate(self, x: np.ndarray) -> np.ndarray:
        """Leaf cell containing each point."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        cell = self.grid.locate(x)
        rel = (x - np.asarray(self.grid.origin)) / self.grid.spacing
        while True:
            fc = self.first_child[cell]
            inner = fc >= 0
            if not inner.any():
                return cell
            lv = self.level[cell[inner]] + 1
            fine = np.floor(rel[inner] * (2.0 ** lv)[:, None]).astype(np.int64)
            fine = np.clip(fine, 2 * self.index[cell[inner]], 2 * self.index[cell[inner]] + 1)
            off = fine - 2 * self.index[cell[inner]]
            local = ravel_index(off, (2,) * self.dim)
            cell = cell.copy()
            cell[inner] = fc[inner] + local

    # faces ------------------------------------------------------------------
    @cached_property
    def faces(self) -> Faces:
        d = self.dim
        leaves = self.leaves
        lv = self.level[leaves]
        idx = self.index[leaves]
        lower = self.cell_lower(leaves)
        size = self.cell_size(leaves)
        extent = self._level_extent(lv)
        is_leaf = np.zeros(self.level.shape[0], dtype=bool)
        is_leaf[leaves] = True

        parts = {"interior": [], "boundary": []}
        for a in range(d):
            tang = np.ones(d, dtype=bool)
            tang[a] = False
            fdiam = np.linalg.norm(size[:, tang], axis=1) if d > 1 else np.zeros(len(leaves))
            for s in (-1, 1):
                nb_idx = idx.copy()
                nb_idx[:, a] += s
                outside = (nb_idx[:, a] < 0) | (nb_idx[:, a] >= extent[:, a])
                f_lower = lower.copy()
                f_upper = lower + size
                pos = lower[:, a] + (size[:, a] if s > 0 else 0.0)
                f_lower[:, a] = pos
                f_upper[:, a] = pos

                b = np.flatnonzero(outside)
                parts["boundary"].append((leaves[b], np.full(b.size, -1), a, s, f_lower[b], f_upper[b], fdiam[b], fdiam[b]))

                inside = np.flatnonzero(~outside)
                nb = self.find(lv[inside], nb_idx[inside])
                # same-level leaf neighbour: emit once, from the lower side
                same = inside[(nb >= 0) & is_leaf[np.maximum(nb, 0)]]
                same_nb = nb[(nb >= 0) & is_leaf[np.maximum(nb, 0)]]
                if s > 0 and same.size:
                    parts["interior"].append((leaves[same], same_nb, a, 1, f_lower[same], f_upper[same], fdiam[same], fdiam[same]))
                # coarser neighbour: emit from the fine side
                coarse = inside[nb < 0]
                if coarse.size:
                    cidx = nb_idx[coarse] >> 1
                    cnb = self.find(lv[coarse] - 1, cidx)
                    if np.any(cnb < 0) or not np.all(is_leaf[cnb]):
                        raise MeshError("mesh is not 1-irregular")
                    csize = self.cell_size(cnb)
                    cdiam = np.linalg.norm(csize[:, tang], axis=1) if d > 1 else np.zeros(coarse.size)
                    if s > 0:
                        parts["interior"].append((leaves[coarse], cnb, a, 1, f_lower[coarse], f_upper[coarse], fdiam[coarse], cdiam))
                    else:
                        parts["interior"].append((cnb, leaves[coarse], a, 1, f_lower[coarse], f_upper[coarse], cdiam, fdiam[coarse]))

        def stack(items):
            if not items:
                return (np.zeros(0, np.int64),) * 4 + (np.zeros((0, d)),) * 2 + (np.zeros(0),) * 2
            minus = np.concatenate([it[0] for it in items])
            plus = np.concatenate([it[1] for it in items])
            axis = np.concatenate([np.full(len(it[0]), it[2]) for it in items])
            sign = np.concatenate([np.full(len(it[0]), it[3]) for it in items])
            return (minus, plus, axis, sign,
                    np.concatenate([it[4] for it in items]), np.concatenate([it[5] for it in items]),
                    np.concatenate([it[6] for it in items]), np.concatenate([it[7] for it in items]))

        inter = stack(parts["interior"])
        bnd = stack(parts["boundary"])
        # deterministic face order: by minus cell, then axis, then sign
        def sort(arrs):
            order = np.lexsort((arrs[3], arrs[2], arrs[0]))
            return tuple(x[order] for x in arrs)

        inter, bnd = sort(inter), sort(bnd)
        cat = [np.concatenate([i, b]) for i, b in zip(inter, bnd)]
        return Faces(
            minus=cat[0].astype(np.int64), plus=cat[1].astype(np.int64),
            axis=cat[2].astype(np.int64), sign=cat[3].astype(np.int64),
            lower=cat[4], upper=cat[5], h_minus=cat[6], h_plus=cat[7],
            n_interior=inter[0].shape[0],
        )

    # neighbour helpers used by adapt ------------------------------------------
    def _coarser_neighbours(self, cells) -> np.ndarray:
        """Leaf neighbours one level coarser than ``cells`` (across any face)."""
        cells = np.asarray(cells, dtype=np.int64)
        cells = cells[self.level[cells] > 0]
        if cells.size == 0:
            return np.zeros(0, dtype=np.int64)
        lv = self.level[cells]
        idx = self.index[cells]
        extent = self._level_extent(lv)
        out = []
        for a in range(self.dim):
            for s in (-1, 1):
                nb_idx = idx.copy()
                nb_idx[:, a] += s
                ok = (nb_idx[:, a] >= 0) & (nb_idx[:, a] < extent[:, a])
                nb = self.find(lv[ok], nb_idx[ok])
                missing = nb < 0
                if missing.any():
                    c = self.find(lv[ok][missing] - 1, nb_idx[ok][missing] >> 1)
                    out.append(c[c >= 0])
        return np.unique(np.concatenate(out)) if out else np.zeros(0, dtype=np.int64)

    # adaptation ---------------------------------------------------------------
    def adapt(self, refine=(), coarsen=()) -> "Mesh":
        """Refine/coarsen leaf cells, enforcing 1-irregularity by closure.

        Cells marked for refinement whose refinement would create a level jump of
        two force their coarser neighbours into the refine set. A sibling group is
        merged only if every sibling is marked and the merge keeps the mesh
        1-irregular. Surviving cells keep their ids; new children get fresh ids.
        """
        leaf_mask = np.zeros(self.level.shape[0], dtype=bool)
        leaf_mask[self.leaves] = True
        refine = np.unique(np.asarray(refine, dtype=np.int64))
        coarsen = np.unique(np.asarray(coarsen, dtype=np.int64))
        if refine.size and not leaf_mask[refine].all():
            raise MeshError("refine marks must reference leaf cells")
        if coarsen.size and not leaf_mask[coarsen].all():
            raise MeshError("coarsen marks must reference leaf cells")

        requested = refine
        marked = refine
        while True:
            extra = np.setdiff1d(self._coarser_neighbours(marked), marked)
            if extra.size == 0:
                break
            marked = np.union1d(marked, extra)
        promoted = np.setdiff1d(marked, requested)
        coarsen = np.setdiff1d(coarsen, marked)

        nc = self.n_children
        offs = _child_offsets(self.dim)
        n_old = self.level.shape[0]
        n_new = marked.size * nc
        level = np.concatenate([self.level, np.repeat(self.level[marked] + 1, nc)])
        index = np.concatenate([self.index, (2 * self.index[marked])[:, None, :].repeat(nc, 1).reshape(-1, self.dim)
                                + np.tile(offs, (marked.size, 1))]) if n_new else self.index.copy()
        parent = np.concatenate([self.parent, np.repeat(marked, nc)])
        first_child = np.concatenate([self.first_child, np.full(n_new, -1, dtype=np.int64)])
        first_child[marked] = n_old + nc * np.arange(marked.size)
        alive = np.concatenate([self.alive, np.ones(n_new, dtype=bool)])
        refined = Mesh(self.grid, level, index, parent, first_child.copy(), alive.copy())

        merged, rejected = self._coarsen_groups(refined, coarsen)
        if merged:
            first_child = refined.first_child.copy()
            alive = refined.alive.copy()
            for p in merged:
                alive[first_child[p]:first_child[p] + nc] = False
                first_child[p] = -1
            refined = Mesh(self.grid, refined.level.copy(), refined.index.copy(), refined.parent.copy(),
                           first_child, alive)
        refined.adapt_log = {
            "requested": requested,
            "promoted": promoted,
            "refined": marked,
            "merged_parents": np.asarray(merged, dtype=np.int64),
            "coarsen_rejected": np.asarray(rejected, dtype=np.int64),
        }
        return refined

    def _coarsen_groups(self, mesh: "Mesh", coarsen: np.ndarray):
        if coarsen.size == 0:
            return [], []
        nc = self.n_children
        parents = np.unique(mesh.parent[coarsen])
        parents = parents[parents >= 0]
        cset = set(coarsen.tolist())
        merged, rejected = [], []
        for p in parents:
            kids = range(mesh.first_child[p], mesh.first_child[p] + nc)
            if not all(k in cset and mesh.first_child[k] < 0 for k in kids):
                continue
            if self._merge_keeps_irregularity(mesh, p):
                merged.append(int(p))
            else:
                rejected.append(int(p))
        return merged, rejected

    @staticmethod
    def _merge_keeps_irregularity(mesh: "Mesh", p: int) -> bool:
        d = mesh.dim
        lv = mesh.level[p]
        extent = mesh._level_extent(np.array([lv]))[0]
        for a in range(d):
            for s in (-1, 1):
                nb_idx = mesh.index[p].copy()
                nb_idx[a] += s
                if nb_idx[a] < 0 or nb_idx[a] >= extent[a]:
                    continue
                nb = mesh.find(np.array([lv]), nb_idx[None, :])[0]
                if nb < 0 or mesh.first_child[nb] < 0:
                    continue
                # children of nb touching p must be leaves
                fc = mesh.first_child[nb]
                for k in range(fc, fc + mesh.n_children):
                    touching = (mesh.index[k][a] - 2 * nb_idx[a]) == (0 if s > 0 else 1)
                    if touching and mesh.first_child[k] >= 0:
                        return False
        return True

    def level_gaps(self) -> np.ndarray:
        f = self.faces
        inner = slice(0, f.n_interior)
        return np.abs(self.level[f.minus[inner]] - self.level[f.plus[inner]])


def build_structured(spec: GridSpec) -> Mesh:
    return Mesh.structured(spec)


def adapt(mesh: Mesh, refine=(), coarsen=()) -> Mesh:
    return mesh.adapt(refine, coarsen)


def mesh_size(mesh: Mesh) -> float:
    """Largest leaf-cell diameter."""
    return float(mesh.cell_diameter(mesh.leaves).max())


@dataclass
class RefinementMarks:
    refine_set: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    coarsen_set: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        self.refine_set = np.unique(np.asarray(self.refine_set, dtype=np.int64))
        self.coarsen_set = np.setdiff1d(np.asarray(self.coarsen_set, dtype=np.int64), self.refine_set)
