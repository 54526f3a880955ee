"""Legacy ASCII VTK writers for leaf meshes, flow fields and transport solutions.

Every leaf cell is written with its own corner points (VTK_PIXEL / VTK_VOXEL),
so discontinuous corner values survive and hanging nodes need no special care.
"""

from __future__ import annotations

import itertools

import numpy as np

_CELL_TYPE = {2: 8, 3: 11}      # pixel, voxel: corners in lexicographic order


def _corner_ref(d: int) -> np.ndarray:
    # x fastest, matching the pixel/voxel vertex order
    return np.array([c[::-1] for c in itertools.product((0.0, 1.0), repeat=d)])


def _fmt(a) -> str:
    return "\n".join(" ".join(f"{v:.12g}" for v in row) for row in np.atleast_2d(a))


def write_vtk(path, mesh, cells=None, point_data: dict | None = None, cell_data: dict | None = None,
              title: str = "gwtransport") -> None:
    """Write leaf cells with optional per-corner ``point_data`` (n_cells, 2^d) or
    (n_cells, 2^d, d) and ``cell_data`` (n_cells,) or (n_cells, d)."""
    d = mesh.dim
    if d not in _CELL_TYPE:
        raise ValueError("VTK output supports 2-D and 3-D meshes")
    cells = mesh.leaves if cells is None else np.asarray(cells)
    nc = cells.size
    ref = _corner_ref(d)
    nv = ref.shape[0]
    pts = mesh.cell_lower(cells)[:, None, :] + mesh.cell_size(cells)[:, None, :] * ref[None]
    pts = pts.reshape(-1, d)
    if d == 2:
        pts = np.column_stack([pts, np.zeros(pts.shape[0])])
    conn = np.column_stack([np.full(nc, nv), np.arange(nc * nv).reshape(nc, nv)])
    with open(path, "w") as fh:
        fh.write(f"# vtk DataFile Version 3.0\n{title}\nASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {pts.shape[0]} double\n{_fmt(pts)}\n")
        fh.write(f"CELLS {nc} {nc * (nv + 1)}\n")
        fh.write("\n".join(" ".join(map(str, row)) for row in conn) + "\n")
        fh.write(f"CELL_TYPES {nc}\n" + "\n".join([str(_CELL_TYPE[d])] * nc) + "\n")
        if cell_data:
            fh.write(f"CELL_DATA {nc}\n")
            for name, v in cell_data.items():
                _write_array(fh, name, np.asarray(v, dtype=float), nc, d)
        if point_data:
            fh.write(f"POINT_DATA {nc * nv}\n")
            for name, v in point_data.items():
                v = np.asarray(v, dtype=float)
                v = v.reshape(nc * nv, *v.shape[2:])
                _write_array(fh, name, v, nc * nv, d)


def _write_array(fh, name, v, n, d):
    if v.shape[0] != n:
        raise ValueError(f"{name}: expected {n} entries, got {v.shape[0]}")
    if v.ndim == 1:
        fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
        fh.write("\n".join(f"{x:.12g}" for x in v) + "\n")
    else:
        if d == 2:
            v = np.column_stack([v, np.zeros(n)])
        fh.write(f"VECTORS {name} double\n{_fmt(v)}\n")


def write_field(path, field, name: str = "u", extra_cell_data: dict | None = None) -> None:
    """Transport solution: corner values as point data plus the cell mean."""
    mesh = field.mesh
    cells = field.layout.cells
    corners = field.values_at(_corner_ref(mesh.dim))
    cell_data = {f"{name}_mean": corners.mean(axis=1)}
    cell_data.update(extra_cell_data or {})
    write_vtk(path, mesh, cells, point_data={name: corners}, cell_data=cell_data)


def write_flow(path, mesh, head, velocity=None, conductivity=None) -> None:
    """Level-0 flow output: head, Darcy velocity at the cell centre, K and Y."""
    cells = mesh.leaves
    data = {"phi": head.values[mesh.base_cell(cells)]}
    if velocity is not None:
        data["q"] = velocity(mesh.cell_center(cells), mesh.base_cell(cells))
    if conductivity is not None:
        base = mesh.base_cell(cells)
        data["K"] = np.asarray(conductivity.K)[base]
        data["Y"] = np.asarray(conductivity.Y)[base]
    write_vtk(path, mesh, cells, cell_data=data)
