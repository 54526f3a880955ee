"""A transport problem bundled with everything needed to discretise it on any mesh."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from ..flow import downwind_order
from ..mesh import Mesh
from .coeffs import TransportCoeffs
from .dg import assemble_dg
from .sdfem import assemble_sdfem

ORDERINGS = ("geometric", "lexicographic", "random", "downwind")


@dataclass
class TransportProblem:
    mesh: Mesh                      # level-0 mesh
    velocity: Any
    coeffs: TransportCoeffs
    dirichlet_faces: Any = None     # 'inflow' (default), 'all', sides or mask
    head: Any = None                # head source for downwind ordering
    u_hat: float = 1.0              # upper end of the physical range
    c_gamma: float = 10.0
    excluded: tuple | None = None   # (centre, radius) of a ball left out of error norms
    name: str = ""


def cell_order(mesh: Mesh, ordering: str = "geometric", head=None, seed: int = 0) -> np.ndarray:
    """Leaf ids in the requested numbering."""
    leaves = mesh.leaves
    if ordering == "geometric":
        return leaves.copy()
    if ordering == "lexicographic":
        x = mesh.cell_center(leaves)
        keys = tuple(x[:, a] for a in range(mesh.dim))  # last key (highest axis) is primary
        return leaves[np.lexsort((leaves,) + keys)]
    if ordering == "random":
        rng = np.random.Generator(np.random.Philox(seed))
        return leaves[rng.permutation(leaves.size)]
    if ordering == "downwind":
        if head is None:
            raise ValueError("downwind ordering needs a head field")
        return downwind_order(mesh, head)
    raise ValueError(f"unknown ordering {ordering!r}; choose from {ORDERINGS}")


def discretize(problem: TransportProblem, mesh: Mesh, method: str = "dg", degree: int = 1,
               ordering: str = "geometric", seed: int = 0, **kw):
    """Assemble ``method`` ('dg' or 'sdfem') on ``mesh``."""
    if method == "sdfem":
        return assemble_sdfem(mesh, problem.velocity, problem.coeffs, problem.dirichlet_faces, **kw)
    if method != "dg":
        raise ValueError(f"unknown method {method!r}")
    order = cell_order(mesh, ordering, problem.head, seed)
    return assemble_dg(mesh, degree, problem.velocity, problem.coeffs, order, problem.dirichlet_faces,
                       problem.c_gamma, **kw)
