"""Gaussian log-conductivity fields and the simple well model.

Fields are sampled at level-0 cell centres by circulant embedding. The random
stream comes from numpy's Philox generator (counter based, 64-bit key), so a
seed gives the same field on every platform numpy supports.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
import scipy.fft

from .mesh import GridSpec, ravel_index


@dataclass(frozen=True)
class GeoStatParams:
    mean: float = -6.0
    variance: float = 1.0
    corr_lengths: tuple[float, ...] = (10.0, 10.0)
    seed: int = 0

    def __post_init__(self):
        if self.variance < 0:
            raise ValueError("variance must be >= 0")
        if any(l <= 0 for l in self.corr_lengths):
            raise ValueError("correlation lengths must be positive")


@dataclass
class SampleReport:
    embedding_shape: tuple
    negative_mass: float   # sum of clipped negative eigenvalues / sum of |eigenvalues|
    min_eigenvalue: float


@dataclass(frozen=True)
class WellSpec:
    """Axis-aligned well region. ``rate`` is the total volumetric rate in m^3/s."""

    kind: str
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    rate: float
    concentration: float = 0.0
    duration: float = 0.0

    def __post_init__(self):
        if self.kind not in ("injection", "extraction"):
            raise ValueError(f"unknown well kind {self.kind!r}")
        if self.rate <= 0:
            raise ValueError("well rate must be positive")
        if any(u < l for l, u in zip(self.lower, self.upper)):
            raise ValueError("well box has upper < lower")

    @classmethod
    def point(cls, kind, x, rate, concentration=0.0, duration=0.0):
        x = tuple(float(v) for v in x)
        return cls(kind, x, x, rate, concentration, duration)

    def cells(self, grid: GridSpec) -> np.ndarray:
        """Level-0 cells whose closure meets the well region."""
        o = np.asarray(grid.origin)
        h = grid.spacing
        lo = (np.asarray(self.lower) - o) / h
        hi = (np.asarray(self.upper) - o) / h
        ranges = []
        for a, n in enumerate(grid.cells_per_axis):
            if lo[a] > n or hi[a] < 0:
                raise ValueError("well region does not intersect the domain")
            i0 = int(np.floor(lo[a]))
            i1 = int(np.ceil(hi[a])) - 1 if hi[a] > lo[a] else i0
            ranges.append(np.arange(max(i0, 0), min(max(i1, i0), n - 1) + 1))
        grid_idx = np.stack([g.ravel() for g in np.meshgrid(*ranges, indexing="ij")], axis=1)
        return np.unique(ravel_index(grid_idx, grid.cells_per_axis))

    def unit_rate(self, grid: GridSpec) -> float:
        """Rate per unit volume, spread evenly over the well cells."""
        vol = self.cells(grid).size * float(np.prod(grid.spacing))
        return self.rate / vol


@dataclass
class ConductivityField:
    grid: GridSpec
    Y: np.ndarray
    K: np.ndarray
    well_cells: np.ndarray = dc_field(default_factory=lambda: np.zeros(0, dtype=np.int64))


def _embedding_size(n: int, dx: float, ell: float) -> int:
    # periodic extension long enough that the covariance has decayed (exp(-36) at 6 ell)
    m = max(2 * (n - 1), n + int(np.ceil(6.0 * ell / dx)))
    return scipy.fft.next_fast_len(max(m, 2))


def sample_gaussian_field(params: GeoStatParams, grid: GridSpec, return_report: bool = False):
    """Sample Y at cell centres (structured order, x fastest).

    Covariance C(r) = sigma^2 exp(-sum (r_i / l_i)^2). Negative embedding
    eigenvalues are clipped to zero; their relative mass is reported.
    """
    d = grid.dim
    n = grid.cells_per_axis
    if len(params.corr_lengths) != d:
        raise ValueError("need one correlation length per axis")
    if params.variance == 0:
        y = np.full(grid.n_cells, float(params.mean))
        rep = SampleReport((), 0.0, 0.0)
        return (y, rep) if return_report else y

    dx = grid.spacing
    m = [_embedding_size(n[a], dx[a], params.corr_lengths[a]) for a in range(d)]
    lags = []
    for a in range(d):
        k = np.arange(m[a])
        lags.append(np.minimum(k, m[a] - k) * dx[a] / params.corr_lengths[a])
    grids = np.meshgrid(*lags, indexing="ij")
    cov = params.variance * np.exp(-sum(g**2 for g in grids))
    lam = scipy.fft.fftn(cov).real
    neg = lam < 0
    rep = SampleReport(tuple(m), float(-lam[neg].sum() / np.abs(lam).sum()), float(lam.min()))
    lam[neg] = 0.0

    rng = np.random.Generator(np.random.Philox(params.seed))
    xi = rng.standard_normal(tuple(m)) + 1j * rng.standard_normal(tuple(m))
    z = scipy.fft.fftn(np.sqrt(lam / np.prod(m)) * xi).real
    z = z[tuple(slice(0, k) for k in n)]
    y = params.mean + z.ravel(order="F")
    return (y, rep) if return_report else y


def build_conductivity(Y, grid: GridSpec, wells=()) -> ConductivityField:
    Y = np.asarray(Y, dtype=float)
    if Y.shape != (grid.n_cells,):
        raise ValueError(f"Y must have one value per level-0 cell ({grid.n_cells})")
    K = np.exp(Y)
    cells = [w.cells(grid) for w in wells]
    wc = np.unique(np.concatenate(cells)) if cells else np.zeros(0, dtype=np.int64)
    K[wc] = 1.0
    return ConductivityField(grid, Y, K, wc)


def well_rates(grid: GridSpec, wells) -> tuple[np.ndarray, np.ndarray]:
    """Per-cell injection and extraction rates per unit volume (1/s)."""
    w_inj = np.zeros(grid.n_cells)
    w_ext = np.zeros(grid.n_cells)
    for w in wells:
        target = w_inj if w.kind == "injection" else w_ext
        target[w.cells(grid)] += w.unit_rate(grid)
    return w_inj, w_ext


# I/O ---------------------------------------------------------------------------

def save_field_csv(path, values, grid: GridSpec) -> None:
    header = "cells " + " ".join(str(n) for n in grid.cells_per_axis) + \
             " extents " + " ".join(repr(e) for e in grid.extents)
    np.savetxt(path, np.asarray(values), header=header, fmt="%.17g")


def load_field_csv(path) -> tuple[np.ndarray, GridSpec]:
    with open(path) as fh:
        head = fh.readline().lstrip("#").split()
    i = head.index("extents")
    cells = tuple(int(v) for v in head[1:i])
    ext = tuple(float(v) for v in head[i + 1:])
    return np.loadtxt(path, ndmin=1), GridSpec(ext, cells)


def save_field_binary(path, values, grid: GridSpec) -> None:
    """Little-endian: int64 d, int64 cells[d], float64 extents[d], float64 values."""
    with open(path, "wb") as fh:
        np.array([grid.dim, *grid.cells_per_axis], dtype="<i8").tofile(fh)
        np.asarray(grid.extents, dtype="<f8").tofile(fh)
        np.asarray(values, dtype="<f8").tofile(fh)


def load_field_binary(path) -> tuple[np.ndarray, GridSpec]:
    raw = Path(path).read_bytes()
    d = int(np.frombuffer(raw, "<i8", 1)[0])
    cells = tuple(int(v) for v in np.frombuffer(raw, "<i8", d, 8))
    ext = tuple(float(v) for v in np.frombuffer(raw, "<f8", d, 8 * (d + 1)))
    values = np.frombuffer(raw, "<f8", offset=8 * (2 * d + 1)).copy()
    return values, GridSpec(ext, cells)
