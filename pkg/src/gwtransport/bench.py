"""Analytic benchmarks, error norms, convergence studies and the 2-D forward scenario."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
import time

import numpy as np
from scipy.special import erfc

from .fem_core import gauss_rule
from .field import GeoStatParams, WellSpec, build_conductivity, sample_gaussian_field, well_rates
from .flow import ConstantVelocity, reconstruct_local_head, rt0_reconstruct, solve_ccfv
from .mesh import GridSpec, Mesh, build_structured
from .transport.coeffs import CellData, TransportCoeffs
from .transport.problem import TransportProblem, discretize
from .transport.solve import DiscreteField, solve_transport


class ExcludedRegionError(ValueError):
    pass


# analytic problems ---------------------------------------------------------------

@dataclass
class AnalyticProblem:
    name: str
    eps: float
    q: np.ndarray
    mu: float
    u: object
    grad: object = None
    laplacian: object = None
    source: object = None
    dirichlet: object = 0.0
    dirichlet_faces: object = "inflow"
    excluded: tuple | None = None
    u_hat: float = 1.0

    def coeffs(self) -> TransportCoeffs:
        return TransportCoeffs(eps=self.eps, reaction=self.mu, source=self.source or 0.0,
                               dirichlet=self.dirichlet, exact=self.u)

    def transport_problem(self, n0: int = 1) -> TransportProblem:
        vel = ConstantVelocity(self.q)
        mesh = build_structured(GridSpec((1.0, 1.0), (n0, n0)))
        return TransportProblem(mesh, vel, self.coeffs(), self.dirichlet_faces, vel, self.u_hat,
                                excluded=self.excluded, name=self.name)


def john_problem(eps: float = 1e-5) -> AnalyticProblem:
    """Interior circular layer, u = 0 on the boundary, q = (2, 3), mu = 2."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    c = 2.0 / np.sqrt(eps)
    q = np.array([2.0, 3.0])
    mu = 2.0

    def parts(x):
        x = np.asarray(x, dtype=float)
        X, Y = x[..., 0], x[..., 1]
        P = X * (1 - X) * Y * (1 - Y)
        gP = np.stack([(1 - 2 * X) * Y * (1 - Y), X * (1 - X) * (1 - 2 * Y)], axis=-1)
        lP = -2 * Y * (1 - Y) - 2 * X * (1 - X)
        xi = 0.0625 - (X - 0.5) ** 2 - (Y - 0.5) ** 2
        gxi = np.stack([-2 * (X - 0.5), -2 * (Y - 0.5)], axis=-1)
        z = c * xi
        A = 0.5 * np.pi + np.arctan(z)
        s = 1.0 / (1.0 + z * z)
        gA = c * s[..., None] * gxi
        lA = c * (-4.0 * s - 2.0 * z * c * np.sum(gxi**2, axis=-1) * s * s)
        return P, gP, lP, A, gA, lA

    k = 16.0 / np.pi

    def u(x):
        P, _, _, A, _, _ = parts(x)
        return k * P * A

    def grad(x):
        P, gP, _, A, gA, _ = parts(x)
        return k * (gP * A[..., None] + P[..., None] * gA)

    def lap(x):
        P, gP, lP, A, gA, lA = parts(x)
        return k * (lP * A + 2 * np.sum(gP * gA, axis=-1) + P * lA)

    def source(x):
        return -eps * lap(x) + grad(x) @ q + mu * u(x)

    return AnalyticProblem("john", eps, q, mu, u, grad, lap, source, 0.0, "all", None, 1.0)


def lopez_problem(eps: float = 1e-5, r0: float = 5e-5) -> AnalyticProblem:
    """Boundary jump at the origin swept along q = (1, 1)/sqrt(2)."""
    if eps <= 0 or r0 <= 0:
        raise ValueError("eps and r0 must be positive")
    q = np.sqrt(2.0) / 2.0 * np.array([1.0, 1.0])
    w = np.linalg.norm(q) / (2.0 * eps)
    beta = np.pi / 4.0

    def u(x):
        x = np.asarray(x, dtype=float)
        r = np.hypot(x[..., 0], x[..., 1])
        if np.any(r < r0):
            raise ExcludedRegionError("reference solution requested inside the excluded ball")
        phi = np.arctan2(x[..., 0], x[..., 1])
        arg = np.sqrt(np.maximum(1.0 - np.sin(phi + beta), 0.0) * w * r)
        e = erfc(arg)
        u0 = 0.5 * np.where(phi < beta, e, np.where(phi > beta, 2.0 - e, 1.0))
        on_diag = np.isclose(phi, beta, rtol=0, atol=1e-12)
        cp = np.cos(phi + beta)
        cm = np.cos(phi - beta)
        sh = np.sin(0.5 * (0.5 * np.pi - phi - beta))
        with np.errstate(divide="ignore", invalid="ignore"):
            u1 = np.sqrt(np.pi) * ((cm / cp - cp / cm) - 1.0 / (2.0 * sh))
        u1 = np.where(on_diag | ~np.isfinite(u1), 0.0, u1)
        pref = np.exp(w * r * (np.sin(phi + beta) - 1.0)) / (np.pi * np.sqrt(2.0 * w * r))
        return u0 + pref * u1

    def dirichlet(x):
        x = np.asarray(x, dtype=float)
        return np.where(x[..., 1] < x[..., 0], 1.0, 0.0)

    return AnalyticProblem("lopez", eps, q, 0.0, u, None, None, 0.0, dirichlet, "inflow",
                           (np.zeros(2), r0), 1.0)


# error norms ------------------------------------------------------------------------

def _cells_outside(mesh, cells, excluded):
    if excluded is None:
        return np.ones(cells.size, dtype=bool)
    c, r = excluded
    lo = mesh.cell_lower(cells)
    hi = lo + mesh.cell_size(cells)
    nearest = np.clip(np.asarray(c)[None, :], lo, hi)
    return np.linalg.norm(nearest - np.asarray(c)[None, :], axis=1) >= r


def l2_error(u_h: DiscreteField, reference, excluded=None, order: int | None = None) -> float:
    """L2 norm of u_h - reference with a (k+2)-point rule; cells meeting the excluded ball are skipped."""
    mesh = u_h.mesh
    cells = u_h.layout.cells
    rule = gauss_rule(order or max(u_h.degree, 1) + 2, mesh.dim)
    keep = _cells_outside(mesh, cells, excluded)
    vals = u_h.values_at(rule.points)[keep]
    c = cells[keep]
    x = mesh.cell_lower(c)[:, None, :] + mesh.cell_size(c)[:, None, :] * rule.points[None]
    ref = reference(x)
    w = rule.weights[None, :] * mesh.cell_volume(c)[:, None]
    return float(np.sqrt(np.sum(w * (vals - ref) ** 2)))


# studies -----------------------------------------------------------------------------

@dataclass
class StudyRow:
    level: int
    h: float
    dofs: int
    error: float
    t_assemble: float
    t_solve: float
    iterations: int
    converged: bool
    u_min: float = np.nan
    u_max: float = np.nan


@dataclass
class StudyTable:
    method: str
    rows: list = field(default_factory=list)

    def rates(self) -> np.ndarray:
        e = np.array([r.error for r in self.rows])
        return np.log2(e[:-1] / e[1:]) if e.size > 1 else np.zeros(0)

    def to_csv(self, path, timings_path=None) -> None:
        rates = np.concatenate([[np.nan], self.rates()])
        with open(path, "w") as fh:
            fh.write("L,h,DOF,error,rate,IT,converged,u_min,u_max\n")
            for r, rt in zip(self.rows, rates):
                fh.write(f"{r.level},{r.h:.10g},{r.dofs},{r.error:.10e},{rt:.6f},{r.iterations},"
                         f"{int(r.converged)},{r.u_min:.10e},{r.u_max:.10e}\n")
        if timings_path:
            with open(timings_path, "w") as fh:
                fh.write("L,T_assemble,T_solve\n")
                for r in self.rows:
                    fh.write(f"{r.level},{r.t_assemble:.6f},{r.t_solve:.6f}\n")


METHODS = ("sdfem", "dg", "dg+l2")


def base_method(method: str) -> str:
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {METHODS}")
    return "sdfem" if method == "sdfem" else "dg"


def solve_method(problem: TransportProblem, mesh: Mesh, method: str, degree: int = 1, ordering: str = "downwind",
                 solver: str = "bicgstab", preconditioner: str = "ilu0", reduction: float = 1e-8, seed: int = 0,
                 max_iter: int = 5000, **assemble_kw):
    """Solve with 'sdfem', 'dg' or 'dg+l2'; returns (field, dg_field or None, system, report)."""
    from .postprocess import diffusive_l2_projection

    system = discretize(problem, mesh, base_method(method), degree, ordering, seed, **assemble_kw)
    t0 = time.perf_counter()
    u, rep = solve_transport(system, solver, preconditioner, reduction, max_iter)
    rep.wall_time = time.perf_counter() - t0
    if method == "dg+l2":
        proj, prep = diffusive_l2_projection(u)
        return proj, u, system, rep
    return u, None, system, rep


def convergence_study(problem: AnalyticProblem, method: str = "dg", degree: int = 1, levels: int = 5,
                      n0: int = 8, refinement: str = "global", adapt_config=None, **solver_kw) -> StudyTable:
    """Error table over refinement levels.

    Global refinement uses a structured (n0 * 2^L)^2 grid on level L; adaptive
    refinement starts from n0^2 cells and records every level of the adaptive loop.
    """
    table = StudyTable(f"{method}({degree})" if method != "sdfem" else "sdfem")
    tp = problem.transport_problem(n0)
    if refinement == "adaptive":
        return _adaptive_study(problem, tp, table, method, degree, levels, adapt_config, solver_kw)
    if refinement != "global":
        raise ValueError("refinement must be 'global' or 'adaptive'")
    for L in range(levels):
        n = n0 * 2**L
        mesh = build_structured(GridSpec((1.0, 1.0), (n, n)))
        tp.mesh = mesh
        u, _, system, rep = solve_method(tp, mesh, method, degree, **solver_kw)
        err = l2_error(u, problem.u, problem.excluded)
        lo, hi = u.extrema()
        table.rows.append(StudyRow(L, 1.0 / n, u.layout.n_dofs, err, system.assembly_time, rep.wall_time,
                                   rep.iterations, rep.converged, lo, hi))
    return table


def _adaptive_study(problem, tp, table, method, degree, levels, config, solver_kw):
    from .adapt import AdaptConfig, adaptive_solve

    if method == "dg+l2":
        raise ValueError("the diffusive projection needs a mesh without hanging nodes")
    base = replace(config) if config is not None else AdaptConfig(p_r=20.0, p_c=0.0)
    base.l_max, base.tol, base.p_osc = levels - 1, 0.0, -1.0

    def record(level, u, system, rep):
        lo, hi = u.extrema()
        h = float(u.mesh.cell_size(u.layout.cells)[:, 0].min())
        table.rows.append(StudyRow(level, h, u.layout.n_dofs, l2_error(u, problem.u, problem.excluded),
                                   system.assembly_time, rep.wall_time, rep.iterations, rep.converged, lo, hi))

    adaptive_solve(tp, base, base_method(method), degree, callback=record, **solver_kw)
    return table


# forward 2-D scenario -----------------------------------------------------------------

@dataclass
class ScenarioSpec:
    grid: GridSpec
    geostat: GeoStatParams
    head_left: float = 100.0
    head_right: float = 99.5
    wells: tuple = ()
    porosity: float = 0.3
    alpha_l: float = 1e-3
    alpha_t: float = 1e-4
    d_m: float = 2e-9
    u_hat: float = 100.0


def forward2d_scenario(scale: str = "desk", seed: int = 0, with_wells: bool = True) -> ScenarioSpec:
    """100 m x 100 m aquifer, head 100 m / 99.5 m left/right, one injection well."""
    cells = {"desk": 50, "paper": 100}[scale]
    grid = GridSpec((100.0, 100.0), (cells, cells))
    wells = (WellSpec.point("injection", (21.0, 51.0), 5e-4, concentration=1.0, duration=100.0),) if with_wells else ()
    return ScenarioSpec(grid, GeoStatParams(-6.0, 1.0, (10.0, 10.0), seed), wells=wells)


@dataclass
class ScenarioSetup:
    spec: ScenarioSpec
    mesh: Mesh
    conductivity: object
    head: object
    velocity: object
    local_head: object
    problem: TransportProblem


def build_scenario(spec: ScenarioSpec) -> ScenarioSetup:
    """Sample K, solve CCFV flow, reconstruct RT0 velocity and the local head."""
    mesh = build_structured(spec.grid)
    Y = sample_gaussian_field(spec.geostat, spec.grid)
    K = build_conductivity(Y, spec.grid, spec.wells)
    head = solve_ccfv(mesh, K, spec.wells, {0: spec.head_left, 1: spec.head_right})
    vel = rt0_reconstruct(mesh, head.face_flux)
    local = reconstruct_local_head(mesh, vel, K, head.values)
    w_inj, w_ext = well_rates(spec.grid, spec.wells)
    dose = np.zeros(spec.grid.n_cells)
    for w in spec.wells:
        if w.kind == "injection":
            dose[w.cells(spec.grid)] += w.unit_rate(spec.grid) * w.concentration * w.duration
    coeffs = TransportCoeffs(spec.porosity, spec.alpha_l, spec.alpha_t, spec.d_m,
                             reaction=CellData(w_ext), source=CellData(dose), dirichlet=0.0)
    problem = TransportProblem(mesh, vel, coeffs, "inflow", local, spec.u_hat, name="forward2d")
    return ScenarioSetup(spec, mesh, K, head, vel, local, problem)
