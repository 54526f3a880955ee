"""Residual a-posteriori estimator, error-fraction marking and the h-adaptive loop."""

from __future__ import annotations

from dataclasses import dataclass, field
import math
import time

import numpy as np

from .fem_core import gauss_rule
from .mesh import face_diameter
from .transport.coeffs import evaluate, mesh_peclet
from .transport.dg import _side_basis, face_quadrature
from .transport.problem import TransportProblem, discretize
from .transport.solve import DiscreteField, overshoot_metric, solve_transport


class EstimatorError(ValueError):
    pass


@dataclass
class CellIndicator:
    cells: np.ndarray       # leaf ids (layout order)
    r_t: np.ndarray         # eta^2_{R_t}
    r_f: np.ndarray         # eta^2_{R_f}
    j_f: np.ndarray         # eta^2_{J_f}

    @property
    def eta2(self) -> np.ndarray:
        return self.r_t + self.r_f + self.j_f

    @property
    def eta(self) -> np.ndarray:
        return np.sqrt(self.eta2)


def _cell_eps(mesh, cells, velocity, coeffs):
    q = velocity(mesh.cell_center(cells), mesh.base_cell(cells))
    D = coeffs.dispersion(q)
    return np.diagonal(D, axis1=-2, axis2=-1).min(axis=-1)


def cell_indicator(u: DiscreteField, system, quad_order: int | None = None) -> CellIndicator:
    """Three-term residual indicator per leaf cell (squared contributions)."""
    mesh = u.mesh
    coeffs = system.coeffs
    velocity = system.velocity
    cells = u.layout.cells
    d = mesh.dim
    k = max(u.degree, 1)
    pos = np.full(mesh.level.shape[0], -1, dtype=np.int64)
    pos[cells] = np.arange(cells.size)
    eps = _cell_eps(mesh, cells, velocity, coeffs)
    if np.any(eps <= 0):
        raise EstimatorError("the estimator needs a positive diffusion scale in every cell")
    h = mesh.cell_diameter(cells)
    basis = u.basis
    coef = u.cell_coefficients()

    # element residual
    rule = gauss_rule(quad_order or k + 2, d)
    lower = mesh.cell_lower(cells)
    size = mesh.cell_size(cells)
    base = mesh.base_cell(cells)
    x = lower[:, None, :] + size[:, None, :] * rule.points[None]
    q = velocity(x, base[:, None])
    mu = evaluate(coeffs.reaction, x, base[:, None]) + velocity.divergence(base)[:, None]
    src = evaluate(coeffs.source, x, base[:, None])
    val = coef @ basis.values(rule.points).T
    grad = np.einsum("ci,qia->cqa", coef, basis.gradients(rule.points)) / size[:, None, :]
    res = src - np.einsum("cqa,cqa->cq", q, grad) - mu * val
    if u.degree >= 2:
        second = np.einsum("ci,qia->cqa", coef, basis.second_derivatives(rule.points)) / size[:, None, :] ** 2
        res += eps[:, None] * second.sum(axis=-1)
    w = rule.weights[None, :] * mesh.cell_volume(cells)[:, None]
    r_t = h**2 / eps * np.sum(w * res**2, axis=1)

    f = mesh.faces
    hf = face_diameter(f)
    frule = gauss_rule(k + 1, d - 1)
    r_f = np.zeros(cells.size)
    j_f = np.zeros(cells.size)

    ni = f.n_interior
    if ni:
        idx = np.arange(ni)
        cm, cp = f.minus[idx], f.plus[idx]
        pm, pp = pos[cm], pos[cp]
        xf, wf = face_quadrature(f, idx, frule)
        n = f.normal[idx]
        vm, gm = _side_basis(mesh, basis, cm, xf)
        vp, gp = _side_basis(mesh, basis, cp, xf)
        um = np.einsum("fqi,fi->fq", vm, coef[pm])
        up = np.einsum("fqi,fi->fq", vp, coef[pp])
        dum = np.einsum("fqia,fi,fa->fq", gm, coef[pm], n)
        dup = np.einsum("fqia,fi,fa->fq", gp, coef[pp], n)
        flux_jump = np.sum(wf * (eps[pm][:, None] * dum - eps[pp][:, None] * dup) ** 2, axis=1)
        jump = np.zeros(ni) if u.space == "cg" else np.sum(wf * (um - up) ** 2, axis=1)
        g = system.face_gamma[idx]
        for p in (pm, pp):
            np.add.at(r_f, p, 0.5 * hf[idx] / eps[p] * flux_jump)
            np.add.at(j_f, p, 0.5 * (g * eps[p] / hf[idx] + hf[idx] / eps[p]) * jump)

    bidx = np.flatnonzero(system.dirichlet_face & f.is_boundary)
    if bidx.size:
        cm = f.minus[bidx]
        pm = pos[cm]
        xf, wf = face_quadrature(f, bidx, frule)
        vm, _ = _side_basis(mesh, basis, cm, xf)
        ub = np.einsum("fqi,fi->fq", vm, coef[pm])
        ud = evaluate(coeffs.dirichlet, xf, mesh.base_cell(cm)[:, None])
        mis = np.sum(wf * (ub - ud) ** 2, axis=1)
        g = system.face_gamma[bidx]
        np.add.at(j_f, pm, (g * eps[pm] / hf[bidx] + hf[bidx] / eps[pm]) * mis)
    return CellIndicator(cells, r_t, r_f, j_f)


def global_estimator(indicators) -> float:
    eta2 = indicators.eta2 if isinstance(indicators, CellIndicator) else np.asarray(indicators, dtype=float)
    return math.sqrt(math.fsum(eta2))


# marking ------------------------------------------------------------------------------

def _mass(e2, mask) -> float:
    return math.fsum(e2[mask])


def mark_refine(eta, p_r: float, rel_width: float = 1e-6) -> np.ndarray:
    """Indices with eta_t >= eta*, eta* the largest threshold keeping p_r % of eta^2.

    The threshold is bracketed by bisection on [0, max eta] and then snapped to a
    realized indicator value inside the final bracket.
    """
    eta = np.asarray(eta, dtype=float)
    if not 0 < p_r <= 100:
        raise ValueError("p_r must lie in (0, 100]")
    e2 = eta * eta
    total = math.fsum(e2)
    if eta.size == 0 or total == 0:
        return np.zeros(0, dtype=np.int64)
    target = p_r / 100.0 * total
    top = float(eta.max())
    if _mass(e2, eta >= top) >= target:
        return np.flatnonzero(eta >= top)
    lo, hi = 0.0, top                  # mass(lo) >= target > mass(hi)
    while hi - lo > rel_width * top:
        mid = 0.5 * (lo + hi)
        if _mass(e2, eta >= mid) >= target:
            lo = mid
        else:
            hi = mid
    cand = np.unique(eta[(eta >= lo) & (eta < hi)])
    ok = [v for v in cand[::-1] if _mass(e2, eta >= v) >= target]
    thr = ok[0] if ok else lo
    return np.flatnonzero(eta >= thr)


def mark_coarsen(eta, p_c: float, rel_width: float = 1e-6) -> np.ndarray:
    """Indices with eta_t <= rho*, rho* the largest realized value whose lower
    tail holds at most p_c % of eta^2."""
    eta = np.asarray(eta, dtype=float)
    if not 0 <= p_c < 100:
        raise ValueError("p_c must lie in [0, 100)")
    e2 = eta * eta
    total = math.fsum(e2)
    if p_c == 0 or eta.size == 0 or total == 0:
        return np.zeros(0, dtype=np.int64)
    target = p_c / 100.0 * total
    bottom = float(eta.min())
    if _mass(e2, eta <= bottom) > target:
        return np.zeros(0, dtype=np.int64)
    top = float(eta.max())
    lo, hi = bottom, top                # mass(lo) <= target < mass(hi)
    while hi - lo > rel_width * top:
        mid = 0.5 * (lo + hi)
        if _mass(e2, eta <= mid) <= target:
            lo = mid
        else:
            hi = mid
    cand = np.unique(eta[(eta >= lo) & (eta <= hi)])
    ok = [v for v in cand[::-1] if _mass(e2, eta <= v) <= target]
    thr = ok[0] if ok else lo
    return np.flatnonzero(eta <= thr)


# adaptive loop ---------------------------------------------------------------------------

@dataclass
class AdaptConfig:
    p_r: float = 20.0
    p_c: float = 10.0
    tol: float = 0.0
    l_max: int = 5
    p_osc: float = 0.01
    u_hat: float | None = None
    dof_cap: int = 5_000_000

    def __post_init__(self):
        if not 0 < self.p_r <= 100 or not 0 <= self.p_c < 100:
            raise ValueError("need 0 < p_r <= 100 and 0 <= p_c < 100")


TRACE_COLUMNS = ("L", "DOF", "maxPeclet", "maxPecletMarked", "eta", "u_min", "u_max", "overshoot", "IT",
                 "converged", "refined", "coarsened")
TIMING_COLUMNS = ("L", "T_assemble", "T_solve")


@dataclass
class AdaptResult:
    solution: DiscreteField
    system: object
    trace: list = field(default_factory=list)
    stop_reason: str = ""
    meshes: list = field(default_factory=list)

    def column(self, name) -> np.ndarray:
        return np.array([row[name] for row in self.trace])

    def write_trace(self, path, timings_path=None) -> None:
        with open(path, "w") as fh:
            fh.write(",".join(TRACE_COLUMNS) + "\n")
            for row in self.trace:
                fh.write(",".join(_fmt(row[c]) for c in TRACE_COLUMNS) + "\n")
        if timings_path:
            with open(timings_path, "w") as fh:
                fh.write(",".join(TIMING_COLUMNS) + "\n")
                for row in self.trace:
                    fh.write(",".join(_fmt(row[c]) for c in TIMING_COLUMNS) + "\n")


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.10e}"


def cell_peclet(mesh, cells, problem: TransportProblem) -> np.ndarray:
    q = problem.velocity(mesh.cell_center(cells), mesh.base_cell(cells))
    return mesh_peclet(np.linalg.norm(q, axis=1), mesh.cell_diameter(cells), problem.coeffs)


def adaptive_solve(problem: TransportProblem, config: AdaptConfig, method: str = "dg", degree: int = 1,
                   ordering: str = "downwind", solver: str = "bicgstab", preconditioner: str = "ilu0",
                   reduction: float = 1e-8, seed: int = 0, max_iter: int = 5000, keep_meshes: bool = False,
                   callback=None, **assemble_kw) -> AdaptResult:
    """Solve, estimate, mark and adapt until a stopping rule fires.

    Stops when eta <= TOL, when the overshoot metric drops to p_osc, when the
    level limit or the DOF cap is reached, or when a linear solve fails.
    ``callback(level, u, system, report)`` runs after every solve.
    """
    u_hat = config.u_hat or problem.u_hat
    mesh = problem.mesh
    result = AdaptResult(None, None)
    level = 0
    while True:
        system = discretize(problem, mesh, method, degree, ordering, seed, **assemble_kw)
        t0 = time.perf_counter()
        u, rep = solve_transport(system, solver, preconditioner, reduction, max_iter)
        t_solve = time.perf_counter() - t0
        if callback is not None:
            callback(level, u, system, rep)
        ind = cell_indicator(u, system)
        eta = global_estimator(ind)
        lo, hi = u.extrema()
        osc = overshoot_metric(lo, hi, u_hat)
        pe = cell_peclet(mesh, ind.cells, problem)
        refine = ind.cells[mark_refine(ind.eta, config.p_r)] if eta > 0 else np.zeros(0, dtype=np.int64)
        coarsen = ind.cells[mark_coarsen(ind.eta, config.p_c)] if eta > 0 else np.zeros(0, dtype=np.int64)
        coarsen = np.setdiff1d(coarsen, refine)
        marked_pe = pe[np.isin(ind.cells, refine)]
        result.trace.append({
            "L": level, "DOF": system.n_dofs, "maxPeclet": float(pe.max()),
            "maxPecletMarked": float(marked_pe.max()) if marked_pe.size else 0.0,
            "eta": eta, "u_min": lo, "u_max": hi, "overshoot": osc, "IT": rep.iterations,
            "converged": rep.converged, "refined": int(refine.size), "coarsened": int(coarsen.size),
            "T_assemble": system.assembly_time, "T_solve": t_solve,
        })
        result.solution, result.system = u, system
        if keep_meshes:
            result.meshes.append(mesh)
        if not rep.converged:
            result.stop_reason = "solver"
            break
        if eta <= config.tol:
            result.stop_reason = "tol"
            break
        if level > 0 and osc <= config.p_osc:
            result.stop_reason = "overshoot"
            break
        if level >= config.l_max:
            result.stop_reason = "l_max"
            break
        if system.n_dofs >= config.dof_cap:
            result.stop_reason = "dof_cap"
            break
        mesh = mesh.adapt(refine, coarsen)
        level += 1
    return result
