"""Preconditioned Krylov solvers with a residual-reduction stopping rule.

All solvers start from x0 = 0 and stop once ||b - A x||_2 <= reduction * ||b||_2.
Preconditioning is applied from the right, so the monitored residual is the
true (unpreconditioned) one.
"""

from __future__ import annotations

from dataclasses import dataclass
import time

import numpy as np

from .precond import Preconditioner


class IndefiniteMatrixError(ArithmeticError):
    pass


@dataclass
class SolveReport:
    iterations: int
    reduction: float
    converged: bool
    wall_time: float
    solver: str = ""
    preconditioner: str = ""
    breakdown: bool = False

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def _matvec(a):
    return a.matvec if hasattr(a, "matvec") else (lambda x: a @ x)


def _true_reduction(mv, b, x, bnorm):
    return float(np.linalg.norm(b - mv(x)) / bnorm) if bnorm > 0 else 0.0


def bicgstab(a, b, preconditioner: Preconditioner | None = None, reduction: float = 1e-8,
             max_iter: int = 1000, growth: float = 1e4):
    """Right-preconditioned BiCGSTAB (van der Vorst).

    A half step that already meets the target counts as a full iteration. Each
    cycle ends on convergence of the recursive residual, on breakdown, or when
    that residual stops being finite or grows ``growth`` times past the best
    seen. The next cycle restarts from the best iterate with its true residual;
    a cycle that brings no improvement ends the solve as a breakdown.
    """
    if not 0 < reduction < 1:
        raise ValueError("reduction must lie in (0, 1)")
    t0 = time.perf_counter()
    mv = _matvec(a)
    prec = preconditioner or Preconditioner()
    b = np.asarray(b, dtype=float)
    x = np.zeros_like(b)
    bnorm = np.linalg.norm(b)
    name = getattr(prec, "name", "")
    if bnorm == 0.0:
        return x, SolveReport(0, 0.0, True, time.perf_counter() - t0, "bicgstab", name)
    target = reduction * bnorm
    it = 0
    breakdown = False
    r = b.copy()
    x_best, best = x.copy(), bnorm
    while it < max_iter and not breakdown:
        start = best
        rhat = r.copy()
        rho = alpha = omega = 1.0
        v = np.zeros_like(b)
        p = np.zeros_like(b)
        while it < max_iter:
            it += 1
            rho_new = rhat @ r
            if abs(rho_new) < 1e-300 or omega == 0.0:
                breakdown = True
                break
            beta = (rho_new / rho) * (alpha / omega)
            p = r + beta * (p - omega * v)
            phat = prec(p)
            v = mv(phat)
            denom = rhat @ v
            if denom == 0.0:
                breakdown = True
                break
            alpha = rho_new / denom
            s = r - alpha * v
            if np.linalg.norm(s) <= target:
                x += alpha * phat
                break
            shat = prec(s)
            t = mv(shat)
            tt = t @ t
            omega = (t @ s) / tt if tt > 0 else 0.0
            x += alpha * phat + omega * shat
            r = s - omega * t
            rho = rho_new
            rn = np.linalg.norm(r)
            if rn <= target:
                break
            if not np.isfinite(rn) or rn > growth * best:
                break
            if rn < best:
                x_best, best = x.copy(), rn
        r = b - mv(x)
        rn = np.linalg.norm(r)
        if rn <= target:
            break
        if not np.isfinite(rn) or rn > best:
            x = x_best.copy()
            r = b - mv(x)
            rn = np.linalg.norm(r)
        if rn >= start:
            breakdown = True
        x_best, best = x.copy(), rn
    red = _true_reduction(mv, b, x, bnorm)
    return x, SolveReport(it, red, red <= reduction, time.perf_counter() - t0, "bicgstab", name,
                          breakdown and red > reduction)


def gmres(a, b, preconditioner: Preconditioner | None = None, reduction: float = 1e-8,
          restart: int = 50, max_iter: int = 1000):
    """Restarted right-preconditioned GMRES with Givens rotations.

    ``iterations`` counts Arnoldi steps over all cycles.
    """
    if not 0 < reduction < 1:
        raise ValueError("reduction must lie in (0, 1)")
    t0 = time.perf_counter()
    mv = _matvec(a)
    prec = preconditioner or Preconditioner()
    b = np.asarray(b, dtype=float)
    x = np.zeros_like(b)
    bnorm = np.linalg.norm(b)
    name = getattr(prec, "name", "")
    if bnorm == 0.0:
        return x, SolveReport(0, 0.0, True, time.perf_counter() - t0, "gmres", name)
    target = reduction * bnorm
    it = 0
    r = b - mv(x)
    beta = np.linalg.norm(r)
    while it < max_iter and beta > target:
        m = restart
        V = np.zeros((m + 1, b.size))
        Z = np.zeros((m, b.size))
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        V[0] = r / beta
        j_used = 0
        for j in range(m):
            it += 1
            Z[j] = prec(V[j])
            w = mv(Z[j])
            for i in range(j + 1):
                H[i, j] = w @ V[i]
                w = w - H[i, j] * V[i]
            H[j + 1, j] = np.linalg.norm(w)
            if H[j + 1, j] > 0:
                V[j + 1] = w / H[j + 1, j]
            for i in range(j):
                tmp = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = tmp
            denom = np.hypot(H[j, j], H[j + 1, j])
            cs[j] = H[j, j] / denom if denom > 0 else 1.0
            sn[j] = H[j + 1, j] / denom if denom > 0 else 0.0
            H[j, j] = cs[j] * H[j, j] + sn[j] * H[j + 1, j]
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            j_used = j + 1
            if abs(g[j + 1]) <= target or it >= max_iter or H[j, j] == 0.0:
                break
        y = np.linalg.solve(np.triu(H[:j_used, :j_used]), g[:j_used]) if j_used else np.zeros(0)
        x += Z[:j_used].T @ y
        r = b - mv(x)
        beta = np.linalg.norm(r)
    red = _true_reduction(mv, b, x, bnorm)
    return x, SolveReport(it, red, red <= reduction, time.perf_counter() - t0, "gmres", name)


def cg(a, b, preconditioner: Preconditioner | None = None, reduction: float = 1e-8, max_iter: int = 1000):
    """Preconditioned conjugate gradients for symmetric positive definite systems."""
    if not 0 < reduction < 1:
        raise ValueError("reduction must lie in (0, 1)")
    t0 = time.perf_counter()
    mv = _matvec(a)
    prec = preconditioner or Preconditioner()
    b = np.asarray(b, dtype=float)
    x = np.zeros_like(b)
    bnorm = np.linalg.norm(b)
    name = getattr(prec, "name", "")
    if bnorm == 0.0:
        return x, SolveReport(0, 0.0, True, time.perf_counter() - t0, "cg", name)
    target = reduction * bnorm
    r = b.copy()
    it = 0
    while it < max_iter:
        z = prec(r)
        p = z.copy()
        rz = r @ z
        while it < max_iter:
            it += 1
            ap = mv(p)
            pap = p @ ap
            if pap <= 0:
                raise IndefiniteMatrixError(f"p^T A p = {pap:.3e} <= 0 at iteration {it}")
            alpha = rz / pap
            x += alpha * p
            r -= alpha * ap
            if np.linalg.norm(r) <= target:
                break
            z = prec(r)
            rz_new = r @ z
            p = z + (rz_new / rz) * p
            rz = rz_new
        r = b - mv(x)
        if np.linalg.norm(r) <= target:
            break
    red = _true_reduction(mv, b, x, bnorm)
    return x, SolveReport(it, red, red <= reduction, time.perf_counter() - t0, "cg", name)


SOLVERS = {"bicgstab": bicgstab, "gmres": gmres, "cg": cg}
