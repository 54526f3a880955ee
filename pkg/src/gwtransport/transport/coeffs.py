"""Transport coefficients, dispersion, face weights and stabilisation parameters."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable

import numpy as np


class CellData:
    """Piecewise-constant coefficient given per level-0 cell."""

    def __init__(self, values):
        self.values = np.asarray(values, dtype=float)

    def __call__(self, x, base_cells):
        return self.values[np.asarray(base_cells)]


def evaluate(coef, x, base_cells) -> np.ndarray:
    """Evaluate a scalar, a :class:`CellData` or a callable ``f(x)`` at points."""
    x = np.asarray(x, dtype=float)
    shape = x.shape[:-1]
    if coef is None:
        return np.zeros(shape)
    if isinstance(coef, CellData):
        return np.broadcast_to(coef(x, base_cells), shape).astype(float)
    if callable(coef):
        return np.asarray(coef(x), dtype=float).reshape(shape)
    return np.full(shape, float(coef))


@dataclass
class TransportCoeffs:
    """Coefficients of div(-D grad u + q u) + mu u = s with u = u_D on inflow.

    If ``eps`` is set the dispersion is isotropic, D = eps * I, and the
    Scheidegger parameters are ignored.
    """

    porosity: float = 1.0
    alpha_l: float = 0.0
    alpha_t: float = 0.0
    d_m: float = 0.0
    eps: float | None = None
    reaction: Any = 0.0
    source: Any = 0.0
    dirichlet: Any = 0.0
    exact: Callable | None = None

    def __post_init__(self):
        if not 0.0 < self.porosity <= 1.0:
            raise ValueError("porosity must lie in (0, 1]")
        if self.eps is None and not (self.alpha_l >= self.alpha_t >= 0.0):
            raise ValueError("need alpha_l >= alpha_t >= 0")
        if self.d_m < 0 or (self.eps is not None and self.eps < 0):
            raise ValueError("diffusion coefficients must be >= 0")

    @property
    def isotropic(self) -> bool:
        return self.eps is not None

    def dispersion(self, q) -> np.ndarray:
        """D at Darcy velocities ``q`` (..., d) -> (..., d, d)."""
        q = np.asarray(q, dtype=float)
        d = q.shape[-1]
        eye = np.eye(d)
        if self.isotropic:
            return np.broadcast_to(self.eps * eye, q.shape + (d,)).copy()
        return dispersion_tensor(q / self.porosity, self.porosity, self.alpha_l, self.alpha_t, self.d_m)

    def longitudinal(self, qnorm) -> np.ndarray:
        """Diffusion scale entering the mesh Peclet number."""
        qnorm = np.asarray(qnorm, dtype=float)
        if self.isotropic:
            return np.full(qnorm.shape, float(self.eps))
        return self.alpha_l * qnorm + self.porosity * self.d_m


def dispersion_tensor(v, porosity=1.0, alpha_l=0.0, alpha_t=0.0, d_m=0.0) -> np.ndarray:
    """theta [(a_l - a_t) v v^T / |v| + (a_t |v| + D_m) I] for pore velocities ``v``."""
    v = np.asarray(v, dtype=float)
    d = v.shape[-1]
    vn = np.linalg.norm(v, axis=-1)
    safe = np.where(vn > 0, vn, 1.0)
    outer = v[..., :, None] * v[..., None, :] / safe[..., None, None]
    iso = (alpha_t * vn + d_m)[..., None, None] * np.eye(d)
    return porosity * ((alpha_l - alpha_t) * outer + iso)


def omega_weights(delta_minus, delta_plus):
    """Diffusivity weights and effective diffusivity from delta = n.D.n on both sides.

    Degenerate faces (delta_minus + delta_plus == 0) get weights 1/2 and D_eff = 0.
    """
    dm = np.asarray(delta_minus, dtype=float)
    dp = np.asarray(delta_plus, dtype=float)
    s = dm + dp
    zero = s <= 0
    ss = np.where(zero, 1.0, s)
    w_minus = np.where(zero, 0.5, dp / ss)
    w_plus = np.where(zero, 0.5, dm / ss)
    d_eff = np.where(zero, 0.0, 2.0 * dm * dp / ss)
    return w_minus, w_plus, d_eff


def penalty_gamma(c_gamma, d_eff, k, d, h_f):
    h_f = np.asarray(h_f, dtype=float)
    if np.any(h_f <= 0):
        raise ValueError("face diameter must be positive")
    if k < 1:
        raise ValueError("penalty needs polynomial degree >= 1")
    return c_gamma * np.asarray(d_eff, dtype=float) * k * (k + d - 1) / h_f


def upwind_value(u_minus, u_plus, qn):
    """u^- where q.n >= 0, else u^+."""
    return np.where(np.asarray(qn) < 0, u_plus, u_minus)


def mesh_peclet(qnorm, h, coeffs: TransportCoeffs) -> np.ndarray:
    """P = |q| h / (2 D_L); +inf where D_L = 0 and q != 0."""
    qnorm = np.asarray(qnorm, dtype=float)
    h = np.asarray(h, dtype=float)
    dl = coeffs.longitudinal(qnorm)
    num = 0.5 * qnorm * h
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(dl > 0, num / np.where(dl > 0, dl, 1.0), np.where(num > 0, np.inf, 0.0))
    return p


def zeta_upwind(p):
    p = np.asarray(p, dtype=float)
    with np.errstate(divide="ignore"):
        return np.maximum(0.0, 1.0 - 1.0 / np.where(p > 0, p, 1.0)) * (p > 0)


def zeta_coth(p):
    p = np.asarray(p, dtype=float)
    out = np.zeros_like(p)
    big = p > 20
    mid = (p > 1e-8) & ~big
    out[big] = 1.0 - 1.0 / p[big]
    out[mid] = 1.0 / np.tanh(p[mid]) - 1.0 / p[mid]
    return out


ZETA = {"upwind": zeta_upwind, "coth": zeta_coth}


def sdfem_delta(h, qnorm, p, zeta: str = "upwind") -> np.ndarray:
    """delta = h / (2 |q|) * zeta(P); zero where q vanishes."""
    qnorm = np.asarray(qnorm, dtype=float)
    safe = np.where(qnorm > 0, qnorm, 1.0)
    return np.where(qnorm > 0, np.asarray(h) / (2.0 * safe) * ZETA[zeta](p), 0.0)


INFLOW, CHARACTERISTIC, OUTFLOW = -1, 0, 1


def classify_boundary(qn, scale=None) -> np.ndarray:
    """-1 inflow, +1 outflow, 0 characteristic; |q.n| below 1e-14*scale counts as 0."""
    qn = np.asarray(qn, dtype=float)
    if np.any(~np.isfinite(qn)):
        raise ValueError("non-finite normal velocity on a boundary face")
    if scale is None:
        scale = float(np.abs(qn).max()) if qn.size else 0.0
    band = 1e-14 * scale
    return np.where(qn < -band, INFLOW, np.where(qn > band, OUTFLOW, CHARACTERISTIC))
