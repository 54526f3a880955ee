"""Steady convection-dispersion transport: SWIP-DG(k) and SDFEM."""

from .coeffs import (
    CHARACTERISTIC,
    INFLOW,
    OUTFLOW,
    CellData,
    TransportCoeffs,
    classify_boundary,
    dispersion_tensor,
    mesh_peclet,
    omega_weights,
    penalty_gamma,
    sdfem_delta,
    upwind_value,
)
from .dg import AssemblyError, TransportSystem, assemble_dg, classify_faces, face_quadrature
from .sdfem import assemble_sdfem
from .solve import DiscreteField, overshoot_metric, range_metrics, solve_transport

__all__ = [
    "AssemblyError", "CHARACTERISTIC", "CellData", "DiscreteField", "INFLOW", "OUTFLOW", "TransportCoeffs",
    "TransportSystem", "assemble_dg", "assemble_sdfem", "classify_boundary", "classify_faces",
    "dispersion_tensor", "face_quadrature", "mesh_peclet", "omega_weights", "overshoot_metric",
    "penalty_gamma", "range_metrics", "sdfem_delta", "solve_transport", "upwind_value",
]
