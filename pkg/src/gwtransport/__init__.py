"""Steady groundwater flow and convection-dominated solute transport on
axis-parallel quadrilateral meshes."""

__version__ = "0.1.0"
