"""Holistic (slow-manifold) discretisation of the 2D real Ginzburg-Landau equation.

The subgrid field on overlapping elements is constructed numerically as a
truncated power series in the coupling ``gamma`` and nonlinearity ``alpha``;
the resulting macroscale models are compared with closed-form models through
coefficients, simulation, continuation and measured consistency.
"""
from .coefficients import coefficient_error_table, extract_coefficients, load_model, save_model
from .continuation import Branch, Equilibrium, continue_branch, diagram_compare, newton_solve, stability
from .grid import GridField, MacroGrid, StencilId, apply_stencil, field_at, stencil_of_cube
from .models import ModelKind, ModelSpec, Trajectory, integrate, rhs, subgrid_snapshot
from .polynomial import Poly, Series2
from .subgrid import (
    ConstructionError,
    SubgridManifold,
    build_correction_system,
    construct,
    residual_ibc,
    residual_pde,
    solvability_correction,
)

__version__ = "0.1.0"

__all__ = [
    "Branch",
    "ConstructionError",
    "Equilibrium",
    "GridField",
    "MacroGrid",
    "ModelKind",
    "ModelSpec",
    "Poly",
    "Series2",
    "StencilId",
    "SubgridManifold",
    "Trajectory",
    "apply_stencil",
    "build_correction_system",
    "coefficient_error_table",
    "construct",
    "continue_branch",
    "diagram_compare",
    "extract_coefficients",
    "field_at",
    "integrate",
    "load_model",
    "newton_solve",
    "residual_ibc",
    "residual_pde",
    "rhs",
    "save_model",
    "solvability_correction",
    "stability",
    "stencil_of_cube",
    "subgrid_snapshot",
]
