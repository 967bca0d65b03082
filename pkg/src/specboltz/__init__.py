"""Conservative deterministic spectral solver for the space-homogeneous
Boltzmann equation with anisotropic and grazing scattering kernels."""

from specboltz.grid import VelocityGrid, build_grid
from specboltz.kernels import (
    GrazingRutherford,
    IsotropicConstant,
    KernelSpec,
    Tabulated,
)
from specboltz.weights import WeightTable, build_weight_table, load_table, save_table
from specboltz.conservation import ConservationProjector, build_projector
from specboltz.spectral import collide, forward_transform, inverse_transform
from specboltz.solver import SolverConfig, run, step

__all__ = [
    "VelocityGrid",
    "build_grid",
    "KernelSpec",
    "IsotropicConstant",
    "GrazingRutherford",
    "Tabulated",
    "WeightTable",
    "build_weight_table",
    "save_table",
    "load_table",
    "ConservationProjector",
    "build_projector",
    "forward_transform",
    "inverse_transform",
    "collide",
    "SolverConfig",
    "step",
    "run",
]
