"""Viscoelastic photoacoustic forward/adjoint solvers and TV-regularised reconstruction."""

from .adjoint import prepare_adjoint_data, run_adjoint
from .discrete_adjoint import adjoint_equivalence_report, run_discrete_adjoint
from .errors import ConfigurationError, DivergenceError, GeometryError, NumericalInstability
from .forward import TimeSeries, build_source, run_forward
from .grid import Grid
from .medium import Medium, MediumMaps, derive_coefficients
from .model import Model
from .phantom import PhantomSpec, inner_product_suite, make_phantom, phantom_grid
from .pml import Pml
from .recon import PatOperator, ReconConfig, power_iteration, run_ista, tv_prox
from .sensors import SensorArray

__all__ = [
    "ConfigurationError", "DivergenceError", "GeometryError", "Grid", "Medium", "MediumMaps", "Model",
    "NumericalInstability", "PatOperator", "PhantomSpec", "Pml", "ReconConfig", "SensorArray", "TimeSeries",
    "adjoint_equivalence_report", "build_source", "derive_coefficients", "inner_product_suite",
    "make_phantom", "phantom_grid", "power_iteration", "prepare_adjoint_data", "run_adjoint",
    "run_discrete_adjoint", "run_forward", "run_ista", "tv_prox",
]
