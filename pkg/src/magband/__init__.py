"""Band structure of the magnetic Laplacian on laterally coupled hard-wall layers."""
from .dispersion import (
    BandSummary,
    DispersionTable,
    MomentumGrid,
    band_edges,
    current_profile,
    detect_flat,
    detect_gaps,
    solve_fiber,
    sweep,
)
from .discretize import FiberProblem, GridError, assemble, build_grid
from .eigensolve import EigenRequest, EigenResult, EigensolverError, smallest_eigenpairs
from .estimator import BandStructure
from .model import (
    GeometryConfig,
    PhysicalConfig,
    Width,
    free_levels,
    lower_catalog,
    merged_free_levels,
    neumann_limit_levels,
    upper_catalog,
)
from .oracle1d import bracket_bounds
from .verify import CheckRecord, run_suite

__version__ = "0.1.0"

__all__ = [
    "BandStructure", "BandSummary", "CheckRecord", "DispersionTable", "EigenRequest", "EigenResult",
    "EigensolverError", "FiberProblem", "GeometryConfig", "GridError", "MomentumGrid", "PhysicalConfig",
    "Width", "assemble", "band_edges", "bracket_bounds", "build_grid", "current_profile", "detect_flat",
    "detect_gaps", "free_levels", "lower_catalog", "merged_free_levels", "neumann_limit_levels",
    "run_suite", "smallest_eigenpairs", "solve_fiber", "sweep", "upper_catalog",
]
