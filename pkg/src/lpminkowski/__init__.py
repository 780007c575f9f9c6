"""Numerical laboratory for the even L_p-Minkowski problem on S^1 and S^2."""
from .bodies import (
    DiscreteMeasure,
    PolytopeBody,
    SupportField,
    cone_volume_measure,
    john_ellipsoid,
    lp_combination,
    surface_area_measure,
    volume,
    wulff_shape,
)
from .exceptions import (
    BarycenterError,
    ConvexityError,
    LineSearchError,
    NonConvergenceError,
    SingularLinearizationError,
    SolverError,
)
from .grid import SphereGrid, build_grid, integrate, symmetrize
from .continuation import (
    ClusterReport,
    ContinuationTrace,
    continuation_run,
    multiplicity_probe,
    p_sweep,
)
from .solver import (
    SolveReport,
    SpectrumReport,
    linearized_operator,
    solve_classical_minkowski,
    solve_lp_minkowski,
    spectrum,
)
from .verify import (
    InequalityReport,
    check_log_minkowski,
    check_lp_bm,
    check_lp_minkowski,
    solve_log_minkowski,
    variational_minimize,
)

__version__ = "0.1.0"

__all__ = [
    "BarycenterError",
    "ClusterReport",
    "ContinuationTrace",
    "ConvexityError",
    "DiscreteMeasure",
    "InequalityReport",
    "LineSearchError",
    "NonConvergenceError",
    "PolytopeBody",
    "SingularLinearizationError",
    "SolveReport",
    "SolverError",
    "SpectrumReport",
    "SphereGrid",
    "SupportField",
    "build_grid",
    "check_log_minkowski",
    "check_lp_bm",
    "check_lp_minkowski",
    "cone_volume_measure",
    "continuation_run",
    "integrate",
    "john_ellipsoid",
    "linearized_operator",
    "lp_combination",
    "multiplicity_probe",
    "p_sweep",
    "solve_classical_minkowski",
    "solve_log_minkowski",
    "solve_lp_minkowski",
    "spectrum",
    "surface_area_measure",
    "symmetrize",
    "variational_minimize",
    "volume",
    "wulff_shape",
]
