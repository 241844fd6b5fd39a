"""Multi-step backward FBSDE solver on spectral sparse grids."""

from .basis1d import cgl_nodes, gh_rule, hier_cheb_eval
from .errors import (
    InvalidParameterError,
    NumericError,
    SolverDivergenceError,
    UnsupportedOperationError,
)
from .indices import basis_index_set, combination_coefficient, level_set
from .interpolation import (
    DomainBox,
    SparseGrid,
    SparseInterpolant,
    build_grid,
    dump_interpolant,
    fast_transform,
    interp_eval,
    load_interpolant,
)
from .problems import (
    FbsdeProblem,
    example1,
    example2,
    example3,
    feynman_kac_residual,
    get_problem,
    validate_problem,
)
from .quadrature import GhSparseRule, build_gh_rule, conditional_expectation
from .solver import (
    ErrorReport,
    SolverConfig,
    SolveResult,
    measure_errors,
    multistep_coeffs,
    propagate_domains,
    solve,
)

__version__ = "0.1.0"

__all__ = [
    "InvalidParameterError",
    "NumericError",
    "SolverDivergenceError",
    "UnsupportedOperationError",
    "level_set",
    "combination_coefficient",
    "basis_index_set",
    "cgl_nodes",
    "gh_rule",
    "hier_cheb_eval",
    "DomainBox",
    "SparseGrid",
    "SparseInterpolant",
    "build_grid",
    "fast_transform",
    "interp_eval",
    "dump_interpolant",
    "load_interpolant",
    "GhSparseRule",
    "build_gh_rule",
    "conditional_expectation",
    "SolverConfig",
    "SolveResult",
    "ErrorReport",
    "multistep_coeffs",
    "propagate_domains",
    "solve",
    "measure_errors",
    "FbsdeProblem",
    "example1",
    "example2",
    "example3",
    "feynman_kac_residual",
    "validate_problem",
    "get_problem",
]
