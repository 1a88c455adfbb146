"""First-order Melnikov analysis of two-zone piecewise-smooth ODE systems."""
from __future__ import annotations

from .builtins import BUILTIN_NAMES, ClosedFormLibrary, builtin_model
from .expr import Expression, ExpressionError, parse_expression
from .flow import (
    FlowError,
    GrazingError,
    NoReturnError,
    dt_deps,
    dt_dy,
    find_return,
    fundamental_matrix,
    integrate_side,
    omega,
    variational_return,
)
from .melnikov import (
    CoefficientMap,
    CrossingData,
    MelnikovError,
    MelnikovScan,
    SingularBetaError,
    coefficient_map,
    crossing_data,
    ls_reduction,
    melnikov,
    melnikov_scan,
    projector,
)
from .model import (
    H1Report,
    ModelError,
    PiecewiseSystem,
    SeedManifold,
    StatePoint,
    Tolerances,
    check_h1,
    dump_model,
    load_model,
    seed_point,
)
from .validate import (
    ConvergenceTable,
    PeriodicOrbit,
    ValidationError,
    closure_gap,
    convergence_study,
    displacement,
    refine_periodic_orbit,
)
from .zeros import (
    InfeasibleTargetError,
    Realization,
    WronskianTable,
    ZeroCertificate,
    ZeroTolerances,
    ect_check,
    find_simple_zeros,
    realize_zero_count,
    wronskian,
)

__version__ = "0.1.0"

__all__ = [
    "BUILTIN_NAMES",
    "ClosedFormLibrary",
    "CoefficientMap",
    "ConvergenceTable",
    "CrossingData",
    "Expression",
    "ExpressionError",
    "FlowError",
    "GrazingError",
    "H1Report",
    "InfeasibleTargetError",
    "MelnikovError",
    "MelnikovScan",
    "ModelError",
    "NoReturnError",
    "PeriodicOrbit",
    "PiecewiseSystem",
    "Realization",
    "SeedManifold",
    "SingularBetaError",
    "StatePoint",
    "Tolerances",
    "ValidationError",
    "WronskianTable",
    "ZeroCertificate",
    "ZeroTolerances",
    "builtin_model",
    "check_h1",
    "closure_gap",
    "coefficient_map",
    "convergence_study",
    "crossing_data",
    "displacement",
    "dt_deps",
    "dt_dy",
    "dump_model",
    "ect_check",
    "find_return",
    "find_simple_zeros",
    "fundamental_matrix",
    "integrate_side",
    "load_model",
    "ls_reduction",
    "melnikov",
    "melnikov_scan",
    "omega",
    "parse_expression",
    "projector",
    "realize_zero_count",
    "refine_periodic_orbit",
    "seed_point",
    "variational_return",
    "wronskian",
]
