"""Sparse recovery in overcomplete composite-frame dictionaries.

Hierarchical conditionally Gaussian models with generalized gamma
hyperpriors, solved by alternating coefficient/variance minimization
with early-stopped Krylov inner solves and convex-to-nonconvex hybrid
parameter handoffs.
"""

from .hyperprior import (
    HyperParams,
    ParameterError,
    PenaltyValue,
    compatible_scale,
    convexity_threshold,
    objective,
    penalty,
    phi_zero,
    sensitivity_weights,
    theta_update,
    theta_update_batch,
)
from .linops import (
    CompositeDictionary,
    LinearMap,
    column_norms_squared,
    compose,
    concat_horizontal,
    cumsum,
    dct2_synthesis,
    dct_synthesis,
    dense,
    gaussian_blur,
    identity,
    kron2d,
    materialize,
    scale_columns,
    scale_rows,
)
from .solver import (
    CglsResult,
    IasState,
    PhaseSwitch,
    Problem,
    SolveReport,
    StoppingRule,
    after_fixed,
    alpha_update,
    cgls,
    hybrid_global,
    hybrid_local,
    ias_run,
    on_theta_rtol,
    whiten,
    whichever_first,
)

__version__ = "0.1.0"

__all__ = [
    "CglsResult",
    "CompositeDictionary",
    "HyperParams",
    "IasState",
    "LinearMap",
    "ParameterError",
    "PenaltyValue",
    "PhaseSwitch",
    "Problem",
    "SolveReport",
    "StoppingRule",
    "after_fixed",
    "alpha_update",
    "cgls",
    "column_norms_squared",
    "compatible_scale",
    "compose",
    "concat_horizontal",
    "convexity_threshold",
    "cumsum",
    "dct2_synthesis",
    "dct_synthesis",
    "dense",
    "gaussian_blur",
    "hybrid_global",
    "hybrid_local",
    "ias_run",
    "identity",
    "kron2d",
    "materialize",
    "objective",
    "on_theta_rtol",
    "penalty",
    "phi_zero",
    "scale_columns",
    "scale_rows",
    "sensitivity_weights",
    "theta_update",
    "theta_update_batch",
    "whiten",
    "whichever_first",
]
