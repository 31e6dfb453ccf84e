"""A-optimal sensor placement for Bayesian linear inverse problems."""

from .aoptimal import (
    Design,
    LowRankObjective,
    Workspace,
    assemble,
    gradient,
    hessian,
    hessian_matvec,
    lipschitz_constants,
    objective,
    posterior_mean,
    posterior_pointwise_variance,
)
from .lowrank import QRModel, block_concat, exact_qr, randomized_qr
from .model import (
    DensePrior,
    DiagonalNoise,
    GridPrior,
    HelmholtzModel,
    LinearMap,
    build_forward_stack,
    calibrate_noise,
    preconditioned_operator,
    synthetic_bundle,
)
from .optimality import (
    Classification,
    OptimalityReport,
    apriori_classify,
    classify,
    fw_gap,
    lmo,
    verify_global,
)
from .solve import (
    ContinuationResult,
    SolverConfig,
    SolveResult,
    in_constraint_set,
    p_continuation,
    p_norm,
    project_capped_simplex,
    solve_convex,
    solve_p_step,
)

__version__ = "0.1.0"
