"""Randomized sample-average solvers for Bayesian inverse problems."""

__version__ = "0.1.0"

from .core import (
    CovarianceOperator,
    DenseCovariance,
    InverseProblem,
    LinearPto,
    PtoMap,
    SampledObjective,
    ScaledIdentityCovariance,
    SolveResult,
    cg_solve,
    evaluate_cost,
    evaluate_gradient,
    map_solve,
    map_solve_linear_form1,
    map_solve_linear_form2,
    map_solve_nonlinear,
)
from .randomize import (
    PerturbationEnsemble,
    RandomizationPlan,
    SketchDistribution,
    SketchEnsemble,
    assemble_precision,
    draw_perturbations,
    draw_sketch,
)
from .solvers import (
    MethodId,
    relative_error,
    solve,
    solve_all,
    solve_enkf,
    solve_right_sketch,
    solve_rma,
    solve_rma_rmap,
    solve_rmap,
    solve_rs_u1,
)
