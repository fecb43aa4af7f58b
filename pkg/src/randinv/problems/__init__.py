"""Benchmark inverse problems."""

from .advdiff import AdvDiffPropagator, make_advdiff
from .deconv import deconv_matrix, make_deconv1d
from .dense import make_random_linear
from .nlheat import HeatPto, lower_half_cells, make_nlheat
from .priors import (
    BiLaplacianPrior,
    anisotropic_tensor,
    diffusion_operator,
    make_bilaplacian_prior,
    make_identity_prior,
)
from .spec import PROBLEMS, ProblemSpec, export_grid_csv, make_problem
from .xray import make_xray, radon_matrix, shepp_logan

__all__ = [
    "AdvDiffPropagator", "BiLaplacianPrior", "HeatPto", "PROBLEMS", "ProblemSpec",
    "anisotropic_tensor", "deconv_matrix", "diffusion_operator", "export_grid_csv",
    "lower_half_cells", "make_advdiff", "make_bilaplacian_prior", "make_deconv1d",
    "make_identity_prior", "make_nlheat", "make_problem", "make_random_linear", "make_xray",
    "radon_matrix", "shepp_logan",
]
