"""Nonparametric estimation of the random-parameter distribution in a
transdermal alcohol diffusion model, with forward simulation and
leave-one-out prediction bands."""

__version__ = "0.1.0"

from .distribution import DiscreteDistribution, ParameterGrid, make_grid  # noqa: E402
from .episodes import Episode  # noqa: E402
from .galerkin import ParameterVector, assemble_galerkin, build_system  # noqa: E402
from .likelihood import LogLikelihoodMatrix, NoiseModel, log_node_likelihoods  # noqa: E402
from .mle import EstimatorConfig, FitResult, estimate, sparsify  # noqa: E402
from .simulate import simulate_tac  # noqa: E402

__all__ = [
    "DiscreteDistribution",
    "Episode",
    "EstimatorConfig",
    "FitResult",
    "LogLikelihoodMatrix",
    "NoiseModel",
    "ParameterGrid",
    "ParameterVector",
    "assemble_galerkin",
    "build_system",
    "estimate",
    "log_node_likelihoods",
    "make_grid",
    "simulate_tac",
    "sparsify",
]
