"""Simulation studies: consistency in m, grid and mesh refinement, LOOCV checks.

Datasets for different m share a seed and are nested (the first m episodes
of the largest dataset), and likelihood rows depend only on their own
episode, so one matrix over the largest dataset serves every m.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .distribution import (
    Distance,
    DiscreteDistribution,
    ParameterGrid,
    beta_product_cdf,
    distance_D,
    make_grid,
)
from .likelihood import NoiseModel, log_node_likelihoods
from .loocv import FoldResult, coverage_report, run_loocv
from .mle import EstimatorConfig, FitResult, estimate, sparsify
from .synthetic import TruthSpec, brac_library, generate_dataset, generate_from_parameters

UNIT_BOX = ((0.0, 1.0), (0.0, 1.0))


@dataclass(frozen=True, eq=False)
class ConsistencyRecord:
    m: int
    seed: int
    M: int
    n_mesh: int
    distance: Distance
    fit: FitResult  # after sparsify
    full_loglik: float  # before sparsify

    @property
    def D(self) -> float:
        return self.distance.D

    @property
    def sparsify_loss(self) -> float:
        return self.full_loglik - self.fit.final_loglik

    def to_dict(self) -> dict:
        return {
            "m": self.m, "seed": self.seed, "M": self.M, "N": self.n_mesh, **self.distance.to_dict(),
            "support_size": self.fit.support_size, "sparsified": self.fit.sparsified,
            "sparsify_failed": self.fit.sparsify_failed, "sparsify_loss": self.sparsify_loss,
            "converged": self.fit.converged, "iterations": self.fit.iterations,
        }


def consistency_runs(
    m_values: Sequence[int],
    seed: int,
    grid: ParameterGrid,
    n_mesh: int,
    spec: TruthSpec = TruthSpec(),
    mode: str = "cdf",
    cfg: EstimatorConfig = EstimatorConfig(),
    threads: int = 1,
) -> list[ConsistencyRecord]:
    """Fit Beta(alpha, beta)^2 data for each m under one seed and score against the truth cdf."""
    ds = generate_dataset(max(m_values), spec=spec, seed=seed, threads=threads)
    L = log_node_likelihoods(ds.episodes, grid, n_mesh, NoiseModel(spec.sigma2), threads=threads)
    reference = beta_product_cdf(spec.alpha, spec.beta)
    out = []
    for m in m_values:
        Lm = L.subset(range(m))
        full = estimate(Lm, cfg)
        fit = sparsify(full, Lm)
        out.append(ConsistencyRecord(m, seed, grid.M, n_mesh, distance_D(fit.distribution, reference, mode, n_mesh),
                                     fit, full.final_loglik))
    return out


def median_by(records: Sequence[ConsistencyRecord], key: str, stat: str = "D") -> dict:
    groups: dict = {}
    for r in records:
        value = r.distance.to_dict()[stat]
        groups.setdefault(getattr(r, key), []).append(value)
    return {k: float(np.median(v)) for k, v in sorted(groups.items())}


def square_grid(M: int, bounds=UNIT_BOX) -> ParameterGrid:
    side = int(round(np.sqrt(M)))
    if side * side != M:
        raise ValueError(f"M={M} is not a perfect square")
    return make_grid(bounds, side, side)


@dataclass(frozen=True)
class TwoPointDesign:
    """Known two-point truth on grid nodes for the leave-one-out check."""

    side: int = 10
    nodes: tuple[int, int] = (2 * 10 + 3, 6 * 10 + 5)
    weight: float = 0.5
    m: int = 9
    n_mesh: int = 64
    n_samples: int = 100
    sigma2: float = 1e-6

    def grid(self) -> ParameterGrid:
        return make_grid(UNIT_BOX, self.side, self.side)

    def truth(self) -> DiscreteDistribution:
        w = np.zeros(self.side**2)
        w[list(self.nodes)] = (self.weight, 1.0 - self.weight)
        return DiscreteDistribution(self.grid(), w)


def loocv_on_distribution(
    truth: DiscreteDistribution,
    m: int,
    seed: int,
    n_mesh: int = 64,
    n_samples: int = 100,
    sigma2: float = 1e-6,
    spec: TruthSpec | None = None,
    threads: int = 1,
) -> tuple[list[FoldResult], dict, np.ndarray]:
    """Draw m episode parameters from ``truth``, simulate, and run leave-one-out on its grid."""
    spec = spec or TruthSpec(sigma2=sigma2)
    u = np.random.default_rng([seed, 9]).random(m)
    idx = np.searchsorted(np.cumsum(truth.weights), u * truth.weights.sum(), side="right")
    idx = np.minimum(idx, truth.grid.M - 1)
    q = truth.grid.nodes[idx]
    ds = generate_from_parameters(q, brac_library(spec.tau, spec.horizon), spec, seed, threads)
    folds = run_loocv(ds.episodes, truth.grid, n_mesh, NoiseModel(sigma2), n_samples=n_samples,
                      seed=seed, threads=threads)
    return folds, coverage_report(folds), idx


__all__ = [
    "ConsistencyRecord",
    "TwoPointDesign",
    "consistency_runs",
    "loocv_on_distribution",
    "median_by",
    "square_grid",
]
