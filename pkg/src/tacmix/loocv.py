"""Leave-one-out cross-validation and TAC prediction bands.

Fit the mixing distribution on m - 1 episodes, draw parameter vectors from
it, push the held-out BrAC through the model for each draw, and summarize
the ensemble by its pointwise mean and 2.5/97.5 percentiles.  Peak TAC,
time of peak and AUC get the same treatment.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .distribution import DiscreteDistribution, sample_indices
from .episodes import Episode
from .galerkin import GalerkinSystem, assemble_galerkin, build_system
from .likelihood import NoiseModel, log_node_likelihoods
from .mle import EstimatorConfig, estimate
from .simulate import simulate_tac

STATISTICS = ("peak_tac", "peak_time", "auc")


def loocv_splits(episodes: Sequence[Episode]) -> list[tuple[list[Episode], Episode]]:
    episodes = list(episodes)
    if len(episodes) < 2:
        raise ValueError("leave-one-out needs at least two episodes")
    return [(episodes[:i] + episodes[i + 1 :], episodes[i]) for i in range(len(episodes))]


@dataclass(frozen=True, eq=False)
class TacPrediction:
    times: np.ndarray  # tau, 2 tau, ..., n tau
    mean_curve: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    n_samples: int
    tau: float
    ensemble: np.ndarray | None = None  # (n_samples, n)
    level: float = 0.95


def percentile_band(values: np.ndarray, level: float = 0.95, axis: int = 0):
    """Equal-tailed band by linear interpolation between order statistics."""
    tail = 50.0 * (1.0 - level)
    lo, hi = np.percentile(values, [tail, 100.0 - tail], axis=axis, method="linear")
    return lo, hi


def predict_tac(
    d: DiscreteDistribution,
    test_brac,
    n_samples: int = 100,
    n_mesh: int = 128,
    tau: float = 5.0 / 60.0,
    seed: int = 0,
    galerkin: GalerkinSystem | None = None,
    keep_ensemble: bool = True,
    level: float = 0.95,
) -> TacPrediction:
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    g = galerkin if galerkin is not None else assemble_galerkin(n_mesh)
    u = np.asarray(test_brac, dtype=float)
    idx = sample_indices(d, n_samples, seed)
    nodes = d.grid.nodes
    curves = {}
    for j in np.unique(idx):
        curves[j] = simulate_tac(build_system(g, nodes[j], tau), u).y
    ensemble = np.stack([curves[j] for j in idx])
    lo, hi = percentile_band(ensemble, level)
    return TacPrediction(
        times=tau * np.arange(1, len(u) + 1),
        mean_curve=ensemble.mean(axis=0),
        lower=lo,
        upper=hi,
        n_samples=n_samples,
        tau=tau,
        ensemble=ensemble if keep_ensemble else None,
        level=level,
    )


@dataclass(frozen=True)
class CurveStats:
    peak_tac: float
    peak_time: float
    auc: float


def summary_stats(curve, tau: float, t0: float = 0.0) -> CurveStats:
    """Peak, time of the first peak, and trapezoidal AUC for samples at t0 + k tau."""
    y = np.asarray(curve, dtype=float)
    if y.size == 0:
        raise ValueError("curve is empty")
    k = int(np.argmax(y))
    auc = float(tau * (y.sum() - 0.5 * (y[0] + y[-1]))) if y.size > 1 else 0.0
    return CurveStats(float(y[k]), float(t0 + k * tau), auc)


def tac_curve_stats(tac, tau: float) -> CurveStats:
    """Stats of a TAC series observed at tau..n tau, anchored at y(0) = 0."""
    return summary_stats(np.concatenate([[0.0], np.asarray(tac, dtype=float)]), tau)


@dataclass(frozen=True)
class StatBand:
    estimate: float
    lower: float
    upper: float

    def contains(self, value: float) -> bool:
        return self.lower <= value <= self.upper


def band_stats(pred: TacPrediction, tau: float | None = None, estimate: str = "mean-curve") -> dict[str, StatBand]:
    """Per-statistic estimate and band from the retained ensemble.

    The band holds the percentiles of each sample curve's statistic.  The
    estimate is the statistic of the ensemble-mean curve by default;
    ``estimate="sample-mean"`` averages the per-sample statistics instead.
    """
    if pred.ensemble is None:
        raise ValueError("prediction has no retained ensemble")
    tau = pred.tau if tau is None else tau
    per_sample = [tac_curve_stats(c, tau) for c in pred.ensemble]
    mean_stats = tac_curve_stats(pred.mean_curve, tau)
    out = {}
    for name in STATISTICS:
        vals = np.array([getattr(s, name) for s in per_sample])
        lo, hi = percentile_band(vals, pred.level)
        if estimate == "mean-curve":
            est = getattr(mean_stats, name)
        elif estimate == "sample-mean":
            est = float(vals.mean())
        else:
            raise ValueError(f"unknown estimate rule {estimate!r}")
        out[name] = StatBand(float(est), float(lo), float(hi))
    return out


@dataclass(frozen=True, eq=False)
class FoldResult:
    episode_id: str
    prediction: TacPrediction
    bands: dict[str, StatBand]
    measured: CurveStats
    weights: np.ndarray | None = None


def coverage_report(folds: Sequence[FoldResult]) -> dict:
    """Per-fold inside/outside indicators and aggregate coverage per statistic."""
    rows = []
    counts = {name: 0 for name in STATISTICS}
    for f in folds:
        row = {"episode": f.episode_id}
        for name in STATISTICS:
            inside = f.bands[name].contains(getattr(f.measured, name))
            row[name] = inside
            counts[name] += int(inside)
        rows.append(row)
    n = len(rows)
    return {
        "folds": rows,
        "coverage": {name: (counts[name] / n if n else None) for name in STATISTICS},
        "n_folds": n,
    }


def stats_table(folds: Sequence[FoldResult]) -> dict[str, list[dict]]:
    """Rows shaped like the peak / peak-time / AUC tables: one per held-out episode."""
    tables = {}
    for name in STATISTICS:
        rows = []
        for i, f in enumerate(folds, start=1):
            b = f.bands[name]
            rows.append({
                "drinking_episode": i,
                "episode_id": f.episode_id,
                "measured": getattr(f.measured, name),
                "estimated": b.estimate,
                "band_lower": b.lower,
                "band_upper": b.upper,
            })
        tables[name] = rows
    return tables


def run_loocv(
    episodes: Sequence[Episode],
    grid,
    n_mesh: int = 128,
    noise=None,
    cfg=None,
    n_samples: int = 100,
    seed: int = 0,
    threads: int = 1,
    L=None,
    level: float = 0.95,
    estimate_rule: str = "mean-curve",
) -> list[FoldResult]:
    """Full leave-one-out loop.

    Likelihood rows depend only on their own episode, so one matrix over all
    episodes serves every fold by row selection.
    """
    episodes = list(episodes)
    loocv_splits(episodes)  # validates the episode count
    noise = noise or NoiseModel()
    cfg = cfg or EstimatorConfig()
    g = assemble_galerkin(n_mesh)
    if L is None:
        L = log_node_likelihoods(episodes, grid, n_mesh, noise, galerkin=g, threads=threads)
    fold_seeds = np.random.SeedSequence(seed).spawn(len(episodes))

    def fold(i: int) -> FoldResult:
        test = episodes[i]
        train_rows = [k for k in range(len(episodes)) if k != i]
        fit = estimate(L.subset(train_rows), cfg)
        pred = predict_tac(fit.distribution, test.brac, n_samples, n_mesh, test.tau,
                           fold_seeds[i], galerkin=g, level=level)
        return FoldResult(test.id, pred, band_stats(pred, estimate=estimate_rule),
                          tac_curve_stats(test.tac, test.tau), fit.weights)

    if threads <= 1:
        return [fold(i) for i in range(len(episodes))]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fold, range(len(episodes))))
