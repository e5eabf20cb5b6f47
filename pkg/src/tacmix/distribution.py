"""Discrete probability measures on a rectangular parameter grid."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.special import betainc

POSITIVITY_EPS = 1e-6
SIMPLEX_TOL = 1e-12


@dataclass(frozen=True)
class ParameterGrid:
    """Uniform m1 x m2 lattice over [a1, b1] x [a2, b2].

    Node j = i2 * m1 + i1 (row-major with q1 varying fastest).  A zero lower
    bound is clamped to ``POSITIVITY_EPS`` because both parameters must stay
    positive.
    """

    bounds: tuple[tuple[float, float], tuple[float, float]]
    m1: int
    m2: int

    def __post_init__(self):
        if self.m1 < 1 or self.m2 < 1:
            raise ValueError("m1 and m2 must be >= 1")
        for lo, hi in self.bounds:
            if not (np.isfinite(lo) and np.isfinite(hi)) or lo < 0 or hi <= lo:
                raise ValueError(f"invalid parameter box side [{lo}, {hi}]")

    @property
    def M(self) -> int:
        return self.m1 * self.m2

    def axis(self, which: int) -> np.ndarray:
        lo, hi = self.bounds[which]
        count = (self.m1, self.m2)[which]
        if count == 1:
            vals = np.array([(lo + hi) / 2.0])
        else:
            vals = np.linspace(lo, hi, count)
        vals[0] = max(vals[0], POSITIVITY_EPS)
        return vals

    @property
    def q1_values(self) -> np.ndarray:
        return self.axis(0)

    @property
    def q2_values(self) -> np.ndarray:
        return self.axis(1)

    @property
    def nodes(self) -> np.ndarray:
        """(M, 2) array of node coordinates in grid order."""
        g1, g2 = np.meshgrid(self.q1_values, self.q2_values, indexing="xy")
        return np.column_stack([g1.ravel(), g2.ravel()])

    def to_dict(self) -> dict:
        return {
            "bounds": [list(map(float, b)) for b in self.bounds],
            "m1": self.m1,
            "m2": self.m2,
            "ordering": "row-major, q1 fastest",
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ParameterGrid":
        return make_grid(d["bounds"], d["m1"], d["m2"])


def make_grid(bounds, m1: int, m2: int) -> ParameterGrid:
    (a1, b1), (a2, b2) = bounds
    return ParameterGrid(((float(a1), float(b1)), (float(a2), float(b2))), int(m1), int(m2))


def check_simplex(p, M: int | None = None, tol: float = SIMPLEX_TOL) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim != 1:
        raise ValueError("weights must be a vector")
    if M is not None and p.size != M:
        raise ValueError(f"expected {M} weights, got {p.size}")
    if not np.all(np.isfinite(p)) or np.any(p < -tol) or abs(p.sum() - 1.0) > tol:
        raise ValueError(f"weights are off the simplex (sum={p.sum()!r}, min={p.min()!r})")
    return p


@dataclass(frozen=True, eq=False)
class DiscreteDistribution:
    grid: ParameterGrid
    weights: np.ndarray

    def __post_init__(self):
        w = check_simplex(self.weights, self.grid.M)
        object.__setattr__(self, "weights", np.clip(w, 0.0, None))

    def cdf(self, q1, q2):
        return cdf(self, (q1, q2))

    def support(self, eps: float = 0.0) -> np.ndarray:
        return np.flatnonzero(self.weights > eps)

    def to_dict(self) -> dict:
        return {"grid": self.grid.to_dict(), "weights": [float(w) for w in self.weights]}

    @classmethod
    def from_dict(cls, d: dict) -> "DiscreteDistribution":
        return cls(ParameterGrid.from_dict(d["grid"]), np.array(d["weights"], dtype=float))


def point_mass(grid: ParameterGrid, index: int) -> DiscreteDistribution:
    w = np.zeros(grid.M)
    w[index] = 1.0
    return DiscreteDistribution(grid, w)


def cdf(d: DiscreteDistribution, point) -> float | np.ndarray:
    """Joint cdf F(q1, q2) = P(Q1 <= q1, Q2 <= q2); broadcasts over arrays of points."""
    x, y = point
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    # cumulate on the lattice, then look up the last row/column <= the point
    W = d.weights.reshape(d.grid.m2, d.grid.m1)
    C = np.cumsum(np.cumsum(W, axis=0), axis=1)
    i1 = np.searchsorted(d.grid.q1_values, x, side="right") - 1
    i2 = np.searchsorted(d.grid.q2_values, y, side="right") - 1
    inside = (i1 >= 0) & (i2 >= 0)
    val = np.where(inside, C[np.clip(i2, 0, None), np.clip(i1, 0, None)], 0.0)
    val = np.minimum(val, 1.0)
    return float(val) if val.ndim == 0 else val


def cdf_at_nodes(d: DiscreteDistribution) -> np.ndarray:
    W = d.weights.reshape(d.grid.m2, d.grid.m1)
    return np.minimum(np.cumsum(np.cumsum(W, axis=0), axis=1).ravel(), 1.0)


def sample_indices(d: DiscreteDistribution, n: int, seed: int) -> np.ndarray:
    """Categorical draws by inverse cdf; Philox keeps streams counter-based."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.Generator(np.random.Philox(seed))
    cum = np.cumsum(d.weights)
    cum /= cum[-1]
    u = rng.random(n)
    idx = np.searchsorted(cum, u, side="right")
    last = int(np.flatnonzero(d.weights > 0)[-1])
    return np.minimum(idx, last)


def sample(d: DiscreteDistribution, n: int, seed: int) -> np.ndarray:
    """Draw n parameter vectors (rows of an (n, 2) array)."""
    return d.grid.nodes[sample_indices(d, n, seed)]


@dataclass(frozen=True, eq=False)
class Moments:
    mean: np.ndarray
    cov: np.ndarray
    corr: float | None  # None when a marginal has zero variance

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "covariance": self.cov.tolist(),
            "correlation": self.corr,
        }


def moments(d: DiscreteDistribution) -> Moments:
    q = d.grid.nodes
    p = d.weights
    mean = p @ q
    dev = q - mean
    cov = (dev * p[:, None]).T @ dev
    v1, v2 = cov[0, 0], cov[1, 1]
    tiny = 1e-300
    corr = None if (v1 <= tiny or v2 <= tiny) else float(cov[0, 1] / np.sqrt(v1 * v2))
    return Moments(mean, cov, corr)


def beta_cdf(alpha: float, beta: float) -> Callable:
    def F(x):
        return betainc(alpha, beta, np.clip(np.asarray(x, dtype=float), 0.0, 1.0))

    return F


def beta_product_cdf(alpha: float = 2.0, beta: float = 5.0) -> Callable:
    """Joint cdf of two independent Beta(alpha, beta) coordinates."""
    F = beta_cdf(alpha, beta)

    def joint(q1, q2):
        return F(q1) * F(q2)

    return joint


def cell_masses(grid: ParameterGrid, reference: Callable) -> np.ndarray:
    """Reference probability of each node's rectangular Voronoi cell.

    Outer cells extend to infinity so the masses sum to the reference's
    total probability.
    """
    def edges(v):
        mid = (v[:-1] + v[1:]) / 2.0
        return np.concatenate([[-np.inf], mid, [np.inf]])

    e1, e2 = edges(grid.q1_values), edges(grid.q2_values)
    X, Y = np.meshgrid(e1, e2, indexing="xy")
    F = np.asarray(reference(X, Y), dtype=float)
    mass = F[1:, 1:] - F[:-1, 1:] - F[1:, :-1] + F[:-1, :-1]
    return mass.ravel()


@dataclass(frozen=True)
class Distance:
    D: float
    D_bar_M: float
    D_bar_N: float | None
    mode: str

    def to_dict(self) -> dict:
        return {"D": self.D, "D_bar_M": self.D_bar_M, "D_bar_N": self.D_bar_N, "mode": self.mode}


def distance_D(
    d: DiscreteDistribution, reference: Callable, mode: str = "cdf", n_mesh: int | None = None
) -> Distance:
    """Sum of squared node-wise differences against a reference cdf.

    ``mode="cdf"`` compares cdf values at the nodes; ``mode="cell-mass"``
    compares the weights with the reference mass of each node's cell.
    """
    if mode == "cdf":
        nodes = d.grid.nodes
        est = cdf_at_nodes(d)
        ref = np.asarray(reference(nodes[:, 0], nodes[:, 1]), dtype=float)
    elif mode == "cell-mass":
        est = d.weights
        ref = cell_masses(d.grid, reference)
    else:
        raise ValueError(f"unknown D mode {mode!r}")
    D = float(np.sum((est - ref) ** 2))
    return Distance(D, D / d.grid.M, None if n_mesh is None else D / n_mesh, mode)


def marginal_density_weights(d: DiscreteDistribution, axis: str | int) -> np.ndarray:
    """Weight per gridline of ``axis`` (q1 or q2), summing out the other."""
    W = d.weights.reshape(d.grid.m2, d.grid.m1)
    if axis in ("q1", 0):
        return W.sum(axis=0)
    if axis in ("q2", 1):
        return W.sum(axis=1)
    raise ValueError(f"axis must be 'q1' or 'q2', got {axis!r}")


def save_distribution(d: DiscreteDistribution, path: str | Path, extra: dict | None = None) -> Path:
    path = Path(path)
    doc = d.to_dict()
    if extra:
        doc.update(extra)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def load_distribution(path: str | Path) -> DiscreteDistribution:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if "distribution" in doc:
        doc = doc["distribution"]
    return DiscreteDistribution.from_dict(doc)


def write_cdf_csv(d: DiscreteDistribution, path: str | Path) -> Path:
    nodes = d.grid.nodes
    F = cdf_at_nodes(d)
    rows = ["q1,q2,weight,cdf"]
    rows += [f"{q[0]!r},{q[1]!r},{w!r},{f!r}" for q, w, f in zip(nodes.tolist(), d.weights.tolist(), F.tolist())]
    Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8")
    return Path(path)


def write_marginals_csv(d: DiscreteDistribution, path: str | Path) -> Path:
    rows = ["axis,value,weight"]
    for name, vals in (("q1", d.grid.q1_values), ("q2", d.grid.q2_values)):
        w = marginal_density_weights(d, name)
        rows += [f"{name},{v!r},{x!r}" for v, x in zip(vals.tolist(), w.tolist())]
    Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8")
    return Path(path)
