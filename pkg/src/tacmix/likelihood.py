"""Mixed-effects likelihood over a grid of candidate parameter vectors.

Row i of the log-likelihood matrix holds log f_i(y_i; q_j) for every node j,
so the mixture log-likelihood of weights p is

    l(p) = sum_i log sum_j p_j exp(L_ij),

evaluated entirely in the log domain.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .distribution import ParameterGrid, check_simplex
from .episodes import Episode, common_tau
from .galerkin import GalerkinSystem, assemble_galerkin, build_system
from .simulate import simulate_many

log = logging.getLogger(__name__)

CACHE_ENV = "TACMIX_CACHE_DIR"
_MAGIC = b"TACMIXLL"


@dataclass(frozen=True)
class NoiseModel:
    sigma2: float = 1e-6
    family: str = "gaussian"

    def __post_init__(self):
        if not (self.sigma2 > 0 and math.isfinite(self.sigma2)):
            raise ValueError(f"sigma2 must be positive, got {self.sigma2!r}")
        if self.family != "gaussian":
            raise NotImplementedError(f"noise family {self.family!r} is not implemented")

    def log_density(self, residual) -> np.ndarray:
        r = np.asarray(residual, dtype=float)
        return -0.5 * math.log(2 * math.pi * self.sigma2) - r**2 / (2 * self.sigma2)


@dataclass(frozen=True, eq=False)
class LogLikelihoodMatrix:
    """m x M matrix of per-episode log node-likelihoods.

    ``ssr`` (sum of squared residuals) and ``n_obs`` are kept so the matrix
    can be rebuilt for another noise variance without re-simulating.
    """

    values: np.ndarray
    episode_ids: tuple[str, ...]
    grid: ParameterGrid | None = None
    n_mesh: int | None = None
    tau: float | None = None
    sigma2: float | None = None
    ssr: np.ndarray | None = None
    n_obs: np.ndarray | None = None
    content_hash: str | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def with_sigma2(self, sigma2: float) -> "LogLikelihoodMatrix":
        if self.ssr is None or self.n_obs is None:
            raise ValueError("residual sums are not stored; cannot change sigma2")
        values = gaussian_loglik_from_ssr(self.ssr, self.n_obs, sigma2)
        return LogLikelihoodMatrix(values, self.episode_ids, self.grid, self.n_mesh, self.tau,
                                   sigma2, self.ssr, self.n_obs, self.content_hash)

    def subset(self, rows: Sequence[int]) -> "LogLikelihoodMatrix":
        rows = list(rows)
        return LogLikelihoodMatrix(
            self.values[rows], tuple(self.episode_ids[i] for i in rows), self.grid, self.n_mesh,
            self.tau, self.sigma2,
            None if self.ssr is None else self.ssr[rows],
            None if self.n_obs is None else self.n_obs[rows],
            None,
        )


def gaussian_loglik_from_ssr(ssr: np.ndarray, n_obs: np.ndarray, sigma2: float) -> np.ndarray:
    n_obs = np.asarray(n_obs, dtype=float)[:, None]
    # overflow to -inf is reported by the finiteness check downstream
    with np.errstate(over="ignore", divide="ignore"):
        return -0.5 * n_obs * math.log(2 * math.pi * sigma2) - ssr / (2 * sigma2)


def _values(L) -> np.ndarray:
    v = L.values if isinstance(L, LogLikelihoodMatrix) else np.asarray(L, dtype=float)
    if v.ndim != 2:
        raise ValueError("log-likelihood matrix must be two-dimensional")
    return v


def residual_sums(
    episodes: Sequence[Episode],
    grid: ParameterGrid,
    n_mesh: int,
    galerkin: GalerkinSystem | None = None,
    threads: int = 1,
) -> np.ndarray:
    """Sum of squared residuals between each episode and each node's simulation."""
    if not episodes:
        raise ValueError("no episodes given")
    tau = common_tau(episodes)
    g = galerkin if galerkin is not None else assemble_galerkin(n_mesh)
    n_steps = max(e.n for e in episodes)
    U = np.zeros((len(episodes), n_steps))
    Yobs = np.zeros((len(episodes), n_steps))
    mask = np.zeros((len(episodes), n_steps), dtype=bool)
    for i, e in enumerate(episodes):
        U[i, : e.n] = e.brac
        Yobs[i, : e.n] = e.tac
        mask[i, : e.n] = True
    nodes = grid.nodes
    ssr = np.empty((len(episodes), len(nodes)))

    def fill(j: int) -> None:
        # each node's system is built once and reused for every episode
        sys = build_system(g, nodes[j], tau)
        Y = simulate_many(sys, U)
        r = np.where(mask, Yobs - Y, 0.0)
        ssr[:, j] = np.einsum("ik,ik->i", r, r)

    if threads <= 1:
        for j in range(len(nodes)):
            fill(j)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(fill, range(len(nodes))))
    return ssr


def log_node_likelihoods(
    episodes: Sequence[Episode],
    grid: ParameterGrid,
    n_mesh: int,
    noise: NoiseModel = NoiseModel(),
    galerkin: GalerkinSystem | None = None,
    threads: int = 1,
) -> LogLikelihoodMatrix:
    ssr = residual_sums(episodes, grid, n_mesh, galerkin, threads)
    n_obs = np.array([e.n for e in episodes])
    values = gaussian_loglik_from_ssr(ssr, n_obs, noise.sigma2)
    return LogLikelihoodMatrix(
        values, tuple(e.id for e in episodes), grid, int(n_mesh), common_tau(episodes),
        noise.sigma2, ssr, n_obs, content_hash(episodes, grid, n_mesh, noise.sigma2),
    )


def logsumexp(A: np.ndarray, axis: int) -> np.ndarray:
    """log sum exp along ``axis``; rows that are entirely -inf give -inf."""
    mx = A.max(axis=axis, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.exp(A - mx).sum(axis=axis, keepdims=True)) + mx
    return np.squeeze(out, axis=axis)


def _row_lse(p: np.ndarray, V: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        logp = np.log(p)
    return logsumexp(V + logp[None, :], axis=1)


def log_likelihood(p, L) -> float:
    """l(p) = sum_i logsumexp_j(log p_j + L_ij); zero weights drop out."""
    V = _values(L)
    p = check_simplex(p, V.shape[1])
    return float(np.sum(_row_lse(np.clip(p, 0.0, None), V)))


def responsibilities(p, L) -> np.ndarray:
    """w_ij = p_j exp(L_ij - lse_i(p)), the posterior node probabilities."""
    V = _values(L)
    p = np.clip(np.asarray(p, dtype=float), 0.0, None)
    with np.errstate(divide="ignore"):
        logp = np.log(p)
    A = V + logp[None, :]
    return np.exp(A - logsumexp(A, axis=1)[:, None])


def log_gradient(p, L) -> np.ndarray:
    """log of dl/dp_j, safe when the gradient itself would overflow."""
    V = _values(L)
    lse = _row_lse(np.clip(np.asarray(p, dtype=float), 0.0, None), V)
    return logsumexp(V - lse[:, None], axis=0)


def log_likelihood_gradient(p, L) -> np.ndarray:
    """dl/dp_j = sum_i exp(L_ij - lse_i(p))."""
    V = _values(L)
    p = check_simplex(p, V.shape[1])
    lse = _row_lse(np.clip(p, 0.0, None), V)
    return np.exp(V - lse[:, None]).sum(axis=0)


def content_hash(episodes: Sequence[Episode], grid: ParameterGrid, n_mesh: int, sigma2: float) -> str:
    h = hashlib.sha256()
    h.update(json.dumps({"grid": grid.to_dict(), "n_mesh": int(n_mesh), "sigma2": float(sigma2)},
                        sort_keys=True).encode())
    for e in episodes:
        h.update(e.id.encode())
        h.update(struct.pack("<d", e.tau))
        h.update(np.ascontiguousarray(e.brac, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(e.tac, dtype="<f8").tobytes())
    return h.hexdigest()


def save_matrix(L: LogLikelihoodMatrix, path: str | Path) -> Path:
    """Write header-length, JSON header, then row-major little-endian float64 payload.

    The payload is the log-likelihood matrix followed by the residual-sum matrix
    when present.
    """
    path = Path(path)
    m, M = L.shape
    header = {
        "shape": [m, M],
        "dtype": "<f8",
        "order": "C",
        "grid": None if L.grid is None else L.grid.to_dict(),
        "n_mesh": L.n_mesh,
        "tau": L.tau,
        "sigma2": L.sigma2,
        "episode_ids": list(L.episode_ids),
        "n_obs": None if L.n_obs is None else [int(n) for n in L.n_obs],
        "has_ssr": L.ssr is not None,
        "content_hash": L.content_hash,
    }
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    with path.open("wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(hb)))
        fh.write(hb)
        fh.write(np.ascontiguousarray(L.values, dtype="<f8").tobytes())
        if L.ssr is not None:
            fh.write(np.ascontiguousarray(L.ssr, dtype="<f8").tobytes())
    return path


def load_matrix(path: str | Path) -> LogLikelihoodMatrix:
    data = Path(path).read_bytes()
    if data[:8] != _MAGIC:
        raise ValueError(f"{path} is not a likelihood-matrix file")
    (hlen,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16 : 16 + hlen].decode("utf-8"))
    m, M = header["shape"]
    payload = np.frombuffer(data[16 + hlen :], dtype="<f8")
    values = payload[: m * M].reshape(m, M).copy()
    ssr = payload[m * M : 2 * m * M].reshape(m, M).copy() if header["has_ssr"] else None
    grid = None if header["grid"] is None else ParameterGrid.from_dict(header["grid"])
    n_obs = None if header["n_obs"] is None else np.array(header["n_obs"])
    return LogLikelihoodMatrix(values, tuple(header["episode_ids"]), grid, header["n_mesh"],
                               header["tau"], header["sigma2"], ssr, n_obs, header["content_hash"])


def cache_dir(default: str | Path | None = None) -> Path:
    return Path(os.environ.get(CACHE_ENV) or default or Path.home() / ".cache" / "tacmix")


def cached_log_node_likelihoods(
    episodes: Sequence[Episode],
    grid: ParameterGrid,
    n_mesh: int,
    noise: NoiseModel = NoiseModel(),
    directory: str | Path | None = None,
    threads: int = 1,
) -> tuple[LogLikelihoodMatrix, bool]:
    """Load the matrix from the content-addressed cache or compute and store it."""
    key = content_hash(episodes, grid, n_mesh, noise.sigma2)
    d = cache_dir(directory)
    path = d / f"{key}.llm"
    if path.exists():
        log.info("likelihood cache hit %s", key)
        return load_matrix(path), True
    log.info("likelihood cache miss %s", key)
    L = log_node_likelihoods(episodes, grid, n_mesh, noise, threads=threads)
    d.mkdir(parents=True, exist_ok=True)
    save_matrix(L, path)
    return L, False
