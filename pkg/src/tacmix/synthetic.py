"""Simulated drinking episodes with random (q1, q2) and Gaussian sensor noise."""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .episodes import Episode, write_episode_csv
from .galerkin import GalerkinSystem, as_parameter, assemble_galerkin, build_system
from .simulate import simulate_tac

# (onset h, rise h, peak BrAC, elimination per h): rise-peak-decay stand-ins
# for laboratory BrAC recordings
BRAC_PROFILES = (
    (0.25, 0.75, 0.080, 0.016),
    (0.50, 1.00, 0.060, 0.015),
    (0.00, 0.50, 0.100, 0.018),
    (1.00, 1.50, 0.050, 0.012),
    (0.25, 2.00, 0.120, 0.020),
    (0.50, 0.60, 0.040, 0.014),
    (0.00, 1.20, 0.070, 0.017),
    (0.75, 0.90, 0.090, 0.019),
    (0.30, 1.80, 0.065, 0.013),
)


@dataclass(frozen=True)
class TruthSpec:
    alpha: float = 2.0
    beta: float = 5.0
    sigma2: float = 1e-6
    n_truth_mesh: int = 256
    tau: float = 5.0 / 60.0
    horizon: float = 12.0

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError("Beta shape parameters must be positive")
        if self.sigma2 < 0:
            raise ValueError("sigma2 must be nonnegative")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.tau))


def brac_profile(onset, rise, peak, elim, times) -> np.ndarray:
    t = np.asarray(times, dtype=float) - onset
    up = peak * 0.5 * (1.0 - np.cos(np.pi * np.clip(t / rise, 0.0, 1.0)))
    down = peak - elim * (t - rise)
    return np.where(t < 0, 0.0, np.where(t <= rise, up, np.clip(down, 0.0, None)))


def brac_library(tau: float = 5.0 / 60.0, horizon: float = 12.0) -> list[np.ndarray]:
    """The bundled BrAC inputs as held series u_0..u_{n-1} on the grid k tau."""
    n = int(round(horizon / tau))
    times = tau * np.arange(n)
    return [brac_profile(*prof, times) for prof in BRAC_PROFILES]


def sample_beta(alpha: float, beta: float, n: int, seed) -> np.ndarray:
    if alpha <= 0 or beta <= 0:
        raise ValueError("Beta shape parameters must be positive")
    return np.random.default_rng(seed).beta(alpha, beta, size=n)


def beta_cdf_closed_form_2_5(x):
    """Beta(2, 5) cdf, 1 - 6(1-x)^5 + 5(1-x)^6 on [0, 1]."""
    s = 1.0 - np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
    return 1.0 - 6.0 * s**5 + 5.0 * s**6


def generate_episode(
    brac,
    q,
    spec: TruthSpec = TruthSpec(),
    seed=None,
    episode_id: str = "sim",
    galerkin: GalerkinSystem | None = None,
    rng: np.random.Generator | None = None,
) -> Episode:
    """tac_k = y_k(q) + e_k with the model run on the truth mesh and e_k ~ N(0, sigma2)."""
    q = as_parameter(q)
    g = galerkin if galerkin is not None else assemble_galerkin(spec.n_truth_mesh)
    brac = np.asarray(brac, dtype=float)
    y = simulate_tac(build_system(g, q, spec.tau), brac).y
    rng = rng if rng is not None else np.random.default_rng(seed)
    tac = y + np.sqrt(spec.sigma2) * rng.standard_normal(len(y))
    meta = {"q": [q.q1, q.q2], "seed": seed}
    return Episode(episode_id, spec.tau, brac.copy(), tac, meta)


@dataclass(frozen=True, eq=False)
class SyntheticDataset:
    episodes: list[Episode]
    q_true: np.ndarray  # (m, 2)
    seed: int
    spec: TruthSpec

    def manifest(self, paths: Sequence[str] | None = None) -> dict:
        eps = []
        for i, e in enumerate(self.episodes):
            entry = {"id": e.id, "q": [float(v) for v in self.q_true[i]], "spawn_index": i,
                     "input_index": e.metadata.get("input_index")}
            if paths is not None:
                entry["path"] = paths[i]
            eps.append(entry)
        return {"seed": self.seed, "m": len(self.episodes), "truth": asdict(self.spec), "episodes": eps}


def _episode_ids(m: int) -> list[str]:
    width = max(2, len(str(m)))
    return [f"ep{i + 1:0{width}d}" for i in range(m)]


def generate_from_parameters(
    q_values,
    input_library: Sequence[np.ndarray],
    spec: TruthSpec = TruthSpec(),
    seed: int = 0,
    threads: int = 1,
) -> SyntheticDataset:
    """Episodes for given true parameters; inputs are cycled through the library."""
    q_values = np.atleast_2d(np.asarray(q_values, dtype=float))
    if not len(input_library):
        raise ValueError("input library is empty")
    m = len(q_values)
    g = assemble_galerkin(spec.n_truth_mesh)
    children = np.random.SeedSequence(seed).spawn(m)
    ids = _episode_ids(m)

    def make(i: int) -> Episode:
        rng = np.random.default_rng(children[i])
        brac = input_library[i % len(input_library)]
        e = generate_episode(brac, q_values[i], spec, None, ids[i], g, rng)
        e.metadata.update(seed=seed, spawn_index=i, input_index=i % len(input_library))
        return e

    if threads <= 1:
        episodes = [make(i) for i in range(m)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            episodes = list(pool.map(make, range(m)))
    return SyntheticDataset(episodes, q_values, seed, spec)


def generate_dataset(
    m: int,
    input_library: Sequence[np.ndarray] | None = None,
    spec: TruthSpec = TruthSpec(),
    seed: int = 0,
    threads: int = 1,
) -> SyntheticDataset:
    """m episodes with (q1, q2) drawn i.i.d. from Beta(alpha, beta) x Beta(alpha, beta)."""
    if m < 1:
        raise ValueError("m must be >= 1")
    library = input_library if input_library is not None else brac_library(spec.tau, spec.horizon)
    # parameter draws use their own stream so they do not depend on noise length
    q = np.random.default_rng([seed, 0x51]).beta(spec.alpha, spec.beta, size=(m, 2))
    return generate_from_parameters(q, library, spec, seed, threads)


def write_dataset(ds: SyntheticDataset, directory: str | Path, extra: dict | None = None) -> Path:
    """Write one CSV per episode plus manifest.json; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for e in ds.episodes:
        write_episode_csv(e, directory / f"{e.id}.csv")
        paths.append(f"{e.id}.csv")
    doc = ds.manifest(paths)
    if extra:
        doc.update(extra)
    manifest = directory / "manifest.json"
    manifest.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest
