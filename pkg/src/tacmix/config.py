"""Run configuration shared by the command-line stages.

A ``RunConfig`` is validated on construction.  Its scientific fields are
echoed into every artifact together with a short hash so that outputs can
be traced back to the settings that produced them.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .distribution import ParameterGrid, make_grid
from .galerkin import MAX_MESH
from .likelihood import NoiseModel
from .mle import ALGORITHMS, EstimatorConfig
from .synthetic import TruthSpec

D_MODES = ("cdf", "cell-mass")
DEFAULT_M_VALUES = (1, 3, 7, 9, 16, 42)

# runtime knobs that never change results; kept out of the hash and the echo
_RUNTIME_FIELDS = ("threads", "cache_dir")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    bounds: tuple[tuple[float, float], tuple[float, float]] = ((0.0, 1.0), (0.0, 1.0))
    m1: int = 20
    m2: int = 20
    n_mesh: int = 128
    tau: float = 5.0 / 60.0  # hours
    sigma2: float = 1e-6
    estimate_sigma2: bool = False
    # estimator
    algorithm: str = "em"
    tol: float = 1e-9
    max_iter: int = 5000
    prune_eps: float = 1e-8
    gap_tol: float = 1e-11
    sparsify: bool = True
    sparsify_tol: float = 1e-6
    # synthetic truth
    m: int = 9
    m_values: tuple[int, ...] = DEFAULT_M_VALUES
    alpha: float = 2.0
    beta: float = 5.0
    horizon: float = 12.0
    n_truth_mesh: int = 256
    # prediction and metrics
    n_samples: int = 100
    level: float = 0.95
    estimate_rule: str = "mean-curve"
    d_mode: str = "cdf"
    smooth_window: int = 0
    seed: int = 0
    threads: int = 1
    cache_dir: str | None = None

    def __post_init__(self):
        try:
            b = tuple(tuple(float(v) for v in side) for side in self.bounds)
            if len(b) != 2 or any(len(side) != 2 for side in b):
                raise ValueError
        except (TypeError, ValueError):
            raise ConfigError(f"bounds must be [[a1, b1], [a2, b2]], got {self.bounds!r}") from None
        object.__setattr__(self, "bounds", b)
        object.__setattr__(self, "m_values", tuple(int(v) for v in self.m_values))
        checks = [
            (self.m1 >= 1 and self.m2 >= 1, "m1 and m2 must be >= 1"),
            (2 <= self.n_mesh <= MAX_MESH, f"n_mesh must lie in [2, {MAX_MESH}]"),
            (2 <= self.n_truth_mesh <= MAX_MESH, f"n_truth_mesh must lie in [2, {MAX_MESH}]"),
            (self.tau > 0, "tau must be positive"),
            (self.sigma2 > 0, "sigma2 must be positive"),
            (self.algorithm in ALGORITHMS, f"algorithm must be one of {ALGORITHMS}"),
            (self.tol > 0 and self.gap_tol > 0, "tolerances must be positive"),
            (self.max_iter >= 1, "max_iter must be >= 1"),
            (self.m >= 1 and all(v >= 1 for v in self.m_values), "episode counts must be >= 1"),
            (self.alpha > 0 and self.beta > 0, "Beta shapes must be positive"),
            (self.horizon >= self.tau, "horizon must cover at least one step"),
            (self.n_samples >= 1, "n_samples must be >= 1"),
            (0 < self.level < 1, "level must lie in (0, 1)"),
            (self.estimate_rule in ("mean-curve", "sample-mean"), "estimate_rule is mean-curve or sample-mean"),
            (self.d_mode in D_MODES, f"d_mode must be one of {D_MODES}"),
            (self.smooth_window >= 0, "smooth_window must be >= 0"),
            (self.seed >= 0, "seed must be nonnegative"),
            (self.threads >= 1, "threads must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        try:
            self.grid()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def grid(self) -> ParameterGrid:
        return make_grid(self.bounds, self.m1, self.m2)

    def estimator(self) -> EstimatorConfig:
        return EstimatorConfig(self.algorithm, self.tol, self.max_iter, self.prune_eps, True, self.gap_tol)

    def noise(self) -> NoiseModel:
        return NoiseModel(self.sigma2)

    def truth(self) -> TruthSpec:
        return TruthSpec(self.alpha, self.beta, self.sigma2, self.n_truth_mesh, self.tau, self.horizon)

    def echo(self) -> dict:
        d = asdict(self)
        for k in _RUNTIME_FIELDS:
            d.pop(k)
        d["bounds"] = [list(side) for side in self.bounds]
        d["m_values"] = list(self.m_values)
        return d

    @property
    def hash(self) -> str:
        blob = json.dumps(self.echo(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]

    def provenance(self, **seeds) -> dict:
        return {"config": self.echo(), "config_hash": self.hash, "seeds": {"seed": self.seed, **seeds}}

    def override(self, **changes) -> "RunConfig":
        changes = {k: v for k, v in changes.items() if v is not None}
        unknown = set(changes) - {f.name for f in fields(self)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return replace(self, **changes)


def load_config(path: str | Path | None = None, **overrides) -> RunConfig:
    """Defaults, then the JSON file (if any), then non-None flag overrides."""
    cfg = RunConfig()
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        doc.pop("config_hash", None)
        cfg = cfg.override(**doc)
    return cfg.override(**overrides)


def dump_json(doc, path: str | Path) -> Path:
    """Deterministic JSON: sorted keys, shortest round-trip floats, trailing newline."""
    path = Path(path)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")
    return path


__all__ = ["ConfigError", "RunConfig", "load_config", "dump_json", "D_MODES", "DEFAULT_M_VALUES"]
