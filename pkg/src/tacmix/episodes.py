"""Drinking-episode records: CSV ingest, validation and uniform resampling.

A uniform ``Episode`` stores held BrAC inputs u_0..u_{n-1} on [k tau, (k+1) tau)
and TAC observations y_1..y_n at times k tau.  Raw CSV records may be
non-uniform; ``resample_uniform`` maps them onto the sampling grid.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

DEFAULT_TAU = 1.0 / 60.0  # hours
DEFAULT_SCHEMA = {"time": "time_hours", "brac": "brac", "tac": "tac"}
CSV_HEADER = ("time_hours", "brac", "tac")


class EpisodeParseError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class EpisodeValidationError(ValueError):
    pass


class EmptyEpisodeError(EpisodeValidationError):
    pass


@dataclass(frozen=True, eq=False)
class RawEpisode:
    id: str
    time: np.ndarray
    brac: np.ndarray
    tac: np.ndarray

    def __len__(self) -> int:
        return len(self.time)


@dataclass(frozen=True, eq=False)
class Episode:
    id: str
    tau: float
    brac: np.ndarray  # held inputs, steps 0..n-1
    tac: np.ndarray  # observations, steps 1..n
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (self.tau > 0 and math.isfinite(self.tau)):
            raise EpisodeValidationError(f"tau must be positive, got {self.tau!r}")
        if len(self.brac) != len(self.tac):
            raise EpisodeValidationError(
                f"brac has {len(self.brac)} held inputs but tac has {len(self.tac)} observations"
            )

    @property
    def n(self) -> int:
        return len(self.tac)

    @property
    def times(self) -> np.ndarray:
        """Observation times tau, 2 tau, ..., n tau."""
        return self.tau * np.arange(1, self.n + 1)


def parse_episode_csv(
    source, schema: Mapping[str, str] | None = None, episode_id: str = "episode"
) -> RawEpisode:
    """Read a (time, BrAC, TAC) CSV from a byte or text stream.

    ``schema`` maps the logical fields ``time``, ``brac``, ``tac`` onto the
    file's column names.
    """
    schema = {**DEFAULT_SCHEMA, **(schema or {})}
    data = source.read()
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    reader = csv.reader(io.StringIO(data))
    try:
        header = next(reader)
    except StopIteration:
        raise EmptyEpisodeError("empty input: no header") from None
    header = [h.strip() for h in header]
    cols = {}
    for key in ("time", "brac", "tac"):
        name = schema[key]
        if name not in header:
            raise EpisodeParseError(f"missing column {name!r} in header {header}", line=1)
        cols[key] = header.index(name)

    rows = {k: [] for k in cols}
    for line_no, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise EpisodeParseError(f"expected {len(header)} fields, got {len(row)}", line=line_no)
        for key, idx in cols.items():
            try:
                rows[key].append(float(row[idx]))
            except ValueError:
                raise EpisodeParseError(
                    f"cannot parse {key} value {row[idx]!r}", line=line_no
                ) from None
    if not rows["time"]:
        raise EmptyEpisodeError("empty input: no data rows")

    time = np.array(rows["time"])
    bad = np.flatnonzero(np.diff(time) <= 0)
    if bad.size:
        raise EpisodeValidationError(
            f"times must be strictly increasing (violated at data row {bad[0] + 2})"
        )
    return RawEpisode(episode_id, time, np.array(rows["brac"]), np.array(rows["tac"]))


def resample_uniform(raw: RawEpisode, tau: float = DEFAULT_TAU, *, episode_id: str | None = None) -> Episode:
    """Linearly interpolate onto the grid k tau and hold BrAC between samples.

    The record is zero-extended before its first sample, consistent with an
    alcohol-free skin layer at t = 0.
    """
    if not (tau > 0 and math.isfinite(tau)):
        raise ValueError(f"tau must be positive, got {tau!r}")
    if len(raw.time) < 2:
        raise EpisodeValidationError("need at least two samples to resample")
    t_end = float(raw.time[-1])
    span = t_end - float(raw.time[0])
    if span < tau * (1 - 1e-9):
        raise EpisodeValidationError(f"tau={tau} exceeds the recorded span {span}")
    n = int(math.floor(t_end / tau + 1e-9))
    if n < 1:
        raise EpisodeValidationError("record ends before the first sampling instant")
    grid = tau * np.arange(n + 1)
    brac = np.interp(grid[:-1], raw.time, raw.brac, left=0.0, right=0.0)
    tac = np.interp(grid[1:], raw.time, raw.tac, left=0.0, right=0.0)
    return Episode(episode_id or raw.id, float(tau), brac, tac)


def smooth_tac(episode: Episode, window: int) -> Episode:
    """Centered moving average of the TAC series; window 0 or 1 is a no-op."""
    if window <= 1:
        return episode
    kernel = np.ones(window) / window
    padded = np.pad(episode.tac, (window // 2, window - 1 - window // 2), mode="edge")
    tac = np.convolve(padded, kernel, mode="valid")
    return Episode(episode.id, episode.tau, episode.brac, tac, dict(episode.metadata))


@dataclass(frozen=True)
class Diagnostic:
    level: str  # "error" or "warning"
    code: str
    message: str
    indices: tuple[int, ...] = ()


def validate_episode(e: Episode | RawEpisode) -> list[Diagnostic]:
    """Report problems without raising; an empty list means the episode is clean."""
    report = []
    for name in ("brac", "tac"):
        x = np.asarray(getattr(e, name), dtype=float)
        if x.size == 0:
            report.append(Diagnostic("error", "empty", f"{name} series is empty"))
            continue
        nonfinite = np.flatnonzero(~np.isfinite(x))
        if nonfinite.size:
            report.append(
                Diagnostic("error", "nonfinite", f"{name} has NaN/inf entries", tuple(nonfinite.tolist()))
            )
        with np.errstate(invalid="ignore"):
            negative = np.flatnonzero(x < 0)
        if negative.size:
            report.append(
                Diagnostic("error", "negative", f"{name} has negative entries", tuple(negative.tolist()))
            )
    tac = np.asarray(e.tac, dtype=float)
    if tac.size and np.all(tac == 0):
        report.append(Diagnostic("warning", "flat", "flat signal: TAC is identically zero"))
    return report


def episode_to_csv(e: Episode) -> str:
    """Serialize a uniform episode; reading it back at the same tau is lossless."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    n = e.n
    for k in range(n + 1):
        brac = e.brac[k] if k < n else e.brac[n - 1]
        tac = e.tac[k - 1] if k > 0 else 0.0
        writer.writerow((repr(float(k * e.tau)), repr(float(brac)), repr(float(tac))))
    return buf.getvalue()


def write_episode_csv(e: Episode, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(episode_to_csv(e), encoding="utf-8", newline="\n")
    return path


def read_episode_csv(path: str | Path, tau: float = DEFAULT_TAU, episode_id: str | None = None,
                     schema: Mapping[str, str] | None = None) -> Episode:
    path = Path(path)
    with path.open("rb") as fh:
        raw = parse_episode_csv(fh, schema, episode_id or path.stem)
    return resample_uniform(raw, tau)


def read_manifest(path: str | Path) -> tuple[list[dict], dict]:
    """Load a dataset manifest.

    Accepts a bare JSON array of ``{"id", "path"}`` entries or an object with
    an ``episodes`` array plus metadata.  Relative paths resolve against the
    manifest's directory.
    """
    path = Path(path)
    doc = json.loads(path.read_text(encoding="utf-8"))
    if isinstance(doc, list):
        entries, meta = doc, {}
    else:
        entries = doc["episodes"]
        meta = {k: v for k, v in doc.items() if k != "episodes"}
    out = []
    for entry in entries:
        if isinstance(entry, str):
            entry = {"id": Path(entry).stem, "path": entry}
        entry = dict(entry)
        p = Path(entry["path"])
        entry["path"] = str(p if p.is_absolute() else path.parent / p)
        out.append(entry)
    return out, meta


def load_dataset(manifest: str | Path, tau: float = DEFAULT_TAU, smooth_window: int = 0) -> list[Episode]:
    entries, _ = read_manifest(manifest)
    episodes = []
    for entry in entries:
        e = read_episode_csv(entry["path"], tau, entry.get("id"))
        meta = {k: v for k, v in entry.items() if k not in ("id", "path")}
        e = Episode(e.id, e.tau, e.brac, e.tac, meta)
        episodes.append(smooth_tac(e, smooth_window))
    return episodes


def common_tau(episodes: Iterable[Episode]) -> float:
    taus = {e.tau for e in episodes}
    if len(taus) != 1:
        raise EpisodeValidationError(f"episodes must share one tau, got {sorted(taus)}")
    return taus.pop()
