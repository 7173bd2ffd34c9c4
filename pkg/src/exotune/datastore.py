"""Offline transition logs: reward labeling, state normalization, file I/O, sampling.

The on-disk dataset is a text file built for auditability rather than
compactness: line 1 is a JSON header, every following line is one
transition with a fixed field order

    episode_id step p e_b e_t th_b th_t r p' e_b' e_t' done

Floats are written with Python's shortest round-trip repr, so a
write/read cycle is bit-exact. Records are episode-major, step-minor.
Datasets are immutable once written; batch sampling uses caller-owned
RNG state, so concurrent readers need no coordination.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import tempfile
from dataclasses import asdict, dataclass, is_dataclass
from typing import TYPE_CHECKING, Iterable, Iterator

import numpy as np

if TYPE_CHECKING:  # only for annotations; avoids a module cycle
    from .simulator import SimConfig, SimState, ThresholdAction

SCHEMA_VERSION = 1

THRESHOLD_MIN = 20.0
THRESHOLD_MAX = 50.0
EFFORT_MIN = 0.0
EFFORT_MAX = 100.0


class DatasetError(Exception):
    """Raised for malformed, corrupt, or invariant-breaking dataset files."""


@dataclass(frozen=True)
class RewardConfig:
    """Exponential reward r = exp(-d/c) in (0, 1].

    d is the absolute difference between the dominant muscle's delta
    effort and that muscle's threshold; on an exact effort tie d is the
    distance from zero delta effort to the nearer threshold.
    `source` picks whose efforts feed d: the transition's state (default)
    or its next state.
    """

    c: float = 10.0
    source: str = "state"

    def __post_init__(self) -> None:
        if not self.c > 0:
            raise ValueError(f"reward constant c must be positive, got {self.c}")
        if self.source not in ("state", "next_state"):
            raise ValueError(f"unknown reward source: {self.source!r}")


def reward_distance(e_b: float, e_t: float, th_b: float, th_t: float) -> float:
    """Distance between delta effort and the acting threshold."""
    if e_b > e_t:
        return abs((e_b - e_t) - th_b)
    if e_t > e_b:
        return abs((e_t - e_b) - th_t)
    return min(th_b, th_t)


def reward_distance_arrays(e_b, e_t, th_b, th_t) -> np.ndarray:
    """Vectorized `reward_distance` over equally-shaped arrays."""
    e_b = np.asarray(e_b, dtype=np.float64)
    e_t = np.asarray(e_t, dtype=np.float64)
    th_b = np.asarray(th_b, dtype=np.float64)
    th_t = np.asarray(th_t, dtype=np.float64)
    d_bic = np.abs((e_b - e_t) - th_b)
    d_tri = np.abs((e_t - e_b) - th_t)
    tie = np.minimum(th_b, th_t)
    return np.where(e_b > e_t, d_bic, np.where(e_t > e_b, d_tri, tie))


def compute_reward(state: "SimState", action: "ThresholdAction", config: RewardConfig) -> float:
    """Reward for one state-action pair; always in (0, 1], 1 iff d == 0."""
    d = reward_distance(
        state.effort_biceps, state.effort_triceps, action.th_biceps, action.th_triceps
    )
    return math.exp(-d / config.c)


def normalize_state(state: "SimState", sim_config: "SimConfig") -> np.ndarray:
    """Map a state to [0,1]^3: [angle fraction, e_b/100, e_t/100]."""
    return normalize_columns(
        np.float64(state.angle),
        np.float64(state.effort_biceps),
        np.float64(state.effort_triceps),
        sim_config,
    )


def normalize_columns(p, e_b, e_t, sim_config: "SimConfig") -> np.ndarray:
    """Vectorized state normalization; stacks to shape (..., 3)."""
    p = np.asarray(p, dtype=np.float64)
    e_b = np.asarray(e_b, dtype=np.float64)
    e_t = np.asarray(e_t, dtype=np.float64)
    lo, hi = sim_config.angle_min, sim_config.angle_max
    if np.any(p < lo) or np.any(p > hi):
        raise ValueError(f"angle outside [{lo}, {hi}]")
    for name, e in (("biceps", e_b), ("triceps", e_t)):
        if np.any(e < EFFORT_MIN) or np.any(e > EFFORT_MAX):
            raise ValueError(f"{name} effort outside [{EFFORT_MIN}, {EFFORT_MAX}]")
    return np.stack(
        [(p - lo) / (hi - lo), e_b / EFFORT_MAX, e_t / EFFORT_MAX], axis=-1
    )


def denormalize_state(vec, sim_config: "SimConfig") -> np.ndarray:
    """Inverse of `normalize_columns` on the configured ranges."""
    v = np.asarray(vec, dtype=np.float64)
    lo, hi = sim_config.angle_min, sim_config.angle_max
    return np.stack(
        [v[..., 0] * (hi - lo) + lo, v[..., 1] * EFFORT_MAX, v[..., 2] * EFFORT_MAX],
        axis=-1,
    )


def config_digest(*configs) -> str:
    """Short stable digest of one or more config dataclasses (or dicts)."""
    blob = json.dumps(
        [asdict(c) if is_dataclass(c) else c for c in configs],
        sort_keys=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class Transition:
    """One logged tuple; flat fields mirror the on-disk record exactly."""

    episode_id: int
    step: int
    p: float
    e_b: float
    e_t: float
    th_b: float
    th_t: float
    r: float
    p_next: float
    e_b_next: float
    e_t_next: float
    done: bool


@dataclass
class DatasetHeader:
    schema_version: int
    task: str
    sim_config_hash: str
    grid: dict
    seed: int
    dt: float
    episode_count: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "schema_version": self.schema_version,
                "task": self.task,
                "sim_config_hash": self.sim_config_hash,
                "grid": self.grid,
                "seed": self.seed,
                "dt": self.dt,
                "episode_count": self.episode_count,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, line: str) -> "DatasetHeader":
        try:
            raw = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"unreadable header: {exc}") from exc
        required = {
            "schema_version", "task", "sim_config_hash", "grid", "seed", "dt",
            "episode_count",
        }
        missing = required - raw.keys()
        if missing:
            raise DatasetError(f"header is missing fields: {sorted(missing)}")
        return cls(**{k: raw[k] for k in required})


_COLUMNS = (
    "episode_id", "step", "p", "e_b", "e_t", "th_b", "th_t", "r",
    "p_next", "e_b_next", "e_t_next", "done",
)


class Dataset:
    """In-memory dataset: a header plus column arrays, one row per transition."""

    def __init__(self, header: DatasetHeader, columns: dict[str, np.ndarray]):
        self.header = header
        n = len(columns["r"])
        for name in _COLUMNS:
            if name not in columns or len(columns[name]) != n:
                raise DatasetError(f"column {name!r} missing or wrong length")
        self.episode_id = np.asarray(columns["episode_id"], dtype=np.int64)
        self.step = np.asarray(columns["step"], dtype=np.int64)
        self.p = np.asarray(columns["p"], dtype=np.float64)
        self.e_b = np.asarray(columns["e_b"], dtype=np.float64)
        self.e_t = np.asarray(columns["e_t"], dtype=np.float64)
        self.th_b = np.asarray(columns["th_b"], dtype=np.float64)
        self.th_t = np.asarray(columns["th_t"], dtype=np.float64)
        self.r = np.asarray(columns["r"], dtype=np.float64)
        self.p_next = np.asarray(columns["p_next"], dtype=np.float64)
        self.e_b_next = np.asarray(columns["e_b_next"], dtype=np.float64)
        self.e_t_next = np.asarray(columns["e_t_next"], dtype=np.float64)
        self.done = np.asarray(columns["done"], dtype=bool)

    def __len__(self) -> int:
        return len(self.r)

    @classmethod
    def from_transitions(
        cls, header: DatasetHeader, transitions: Iterable[Transition]
    ) -> "Dataset":
        rows = list(transitions)
        cols = {
            name: np.array([getattr(t, name) for t in rows]) for name in _COLUMNS
        }
        return cls(header, cols)

    def transition(self, i: int) -> Transition:
        return Transition(
            episode_id=int(self.episode_id[i]),
            step=int(self.step[i]),
            p=float(self.p[i]),
            e_b=float(self.e_b[i]),
            e_t=float(self.e_t[i]),
            th_b=float(self.th_b[i]),
            th_t=float(self.th_t[i]),
            r=float(self.r[i]),
            p_next=float(self.p_next[i]),
            e_b_next=float(self.e_b_next[i]),
            e_t_next=float(self.e_t_next[i]),
            done=bool(self.done[i]),
        )

    def iter_transitions(self) -> Iterator[Transition]:
        for i in range(len(self)):
            yield self.transition(i)

    def validate(self) -> None:
        """Check record invariants; reports the first offending record index."""
        if self.header.schema_version != SCHEMA_VERSION:
            raise DatasetError(
                f"schema version mismatch: file has {self.header.schema_version}, "
                f"reader supports {SCHEMA_VERSION}"
            )
        n = len(self)
        if n == 0:
            return

        def first(mask) -> int | None:
            hits = np.flatnonzero(mask)
            return int(hits[0]) if hits.size else None

        i = first((self.r <= 0.0) | (self.r > 1.0))
        if i is not None:
            raise DatasetError(f"record {i}: reward {self.r[i]!r} outside (0, 1]")
        for col in (self.th_b, self.th_t):
            i = first((col < THRESHOLD_MIN) | (col > THRESHOLD_MAX))
            if i is not None:
                raise DatasetError(
                    f"record {i}: threshold {col[i]!r} outside "
                    f"[{THRESHOLD_MIN}, {THRESHOLD_MAX}]"
                )
        for col in (self.e_b, self.e_t, self.e_b_next, self.e_t_next):
            i = first((col < EFFORT_MIN) | (col > EFFORT_MAX))
            if i is not None:
                raise DatasetError(f"record {i}: effort {col[i]!r} outside [0, 100]")
        same_episode = self.episode_id[1:] == self.episode_id[:-1]
        i = first(same_episode & (self.step[1:] <= self.step[:-1]))
        if i is not None:
            raise DatasetError(f"record {i + 1}: steps not strictly increasing")
        i = first(same_episode & self.done[:-1])
        if i is not None:
            raise DatasetError(f"record {i}: done before episode end")
        i = first(~same_episode & ~self.done[:-1])
        if i is not None:
            raise DatasetError(f"record {i}: episode ended without done flag")
        if not self.done[n - 1]:
            raise DatasetError(f"record {n - 1}: final record must be done")
        block_ids = self.episode_id[np.concatenate([[0], np.flatnonzero(~same_episode) + 1])]
        if len(set(block_ids.tolist())) != len(block_ids):
            raise DatasetError("episode ids are not contiguous (an id reappears)")


def _fmt(x: float) -> str:
    return repr(float(x))


def write_dataset(path, dataset: Dataset) -> None:
    """Atomic write (temp file + rename in the target directory)."""
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".dataset-", suffix=".tmp")
    try:
        os.fchmod(fd, 0o644)  # mkstemp defaults to 0600
        with os.fdopen(fd, "w") as fh:
            fh.write(dataset.header.to_json() + "\n")
            for i in range(len(dataset)):
                fields = [
                    str(int(dataset.episode_id[i])),
                    str(int(dataset.step[i])),
                    _fmt(dataset.p[i]),
                    _fmt(dataset.e_b[i]),
                    _fmt(dataset.e_t[i]),
                    _fmt(dataset.th_b[i]),
                    _fmt(dataset.th_t[i]),
                    _fmt(dataset.r[i]),
                    _fmt(dataset.p_next[i]),
                    _fmt(dataset.e_b_next[i]),
                    _fmt(dataset.e_t_next[i]),
                    "1" if dataset.done[i] else "0",
                ]
                fh.write(" ".join(fields) + "\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_dataset(path) -> Dataset:
    """Read and fully validate a dataset file. Raises DatasetError with the
    offending record index on any malformed or invariant-breaking line."""
    with open(path) as fh:
        header_line = fh.readline()
        if not header_line:
            raise DatasetError(f"{path}: empty file")
        header = DatasetHeader.from_json(header_line)
        cols: dict[str, list] = {name: [] for name in _COLUMNS}
        for record, line in enumerate(fh):
            parts = line.split()
            if len(parts) != len(_COLUMNS):
                raise DatasetError(
                    f"record {record}: expected {len(_COLUMNS)} fields, got {len(parts)}"
                )
            try:
                cols["episode_id"].append(int(parts[0]))
                cols["step"].append(int(parts[1]))
                for name, tok in zip(_COLUMNS[2:-1], parts[2:-1]):
                    cols[name].append(float(tok))
                if parts[-1] not in ("0", "1"):
                    raise ValueError(f"bad done flag {parts[-1]!r}")
                cols["done"].append(parts[-1] == "1")
            except ValueError as exc:
                raise DatasetError(f"record {record}: {exc}") from exc
    dataset = Dataset(header, {k: np.array(v) for k, v in cols.items()})
    dataset.validate()
    return dataset


@dataclass
class Batch:
    """Column view of sampled transitions, ready for vectorized evaluation."""

    p: np.ndarray
    e_b: np.ndarray
    e_t: np.ndarray
    th_b: np.ndarray
    th_t: np.ndarray
    r: np.ndarray
    p_next: np.ndarray
    e_b_next: np.ndarray
    e_t_next: np.ndarray
    done: np.ndarray

    def __len__(self) -> int:
        return len(self.r)


def sample_batch(dataset: Dataset, batch_size: int, rng: np.random.Generator) -> Batch:
    """Uniform sampling with replacement over all transitions."""
    if len(dataset) == 0:
        raise DatasetError("cannot sample from an empty dataset")
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    idx = rng.integers(0, len(dataset), size=batch_size)
    return Batch(
        p=dataset.p[idx],
        e_b=dataset.e_b[idx],
        e_t=dataset.e_t[idx],
        th_b=dataset.th_b[idx],
        th_t=dataset.th_t[idx],
        r=dataset.r[idx],
        p_next=dataset.p_next[idx],
        e_b_next=dataset.e_b_next[idx],
        e_t_next=dataset.e_t_next[idx],
        done=dataset.done[idx],
    )


def relabel_rewards(dataset: Dataset, config: RewardConfig) -> Dataset:
    """New dataset with rewards recomputed from the logged fields; idempotent."""
    if config.source == "next_state":
        e_b, e_t = dataset.e_b_next, dataset.e_t_next
    else:
        e_b, e_t = dataset.e_b, dataset.e_t
    d = reward_distance_arrays(e_b, e_t, dataset.th_b, dataset.th_t)
    cols = {name: getattr(dataset, name).copy() for name in _COLUMNS}
    cols["r"] = np.exp(-d / config.c)
    return Dataset(dataset.header, cols)


def merge_datasets(parts: list[Dataset], task: str) -> Dataset:
    """Concatenate datasets, renumbering episode ids to stay contiguous.

    All parts must share a sim config digest and dt; the merged grid is
    the per-axis union.
    """
    if not parts:
        raise ValueError("nothing to merge")
    first = parts[0].header
    for part in parts[1:]:
        if part.header.sim_config_hash != first.sim_config_hash:
            raise DatasetError("refusing to merge datasets with different sim configs")
        if part.header.dt != first.dt:
            raise DatasetError("refusing to merge datasets with different dt")
    cols: dict[str, list[np.ndarray]] = {name: [] for name in _COLUMNS}
    offset = 0
    episode_count = 0
    grid: dict[str, list[float]] = {}
    for part in parts:
        for name in _COLUMNS:
            col = getattr(part, name)
            if name == "episode_id":
                col = col + offset
            cols[name].append(col)
        offset += part.header.episode_count
        episode_count += part.header.episode_count
        for axis, values in part.header.grid.items():
            grid.setdefault(axis, [])
            grid[axis] = sorted(set(grid[axis]) | set(values))
    header = DatasetHeader(
        schema_version=SCHEMA_VERSION,
        task=task,
        sim_config_hash=first.sim_config_hash,
        grid=grid,
        seed=first.seed,
        dt=first.dt,
        episode_count=episode_count,
    )
    return Dataset(header, {k: np.concatenate(v) for k, v in cols.items()})
