"""Cyclic 2D grid world: states, wrap-around moves, rendering and transition datasets."""

from __future__ import annotations

import enum
import functools
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

SUBSAMPLES = 4


@dataclass(frozen=True)
class WorldSpec:
    n: int = 10
    image_size: int = 32
    radius: float = 4.0

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise ValueError(f"grid size must be an integer >= 2, got {self.n}")
        if int(self.image_size) != self.image_size or self.image_size < 4:
            raise ValueError(f"image size must be an integer >= 4, got {self.image_size}")
        if not 0 < self.radius < self.image_size / 2:
            raise ValueError(f"radius must lie in (0, {self.image_size / 2}), got {self.radius}")
        if self.n > 65535 or self.image_size > 65535:
            raise ValueError("grid and image sizes must fit in 16 bits")
        # radius is stored as f32 on disk; keep the in-memory value identical
        object.__setattr__(self, "radius", float(np.float32(self.radius)))


class State(NamedTuple):
    x: int
    y: int


class Move(enum.IntEnum):
    LEFT = 0
    RIGHT = 1
    UP = 2
    DOWN = 3

    @property
    def axis(self) -> int:
        return 0 if self in (Move.LEFT, Move.RIGHT) else 1

    @property
    def delta(self) -> int:
        return -1 if self in (Move.LEFT, Move.DOWN) else 1


MOVES = tuple(Move)
# per-move (dx, dy), indexed by action code
MOVE_DELTAS = np.array([[-1, 0], [1, 0], [0, 1], [0, -1]], dtype=np.int64)


class Transition(NamedTuple):
    state: State
    action: Move
    next_state: State


def validate_state(spec: WorldSpec, s) -> State:
    x, y = int(s[0]), int(s[1])
    if not (0 <= x < spec.n and 0 <= y < spec.n):
        raise ValueError(f"state {(x, y)} outside the {spec.n}x{spec.n} grid")
    return State(x, y)


def step(spec: WorldSpec, s, a) -> State:
    """Move one cell; stepping off an edge re-enters on the opposite side."""
    s = validate_state(spec, s)
    a = Move(a)
    dx, dy = MOVE_DELTAS[a]
    return State((s.x + int(dx)) % spec.n, (s.y + int(dy)) % spec.n)


def step_arrays(spec: WorldSpec, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
    states = np.asarray(states, dtype=np.int64)
    return (states + MOVE_DELTAS[np.asarray(actions, dtype=np.int64)]) % spec.n


def grid_states(n: int) -> list[State]:
    """Every state of an n x n grid, x-major (matches ``state_index``)."""
    return [State(x, y) for x in range(n) for y in range(n)]


def all_states(spec: WorldSpec) -> list[State]:
    return grid_states(spec.n)


def state_index(spec: WorldSpec, states) -> np.ndarray:
    states = np.asarray(states, dtype=np.int64)
    return states[..., 0] * spec.n + states[..., 1]


def disc_center(spec: WorldSpec, s) -> tuple[float, float]:
    # centers snap to the subpixel lattice, so every disc is an exact lattice translate
    scale = spec.image_size / spec.n
    cx = round((s[0] + 0.5) * scale * SUBSAMPLES) / SUBSAMPLES
    cy = round((s[1] + 0.5) * scale * SUBSAMPLES) / SUBSAMPLES
    return cx, cy


def _render(spec: WorldSpec, x: int, y: int) -> np.ndarray:
    b = spec.image_size
    cx, cy = disc_center(spec, (x, y))
    offsets = (np.arange(SUBSAMPLES) + 0.5) / SUBSAMPLES
    coords = (np.arange(b)[:, None] + offsets[None, :]).ravel()
    dx = (coords - cx + b / 2) % b - b / 2
    dy = (coords - cy + b / 2) % b - b / 2
    inside = dy[:, None] ** 2 + dx[None, :] ** 2 <= spec.radius**2
    counts = inside.reshape(b, SUBSAMPLES, b, SUBSAMPLES).sum(axis=(1, 3))
    return counts / float(SUBSAMPLES * SUBSAMPLES)


@functools.lru_cache(maxsize=16)
def _render_table(spec: WorldSpec) -> np.ndarray:
    table = np.stack([_render(spec, x, y) for x in range(spec.n) for y in range(spec.n)])
    table.setflags(write=False)
    return table


def render(spec: WorldSpec, s) -> np.ndarray:
    """B x B grayscale image of the agent; row index is y, column index is x."""
    s = validate_state(spec, s)
    return _render_table(spec)[s.x * spec.n + s.y].copy()


def render_batch(spec: WorldSpec, states) -> np.ndarray:
    """Flattened observations, shape (len(states), B*B)."""
    idx = state_index(spec, states)
    return _render_table(spec).reshape(spec.n * spec.n, -1)[idx]


class TransitionDataset:
    """Transitions stored as integer arrays; observations are re-rendered on demand."""

    def __init__(self, spec: WorldSpec, states, actions, next_states, seed: int = 0):
        self.spec = spec
        self.states = np.asarray(states, dtype=np.int64).reshape(-1, 2)
        self.actions = np.asarray(actions, dtype=np.int64).reshape(-1)
        self.next_states = np.asarray(next_states, dtype=np.int64).reshape(-1, 2)
        self.seed = int(seed)
        if len(self.actions) == 0:
            raise ValueError("a transition dataset cannot be empty")
        if not (len(self.states) == len(self.actions) == len(self.next_states)):
            raise ValueError("states, actions and next states differ in length")
        if np.any(self.actions < 0) or np.any(self.actions > 3):
            raise ValueError("action codes must lie in 0..3")
        for arr in (self.states, self.next_states):
            if np.any(arr < 0) or np.any(arr >= spec.n):
                raise ValueError("state coordinates outside the grid")
        if not np.array_equal(step_arrays(spec, self.states, self.actions), self.next_states):
            raise ValueError("next_state != step(state, action) for some record")

    def __len__(self) -> int:
        return len(self.actions)

    def __iter__(self) -> Iterator[Transition]:
        for s, a, t in zip(self.states, self.actions, self.next_states):
            yield Transition(State(int(s[0]), int(s[1])), Move(int(a)), State(int(t[0]), int(t[1])))

    def __getitem__(self, i: int) -> Transition:
        s, a, t = self.states[i], self.actions[i], self.next_states[i]
        return Transition(State(int(s[0]), int(s[1])), Move(int(a)), State(int(t[0]), int(t[1])))

    def __eq__(self, other) -> bool:
        if not isinstance(other, TransitionDataset):
            return NotImplemented
        return (
            self.spec == other.spec
            and self.seed == other.seed
            and np.array_equal(self.states, other.states)
            and np.array_equal(self.actions, other.actions)
            and np.array_equal(self.next_states, other.next_states)
        )

    def __repr__(self) -> str:
        return f"TransitionDataset(spec={self.spec}, count={len(self)}, seed={self.seed})"

    def head(self, count: int) -> "TransitionDataset":
        return TransitionDataset(
            self.spec, self.states[:count], self.actions[:count], self.next_states[:count], self.seed
        )

    def is_trajectory(self) -> bool:
        return bool(np.array_equal(self.next_states[:-1], self.states[1:]))

    def observations(self) -> tuple[np.ndarray, np.ndarray]:
        return render_batch(self.spec, self.states), render_batch(self.spec, self.next_states)


def random_walk(spec: WorldSpec, steps: int, seed: int) -> TransitionDataset:
    """Uniform-random walk from a uniform-random start state."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    rng = np.random.Generator(np.random.PCG64(seed))
    start = rng.integers(0, spec.n, size=2)
    actions = rng.integers(0, 4, size=steps)
    path = (start + np.cumsum(np.vstack([[0, 0], MOVE_DELTAS[actions]]), axis=0)) % spec.n
    return TransitionDataset(spec, path[:-1], actions, path[1:], seed)


# dataset file format
DATASET_MAGIC = b"SBDT"
DATASET_VERSION = 1
_HEADER = struct.Struct("<4sHHHfQQ")
_RECORD = np.dtype([("x", "<u2"), ("y", "<u2"), ("a", "u1"), ("nx", "<u2"), ("ny", "<u2")])


class DatasetFormatError(ValueError):
    pass


class UnrecognizedFormatError(DatasetFormatError):
    pass


class UnsupportedVersionError(DatasetFormatError):
    pass


class TruncatedFileError(DatasetFormatError):
    pass


def dataset_to_bytes(d: TransitionDataset) -> bytes:
    header = _HEADER.pack(
        DATASET_MAGIC, DATASET_VERSION, d.spec.n, d.spec.image_size, d.spec.radius, d.seed, len(d)
    )
    rec = np.empty(len(d), dtype=_RECORD)
    rec["x"], rec["y"] = d.states[:, 0], d.states[:, 1]
    rec["a"] = d.actions
    rec["nx"], rec["ny"] = d.next_states[:, 0], d.next_states[:, 1]
    return header + rec.tobytes()


def dataset_from_bytes(buf: bytes) -> TransitionDataset:
    if len(buf) < 4 or buf[:4] != DATASET_MAGIC:
        raise UnrecognizedFormatError("unrecognized format: missing SBDT magic")
    if len(buf) < _HEADER.size:
        raise TruncatedFileError("truncated header")
    _, version, n, b, r, seed, count = _HEADER.unpack_from(buf)
    if version != DATASET_VERSION:
        raise UnsupportedVersionError(f"unsupported dataset version {version}")
    expected = _HEADER.size + count * _RECORD.itemsize
    if len(buf) < expected:
        raise TruncatedFileError(f"truncated records: expected {expected} bytes, got {len(buf)}")
    if len(buf) > expected:
        raise DatasetFormatError("trailing bytes after records")
    rec = np.frombuffer(buf, dtype=_RECORD, count=count, offset=_HEADER.size)
    try:
        spec = WorldSpec(n, b, float(r))
        return TransitionDataset(
            spec,
            np.stack([rec["x"], rec["y"]], axis=1),
            rec["a"],
            np.stack([rec["nx"], rec["ny"]], axis=1),
            seed,
        )
    except ValueError as exc:
        raise DatasetFormatError(f"invalid dataset contents: {exc}") from exc


def save_dataset(d: TransitionDataset, path) -> None:
    Path(path).write_bytes(dataset_to_bytes(d))


def load_dataset(path) -> TransitionDataset:
    return dataset_from_bytes(Path(path).read_bytes())
