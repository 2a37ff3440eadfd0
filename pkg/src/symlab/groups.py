"""Group actions on the cyclic world and on latent spaces.

Covers certification of symmetry-based representations (equivariance and
per-subspace disentanglement residuals), the permuted-world construction
showing still images cannot pin down a group action, and a numerical probe
of the constraint system ruling out non-trivial 2-D linear representations.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Mapping, Sequence

import numpy as np

from .world import Move, State, WorldSpec, grid_states, render

# generators of each factor group: G_x is driven by Left/Right, G_y by Up/Down
FACTOR_GENERATORS = ((Move.LEFT, Move.RIGHT), (Move.UP, Move.DOWN))


class CoverageError(ValueError):
    """A representation table does not cover every world state."""


class PartitionError(ValueError):
    pass


@dataclass(frozen=True)
class GroupElement:
    """Element (kx, ky) of Z_N x Z_N."""

    n: int
    shift_x: int = 0
    shift_y: int = 0

    def __post_init__(self):
        object.__setattr__(self, "shift_x", self.shift_x % self.n)
        object.__setattr__(self, "shift_y", self.shift_y % self.n)

    def compose(self, other: "GroupElement") -> "GroupElement":
        if other.n != self.n:
            raise ValueError("elements of different groups")
        return GroupElement(self.n, self.shift_x + other.shift_x, self.shift_y + other.shift_y)

    __mul__ = compose

    def inverse(self) -> "GroupElement":
        return GroupElement(self.n, -self.shift_x, -self.shift_y)

    @classmethod
    def identity(cls, n: int) -> "GroupElement":
        return cls(n, 0, 0)

    @classmethod
    def generator(cls, n: int, a) -> "GroupElement":
        a = Move(a)
        if a.axis == 0:
            return cls(n, a.delta, 0)
        return cls(n, 0, a.delta)


def group_elements(n: int) -> list[GroupElement]:
    return [GroupElement(n, i, j) for i in range(n) for j in range(n)]


def _perm_power(perm: np.ndarray, k: int) -> np.ndarray:
    out = np.arange(len(perm))
    for _ in range(k % len(perm)):
        out = perm[out]
    return out


@dataclass(frozen=True)
class WorldAction:
    """Action of Z_N x Z_N on the grid through per-axis successor permutations."""

    perm_x: tuple
    perm_y: tuple

    def __post_init__(self):
        for p in (self.perm_x, self.perm_y):
            if sorted(p) != list(range(len(p))):
                raise ValueError(f"{p} is not a permutation")
        if len(self.perm_x) != len(self.perm_y):
            raise ValueError("axes must have the same size")

    @property
    def n(self) -> int:
        return len(self.perm_x)

    @classmethod
    def canonical(cls, n: int) -> "WorldAction":
        succ = tuple((i + 1) % n for i in range(n))
        return cls(succ, succ)

    def is_canonical(self) -> bool:
        return self == WorldAction.canonical(self.n)

    def act(self, g: GroupElement, states) -> np.ndarray:
        """Apply g to an array of states (shape (m, 2))."""
        states = np.asarray(states, dtype=np.int64).reshape(-1, 2)
        px = _perm_power(np.asarray(self.perm_x), g.shift_x)
        py = _perm_power(np.asarray(self.perm_y), g.shift_y)
        return np.stack([px[states[:, 0]], py[states[:, 1]]], axis=1)

    def move(self, a, states) -> np.ndarray:
        return self.act(GroupElement.generator(self.n, a), states)

    def is_single_cycle(self) -> bool:
        for p in (self.perm_x, self.perm_y):
            seen, i = 0, 0
            while True:
                i = p[i]
                seen += 1
                if i == 0:
                    break
            if seen != self.n:
                return False
        return True


@dataclass
class RepresentationTable:
    """Latent vector of every state of an n x n grid, rows in ``state_index`` order."""

    n: int
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] != self.n * self.n:
            raise CoverageError(
                f"table must hold {self.n * self.n} rows, got shape {self.values.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("representation table has non-finite entries")

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @classmethod
    def from_mapping(cls, n: int, mapping: Mapping) -> "RepresentationTable":
        missing = [s for s in grid_states(n) if tuple(s) not in mapping]
        if missing:
            raise CoverageError(f"{len(missing)} states missing from table, e.g. {missing[0]}")
        return cls(n, np.stack([np.asarray(mapping[tuple(s)], dtype=np.float64) for s in grid_states(n)]))

    def lookup(self, states) -> np.ndarray:
        states = np.asarray(states, dtype=np.int64).reshape(-1, 2)
        return self.values[states[:, 0] * self.n + states[:, 1]]

    def __getitem__(self, s) -> np.ndarray:
        return self.lookup([s])[0]


LatentMap = Callable[[np.ndarray], np.ndarray]


@dataclass
class LatentAction:
    """Per-generator maps on batches of latent vectors, shape (m, dim) -> (m, dim)."""

    maps: dict = field(default_factory=dict)

    def __post_init__(self):
        self.maps = {Move(a): f for a, f in self.maps.items()}

    def __call__(self, a, z) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        return np.asarray(self.maps[Move(a)](z), dtype=np.float64)

    def compose(self, actions: Sequence, z) -> np.ndarray:
        """Apply actions[0] first, then actions[1], ..."""
        for a in actions:
            z = self(a, z)
        return z

    @classmethod
    def from_matrices(cls, matrices: Mapping) -> "LatentAction":
        def linear(m):
            m = np.asarray(getattr(m, "entries", m), dtype=np.float64)
            return lambda z: z @ m.T

        return cls({a: linear(m) for a, m in matrices.items()})

    @classmethod
    def identity(cls) -> "LatentAction":
        return cls({a: (lambda z: z.copy()) for a in Move})


def _check_coverage(table: RepresentationTable, world: WorldAction, latent: LatentAction):
    if table.n != world.n:
        raise CoverageError(f"table covers a {table.n}-grid, world has {world.n}")
    missing = [a for a in Move if a not in latent.maps]
    if missing:
        raise ValueError(f"latent action missing generators {missing}")


def equivariance_witness(
    table: RepresentationTable, world: WorldAction, latent: LatentAction
) -> tuple[float, State, Move]:
    """Largest ||latent(a)(f(s)) - f(world(a)(s))|| and the (state, action) attaining it."""
    _check_coverage(table, world, latent)
    states = np.array(grid_states(table.n))
    z = table.values
    best = (-1.0, None, None)
    for a in Move:
        err = np.linalg.norm(latent(a, z) - table.lookup(world.move(a, states)), axis=1)
        i = int(np.argmax(err))
        if err[i] > best[0]:
            best = (float(err[i]), State(*map(int, states[i])), a)
    return best


def equivariance_residual(table: RepresentationTable, world: WorldAction, latent: LatentAction) -> float:
    return equivariance_witness(table, world, latent)[0]


def _validate_split(split: Sequence[Sequence[int]], dim: int) -> list[list[int]]:
    parts = [sorted(int(i) for i in part) for part in split]
    flat = sorted(itertools.chain.from_iterable(parts))
    if any(len(p) == 0 for p in parts) or flat != list(range(dim)):
        raise PartitionError(f"{split} is not a partition of dims 0..{dim - 1}")
    return parts


def disentanglement_check(
    table: RepresentationTable,
    latent: LatentAction,
    split: Sequence[Sequence[int]],
    factors: Sequence[Sequence[Move]] = FACTOR_GENERATORS,
) -> list[float]:
    """Per-subspace violation of "Z_i is fixed by every G_j, j != i".

    Subspace i belongs to factor group i; subspaces past the last factor must be
    fixed by every generator. The check runs over the table's latents and
    their one-step images.
    """
    parts = _validate_split(split, table.dim)
    z = table.values
    points = np.vstack([z] + [latent(a, z) for a in Move if a in latent.maps])
    violations = []
    for i, dims in enumerate(parts):
        worst = 0.0
        for j, gens in enumerate(factors):
            if j == i:
                continue
            for a in gens:
                moved = latent(a, points)
                worst = max(worst, float(np.max(np.abs(moved[:, dims] - points[:, dims]))))
        violations.append(worst)
    return violations


def count_permuted_worlds(n: int, factors: int) -> int:
    """Lower bound ``factors * n! - 1`` on worlds sharing states and group."""
    if n < 2 or factors < 1:
        raise ValueError("need n >= 2 and at least one factor group")
    return factors * math.factorial(n) - 1


def n_cycles(n: int) -> Iterator[tuple]:
    """Successor tables of every single n-cycle on {0..n-1}, canonical first."""
    for rest in itertools.permutations(range(1, n)):
        order = (0,) + rest
        succ = [0] * n
        for i in range(n):
            succ[order[i]] = order[(i + 1) % n]
        yield tuple(succ)


def _permuted_worlds(n: int) -> Iterator[WorldAction]:
    canonical = tuple((i + 1) % n for i in range(n))
    others = lambda: itertools.islice(n_cycles(n), 1, None)  # noqa: E731
    for p in others():
        yield WorldAction(p, canonical)
    for p in others():
        yield WorldAction(canonical, p)
    for px in others():
        for py in others():
            yield WorldAction(px, py)


def enumerate_permuted_worlds(n: int, limit: int) -> list[WorldAction]:
    """Non-canonical worlds whose per-axis successor maps are single n-cycles.

    Single-axis variants come first, then worlds permuted on both axes.
    """
    if limit < 1:
        raise ValueError("limit must be >= 1")
    return list(itertools.islice(_permuted_worlds(n), limit))


def sweep_observations(world: WorldAction, spec: WorldSpec) -> list[bytes]:
    """Still images met while walking the whole orbit of (0, 0) under the world's action."""
    if world.n != spec.n:
        raise ValueError("world and spec grid sizes differ")
    out = []
    start = np.array([[0, 0]])
    for i in range(spec.n):
        for j in range(spec.n):
            s = world.act(GroupElement(spec.n, i, j), start)[0]
            out.append(render(spec, s).astype("<f8").tobytes())
    return out


def same_still_images(world_a: WorldAction, world_b: WorldAction, spec: WorldSpec) -> bool:
    return sorted(sweep_observations(world_a, spec)) == sorted(sweep_observations(world_b, spec))


# --- 2-D linear representation probe ------------------------------------------------


def affine_residual(a, b, f) -> np.ndarray:
    """max_x |a*f(x) + b - f(x+1)| for one cyclic axis; broadcasts over a and b."""
    f = np.asarray(f, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)[..., None]
    b = np.asarray(b, dtype=np.float64)[..., None]
    return np.max(np.abs(a * f + b - np.roll(f, -1)), axis=-1)


def cyclicity_residual(a, b, f) -> np.ndarray:
    """max_x |(a^{2N} - 1) f(x) + b * sum_{i<2N} a^i|: the 2N-fold composition constraint."""
    f = np.asarray(f, dtype=np.float64)
    n = len(f)
    a = np.asarray(a, dtype=np.float64)[..., None]
    b = np.asarray(b, dtype=np.float64)[..., None]
    geometric = sum(a**i for i in range(2 * n))
    return np.max(np.abs((a ** (2 * n) - 1) * f + b * geometric), axis=-1)


@dataclass
class ProbeReport:
    best_nonconstant_residual: float
    identity_forced: bool
    threshold: float
    configurations: int
    best_config: tuple
    counterexamples: list = field(default_factory=list)


def bump_maps(n: int) -> np.ndarray:
    return np.eye(n)


def linear_collapse_probe(
    n: int,
    trials: int = 0,
    resolution: float = 0.05,
    bound: float = 2.0,
    threshold: float = 0.1,
    tol: float = 1e-6,
    seed: int = 0,
) -> ProbeReport:
    """Search affine 1-D actions for a non-trivial equivariant map on a cyclic axis.

    Candidate maps are the n one-hot bumps plus ``trials`` random maps scaled to
    unit range. Every (a, b) on a grid over [-bound, bound]^2 is scored by the
    one-step residual; configurations inside an escape clause (near-constant map,
    or (a, b) close to (1, 0)) are skipped. ``identity_forced`` holds when every
    remaining configuration stays at or above ``threshold``.
    """
    if n < 2 or trials < 0:
        raise ValueError("need n >= 2 and trials >= 0")
    maps = [m for m in bump_maps(n)]
    rng = np.random.Generator(np.random.PCG64(seed))
    for _ in range(trials):
        f = rng.standard_normal(n)
        f = (f - f.min()) / (f.max() - f.min())
        maps.append(f)
    steps = int(round(2 * bound / resolution)) + 1
    grid = np.linspace(-bound, bound, steps)
    a, b = np.meshgrid(grid, grid, indexing="ij")
    identity = (np.abs(a - 1) <= tol) & (np.abs(b) <= tol)
    best = (np.inf, None)
    counterexamples = []
    count = 0
    for k, f in enumerate(maps):
        if np.var(f) < tol:
            continue
        res = np.where(identity, np.inf, affine_residual(a, b, f))
        count += int(np.sum(~identity))
        i = np.unravel_index(np.argmin(res), res.shape)
        if res[i] < best[0]:
            best = (float(res[i]), (float(a[i]), float(b[i]), k))
        for j in zip(*np.nonzero(res < threshold)):
            counterexamples.append((float(a[j]), float(b[j]), k, float(res[j])))
    return ProbeReport(
        best_nonconstant_residual=best[0],
        identity_forced=best[0] >= threshold,
        threshold=threshold,
        configurations=count,
        best_config=best[1],
        counterexamples=counterexamples,
    )
