"""Closed-form reference representations.

The 4-D representation places x and y on two unit circles,
``z = (cos 2*pi*x/N, sin 2*pi*x/N, cos 2*pi*y/N, sin 2*pi*y/N)``, and each
move acts on it by a 2x2 rotation inside a block-diagonal 4x4 matrix.
Left/Right act on rows/cols 0-1 and Up/Down on rows/cols 2-3.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .groups import LatentAction, RepresentationTable
from .world import Move, grid_states

BLOCKS = {"x": slice(0, 2), "y": slice(2, 4)}


def block_of(a) -> str:
    return "x" if Move(a).axis == 0 else "y"


def block_mask(block: str, dim: int = 4) -> np.ndarray:
    """Boolean mask of the trainable 2x2 entries of a block-diagonal action matrix."""
    mask = np.zeros((dim, dim), dtype=bool)
    sl = BLOCKS[block]
    mask[sl, sl] = True
    return mask


def rotation(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])


@dataclass
class ActionMatrix:
    entries: np.ndarray
    block: str
    trainable_mask: np.ndarray = field(default=None)

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=np.float64)
        if self.entries.shape != (4, 4):
            raise ValueError(f"action matrices are 4x4, got {self.entries.shape}")
        if self.block not in BLOCKS:
            raise ValueError(f"unknown block {self.block!r}")
        if self.trainable_mask is None:
            self.trainable_mask = block_mask(self.block)

    @property
    def active(self) -> np.ndarray:
        sl = BLOCKS[self.block]
        return self.entries[sl, sl]

    def is_structured(self) -> bool:
        """True when everything outside the active block is exactly identity/zero."""
        outside = ~block_mask(self.block)
        return bool(np.array_equal(self.entries[outside], np.eye(4)[outside]))


def ideal_angle(a, n: int) -> float:
    return Move(a).delta * 2 * np.pi / n


def ideal_matrix(a, n: int) -> ActionMatrix:
    a = Move(a)
    block = block_of(a)
    m = np.eye(4)
    m[BLOCKS[block], BLOCKS[block]] = rotation(ideal_angle(a, n))
    return ActionMatrix(m, block)


def ideal_matrices(n: int) -> dict[Move, ActionMatrix]:
    return {a: ideal_matrix(a, n) for a in Move}


def apply(m, z) -> np.ndarray:
    """Matrix-vector product; ``z`` may be a single 4-vector or a batch of them."""
    entries = m.entries if isinstance(m, ActionMatrix) else np.asarray(m, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != entries.shape[1]:
        raise ValueError(f"dimension mismatch: matrix is {entries.shape}, vector has {z.shape[-1]}")
    return z @ entries.T


@dataclass(frozen=True)
class AnalyticLSB:
    n: int

    def encode(self, s) -> np.ndarray:
        return self.encode_batch(np.asarray([s]))[0]

    def encode_batch(self, states) -> np.ndarray:
        states = np.asarray(states, dtype=np.float64)
        tx = 2 * np.pi * states[:, 0] / self.n
        ty = 2 * np.pi * states[:, 1] / self.n
        return np.stack([np.cos(tx), np.sin(tx), np.cos(ty), np.sin(ty)], axis=1)

    def table(self) -> RepresentationTable:
        return RepresentationTable(self.n, self.encode_batch(grid_states(self.n)))

    def latent_action(self) -> LatentAction:
        return LatentAction.from_matrices(ideal_matrices(self.n))


def encode(rep: AnalyticLSB, s) -> np.ndarray:
    return rep.encode(s)


def trivial_representation(n: int, dim: int) -> RepresentationTable:
    """Constant (zero) representation of every state."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    return RepresentationTable(n, np.zeros((n * n, dim)))
