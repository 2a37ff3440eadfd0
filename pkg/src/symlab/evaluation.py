"""Quantitative analyses of trained representations.

Learned-vs-ideal action matrices, determinant drift under repeated
composition, latent traversals with centroid tracking, and the inverse-model
benchmark: a random forest predicting a_t from (s_t, s_{t+1}), scored by
k-fold cross-validation.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .analytic import BLOCKS, ideal_angle, ideal_matrix
from .forest import predict, train_decision_forest
from .groups import RepresentationTable
from .models import ModelCheckpoint, decode_latents, encode_states
from .world import Move, TransitionDataset

log = logging.getLogger(__name__)


# --- action matrices ------------------------------------------------------------------


def rotation_angle(block: np.ndarray) -> float:
    """Angle of the rotation nearest (Frobenius) to a 2x2 block, in (-pi, pi]."""
    return float(np.arctan2(block[1, 0] - block[0, 1], block[0, 0] + block[1, 1]))


@dataclass
class MatrixRow:
    action: str
    block: str
    learned: np.ndarray
    angle: float
    first_column_angle: float
    ideal_angle: float
    mse: float
    det: float


@dataclass
class MatrixReport:
    n: int
    orientation: dict
    rows: list

    def row(self, a) -> MatrixRow:
        return next(r for r in self.rows if r.action == Move(a).name)


def analyze_matrices(matrices: Mapping, n: int) -> MatrixReport:
    """Compare learned action matrices with the ideal rotations at +-2*pi/n.

    A learned representation may traverse an axis clockwise; the orientation of
    each axis is chosen to minimise the mean squared difference of its two moves.
    """
    mats = {Move(a): np.asarray(getattr(m, "entries", m), dtype=np.float64) for a, m in matrices.items()}
    orientation = {}
    for block in BLOCKS:
        moves = [a for a in mats if ("x" if a.axis == 0 else "y") == block]
        errs = {}
        for sign in (1, -1):
            errs[sign] = sum(np.mean((mats[a] - _oriented_ideal(a, n, sign)) ** 2) for a in moves)
        orientation[block] = min(errs, key=lambda s: (errs[s], -s))
    rows = []
    for a in sorted(mats):
        block = "x" if a.axis == 0 else "y"
        sl = BLOCKS[block]
        learned = mats[a][sl, sl]
        ideal = _oriented_ideal(a, n, orientation[block])
        rows.append(
            MatrixRow(
                action=a.name,
                block=block,
                learned=learned.copy(),
                angle=rotation_angle(learned),
                first_column_angle=float(np.arctan2(learned[1, 0], learned[0, 0])),
                ideal_angle=orientation[block] * ideal_angle(a, n),
                mse=float(np.mean((mats[a] - ideal) ** 2)),
                det=float(np.linalg.det(learned)),
            )
        )
    return MatrixReport(n, orientation, rows)


def _oriented_ideal(a, n: int, sign: int) -> np.ndarray:
    m = ideal_matrix(a, n).entries
    if sign < 0:
        m = m.T  # inverse rotation
    return m


def write_matrix_report(report: MatrixReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["action", "block", "a00", "a01", "a10", "a11", "angle", "first_column_angle", "ideal_angle", "mse", "det"])
        for r in report.rows:
            w.writerow([r.action, r.block, *r.learned.ravel(), r.angle, r.first_column_angle, r.ideal_angle, r.mse, r.det])


# --- determinant drift ----------------------------------------------------------------


@dataclass
class DriftCurve:
    k: np.ndarray
    det: np.ndarray
    log_abs_det: np.ndarray


def active_block(m) -> np.ndarray:
    entries = np.asarray(getattr(m, "entries", m), dtype=np.float64)
    block = getattr(m, "block", None)
    if block is None:
        # pick the block that differs from identity
        off_x = np.abs(entries[:2, :2] - np.eye(2)).sum()
        off_y = np.abs(entries[2:, 2:] - np.eye(2)).sum()
        block = "x" if off_x >= off_y else "y"
    return entries[BLOCKS[block], BLOCKS[block]]


def determinant_drift(m, max_k: int) -> DriftCurve:
    """det(block^k) = det(block)^k for k = 1..max_k; overflow becomes +-inf."""
    if max_k < 1:
        raise ValueError("max_k must be >= 1")
    d = float(np.linalg.det(active_block(m)))
    k = np.arange(1, max_k + 1)
    with np.errstate(over="ignore", divide="ignore"):
        log_abs = k * np.log(abs(d))
        det = np.exp(log_abs) * np.sign(d) ** k
    return DriftCurve(k, det, log_abs)


def composed_log_det(m, max_k: int) -> np.ndarray:
    """log|det(block^k)| by explicit repeated multiplication with renormalization."""
    block = active_block(m)
    prod = np.eye(2)
    log_scale = 0.0
    out = np.empty(max_k)
    for i in range(max_k):
        prod = block @ prod
        s = np.abs(prod).max()
        prod /= s
        log_scale += np.log(s)
        out[i] = 2 * log_scale + np.log(abs(np.linalg.det(prod)))
    return out


def write_drift(curves: Mapping[str, DriftCurve], path) -> None:
    names = list(curves)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k"] + [f"det_{n}" for n in names] + [f"logdet_{n}" for n in names])
        first = curves[names[0]]
        for i, k in enumerate(first.k):
            w.writerow([int(k)] + [curves[n].det[i] for n in names] + [curves[n].log_abs_det[i] for n in names])


# --- latent traversals ----------------------------------------------------------------


def latent_traversal(
    ckpt: ModelCheckpoint,
    index: int,
    steps: int = 9,
    table: RepresentationTable | None = None,
) -> np.ndarray:
    """Decoded frames, shape (steps, B, B).

    Forward-VAE: sweep the phase of complex pair ``index`` over [0, 2*pi) at the
    pair's mean radius over the encoded states, other pair fixed at the code of
    state (0, 0). Other models: sweep dimension ``index`` over [-2, 2] with the
    remaining dimensions at zero.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    b = ckpt.spec.image_size
    if ckpt.kind == "forward-vae":
        if index not in (0, 1):
            raise ValueError("Forward-VAE traversals take pair index 0 (x) or 1 (y)")
        table = table if table is not None else encode_states(ckpt)
        sl = slice(2 * index, 2 * index + 2)
        radius = float(np.mean(np.linalg.norm(table.values[:, sl], axis=1)))
        phase = np.linspace(0.0, 2 * np.pi, steps, endpoint=False)
        z = np.repeat(table.values[:1], steps, axis=0)
        z[:, sl] = radius * np.stack([np.cos(phase), np.sin(phase)], axis=1)
    else:
        if not 0 <= index < ckpt.z_dim:
            raise ValueError(f"dimension {index} outside 0..{ckpt.z_dim - 1}")
        z = np.zeros((steps, ckpt.z_dim))
        z[:, index] = np.linspace(-2.0, 2.0, steps)
    return decode_latents(ckpt, z).reshape(steps, b, b)


def toroidal_centroid(frame: np.ndarray) -> tuple[float, float]:
    """Intensity-weighted (x, y) centroid, computed as a circular mean on each axis."""
    b = frame.shape[0]
    theta = 2 * np.pi * (np.arange(b) + 0.5) / b
    wx = frame.sum(axis=0)
    wy = frame.sum(axis=1)
    ax = np.arctan2(wx @ np.sin(theta), wx @ np.cos(theta))
    ay = np.arctan2(wy @ np.sin(theta), wy @ np.cos(theta))
    return float(ax * b / (2 * np.pi) - 0.5) % b, float(ay * b / (2 * np.pi) - 0.5) % b


def centroid_displacement(frames: np.ndarray) -> tuple[float, float]:
    """Total absolute wrapped centroid motion along x and y across consecutive frames."""
    b = frames.shape[1]
    cents = np.array([toroidal_centroid(f) for f in frames])
    steps = np.diff(cents, axis=0)
    steps = (steps + b / 2) % b - b / 2
    total = np.abs(steps).sum(axis=0)
    return float(total[0]), float(total[1])


def write_pgm(frames: np.ndarray, path, columns: int | None = None) -> None:
    """Binary 8-bit PGM (P5) with frames tiled left-to-right, top-to-bottom."""
    frames = np.asarray(frames)
    count, h, w = frames.shape
    columns = columns or count
    rows = -(-count // columns)
    canvas = np.zeros((rows * h, columns * w))
    for i, f in enumerate(frames):
        r, c = divmod(i, columns)
        canvas[r * h : (r + 1) * h, c * w : (c + 1) * w] = f
    pixels = np.clip(np.round(canvas * 255), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{pixels.shape[1]} {pixels.shape[0]}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4][: w * h], dtype=np.uint8).reshape(h, w)


# --- inverse-model benchmark ----------------------------------------------------------


def kfold_indices(count: int, folds: int, seed: int) -> list[np.ndarray]:
    order = np.random.Generator(np.random.PCG64(seed)).permutation(count)
    return np.array_split(order, folds)


def inverse_features(table: RepresentationTable, data: TransitionDataset) -> tuple[np.ndarray, np.ndarray]:
    """(s_t || s_{t+1}) feature rows with the action as label."""
    return np.hstack([table.lookup(data.states), table.lookup(data.next_states)]), data.actions.copy()


@dataclass
class BenchmarkResult:
    representation: str
    size: int
    max_depth: int
    mean_accuracy: float
    std_accuracy: float
    folds: int
    skipped_folds: int = 0


def cross_validate(
    features: np.ndarray,
    labels: np.ndarray,
    depths: Sequence[int],
    folds: int = 10,
    trees: int = 100,
    seed: int = 0,
    threads: int | None = None,
) -> dict[int, list[float]]:
    """Per-depth validation accuracies over k folds.

    One forest per fold is grown to the largest depth and read at each smaller
    depth. Folds whose training part holds a single class are skipped.
    """
    if len(labels) < 10 * folds:
        raise ValueError(f"need at least {10 * folds} samples for {folds}-fold CV, got {len(labels)}")
    max_depth = max(depths)
    scores = {d: [] for d in depths}
    parts = kfold_indices(len(labels), folds, seed)
    for i, test in enumerate(parts):
        train = np.concatenate([p for j, p in enumerate(parts) if j != i])
        if len(np.unique(labels[train])) < 2:
            log.warning("fold %d: single-class training split, skipped", i)
            continue
        forest = train_decision_forest(
            features[train], labels[train], trees=trees, max_depth=max_depth, seed=seed + i, threads=threads
        )
        for d in depths:
            scores[d].append(float(np.mean(predict(forest, features[test], max_depth=d) == labels[test])))
    return scores


def inverse_model_benchmark(
    representations: Mapping[str, RepresentationTable],
    data: TransitionDataset,
    sizes: Sequence[int] = (1000, 10000),
    depths: Sequence[int] = tuple(range(1, 11)),
    folds: int = 10,
    trees: int = 100,
    seed: int = 0,
    shuffle_labels: bool = False,
    threads: int | None = None,
) -> list[BenchmarkResult]:
    results = []
    for name, table in representations.items():
        for size in sizes:
            if size > len(data):
                raise ValueError(f"dataset has {len(data)} transitions, {size} requested")
            X, y = inverse_features(table, data.head(size))
            if shuffle_labels:
                y = np.random.Generator(np.random.PCG64(seed + 1)).permutation(y)
            scores = cross_validate(X, y, depths, folds, trees, seed, threads)
            for d in depths:
                acc = np.array(scores[d])
                results.append(
                    BenchmarkResult(
                        representation=name,
                        size=size,
                        max_depth=d,
                        mean_accuracy=float(acc.mean()) if len(acc) else float("nan"),
                        std_accuracy=float(acc.std()) if len(acc) else float("nan"),
                        folds=folds,
                        skipped_folds=folds - len(acc),
                    )
                )
            log.info("%s @ %d: depth %d accuracy %.4f", name, size, depths[-1], results[-1].mean_accuracy)
    return results


def write_benchmark(results: Sequence[BenchmarkResult], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(BenchmarkResult.__dataclass_fields__))
        w.writeheader()
        for r in results:
            w.writerow(asdict(r))


def lookup_result(results: Sequence[BenchmarkResult], name: str, size: int, depth: int) -> BenchmarkResult:
    return next(r for r in results if r.representation == name and r.size == size and r.max_depth == depth)
