"""Decoupled group-action learning: an MLP on top of a frozen representation.

One MLP, shared across moves, maps ``(z_t, onehot(a_t))`` to ``z_{t+1}``.
Latents are standardized with the table's per-dimension mean and std before
entering the network, and predictions are mapped back to raw latent units.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .groups import LatentAction, RepresentationTable
from .models import ModelCheckpoint, TrainingError, mlp
from .world import Move, TransitionDataset, WorldSpec, step_arrays

HIDDEN = (64, 64)


@dataclass
class ActionConfig:
    epochs: int = 200
    batch_size: int = 128
    learning_rate: float = 3e-3
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("invalid action-learner configuration")


def onehot(actions) -> np.ndarray:
    actions = np.asarray(actions, dtype=np.int64)
    out = np.zeros((len(actions), 4))
    out[np.arange(len(actions)), actions] = 1.0
    return out


def init_action_mlp(table: RepresentationTable, hidden=HIDDEN, seed: int = 0) -> dict[str, np.ndarray]:
    rng = np.random.Generator(np.random.PCG64(seed))
    sizes = [table.dim + 4, *hidden, table.dim]
    params = {}
    for i in range(len(sizes) - 1):
        bound = 1.0 / math.sqrt(sizes[i])
        params[f"mlp.{i}.w"] = rng.uniform(-bound, bound, size=(sizes[i], sizes[i + 1]))
        params[f"mlp.{i}.b"] = rng.uniform(-bound, bound, size=sizes[i + 1])
    std = table.values.std(axis=0)
    params["norm.mean"] = table.values.mean(axis=0)
    params["norm.std"] = np.where(std > 1e-8, std, 1.0)
    return params


def _standardized_forward(params, z_std: np.ndarray, actions) -> ad.Tensor:
    return mlp(params, "mlp", ad.concat_columns(ad.Tensor(z_std), ad.Tensor(onehot(actions).astype(z_std.dtype))))


def action_loss(params, z, z_next, actions) -> ad.Tensor:
    mean, std = params["norm.mean"].data, params["norm.std"].data
    pred = _standardized_forward(params, (z - mean) / std, actions)
    return ad.mse(pred, (z_next - mean) / std)


def train_action_mlp(
    table: RepresentationTable,
    transitions: TransitionDataset,
    config: ActionConfig | None = None,
    hidden=HIDDEN,
) -> ModelCheckpoint:
    """Fit the MLP on (f(s_t), a_t, f(s_{t+1})); the table is only read."""
    config = config or ActionConfig()
    if transitions.spec.n != table.n:
        raise ValueError(f"table covers a {table.n}-grid, transitions a {transitions.spec.n}-grid")
    z_all = table.lookup(transitions.states)
    z_next_all = table.lookup(transitions.next_states)
    raw = init_action_mlp(table, hidden, config.seed)
    params = {k: ad.Tensor(v, requires_grad=k.startswith("mlp.")) for k, v in raw.items()}
    trainable = {k: p for k, p in params.items() if p.requires_grad}
    rng = np.random.Generator(np.random.PCG64(config.seed))
    opt = ad.AdamState(lr=config.learning_rate)
    history, step = [], 0
    for _ in range(config.epochs):
        order = rng.permutation(len(transitions))
        for start in range(0, len(order), config.batch_size):
            sel = order[start : start + config.batch_size]
            try:
                loss = action_loss(params, z_all[sel], z_next_all[sel], transitions.actions[sel])
                ad.zero_grad(trainable.values())
                ad.backward(loss)
                ad.adam_step(opt, trainable)
            except ad.NonFiniteError as exc:
                raise TrainingError(f"action-mlp: {exc} at step {step}") from exc
            history.append({"step": step, "recon": 0.0, "kl": 0.0, "forward": loss.item(), "gamma": 0.0, "total": loss.item()})
            step += 1
    return ModelCheckpoint(
        kind="action-mlp",
        spec=transitions.spec,
        z_dim=table.dim,
        hidden=tuple(hidden),
        params={k: p.data.copy() for k, p in params.items()},
        history=history,
        config=asdict(config),
    )


def predict_next(ckpt: ModelCheckpoint, z, actions) -> np.ndarray:
    if ckpt.kind != "action-mlp":
        raise ValueError(f"expected an action-mlp checkpoint, got {ckpt.kind}")
    params = ckpt.tensors()
    mean, std = params["norm.mean"].data, params["norm.std"].data
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    if z.shape[1] != ckpt.z_dim:
        raise ValueError(f"latent dimension {z.shape[1]} != {ckpt.z_dim}")
    out = _standardized_forward(params, (z - mean) / std, np.broadcast_to(np.asarray(actions), (len(z),)))
    return mean + std * out.data


def as_latent_action(ckpt: ModelCheckpoint) -> LatentAction:
    return LatentAction({a: (lambda z, a=a: predict_next(ckpt, z, int(a))) for a in Move})


def prediction_mse(ckpt: ModelCheckpoint, table: RepresentationTable, data: TransitionDataset) -> float:
    pred = predict_next(ckpt, table.lookup(data.states), data.actions)
    return float(np.mean((pred - table.lookup(data.next_states)) ** 2))


def boundary_moves(spec: WorldSpec) -> tuple[np.ndarray, np.ndarray]:
    """Every (state, move) whose move wraps around the grid edge."""
    states, actions = [], []
    last = spec.n - 1
    for k in range(spec.n):
        states += [(0, k), (last, k), (k, last), (k, 0)]
        actions += [Move.LEFT, Move.RIGHT, Move.UP, Move.DOWN]
    return np.array(states), np.array(actions, dtype=np.int64)


def _wrap_distances(ckpt: ModelCheckpoint, table: RepresentationTable, spec: WorldSpec):
    states, actions = boundary_moves(spec)
    pred = predict_next(ckpt, table.lookup(states), actions)
    dist = np.linalg.norm(pred[:, None, :] - table.values[None, :, :], axis=2)
    source = states[:, 0] * spec.n + states[:, 1]
    target = step_arrays(spec, states, actions)
    return dist, source, target[:, 0] * spec.n + target[:, 1]


def wrap_accuracy(ckpt: ModelCheckpoint, table: RepresentationTable, spec: WorldSpec) -> float:
    """Fraction of wrapping moves predicted on the far side of the grid.

    A prediction counts when it lies closer to the code of the wrapped
    destination than to the code of the state it started from.
    """
    dist, source, target = _wrap_distances(ckpt, table, spec)
    rows = np.arange(len(dist))
    return float(np.mean(dist[rows, target] < dist[rows, source]))


def wrap_decoding_accuracy(ckpt: ModelCheckpoint, table: RepresentationTable, spec: WorldSpec) -> float:
    """Stricter variant: the nearest table entry to the prediction is the true destination."""
    dist, _, target = _wrap_distances(ckpt, table, spec)
    return float(np.mean(np.argmin(dist, axis=1) == target))
