"""Auto-encoder, annealed-KL VAE and Forward-VAE on flattened observations.

The Forward-VAE adds one 4x4 matrix per move. Each matrix has a trainable
2x2 block for its own axis, and every other entry stays frozen at identity
or zero. Its loss per batch is

    recon + gamma_t * KL + mse(A[a_t] @ mu(o_t), mu(o_{t+1}))

with ``gamma_t = gamma_0 * factor ** t`` and ``t`` the number of batches seen.
Reconstruction decodes a reparameterized sample. The forward term uses
encoder means for both the prediction input and the target, and neither
side is detached.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .analytic import block_mask
from .checkpoint import load_tensors, save_tensors
from .groups import LatentAction, RepresentationTable
from .world import Move, TransitionDataset, WorldSpec, grid_states, render_batch

log = logging.getLogger(__name__)

KINDS = ("ae", "cci-vae", "forward-vae", "action-mlp")
DEFAULT_HIDDEN = (256, 128)
LOG_COLUMNS = ("step", "recon", "kl", "forward", "gamma", "total")


class TrainingError(RuntimeError):
    pass


class CheckpointMismatchError(ValueError):
    pass


@dataclass
class TrainingConfig:
    epochs: int = 11
    batch_size: int = 128
    kl_weight_initial: float = 1.0
    kl_anneal_factor: float = 0.995
    learning_rate: float = 1e-3
    seed: int = 0
    recon_reduction: str = "sum"

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.kl_weight_initial <= 0 or self.kl_anneal_factor <= 0 or self.learning_rate <= 0:
            raise ValueError("KL weight, anneal factor and learning rate must be positive")
        if self.recon_reduction not in ("mean", "sum"):
            raise ValueError("recon_reduction is 'mean' or 'sum'")

    def gamma(self, batches_elapsed: int) -> float:
        return self.kl_weight_initial * self.kl_anneal_factor**batches_elapsed


@dataclass
class ModelCheckpoint:
    kind: str
    spec: WorldSpec
    z_dim: int
    hidden: tuple
    params: dict
    history: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    @property
    def variational(self) -> bool:
        return self.kind in ("cci-vae", "forward-vae")

    def tensors(self, dtype=np.float64) -> dict:
        return {k: ad.Tensor(np.array(v, dtype=dtype)) for k, v in self.params.items()}

    def action_matrices(self) -> dict:
        if self.kind != "forward-vae":
            raise CheckpointMismatchError(f"{self.kind} checkpoints carry no action matrices")
        mats = np.asarray(self.params["actions"], dtype=np.float64)
        return {a: mats[int(a)] for a in Move}

    def latent_action(self) -> LatentAction:
        return LatentAction.from_matrices(self.action_matrices())


# --- parameters -----------------------------------------------------------------------


def _layer(rng: np.random.Generator, fan_in: int, fan_out: int):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out)), rng.uniform(-bound, bound, size=fan_out)


def init_params(
    spec: WorldSpec,
    kind: str,
    z_dim: int,
    hidden=DEFAULT_HIDDEN,
    seed: int = 0,
    free_blocks: bool = False,
) -> dict[str, np.ndarray]:
    rng = np.random.Generator(np.random.PCG64(seed))
    pixels = spec.image_size**2
    enc_out = 2 * z_dim if kind in ("cci-vae", "forward-vae") else z_dim
    params = {}
    sizes = [pixels, *hidden, enc_out]
    for i in range(len(sizes) - 1):
        params[f"enc.{i}.w"], params[f"enc.{i}.b"] = _layer(rng, sizes[i], sizes[i + 1])
    sizes = [z_dim, *reversed(hidden), pixels]
    for i in range(len(sizes) - 1):
        params[f"dec.{i}.w"], params[f"dec.{i}.b"] = _layer(rng, sizes[i], sizes[i + 1])
    if kind == "forward-vae":
        if z_dim != 4:
            raise ValueError("the Forward-VAE latent space is 4-dimensional")
        masks = np.stack([np.ones((4, 4)) if free_blocks else block_mask(_block(a)) for a in Move])
        noise = rng.uniform(-0.01, 0.01, size=(4, 4, 4))
        params["actions"] = np.eye(4)[None] + noise * masks
        params["actions.mask"] = masks
    return params


def _block(a) -> str:
    return "x" if Move(a).axis == 0 else "y"


def _count_layers(params, prefix: str) -> int:
    return sum(1 for k in params if k.startswith(prefix) and k.endswith(".w"))


# --- forward passes -------------------------------------------------------------------


def mlp(params, prefix: str, x: ad.Tensor, out_activation=None) -> ad.Tensor:
    layers = _count_layers(params, prefix)
    h = x
    for i in range(layers):
        h = ad.affine(h, params[f"{prefix}.{i}.w"], params[f"{prefix}.{i}.b"])
        if i < layers - 1:
            h = ad.relu(h)
    return out_activation(h) if out_activation else h


def encode(params, x, z_dim: int, variational: bool):
    out = mlp(params, "enc", ad.tensor(x))
    if not variational:
        return out, None
    return ad.columns(out, 0, z_dim), ad.columns(out, z_dim, 2 * z_dim)


def decode(params, z) -> ad.Tensor:
    return mlp(params, "dec", ad.tensor(z), ad.sigmoid)


def reconstruction(pred: ad.Tensor, obs, reduction: str = "sum") -> ad.Tensor:
    """Pixel MSE; ``"sum"`` scales it to the per-image sum of squared errors."""
    err = ad.mse(pred, obs)
    return err if reduction == "mean" else ad.scale(err, float(np.prod(obs.shape[1:])))


def ae_loss(params, obs, reduction: str = "sum") -> tuple[ad.Tensor, dict]:
    z_dim = params["dec.0.w"].shape[0]
    z, _ = encode(params, obs, z_dim, False)
    recon = reconstruction(decode(params, z), obs, reduction)
    return recon, {"recon": recon.item(), "kl": 0.0, "forward": 0.0}


def vae_loss(params, obs, noise, gamma: float, reduction: str = "sum") -> tuple[ad.Tensor, dict]:
    z_dim = params["dec.0.w"].shape[0]
    mu, logvar = encode(params, obs, z_dim, True)
    z = ad.reparameterize(mu, logvar, noise)
    recon = reconstruction(decode(params, z), obs, reduction)
    kl = ad.kl_to_standard_normal(mu, logvar)
    total = ad.add(recon, ad.scale(kl, gamma))
    return total, {"recon": recon.item(), "kl": kl.item(), "forward": 0.0}


def forward_vae_loss(
    params, obs_t, obs_next, actions, noise, gamma: float, reduction: str = "sum"
) -> tuple[ad.Tensor, dict]:
    """Recon + gamma * KL + forward loss; ``noise`` has shape (2m, 4) for the stacked batch."""
    m = obs_t.shape[0]
    obs = np.concatenate([obs_t, obs_next], axis=0)
    mu, logvar = encode(params, obs, 4, True)
    z_t, z_next = ad.rows(mu, 0, m), ad.rows(mu, m, 2 * m)
    forward = ad.mse(ad.select_matvec(params["actions"], z_t, actions), z_next)
    z = ad.reparameterize(mu, logvar, noise)
    recon = reconstruction(decode(params, z), obs, reduction)
    kl = ad.kl_to_standard_normal(mu, logvar)
    total = ad.add(recon, ad.scale(kl, gamma), forward)
    return total, {"recon": recon.item(), "kl": kl.item(), "forward": forward.item()}


# --- training -------------------------------------------------------------------------


def _streams(seed: int) -> tuple[np.random.Generator, ad.NormalSource]:
    shuffle_seed, noise_seed = np.random.SeedSequence(seed).generate_state(2)
    return np.random.Generator(np.random.PCG64(int(shuffle_seed))), ad.NormalSource(int(noise_seed))


def batches_per_epoch(count: int, batch_size: int) -> int:
    return math.ceil(count / batch_size)


def _train(
    kind: str,
    data: TransitionDataset,
    config: TrainingConfig,
    z_dim: int,
    hidden,
    free_blocks: bool = False,
    dtype=np.float32,
    callback: Callable | None = None,
) -> ModelCheckpoint:
    spec = data.spec
    raw = init_params(spec, kind, z_dim, hidden, config.seed, free_blocks)
    params = {k: ad.Tensor(v.astype(dtype), requires_grad=not k.endswith(".mask")) for k, v in raw.items()}
    trainable = {k: p for k, p in params.items() if p.requires_grad}
    masks = {"actions": params["actions.mask"].data} if "actions" in params else None
    images = render_batch(spec, grid_states(spec.n)).astype(dtype)
    idx_t = data.states[:, 0] * spec.n + data.states[:, 1]
    idx_next = data.next_states[:, 0] * spec.n + data.next_states[:, 1]
    shuffle, noise = _streams(config.seed)
    opt = ad.AdamState(lr=config.learning_rate)
    red = config.recon_reduction
    history = []
    step = 0
    for epoch in range(config.epochs):
        order = shuffle.permutation(len(data))
        for start in range(0, len(data), config.batch_size):
            sel = order[start : start + config.batch_size]
            gamma = config.gamma(step)
            try:
                if kind == "ae":
                    total, parts = ae_loss(params, images[idx_t[sel]], red)
                elif kind == "cci-vae":
                    eps = noise.normal((len(sel), z_dim))
                    total, parts = vae_loss(params, images[idx_t[sel]], eps, gamma, red)
                else:
                    eps = noise.normal((2 * len(sel), z_dim))
                    total, parts = forward_vae_loss(
                        params, images[idx_t[sel]], images[idx_next[sel]], data.actions[sel], eps, gamma, red
                    )
                ad.zero_grad(trainable.values())
                ad.backward(total)
                ad.adam_step(opt, trainable, masks=masks)
            except ad.NonFiniteError as exc:
                last = history[-1] if history else {}
                raise TrainingError(f"{kind}: {exc} at step {step} (epoch {epoch}); last losses {last}") from exc
            row = {"step": step, **parts, "gamma": gamma if kind != "ae" else 0.0, "total": total.item()}
            history.append(row)
            if callback is not None:
                callback(row)
            step += 1
        if history:
            log.info("%s epoch %d/%d total %.6f", kind, epoch + 1, config.epochs, history[-1]["total"])
    return ModelCheckpoint(
        kind=kind,
        spec=spec,
        z_dim=z_dim,
        hidden=tuple(hidden),
        params={k: p.data.copy() for k, p in params.items()},
        history=history,
        config=asdict(config),
    )


def train_autoencoder(data: TransitionDataset, config: TrainingConfig, z_dim: int = 2, hidden=DEFAULT_HIDDEN, **kw):
    return _train("ae", data, config, z_dim, hidden, **kw)


def train_cci_vae(data: TransitionDataset, config: TrainingConfig, z_dim: int = 2, hidden=DEFAULT_HIDDEN, **kw):
    return _train("cci-vae", data, config, z_dim, hidden, **kw)


def train_forward_vae(
    data: TransitionDataset,
    config: TrainingConfig,
    hidden=DEFAULT_HIDDEN,
    free_blocks: bool = False,
    **kw,
) -> ModelCheckpoint:
    if not data.is_trajectory():
        raise ValueError("Forward-VAE training needs a trajectory dataset")
    return _train("forward-vae", data, config, 4, hidden, free_blocks=free_blocks, **kw)


# --- inference ------------------------------------------------------------------------


def encode_observations(ckpt: ModelCheckpoint, obs: np.ndarray) -> np.ndarray:
    """Encoder means (or codes, for the auto-encoder) of flattened observations."""
    if ckpt.kind not in ("ae", "cci-vae", "forward-vae"):
        raise CheckpointMismatchError(f"{ckpt.kind} checkpoints have no encoder")
    params = ckpt.tensors()
    if obs.shape[1] != params["enc.0.w"].shape[0]:
        raise CheckpointMismatchError("observation size does not match the encoder")
    mu, _ = encode(params, np.asarray(obs, dtype=np.float64), ckpt.z_dim, ckpt.variational)
    return mu.data


def encode_states(ckpt: ModelCheckpoint, spec: WorldSpec | None = None) -> RepresentationTable:
    spec = spec or ckpt.spec
    if spec != ckpt.spec:
        raise CheckpointMismatchError(f"checkpoint trained on {ckpt.spec}, asked for {spec}")
    return RepresentationTable(spec.n, encode_observations(ckpt, render_batch(spec, grid_states(spec.n))))


def decode_latents(ckpt: ModelCheckpoint, z: np.ndarray) -> np.ndarray:
    params = ckpt.tensors()
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    if z.shape[1] != ckpt.z_dim:
        raise ValueError(f"latent dimension {z.shape[1]} != {ckpt.z_dim}")
    return decode(params, z).data


def latent_variances(ckpt: ModelCheckpoint, data: TransitionDataset) -> np.ndarray:
    """Per-dimension variance of encoder means over the dataset's states."""
    table = encode_states(ckpt)
    return np.var(table.lookup(data.states), axis=0)


# --- persistence ----------------------------------------------------------------------


def _meta(ckpt: ModelCheckpoint) -> dict:
    return {
        "meta.kind": np.array([KINDS.index(ckpt.kind)]),
        "meta.z_dim": np.array([ckpt.z_dim]),
        "meta.hidden": np.array(ckpt.hidden, dtype=np.float64),
        "meta.world": np.array([ckpt.spec.n, ckpt.spec.image_size, ckpt.spec.radius]),
    }


def checkpoint_tensors(ckpt: ModelCheckpoint) -> dict:
    return {**_meta(ckpt), **ckpt.params}


def save_checkpoint(ckpt: ModelCheckpoint, path) -> None:
    save_tensors(path, checkpoint_tensors(ckpt))


def load_checkpoint(path) -> ModelCheckpoint:
    tensors = load_tensors(path)
    try:
        kind = KINDS[int(tensors.pop("meta.kind")[0])]
        z_dim = int(tensors.pop("meta.z_dim")[0])
        hidden = tuple(int(h) for h in tensors.pop("meta.hidden"))
        n, b, r = tensors.pop("meta.world")
    except (KeyError, IndexError) as exc:
        raise CheckpointMismatchError(f"{path}: missing checkpoint metadata") from exc
    spec = WorldSpec(int(n), int(b), float(r))
    return ModelCheckpoint(kind, spec, z_dim, hidden, dict(tensors))


def write_history(history: list, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_COLUMNS, extrasaction="ignore")
        writer.writeheader()
        for row in history:
            writer.writerow(row)


def frozen_entries_intact(ckpt: ModelCheckpoint) -> bool:
    """True when every masked-out action-matrix entry is exactly identity/zero."""
    mats = np.asarray(ckpt.params["actions"])
    masks = np.asarray(ckpt.params["actions.mask"]).astype(bool)
    eye = np.broadcast_to(np.eye(4, dtype=mats.dtype), mats.shape)
    return bool(np.array_equal(mats[~masks], eye[~masks]))

