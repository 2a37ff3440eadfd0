"""Small reverse-mode autodiff over dense numpy arrays.

Only what the models need: affine layers, relu/sigmoid, the Gaussian
reparameterization, KL and MSE losses, row/column slicing, per-sample
action-matrix products, and Adam. Every op checks its output for NaN/Inf.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np


class NonFiniteError(FloatingPointError):
    def __init__(self, op: str, detail: str = ""):
        self.op = op
        super().__init__(f"non-finite value produced by {op}" + (f": {detail}" if detail else ""))


class ShapeError(ValueError):
    pass


def _finite(arr: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(op)
    return arr


def _exp(x: np.ndarray, op: str) -> np.ndarray:
    """exp that reports overflow as NonFiniteError instead of a RuntimeWarning."""
    with np.errstate(over="ignore"):
        return _finite(np.exp(x), op)


class Tensor:
    __slots__ = ("data", "grad", "parents", "backward_fn", "op", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, parents=(), backward_fn=None, op: str = "leaf"):
        self.data = np.asarray(data)
        if self.data.dtype.kind != "f":
            self.data = self.data.astype(np.float64)
        self.grad = None
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.op = op
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(op={self.op}, shape={self.shape})"


def tensor(data, requires_grad: bool = False) -> Tensor:
    return data if isinstance(data, Tensor) else Tensor(data, requires_grad)


def _node(data, parents, backward_fn, op) -> Tensor:
    _finite(data, op)
    needs = any(p.requires_grad for p in parents)
    return Tensor(data, needs, parents if needs else (), backward_fn if needs else None, op)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf requiring grad."""
    if loss.data.size != 1:
        raise ShapeError("backward needs a scalar loss")
    order, seen = [], set()
    stack = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        stack.extend((p, False) for p in node.parents if p.requires_grad and id(p) not in seen)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.backward_fn is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# --- primitives -----------------------------------------------------------------------


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b with x (m, i), w (i, o), b (o,)."""
    x, w, b = tensor(x), tensor(w), tensor(b)
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ShapeError(f"affine: incompatible shapes {x.shape}, {w.shape}, {b.shape}")
    out = x.data @ w.data + b.data

    def grad(g):
        return g @ w.data.T, x.data.T @ g, g.sum(axis=0)

    return _node(out, (x, w, b), grad, "affine")


def relu(x: Tensor) -> Tensor:
    x = tensor(x)
    mask = x.data > 0
    return _node(np.where(mask, x.data, 0.0).astype(x.data.dtype), (x,), lambda g: (g * mask,), "relu")


def sigmoid(x: Tensor) -> Tensor:
    x = tensor(x)
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _node(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def reparameterize(mu: Tensor, logvar: Tensor, noise) -> Tensor:
    """mu + exp(logvar / 2) * noise."""
    mu, logvar = tensor(mu), tensor(logvar)
    noise = np.asarray(noise, dtype=mu.data.dtype)
    if mu.shape != logvar.shape or mu.shape != noise.shape:
        raise ShapeError(f"reparameterize: shapes {mu.shape}, {logvar.shape}, {noise.shape}")
    std = _exp(0.5 * logvar.data, "reparameterize")
    out = mu.data + std * noise

    def grad(g):
        return g, g * noise * std * 0.5

    return _node(out, (mu, logvar), grad, "reparameterize")


def kl_to_standard_normal(mu: Tensor, logvar: Tensor) -> Tensor:
    """Batch mean of KL(N(mu, exp(logvar)) || N(0, I))."""
    mu, logvar = tensor(mu), tensor(logvar)
    if mu.shape != logvar.shape:
        raise ShapeError(f"kl: shapes {mu.shape}, {logvar.shape}")
    m = mu.shape[0] if mu.data.ndim > 1 else 1
    ev = _exp(logvar.data, "kl_to_standard_normal")
    out = np.asarray(0.5 * np.sum(ev + mu.data**2 - 1.0 - logvar.data) / m, dtype=mu.data.dtype)

    def grad(g):
        return g * mu.data / m, g * 0.5 * (ev - 1.0) / m

    return _node(out, (mu, logvar), grad, "kl_to_standard_normal")


def mse(a: Tensor, b: Tensor) -> Tensor:
    a, b = tensor(a), tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mse: shapes {a.shape}, {b.shape}")
    diff = a.data - b.data
    out = np.asarray(np.mean(diff**2), dtype=a.data.dtype)

    def grad(g):
        ga = g * 2.0 * diff / diff.size
        return ga, -ga

    return _node(out, (a, b), grad, "mse")


def columns(x: Tensor, start: int, stop: int) -> Tensor:
    x = tensor(x)

    def grad(g):
        full = np.zeros_like(x.data)
        full[:, start:stop] = g
        return (full,)

    return _node(x.data[:, start:stop], (x,), grad, "columns")


def rows(x: Tensor, start: int, stop: int) -> Tensor:
    x = tensor(x)

    def grad(g):
        full = np.zeros_like(x.data)
        full[start:stop] = g
        return (full,)

    return _node(x.data[start:stop], (x,), grad, "rows")


def concat_columns(*xs: Tensor) -> Tensor:
    xs = tuple(tensor(x) for x in xs)
    bounds = np.cumsum([0] + [x.shape[1] for x in xs])

    def grad(g):
        return tuple(g[:, bounds[i] : bounds[i + 1]] for i in range(len(xs)))

    return _node(np.concatenate([x.data for x in xs], axis=1), xs, grad, "concat_columns")


def select_matvec(mats: Tensor, z: Tensor, index) -> Tensor:
    """Row i of the result is mats[index[i]] @ z[i]."""
    mats, z = tensor(mats), tensor(z)
    index = np.asarray(index, dtype=np.int64)
    if mats.data.ndim != 3 or z.data.ndim != 2 or mats.shape[2] != z.shape[1] or len(index) != z.shape[0]:
        raise ShapeError(f"select_matvec: shapes {mats.shape}, {z.shape}, {index.shape}")
    chosen = mats.data[index]
    out = np.einsum("mij,mj->mi", chosen, z.data)

    def grad(g):
        gm = np.zeros_like(mats.data)
        np.add.at(gm, index, g[:, :, None] * z.data[:, None, :])
        return gm, np.einsum("mij,mi->mj", chosen, g)

    return _node(out, (mats, z), grad, "select_matvec")


def add(*xs: Tensor) -> Tensor:
    xs = tuple(tensor(x) for x in xs)
    if len({x.shape for x in xs}) != 1:
        raise ShapeError("add: shapes differ")
    out = xs[0].data.copy()
    for x in xs[1:]:
        out = out + x.data
    return _node(out, xs, lambda g: tuple(g for _ in xs), "add")


def scale(x: Tensor, c: float) -> Tensor:
    x = tensor(x)
    return _node(x.data * c, (x,), lambda g: (g * c,), "scale")


# --- optimizer ------------------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(
    state: AdamState,
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray] | None = None,
    masks: Mapping[str, np.ndarray] | None = None,
) -> Mapping[str, Tensor]:
    """One bias-corrected Adam update, in place. Masked-out entries get zero gradient."""
    if grads is None:
        grads = {k: p.grad for k, p in params.items() if p.grad is not None}
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteError("adam_step", f"gradient of {name}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, g in grads.items():
        p = params[name]
        if masks is not None and name in masks:
            g = g * masks[name]
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[name], state.v[name] = m, v
        update = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data = (p.data - update).astype(p.data.dtype)
    return params


# --- noise ----------------------------------------------------------------------------


class NormalSource:
    """Seeded standard normals: Philox counter-based bits through Box-Muller."""

    def __init__(self, seed: int):
        self.bits = np.random.Philox(seed)

    def _uniform(self, count: int) -> np.ndarray:
        raw = self.bits.random_raw(count)
        return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53

    def normal(self, shape) -> np.ndarray:
        count = int(np.prod(shape))
        half = (count + 1) // 2
        u1 = self._uniform(half)
        u2 = self._uniform(half)
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        out = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:count]
        return out.reshape(shape)


def numeric_gradient(fn: Callable[[], float], param: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Central differences of a scalar function w.r.t. every entry of ``param`` (mutated in place)."""
    grad = np.zeros_like(param, dtype=np.float64)
    flat = param.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = fn()
        flat[i] = orig - h
        down = fn()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-12) -> float:
    num = np.linalg.norm(np.asarray(analytic) - np.asarray(numeric))
    den = max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor)
    return float(num / den)
