"""Dense float64 tensors with taped reverse-mode gradients.

Small on purpose: just the operations the reasoner needs, a parameter
store, Adam, a finite-difference gradient checker, and lossless JSON
checkpoints. Values live in numpy arrays; each op records a closure that
routes the output gradient to its inputs, and ``backward`` replays the
tape in reverse topological order.
"""
from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, DataError, ShapeError

CHECKPOINT_VERSION = 1


class Tensor:
    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, values, requires_grad: bool = False):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        if self.values.size != 1:
            raise ShapeError(f"item: tensor has shape {self.shape}")
        return float(self.values.reshape(()))

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        self.grad += g

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def constant(values) -> Tensor:
    return Tensor(values, requires_grad=False)


def _record(values: np.ndarray, parents: tuple[Tensor, ...],
            backward: Callable[[np.ndarray], None]) -> Tensor:
    out = Tensor(values, requires_grad=any(p.requires_grad for p in parents))
    if out.requires_grad:
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.values.ndim != 2 or b.values.ndim != 2 \
            or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    out_values = a.values @ b.values

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(g @ b.values.T)
        if b.requires_grad:
            b._accumulate(a.values.T @ g)

    return _record(out_values, (a, b), backward)


def _elementwise(op_name: str, a: Tensor, b: Tensor, fn, da, db) -> Tensor:
    try:
        out_values = fn(a.values, b.values)
    except ValueError:
        raise ShapeError(f"{op_name}: shapes {a.shape} and {b.shape} "
                         f"do not broadcast")

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(_unbroadcast(da(g), a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(db(g), b.shape))

    return _record(out_values, (a, b), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    return _elementwise("add", a, b, lambda x, y: x + y,
                        lambda g: g, lambda g: g)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return _elementwise("sub", a, b, lambda x, y: x - y,
                        lambda g: g, lambda g: -g)


def mul(a: Tensor, b: Tensor) -> Tensor:
    return _elementwise("mul", a, b, lambda x, y: x * y,
                        lambda g: g * b.values, lambda g: g * a.values)


def sigmoid(x: Tensor) -> Tensor:
    v = x.values
    out_values = np.where(v >= 0, 1.0 / (1.0 + np.exp(-np.abs(v))),
                          np.exp(-np.abs(v)) / (1.0 + np.exp(-np.abs(v))))

    def backward(g: np.ndarray) -> None:
        x._accumulate(g * out_values * (1.0 - out_values))

    return _record(out_values, (x,), backward)


def tanh(x: Tensor) -> Tensor:
    out_values = np.tanh(x.values)

    def backward(g: np.ndarray) -> None:
        x._accumulate(g * (1.0 - out_values * out_values))

    return _record(out_values, (x,), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.values - x.values.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_values = e / e.sum(axis=axis, keepdims=True)

    def backward(g: np.ndarray) -> None:
        inner = (g * out_values).sum(axis=axis, keepdims=True)
        x._accumulate(out_values * (g - inner))

    return _record(out_values, (x,), backward)


def concat(a: Tensor, b: Tensor, axis: int) -> Tensor:
    if a.values.ndim != b.values.ndim:
        raise ShapeError(f"concat: ranks differ, {a.shape} vs {b.shape}")
    for ax in range(a.values.ndim):
        if ax != axis % a.values.ndim and a.shape[ax] != b.shape[ax]:
            raise ShapeError(f"concat(axis={axis}): {a.shape} vs {b.shape}")
    out_values = np.concatenate([a.values, b.values], axis=axis)
    split = a.shape[axis % a.values.ndim]

    def backward(g: np.ndarray) -> None:
        ga, gb = np.split(g, [split], axis=axis)
        if a.requires_grad:
            a._accumulate(ga)
        if b.requires_grad:
            b._accumulate(gb)

    return _record(out_values, (a, b), backward)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.intp)
    if table.values.ndim != 2:
        raise ShapeError(f"embedding_lookup: table must be 2-d, "
                         f"got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"embedding_lookup: id out of range for table "
                         f"with {table.shape[0]} rows")
    out_values = table.values[ids]

    def backward(g: np.ndarray) -> None:
        gt = np.zeros_like(table.values)
        np.add.at(gt, ids, g)
        table._accumulate(gt)

    return _record(out_values, (table,), backward)


def dropout(x: Tensor, p: float, training: bool,
            rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: kept activations are scaled by 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ConfigError("dropout in training mode needs a generator")
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    out_values = x.values * mask

    def backward(g: np.ndarray) -> None:
        x._accumulate(g * mask)

    return _record(out_values, (x,), backward)


def mean(x: Tensor) -> Tensor:
    out_values = np.asarray(x.values.mean())
    denom = x.values.size

    def backward(g: np.ndarray) -> None:
        x._accumulate(np.full_like(x.values, float(g) / denom))

    return _record(out_values, (x,), backward)


def neg_log_pick(probs: Tensor, picks) -> Tensor:
    """Per-row negative log of the picked column: -log(probs[i, picks[i]])."""
    picks = np.asarray(picks, dtype=np.intp)
    if probs.values.ndim != 2 or picks.ndim != 1 \
            or picks.shape[0] != probs.shape[0]:
        raise ShapeError(f"neg_log_pick: probs {probs.shape}, "
                         f"picks {picks.shape}")
    if picks.size and (picks.min() < 0 or picks.max() >= probs.shape[1]):
        raise ShapeError("neg_log_pick: pick index out of range")
    rows = np.arange(probs.shape[0])
    picked = probs.values[rows, picks]
    with np.errstate(divide="ignore"):
        out_values = -np.log(picked)

    def backward(g: np.ndarray) -> None:
        gp = np.zeros_like(probs.values)
        gp[rows, picks] = -g / picked
        probs._accumulate(gp)

    return _record(out_values, (probs,), backward)


def repeat_rows(x: Tensor, n: int) -> Tensor:
    """Tile a single-row tensor to n rows."""
    if x.values.ndim != 2 or x.shape[0] != 1:
        raise ShapeError(f"repeat_rows: need shape (1, k), got {x.shape}")
    out_values = np.repeat(x.values, n, axis=0)

    def backward(g: np.ndarray) -> None:
        x._accumulate(g.sum(axis=0, keepdims=True))

    return _record(out_values, (x,), backward)


def aggregate_neighbors(x: Tensor, adj) -> Tensor:
    """Per node, the normalized sum of its predecessors' rows.

    out[v] = (1 / norm[v]) * sum over edges (u, v) of x[u].
    Nodes with no predecessors get a zero row.
    """
    if x.values.ndim != 2 or x.shape[0] != adj.n_nodes:
        raise ShapeError(f"aggregate_neighbors: rows {x.shape} vs "
                         f"{adj.n_nodes} nodes")
    scale = adj.norm[:, None]
    out_values = np.zeros_like(x.values)
    np.add.at(out_values, adj.dst_index, x.values[adj.src_index])
    out_values /= scale

    def backward(g: np.ndarray) -> None:
        scaled = g / scale
        gx = np.zeros_like(x.values)
        np.add.at(gx, adj.src_index, scaled[adj.dst_index])
        x._accumulate(gx)

    return _record(out_values, (x,), backward)


def backward(loss: Tensor) -> None:
    """Propagate gradients from a scalar loss and release the tape."""
    if loss.values.size != 1:
        raise ShapeError(f"backward: loss must be scalar, "
                         f"got shape {loss.shape}")
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            stack.append((parent, False))
    loss.grad = np.ones_like(loss.values)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
        node._parents = ()
        node._backward = None


class ParamStore:
    """Named trainable tensors with a seeded initializer stream.

    Parameters are created in a fixed order from a named generator
    (numpy PCG64), so two stores built the same way hold identical values.
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self._rng = np.random.default_rng(self.seed)
        self._params: dict[str, Tensor] = {}

    def _register(self, name: str, values: np.ndarray,
                  trainable: bool) -> Tensor:
        if name in self._params:
            raise ConfigError(f"parameter {name!r} already exists")
        t = Tensor(values, requires_grad=trainable)
        self._params[name] = t
        return t

    def add_uniform(self, name: str, shape: Sequence[int],
                    low: float = -0.1, high: float = 0.1,
                    trainable: bool = True) -> Tensor:
        return self._register(name, self._rng.uniform(low, high, tuple(shape)),
                              trainable)

    def add_xavier(self, name: str, shape: Sequence[int],
                   trainable: bool = True) -> Tensor:
        if len(shape) != 2:
            raise ConfigError(f"xavier init needs a matrix, got shape {shape}")
        limit = math.sqrt(6.0 / (shape[0] + shape[1]))
        return self._register(name,
                              self._rng.uniform(-limit, limit, tuple(shape)),
                              trainable)

    def add_zeros(self, name: str, shape: Sequence[int],
                  trainable: bool = True) -> Tensor:
        return self._register(name, np.zeros(tuple(shape)), trainable)

    def add_array(self, name: str, values: np.ndarray,
                  trainable: bool = True) -> Tensor:
        return self._register(name, np.array(values, dtype=np.float64),
                              trainable)

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self) -> Iterable[tuple[str, Tensor]]:
        return self._params.items()

    def trainable(self) -> Iterable[tuple[str, Tensor]]:
        return ((n, p) for n, p in self._params.items() if p.requires_grad)

    def zero_grads(self) -> None:
        for p in self._params.values():
            p.grad = np.zeros_like(p.values) if p.requires_grad else None

    def clear_grads(self) -> None:
        for p in self._params.values():
            p.grad = None

    def copy_values(self) -> dict[str, np.ndarray]:
        return {n: p.values.copy() for n, p in self._params.items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for name, arr in values.items():
            p = self._params[name]
            if p.values.shape != arr.shape:
                raise ShapeError(f"load_values: {name} has shape "
                                 f"{p.values.shape}, got {arr.shape}")
            p.values = arr.copy()


class Adam:
    """Adam with bias correction; update is lr * m_hat / (sqrt(v_hat) + eps)."""

    def __init__(self, store: ParamStore, lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.store = store
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self._m = {n: np.zeros_like(p.values) for n, p in store.trainable()}
        self._v = {n: np.zeros_like(p.values) for n, p in store.trainable()}

    def step(self) -> None:
        for name, p in self.store.trainable():
            if p.grad is None:
                raise ValueError(f"adam step: missing gradient for {name!r}")
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in self.store.trainable():
            g = p.grad
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.values -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.grad = None

    def state_dict(self) -> dict:
        return {"step": self.t,
                "m": {n: a.copy() for n, a in self._m.items()},
                "v": {n: a.copy() for n, a in self._v.items()}}

    def load_state_dict(self, state: dict) -> None:
        self.t = int(state["step"])
        for name in self._m:
            if name not in state["m"] or name not in state["v"]:
                raise DataError(f"optimizer state missing moments for "
                                f"{name!r}")
            if state["m"][name].shape != self._m[name].shape:
                raise ShapeError(f"optimizer state for {name!r} has wrong "
                                 f"shape")
            self._m[name] = state["m"][name].copy()
            self._v[name] = state["v"][name].copy()


def grad_check(forward_fn: Callable[[], Tensor], store: ParamStore,
               eps: float = 1e-4, samples_per_param: int = 50,
               rng: np.random.Generator | None = None) -> float:
    """Compare taped gradients against central finite differences.

    ``forward_fn`` must rebuild the scalar loss from the current parameter
    values and be deterministic. For each trainable parameter up to
    ``samples_per_param`` coordinates are probed (all of them for small
    parameters). Returns the worst relative error
    |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
    """
    if rng is None:
        rng = np.random.default_rng(0)
    loss = forward_fn()
    backward(loss)
    analytic = {}
    for name, p in store.trainable():
        analytic[name] = (p.grad.copy() if p.grad is not None
                          else np.zeros_like(p.values))
    store.clear_grads()

    worst = 0.0
    for name, p in store.trainable():
        flat = p.values.reshape(-1)
        size = flat.size
        if size <= samples_per_param:
            coords = np.arange(size)
        else:
            coords = np.sort(rng.choice(size, samples_per_param,
                                        replace=False))
        ana_flat = analytic[name].reshape(-1)
        for idx in coords:
            original = flat[idx]
            flat[idx] = original + eps
            f_plus = float(forward_fn().values)
            flat[idx] = original - eps
            f_minus = float(forward_fn().values)
            flat[idx] = original
            numeric = (f_plus - f_minus) / (2.0 * eps)
            ana = ana_flat[idx]
            rel = abs(ana - numeric) / max(1e-8, abs(ana) + abs(numeric))
            worst = max(worst, rel)
    return worst


def _encode_array(arr: np.ndarray) -> list[str]:
    return [v.hex() for v in arr.reshape(-1).tolist()]


def _decode_array(values: list[str], shape: Sequence[int]) -> np.ndarray:
    arr = np.array([float.fromhex(v) for v in values], dtype=np.float64)
    return arr.reshape(tuple(shape))


def save_checkpoint(path: str | Path, store: ParamStore,
                    optimizer: Adam | None = None,
                    extra: dict | None = None) -> None:
    """Write parameters (and optionally optimizer state) as JSON.

    Array values are stored as hex float strings, so a load reproduces
    them bit for bit.
    """
    doc: dict = {
        "format_version": CHECKPOINT_VERSION,
        "rng_seed": store.seed,
        "params": [
            {"name": name, "shape": list(p.values.shape),
             "trainable": p.requires_grad,
             "values": _encode_array(p.values)}
            for name, p in store.items()
        ],
        "optimizer_state": None,
        "extra": extra or {},
    }
    if optimizer is not None:
        doc["optimizer_state"] = {
            "step": optimizer.t,
            "moments": {
                name: {"m": _encode_array(optimizer._m[name]),
                       "v": _encode_array(optimizer._v[name])}
                for name in optimizer._m
            },
        }
    with Path(path).open("w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_checkpoint(path: str | Path) -> tuple[ParamStore, dict | None, dict]:
    """Read a checkpoint; returns (store, optimizer_state, extra).

    ``optimizer_state`` has decoded arrays keyed like ``Adam.state_dict``,
    or None when the checkpoint holds parameters only.
    """
    path = Path(path)
    try:
        with path.open(encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not a valid checkpoint: {exc}")
    version = doc.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint format version "
                        f"{version!r} (expected {CHECKPOINT_VERSION})")
    store = ParamStore(seed=doc.get("rng_seed", 0))
    for entry in doc["params"]:
        store.add_array(entry["name"],
                        _decode_array(entry["values"], entry["shape"]),
                        trainable=entry.get("trainable", True))
    opt_state = None
    raw = doc.get("optimizer_state")
    if raw is not None:
        opt_state = {"step": raw["step"], "m": {}, "v": {}}
        for name, mv in raw["moments"].items():
            shape = store[name].values.shape
            opt_state["m"][name] = _decode_array(mv["m"], shape)
            opt_state["v"][name] = _decode_array(mv["v"], shape)
    return store, opt_state, doc.get("extra", {})
