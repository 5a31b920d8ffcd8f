"""Dense float64 tensors with a small reverse-mode autodiff tape.

Only the handful of operations the MLP models need are provided. Each op
computes its forward value the same way whether or not a tape is active, so
recording never changes numerics.

Usage::

    x = Tensor(np.ones((2, 3)), requires_grad=True)
    with recording() as tape:
        loss = sum_all(relu(x))
    grads = backward(tape, loss)
    grads[x]  # d loss / d x
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import ContractError, DimensionError, DomainError, NonFiniteError

__all__ = [
    "Tensor",
    "Tape",
    "recording",
    "active_tape",
    "backward",
    "matmul",
    "add_bias",
    "relu",
    "softmax_cross_entropy",
    "sum_all",
    "scale",
    "add",
    "grad_check",
]


class Tensor:
    """A dense real array carried through the autodiff ops.

    The underlying ``data`` is a float64 ndarray; it is treated as immutable
    once wrapped. Identity (not value) is used for hashing so tensors can key
    gradient dictionaries.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        if any(s <= 0 for s in arr.shape):
            raise DimensionError(f"tensor dimensions must be positive, got {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def values(self) -> np.ndarray:
        """Flat row-major view of the data."""
        return self.data.reshape(-1)

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError("item() needs a single-element tensor")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


BackwardFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Append-only record of operations for one forward/backward cycle.

    Every node is ``(op_kind, parent_ids, tensor, backward_fn)``. Leaves are
    registered lazily the first time a tracked tensor is used as an input, so
    parent ids always point at earlier nodes.
    """

    def __init__(self) -> None:
        self.nodes: list[tuple[str, tuple[int, ...], Tensor, BackwardFn | None]] = []
        self.gradients: list[np.ndarray | None] = []
        self._index: dict[int, int] = {}

    def node_id(self, t: Tensor) -> int | None:
        return self._index.get(id(t))

    def _register_leaf(self, t: Tensor) -> int:
        nid = len(self.nodes)
        self.nodes.append(("leaf", (), t, None))
        self._index[id(t)] = nid
        return nid

    def tracked(self, t: Tensor) -> bool:
        return t.requires_grad or id(t) in self._index

    def record(self, op: str, out: Tensor, parents: Sequence[Tensor], fn: BackwardFn) -> None:
        pids = []
        for p in parents:
            nid = self._index.get(id(p))
            if nid is None:
                nid = self._register_leaf(p)
            pids.append(nid)
        self._index[id(out)] = len(self.nodes)
        self.nodes.append((op, tuple(pids), out, fn))

    def clear(self) -> None:
        self.nodes.clear()
        self.gradients.clear()
        self._index.clear()


_state = threading.local()


def active_tape() -> Tape | None:
    return getattr(_state, "tape", None)


@contextmanager
def recording(tape: Tape | None = None) -> Iterator[Tape]:
    """Activate a tape for the current thread for the duration of the block."""
    tape = Tape() if tape is None else tape
    previous = active_tape()
    _state.tape = tape
    try:
        yield tape
    finally:
        _state.tape = previous


def _finish(op: str, value: np.ndarray, parents: Sequence[Tensor], fn: BackwardFn) -> Tensor:
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(f"{op} produced non-finite values")
    out = Tensor(value)
    tape = active_tape()
    if tape is not None and any(tape.tracked(p) for p in parents):
        tape.record(op, out, parents, fn)
    return out


def backward(tape: Tape, loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Propagate d(loss)/d(node) through ``tape``.

    Returns gradients for every leaf tensor that has ``requires_grad`` set;
    the same arrays are also stored on ``leaf.grad``.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    nid = tape.node_id(loss)
    if nid is None:
        raise ContractError("loss was not recorded on this tape")

    grads: list[np.ndarray | None] = [None] * len(tape.nodes)
    grads[nid] = np.ones_like(loss.data)
    for i in range(nid, -1, -1):
        g = grads[i]
        if g is None:
            continue
        op, pids, _, fn = tape.nodes[i]
        if fn is None:
            continue
        for pid, pg in zip(pids, fn(g)):
            if pg is None:
                continue
            grads[pid] = pg if grads[pid] is None else grads[pid] + pg

    tape.gradients = grads
    out: dict[Tensor, np.ndarray] = {}
    for (op, _, t, _), g in zip(tape.nodes, grads):
        if op == "leaf" and t.requires_grad:
            g = np.zeros_like(t.data) if g is None else g
            t.grad = g
            out[t] = g
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes {a.shape} and {b.shape} do not agree")
    A, B = a.data, b.data

    def fn(g):
        return g @ B.T, A.T @ g

    return _finish("matmul", A @ B, (a, b), fn)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    if x.data.ndim != 2 or b.data.ndim != 1 or x.shape[1] != b.shape[0]:
        raise DimensionError(f"add_bias shapes {x.shape} and {b.shape} do not agree")

    def fn(g):
        return g, g.sum(axis=0)

    return _finish("add_bias", x.data + b.data, (x, b), fn)


def relu(x: Tensor) -> Tensor:
    # subgradient at exactly 0 is 0
    mask = x.data > 0

    def fn(g):
        return (g * mask,)

    return _finish("relu", np.where(mask, x.data, 0.0), (x,), fn)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy of integer ``labels`` under softmax(``logits``)."""
    if logits.data.ndim != 2:
        raise DimensionError(f"logits must be 2-D, got {logits.shape}")
    m, k = logits.shape
    y = np.asarray(labels)
    if y.shape != (m,):
        raise DimensionError(f"expected {m} labels, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        raise DomainError("labels must be integers")
    if y.min() < 0 or y.max() >= k:
        raise DomainError(f"labels must lie in [0, {k})")

    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(m)
    loss = np.mean(lse - z[rows, y])

    def fn(g):
        p = np.exp(z - lse[:, None])
        p[rows, y] -= 1.0
        return (p * (g / m),)

    return _finish("softmax_cross_entropy", np.asarray(loss), (logits,), fn)


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape

    def fn(g):
        return (np.broadcast_to(g, shape).copy(),)

    return _finish("sum", np.asarray(x.data.sum()), (x,), fn)


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)

    def fn(g):
        return (g * c,)

    return _finish("scale", x.data * c, (x,), fn)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"add shapes {a.shape} and {b.shape} differ")

    def fn(g):
        return g, g

    return _finish("add", a.data + b.data, (a, b), fn)


def grad_check(f: Callable[[Tensor], Tensor], point, h: float = 1e-5) -> float:
    """Max relative error between the analytic gradient of ``f`` and central differences.

    The error per coordinate is ``|analytic - numeric| / max(1, |numeric|)``.
    """
    if h <= 0:
        raise ContractError("h must be positive")
    base = np.array(point.data if isinstance(point, Tensor) else point, dtype=np.float64)

    x = Tensor(base.copy(), requires_grad=True)
    with recording() as tape:
        loss = f(x)
    analytic = backward(tape, loss)[x]

    numeric = np.empty_like(base)
    flat = numeric.reshape(-1)
    for i in range(base.size):
        xp = base.copy()
        xm = base.copy()
        xp.reshape(-1)[i] += h
        xm.reshape(-1)[i] -= h
        flat[i] = (f(Tensor(xp)).item() - f(Tensor(xm)).item()) / (2 * h)

    err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))
    return float(err.max())
