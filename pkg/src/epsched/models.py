"""Backbone + head MLP classifiers and clean pretraining.

A model is ``f = head(backbone(x))`` where the backbone is a relu MLP
(parameters theta1) and the head is a single affine layer (theta2). Parameters
live in plain float64 arrays; :func:`forward` wraps them as tape leaves when
gradients are needed.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensorcore as tc
from .errors import ConfigError, DimensionError, NonFiniteError

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelSpec:
    input_dim: int
    hidden_dims: tuple[int, ...] = (64, 32)
    num_classes: int = 8

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if not self.hidden_dims:
            raise ConfigError("hidden_dims must be non-empty")
        if min(self.input_dim, self.num_classes, *self.hidden_dims) <= 0:
            raise ConfigError("all model dimensions must be positive")

    @property
    def repr_dim(self) -> int:
        return self.hidden_dims[-1]

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_dims": list(self.hidden_dims),
            "num_classes": self.num_classes,
        }


Layer = tuple[np.ndarray, np.ndarray]


@dataclass
class ModelState:
    """Parameter values: ``backbone`` is theta1, ``head`` is theta2."""

    spec: ModelSpec
    backbone: list[Layer]
    head: Layer

    def __post_init__(self):
        dims = (self.spec.input_dim, *self.spec.hidden_dims)
        if len(self.backbone) != len(self.spec.hidden_dims):
            raise DimensionError("backbone depth does not match spec")
        for (w, b), fan_in, fan_out in zip(self.backbone, dims[:-1], dims[1:]):
            if w.shape != (fan_in, fan_out) or b.shape != (fan_out,):
                raise DimensionError(f"layer shapes {w.shape}/{b.shape} do not match spec")
        w, b = self.head
        if w.shape != (self.spec.repr_dim, self.spec.num_classes) or b.shape != (self.spec.num_classes,):
            raise DimensionError("head shapes do not match spec")

    def params(self) -> list[np.ndarray]:
        """Flat parameter list: backbone weights/biases then head weight/bias."""
        out = []
        for w, b in self.backbone:
            out += [w, b]
        return out + list(self.head)

    def with_params(self, params: list[np.ndarray]) -> "ModelState":
        n = len(self.backbone)
        backbone = [(params[2 * i], params[2 * i + 1]) for i in range(n)]
        return ModelState(self.spec, backbone, (params[2 * n], params[2 * n + 1]))

    def copy(self) -> "ModelState":
        return self.with_params([p.copy() for p in self.params()])

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.params())


def _uniform_layer(rng: np.random.Generator, fan_in: int, fan_out: int) -> Layer:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out)), np.zeros(fan_out)


def init_random(spec: ModelSpec, seed: int) -> ModelState:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero."""
    rng = np.random.default_rng(seed)
    dims = (spec.input_dim, *spec.hidden_dims)
    backbone = [_uniform_layer(rng, i, o) for i, o in zip(dims[:-1], dims[1:])]
    head = _uniform_layer(rng, spec.repr_dim, spec.num_classes)
    return ModelState(spec, backbone, head)


def reinit_head(state: ModelState, num_classes: int, seed: int) -> ModelState:
    """Keep theta1 (copied), draw a fresh head for ``num_classes`` outputs."""
    spec = ModelSpec(state.spec.input_dim, state.spec.hidden_dims, num_classes)
    rng = np.random.default_rng(seed)
    head = _uniform_layer(rng, spec.repr_dim, num_classes)
    return ModelState(spec, [(w.copy(), b.copy()) for w, b in state.backbone], head)


def forward(state: ModelState, x, params: list[tc.Tensor] | None = None) -> tc.Tensor:
    """Logits for a batch ``x`` of shape (batch, input_dim).

    ``params`` optionally supplies the tensors to use for the parameters (so
    the caller can ask for their gradients); by default they are wrapped
    without gradient tracking.
    """
    xt = x if isinstance(x, tc.Tensor) else tc.Tensor(x)
    if xt.data.ndim != 2 or xt.shape[1] != state.spec.input_dim:
        raise DimensionError(f"expected (batch, {state.spec.input_dim}) input, got {xt.shape}")
    if params is None:
        params = [tc.Tensor(p) for p in state.params()]
    h = xt
    n = len(state.backbone)
    for i in range(n):
        h = tc.relu(tc.add_bias(tc.matmul(h, params[2 * i]), params[2 * i + 1]))
    return tc.add_bias(tc.matmul(h, params[2 * n]), params[2 * n + 1])


def logits(state: ModelState, x: np.ndarray) -> np.ndarray:
    return forward(state, x).data


def predict(state: ModelState, x: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. ties go to the lowest class index
    return np.argmax(logits(state, x), axis=1)


def accuracy(state: ModelState, x: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(predict(state, x) == y))


def loss_and_param_grads(state: ModelState, x: np.ndarray, y: np.ndarray) -> tuple[float, list[np.ndarray]]:
    """Mean cross-entropy and its gradient for every parameter (``state.params()`` order)."""
    params = [tc.Tensor(p, requires_grad=True) for p in state.params()]
    with tc.recording() as tape:
        loss = tc.softmax_cross_entropy(forward(state, x, params), y)
    grads = tc.backward(tape, loss)
    return loss.item(), [grads[p] for p in params]


def loss_and_input_grad(state: ModelState, x: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient with respect to the inputs."""
    xt = tc.Tensor(x, requires_grad=True)
    with tc.recording() as tape:
        loss = tc.softmax_cross_entropy(forward(state, xt), y)
    return loss.item(), tc.backward(tape, loss)[xt]


def pretrain_backbone(
    spec: ModelSpec,
    source,
    epochs: int,
    optimizer_cfg=None,
    seed: int = 0,
    batch_size: int = 64,
    eps: float = 0.0,
) -> ModelState:
    """Clean (epsilon = 0) training on a source task to manufacture a non-robust backbone.

    ``source`` is a :class:`~epsched.tasks.Dataset`. The returned state still
    carries the source head; callers swap it with :func:`reinit_head`.
    ``eps > 0`` trains on 7-step PGD examples instead, for robust backbones.
    """
    from .attacks import AttackConfig, pgd
    from .trainloop import Optimizer, OptimizerConfig, iterate_minibatches

    if source.num_classes != spec.num_classes:
        spec = ModelSpec(spec.input_dim, spec.hidden_dims, source.num_classes)
    state = init_random(spec, seed)
    if epochs == 0:
        return state
    cfg = optimizer_cfg or OptimizerConfig()
    steps_per_epoch = -(-len(source.train_y) // batch_size)
    opt = Optimizer(cfg, total_steps=epochs * steps_per_epoch, steps_per_epoch=steps_per_epoch)
    rng = np.random.default_rng([seed, 1])
    attack_rng = np.random.default_rng([seed, 2])
    attack = AttackConfig(epsilon=eps)
    for _ in range(epochs):
        for xb, yb in iterate_minibatches(source.train_x, source.train_y, batch_size, rng):
            if eps > 0:
                xb = pgd(state, xb, yb, attack, rng=attack_rng)
            _, grads = loss_and_param_grads(state, xb, yb)
            state = opt.step(state, grads)
    acc = accuracy(state, source.train_x, source.train_y)
    if acc < 0.6:
        log.warning("pretraining reached only %.1f%% source accuracy; task/model mismatch?", 100 * acc)
    return state


def save_checkpoint(state: ModelState, path, meta: dict | None = None) -> None:
    """Write a JSON checkpoint. Floats are written with ``repr`` so reloads are bit-exact."""
    doc = {
        "version": CHECKPOINT_VERSION,
        "spec": state.spec.to_dict(),
        "params": [{"shape": list(p.shape), "values": p.reshape(-1).tolist()} for p in state.params()],
        "meta": meta or {},
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path) -> ModelState:
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {doc.get('version')}")
    s = doc["spec"]
    spec = ModelSpec(s["input_dim"], tuple(s["hidden_dims"]), s["num_classes"])
    params = [np.array(p["values"], dtype=np.float64).reshape(p["shape"]) for p in doc["params"]]
    state = init_random(spec, 0).with_params(params)
    if not state.is_finite():
        raise NonFiniteError("checkpoint contains non-finite parameters")
    return state
