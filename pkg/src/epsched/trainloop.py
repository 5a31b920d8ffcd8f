"""Optimizers and the robust fine-tuning loop.

Each epoch draws its training budget from the schedule, crafts PGD examples
for every minibatch (skipped entirely when the budget is zero), and takes one
optimizer step on the cross-entropy of the perturbed batch. After every
``eval_every`` epochs the validation split is scored clean and under a
10-step PGD attack at the goal budget.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import attacks
from .attacks import AttackConfig
from .errors import ConfigError, NonFiniteError
from .models import ModelState, logits, loss_and_param_grads, reinit_head
from .schedule import ScheduleSpec, epsilon_at
from .tensorcore import Tensor, softmax_cross_entropy

log = logging.getLogger(__name__)

# offsets mixed with the master seed to give each consumer its own stream
SEED_HEAD = 11
SEED_SHUFFLE = 12
SEED_ATTACK = 13
SEED_SCHEDULE = 14
SEED_EVAL = 15


def derive_seed(master: int, purpose: int) -> int:
    """Stable 63-bit seed for one purpose; independent of every other purpose."""
    return int(np.random.SeedSequence([master, purpose]).generate_state(1, np.uint64)[0] >> 1)


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "adam_like"
    learning_rate: float = 1e-2
    weight_decay: float = 1e-4
    momentum: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    cosine_schedule: bool = True
    warmup_epochs: int = 2

    def __post_init__(self):
        if self.kind not in ("sgd_momentum", "adam_like"):
            raise ConfigError(f"unknown optimizer kind {self.kind!r}")
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise ConfigError("learning_rate must be positive and weight_decay non-negative")
        if not (0 <= self.momentum < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("momentum/beta parameters must lie in [0, 1)")
        if self.warmup_epochs < 0:
            raise ConfigError("warmup_epochs must be non-negative")


def learning_rate_at(cfg: OptimizerConfig, step: int, total_steps: int, warmup_steps: int = 0) -> float:
    """Peak rate with linear warmup then cosine decay to zero at ``total_steps``."""
    lr = cfg.learning_rate
    if not cfg.cosine_schedule:
        return lr
    if warmup_steps > 0 and step < warmup_steps:
        return lr * (step + 1) / warmup_steps
    span = max(total_steps - warmup_steps, 1)
    progress = min(max(step - warmup_steps, 0) / span, 1.0)
    return 0.5 * lr * (1.0 + math.cos(math.pi * progress))


class Optimizer:
    """AdamW (``adam_like``) or heavy-ball SGD with decoupled weight decay."""

    def __init__(self, cfg: OptimizerConfig, total_steps: int, steps_per_epoch: int = 1):
        self.cfg = cfg
        self.total_steps = total_steps
        self.warmup_steps = cfg.warmup_epochs * steps_per_epoch
        self.step_index = 0
        self._m: list[np.ndarray] | None = None
        self._v: list[np.ndarray] | None = None

    @property
    def lr(self) -> float:
        return learning_rate_at(self.cfg, self.step_index, self.total_steps, self.warmup_steps)

    def step(self, state: ModelState, grads: list[np.ndarray]) -> ModelState:
        return optimizer_step(state, grads, self.cfg, self)


def optimizer_step(state: ModelState, grads: list[np.ndarray], cfg: OptimizerConfig, opt: Optimizer) -> ModelState:
    """One update; returns a new state and advances ``opt.step_index``."""
    params = state.params()
    if len(grads) != len(params) or any(g.shape != p.shape for g, p in zip(grads, params)):
        raise ConfigError("gradient shapes do not match parameters")
    if not all(np.all(np.isfinite(g)) for g in grads):
        raise NonFiniteError(f"non-finite gradient at step {opt.step_index}")
    lr = opt.lr
    if opt._m is None:
        opt._m = [np.zeros_like(p) for p in params]
        opt._v = [np.zeros_like(p) for p in params]
    t = opt.step_index + 1
    new = []
    for i, (p, g) in enumerate(zip(params, grads)):
        p = p * (1.0 - lr * cfg.weight_decay) if cfg.weight_decay else p
        if cfg.kind == "sgd_momentum":
            opt._m[i] = cfg.momentum * opt._m[i] + g
            update = opt._m[i]
        else:
            opt._m[i] = cfg.momentum * opt._m[i] + (1 - cfg.momentum) * g
            opt._v[i] = cfg.beta2 * opt._v[i] + (1 - cfg.beta2) * g * g
            m_hat = opt._m[i] / (1 - cfg.momentum**t)
            v_hat = opt._v[i] / (1 - cfg.beta2**t)
            update = m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
        new.append(p - lr * update)
    opt.step_index += 1
    return state.with_params(new)


def iterate_minibatches(x: np.ndarray, y: np.ndarray, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(len(y))
    for start in range(0, len(y), batch_size):
        sel = order[start : start + batch_size]
        yield x[sel], y[sel]


@dataclass(frozen=True)
class EpochTrace:
    epoch: int
    train_eps: float
    train_loss: float
    val_clean_acc: float
    val_adv_acc_at_goal: float
    val_clean_loss: float
    val_adv_loss: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    eval_every: int = 1
    eval_steps: int = attacks.EVAL_STEPS


class TrainingDiverged(RuntimeError):
    """Raised when a run hits non-finite values; ``trace`` holds the epochs completed."""

    def __init__(self, msg: str, trace: list[EpochTrace]):
        super().__init__(msg)
        self.trace = trace


def train_epoch(
    state: ModelState,
    train_x: np.ndarray,
    train_y: np.ndarray,
    eps_t: float,
    attack_cfg: AttackConfig,
    opt: Optimizer,
    rng: np.random.Generator,
    attack_rng: np.random.Generator | None = None,
    batch_size: int = 64,
) -> tuple[ModelState, float]:
    """One pass over shuffled minibatches; returns the new state and mean batch loss."""
    if eps_t < 0:
        raise ConfigError("eps_t must be non-negative")
    cfg = attack_cfg.at(eps_t)
    attack_rng = attack_rng if attack_rng is not None else np.random.default_rng(attack_cfg.seed)
    losses = []
    for xb, yb in iterate_minibatches(train_x, train_y, batch_size, rng):
        if eps_t > 0:
            xb = attacks.pgd(state, xb, yb, cfg, rng=attack_rng)
        loss, grads = loss_and_param_grads(state, xb, yb)
        losses.append(loss)
        state = opt.step(state, grads)
    return state, float(np.mean(losses))


def evaluate(state: ModelState, x: np.ndarray, y: np.ndarray, eps: float, attack_cfg: AttackConfig) -> tuple[float, float, float, float]:
    """(clean acc, adversarial acc, clean loss, adversarial loss); never mutates ``state``."""
    logits_clean = logits(state, x)
    clean_acc = float(np.mean(np.argmax(logits_clean, axis=1) == y))
    clean_loss = softmax_cross_entropy(Tensor(logits_clean), y).item()
    if eps == 0:
        return clean_acc, clean_acc, clean_loss, clean_loss
    x_adv = attacks.pgd(state, x, y, attack_cfg.at(eps))
    logits_adv = logits(state, x_adv)
    adv_acc = float(np.mean(np.argmax(logits_adv, axis=1) == y))
    return clean_acc, adv_acc, clean_loss, softmax_cross_entropy(Tensor(logits_adv), y).item()


def run_rft(
    backbone: ModelState,
    dataset,
    schedule: ScheduleSpec,
    attack_cfg: AttackConfig | None = None,
    optimizer_cfg: OptimizerConfig | None = None,
    seed: int = 0,
    train_cfg: TrainConfig | None = None,
) -> tuple[ModelState, list[EpochTrace]]:
    """Robust fine-tuning of ``backbone`` (with a fresh head) on ``dataset``.

    Returns the model after the last epoch and one :class:`EpochTrace` per
    epoch. Epochs skipped by ``eval_every`` repeat NaN for the validation
    fields, except the final epoch which is always evaluated.
    """
    attack_cfg = attack_cfg or AttackConfig()
    optimizer_cfg = optimizer_cfg or OptimizerConfig()
    train_cfg = train_cfg or TrainConfig()
    if schedule.variant == "uniform":
        schedule = replace(schedule, seed=derive_seed(seed, SEED_SCHEDULE))

    state = reinit_head(backbone, dataset.num_classes, derive_seed(seed, SEED_HEAD))
    T = schedule.total_epochs
    steps_per_epoch = -(-len(dataset.train_y) // train_cfg.batch_size)
    opt = Optimizer(optimizer_cfg, total_steps=T * steps_per_epoch, steps_per_epoch=steps_per_epoch)
    shuffle_rng = np.random.default_rng(derive_seed(seed, SEED_SHUFFLE))
    attack_rng = np.random.default_rng(derive_seed(seed, SEED_ATTACK))
    eval_cfg = replace(attack_cfg, steps=train_cfg.eval_steps, step_size=None, seed=derive_seed(seed, SEED_EVAL))

    trace: list[EpochTrace] = []
    for t in range(T):
        eps_t = epsilon_at(schedule, t)
        try:
            state, loss = train_epoch(
                state, dataset.train_x, dataset.train_y, eps_t, attack_cfg, opt,
                shuffle_rng, attack_rng, train_cfg.batch_size,
            )
        except (NonFiniteError, FloatingPointError) as exc:
            raise TrainingDiverged(f"epoch {t}: {exc}", trace) from exc
        if t % train_cfg.eval_every == 0 or t == T - 1:
            ca, aa, cl, al = evaluate(state, dataset.val_x, dataset.val_y, schedule.eps_goal, eval_cfg)
        else:
            ca = aa = cl = al = float("nan")
        trace.append(EpochTrace(t, eps_t, loss, ca, aa, cl, al))
        log.debug("epoch %d eps=%.4f loss=%.4f clean=%.3f adv=%.3f", t, eps_t, loss, ca, aa)
    return state, trace
