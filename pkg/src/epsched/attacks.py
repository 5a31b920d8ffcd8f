"""l-infinity adversarial examples: FGSM and PGD with projection onto the eps-ball."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, DimensionError
from .models import ModelState, loss_and_input_grad

TRAIN_STEPS = 7
EVAL_STEPS = 10

# flip on to assert the output constraints after every attack call
DEBUG_CHECKS = False


@dataclass(frozen=True)
class AttackConfig:
    """PGD settings. ``step_size=None`` means the default ``2 * epsilon / steps``."""

    epsilon: float = 0.0
    steps: int = TRAIN_STEPS
    step_size: float | None = None
    random_start: bool = True
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ConfigError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if self.steps < 1:
            raise ConfigError("steps must be positive")
        if self.step_size is not None:
            if self.step_size <= 0:
                raise ConfigError("step_size must be positive")
            if self.epsilon > 0 and self.step_size > 2 * self.epsilon:
                raise ConfigError("step_size must not exceed 2 * epsilon")

    @property
    def alpha(self) -> float:
        return 2.0 * self.epsilon / self.steps if self.step_size is None else self.step_size

    def at(self, epsilon: float, **kw) -> "AttackConfig":
        """Copy with a new budget; an explicit step size is dropped so the default rescales."""
        kw.setdefault("step_size", None)
        return replace(self, epsilon=epsilon, **kw)


def project_linf(x_adv: np.ndarray, x_ref: np.ndarray, epsilon: float) -> np.ndarray:
    """Clamp into [x_ref - eps, x_ref + eps], then into [0, 1]."""
    if x_adv.shape != x_ref.shape:
        raise DimensionError(f"shapes {x_adv.shape} and {x_ref.shape} differ")
    return np.clip(np.clip(x_adv, x_ref - epsilon, x_ref + epsilon), 0.0, 1.0)


def _check(x_adv, x, epsilon):
    assert np.max(np.abs(x_adv - x), initial=0.0) <= epsilon + 1e-12
    assert x_adv.min(initial=0.0) >= 0.0 and x_adv.max(initial=1.0) <= 1.0


def fgsm(state: ModelState, x: np.ndarray, y: np.ndarray, epsilon: float) -> np.ndarray:
    """One signed-gradient step of size ``epsilon`` (sign(0) = 0), clipped to [0, 1]."""
    if epsilon == 0:
        return x
    _, g = loss_and_input_grad(state, x, y)
    x_adv = np.clip(x + epsilon * np.sign(g), 0.0, 1.0)
    if DEBUG_CHECKS:
        _check(x_adv, x, epsilon)
    return x_adv


def pgd(state: ModelState, x: np.ndarray, y: np.ndarray, cfg: AttackConfig, rng: np.random.Generator | None = None) -> np.ndarray:
    """Iterated signed-gradient ascent on the batch cross-entropy; returns the last iterate.

    The random start (if enabled) draws from ``rng`` when given, otherwise
    from a generator seeded with ``cfg.seed``.
    """
    eps = cfg.epsilon
    if eps == 0:
        return x
    if cfg.random_start:
        rng = np.random.default_rng(cfg.seed) if rng is None else rng
        x_adv = project_linf(x + rng.uniform(-eps, eps, size=x.shape), x, eps)
    else:
        x_adv = x
    step = cfg.alpha
    for _ in range(cfg.steps):
        _, g = loss_and_input_grad(state, x_adv, y)
        x_adv = project_linf(x_adv + step * np.sign(g), x, eps)
    if DEBUG_CHECKS:
        _check(x_adv, x, eps)
    return x_adv
