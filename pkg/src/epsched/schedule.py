"""Per-epoch perturbation-strength schedules eps(t) = alpha(t) * eps_goal.

Variants:

* ``fix``: alpha = 1 for every epoch.
* ``two_hinge``: 0 before T1, linear ramp (t - T1) / (T2 - T1), 1 from T2 on.
  T1 == T2 is a hard switch.
* ``uniform``: a fresh draw from U[0, eps_goal] every epoch.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import ConfigError, ContractError

VARIANTS = ("fix", "two_hinge", "uniform")
PRESETS = ("fix", "scheduler", "warmup", "end_to_end", "hard_switch", "uniform")

# fractions of the run used by the ``scheduler`` preset: 12/50 and 37/50
T1_FRACTION = 0.24
T2_FRACTION = 0.74


@dataclass(frozen=True)
class ScheduleSpec:
    eps_goal: float
    total_epochs: int
    variant: str = "two_hinge"
    T1: int = 0
    T2: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown schedule variant {self.variant!r}")
        if self.eps_goal < 0:
            raise ConfigError("eps_goal must be non-negative")
        if self.total_epochs < 1:
            raise ConfigError("total_epochs must be positive")
        if self.variant == "fix" and (self.T1, self.T2) != (0, 0):
            raise ConfigError("fix schedule requires T1 = T2 = 0")
        if not 0 <= self.T1 <= self.T2 <= self.total_epochs:
            raise ConfigError(f"need 0 <= T1 <= T2 <= total_epochs, got {self.T1}, {self.T2}")

    def to_dict(self) -> dict:
        return {
            "eps_goal": self.eps_goal,
            "total_epochs": self.total_epochs,
            "variant": self.variant,
            "T1": self.T1,
            "T2": self.T2,
            "seed": self.seed,
        }


def _check_epoch(spec: ScheduleSpec, t: int) -> None:
    if not 0 <= t < spec.total_epochs:
        raise ContractError(f"epoch {t} outside [0, {spec.total_epochs})")


def alpha_exact(spec: ScheduleSpec, t: int) -> Fraction:
    """alpha(t) as an exact rational."""
    _check_epoch(spec, t)
    if spec.variant == "uniform":
        raise ContractError("the uniform variant has no deterministic alpha")
    if spec.variant == "fix":
        return Fraction(1)
    if t < spec.T1:
        return Fraction(0)
    if t >= spec.T2:
        return Fraction(1)
    return Fraction(t - spec.T1, spec.T2 - spec.T1)


def alpha(spec: ScheduleSpec, t: int) -> float:
    return float(alpha_exact(spec, t))


def epsilon_at(spec: ScheduleSpec, t: int) -> float:
    """Training budget for epoch ``t``."""
    _check_epoch(spec, t)
    if spec.variant == "uniform":
        rng = np.random.default_rng([spec.seed, t])
        return float(rng.uniform(0.0, spec.eps_goal)) if spec.eps_goal > 0 else 0.0
    a = alpha_exact(spec, t)
    if a == 1:
        return spec.eps_goal
    return float(a * Fraction(spec.eps_goal))


def epsilon_sequence(spec: ScheduleSpec) -> list[float]:
    return [epsilon_at(spec, t) for t in range(spec.total_epochs)]


def preset(name: str, eps_goal: float, total_epochs: int = 50, seed: int = 0, T1: int | None = None) -> ScheduleSpec:
    """Named schedules; hinge epochs scale with ``total_epochs``.

    ``hard_switch`` jumps from 0 to eps_goal at T1 (default: the scheduler's
    T1). ``warmup`` is a linear ramp from epoch 0 to the scheduler's T2.
    """
    T = total_epochs
    t1 = round(T1_FRACTION * T)
    t2 = round(T2_FRACTION * T)
    if name == "fix":
        return ScheduleSpec(eps_goal, T, "fix")
    if name == "scheduler":
        return ScheduleSpec(eps_goal, T, "two_hinge", t1, t2)
    if name == "warmup":
        return ScheduleSpec(eps_goal, T, "two_hinge", 0, t2)
    if name == "end_to_end":
        return ScheduleSpec(eps_goal, T, "two_hinge", 0, T)
    if name == "hard_switch":
        k = t1 if T1 is None else T1
        return ScheduleSpec(eps_goal, T, "two_hinge", k, k)
    if name == "uniform":
        return ScheduleSpec(eps_goal, T, "uniform", seed=seed)
    raise ConfigError(f"unknown schedule preset {name!r}; choose from {PRESETS}")
