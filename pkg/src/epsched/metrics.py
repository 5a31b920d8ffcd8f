"""Robustness curves, expected robustness, and transfer diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from . import attacks
from .attacks import AttackConfig
from .errors import ContractError
from .models import ModelState, predict


@dataclass(frozen=True)
class RobustnessCurve:
    eps_grid: tuple[float, ...]
    accuracy: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "eps_grid", tuple(float(e) for e in self.eps_grid))
        object.__setattr__(self, "accuracy", tuple(float(a) for a in self.accuracy))
        if len(self.eps_grid) != len(self.accuracy) or not self.eps_grid:
            raise ContractError("eps_grid and accuracy must be non-empty and equally long")
        if self.eps_grid[0] != 0.0:
            raise ContractError("eps_grid must start at 0")
        if any(b <= a for a, b in zip(self.eps_grid, self.eps_grid[1:])):
            raise ContractError("eps_grid must be strictly increasing")

    @property
    def eps_goal(self) -> float:
        return self.eps_grid[-1]

    @property
    def clean(self) -> float:
        return self.accuracy[0]

    @property
    def adversarial(self) -> float:
        return self.accuracy[-1]

    def is_monotone(self, tol: float = 0.02) -> bool:
        """Non-increasing up to ``tol`` (attack noise allowance)."""
        return all(b <= a + tol for a, b in zip(self.accuracy, self.accuracy[1:]))


@dataclass(frozen=True)
class TransferDiagnostics:
    delay_epoch: int | None
    final_clean_acc: float
    severity: float
    eps_goal: float


def robust_accuracy(state: ModelState, x: np.ndarray, y: np.ndarray, eps: float, attack_cfg: AttackConfig | None = None) -> float:
    """Fraction of examples still classified correctly after a PGD attack at ``eps``."""
    if len(y) == 0:
        raise ContractError("empty dataset")
    if eps < 0:
        raise ContractError("eps must be non-negative")
    if eps > 0:
        cfg = (attack_cfg or AttackConfig(steps=attacks.EVAL_STEPS)).at(eps)
        x = attacks.pgd(state, x, y, cfg)
    return float(np.mean(predict(state, x) == y))


def eps_grid(eps_goal: float, step: float) -> list[float]:
    """0, step, 2*step, ... with the last point clamped to ``eps_goal``."""
    if eps_goal == 0:
        return [0.0]
    n = math.ceil(eps_goal / step - 1e-9)
    return [min(i * step, eps_goal) for i in range(n)] + [eps_goal]


def accuracy_curve(state: ModelState, x: np.ndarray, y: np.ndarray, eps_goal: float, step: float = 1 / 255, attack_cfg: AttackConfig | None = None) -> RobustnessCurve:
    grid = eps_grid(eps_goal, step)
    return RobustnessCurve(tuple(grid), tuple(robust_accuracy(state, x, y, e, attack_cfg) for e in grid))


def expected_robustness(curve: RobustnessCurve, weights: Sequence[float] | None = None) -> float:
    """Mean accuracy for eps ~ U[0, eps_goal], by the trapezoidal rule on the curve.

    ``weights`` optionally gives a piecewise-constant density over the grid
    intervals (normalized internally); the default is uniform.
    """
    if len(curve.eps_grid) < 2:
        raise ContractError("expected robustness needs eps_goal > 0; use the clean accuracy instead")
    # exact rational arithmetic on the float inputs, rounded once at the end
    e = [Fraction(v) for v in curve.eps_grid]
    a = [Fraction(v) for v in curve.accuracy]
    widths = [hi - lo for lo, hi in zip(e, e[1:])]
    means = [(lo + hi) / 2 for lo, hi in zip(a, a[1:])]
    if weights is None:
        mass = widths
    else:
        if len(weights) != len(widths) or any(w < 0 for w in weights) or not any(w > 0 for w in weights):
            raise ContractError("weights must be non-negative, one per grid interval, not all zero")
        mass = [Fraction(float(w)) * d for w, d in zip(weights, widths)]
    return float(sum(m * v for m, v in zip(mass, means)) / sum(mass))


def ordering_check(clean: float, adv: float, e_adv: float) -> bool:
    return adv <= e_adv <= clean


def delay_epoch(trace, threshold: float = 0.05) -> int | None:
    """First epoch whose validation clean accuracy exceeds ``threshold``, or None."""
    if not trace:
        raise ContractError("empty trace")
    for row in trace:
        if row.val_clean_acc > threshold:
            return row.epoch
    return None


def adaptation_phase_epoch(trace, fraction: float = 0.9) -> int:
    """First epoch reaching ``fraction`` of the final validation clean accuracy."""
    if not trace:
        raise ContractError("empty trace")
    target = fraction * trace[-1].val_clean_acc
    return next(row.epoch for row in trace if row.val_clean_acc >= target)


def pearson_correlation(xs: Sequence[float], ys: Sequence[float]) -> float:
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 3:
        raise ContractError("need two equally long sequences of at least 3 values")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0 or syy == 0:
        raise ContractError("correlation undefined for zero variance")
    return float(np.clip((dx @ dy) / math.sqrt(sxx * syy), -1.0, 1.0))


def transfer_diagnostics(trace, reference_clean: float, eps_goal: float, threshold: float = 0.05) -> TransferDiagnostics:
    final = trace[-1].val_clean_acc
    return TransferDiagnostics(delay_epoch(trace, threshold), final, reference_clean - final, eps_goal)
