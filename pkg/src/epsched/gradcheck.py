"""Finite-difference checks of every differentiable op and of the full model loss."""

from __future__ import annotations

import numpy as np

from . import tensorcore as tc
from .models import ModelSpec, forward, init_random


def _away_from_zero(a: np.ndarray, margin: float = 1e-3) -> np.ndarray:
    # keep relu inputs off the kink so central differences stay smooth
    return np.where(np.abs(a) < margin, np.copysign(margin, a) + a, a)


def op_cases(seed: int) -> dict[str, tuple]:
    """name -> (f, point): scalar-valued functions of one tensor, with a random point."""
    rng = np.random.default_rng(seed)
    m, k, n = 5, 4, 3
    x = rng.standard_normal((m, k))
    w = rng.standard_normal((k, n))
    b = rng.standard_normal(n)
    y = rng.integers(0, n, size=m)
    r = _away_from_zero(rng.standard_normal((m, n)))

    def ce(z):
        return tc.softmax_cross_entropy(z, y)

    return {
        "matmul/a": (lambda t: ce(tc.matmul(t, tc.Tensor(w))), x),
        "matmul/b": (lambda t: ce(tc.matmul(tc.Tensor(x), t)), w),
        "add_bias/x": (lambda t: ce(tc.add_bias(t, tc.Tensor(b))), r),
        "add_bias/b": (lambda t: ce(tc.add_bias(tc.Tensor(r), t)), b),
        "relu": (lambda t: ce(tc.relu(t)), r),
        "softmax_cross_entropy": (ce, r),
        "sum_all": (lambda t: tc.sum_all(tc.relu(t)), r),
        "scale": (lambda t: ce(tc.scale(t, -1.7)), r),
        "add": (lambda t: ce(tc.add(t, tc.Tensor(2 * r))), r),
    }


def model_cases(seed: int, spec: ModelSpec | None = None) -> dict[str, tuple]:
    """The full MLP loss as a function of each parameter and of the input."""
    spec = spec or ModelSpec(6, (8, 5), 4)
    rng = np.random.default_rng([seed, 1])
    state = init_random(spec, seed)
    # non-zero biases so every layer's bias gradient is exercised away from init
    state = state.with_params([p + 0.1 * rng.standard_normal(p.shape) for p in state.params()])
    x = rng.random((7, spec.input_dim))
    y = rng.integers(0, spec.num_classes, size=7)
    params = state.params()
    cases = {}
    for i, p in enumerate(params):
        def f(t, i=i):
            ps = [t if j == i else tc.Tensor(q) for j, q in enumerate(params)]
            return tc.softmax_cross_entropy(forward(state, x, ps), y)

        kind = "head" if i >= len(params) - 2 else f"layer{i // 2}"
        cases[f"mlp/{kind}/{'W' if i % 2 == 0 else 'b'}"] = (f, p)
    cases["mlp/input"] = (lambda t: tc.softmax_cross_entropy(forward(state, t), y), x)
    return cases


def gradcheck_suite(seeds=range(10), h: float = 1e-5) -> dict[str, float]:
    """Max relative error per case over ``seeds``."""
    worst: dict[str, float] = {}
    for seed in seeds:
        for name, (f, point) in {**op_cases(seed), **model_cases(seed)}.items():
            worst[name] = max(worst.get(name, 0.0), tc.grad_check(f, point, h))
    return worst
