import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from epsched import metrics
from epsched.attacks import AttackConfig
from epsched.errors import ContractError
from epsched.metrics import (
    RobustnessCurve,
    accuracy_curve,
    adaptation_phase_epoch,
    delay_epoch,
    eps_grid,
    expected_robustness,
    ordering_check,
    pearson_correlation,
    robust_accuracy,
    transfer_diagnostics,
)
from epsched.models import ModelSpec, accuracy, init_random
from epsched.trainloop import EpochTrace


def _trace(accs):
    return [EpochTrace(i, 0.0, 1.0, a, a, 1.0, 1.0) for i, a in enumerate(accs)]


def _linear_2d(w, c):
    """Two classes on [0,1]^2; class 1 iff w.x + c > 0 (ties go to class 0)."""
    state = init_random(ModelSpec(2, (2,), 2), 0)
    head = np.array([[0.0, w[0]], [0.0, w[1]]])
    # hidden bias of 1 keeps the relu in its linear region over the whole box
    return state.with_params([np.eye(2), np.ones(2), head, np.array([0.0, c - w.sum()])])


def _dense_integral(eps, acc):
    grid = np.union1d(np.linspace(0.0, eps[-1], 200_001), eps)
    vals = np.interp(grid, eps, acc)
    return float(np.sum((vals[1:] + vals[:-1]) / 2 * np.diff(grid)) / eps[-1])


# -- robust accuracy ---------------------------------------------------------


def test_eps_zero_is_plain_accuracy():
    state = init_random(ModelSpec(3, (5,), 3), 0)
    rng = np.random.default_rng(0)
    x, y = rng.random((30, 3)), rng.integers(0, 3, 30)
    assert robust_accuracy(state, x, y, 0.0) == accuracy(state, x, y)


def test_constant_model_gives_chance():
    state = init_random(ModelSpec(3, (5,), 4), 0)
    state = state.with_params([np.zeros_like(p) for p in state.params()])
    x = np.random.default_rng(1).random((40, 3))
    y = np.repeat(np.arange(4), 10)
    for eps in (0.0, 0.05, 0.3):
        assert robust_accuracy(state, x, y, eps) == 0.25


@pytest.mark.parametrize("eps", [0.0, 0.02, 0.05, 0.1, 0.2])
def test_linear_model_matches_margin_oracle(eps):
    w, c = np.array([2.0, -1.0]), -0.4
    state = _linear_2d(w, c)
    rng = np.random.default_rng(2)
    x = rng.random((500, 2))
    y = (x @ w + c > 0).astype(int)
    # worst case inside the box-clipped ball: push each coordinate against the label
    direction = np.where(y[:, None] == 1, -np.sign(w), np.sign(w))
    worst = np.clip(x + eps * direction, 0.0, 1.0)
    gap = worst @ w + c
    expected = np.mean(np.where(y == 1, gap > 0, gap <= 0))
    got = robust_accuracy(state, x, y, eps, AttackConfig(steps=10, seed=3))
    assert got == expected


def test_empty_data_rejected():
    state = init_random(ModelSpec(3, (5,), 3), 0)
    with pytest.raises(ContractError):
        robust_accuracy(state, np.zeros((0, 3)), np.zeros(0, dtype=int), 0.1)


# -- curves --------------------------------------------------------------------


def test_grid_shapes():
    g = eps_grid(4 / 255, 1 / 255)
    assert len(g) == 5 and g[0] == 0 and g[-1] == 4 / 255
    assert eps_grid(0.08, 0.01)[-1] == 0.08 and len(eps_grid(0.08, 0.01)) == 9
    assert eps_grid(0.05, 0.02) == [0.0, 0.02, 0.04, 0.05]
    assert eps_grid(0.0, 0.01) == [0.0]


def test_accuracy_curve():
    state = init_random(ModelSpec(3, (5,), 3), 0)
    rng = np.random.default_rng(3)
    x, y = rng.random((30, 3)), rng.integers(0, 3, 30)
    c = accuracy_curve(state, x, y, 4 / 255, 1 / 255)
    assert len(c.eps_grid) == 5 and c.clean == accuracy(state, x, y)
    flat = accuracy_curve(state, x, y, 0.0, 1 / 255)
    assert flat.eps_grid == (0.0,) and flat.accuracy == (accuracy(state, x, y),)


def test_curve_validation():
    with pytest.raises(ContractError):
        RobustnessCurve((0.1, 0.2), (1.0, 0.5))
    with pytest.raises(ContractError):
        RobustnessCurve((0.0, 0.2, 0.2), (1.0, 0.5, 0.4))
    with pytest.raises(ContractError):
        RobustnessCurve((0.0, 0.1), (1.0,))
    c = RobustnessCurve((0.0, 0.1, 0.2), (0.9, 0.91, 0.5))
    assert c.is_monotone() and not c.is_monotone(tol=0.0)


# -- expected robustness -------------------------------------------------------


def test_expected_robustness_exact_cases():
    for a in (0.0, 0.37, 0.8125, 1.0):
        assert expected_robustness(RobustnessCurve(eps_grid(8 / 255, 1 / 255), [a] * 9)) == a
    g = eps_grid(0.08, 0.01)
    assert expected_robustness(RobustnessCurve(g, [1 - e / 0.08 for e in g])) == 0.5
    assert expected_robustness(RobustnessCurve((0.0, 0.04), (1.0, 0.0))) == 0.5


def test_expected_robustness_four_interval_formula():
    acc = [0.9, 0.7, 0.6, 0.45, 0.3]
    c = RobustnessCurve(eps_grid(4 / 255, 1 / 255), acc)
    manual = sum((acc[i] + acc[i + 1]) / 2 for i in range(4)) / 4
    assert expected_robustness(c) == pytest.approx(manual, abs=1e-15)


def test_expected_robustness_vs_dense_integration():
    rng = np.random.default_rng(4)
    for _ in range(100):
        n = int(rng.integers(2, 12))
        eps = np.concatenate([[0.0], np.sort(rng.uniform(0.001, 0.1, n - 1))])
        eps = np.unique(eps)
        acc = np.sort(rng.random(len(eps)))[::-1]
        got = expected_robustness(RobustnessCurve(eps, acc))
        assert abs(got - _dense_integral(eps, acc)) <= 1e-12


def test_expected_robustness_single_point_rejected():
    with pytest.raises(ContractError):
        expected_robustness(RobustnessCurve((0.0,), (0.9,)))


def test_weights():
    c = RobustnessCurve((0.0, 0.02, 0.04), (1.0, 0.6, 0.2))
    assert expected_robustness(c, [1, 1]) == expected_robustness(c)
    assert expected_robustness(c, [1, 0]) == pytest.approx(0.8, abs=1e-15)
    assert expected_robustness(c, [0, 3]) == pytest.approx(0.4, abs=1e-15)
    with pytest.raises(ContractError):
        expected_robustness(c, [1])
    with pytest.raises(ContractError):
        expected_robustness(c, [0, 0])
    with pytest.raises(ContractError):
        expected_robustness(c, [-1, 2])


curves = st.integers(2, 10).flatmap(
    lambda n: st.tuples(
        st.lists(st.floats(1e-3, 0.05), min_size=n - 1, max_size=n - 1),
        st.lists(st.floats(0.0, 1.0), min_size=n, max_size=n),
    )
)


def _curve(steps, acc, monotone=False):
    eps = np.concatenate([[0.0], np.cumsum(steps)])
    acc = sorted(acc, reverse=True) if monotone else acc
    return RobustnessCurve(eps, acc)


@settings(max_examples=200, deadline=None)
@given(curves)
def test_expected_robustness_bounded(data):
    c = _curve(*data)
    e = expected_robustness(c)
    assert min(c.accuracy) <= e <= max(c.accuracy)


@settings(max_examples=200, deadline=None)
@given(curves)
def test_ordering_holds_for_monotone_curves(data):
    c = _curve(*data, monotone=True)
    assert ordering_check(c.clean, c.adversarial, expected_robustness(c))


@settings(max_examples=200, deadline=None)
@given(curves, st.floats(0.05, 0.95))
def test_refinement_invariance(data, frac):
    c = _curve(*data)
    e, a = list(c.eps_grid), list(c.accuracy)
    mid = e[0] + frac * (e[1] - e[0])
    refined = RobustnessCurve([e[0], mid, *e[1:]], [a[0], a[0] + frac * (a[1] - a[0]), *a[1:]])
    assert abs(expected_robustness(refined) - expected_robustness(c)) <= 1e-12


# -- ordering, delay, correlation ---------------------------------------------


def test_ordering_examples():
    assert ordering_check(73.80, 32.00, 53.75)
    assert ordering_check(6.40, 2.80, 4.48)
    assert ordering_check(0.5, 0.5, 0.5)
    assert not ordering_check(0.5, 0.6, 0.55)


def test_delay_examples():
    assert delay_epoch(_trace([0.5, 0.6])) == 0
    assert delay_epoch(_trace([0.01] * 5)) is None
    assert delay_epoch(_trace([0.01] * 10 + [0.2, 0.3])) == 10
    assert delay_epoch(_trace([0.05, 0.06])) == 1
    with pytest.raises(ContractError):
        delay_epoch([])


@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=30), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_delay_monotone_in_threshold(accs, t1, t2):
    lo, hi = sorted((t1, t2))
    d_lo, d_hi = delay_epoch(_trace(accs), lo), delay_epoch(_trace(accs), hi)
    if d_hi is not None:
        assert d_lo is not None and d_lo <= d_hi


def test_adaptation_phase():
    accs = [0.1, 0.3, 0.6, 0.71, 0.73, 0.75, 0.8]
    assert adaptation_phase_epoch(_trace(accs)) == 4
    assert adaptation_phase_epoch(_trace([0.4] * 6)) == 0


def test_pearson():
    xs = [1.0, 2.0, 4.0, 7.0, 11.0]
    assert pearson_correlation(xs, [2 * x + 1 for x in xs]) == 1.0
    assert pearson_correlation(xs, [-x for x in xs]) == -1.0
    ys = [3.1, 0.2, 5.5, 4.0, 9.9]
    n = len(xs)
    mx, my = sum(xs) / n, sum(ys) / n
    cov = sum((a - mx) * (b - my) for a, b in zip(xs, ys))
    expected = cov / (sum((a - mx) ** 2 for a in xs) * sum((b - my) ** 2 for b in ys)) ** 0.5
    assert abs(pearson_correlation(xs, ys) - expected) <= 1e-12
    with pytest.raises(ContractError):
        pearson_correlation([1, 1, 1], [1, 2, 3])
    with pytest.raises(ContractError):
        pearson_correlation([1, 2], [1, 2])


def test_transfer_diagnostics():
    d = transfer_diagnostics(_trace([0.01, 0.3, 0.4]), 0.9, 0.08)
    assert d.delay_epoch == 1 and d.final_clean_acc == 0.4
    assert d.severity == pytest.approx(0.5) and d.eps_goal == 0.08
    assert transfer_diagnostics(_trace([0.95]), 0.9, 0.0).severity < 0
    assert metrics.TransferDiagnostics(None, 0.1, 0.8, 0.08).delay_epoch is None
