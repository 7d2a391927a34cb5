import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad

from intervalq.core import IntervalDataset, RngState
from intervalq.experiments import DgpSpec, generate, uniform_combination_cdf
from intervalq.functionals import capacity_ecdf, containment_ecdf, functional_curve, sup_deviation

TWO = IntervalDataset.from_intervals([(0, 1), (2, 3)])


@pytest.mark.parametrize("t,expected", [(0.5, 0.0), (3, 1.0), (1, 0.5)])
def test_containment_examples(t, expected):
    assert containment_ecdf(TWO, t) == expected


@pytest.mark.parametrize("t,expected", [(0.5, 0.5), (-1, 0.0), (2, 1.0)])
def test_capacity_examples(t, expected):
    assert capacity_ecdf(TWO, t) == expected


def test_infinite_endpoints_and_arguments():
    ds = IntervalDataset([-np.inf, 0.0], [np.inf, 1.0])
    assert containment_ecdf(ds, 1e300) == 0.5  # +inf upper never contained
    assert capacity_ecdf(ds, -1e300) == 0.5
    assert containment_ecdf(ds, np.inf) == 1.0
    assert capacity_ecdf(ds, -np.inf) == 0.0


def test_sup_deviation_examples():
    one = IntervalDataset.from_intervals([(0, 1)])
    assert sup_deviation(one, lambda t: float(t >= 0), "capacity") == 0.0
    assert sup_deviation(TWO, lambda t: 0.0, "capacity") == 1.0


def _trapezoid_by_quadrature(c, d, t):
    # P(cV + dW <= t) = int_0^1 clip((t - c v)/d, 0, 1) dv
    val, _ = quad(lambda v: min(max((t - c * v) / d, 0.0), 1.0), 0.0, 1.0, limit=200)
    return val


@pytest.mark.parametrize("t", [0.1, 0.3, 0.5, 0.9, 1.5, 1.8, 1.95])
def test_closed_form_cdf_matches_quadrature(t):
    assert uniform_combination_cdf(0.5, 1.5, t) == pytest.approx(_trapezoid_by_quadrature(0.5, 1.5, t), abs=1e-8)


def test_sup_deviation_vs_analytic_capacity():
    ds = generate(DgpSpec("continuous", 10_000), RngState(11).generator())
    assert sup_deviation(ds, lambda t: uniform_combination_cdf(0.5, 1.5, t), "capacity") <= 0.02
    assert sup_deviation(ds, lambda t: uniform_combination_cdf(2.5, 1.5, t), "containment") <= 0.02


def test_sup_deviation_brute_force_agreement(rng):
    ds = IntervalDataset(np.round(rng.normal(size=30), 1), np.round(rng.normal(size=30), 1) + 3)
    ref = lambda t: uniform_combination_cdf(1.0, 1.0, t + 1.0)
    grid = np.linspace(-5, 8, 200_001)
    brute = np.max(np.abs(capacity_ecdf(ds, grid) - np.array([ref(t) for t in grid])))
    exact = sup_deviation(ds, ref, "capacity")
    assert exact >= brute - 1e-12
    assert exact == pytest.approx(brute, abs=1e-3)


def test_monotone_decay_of_median_deviation():
    ref = lambda t: uniform_combination_cdf(0.5, 1.5, t)
    medians = []
    for n in (250, 1000, 4000, 16000):
        devs = [sup_deviation(generate(DgpSpec("continuous", n), RngState(3, (n, r)).generator()), ref)
                for r in range(100)]
        medians.append(np.median(devs))
    assert all(a >= b for a, b in zip(medians, medians[1:]))


intervals = st.lists(st.tuples(st.floats(-50, 50), st.floats(0, 20)), min_size=1, max_size=40)


@given(intervals, st.lists(st.floats(-80, 80), min_size=1, max_size=20))
def test_capacity_dominates_containment(pairs, ts):
    ds = IntervalDataset([a for a, _ in pairs], [a + w for a, w in pairs])
    t = np.array(ts)
    assert np.all(capacity_ecdf(ds, t) >= containment_ecdf(ds, t))


@given(intervals)
def test_curve_is_monotone_step(pairs):
    ds = IntervalDataset([a for a, _ in pairs], [a + w for a, w in pairs])
    curve = functional_curve(ds, np.linspace(-100, 100, 101))
    for v in (curve.containment, curve.capacity):
        assert np.all(np.diff(v) >= 0) and v.min() >= 0 and v.max() <= 1


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=40), st.floats(-60, 60))
def test_degenerate_data_match_classical_ecdf(points, t):
    ds = IntervalDataset(points, points)
    classical = np.mean(np.array(points) <= t)
    assert containment_ecdf(ds, t) == capacity_ecdf(ds, t) == pytest.approx(classical)
