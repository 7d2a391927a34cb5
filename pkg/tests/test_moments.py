import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from intervalq.core import EstimationError, IntervalDataset, RngState
from intervalq.experiments import DgpSpec, generate, true_theta
from intervalq.moments import (InstrumentSet, MomentConfig, axis_grid, bootstrap_critical_value,
                               box_instruments, confidence_set_scan, contiguity_violations, moments,
                               test_statistic)


def _with_intercept(lo, hi, x):
    x = np.asarray(x, dtype=float)
    return IntervalDataset(lo, hi, np.column_stack([np.ones_like(x), x]), has_constant_column=True)


def test_config_defaults():
    cfg = MomentConfig().resolved(1000)
    assert (cfg.R, cfg.epsilon_n, cfg.eta) == (2, 0.05, 1e-6)
    assert cfg.kappa_n == pytest.approx(math.sqrt(0.3 * math.log(1000)))
    assert cfg.B_n == pytest.approx(math.sqrt(0.4 * math.log(1000) / math.log(math.log(1000))))


def test_moment_examples():
    x = np.array([[1.0, 0.5]])
    assert tuple(v[0] for v in moments(x, [0.0], [1.0], (5.0, 0.0), 0.3)) == pytest.approx((0.7, -0.7))
    assert tuple(v[0] for v in moments(x, [0.0], [1.0], (-5.0, 0.0), 0.3)) == pytest.approx((-0.3, 0.3))
    # tie y == x'theta counts as below
    assert tuple(v[0] for v in moments(x, [1.0], [1.0], (0.5, 1.0), 0.3)) == pytest.approx((0.7, -0.7))


def test_box_examples():
    assert box_instruments([0.3], 1).tolist() == [1.0, 0.0]
    assert box_instruments([1.0], 2).tolist() == [0.0, 0.0, 0.0, 1.0]
    assert box_instruments([0.0], 2).tolist() == [1.0, 0.0, 0.0, 0.0]
    g = box_instruments([0.7, 0.2], 1)
    assert g.size == 4 and g.sum() == 1 and g[2] == 1  # cell (2, 1) in lexicographic order
    with pytest.raises(ValueError):
        box_instruments([1.2], 1)


@given(st.lists(st.floats(0, 1), min_size=2, max_size=2), st.integers(1, 4))
def test_boxes_partition_the_cube(x, r):
    assert box_instruments(x, r).sum() == 1.0


def test_statistic_zero_when_all_moments_slack():
    # every interval straddles x'theta = 0 at tau = 0.5 so both moments are +0.5
    x = np.linspace(0, 1, 20)
    ds = _with_intercept(np.full(20, -1.0), np.full(20, 1.0), x)
    assert test_statistic(ds, (0.0, 0.0), 0.5) == 0.0


def test_statistic_hand_expanded_n4():
    x = np.array([0.0, 0.2, 0.6, 1.0])
    lo = np.array([0.5, -1.0, 0.8, -2.0])
    hi = np.array([1.0, 0.1, 1.5, 3.0])
    tau, eps, theta = 0.4, 0.05, (0.3, 0.2)
    ds = _with_intercept(lo, hi, x)
    got = test_statistic(ds, theta, tau, MomentConfig(R=1, epsilon_n=eps))
    # direct double sum: r = 1, cells (0, .5] (closed at 0) and (.5, 1]
    q = theta[0] + theta[1] * x
    m1 = [(1.0 if lo[i] <= q[i] else 0.0) - tau for i in range(4)]
    m2 = [tau - (1.0 if hi[i] <= q[i] else 0.0) for i in range(4)]
    cells = [[1, 1, 0, 0], [0, 0, 1, 1]]
    want = 0.0
    for m in (m1, m2):
        mean1 = sum(m) / 4
        var1 = sum((v - mean1) ** 2 for v in m) / 4
        for g in cells:
            mg = [m[i] * g[i] for i in range(4)]
            mean = sum(mg) / 4
            var = sum((v - mean) ** 2 for v in mg) / 4
            t = math.sqrt(4) * mean / math.sqrt(var + eps * var1)
            want += (1 / 101) * 0.5 * min(t, 0.0) ** 2
    assert got == pytest.approx(want, rel=1e-12)
    assert want > 0


def test_statistic_is_permutation_invariant(rng):
    ds = generate(DgpSpec("parametric", 150), rng)
    perm = rng.permutation(150)
    shuffled = IntervalDataset(ds.lower[perm], ds.upper[perm], ds.covariates[perm], has_constant_column=True)
    for theta in [(1.5, 0.5), (1.3, 0.9), (1.7, 0.1)]:
        assert test_statistic(shuffled, theta, 0.5) == pytest.approx(test_statistic(ds, theta, 0.5), rel=1e-12)


_vals = st.integers(-20, 20).map(lambda k: k / 10)


@given(st.lists(st.tuples(st.integers(0, 10), _vals, st.integers(0, 10)), min_size=4, max_size=12),
       st.tuples(_vals, _vals), st.integers(0, 11), st.floats(0.1, 2.0), st.booleans(),
       st.sampled_from([0.25, 0.5, 0.75]))
def test_widening_never_raises_statistic_without_regularizer(rows, theta, idx, amount, lower_side, tau):
    x = np.array([r[0] / 10 for r in rows])
    lo = np.array([r[1] for r in rows])
    hi = lo + np.array([r[2] / 10 for r in rows])
    i = idx % len(rows)
    lo2, hi2 = lo.copy(), hi.copy()
    if lower_side:
        lo2[i] -= amount
    else:
        hi2[i] += amount
    cfg = MomentConfig(R=2, epsilon_n=0.0)
    before = test_statistic(_with_intercept(lo, hi, x), theta, tau, cfg)
    after = test_statistic(_with_intercept(lo2, hi2, x), theta, tau, cfg)
    assert after <= before + 1e-12


def test_widening_can_raise_statistic_with_regularizer():
    # the regularizer pools variance across cells, so widening one interval can
    # enlarge a studentized violation in a different cell
    x = [1.0, 0.8, 0.8, 0.3, 0.2, 0.2]
    lo = np.array([-0.7, -0.2, 0.7, -0.5, 1.8, 0.3])
    hi = np.array([-0.2, 0.4, 1.4, -0.4, 2.1, 1.0])
    lo2 = lo.copy()
    lo2[2] -= 1.0
    cfg = MomentConfig(R=1, epsilon_n=0.05)
    before = test_statistic(_with_intercept(lo, hi, x), (0.0, 0.8), 0.5, cfg)
    after = test_statistic(_with_intercept(lo2, hi, x), (0.0, 0.8), 0.5, cfg)
    assert after > before
    cfg0 = MomentConfig(R=1, epsilon_n=0.0)
    assert test_statistic(_with_intercept(lo2, hi, x), (0.0, 0.8), 0.5, cfg0) <= \
        test_statistic(_with_intercept(lo, hi, x), (0.0, 0.8), 0.5, cfg0)


def test_constant_violated_moment_rejects():
    # x'theta below every observation: m1 = -tau and m2 = tau for every row
    ds = generate(DgpSpec("parametric", 200), RngState(3).generator())
    cfg = MomentConfig(bootstrap_count=200)
    stat = test_statistic(ds, (-5.0, 0.0), 0.5, cfg)
    # in a cell holding a fraction p of rows the studentized mean is -sqrt(n p / (1 - p))
    # (the pooled regularizer vanishes because m1 is constant)
    inst = InstrumentSet.build(ds, cfg.R)
    p = inst.G.mean(axis=0)
    want = sum(w * 200 * pj / (1 - pj) for w, pj in zip(inst.weights, p) if 0 < pj < 1)
    assert stat == pytest.approx(want, rel=1e-12)
    assert bootstrap_critical_value(ds, (-5.0, 0.0), 0.5, cfg, 0) == pytest.approx(cfg.eta)


def test_far_below_slope_rejected():
    rej = 0
    cfg = MomentConfig(bootstrap_count=200)
    for s in range(100):
        ds = generate(DgpSpec("parametric", 200), RngState(9, s).generator())
        pt = confidence_set_scan(ds, 0.5, [(1.5, -1000.0)], cfg, s)[0]
        rej += pt.accepted is False
    assert rej / 100 >= 0.99


def test_critical_value_floor_and_determinism(rng):
    ds = generate(DgpSpec("parametric", 120), rng)
    cfg = MomentConfig(bootstrap_count=150)
    for theta in [(1.5, 0.5), (1.0, 0.0), (3.0, 3.0)]:
        c = bootstrap_critical_value(ds, theta, 0.5, cfg, RngState(4))
        assert c >= cfg.eta
        assert c == bootstrap_critical_value(ds, theta, 0.5, cfg, RngState(4))
    with pytest.raises(ValueError):
        bootstrap_critical_value(ds, (1.5, 0.5), 0.5, MomentConfig(bootstrap_count=50), 0)


def test_gms_saturation(rng):
    # all sample moments strictly slack: a huge B_n pushes every bootstrap term to zero
    x = rng.random(300)
    q = 1.0 + x
    above = rng.random(300) < 0.1  # a few rows sit wholly above the line, so moments vary
    lo = np.where(above, q + 0.5, q - 1.0 - rng.random(300))
    hi = np.where(above, q + 1.0, q + 1.0 + rng.random(300))
    ds = _with_intercept(lo, hi, x)
    c = bootstrap_critical_value(ds, (1.0, 1.0), 0.5, MomentConfig(B_n=1e9, bootstrap_count=200), 1)
    assert c == pytest.approx(1e-6, abs=1e-12)
    c_small = bootstrap_critical_value(ds, (1.0, 1.0), 0.5, MomentConfig(B_n=0.0, bootstrap_count=200), 1)
    assert c_small > c


def test_truth_statistic_below_critical_value_in_median():
    stats, crits = [], []
    cfg = MomentConfig(bootstrap_count=200)
    for s in range(200):
        ds = generate(DgpSpec("parametric", 100), RngState(13, s).generator())
        stats.append(test_statistic(ds, true_theta(0.5), 0.5, cfg))
        crits.append(bootstrap_critical_value(ds, true_theta(0.5), 0.5, cfg, s))
    assert np.median(stats) < np.median(crits)


def test_scan_true_point_accepted_and_deterministic():
    cfg = MomentConfig(bootstrap_count=200)
    acc = 0
    for s in range(200):
        ds = generate(DgpSpec("parametric", 100), RngState(14, s).generator())
        acc += confidence_set_scan(ds, 0.5, [true_theta(0.5)], cfg, s)[0].accepted
    assert acc / 200 >= 0.93
    ds = generate(DgpSpec("parametric", 100), RngState(15).generator())
    grid = axis_grid(true_theta(0.5), (0.2, 0.2), 0.1)
    a = confidence_set_scan(ds, 0.5, grid, cfg, 3)
    b = confidence_set_scan(ds, 0.5, grid, cfg, 3)
    assert a == b and [p.theta for p in a] == [tuple(g) for g in grid]


def test_wide_intervals_accept_everything(rng):
    x = rng.random(80)
    ds = _with_intercept(np.full(80, -100.0), np.full(80, 100.0), x)
    grid = axis_grid((0.0, 0.0), (1.0, 1.0), 0.5)
    assert all(p.accepted for p in confidence_set_scan(ds, 0.5, grid, MomentConfig(bootstrap_count=100), 0))


def test_scan_marks_failing_points_instead_of_aborting():
    ds = _with_intercept([0.0, 1.0, 2.0, 0.5], [1.0, 2.0, 3.0, 0.7], [0.0, 0.5, 1.0, 0.2])
    pts = confidence_set_scan(ds, 0.5, [(1e308, 1e308), (0.5, 1.0)], MomentConfig(bootstrap_count=100), 0)
    assert pts[0].accepted is None and "not finite" in pts[0].error
    assert pts[1].accepted is not None
    with pytest.raises(ValueError):
        confidence_set_scan(ds, 0.5, [], MomentConfig(), 0)


def test_contiguity_diagnostic(caplog):
    assert contiguity_violations([False, True, True, False]) == 0
    assert contiguity_violations([True, False, True, None, True]) == 2
    assert "gap" in caplog.text


def test_instrument_set_uses_nonconstant_columns(rng):
    ds = generate(DgpSpec("parametric", 50), rng)
    inst = InstrumentSet.build(ds, 2)
    assert inst.G.shape == (50, 2 + 4)
    assert np.allclose(inst.G[:, :2].sum(axis=1), 1) and np.allclose(inst.G[:, 2:].sum(axis=1), 1)
    assert inst.weights[0] == pytest.approx(1 / 101 / 2) and inst.weights[-1] == pytest.approx(1 / 104 / 4)


def test_statistic_needs_two_rows():
    with pytest.raises(EstimationError):
        test_statistic(_with_intercept([0.0], [1.0], [0.5]), (0.0, 0.0), 0.5)
