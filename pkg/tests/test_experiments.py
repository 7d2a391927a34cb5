import math

import numpy as np
import pytest

from intervalq.core import RngState
from intervalq.experiments import (TABLE1, TABLE3, DgpSpec, ExperimentReport, generate, local_alternative,
                                   parametric_dataset, population_quantile_set, power_monotone, preflight,
                                   read_config, run_table, uniform_combination_quantile)


def test_parametric_binning_example():
    ds = parametric_dataset([0.385], [0.573])
    assert 1 + 1.385 * 0.573 == pytest.approx(1.794, abs=1e-3)
    assert ds.intervals[0].lower == pytest.approx(1.7) and ds.intervals[0].upper == pytest.approx(1.8)
    assert ds.has_constant_column and ds.covariates.tolist() == [[1.0, 0.385]]


def test_continuous_widths_are_twice_v(rng):
    gen = RngState(3).generator()
    ds = generate(DgpSpec("continuous", 1000), gen)
    v = RngState(3).generator().random(1000)
    assert np.allclose(ds.upper - ds.lower, 2 * v)
    assert np.all(ds.upper >= ds.lower)


def test_discrete_bins_are_unit_half_integer(rng):
    ds = generate(DgpSpec("discrete", 2000), rng)
    assert np.allclose(ds.upper - ds.lower, 1.0)
    assert np.allclose(np.mod(ds.lower, 1.0), 0.5)


def test_conditional_and_parametric_covariates(rng):
    c = generate(DgpSpec("conditional", 50), rng)
    assert c.p == 1 and not c.has_constant_column
    p = generate(DgpSpec("parametric", 50), rng)
    assert p.p == 2 and p.has_constant_column
    assert np.allclose(p.upper - p.lower, 0.1)
    with pytest.raises(ValueError):
        DgpSpec("nope", 10)


def test_local_alternative_examples():
    assert local_alternative((1, 2), 0.0, 50) == (1.0, 2.0)
    assert local_alternative((1, 2), 2.0, 400) == pytest.approx((1.1, 2.1))
    assert local_alternative((-0.5, 0.5), 8.0, 100) == pytest.approx((0.3, 1.3))
    with pytest.raises(ValueError):
        local_alternative((2, 1), 1.0, 10)


def test_reference_identification_sets_by_simulation():
    # independent route to the closed forms: a million draws of each design
    gen = RngState(99).generator()
    cont = generate(DgpSpec("continuous", 1_000_000), gen)
    disc = generate(DgpSpec("discrete", 1_000_000), gen)
    for tau, pub in TABLE1.items():
        got = np.quantile(cont.lower, tau), np.quantile(cont.upper, tau)
        assert got == pytest.approx(pub, abs=0.01)
        assert population_quantile_set("continuous", tau) == pytest.approx(pub, abs=0.01)
    for tau, pub in TABLE3.items():
        k = math.ceil(disc.n * tau)
        got = np.sort(disc.lower)[k - 1], np.sort(disc.upper)[k - 1]
        assert got == pytest.approx(pub, abs=0.01)
    rows = preflight()
    assert all(r.ok for r in rows) and len(rows) == 14


def test_uniform_quantile_closed_form_vs_draws():
    gen = RngState(7).generator()
    s = 0.5 * gen.random(400_000) + 1.5 * gen.random(400_000)
    for tau in (0.05, 0.2, 0.5, 0.9, 0.99):
        assert uniform_combination_quantile(0.5, 1.5, tau) == pytest.approx(np.quantile(s, tau), abs=0.01)


def test_report_bytes_are_deterministic(tmp_path):
    kw = dict(taus=(0.5,), ns=(200,), deltas=(0.0, 4.0), draws=2000)
    a = run_table("table2", 100, seed=4, **kw)
    b = run_table("table2", 100, seed=4, **kw)
    assert a.to_json() == b.to_json()
    pa, pb = a.write(tmp_path / "a"), b.write(tmp_path / "b")
    for x, y in zip(pa, pb):
        assert x.read_bytes() == y.read_bytes()
    c = run_table("table2", 100, seed=5, **kw)
    assert c.to_json() != a.to_json()


def test_workers_do_not_change_results():
    kw = dict(taus=(0.5,), ns=(200, 300), deltas=(0.0, 2.0), draws=2000)
    assert run_table("table2", 100, 1, workers=2, **kw).to_json() == run_table("table2", 100, 1, **kw).to_json()


def test_table5_and_figure1_smoke(tmp_path):
    t5 = run_table("table5", 200, 0, taus=(0.5,), ns=(1000,))
    assert t5.frequency(tau=0.5, n=1000) <= 0.005
    f1 = run_table("figure1", 100, 0, taus=(0.25,), ns=(100,), theta2=(0.25, 1.35), bootstrap=100)
    assert f1.frequency(0.25, tau=0.25, n=100) <= 0.07
    assert f1.frequency(1.35, tau=0.25, n=100) >= 0.9
    paths = f1.write(tmp_path)
    assert [p.name for p in paths] == ["figure1.csv", "figure1.json", "figure1_plot.csv"]
    assert paths[2].read_text().splitlines()[0] == "tau,n,theta2,frequency"


def test_run_table_guards():
    with pytest.raises(ValueError):
        run_table("table9")
    with pytest.raises(ValueError):
        run_table("table2", 50)


def test_power_monotone_rule():
    ok = ExperimentReport("table2", 400, 0, [0, 1, 2], [{"tau": 0.5, "n": 10, "frequencies": [0.05, 0.5, 0.49],
                                                         "valid": 400, "discarded": 0}])
    bad = ExperimentReport("table2", 400, 0, [0, 1, 2], [{"tau": 0.5, "n": 10, "frequencies": [0.05, 0.5, 0.3],
                                                          "valid": 400, "discarded": 0}])
    assert power_monotone(ok) and not power_monotone(bad)
    with pytest.raises(ValueError):
        ExperimentReport("table2", 10, 0, [0], [{"frequencies": [1.5], "valid": 10, "discarded": 0}])


def test_read_config(tmp_path):
    p = tmp_path / "mc.conf"
    p.write_text("design = table5\nreplications = 300  # desk\nseed=9\noutput = out\n")
    assert read_config(p) == {"design": "table5", "replications": 300, "seed": 9, "output": "out"}
    p.write_text("colour = red\n")
    with pytest.raises(ValueError, match="unknown key"):
        read_config(p)
