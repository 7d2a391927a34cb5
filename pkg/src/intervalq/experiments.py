"""Simulation designs, population identification sets and the Monte Carlo runner."""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.stats import norm

from .conditional import bandwidth_rule, local_quantile_set
from .core import EstimationError, IntervalDataset, RngState, as_generator
from .moments import MomentConfig, bootstrap_critical_value, test_statistic, InstrumentSet
from .quantile_sets import (hausdorff, quantile_set_continuous, quantile_set_discrete,
                            simulate_critical_value, _plugin_sigma)

log = logging.getLogger(__name__)

KINDS = ("continuous", "discrete", "conditional", "parametric")
DESIGNS = ("table2", "table5", "table6", "figure1")
DISCRETE_SD = math.sqrt(10.0)

# reference identification sets, used by the pre-flight check
TABLE1 = {0.2: (0.550, 1.225), 0.3: (0.700, 1.500), 0.4: (0.850, 1.750), 0.5: (1.000, 2.000),
          0.6: (1.150, 2.250), 0.7: (1.300, 2.500), 0.8: (1.450, 2.775)}
TABLE3 = {0.2: (-3.5, -2.5), 0.3: (-2.5, -1.5), 0.4: (-1.5, -0.5), 0.5: (-0.5, 0.5),
          0.6: (0.5, 1.5), 0.7: (1.5, 2.5), 0.8: (2.5, 3.5)}

# desk-scale grids; full-scale replication counts are a CLI flag
DEFAULT_GRIDS = {
    "table2": dict(taus=(0.25, 0.5, 0.75), ns=(250, 500, 1000, 2000), deltas=(0.0, 0.5, 1.0, 2.0, 4.0, 8.0)),
    "table5": dict(taus=(0.25, 0.5, 0.75), ns=(250, 500, 1000, 2000)),
    "table6": dict(x_stars=(-1.0, 0.0, 1.0), taus=(0.25, 0.5, 0.75), ns=(1000, 2000, 4000),
                   deltas=(0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0)),
    "figure1": dict(taus=(0.25, 0.5, 0.75), ns=(100, 200),
                    theta2=tuple(np.round(np.arange(-0.5, 1.5001, 0.1), 10))),
}
DESK_REPLICATIONS = {"table2": 2000, "table5": 2000, "table6": 1000, "figure1": 200}
FULL_REPLICATIONS = {"table2": 25000, "table5": 25000, "table6": 25000, "figure1": 1000}


@dataclass(frozen=True)
class DgpSpec:
    kind: str
    n: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown design kind {self.kind!r}")
        if self.n < 1:
            raise ValueError("n must be >= 1")


def generate(spec: DgpSpec, rng) -> IntervalDataset:
    gen = as_generator(rng)
    n = spec.n
    if spec.kind == "continuous":
        v, w = gen.random(n), gen.random(n)
        return IntervalDataset(0.5 * v + 1.5 * w, 2.5 * v + 1.5 * w)
    if spec.kind == "discrete":
        y = gen.normal(0.0, DISCRETE_SD, n)
        t = np.ceil(y - 0.5)  # y in (t - 0.5, t + 0.5]
        return IntervalDataset(t - 0.5, t + 0.5)
    if spec.kind == "conditional":
        x = gen.standard_normal(n)
        v, w = gen.random(n), gen.random(n)
        return IntervalDataset((0.5 + x) * v + 1.5 * w, (2.5 + x) * v + 1.5 * w, x)
    x, eps = gen.random(n), gen.random(n)
    return parametric_dataset(x, eps)


def parametric_dataset(x, eps) -> IntervalDataset:
    """Bin y = 1 + (1 + x) eps into the cell (t - 0.1, t]; covariates (1, x)."""
    x = np.asarray(x, dtype=float)
    y = 1.0 + (1.0 + x) * np.asarray(eps, dtype=float)
    t = np.round(np.ceil(np.round(10.0 * y, 9)) / 10.0, 10)
    return IntervalDataset(np.round(t - 0.1, 10), t, np.column_stack([np.ones_like(x), x]),
                           has_constant_column=True)


# ------------------------------------------------------ population quantities

def uniform_combination_quantile(c: float, d: float, tau: float) -> float:
    """tau-quantile of c V + d W for independent V, W ~ U(0, 1)."""
    shift = min(c, 0.0) + min(d, 0.0)
    lo, hi = sorted((abs(c), abs(d)))
    if lo == 0:
        return shift + tau * hi
    f1 = lo / (2 * hi)
    if tau <= f1:
        s = math.sqrt(2 * lo * hi * tau)
    elif tau <= 1 - f1:
        s = tau * hi + lo / 2
    else:
        s = lo + hi - math.sqrt(2 * lo * hi * (1 - tau))
    return shift + s


def uniform_combination_cdf(c: float, d: float, t: float) -> float:
    """P(c V + d W <= t) for independent V, W ~ U(0, 1); the trapezoid CDF."""
    shift = min(c, 0.0) + min(d, 0.0)
    lo, hi = sorted((abs(c), abs(d)))
    s = t - shift
    if s <= 0:
        return 0.0
    if s >= lo + hi:
        return 1.0
    if lo == 0:
        return s / hi
    if s <= lo:
        return s * s / (2 * lo * hi)
    if s <= hi:
        return (2 * s - lo) / (2 * hi)
    return 1.0 - (lo + hi - s) ** 2 / (2 * lo * hi)


def discrete_quantile_set(tau: float, sd: float = DISCRETE_SD) -> tuple[float, float]:
    """Lower endpoint c (a half-integer) has P(a <= c) = Phi((c + 1)/sd)."""
    m = math.ceil(sd * norm.ppf(tau) - 1.5 - 1e-12)
    # guard the floating ceiling: smallest half-integer c with Phi((c+1)/sd) >= tau
    while norm.cdf((m - 1 + 1.5) / sd) >= tau:
        m -= 1
    while norm.cdf((m + 1.5) / sd) < tau:
        m += 1
    lo = m + 0.5
    return lo, lo + 1.0


def population_quantile_set(kind: str, tau: float, x_star: Optional[float] = None) -> tuple[float, float]:
    if kind == "continuous":
        return (uniform_combination_quantile(0.5, 1.5, tau), uniform_combination_quantile(2.5, 1.5, tau))
    if kind == "discrete":
        return discrete_quantile_set(tau)
    if kind == "conditional":
        x = 0.0 if x_star is None else float(x_star)
        return (uniform_combination_quantile(0.5 + x, 1.5, tau), uniform_combination_quantile(2.5 + x, 1.5, tau))
    if kind == "parametric":
        raise ValueError("the parametric design has a coefficient vector, see true_theta")
    raise ValueError(f"unknown kind {kind!r}")


def true_theta(tau: float) -> tuple[float, float]:
    return (1.0 + tau, tau)


def _parametric_conditions(tau, theta1, theta2, x):
    """Both conditional moment inequalities of the binned design hold at every x."""
    q = theta1 + theta2 * x
    cell = np.floor(10.0 * q + 1e-9)  # y_u <= q  <=>  y <= cell / 10
    cdf = lambda t: np.clip((t - 1.0) / (1.0 + x), 0.0, 1.0)
    return bool(np.all(cdf((cell + 1) / 10.0) >= tau - 1e-12) and np.all(cdf(cell / 10.0) <= tau + 1e-12))


def identified_slope_interval(tau: float, theta1: Optional[float] = None, points: int = 2001,
                              span: float = 10.0) -> tuple[float, float]:
    """Population identified set of the slope with the intercept held fixed (default 1 + tau).

    The conditions are monotone in the slope for every x > 0, so each end is
    found by bisection; x runs over a fine grid of [0, 1].
    """
    theta1 = 1.0 + tau if theta1 is None else float(theta1)
    x = np.linspace(0.0, 1.0, points)
    inside = lambda t2: _parametric_conditions(tau, theta1, t2, x)
    t0 = true_theta(tau)[1]
    if not inside(t0):
        raise EstimationError("intercept leaves the identified set empty at the true slope")

    def edge(out):
        a, b = t0, out
        for _ in range(60):
            mid = 0.5 * (a + b)
            a, b = (mid, b) if inside(mid) else (a, mid)
        return a

    return edge(t0 - span), edge(t0 + span)


def local_alternative(theta0, delta: float, n: int) -> tuple[float, float]:
    """Shift both endpoints by delta * width / sqrt(n)."""
    lo, hi = (float(v) for v in theta0)
    if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
        raise ValueError("theta0 must be a finite nonempty interval")
    s = delta * (hi - lo) / math.sqrt(n)
    return (lo + s, hi + s)


@dataclass(frozen=True)
class PreflightRow:
    table: str
    tau: float
    reference: tuple
    computed: tuple
    ok: bool


def preflight(tol: float = 0.01) -> list[PreflightRow]:
    rows = []
    for name, table, kind in (("table1", TABLE1, "continuous"), ("table3", TABLE3, "discrete")):
        for tau, pub in table.items():
            got = population_quantile_set(kind, tau)
            ok = max(abs(got[0] - pub[0]), abs(got[1] - pub[1])) <= tol
            rows.append(PreflightRow(name, tau, pub, tuple(round(v, 6) for v in got), ok))
    bad3 = [r for r in rows if r.table == "table3" and not r.ok]
    if bad3:
        log.warning("discrete design disagrees with the reference sets at tau %s", [r.tau for r in bad3])
    bad1 = [r for r in rows if r.table == "table1" and not r.ok]
    if bad1:
        raise EstimationError(f"continuous design fails pre-flight at tau {[r.tau for r in bad1]}")
    return rows


# ----------------------------------------------------------------- reports

@dataclass
class ExperimentReport:
    design: str
    replications: int
    seed: int
    columns: list          # names of the varying column (delta or theta2 values)
    rows: list             # dicts: row keys, frequencies (list aligned with columns), valid, discarded
    preflight: list = field(default_factory=list)
    wall_time: float = 0.0  # not serialized: the report bytes depend only on the inputs

    def __post_init__(self):
        if self.replications <= 0:
            raise ValueError("replication count must be positive")
        for r in self.rows:
            if any(not 0.0 <= f <= 1.0 for f in r["frequencies"] if not math.isnan(f)):
                raise ValueError("frequency outside [0, 1]")

    def frequency(self, column=None, **keys) -> float:
        for r in self.rows:
            if all(math.isclose(r[k], v) for k, v in keys.items()):
                idx = 0 if column is None else _column_index(self.columns, column)
                return r["frequencies"][idx]
        raise KeyError(keys)

    def to_json(self) -> str:
        payload = {
            "design": self.design, "replications": self.replications, "seed": self.seed,
            "columns": self.columns, "rows": self.rows,
            "preflight": [vars(p) for p in self.preflight],
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    def csv_rows(self) -> list[list]:
        keys = [k for k in ("x_star", "tau", "n") if k in self.rows[0]]
        head = keys + [f"{self._colname()}={c:g}" for c in self.columns] + ["valid", "discarded"]
        out = [head]
        for r in self.rows:
            out.append([r[k] for k in keys] + [f"{f:.4f}" for f in r["frequencies"]]
                       + [r["valid"], r["discarded"]])
        return out

    def plot_rows(self) -> list[list]:
        """Long format (one line per curve point) for plotting figure-style designs."""
        keys = [k for k in ("x_star", "tau", "n") if k in self.rows[0]]
        out = [keys + [self._colname(), "frequency"]]
        for r in self.rows:
            for c, f in zip(self.columns, r["frequencies"]):
                out.append([r[k] for k in keys] + [c, f"{f:.4f}"])
        return out

    def _colname(self) -> str:
        return {"table2": "delta", "table6": "delta", "figure1": "theta2", "table5": "event"}[self.design]

    def write(self, out_dir) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / f"{self.design}.csv", out / f"{self.design}.json"]
        with paths[0].open("w", newline="") as fh:
            csv.writer(fh).writerows(self.csv_rows())
        paths[1].write_text(self.to_json() + "\n")
        if self.design == "figure1":
            paths.append(out / "figure1_plot.csv")
            with paths[2].open("w", newline="") as fh:
                csv.writer(fh).writerows(self.plot_rows())
        return paths


def _column_index(columns, value) -> int:
    for i, c in enumerate(columns):
        if math.isclose(c, value, abs_tol=1e-12):
            return i
    raise KeyError(value)


# ------------------------------------------------------------------ runner

def _row_table2(tau, n, deltas, reps, seed, row_id, draws):
    truth = population_quantile_set("continuous", tau)
    hits = np.zeros(len(deltas), dtype=int)
    valid = 0
    for r in range(reps):
        state = RngState(seed, (row_id, r))
        ds = generate(DgpSpec("continuous", n), state.child(0))
        try:
            est = quantile_set_continuous(ds, tau)
            sigma = _plugin_sigma(ds.lower, ds.upper, tau, est.lower, est.upper)
        except EstimationError:
            continue
        valid += 1
        crit = simulate_critical_value(sigma, "hausdorff", 0.05, draws, state.child(1))
        for j, d in enumerate(deltas):
            hits[j] += math.sqrt(n) * hausdorff(est, local_alternative(truth, d, n)) > crit
    return hits, valid


def _row_table5(tau, n, reps, seed, row_id):
    truth = population_quantile_set("discrete", tau)
    hits = 0
    for r in range(reps):
        ds = generate(DgpSpec("discrete", n), RngState(seed, (row_id, r)))
        hits += hausdorff(quantile_set_discrete(ds, tau), truth) > 0
    return np.array([hits]), reps


def _row_table6(x_star, tau, n, deltas, reps, seed, row_id, draws):
    truth = population_quantile_set("conditional", tau, x_star)
    hits = np.zeros(len(deltas), dtype=int)
    valid = 0
    for r in range(reps):
        state = RngState(seed, (row_id, r))
        ds = generate(DgpSpec("conditional", n), state.child(0))
        try:
            fit = local_quantile_set(ds, tau, x_star, bandwidth_rule(ds, tau, x_star))
        except EstimationError:
            continue
        valid += 1
        crit = simulate_critical_value(fit.sigma, "hausdorff", 0.05, draws, state.child(1))
        scale = math.sqrt(fit.local_n)
        for j, d in enumerate(deltas):
            # the alternative shifts by the full-sample rate, as in the reference design
            hits[j] += scale * hausdorff(fit.estimate, local_alternative(truth, d, n)) > crit
    return hits, valid


def _row_figure1(tau, n, theta2, reps, seed, row_id, bootstrap):
    cfg = MomentConfig(bootstrap_count=bootstrap)
    hits = np.zeros(len(theta2), dtype=int)
    valid = 0
    theta1 = 1.0 + tau
    for r in range(reps):
        state = RngState(seed, (row_id, r))
        ds = generate(DgpSpec("parametric", n), state.child(0))
        inst = InstrumentSet.build(ds, cfg.R)
        valid += 1
        for j, t2 in enumerate(theta2):
            th = (theta1, t2)
            stat = test_statistic(ds, th, tau, cfg, inst)
            crit = bootstrap_critical_value(ds, th, tau, cfg, state.child(1 + j), inst)
            hits[j] += stat > crit
    return hits, valid


def _run_row(task):
    design, keys, args = task
    fn = {"table2": _row_table2, "table5": _row_table5, "table6": _row_table6, "figure1": _row_figure1}[design]
    hits, valid = fn(*args)
    return keys, hits.tolist(), valid


def run_table(design: str, replications: Optional[int] = None, seed: int = 0, *, taus=None, ns=None,
              deltas=None, x_stars=None, theta2=None, draws: int = 25_000, bootstrap: int = 200,
              workers: int = 1) -> ExperimentReport:
    """Run one reference simulation design; each replication draws from stream (seed, row, replication)."""
    if design not in DESIGNS:
        raise ValueError(f"unknown design {design!r}")
    reps = DESK_REPLICATIONS[design] if replications is None else int(replications)
    if reps < 100:
        raise ValueError("replications must be >= 100")
    grid = dict(DEFAULT_GRIDS[design])
    for k, v in (("taus", taus), ("ns", ns), ("deltas", deltas), ("x_stars", x_stars), ("theta2", theta2)):
        if v is not None:
            grid[k] = tuple(float(x) if k != "ns" else int(x) for x in v)
    start = time.perf_counter()
    checks = preflight() if design in ("table2", "table5") else []
    tasks = []
    if design == "table2":
        columns = list(grid["deltas"])
        for tau in grid["taus"]:
            for n in grid["ns"]:
                tasks.append((design, {"tau": tau, "n": n}, (tau, n, columns, reps, seed, len(tasks), draws)))
    elif design == "table5":
        columns = [0.0]
        for tau in grid["taus"]:
            for n in grid["ns"]:
                tasks.append((design, {"tau": tau, "n": n}, (tau, n, reps, seed, len(tasks))))
    elif design == "table6":
        columns = list(grid["deltas"])
        for x in grid["x_stars"]:
            for tau in grid["taus"]:
                for n in grid["ns"]:
                    tasks.append((design, {"x_star": x, "tau": tau, "n": n},
                                  (x, tau, n, columns, reps, seed, len(tasks), draws)))
    else:
        columns = list(grid["theta2"])
        for tau in grid["taus"]:
            for n in grid["ns"]:
                tasks.append((design, {"tau": tau, "n": n}, (tau, n, columns, reps, seed, len(tasks), bootstrap)))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_row, tasks))
    else:
        results = [_run_row(t) for t in tasks]
    rows = []
    for keys, hits, valid in results:
        freqs = [h / valid if valid else math.nan for h in hits]
        rows.append({**keys, "frequencies": freqs, "valid": valid, "discarded": reps - valid})
    report = ExperimentReport(design, reps, seed, columns, rows, checks)
    report.wall_time = time.perf_counter() - start
    return report


def power_monotone(report: ExperimentReport, slack: Optional[float] = None) -> bool:
    """Within each row, frequencies never drop by more than the Monte Carlo slack 2/sqrt(reps)."""
    slack = 2 / math.sqrt(report.replications) if slack is None else slack
    for r in report.rows:
        f = r["frequencies"]
        if any(f[i + 1] < max(f[: i + 1]) - slack for i in range(len(f) - 1)):
            return False
    return True


def read_config(path) -> dict:
    """Flat key = value file with keys design, replications, seed, output."""
    allowed = {"design", "replications", "seed", "output"}
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        if k not in allowed:
            raise ValueError(f"{path}:{lineno}: unknown key {k!r}")
        out[k] = int(v) if k in ("replications", "seed") else v
    return out
