"""Command line interface: ``intervalq <subcommand> ...``.

Exit codes: 0 success, 2 invalid data or failed estimator precondition,
3 file I/O error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import conditional, experiments, functionals, moments, quantile_sets, setlp
from .core import EstimationError, IntervalDataError, IntervalDataset, RngState, load_csv

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 2, 3


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip()]


def _schema(args) -> dict:
    schema = {"lower": args.lower_col, "upper": args.upper_col}
    cols = [c for c in (getattr(args, "x_cols", None) or "").split(",") if c]
    if cols:
        schema["covariates"] = cols
    return schema


def _load(args, with_constant: bool = False):
    ds = load_csv(args.data, _schema(args))
    if with_constant and not getattr(args, "no_constant", False):
        X = np.column_stack([np.ones(ds.n), ds.covariates]) if ds.covariates is not None else np.ones((ds.n, 1))
        ds = IntervalDataset(ds.lower, ds.upper, X, has_constant_column=True)
    return ds


def _emit(obj, out):
    text = json.dumps(obj, indent=2)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


VARIANT_ALIASES = {"cont": "continuous", "continuous": "continuous", "disc": "discrete",
                   "discrete": "discrete", "jitter": "jittered", "jittered": "jittered"}


def _hypothesis(args):
    if args.hypothesis is not None:
        return tuple(_floats(args.hypothesis))
    if args.hypo_lower is not None or args.hypo_upper is not None:
        if args.hypo_lower is None or args.hypo_upper is None:
            raise ValueError("give both --hypo-lower and --hypo-upper")
        return (args.hypo_lower, args.hypo_upper)
    return None


def cmd_qset(args) -> int:
    ds = _load(args)
    args.variant = VARIANT_ALIASES[args.variant]
    hyp = _hypothesis(args)
    if args.variant == "jittered":
        fit = quantile_sets.jittered_fit(ds, args.tau, RngState(args.seed).child(0))
        est, sigma = fit.estimate, fit.sigma
    else:
        est = (quantile_sets.quantile_set_continuous if args.variant == "continuous"
               else quantile_sets.quantile_set_discrete)(ds, args.tau)
        sigma = None
        if args.variant == "continuous":
            sigma = quantile_sets.sigma_continuous(ds, args.tau)
    out = {"tau": args.tau, "variant": est.variant, "lower": est.lower, "upper": est.upper, "n": ds.n}
    if sigma is not None:
        out["sigma"] = sigma.tolist()
    if hyp is not None:
        if args.variant == "continuous":
            res = quantile_sets.test_quantile_set(ds, args.tau, hyp, args.alpha, args.metric, args.draws,
                                                  RngState(args.seed).child(1))
        elif args.variant == "jittered":
            res = quantile_sets.test_quantile_set_jittered(ds, args.tau, hyp, args.alpha, args.metric,
                                                           args.draws, RngState(args.seed).child(0))
        else:
            raise EstimationError("the discrete estimator has no test; use --variant jittered")
        out.update(hypothesis=list(hyp), statistic=res.statistic, critical_value=res.critical_value,
                   reject=res.reject, metric=res.metric)
    _emit(out, args.out)
    return EXIT_OK


def cmd_cqset(args) -> int:
    ds = _load(args)
    results = []
    base = RngState(args.seed)
    p = ds.p
    xs = _floats(args.xstar)
    if len(xs) % p:
        raise ValueError(f"--xstar must list a multiple of {p} coordinates")
    for i in range(0, len(xs), p):
        x_star = xs[i:i + p]
        h = conditional.bandwidth_rule(ds, args.tau, x_star, args.gamma)
        fit = conditional.local_quantile_set(ds, args.tau, x_star, h)
        row = {"x_star": x_star, "tau": args.tau, "bandwidths": h.tolist(), "local_n": fit.local_n,
               "lower": fit.estimate.lower, "upper": fit.estimate.upper, "sigma": fit.sigma.tolist()}
        if _hypothesis(args) is not None:
            res = conditional.test_conditional_quantile_set(
                ds, args.tau, x_star, _hypothesis(args), args.alpha, args.draws,
                base.child(i // p), gamma=args.gamma, bandwidths=h)
            row.update(statistic=res.statistic, critical_value=res.critical_value, reject=res.reject)
        results.append(row)
    _emit(results, args.out)
    return EXIT_OK


def cmd_mitest(args) -> int:
    ds = _load(args, with_constant=True)
    with open(args.grid_file, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if rows and not _is_number(rows[0][0]):
        rows = rows[1:]
    grid = [tuple(float(v) for v in r) for r in rows]
    cfg = moments.MomentConfig(R=args.R, bootstrap_count=args.bootstrap, alpha=args.alpha)
    scan = moments.confidence_set_scan(ds, args.tau, grid, cfg, RngState(args.seed))
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh)
        w.writerow([f"theta{k + 1}" for k in range(len(grid[0]))] + ["statistic", "critical", "accepted", "error"])
        for pt in scan:
            w.writerow(list(pt.theta) + [pt.statistic, pt.critical_value,
                                         "" if pt.accepted is None else int(pt.accepted), pt.error or ""])
    finally:
        if args.out:
            fh.close()
    return EXIT_OK


def _is_number(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def cmd_setblp(args) -> int:
    ds = _load(args, with_constant=True)
    ds.require_finite("setblp")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.lattice:
        betas = setlp.brute_force_lattice(ds.covariates, ds.lower, ds.upper, args.tau, args.lattice)
        with (out_dir / "lattice_betas.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"beta{k + 1}" for k in range(ds.p)])
            w.writerows(b.tolist() for b in betas)
        return EXIT_OK
    lp = setlp.to_canonical(ds.covariates, args.tau)
    est = setlp.enumerate_cells(lp, ds.lower, ds.upper, args.probe_budget, RngState(args.seed),
                                cell_cap=args.cell_cap, vertices=ds.p <= 3 and ds.n <= 60)
    cells = []
    for k, c in enumerate(est.cells):
        cells.append({"id": k, "basis": list(c.basis), "exact_rows": list(c.h),
                      "signs": c.signs.tolist(), "beta_map": c.beta_affine().tolist(),
                      "region": c.region_matrix().tolist() if ds.n <= 200 else None,
                      "witness": None if c.witness is None else c.witness.tolist()})
    payload = {"tau": args.tau, "status": est.status, "coverage": est.coverage_report,
               "probes": est.probes_used, "beta_ranges": est.beta_ranges().tolist(), "cells": cells}
    (out_dir / "cells.json").write_text(json.dumps(payload) + "\n")
    with (out_dir / "beta_samples.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"beta{k + 1}" for k in range(ds.p)] + ["cell"])
        for b, c in zip(est.beta_samples, est.sample_cells):
            w.writerow(b.tolist() + [int(c)])
    return EXIT_OK


def cmd_functionals(args) -> int:
    ds = _load(args)
    if ":" in args.grid:
        lo, hi, num = args.grid.split(":")
        grid = np.linspace(float(lo), float(hi), int(num))
    else:
        grid = np.array(_floats(args.grid))
    curve = functionals.functional_curve(ds, grid)
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh)
        w.writerow(["t", "containment", "capacity"])
        w.writerows(curve.rows())
    finally:
        if args.out:
            fh.close()
    return EXIT_OK


def cmd_mc(args) -> int:
    conf = experiments.read_config(args.config) if args.config else {}
    design = args.design or conf.get("design")
    if design is None:
        raise ValueError("--design (or a config file) is required")
    reps = args.reps or conf.get("replications")
    if reps is None and args.full:
        reps = experiments.FULL_REPLICATIONS[design]
    seed = args.seed if args.seed is not None else conf.get("seed", 0)
    out = args.out or conf.get("output") or "."
    report = experiments.run_table(design, reps, seed, workers=args.workers)
    paths = report.write(out)
    logging.getLogger(__name__).info("wrote %s in %.1fs", [str(p) for p in paths], report.wall_time)
    print(f"{design}: {len(report.rows)} rows, {report.replications} replications, "
          f"{report.wall_time:.1f}s -> {out}", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="intervalq", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def data_args(p, covariates=False):
        p.add_argument("--data", required=True, help="CSV file with a header row")
        p.add_argument("--lower-col", default="lower")
        p.add_argument("--upper-col", default="upper")
        if covariates:
            p.add_argument("--x-cols", required=True, help="comma separated covariate columns")
        p.add_argument("--out", help="output file (stdout when omitted)")

    p = sub.add_parser("qset", help="quantile set estimate and test")
    data_args(p)
    p.add_argument("--tau", type=float, required=True)
    p.add_argument("--variant", choices=sorted(VARIANT_ALIASES), default="cont")
    p.add_argument("--hypothesis", help="lo,hi of the hypothesized set")
    p.add_argument("--hypo-lower", type=float)
    p.add_argument("--hypo-upper", type=float)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--metric", default="h", help="h | dh | dh2 (or the long names)")
    p.add_argument("--draws", type=int, default=25_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_qset)

    p = sub.add_parser("cqset", help="conditional quantile set at covariate points")
    data_args(p, covariates=True)
    p.add_argument("--tau", type=float, required=True)
    p.add_argument("--xstar", required=True, help="comma list; p coordinates per point")
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--hypothesis", help="lo,hi of the hypothesized set")
    p.add_argument("--hypo-lower", type=float)
    p.add_argument("--hypo-upper", type=float)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--draws", type=int, default=25_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_cqset)

    p = sub.add_parser("mitest", help="moment inequality test over a coefficient grid")
    data_args(p, covariates=True)
    p.add_argument("--no-constant", action="store_true", help="do not prepend an intercept column")
    p.add_argument("--tau", type=float, required=True)
    p.add_argument("--grid-file", required=True, help="CSV of coefficient rows")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--R", type=int, default=2)
    p.add_argument("--bootstrap", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_mitest)

    p = sub.add_parser("setblp", help="set of best linear predictors by basis-region enumeration")
    p.add_argument("--data", required=True)
    p.add_argument("--lower-col", default="lower")
    p.add_argument("--upper-col", default="upper")
    p.add_argument("--x-cols", required=True)
    p.add_argument("--no-constant", action="store_true")
    p.add_argument("--tau", type=float, required=True)
    p.add_argument("--probe-budget", type=int, default=200)
    p.add_argument("--cell-cap", type=int, default=5000)
    p.add_argument("--lattice", type=int, default=0, help="brute-force lattice points per interval instead")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_setblp)

    p = sub.add_parser("functionals", help="empirical containment and capacity curves")
    data_args(p)
    p.add_argument("--grid", required=True, help="comma list or start:stop:num")
    p.set_defaults(func=cmd_functionals)

    p = sub.add_parser("mc", help="run a simulation design")
    p.add_argument("--design", choices=experiments.DESIGNS)
    p.add_argument("--reps", type=int)
    p.add_argument("--full", action="store_true", help="full-scale replication counts")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--config", help="key = value file (design, replications, seed, output)")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_mc)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (IntervalDataError, EstimationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
