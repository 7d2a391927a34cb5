"""Empirical cumulative containment and capacity functionals.

For a sample of intervals Y_i = [a_i, b_i]

    containment(t) = n^-1 #{i : Y_i within (-inf, t]}   = n^-1 #{b_i <= t}
    capacity(t)    = n^-1 #{i : Y_i hits (-inf, t]}     = n^-1 #{a_i <= t}

Both are right-continuous step functions, so sup-norm distances to a
monotone reference can be evaluated exactly on the breakpoints.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import IntervalDataset


@dataclass(frozen=True)
class FunctionalCurve:
    points: np.ndarray
    containment: np.ndarray
    capacity: np.ndarray

    def __post_init__(self):
        if np.any(np.diff(self.points) < 0):
            raise ValueError("evaluation points must be sorted")

    def rows(self):
        return zip(self.points.tolist(), self.containment.tolist(), self.capacity.tolist())


def _ecdf(sorted_vals: np.ndarray, t) -> np.ndarray:
    out = np.searchsorted(sorted_vals, t, side="right") / sorted_vals.size
    # t = -inf / +inf evaluate to 0 / 1 by convention, even with infinite endpoints
    return np.where(t == -np.inf, 0.0, np.where(t == np.inf, 1.0, out))


def containment_ecdf(ds: IntervalDataset, t):
    """Fraction of intervals whose upper endpoint is <= t (scalar or array t)."""
    out = _ecdf(np.sort(ds.upper), np.asarray(t, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


def capacity_ecdf(ds: IntervalDataset, t):
    """Fraction of intervals whose lower endpoint is <= t (scalar or array t)."""
    out = _ecdf(np.sort(ds.lower), np.asarray(t, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


def functional_curve(ds: IntervalDataset, grid) -> FunctionalCurve:
    grid = np.sort(np.asarray(grid, dtype=float))
    return FunctionalCurve(grid, containment_ecdf(ds, grid) * np.ones_like(grid),
                           capacity_ecdf(ds, grid) * np.ones_like(grid))


def sup_deviation(ds: IntervalDataset, reference: Callable, which: str = "capacity") -> float:
    """sup_t |empirical(t) - reference(t)| for a nondecreasing right-continuous reference.

    Between consecutive breakpoints the empirical function is constant and the
    reference monotone, so the supremum is attained at a breakpoint or as a
    left limit there. Left limits of the reference are approximated by
    evaluating it one ulp below the breakpoint; the tails contribute
    reference(-inf) and 1 - reference(+inf).
    """
    if which == "capacity":
        vals = ds.lower
    elif which == "containment":
        vals = ds.upper
    else:
        raise ValueError("which must be 'capacity' or 'containment'")
    s = np.sort(vals)
    pts = np.unique(s[np.isfinite(s)])
    n = s.size
    emp_at = np.searchsorted(s, pts, side="right") / n
    emp_left = np.searchsorted(s, pts, side="left") / n
    ref = np.vectorize(reference, otypes=[float])
    dev = 0.0
    if pts.size:
        dev = max(np.max(np.abs(emp_at - ref(pts))),
                  np.max(np.abs(emp_left - ref(np.nextafter(pts, -np.inf)))))
    lo_mass = np.count_nonzero(s == -np.inf) / n
    hi_mass = np.count_nonzero(s <= np.finfo(float).max) / n
    dev = max(dev, abs(lo_mass - float(ref(-np.inf))), abs(hi_mass - float(ref(np.inf))))
    return float(dev)
