"""Conditional moment inequality inference for linear quantile models with interval outcomes.

For y in [y_l, y_u] and q(x, theta) = x'theta the identified set is
characterized by E[m_j | x] >= 0 with

    m1 = 1[y_l <= x'theta] - tau,    m2 = tau - 1[y_u <= x'theta].

Conditional inequalities are turned into unconditional ones with box
instruments on the min-max normalized non-constant covariates; the statistic
is a weighted sum of squared negative parts of studentized instrumented
moments. Critical values come from a recentred nonparametric bootstrap with
generalized moment selection (GMS) slack.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .core import EstimationError, IntervalDataset, RngState, as_generator

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MomentConfig:
    """Tuning constants; kappa_n and B_n default to the sample-size rules when None."""

    R: int = 2
    epsilon_n: float = 0.05
    kappa_n: Optional[float] = None
    B_n: Optional[float] = None
    bootstrap_count: int = 1000
    alpha: float = 0.05
    eta: float = 1e-6

    def __post_init__(self):
        if self.R < 1:
            raise ValueError("R must be >= 1")
        if self.epsilon_n < 0:
            raise ValueError("epsilon_n must be nonnegative")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")

    def resolved(self, n: int) -> "MomentConfig":
        if n < 3:
            raise EstimationError("need n >= 3 for the GMS tuning rules")
        kappa = math.sqrt(0.3 * math.log(n)) if self.kappa_n is None else self.kappa_n
        bn = math.sqrt(0.4 * math.log(n) / math.log(math.log(n))) if self.B_n is None else self.B_n
        return replace(self, kappa_n=kappa, B_n=bn)


def moments(x, y_lower, y_upper, theta, tau: float) -> tuple[np.ndarray, np.ndarray]:
    """(m1, m2) per observation; ties y == x'theta count as y <= x'theta."""
    with np.errstate(over="ignore", invalid="ignore"):
        q = np.asarray(x, dtype=float) @ np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(q)):
        raise EstimationError("linear index x'theta is not finite")
    m1 = (np.asarray(y_lower) <= q) - tau
    m2 = tau - (np.asarray(y_upper) <= q)
    return m1.astype(float), m2.astype(float)


def box_instruments(x_normalized, r: int) -> np.ndarray:
    """Indicators of x in prod_k ((a_k - 1)/2r, a_k/2r] over a in {1..2r}^p.

    Accepts one point (length-p vector, returns length (2r)^p) or an n x p
    matrix (returns n x (2r)^p). Cells are ordered lexicographically in a,
    and the first cell of each coordinate is closed at 0.
    """
    x = np.asarray(x_normalized, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if np.any(X < 0) or np.any(X > 1):
        raise ValueError("instrument arguments must be normalized to [0, 1]")
    m = 2 * r
    p = X.shape[1]
    cell = np.clip(np.ceil(X * m).astype(int), 1, m) - 1  # 0-based cell per coordinate
    flat = np.zeros(X.shape[0], dtype=int)
    for k in range(p):
        flat = flat * m + cell[:, k]
    G = np.zeros((X.shape[0], m ** p))
    G[np.arange(X.shape[0]), flat] = 1.0
    return G[0] if single else G


@dataclass(frozen=True)
class InstrumentSet:
    """All box instruments up to depth R with their weights, evaluated on a sample."""

    G: np.ndarray        # n x M indicator matrix
    weights: np.ndarray  # length M
    x_min: np.ndarray
    x_range: np.ndarray

    @classmethod
    def build(cls, ds: IntervalDataset, R: int) -> "InstrumentSet":
        Z = _instrument_covariates(ds)
        lo = Z.min(axis=0)
        rng = Z.max(axis=0) - lo
        rng = np.where(rng > 0, rng, 1.0)
        Zn = np.clip((Z - lo) / rng, 0.0, 1.0)
        p = Zn.shape[1]
        blocks, w = [], []
        for r in range(1, R + 1):
            if p == 0:
                g = np.ones((ds.n, 1))
            else:
                g = box_instruments(Zn, r)
            blocks.append(g)
            w.append(np.full(g.shape[1], 1.0 / (r * r + 100) / (2 * r) ** p))
        return cls(np.hstack(blocks), np.concatenate(w), lo, rng)


def _instrument_covariates(ds: IntervalDataset) -> np.ndarray:
    if ds.covariates is None:
        raise EstimationError("moment inference needs covariates")
    X = ds.covariates
    const = np.all(X == X[0], axis=0)
    return X[:, ~const]


def _regressors(ds: IntervalDataset) -> np.ndarray:
    if ds.covariates is None:
        raise EstimationError("moment inference needs covariates")
    return ds.covariates


def _neg_sq(t: np.ndarray) -> np.ndarray:
    return np.minimum(t, 0.0) ** 2


def _studentized(mbar, var_g, var_1, eps, n):
    """sqrt(n) mbar / sigma_bar with the constant-moment conventions.

    A moment with zero regularized variance is constant; its sample mean is
    then exact, so a negative value is an infinitely strong violation and a
    nonnegative one contributes nothing.
    """
    s2 = var_g + eps * var_1
    out = np.zeros_like(mbar)
    pos = s2 > 0
    out[pos] = math.sqrt(n) * mbar[pos] / np.sqrt(s2[pos])
    out[~pos & (mbar < 0)] = -np.inf
    return out


def _moment_stats(m: np.ndarray, G: np.ndarray):
    n = m.size
    mg = m[:, None] * G
    mbar = mg.mean(axis=0)
    var_g = (m * m) @ G / n - mbar ** 2
    var_1 = float(np.var(m))
    return mbar, np.clip(var_g, 0.0, None), var_1


def test_statistic(ds: IntervalDataset, theta, tau: float, cfg: MomentConfig = MomentConfig(),
                   instruments: Optional[InstrumentSet] = None) -> float:
    """Weighted sum over instruments of squared negative studentized moments."""
    if ds.n < 2:
        raise EstimationError("need n >= 2")
    ds.require_finite("test_statistic")
    inst = InstrumentSet.build(ds, cfg.R) if instruments is None else instruments
    m1, m2 = moments(_regressors(ds), ds.lower, ds.upper, theta, tau)
    total = 0.0
    for m in (m1, m2):
        mbar, vg, v1 = _moment_stats(m, inst.G)
        t = _studentized(mbar, vg, v1, cfg.epsilon_n, ds.n)
        total += float(inst.weights @ _neg_sq(t))
    return total


test_statistic.__test__ = False


def bootstrap_critical_value(ds: IntervalDataset, theta, tau: float, cfg: MomentConfig = MomentConfig(),
                             rng=0, instruments: Optional[InstrumentSet] = None) -> float:
    """(1 - alpha) quantile of the recentred GMS bootstrap statistic, plus eta."""
    if cfg.bootstrap_count < 100:
        raise ValueError("bootstrap_count must be >= 100")
    n = ds.n
    cfg = cfg.resolved(n)
    inst = InstrumentSet.build(ds, cfg.R) if instruments is None else instruments
    gen = as_generator(rng)
    m1, m2 = moments(_regressors(ds), ds.lower, ds.upper, theta, tau)
    B = cfg.bootstrap_count
    # resample counts: W[b, i] = times row i drawn in resample b
    # counting B*n uniform row draws gives the multinomial counts, much faster than multinomial()
    idx = gen.integers(0, n, size=(B, n)) + (np.arange(B) * n)[:, None]
    W = np.bincount(idx.ravel(), minlength=B * n).reshape(B, n) / n
    stats = np.zeros(B)
    root_n = math.sqrt(n)
    for m in (m1, m2):
        mbar, vg, v1 = _moment_stats(m, inst.G)
        if v1 == 0:
            # constant moment: every resample reproduces it exactly
            continue
        s1 = math.sqrt(v1)
        t = _studentized(mbar, vg, v1, cfg.epsilon_n, n)
        phi = np.where(t / cfg.kappa_n > 1, cfg.B_n, 0.0)
        mg = m[:, None] * inst.G
        mbar_b = W @ mg
        var_b = np.clip(W @ (m[:, None] ** 2 * inst.G) - mbar_b ** 2, 0.0, None)
        v1_b = np.clip(W @ (m * m) - (W @ m) ** 2, 0.0, None)
        sbar_b = np.sqrt(var_b + cfg.epsilon_n * v1_b[:, None]) / s1
        num = root_n * (mbar_b - mbar) / s1 + phi
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(sbar_b > 0, num / sbar_b, np.where(num < 0, -np.inf, 0.0))
        stats += _neg_sq(z) @ inst.weights
    if not np.all(np.isfinite(stats)) and cfg.epsilon_n == 0:
        raise EstimationError("bootstrap variance degenerate and no regularizer")
    return float(np.quantile(stats, 1 - cfg.alpha)) + cfg.eta


@dataclass(frozen=True)
class ScanPoint:
    theta: tuple
    statistic: float
    critical_value: float
    accepted: Optional[bool]
    error: Optional[str] = None


def confidence_set_scan(ds: IntervalDataset, tau: float, grid: Sequence, cfg: MomentConfig = MomentConfig(),
                        rng=0) -> list[ScanPoint]:
    """Test every grid point; point i bootstraps with stream (seed, i).

    A point whose test fails with an estimation error is reported with
    accepted=None and the error message instead of aborting the scan.
    """
    if len(grid) == 0:
        raise ValueError("grid is empty")
    base = rng if isinstance(rng, RngState) else RngState(int(rng))
    inst = InstrumentSet.build(ds, cfg.R)
    out = []
    for i, theta in enumerate(grid):
        theta = tuple(float(v) for v in theta)
        try:
            stat = test_statistic(ds, theta, tau, cfg, inst)
            crit = bootstrap_critical_value(ds, theta, tau, cfg, base.child(i), inst)
            out.append(ScanPoint(theta, stat, crit, bool(stat <= crit)))
        except EstimationError as exc:
            out.append(ScanPoint(theta, math.nan, math.nan, None, str(exc)))
    return out


def contiguity_violations(flags: Sequence[Optional[bool]]) -> int:
    """Number of gaps splitting the accepted points of one grid line into separate runs."""
    runs, prev = 0, False
    for f in flags:
        cur = bool(f)
        if cur and not prev:
            runs += 1
        prev = cur
    gaps = max(runs - 1, 0)
    if gaps:
        log.warning("accepted set along scanned line has %d gap(s)", gaps)
    return gaps


def axis_grid(center: Sequence[float], half_width: Sequence[float], step: float) -> list[tuple]:
    """Rectangular grid around center, row-major in the coordinates."""
    axes = [np.round(np.arange(c - h, c + h + step / 2, step), 12) for c, h in zip(center, half_width)]
    return [tuple(p) for p in itertools.product(*axes)]
