"""Local (kernel-window) quantile sets at a covariate point x*.

With the indicator kernel K(u) = 1/2 * 1[|u| < 1] in product form, minimizing
the kernel-weighted check loss over a reduces to taking an order statistic of
the lower endpoints inside the bandwidth box around x*; the same holds for the
upper endpoints.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import EstimationError, IntervalDataset, QuantileSetEstimate
from .quantile_sets import (Cov2, TestOutcome, _check_tau, _plugin_sigma, _rank_ceil,
                            order_stat, silverman_bandwidth, test_from_estimate)

DENSITY_FLOOR = 1e-12


@dataclass(frozen=True)
class LocalFit:
    x_star: np.ndarray
    tau: float
    bandwidths: np.ndarray
    local_n: int
    estimate: QuantileSetEstimate
    sigma: Cov2


def _covariates(ds: IntervalDataset, x_star) -> tuple[np.ndarray, np.ndarray]:
    if ds.covariates is None:
        raise EstimationError("conditional estimation needs covariates")
    X = ds.covariates
    if ds.has_constant_column:
        X = X[:, 1:]
    x_star = np.atleast_1d(np.asarray(x_star, dtype=float))
    if x_star.size != X.shape[1]:
        raise ValueError(f"x_star has {x_star.size} coordinates, covariates have {X.shape[1]}")
    return X, x_star


def covariate_density(X: np.ndarray, x_star: np.ndarray) -> float:
    """Gaussian product-kernel density estimate of f_x at x_star, Silverman bandwidth per coordinate."""
    h = np.array([silverman_bandwidth(X[:, k]) for k in range(X.shape[1])])
    if np.any(h <= 0):
        return 0.0
    z = (X - x_star) / h
    kern = np.exp(-0.5 * np.sum(z * z, axis=1)) / np.prod(h * math.sqrt(2 * math.pi))
    return float(kern.mean())


def bandwidth_rule(ds: IntervalDataset, tau: float, x_star, gamma: float = 1.0) -> np.ndarray:
    """h_k = kappa * n^(-1/(2 gamma + p)) with kappa = 1 / f_x(x*) for every coordinate."""
    _check_tau(tau)
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    X, x_star = _covariates(ds, x_star)
    f = covariate_density(X, x_star)
    if f < DENSITY_FLOOR:
        raise EstimationError("x* outside effective support")
    p = X.shape[1]
    return np.full(p, (1.0 / f) * ds.n ** (-1.0 / (2 * gamma + p)))


def window_mask(ds: IntervalDataset, x_star, bandwidths) -> np.ndarray:
    X, x_star = _covariates(ds, x_star)
    h = np.broadcast_to(np.asarray(bandwidths, dtype=float), x_star.shape)
    if np.any(h <= 0):
        raise ValueError("bandwidths must be positive")
    return np.all(np.abs(X - x_star) < h, axis=1)


def weighted_check_loss(values: np.ndarray, weights: np.ndarray, theta: float, tau: float) -> float:
    u = values - theta
    return float(np.sum(weights * u * (tau - (u < 0))))


def local_quantile_set(ds: IntervalDataset, tau: float, x_star, bandwidths) -> LocalFit:
    """Windowed order statistics at rank ceil(N tau) plus the local plug-in covariance."""
    _check_tau(tau)
    ds.require_finite("local_quantile_set")
    mask = window_mask(ds, x_star, bandwidths)
    N = int(mask.sum())
    need = max(5, math.ceil(1.0 / min(tau, 1.0 - tau)))
    if N < need:
        raise EstimationError(f"window too sparse: {N} observations, need {need}")
    a, b = ds.lower[mask], ds.upper[mask]
    k = max(1, _rank_ceil(N, tau))
    est = QuantileSetEstimate(tau, order_stat(a, k), order_stat(b, k), "continuous-floor")
    sigma = _plugin_sigma(a, b, tau, est.lower, est.upper)
    x_star = np.atleast_1d(np.asarray(x_star, dtype=float))
    h = np.broadcast_to(np.asarray(bandwidths, dtype=float), x_star.shape).copy()
    return LocalFit(x_star, tau, h, N, est, sigma)


def test_conditional_quantile_set(ds: IntervalDataset, tau: float, x_star, hypothesized,
                                  alpha: float = 0.05, draws: int = 25_000, rng=0,
                                  metric: str = "hausdorff", gamma: float = 1.0,
                                  bandwidths: Optional[np.ndarray] = None) -> TestOutcome:
    """Local test scaled by sqrt(N) (N for the squared directed metric)."""
    if bandwidths is None:
        bandwidths = bandwidth_rule(ds, tau, x_star, gamma)
    fit = local_quantile_set(ds, tau, x_star, bandwidths)
    return test_from_estimate(fit.estimate, fit.sigma, fit.local_n, hypothesized, alpha, metric, draws, rng)


test_conditional_quantile_set.__test__ = False
