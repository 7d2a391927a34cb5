"""Quantile sets of interval-valued outcomes: estimators, asymptotic covariances and tests.

The sharp identification set of the tau-quantile of Y = [a, b] is
[q_a(tau), q_b(tau)]. It is estimated by order statistics of the lower and
upper endpoints; inference uses the joint normal limit of the two order
statistics together with Hausdorff-type distances.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np

from .core import EstimationError, IntervalDataset, QuantileSetEstimate, as_generator

METRICS = ("hausdorff", "directed-hausdorff", "squared-directed")
METRIC_ALIASES = {"h": "hausdorff", "dh": "directed-hausdorff", "dh2": "squared-directed"}
DENSITY_FLOOR = 1e-12
PSD_TOL = 1e-8


# ------------------------------------------------------------------ helpers

def _rank_floor(n: int, tau: float) -> int:
    # guard against n*tau = 28.999999999999996 style rounding
    return math.floor(round(n * tau, 9))


def _rank_ceil(n: int, tau: float) -> int:
    return math.ceil(round(n * tau, 9))


def _check_tau(tau: float):
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie in (0, 1), got {tau}")


def order_stat(values: np.ndarray, k: int) -> float:
    """k-th smallest value, 1-based."""
    if not 1 <= k <= values.size:
        raise EstimationError(f"order statistic rank {k} outside 1..{values.size}")
    return float(np.partition(values, k - 1)[k - 1])


def silverman_bandwidth(x: np.ndarray) -> float:
    """0.9 * min(sd, IQR/1.34) * n^(-1/5); falls back to whichever scale is positive."""
    x = np.asarray(x, dtype=float)
    sd = float(np.std(x, ddof=1)) if x.size > 1 else 0.0
    q75, q25 = np.percentile(x, [75, 25])
    iqr = (q75 - q25) / 1.34
    scale = min(sd, iqr) if iqr > 0 else sd
    return 0.9 * scale * x.size ** (-0.2)


def gaussian_kde_at(x: np.ndarray, point: float, bandwidth: Optional[float] = None) -> float:
    x = np.asarray(x, dtype=float)
    h = silverman_bandwidth(x) if bandwidth is None else float(bandwidth)
    # a bandwidth at rounding level means tied data: no usable density
    if not h > 1e-12 * max(1.0, float(np.max(np.abs(x)))):
        return 0.0
    with np.errstate(over="ignore"):
        z = (point - x) / h
        return float(np.exp(-0.5 * z * z).sum() / (x.size * h * math.sqrt(2 * math.pi)))


def repair_psd(m, tol: float = PSD_TOL) -> np.ndarray:
    """Symmetrize and clip small negative eigenvalues; error on real indefiniteness."""
    m = np.asarray(m, dtype=float)
    m = 0.5 * (m + m.T)
    if not np.isfinite(m).all():
        raise EstimationError("covariance matrix has non-finite entries")
    w, v = np.linalg.eigh(m)
    scale = max(1.0, float(np.max(np.abs(np.diag(m)))))
    if w.min() < -tol * scale:
        raise EstimationError(f"covariance matrix not PSD (min eigenvalue {w.min():.3g})")
    if w.min() >= 0:
        return m
    w = np.clip(w, 0.0, None)
    return 0.5 * ((v * w) @ v.T + ((v * w) @ v.T).T)


@dataclass(frozen=True)
class Cov2:
    """2 x 2 covariance of (z_L, z_U), symmetric and PSD after repair."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.shape != (2, 2):
            raise ValueError("Cov2 needs a 2x2 matrix")
        m = repair_psd(m)
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)

    @property
    def correlation(self) -> float:
        d = math.sqrt(self.matrix[0, 0] * self.matrix[1, 1])
        return float(self.matrix[0, 1] / d) if d > 0 else 0.0

    def tolist(self):
        return self.matrix.tolist()


@dataclass(frozen=True)
class TestOutcome:
    statistic: float
    critical_value: float
    alpha: float
    reject: bool
    metric: str
    scale: float

    __test__ = False  # not a pytest class

    def __post_init__(self):
        if self.reject != (self.statistic > self.critical_value):
            raise ValueError("reject flag inconsistent with statistic and critical value")


def _bounds(x) -> tuple[float, float]:
    if isinstance(x, QuantileSetEstimate):
        lo, hi = x.lower, x.upper
    else:
        lo, hi = (float(v) for v in x)
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise ValueError("Hausdorff distance needs finite interval endpoints")
    if lo > hi:
        raise ValueError(f"empty interval [{lo}, {hi}]")
    return lo, hi


def hausdorff(A, B) -> float:
    """Hausdorff distance between two compact intervals: the larger endpoint gap."""
    a1, b1 = _bounds(A)
    a2, b2 = _bounds(B)
    return max(abs(a1 - a2), abs(b1 - b2))


def directed_hausdorff(A, B) -> float:
    """sup over x in A of dist(x, B); zero iff A is inside B."""
    a1, b1 = _bounds(A)
    a2, b2 = _bounds(B)
    return max(a2 - a1, b1 - b2, 0.0)


def normalize_metric(metric: str) -> str:
    metric = METRIC_ALIASES.get(metric, metric)
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}")
    return metric


def metric_distance(metric: str, A, B) -> float:
    metric = normalize_metric(metric)
    if metric == "hausdorff":
        return hausdorff(A, B)
    d = directed_hausdorff(A, B)
    return d * d if metric == "squared-directed" else d


def limit_functional(metric: str, z_lower: np.ndarray, z_upper: np.ndarray) -> np.ndarray:
    """Limit law of the scaled distance from the estimate to the true set.

    z_lower, z_upper are draws of the scaled estimation errors of the lower
    and upper bound. The directed distance from estimate to truth is positive
    when the lower bound is under-estimated or the upper bound over-estimated.
    """
    metric = normalize_metric(metric)
    if metric == "hausdorff":
        return np.maximum(np.abs(z_lower), np.abs(z_upper))
    d = np.maximum(np.maximum(-z_lower, 0.0), np.maximum(z_upper, 0.0))
    return d * d if metric == "squared-directed" else d


# --------------------------------------------------------------- estimators

def quantile_set_continuous(ds: IntervalDataset, tau: float) -> QuantileSetEstimate:
    """[a_(k), b_(k)] with k = floor(n tau)."""
    _check_tau(tau)
    ds.require_finite("quantile_set_continuous")
    k = _rank_floor(ds.n, tau)
    if k < 1:
        raise EstimationError(f"rank underflow: floor(n*tau) = {k} for n={ds.n}, tau={tau}")
    return QuantileSetEstimate(tau, order_stat(ds.lower, k), order_stat(ds.upper, k), "continuous-floor")


def quantile_set_discrete(ds: IntervalDataset, tau: float) -> QuantileSetEstimate:
    """[a_(k), b_(k)] with k = ceil(n tau); super-consistent for discrete endpoints."""
    _check_tau(tau)
    ds.require_finite("quantile_set_discrete")
    k = _rank_ceil(ds.n, tau)
    return QuantileSetEstimate(tau, order_stat(ds.lower, k), order_stat(ds.upper, k), "discrete-ceil")


def sigma_continuous(ds: IntervalDataset, tau: float, bw=None) -> Cov2:
    """Plug-in asymptotic covariance of sqrt(n)(a_(k) - q_a, b_(k) - q_b).

    Densities at the estimated quantiles come from Gaussian KDEs (Silverman
    bandwidth unless ``bw = (h_a, h_b)`` is given); the joint CDF term is the
    joint empirical CDF at the estimated quantile pair.
    """
    est = quantile_set_continuous(ds, tau)
    return _plugin_sigma(ds.lower, ds.upper, tau, est.lower, est.upper, bw)


def _plugin_sigma(a, b, tau, qa, qb, bw=None) -> Cov2:
    ha, hb = (None, None) if bw is None else bw
    fa = gaussian_kde_at(a, qa, ha)
    fb = gaussian_kde_at(b, qb, hb)
    if fa < DENSITY_FLOOR or fb < DENSITY_FLOOR:
        raise EstimationError("density degenerate - variance undefined")
    fab = float(np.mean((a <= qa) & (b <= qb)))
    # both marginals equal tau at the true quantiles; keep the joint term inside
    # the Frechet bounds so ties and rounding of the rank cannot break PSD
    fab = min(max(fab, 2 * tau - 1, 0.0), tau)
    v = tau * (1 - tau)
    off = (fab - tau * tau) / (fa * fb)
    return Cov2(np.array([[v / fa**2, off], [off, v / fb**2]]))


def simulate_critical_value(sigma, metric: str, alpha: float, draws: int = 25_000, rng=0) -> float:
    """(1 - alpha) quantile of the metric's limit functional under N(0, sigma)."""
    if draws < 1000:
        raise ValueError("draws must be >= 1000")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    m = sigma.matrix if isinstance(sigma, Cov2) else repair_psd(sigma)
    w, v = np.linalg.eigh(m)
    root = v * np.sqrt(np.clip(w, 0.0, None))
    z = as_generator(rng).standard_normal((draws, 2)) @ root.T
    return float(np.quantile(limit_functional(metric, z[:, 0], z[:, 1]), 1 - alpha))


def test_from_estimate(est, sigma, n_eff: float, hypothesized, alpha: float, metric: str,
                       draws: int, rng) -> TestOutcome:
    """Wald/QLR-type test of H0: identified set == hypothesized, given an estimate and its covariance."""
    metric = normalize_metric(metric)
    dist = metric_distance(metric, est, hypothesized)
    scale = float(n_eff) if metric == "squared-directed" else math.sqrt(n_eff)
    stat = scale * dist
    crit = simulate_critical_value(sigma, metric, alpha, draws, rng)
    return TestOutcome(stat, crit, alpha, bool(stat > crit), metric, scale)


def test_quantile_set(ds: IntervalDataset, tau: float, hypothesized, alpha: float = 0.05,
                      metric: str = "hausdorff", draws: int = 25_000, rng=0) -> TestOutcome:
    est = quantile_set_continuous(ds, tau)
    sigma = _plugin_sigma(ds.lower, ds.upper, tau, est.lower, est.upper)
    return test_from_estimate(est, sigma, ds.n, hypothesized, alpha, metric, draws, rng)


test_quantile_set.__test__ = False
test_from_estimate.__test__ = False


# ----------------------------------------------------------- discrete / jitter

@dataclass(frozen=True)
class DiscreteJointMass:
    mass_a: np.ndarray
    mass_b: np.ndarray
    joint: np.ndarray

    def __post_init__(self):
        for m in (self.mass_a, self.mass_b, self.joint):
            if np.any(m < 0):
                raise ValueError("negative mass")
        if abs(self.mass_a.sum() - 1) > 1e-12 or abs(self.mass_b.sum() - 1) > 1e-12:
            raise ValueError("marginal masses must sum to 1")
        if (np.abs(self.joint.sum(axis=1) - self.mass_a).max() > 1e-12
                or np.abs(self.joint.sum(axis=0) - self.mass_b).max() > 1e-12):
            raise ValueError("joint table marginals disagree with mass_a / mass_b")

    @property
    def J(self) -> int:
        return self.mass_a.size

    @classmethod
    def from_data(cls, a: np.ndarray, b: np.ndarray, J: Optional[int] = None) -> "DiscreteJointMass":
        a = np.asarray(a, dtype=np.int64)
        b = np.asarray(b, dtype=np.int64)
        J = int(max(a.max(), b.max()) + 1) if J is None else J
        joint = np.zeros((J, J))
        np.add.at(joint, (a, b), 1.0)
        joint /= a.size
        # marginals from counts so they match the joint to rounding
        return cls(joint.sum(axis=1), joint.sum(axis=0), joint)


class JitteredEndpoints(NamedTuple):
    """a + u and b + v; not an interval dataset since a + u > b + v is possible when a == b."""

    lower: np.ndarray
    upper: np.ndarray


def _integer_endpoints(ds: IntervalDataset) -> tuple[np.ndarray, np.ndarray]:
    ds.require_finite("jittering")
    a, b = ds.lower, ds.upper
    if np.any(a != np.round(a)) or np.any(b != np.round(b)):
        raise EstimationError("jittering needs integer endpoints")
    if a.min() < 0:
        raise EstimationError("jittering needs endpoints in {0, ..., J-1}")
    return a.astype(np.int64), b.astype(np.int64)


def lattice_offset(ds: IntervalDataset) -> float:
    """Shift c such that ds.shifted(-c) has endpoints in {0, 1, ..., J-1}.

    Works for unit-spaced grids with any common fractional offset, e.g. the
    half-integer bins [t - 0.5, t + 0.5].
    """
    ds.require_finite("lattice_offset")
    c = float(min(ds.lower.min(), ds.upper.min()))
    for v in (ds.lower - c, ds.upper - c):
        if np.any(np.abs(v - np.round(v)) > 1e-9):
            raise EstimationError("endpoints do not lie on a common unit lattice")
    return c


def jitter(ds: IntervalDataset, rng) -> JitteredEndpoints:
    """Add independent U(0,1) noise to each integer endpoint."""
    a, b = _integer_endpoints(ds)
    gen = as_generator(rng)
    u = gen.random(ds.n)
    v = gen.random(ds.n)
    return JitteredEndpoints(a + u, b + v)


def _dejitter(tilde_k: float, q: int, mass: np.ndarray, tau: float) -> tuple[float, float]:
    pq = mass[q] if q < mass.size else 0.0
    if pq <= 0:
        raise EstimationError("zero empirical mass at the estimated quantile")
    frac = (tau - mass[:q].sum()) / pq
    return tilde_k - frac, frac


def big_sigma(jm: DiscreteJointMass, tau: float, qa: int, qb: int) -> np.ndarray:
    """Covariance of the 2(J+1) influence vector of (a~_(k), b~_(k), mass_a, mass_b).

    qa, qb are the (integer) endpoint quantiles; the jittered quantiles sit
    at qa + ra, qb + rb inside the cells, where the jittered densities equal
    the point masses mass_a[qa], mass_b[qb].
    """
    J = jm.J
    pa, pb, P = jm.mass_a, jm.mass_b, jm.joint
    fa, fb = pa[qa], pb[qb]
    ra = (tau - pa[:qa].sum()) / fa
    rb = (tau - pb[:qb].sum()) / fb
    # P(a~ <= q~_a | a = j) and P(b~ <= q~_b | b = j)
    wa = np.where(np.arange(J) < qa, 1.0, 0.0)
    wa[qa] = ra
    wb = np.where(np.arange(J) < qb, 1.0, 0.0)
    wb[qb] = rb
    F_ab = float(wa @ P @ wb)
    S = np.zeros((2 + 2 * J, 2 + 2 * J))
    v = tau * (1 - tau)
    S[0, 0] = v / fa**2
    S[1, 1] = v / fb**2
    S[0, 1] = S[1, 0] = (F_ab - tau**2) / (fa * fb)
    ia = slice(2, 2 + J)
    ib = slice(2 + J, 2 + 2 * J)
    # order statistic influence is -(1{x <= q} - tau)/f
    S[0, ia] = -(wa * pa - tau * pa) / fa
    S[0, ib] = -(wa @ P - tau * pb) / fa
    S[1, ia] = -(P @ wb - tau * pa) / fb
    S[1, ib] = -(wb * pb - tau * pb) / fb
    S[ia, 0], S[ib, 0] = S[0, ia], S[0, ib]
    S[ia, 1], S[ib, 1] = S[1, ia], S[1, ib]
    S[ia, ia] = np.diag(pa) - np.outer(pa, pa)
    S[ib, ib] = np.diag(pb) - np.outer(pb, pb)
    S[ia, ib] = P - np.outer(pa, pb)
    S[ib, ia] = S[ia, ib].T
    return S


def xi_matrix(jm: DiscreteJointMass, tau: float, qa: int, qb: int) -> np.ndarray:
    """Gradient of the de-jittered bounds with respect to the influence vector."""
    J = jm.J
    Xi = np.zeros((2, 2 + 2 * J))
    for row, q, mass, offset in ((0, qa, jm.mass_a, 2), (1, qb, jm.mass_b, 2 + J)):
        pq = mass[q]
        Xi[row, row] = 1.0
        grad = np.where(np.arange(J) < q, 1.0 / pq, 0.0)
        grad[q] = (tau - mass[:q].sum()) / pq**2
        Xi[row, offset:offset + J] = grad
    return Xi


class JitteredFit(NamedTuple):
    estimate: QuantileSetEstimate
    sigma: Cov2
    raw_lower: float
    raw_upper: float
    q_lower: float  # endpoint quantiles on the original lattice
    q_upper: float


def jittered_fit(ds: IntervalDataset, tau: float, rng) -> JitteredFit:
    """De-jittered quantile-set estimate with its delta-method covariance.

    Endpoints must lie on a common unit-spaced lattice (any offset, e.g.
    half-integers). The point masses come from the raw data; only the order
    statistics use the jittered sample. If sampling noise orders the raw
    de-jittered bounds the wrong way round (possible only when q_a == q_b)
    the reported estimate is their midpoint, the nearest ordered pair.
    """
    _check_tau(tau)
    offset = lattice_offset(ds)
    a, b = _integer_endpoints(ds.shifted(-offset))
    n = ds.n
    k = _rank_floor(n, tau)
    if k < 1:
        raise EstimationError("rank underflow")
    kc = _rank_ceil(n, tau)
    jm = DiscreteJointMass.from_data(a, b)
    qa = int(order_stat(a, kc))
    qb = int(order_stat(b, kc))
    gen = as_generator(rng)
    ta = order_stat(a + gen.random(n), k)
    tb = order_stat(b + gen.random(n), k)
    if ta == math.floor(ta) or tb == math.floor(tb):
        raise EstimationError("jittered quantile on an integer lattice point")
    lo = _dejitter(ta, qa, jm.mass_a, tau)[0] + offset
    hi = _dejitter(tb, qb, jm.mass_b, tau)[0] + offset
    Xi = xi_matrix(jm, tau, qa, qb)
    cov = Cov2(Xi @ big_sigma(jm, tau, qa, qb) @ Xi.T)
    if lo <= hi:
        est = QuantileSetEstimate(tau, float(lo), float(hi), "jittered")
    else:
        mid = float(0.5 * (lo + hi))
        est = QuantileSetEstimate(tau, mid, mid, "jittered")
    return JitteredFit(est, cov, float(lo), float(hi), qa + offset, qb + offset)


def quantile_set_jittered(ds: IntervalDataset, tau: float, rng) -> tuple[QuantileSetEstimate, Cov2]:
    fit = jittered_fit(ds, tau, rng)
    return fit.estimate, fit.sigma


def test_quantile_set_jittered(ds: IntervalDataset, tau: float, hypothesized, alpha: float = 0.05,
                               metric: str = "hausdorff", draws: int = 25_000, rng=0) -> TestOutcome:
    """Test based on the de-jittered estimator; ``rng`` seeds both the jitter and the simulation."""
    gen = as_generator(rng)
    fit = jittered_fit(ds, tau, gen)
    raw = (fit.raw_lower, fit.raw_upper)
    metric = normalize_metric(metric)
    # distances use the raw de-jittered pair, whose joint limit is the one simulated
    if metric == "hausdorff":
        dist = max(abs(raw[0] - hypothesized[0]), abs(raw[1] - hypothesized[1]))
    else:
        dist = max(hypothesized[0] - raw[0], raw[1] - hypothesized[1], 0.0)
        if metric == "squared-directed":
            dist = dist * dist
    scale = float(ds.n) if metric == "squared-directed" else math.sqrt(ds.n)
    stat = scale * dist
    crit = simulate_critical_value(fit.sigma, metric, alpha, draws, gen)
    return TestOutcome(stat, crit, alpha, bool(stat > crit), metric, scale)


test_quantile_set_jittered.__test__ = False


# ------------------------------------------------------- process covariance

def process_covariance(tau: float, t: float, q_a: Callable, q_b: Callable, f_a: Callable,
                       f_b: Callable, F_ab: Callable) -> np.ndarray:
    """Cross-rank block [[E Z_L(tau)Z_L(t), E Z_L(tau)Z_U(t)], [E Z_U(tau)Z_L(t), E Z_U(tau)Z_U(t)]].

    q_* are quantile functions, f_* marginal densities, F_ab the joint CDF.
    The block is symmetric only when t == tau.
    """
    _check_tau(tau)
    _check_tau(t)
    qa_s, qa_t, qb_s, qb_t = q_a(tau), q_a(t), q_b(tau), q_b(t)
    fa_s, fa_t, fb_s, fb_t = f_a(qa_s), f_a(qa_t), f_b(qb_s), f_b(qb_t)
    if min(fa_s, fa_t, fb_s, fb_t) < DENSITY_FLOOR:
        raise EstimationError("zero density at a quantile")
    m = min(tau, t)
    ll = (m - tau * t) / (fa_s * fa_t)
    uu = (m - tau * t) / (fb_s * fb_t)
    lu = (F_ab(qa_s, qb_t) - tau * t) / (fa_s * fb_t)
    ul = (F_ab(qa_t, qb_s) - tau * t) / (fa_t * fb_s)
    return np.array([[ll, lu], [ul, uu]])


def empirical_plugins(ds: IntervalDataset) -> dict:
    """Sample plug-ins for :func:`process_covariance` matching :func:`sigma_continuous`."""
    ds.require_finite("empirical_plugins")
    a, b = ds.lower, ds.upper
    n = ds.n

    def q(values):
        def quant(s):
            k = _rank_floor(n, s)
            if k < 1:
                raise EstimationError("rank underflow")
            return order_stat(values, k)
        return quant

    return {
        "q_a": q(a), "q_b": q(b),
        "f_a": lambda x: gaussian_kde_at(a, x),
        "f_b": lambda x: gaussian_kde_at(b, x),
        "F_ab": lambda x, y: float(np.mean((a <= x) & (b <= y))),
    }
