"""Set-valued linear programming for quantile regression with interval outcomes.

The check-loss regression min_b sum rho_tau(y_i - x_i'b) is the LP

    min tau 1'u + (1 - tau) 1'v   s.t.  X b + u - v = y,  u, v >= 0.

Eliminating b through p linearly independent rows X_p (chosen by partial
pivoting) leaves n - p equality constraints in x~ = (u, v) only:

    [-M : I : M : -I] (u_p, u_-p, v_p, v_-p) = y_-p - M y_p,   M = X_-p X_p^-1,

and b = X_p^-1 (y_p - u_p + v_p). The constraint matrix no longer depends on
y, so every basis B has a polyhedral region of outcome vectors for which it
stays feasible and optimal, and on that region b(y) is affine. Covering the
outcome box [y_L, y_U] with such regions gives the set of best linear
predictors over all selections.

Bases here have a compact description. Columns u_i and v_i are negatives of
each other in the constraint matrix, so a basis contains at most one of them;
a basis is a set h of p observations fitted exactly (neither column basic)
plus a sign for every other observation (u basic: residual >= 0, v basic:
residual <= 0). The simplex below works on that description, so one pivot
costs O(np) rather than O((n-p)^2).

Ties between optimal vertices are broken lexicographically (minimize the
loss, then b_1, then b_2, ...), which makes b(y) a single-valued function
and lets regions found at different probes be compared at the b level.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linprog
from scipy.stats import qmc

from .core import EstimationError, as_generator

log = logging.getLogger(__name__)

PIVOT_TOL = 1e-12
COND_LIMIT = 1e12
LATTICE_LIMIT = 1_000_000


class SimplexStall(EstimationError):
    def __init__(self, msg, trace):
        super().__init__(f"{msg} (last pivots: {trace[-5:]})")
        self.trace = trace


# ------------------------------------------------------------ canonical form

def pivot_rows(X: np.ndarray) -> np.ndarray:
    """Row permutation from Gaussian elimination with partial pivoting; first p rows are independent."""
    A = np.array(X, dtype=float)
    n, p = A.shape
    perm = np.arange(n)
    scale = max(1.0, float(np.abs(A).max()))
    for k in range(p):
        j = k + int(np.argmax(np.abs(A[k:, k])))
        if abs(A[j, k]) < PIVOT_TOL * scale:
            raise EstimationError("design matrix is rank deficient")
        A[[k, j]] = A[[j, k]]
        perm[[k, j]] = perm[[j, k]]
        A[k + 1:, k:] -= np.outer(A[k + 1:, k] / A[k, k], A[k, k:])
    return perm


@dataclass(frozen=True, eq=False)
class CanonicalLP:
    X: np.ndarray
    tau: float
    row_permutation: np.ndarray  # canonical position -> original row
    X_p_inverse: np.ndarray
    M: np.ndarray                # X_-p X_p^-1, (n-p) x p

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def position(self) -> np.ndarray:
        """original row -> canonical position (inverse permutation)."""
        pos = np.empty(self.n, dtype=int)
        pos[self.row_permutation] = np.arange(self.n)
        return pos

    @property
    def cost(self) -> np.ndarray:
        return np.concatenate([np.full(self.n, self.tau), np.full(self.n, 1.0 - self.tau)])

    @property
    def A_tilde(self) -> np.ndarray:
        n, p = self.n, self.p
        I = np.eye(n - p)
        return np.hstack([-self.M, I, self.M, -I])

    def b_map(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)[self.row_permutation]
        return y[self.p:] - self.M @ y[:self.p]

    def beta_from(self, x_tilde, y) -> np.ndarray:
        """b = X_p^-1 (y_p - u_p + v_p) from a canonical solution vector."""
        n, p = self.n, self.p
        y = np.asarray(y, dtype=float)[self.row_permutation]
        u_p, v_p = x_tilde[:p], x_tilde[n:n + p]
        return self.X_p_inverse @ (y[:p] - u_p + v_p)

    def split(self, beta, y) -> np.ndarray:
        """Canonical vector (u, v) in canonical order for a given b."""
        r = (np.asarray(y, dtype=float) - self.X @ beta)[self.row_permutation]
        return np.concatenate([np.maximum(r, 0.0), np.maximum(-r, 0.0)])


def to_canonical(X, tau: float, rng=0) -> CanonicalLP:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, p = X.shape
    if not 0 < tau < 1:
        raise ValueError("tau must lie in (0, 1)")
    if n <= p:
        raise EstimationError("need n > p")
    if not np.isfinite(X).all():
        raise EstimationError("design matrix must be finite")
    perm = pivot_rows(X)
    Xp = X[perm[:p]]
    if np.linalg.cond(Xp) > COND_LIMIT:
        raise EstimationError("no well-conditioned set of p rows found")
    Xp_inv = np.linalg.inv(Xp)
    lp = CanonicalLP(X, float(tau), perm, Xp_inv, X[perm[p:]] @ Xp_inv)
    # self-check on a random feasible point: residual split must satisfy the constraints
    gen = as_generator(rng)
    beta = gen.standard_normal(p)
    y = X @ beta + gen.standard_normal(n)
    xt = lp.split(beta, y)
    err = np.abs(lp.A_tilde @ xt - lp.b_map(y)).max()
    if err > 1e-10 * max(1.0, np.abs(y).max()) * max(1.0, np.abs(lp.M).max()):
        raise EstimationError(f"canonical form self-check failed ({err:.3g})")
    if np.abs(lp.beta_from(xt, y) - beta).max() > 1e-8 * max(1.0, np.abs(beta).max()):
        raise EstimationError("canonical form fails to recover the coefficients")
    return lp


# -------------------------------------------------------------------- simplex

@dataclass(frozen=True)
class SimplexResult:
    h: tuple            # original rows fitted exactly, sorted
    signs: np.ndarray   # +1 u basic, -1 v basic, 0 for rows in h (original order)
    basis: tuple        # canonical column indices, sorted
    x_tilde: np.ndarray
    beta: np.ndarray
    objective: float
    iterations: int


def basis_columns(lp: CanonicalLP, signs: np.ndarray) -> tuple:
    pos = lp.position
    cols = [pos[i] if s > 0 else lp.n + pos[i] for i, s in enumerate(signs) if s != 0]
    return tuple(sorted(int(c) for c in cols))


def _lex_negative(vec: np.ndarray, tol: float) -> bool:
    for v in vec:
        if v < -tol:
            return True
        if v > tol:
            return False
    return False


def simplex_solve(lp: CanonicalLP, y, max_iter: Optional[int] = None, start=None) -> SimplexResult:
    """Primal simplex with Bland's rule on the compact basis description.

    Entering candidates are the 2p columns u_j, v_j of the exactly fitted rows
    (all other nonbasic columns have reduced cost 1). Reduced costs are
    compared lexicographically: loss first, then b_1, ..., b_p, so the
    solution is the lexicographically smallest optimal b.

    Any p rows with an invertible X_h give a feasible start once the other
    rows take the sign of their residual, so ``start`` (such a row set, e.g.
    from a nearby solve) warm-starts without a phase one. The default start is
    the partial-pivoting rows.
    """
    X, tau, n, p = lp.X, lp.tau, lp.n, lp.p
    y = np.asarray(y, dtype=float)
    if y.shape != (n,) or not np.isfinite(y).all():
        raise EstimationError("y must be a finite vector of length n")
    pos = lp.position
    if start is None:
        h = [int(i) for i in lp.row_permutation[:p]]
        Xh_inv = lp.X_p_inverse.copy()
    else:
        h = [int(i) for i in start]
        if len(set(h)) != p:
            raise ValueError("start must list p distinct rows")
        try:
            Xh_inv = np.linalg.inv(X[h])
        except np.linalg.LinAlgError:
            raise EstimationError("start rows are singular") from None
    beta = Xh_inv @ y[h]
    r = y - X @ beta
    signs = np.where(r >= 0, 1, -1)
    signs[h] = 0
    max_iter = 50 * n + 1000 if max_iter is None else max_iter
    trace = []
    for it in range(max_iter + 1):
        beta = Xh_inv @ y[h]
        r = y - X @ beta
        psi = np.where(signs > 0, tau, tau - 1.0)
        psi[signs == 0] = 0.0
        z = Xh_inv.T @ (X.T @ psi)
        # candidates: (canonical column, j, delta) with db = delta * Xh_inv[:, j]
        cands = []
        for j, row in enumerate(h):
            col = Xh_inv[:, j]
            cands.append((int(pos[row]), j, -1.0, np.concatenate([[tau + z[j]], -col])))
            cands.append((int(n + pos[row]), j, 1.0, np.concatenate([[1.0 - tau - z[j]], col])))
        cands.sort(key=lambda c: c[0])
        entering = next((c for c in cands if _lex_negative(c[3], 1e-9)), None)
        if entering is None:
            x_t = np.zeros(2 * n)
            for i in range(n):
                if signs[i] > 0:
                    x_t[pos[i]] = max(r[i], 0.0)
                elif signs[i] < 0:
                    x_t[n + pos[i]] = max(-r[i], 0.0)
            obj = float(np.sum(r * (tau - (r < 0))))
            res = SimplexResult(tuple(sorted(h)), signs.copy(), basis_columns(lp, signs), x_t, beta, obj, it)
            return res
        col_id, j, delta, _ = entering
        a = X @ Xh_inv[:, j]
        # basic value s_i r_i(t) = s_i r_i - t delta s_i a_i must stay >= 0
        rate = delta * signs * a
        limited = (signs != 0) & (rate > PIVOT_TOL)
        if not limited.any():
            raise AssertionError("LP unbounded; impossible for a bounded-below loss")
        ratios = np.full(n, np.inf)
        ratios[limited] = np.maximum(signs[limited] * r[limited], 0.0) / rate[limited]
        tmin = ratios.min()
        ties = np.flatnonzero(ratios <= tmin + 1e-12 * (1.0 + tmin))
        leave_cols = [pos[i] if signs[i] > 0 else n + pos[i] for i in ties]
        leave = int(ties[int(np.argmin(leave_cols))])
        trace.append((col_id, leave, float(tmin)))
        entering_row = h[j]
        signs[entering_row] = 1 if delta < 0 else -1
        signs[leave] = 0
        h[j] = leave
        Xh = X[h]
        if abs(np.linalg.det(Xh)) < PIVOT_TOL * max(1.0, np.abs(Xh).max()) ** p:
            raise SimplexStall("pivot produced a near-singular basis", trace)
        Xh_inv = np.linalg.inv(Xh)
    raise SimplexStall("iteration limit reached", trace)


# ---------------------------------------------------------------- basis cells

@dataclass(eq=False)
class BasisCell:
    """Region of outcome vectors on which one lexicographically optimal basis persists.

    The exact object is (h, signs): with b(y) = X_h^-1 y_h the region is
    {y in box : s_i (y_i - x_i'b(y)) >= 0 for i outside h}.
    """

    lp: CanonicalLP
    h: tuple
    signs: np.ndarray
    witness: np.ndarray
    _Xh_inv: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self._Xh_inv = np.linalg.inv(self.lp.X[list(self.h)])
        self.signs = np.asarray(self.signs, dtype=np.int8)

    @property
    def key(self) -> tuple:
        return (self.h, tuple(int(s) for s in self.signs))

    @property
    def basis(self) -> tuple:
        return basis_columns(self.lp, self.signs)

    def beta_map(self, y) -> np.ndarray:
        return self._Xh_inv @ np.asarray(y, dtype=float)[list(self.h)]

    def beta_affine(self) -> np.ndarray:
        """p x n matrix K with b(y) = K y."""
        K = np.zeros((self.lp.p, self.lp.n))
        K[:, list(self.h)] = self._Xh_inv
        return K

    def region_matrix(self) -> np.ndarray:
        """G with region = {y in box : G y >= 0}, one row per observation outside h."""
        out = [i for i in range(self.lp.n) if self.signs[i] != 0]
        E = np.eye(self.lp.n) - self.lp.X @ self.beta_affine()
        return self.signs[out, None] * E[out]

    def slack(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        r = y - self.lp.X @ self.beta_map(y)
        return (self.signs * r)[self.signs != 0]

    def contains(self, y, tol: float = 1e-9) -> bool:
        scale = max(1.0, float(np.abs(y).max()))
        return bool(self.slack(y).min(initial=0.0) >= -tol * scale)

    # dense canonical objects, for checking against the textbook formulas
    def basis_inverse(self) -> np.ndarray:
        return np.linalg.inv(self.lp.A_tilde[:, list(self.basis)])

    def reduced_costs(self) -> np.ndarray:
        A = self.lp.A_tilde
        c = self.lp.cost
        B = list(self.basis)
        N = [k for k in range(2 * self.lp.n) if k not in set(B)]
        return c[N] - c[B] @ self.basis_inverse() @ A[:, N]

    def canonical_slack(self, y) -> np.ndarray:
        """Basic variable values A_B^-1 b_map(y); the region is where these are >= 0."""
        return self.basis_inverse() @ self.lp.b_map(y)

    def image_halfspaces(self, lower, upper) -> tuple[np.ndarray, np.ndarray]:
        """(A, c) with the b-image of region intersected with the box = {b : A b <= c}."""
        X = self.lp.X
        rows, rhs = [], []
        for i in range(self.lp.n):
            s = self.signs[i]
            if s == 0:
                rows += [X[i], -X[i]]
                rhs += [upper[i], -lower[i]]
            elif s > 0:   # y_i >= x_i'b with y_i <= U_i
                rows.append(X[i])
                rhs.append(upper[i])
            else:         # y_i <= x_i'b with y_i >= L_i
                rows.append(-X[i])
                rhs.append(-lower[i])
        return np.array(rows), np.array(rhs)

    def image_contains(self, beta, lower, upper, tol: float = 1e-7) -> bool:
        A, c = self.image_halfspaces(lower, upper)
        return bool(np.all(A @ beta <= c + tol))

    def image_vertices(self, lower, upper) -> np.ndarray:
        """Vertices of the b-image polytope (p <= 3)."""
        p = self.lp.p
        if p > 3:
            raise ValueError("vertex enumeration offered for p <= 3 only")
        A, c = self.image_halfspaces(lower, upper)
        pts = []
        for idx in itertools.combinations(range(len(c)), p):
            sub = A[list(idx)]
            if abs(np.linalg.det(sub)) < 1e-12:
                continue
            v = np.linalg.solve(sub, c[list(idx)])
            if np.all(A @ v <= c + 1e-9 * max(1.0, np.abs(c).max())):
                pts.append(v)
        if not pts:
            return np.empty((0, p))
        pts = np.array(pts)
        _, keep = np.unique(np.round(pts, 10), axis=0, return_index=True)
        return pts[np.sort(keep)]


def basis_region(lp: CanonicalLP, result: SimplexResult, witness=None) -> BasisCell:
    Xh = lp.X[list(result.h)]
    if abs(np.linalg.det(Xh)) < PIVOT_TOL:
        raise EstimationError("singular basis")
    return BasisCell(lp, result.h, result.signs.copy(), None if witness is None else np.asarray(witness, float))


# ------------------------------------------------------------ enumeration

@dataclass
class SetBLPEstimate:
    cells: list
    beta_samples: np.ndarray   # k x p
    sample_cells: np.ndarray   # source cell id per sample
    coverage_report: float
    probes_used: int
    status: str = "ok"

    def beta_ranges(self) -> np.ndarray:
        """Per-coordinate (min, max) of the b cloud."""
        return np.column_stack([self.beta_samples.min(axis=0), self.beta_samples.max(axis=0)])

    def covers(self, y, tol: float = 1e-9) -> bool:
        return any(c.contains(y, tol) for c in self.cells)


class _CoverIndex:
    """Vectorized membership test of a probe against all known cells."""

    def __init__(self, lp: CanonicalLP):
        self.lp = lp
        self.H = np.zeros((0, lp.p), dtype=int)
        self.Kh = np.zeros((0, lp.p, lp.p))
        self.S = np.zeros((0, lp.n), dtype=np.int8)

    def add(self, cell: BasisCell):
        self.H = np.vstack([self.H, np.array(cell.h)[None]])
        self.Kh = np.concatenate([self.Kh, cell._Xh_inv[None]])
        self.S = np.vstack([self.S, cell.signs[None]])

    def first_cover(self, y, tol) -> int:
        if not len(self.S):
            return -1
        B = np.einsum("cij,cj->ci", self.Kh, y[self.H])   # cells x p
        R = y[None, :] - B @ self.lp.X.T                   # cells x n
        ok = np.all(self.S * R >= -tol, axis=1)
        hit = np.flatnonzero(ok)
        return int(hit[0]) if hit.size else -1


class _QuasiRandom:
    """Scrambled Sobol points drawn in power-of-two blocks (keeps the sequence balanced)."""

    def __init__(self, d: int, gen, block: int = 256):
        self._engine = qmc.Sobol(d=d, scramble=True, seed=gen)
        self._block = block
        self._buf = np.empty((0, d))

    def next(self) -> np.ndarray:
        if not len(self._buf):
            self._buf = self._engine.random(self._block)
        out, self._buf = self._buf[0], self._buf[1:]
        return out


def _directional_vertex(lp, lower, upper, w):
    lean = lp.X @ np.linalg.solve(lp.X.T @ lp.X, w)
    return np.where(lean > 0, upper, lower)


def enumerate_cells(lp: CanonicalLP, lower, upper, probe_budget: int = 200, rng=0,
                    cell_cap: int = 5000, final_probes: int = 10_000, max_probes: int = 200_000,
                    vertices: bool = False) -> SetBLPEstimate:
    """Cover the outcome box with basis regions by probing.

    Probes cycle through scrambled Sobol points in the box, box vertices
    picked by Sobol signs, and "directional" vertices that push b towards a
    random direction (the box's extreme selections, which uniform probes
    rarely reach when n is large). Discovery stops after ``probe_budget``
    consecutive probes land in known regions, or at ``cell_cap`` cells.
    Coverage is then measured on an independent Sobol sample.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    n, p = lp.n, lp.p
    if lower.shape != (n,) or upper.shape != (n,):
        raise ValueError("box bounds must have length n")
    if not (np.isfinite(lower).all() and np.isfinite(upper).all()):
        raise EstimationError("enumerate_cells needs a finite box")
    if np.any(lower > upper):
        raise EstimationError("box has an inverted interval")
    if probe_budget < 1:
        raise ValueError("probe_budget must be >= 1")
    gen = as_generator(rng)
    width = upper - lower
    tol = 1e-9 * max(1.0, float(np.abs(np.concatenate([lower, upper])).max()))
    sobol = _QuasiRandom(n, gen)
    signs_seq = _QuasiRandom(n, gen)
    index = _CoverIndex(lp)
    cells: list[BasisCell] = []
    seen = {}
    samples, sample_cells = [], []

    def add_probe(y):
        c = index.first_cover(y, tol)
        if c < 0:
            res = simplex_solve(lp, y, start=cells[-1].h if cells else None)
            cell = basis_region(lp, res, y)
            c = seen.get(cell.key)
            if c is None:
                c = len(cells)
                seen[cell.key] = c
                cells.append(cell)
                index.add(cell)
                samples.append(res.beta)
                sample_cells.append(c)
                return True
        samples.append(cells[c].beta_map(y))
        sample_cells.append(c)
        return False

    add_probe(lower.copy())
    streak, used, k = 0, 1, 0
    while streak < probe_budget and len(cells) < cell_cap and used < max_probes:
        kind = k % 3
        k += 1
        if kind == 0:
            y = lower + width * sobol.next()
        elif kind == 1:
            y = np.where(signs_seq.next() < 0.5, lower, upper)
        else:
            y = _directional_vertex(lp, lower, upper, gen.standard_normal(p))
        used += 1
        streak = 0 if add_probe(y) else streak + 1
    if vertices and p <= 3:
        for c, cell in enumerate(cells):
            for v in cell.image_vertices(lower, upper):
                samples.append(v)
                sample_cells.append(c)
    final_engine = _QuasiRandom(n, gen, block=1 << max(0, (final_probes - 1).bit_length()))
    final = [final_engine.next() for _ in range(final_probes)]
    covered = sum(index.first_cover(lower + width * s, tol) >= 0 for s in final)
    coverage = covered / final_probes
    status = "ok"
    if coverage < 0.999:
        status = "warning"
        log.warning("cell enumeration covers only %.4f of final probes (%d cells)", coverage, len(cells))
    return SetBLPEstimate(cells, np.array(samples).reshape(-1, p), np.array(sample_cells, dtype=int),
                          coverage, used, status)


def connectedness_gaps(est: SetBLPEstimate, resolution: float) -> list:
    """Per coordinate, gaps in the sorted b samples wider than ``resolution`` (logged, not raised)."""
    gaps = []
    for k in range(est.beta_samples.shape[1]):
        v = np.sort(est.beta_samples[:, k])
        d = np.diff(v)
        for i in np.flatnonzero(d > resolution):
            gaps.append((k, float(v[i]), float(v[i + 1])))
    if gaps:
        log.warning("b cloud has %d coordinate gap(s) wider than %g", len(gaps), resolution)
    return gaps


# ----------------------------------------------------------------- oracles

def brute_force_lattice(X, lower, upper, tau: float, points_per_interval: int) -> list:
    """Solve the LP at every node of an outcome lattice; deduplicated coefficient list."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if points_per_interval < 1:
        raise ValueError("points_per_interval must be >= 1")
    axes = [np.unique(np.linspace(lo, hi, points_per_interval)) for lo, hi in zip(lower, upper)]
    nodes = math.prod(len(a) for a in axes)
    if nodes > LATTICE_LIMIT:
        raise EstimationError(f"lattice has {nodes} nodes, above the {LATTICE_LIMIT} guard")
    lp = to_canonical(X, tau)
    found: list[np.ndarray] = []
    for y in itertools.product(*axes):
        b = simplex_solve(lp, np.array(y)).beta
        if not any(np.abs(b - f).max() <= 1e-9 for f in found):
            found.append(b)
    return found


def in_blp_set(X, lower, upper, tau: float, beta, tol: float = 1e-9) -> bool:
    """Is b a check-loss minimizer for some y in the box?

    b minimizes sum rho(y_i - x_i'b) iff 0 = sum psi_i x_i for some
    subgradients psi_i, with psi_i = tau if y_i > x_i'b, tau - 1 if y_i < x_i'b
    and psi_i in [tau - 1, tau] at a tie. Choosing y_i freely in [L_i, U_i]
    makes psi_i free unless the whole interval lies on one side of x_i'b.
    Feasibility of the resulting box-constrained system is an LP.
    """
    X = np.asarray(X, dtype=float)
    fit = X @ np.asarray(beta, dtype=float)
    lo = np.where(np.asarray(lower) > fit + tol, tau, tau - 1.0)
    hi = np.where(np.asarray(upper) < fit - tol, tau - 1.0, tau)
    res = linprog(np.zeros(X.shape[0]), A_eq=X.T, b_eq=np.zeros(X.shape[1]),
                  bounds=list(zip(lo, hi)), method="highs")
    return res.status == 0


def check_loss(X, y, beta, tau: float) -> float:
    r = np.asarray(y, dtype=float) - np.asarray(X, dtype=float) @ np.asarray(beta, dtype=float)
    return float(np.sum(r * (tau - (r < 0))))
