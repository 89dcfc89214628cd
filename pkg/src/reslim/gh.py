"""Gromov-Hausdorff(-Prohorov) distances through correspondences and gluing."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .entropy import covering_value
from .metric_core import (Correspondence, FiniteMetricSpace, RootedMeasuredSpace, distortion,
                          hausdorff_distance, prohorov_distance)
from .streams import as_generator

DELTA_GRID = (1e-3, 1e-6, 1e-9)
EXACT_GH_MAX_PRODUCT = 36
EXACT_GAUSSIAN_MAX_N = 5
# glued matrices are built only when nx * ny * |C| stays below this
GLUE_WORK_LIMIT = 4e8


# ---------------------------------------------------------------------------
# gluing
# ---------------------------------------------------------------------------

def glued_cross_distances(X: FiniteMetricSpace, Y: FiniteMetricSpace, C: Correspondence,
                          shift: float, chunk_rows: int = 64) -> np.ndarray:
    """d(x, y) = shift + min over (a, b) in C of d_X(x, a) + d_Y(b, y)."""
    a, b = C.pairs[:, 0], C.pairs[:, 1]
    DY = Y.d[b]                           # |C| x ny
    out = np.empty((X.n, Y.n))
    for start in range(0, X.n, chunk_rows):
        rows = X.d[start:start + chunk_rows][:, a]   # r x |C|
        out[start:start + chunk_rows] = (rows[:, :, None] + DY[None, :, :]).min(axis=1)
    return out + shift


@dataclass(frozen=True, eq=False)
class GluedSpace:
    """Disjoint union of X and Y with cross distances set by a correspondence.

    The cross distance is inf over (a, b) in C of
    d_X(x, a) + dis(C)/2 + delta + d_Y(b, y); this is a metric whenever
    delta > 0 and restricts to the original metrics on each part.
    """

    X: FiniteMetricSpace
    Y: FiniteMetricSpace
    C: Correspondence
    delta: float
    space: FiniteMetricSpace = field(init=False)
    dis: float = field(init=False)

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        dis = distortion(self.C, self.X, self.Y)
        cross = glued_cross_distances(self.X, self.Y, self.C, 0.5 * dis + self.delta)
        nx = self.X.n
        d = np.empty((nx + self.Y.n,) * 2)
        d[:nx, :nx] = self.X.d
        d[nx:, nx:] = self.Y.d
        d[:nx, nx:] = cross
        d[nx:, :nx] = cross.T
        object.__setattr__(self, "dis", dis)
        object.__setattr__(self, "space", FiniteMetricSpace(d, trusted=True))

    def left(self, i):
        return np.asarray(i)

    def right(self, j):
        return self.X.n + np.asarray(j)


# ---------------------------------------------------------------------------
# exact min-max correspondence search
# ---------------------------------------------------------------------------

def _feasible(allowed: np.ndarray, compat: np.ndarray, nx: int, ny: int) -> list[int] | None:
    """Find a covering set of mutually compatible pairs, or None.

    Pairs are indexed p = x * ny + y.  Any correspondence that meets the
    threshold contains, for every point, a pair covering that point, and those
    pairs are pairwise compatible; the search below branches on the most
    constrained uncovered point, so it is complete.
    """
    P = nx * ny
    px = np.arange(P) // ny
    py = np.arange(P) % ny
    covers = [(px == x) for x in range(nx)] + [(py == y) for y in range(ny)]

    def search(cand: np.ndarray, covered: np.ndarray, chosen: list[int]):
        open_pts = np.flatnonzero(~covered)
        if open_pts.size == 0:
            return list(chosen)
        best, best_opts = None, None
        for pt in open_pts:
            opts = np.flatnonzero(cand & covers[pt])
            if best_opts is None or opts.size < best_opts.size:
                best, best_opts = pt, opts
                if opts.size == 0:
                    return None
        for p in best_opts:
            cov = covered.copy()
            cov[px[p]] = True
            cov[nx + py[p]] = True
            res = search(cand & compat[p], cov, chosen + [int(p)])
            if res is not None:
                return res
        return None

    return search(allowed.copy(), np.zeros(nx + ny, dtype=bool), [])


def min_max_correspondence(pair_cost: np.ndarray, unary: np.ndarray | None = None):
    """Minimise over correspondences R the max of unary(p) and pair_cost(p, q), p, q in R.

    ``pair_cost`` has shape (nx, ny, nx, ny) and ``unary`` shape (nx, ny).
    Returns (value, pairs).  Feasibility is monotone in the threshold, so the
    optimum is found by bisection over the attained cost values.
    """
    nx, ny = pair_cost.shape[:2]
    P = nx * ny
    K = pair_cost.reshape(P, P)
    K = np.maximum(K, K.T)
    u = np.diag(K).copy() if unary is None else np.maximum(np.diag(K), unary.reshape(P))
    cands = np.unique(np.concatenate([K.ravel(), u]))
    lo, hi = 0, cands.size - 1
    best = _feasible(u <= cands[hi], K <= cands[hi], nx, ny)
    while lo < hi:
        mid = (lo + hi) // 2
        res = _feasible(u <= cands[mid], K <= cands[mid], nx, ny)
        if res is None:
            lo = mid + 1
        else:
            hi, best = mid, res
    pairs = np.array([[p // ny, p % ny] for p in best])
    return float(cands[hi]), pairs


def _half_distortion_cost(X: FiniteMetricSpace, Y: FiniteMetricSpace) -> np.ndarray:
    return 0.5 * np.abs(X.d[:, None, :, None] - Y.d[None, :, None, :])


# ---------------------------------------------------------------------------
# Gromov-Hausdorff
# ---------------------------------------------------------------------------

def correspondence_value(R: np.ndarray, X: FiniteMetricSpace, Y: FiniteMetricSpace) -> float:
    a, b = np.nonzero(R)
    return float(np.abs(X.d[np.ix_(a, a)] - Y.d[np.ix_(b, b)]).max())


def search_correspondence(X: FiniteMetricSpace, Y: FiniteMetricSpace, budget: int = 20000,
                          seed: int = 0, restarts: int = 4) -> tuple[float, np.ndarray]:
    """Simulated annealing over pair toggles; returns (distortion, relation matrix).

    Starts from nearest-neighbour matchings of distance-to-everything
    profiles; every state visited is a valid correspondence.
    """
    rng = as_generator(seed)
    best_val, best_R = math.inf, None
    prof_x = np.sort(X.d, axis=1)
    prof_y = np.sort(Y.d, axis=1)
    m = min(X.n, Y.n)
    gap = np.abs(prof_x[:, None, :m] - prof_y[None, :, :m]).max(axis=2)
    for r in range(restarts):
        R = np.zeros((X.n, Y.n), dtype=bool)
        noise = rng.random(gap.shape) * (0.1 * r)
        R[np.arange(X.n), np.argmin(gap + noise, axis=1)] = True
        R[np.argmin(gap + noise, axis=0), np.arange(Y.n)] = True
        val = correspondence_value(R, X, Y)
        temp = max(val, 1e-12) * 0.1
        steps = max(1, budget // restarts)
        for step in range(steps):
            i, j = rng.integers(X.n), rng.integers(Y.n)
            R[i, j] = not R[i, j]
            if not (R.any(axis=1).all() and R.any(axis=0).all()):
                R[i, j] = not R[i, j]
                continue
            new = correspondence_value(R, X, Y)
            if new <= val or rng.random() < math.exp(-(new - val) / max(temp, 1e-15)):
                val = new
                if val < best_val:
                    best_val, best_R = val, R.copy()
            else:
                R[i, j] = not R[i, j]
            temp *= 0.999
        if val < best_val:
            best_val, best_R = val, R.copy()
    return best_val, best_R


def gh_distance(X: FiniteMetricSpace, Y: FiniteMetricSpace, mode: str = "exact",
                budget: int = 20000, seed: int = 0) -> float:
    """Gromov-Hausdorff distance as half the least distortion of a correspondence."""
    if mode == "exact":
        if X.n * Y.n > EXACT_GH_MAX_PRODUCT:
            raise ValueError(
                f"exact mode needs |X|*|Y| <= {EXACT_GH_MAX_PRODUCT}; use mode='search'")
        value, _ = min_max_correspondence(_half_distortion_cost(X, Y))
        return value
    if mode == "search":
        val, _ = search_correspondence(X, Y, budget=budget, seed=seed)
        return 0.5 * val
    raise ValueError(f"unknown mode {mode!r}")


def optimal_correspondence(X: FiniteMetricSpace, Y: FiniteMetricSpace) -> Correspondence:
    _, pairs = min_max_correspondence(_half_distortion_cost(X, Y))
    return Correspondence(pairs, X.n, Y.n)


# ---------------------------------------------------------------------------
# Gromov-Hausdorff-Prohorov upper bounds
# ---------------------------------------------------------------------------

@dataclass
class GHPBound:
    bound: float
    delta: float
    hausdorff: float
    root: float
    prohorov: float
    distortion: float
    method: str

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def _pushforward(weights: np.ndarray, partner: np.ndarray, size: int) -> np.ndarray:
    return np.bincount(partner, weights=weights, minlength=size)


def ghp_upper_bound(GX: RootedMeasuredSpace, GY: RootedMeasuredSpace, C: Correspondence,
                    deltas: Sequence[float] = DELTA_GRID, method: str = "auto") -> GHPBound:
    """Upper bound on the rooted measured GH distance from one correspondence.

    In the glued space the bound is the max of the Hausdorff distance between
    the two parts, the root distance and the Prohorov distance of the two
    measures.  With ``method='glue'`` all three are computed from the full
    glued matrix.  With ``method='transport'`` (used when the glued matrix
    would be too large) the Hausdorff term is exactly dis/2 + delta, the root
    term uses the min-plus formula for one pair of points, and the Prohorov
    term is bounded by dis/2 + delta plus the Prohorov distance inside the
    smaller part between its own measure and the other measure pushed along C.
    The bound is monotone in delta, so the smallest delta in the grid wins;
    all are evaluated and the minimum is reported.
    """
    dis = distortion(C, GX.space, GY.space)
    if method == "auto":
        work = GX.n * GY.n * len(C)
        method = "glue" if work <= GLUE_WORK_LIMIT else "transport"
    best = None
    for delta in deltas:
        if delta <= 0:
            raise ValueError("delta must be positive")
        shift = 0.5 * dis + delta
        if method == "glue":
            Z = GluedSpace(GX.space, GY.space, C, delta)
            nx = GX.n
            haus = hausdorff_distance(range(nx), range(nx, nx + GY.n), Z.space)
            root = float(Z.space.d[GX.root, nx + GY.root])
            mu1 = np.concatenate([GX.weights, np.zeros(GY.n)])
            mu2 = np.concatenate([np.zeros(nx), GY.weights])
            proh = prohorov_distance(mu1, mu2, Z.space)
        elif method == "transport":
            a, b = C.pairs[:, 0], C.pairs[:, 1]
            haus = shift
            root = shift + float(np.min(GX.d[GX.root, a] + GY.d[b, GY.root]))
            if GX.n <= GY.n:
                first = np.unique(b, return_index=True)[1]
                moved = _pushforward(GY.weights, a[first], GX.n)
                proh = shift + prohorov_distance(GX.weights, moved, GX.space)
            else:
                first = np.unique(a, return_index=True)[1]
                moved = _pushforward(GX.weights, b[first], GY.n)
                proh = shift + prohorov_distance(moved, GY.weights, GY.space)
        else:
            raise ValueError(f"unknown method {method!r}")
        value = max(haus, root, proh)
        if best is None or value <= best.bound:
            best = GHPBound(value, delta, haus, root, proh, dis, method)
    return best


# ---------------------------------------------------------------------------
# covering numbers along convergent sequences
# ---------------------------------------------------------------------------

def is_continuity_point(S: FiniteMetricSpace, eps: float, rel: float = 1e-9) -> bool:
    """N(S, .) is a right-continuous step function; eps is a jump iff N(eps-) != N(eps)."""
    below = eps * (1 - rel)
    return covering_value(S, below) == covering_value(S, eps)


def entropy_convergence_check(spaces: Sequence[FiniteMetricSpace], limit: FiniteMetricSpace,
                              eps_grid: Sequence[float], tail: int | None = None) -> dict:
    """Compare covering numbers of a convergent sequence with those of its limit.

    The liminf over the sequence is approximated by the minimum over its last
    ``tail`` terms.  At every eps the lower-semicontinuity inequality
    N(S, eps) <= liminf N(S_n, eps) is checked; at continuity points of
    N(S, .) equality with the last term is checked as well.
    """
    tail = tail or max(1, len(spaces) // 2)
    gh = []
    for S in spaces:
        mode = "exact" if S.n * limit.n <= EXACT_GH_MAX_PRODUCT else "search"
        gh.append(gh_distance(S, limit, mode))
    rows = []
    for eps in eps_grid:
        seq = [covering_value(S, eps) for S in spaces]
        lim = covering_value(limit, eps)
        liminf = min(seq[-tail:])
        cont = is_continuity_point(limit, eps)
        rows.append({
            "eps": eps, "N_limit": lim, "N_seq": seq, "liminf": liminf,
            "continuity": cont, "lsc_holds": lim <= liminf,
            "equality_holds": (seq[-1] == lim) if cont else None,
        })
    ok = all(r["lsc_holds"] and r["equality_holds"] is not False for r in rows)
    return {"gh": gh, "rows": rows, "holds": ok}


# ---------------------------------------------------------------------------
# spaces carrying covariances or functions
# ---------------------------------------------------------------------------

PSD_CLIP = 1e-9


def check_covariance(cov) -> np.ndarray:
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ValueError("covariance must be square")
    if np.abs(cov - cov.T).max() > 1e-12 * max(1.0, np.abs(cov).max()):
        raise ValueError("covariance must be symmetric")
    if np.linalg.eigvalsh(cov).min() < -PSD_CLIP:
        raise ValueError("covariance is not positive semidefinite")
    return 0.5 * (cov + cov.T)


def _glued_value(dX, dY, pairs, extra_pair, extra_unary, delta):
    a, b = pairs[:, 0], pairs[:, 1]
    dis = np.abs(dX[np.ix_(a, a)] - dY[np.ix_(b, b)]).max()
    return max(0.5 * dis + delta, extra_pair(a, b), extra_unary(a, b))


def hcov_distance(dX, covX, dY, covY, C: Correspondence | None = None, mode: str = "given",
                  deltas: Sequence[float] = DELTA_GRID) -> float:
    """Correspondence bound for the covariance-augmented GH distance.

    For a correspondence C, glue along C and take the larger of the Hausdorff
    term dis(C)/2 + delta and sup over (x1,x2), (y1,y2) in C of
    |covX(x1,y1) - covY(x2,y2)|.  ``mode='exact'`` minimises over all
    correspondences (spaces of at most 5 points) and reports the delta -> 0
    value.
    """
    dX, dY = np.asarray(dX, float), np.asarray(dY, float)
    covX, covY = check_covariance(covX), check_covariance(covY)
    if mode == "exact":
        nx, ny = dX.shape[0], dY.shape[0]
        if max(nx, ny) > EXACT_GAUSSIAN_MAX_N:
            raise ValueError(f"exact mode is limited to {EXACT_GAUSSIAN_MAX_N} points")
        cost = np.maximum(0.5 * np.abs(dX[:, None, :, None] - dY[None, :, None, :]),
                          np.abs(covX[:, None, :, None] - covY[None, :, None, :]))
        value, _ = min_max_correspondence(cost)
        return value
    if C is None:
        raise ValueError("a correspondence is required unless mode='exact'")
    pairs = C.pairs
    cov_gap = lambda a, b: float(np.abs(covX[np.ix_(a, a)] - covY[np.ix_(b, b)]).max())
    return min(_glued_value(dX, dY, pairs, cov_gap, lambda a, b: 0.0, d) for d in deltas)


def hpr_distance(dX, gX, dY, gY, C: Correspondence | None = None, mode: str = "given",
                 deltas: Sequence[float] = DELTA_GRID) -> float:
    """Correspondence bound for the GH distance augmented by function values.

    The extra term is sup over (x, y) in C of |gX(x) - gY(y)|.
    """
    dX, dY = np.asarray(dX, float), np.asarray(dY, float)
    gX, gY = np.asarray(gX, float), np.asarray(gY, float)
    if mode == "exact":
        nx, ny = dX.shape[0], dY.shape[0]
        if max(nx, ny) > EXACT_GAUSSIAN_MAX_N:
            raise ValueError(f"exact mode is limited to {EXACT_GAUSSIAN_MAX_N} points")
        cost = 0.5 * np.abs(dX[:, None, :, None] - dY[None, :, None, :])
        unary = np.abs(gX[:, None] - gY[None, :])
        value, _ = min_max_correspondence(cost, unary)
        return value
    if C is None:
        raise ValueError("a correspondence is required unless mode='exact'")
    val_gap = lambda a, b: float(np.abs(gX[a] - gY[b]).max())
    return min(_glued_value(dX, dY, C.pairs, lambda a, b: 0.0, val_gap, d) for d in deltas)
