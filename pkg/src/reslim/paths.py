"""Distances between killed step paths, local-time curves and full process tuples.

States are indices into a finite metric space; the cemetery is at infinite
distance from every point.  All path distances here are upper bounds
obtained from explicit time changes, which is the direction needed to
certify convergence.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .gh import GluedSpace
from .metric_core import (Correspondence, FiniteMetricSpace, RootedMeasuredSpace, ball_indices,
                          distortion, prohorov_distance)
from .process import KilledPath, LocalTimeField, exit_time

J1_MAX = 0.5


# ---------------------------------------------------------------------------
# kill operator and time changes
# ---------------------------------------------------------------------------

def kill(path: KilledPath, t: float) -> KilledPath:
    """The path sent to the cemetery from time t on."""
    if t < 0:
        raise ValueError("kill time must be nonnegative")
    if t >= path.kill:
        return path
    if t > path.horizon:
        raise ValueError("cannot kill a path beyond its observed horizon")
    if t == 0:
        return KilledPath(np.array([]), np.array([], dtype=int), 0.0)
    keep = path.times < t
    return KilledPath(path.times[keep], path.states[keep], t)


@dataclass(frozen=True, eq=False)
class TimeChange:
    """Strictly increasing piecewise-linear map with lambda(0) = 0.

    Given by breakpoints (s_i, lambda(s_i)) starting at (0, 0); after the
    last breakpoint the last slope continues.
    """

    knots: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.knots, float)
        v = np.asarray(self.values, float)
        if s.ndim != 1 or s.shape != v.shape or s.size < 2:
            raise ValueError("need at least two breakpoints")
        if s[0] != 0 or v[0] != 0:
            raise ValueError("a time change starts at (0, 0)")
        if np.any(np.diff(s) <= 0) or np.any(np.diff(v) <= 0):
            raise ValueError("time changes must be strictly increasing with positive slopes")
        object.__setattr__(self, "knots", s)
        object.__setattr__(self, "values", v)

    @classmethod
    def identity(cls) -> "TimeChange":
        return cls(np.array([0.0, 1.0]), np.array([0.0, 1.0]))

    @classmethod
    def linear(cls, slope: float) -> "TimeChange":
        return cls(np.array([0.0, 1.0]), np.array([0.0, slope]))

    @property
    def slopes(self) -> np.ndarray:
        return np.diff(self.values) / np.diff(self.knots)

    def __call__(self, s):
        s = np.asarray(s, float)
        inside = np.interp(s, self.knots, self.values)
        beyond = self.values[-1] + self.slopes[-1] * (s - self.knots[-1])
        return np.where(s > self.knots[-1], beyond, inside)

    def max_displacement(self, t: float) -> float:
        """sup over [0, t] of |lambda(s) - s|, attained at breakpoints or at t."""
        pts = np.append(self.knots[self.knots < t], t)
        return float(np.abs(self(pts) - pts).max())


def lambda_dag_norm(lam: TimeChange, t: float) -> float:
    """2 (t v 1) times the largest |log slope| over segments meeting [0, t)."""
    if t <= 0:
        raise ValueError("t must be positive")
    starts = lam.knots[:-1]
    used = lam.slopes[starts < t]
    if lam.knots[-1] < t:
        used = np.append(used, lam.slopes[-1])
    return 2.0 * max(t, 1.0) * float(np.abs(np.log(used)).max())


# ---------------------------------------------------------------------------
# a_eps and the extended J1 distance
# ---------------------------------------------------------------------------

class _Embedded:
    """A path together with the map from its states to points of Z."""

    def __init__(self, path: KilledPath, embed: np.ndarray | None):
        self.path = path
        self.embed = None if embed is None else np.asarray(embed, dtype=int)

    def points(self, states: np.ndarray) -> np.ndarray:
        return states if self.embed is None else self.embed[states]

    def states_at(self, t: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self.path.times, t, side="right") - 1
        return self.points(self.path.states[idx])


def _check_observed(path: KilledPath, until: float) -> None:
    if path.kill > until and path.horizon < until:
        raise ValueError(f"path observed up to {path.horizon} but needed up to {until}")


def _segment_distance(X: _Embedded, Y: _Embedded, D: np.ndarray, xa: float, xb: float,
                      ya: float, yb: float) -> float:
    """max of d(X(s), Y(lambda(s))) over s in [xa, xb) with lambda linear onto [ya, yb)."""
    slope = (yb - ya) / (xb - xa)
    xt = X.path.times
    yt = Y.path.times
    cuts = np.concatenate([[xa], xt[(xt > xa) & (xt < xb)],
                           xa + (yt[(yt > ya) & (yt < yb)] - ya) / slope])
    ys = ya + (cuts - xa) * slope
    return float(D[X.states_at(cuts), Y.states_at(ys)].max())


def _best_alignment(X: _Embedded, Y: _Embedded, D: np.ndarray, kx: float, ky_lo: float,
                    ky_hi: float, horizon: float, width: int, band: int) -> float:
    """Bottleneck DP over monotone matchings of jump epochs.

    Anchors pair a jump of X with a jump of Y; consecutive anchors may skip
    up to ``width - 1`` jumps on either side.  The last anchor sends the death
    time kx of X to some ky in [ky_lo, ky_hi], chosen per predecessor.
    """
    norm_factor = 2.0 * max(horizon, 1.0)
    xt, yt = X.path.times, Y.path.times
    xs = np.concatenate([[0.0], xt[(xt > 0) & (xt < kx)]])
    ys = np.concatenate([[0.0], yt[(yt > 0) & (yt < ky_hi)]])
    p, q = xs.size, ys.size
    band = band + abs(p - q)

    def step_cost(xa, xb, ya, yb, bound):
        cost = norm_factor * abs(math.log((yb - ya) / (xb - xa)))
        if cost >= bound:
            return cost
        return max(cost, _segment_distance(X, Y, D, xa, xb, ya, yb))

    best = {(0, 0): 0.0}
    for i in range(1, p):
        for j in range(1, q):
            if abs(i * q - j * p) > band * max(p, q):
                continue
            val = math.inf
            for di in range(1, width + 1):
                for dj in range(1, width + 1):
                    prev = (i - di, j - dj)
                    if prev not in best or best[prev] >= val:
                        continue
                    cost = step_cost(xs[prev[0]], xs[i], ys[prev[1]], ys[j], val)
                    val = min(val, max(best[prev], cost))
            if math.isfinite(val):
                best[(i, j)] = val

    result = math.inf
    for (i, j), v in best.items():
        if i < p - width or v >= result:
            continue
        xa, ya = xs[i], ys[j]
        natural = min(max(ya + (kx - xa), ky_lo), ky_hi)
        for ky in {natural, ky_lo, ky_hi}:
            if ky <= ya or np.count_nonzero((yt > ya) & (yt < ky)) >= width:
                continue
            result = min(result, max(v, step_cost(xa, kx, ya, ky, result)))
    return result


def a_epsilon(X: KilledPath, Y: KilledPath, eps: float, Z: FiniteMetricSpace,
              embed_x=None, embed_y=None, budget: int = 3) -> float:
    """Upper bound on a_eps(X, Y) from alignment-induced time changes.

    Killing Y at t in [1/eps - eps, 1/eps + eps] makes its death time any
    value in [min(1/eps - eps, T_Y), min(1/eps + eps, T_Y)]; the time change
    must send the death time of kill_{1/eps}(X) there, since the cemetery is
    infinitely far from every point.  ``budget`` sets how many jumps a single
    alignment step may skip.
    """
    if not 0 < eps < 0.5:
        raise ValueError("eps must lie in (0, 1/2)")
    T = 1.0 / eps
    _check_observed(X, T)
    _check_observed(Y, T + eps)
    kx = min(T, X.kill)
    ky_lo, ky_hi = min(T - eps, Y.kill), min(T + eps, Y.kill)
    if kx == 0 or ky_hi == 0:
        return 0.0 if kx == ky_lo == 0 else math.inf
    return _best_alignment(_Embedded(X, embed_x), _Embedded(Y, embed_y), Z.d, kx, ky_lo, ky_hi,
                           T + eps, width=max(1, budget), band=budget)


def _eps_floor(X: KilledPath, Y: KilledPath, tol: float) -> float:
    """Smallest eps for which both paths are observed on [0, 1/eps + eps]."""
    h = min(math.inf if math.isfinite(X.kill) else X.horizon,
            math.inf if math.isfinite(Y.kill) else Y.horizon)
    if math.isinf(h):
        return tol
    if h <= 2.5:
        return J1_MAX
    # 1/eps + eps <= h  <=>  eps >= (h - sqrt(h^2 - 4)) / 2
    return max(tol, (h - math.sqrt(h * h - 4)) / 2 * (1 + 1e-12))


def _same_path(X: KilledPath, Y: KilledPath, ex, ey) -> bool:
    same_embed = (ex is None and ey is None) or (
        ex is not None and ey is not None and np.array_equal(ex, ey))
    return (same_embed and X.kill == Y.kill and X.horizon == Y.horizon
            and np.array_equal(X.times, Y.times) and np.array_equal(X.states, Y.states))


def j1prime_distance(X: KilledPath, Y: KilledPath, Z: FiniteMetricSpace, embed_x=None,
                     embed_y=None, tol: float = 1e-12, budget: int = 3) -> float:
    """Upper bound on the extended Skorokhod distance by bisection on eps.

    The returned eps always satisfies a_eps(X, Y) v a_eps(Y, X) < eps / 2 for
    the computed bounds, except for the value 1/2 which is the cap.
    """
    if _same_path(X, Y, embed_x, embed_y):
        return 0.0

    def ok(eps):
        if eps >= J1_MAX:
            return True
        a1 = a_epsilon(X, Y, eps, Z, embed_x, embed_y, budget)
        if not a1 < eps / 2:
            return False
        return a_epsilon(Y, X, eps, Z, embed_y, embed_x, budget) < eps / 2

    lo = _eps_floor(X, Y, tol)
    if lo >= J1_MAX:
        return J1_MAX
    if ok(lo):
        return lo
    hi = J1_MAX * (1 - 1e-12)
    if not ok(hi):
        return J1_MAX
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi


# ---------------------------------------------------------------------------
# uniform distance on grid functions and local-time graphs
# ---------------------------------------------------------------------------

class Interval(NamedTuple):
    lower: float
    upper: float


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Samples on the grid 0, step, 2 step, ...; linear in between.

    ``frozen_after`` records that the function is constant after the last
    grid time, which makes the uniform distance exact.
    """

    values: np.ndarray
    step: float
    frozen_after: bool = False

    def __post_init__(self):
        v = np.asarray(self.values, float)
        if v.ndim != 1 or v.size == 0 or not np.all(np.isfinite(v)):
            raise ValueError("grid function needs finite 1-d samples")
        if self.step <= 0:
            raise ValueError("grid step must be positive")
        object.__setattr__(self, "values", v)

    @property
    def horizon(self) -> float:
        return (self.values.size - 1) * self.step


def d_uniform(f: GridFunction, g: GridFunction) -> Interval:
    """sum_n 2^-n max_{[0, n]} (|f - g| ^ 1), with the unobserved tail as an interval."""
    if not math.isclose(f.step, g.step, rel_tol=1e-12):
        raise ValueError("grid functions must share a step")
    m = min(f.values.size, g.values.size)
    diff = np.minimum(np.abs(f.values[:m] - g.values[:m]), 1.0)
    running = np.maximum.accumulate(diff)
    N = int(math.floor((m - 1) * f.step + 1e-12))
    total = 0.0
    for n in range(1, N + 1):
        idx = min(m - 1, int(math.floor(n / f.step + 1e-9)))
        total += 2.0 ** -n * running[idx]
    last = running[min(m - 1, int(math.floor(N / f.step + 1e-9)))] if N >= 1 else running[0]
    exact_tail = f.frozen_after and g.frozen_after and f.values.size == g.values.size
    if exact_tail:
        last_all = running[-1]
        # beyond the grid the difference is constant, so max_[0,n] is running[-1] for n > horizon
        tail = 2.0 ** -N * last_all
        return Interval(total + tail, total + tail)
    return Interval(total + 2.0 ** -N * last, total + 2.0 ** -N)


@dataclass(frozen=True, eq=False)
class LocalTimeGraph:
    """Local-time curves L(x, .) on a time grid, one row per vertex."""

    vertices: np.ndarray
    curves: np.ndarray
    step: float
    frozen_after: bool = False
    source: object = None
    origin: np.ndarray | None = None

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=int)
        c = np.asarray(self.curves, float).reshape(v.size, -1) if v.size else np.zeros((0, 1))
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "curves", c)
        origin = v if self.origin is None else np.asarray(self.origin, dtype=int)
        object.__setattr__(self, "origin", origin)

    def same_curve(self, i: int, other: "LocalTimeGraph", j: int) -> bool:
        """Rows sampled from the same local-time field at the same vertex agree for all t."""
        return (self.source is not None and self.source is other.source
                and self.origin[i] == other.origin[j])

    def row(self, i: int) -> GridFunction:
        return GridFunction(self.curves[i], self.step, self.frozen_after)

    def subset(self, keep: np.ndarray, relabel: np.ndarray | None = None) -> "LocalTimeGraph":
        """Rows for the vertices in ``keep``; ``relabel`` maps old vertex ids to new ones."""
        mask = np.isin(self.vertices, keep)
        verts = self.vertices[mask]
        if relabel is not None:
            verts = relabel[verts]
        return LocalTimeGraph(verts, self.curves[mask], self.step, self.frozen_after,
                              self.source, self.origin[mask])


def local_time_graph(field: LocalTimeField, T: float, step: float,
                     vertices: Sequence[int] | None = None) -> LocalTimeGraph:
    """Sample L(x, t) on [0, T]; curves are frozen after T when the path is dead by T."""
    grid = np.arange(0.0, T + 0.5 * step, step)
    verts = np.arange(field.n) if vertices is None else np.asarray(vertices, int)
    frozen = field.path.kill <= grid[-1]
    return LocalTimeGraph(verts, field.curves(grid, verts), step, frozen, source=field)


def _curve_distance(L1: LocalTimeGraph, i: int, L2: LocalTimeGraph, j: int) -> float:
    if L1.same_curve(i, L2, j):
        return 0.0
    return float(d_uniform(L1.row(i), L2.row(j)).upper)


def _cross_cost(L1: LocalTimeGraph, L2: LocalTimeGraph, Dz: np.ndarray) -> np.ndarray:
    cost = np.empty((L1.vertices.size, L2.vertices.size))
    for i in range(L1.vertices.size):
        for j in range(L2.vertices.size):
            cost[i, j] = max(Dz[i, j], _curve_distance(L1, i, L2, j))
    return cost


def d_hl(L1: LocalTimeGraph, L2: LocalTimeGraph, Z: FiniteMetricSpace, embed1=None, embed2=None,
         C: Correspondence | None = None) -> float:
    """Distance between local-time graphs under the max of d^Z and d_U.

    Without a correspondence this is the Hausdorff distance of the two
    graphs; with one it is the sup over matched vertices.  The d_U upper
    bound is used, so the result is an upper bound.
    """
    if L1.vertices.size == 0 and L2.vertices.size == 0:
        return 0.0
    if L1.vertices.size == 0 or L2.vertices.size == 0:
        return math.inf
    e1 = L1.vertices if embed1 is None else np.asarray(embed1)[L1.vertices]
    e2 = L2.vertices if embed2 is None else np.asarray(embed2)[L2.vertices]
    Dz = Z.d[np.ix_(e1, e2)]
    if C is None:
        cost = _cross_cost(L1, L2, Dz)
        return float(max(cost.min(axis=1).max(), cost.min(axis=0).max()))
    row = {int(v): i for i, v in enumerate(L1.vertices)}
    col = {int(v): j for j, v in enumerate(L2.vertices)}
    worst = 0.0
    for a, b in C.pairs:
        i, j = row[int(a)], col[int(b)]
        worst = max(worst, Dz[i, j], _curve_distance(L1, i, L2, j))
    return float(worst)


# ---------------------------------------------------------------------------
# full tuples
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ProcessTuple:
    """(space, root, measure, path, local times) with path states indexing the space."""

    space: RootedMeasuredSpace
    path: KilledPath
    local_times: LocalTimeGraph


def _identification(C: Correspondence, X: FiniteMetricSpace, Y: FiniteMetricSpace):
    """If C is the graph of an isometry, return the map Y -> X; else None."""
    if len(C) != X.n or X.n != Y.n:
        return None
    if np.unique(C.pairs[:, 0]).size != X.n or np.unique(C.pairs[:, 1]).size != Y.n:
        return None
    if distortion(C, X, Y) != 0:
        return None
    inv = np.empty(Y.n, dtype=int)
    inv[C.pairs[:, 1]] = C.pairs[:, 0]
    return inv


def d_dc(P1: ProcessTuple, P2: ProcessTuple, C: Correspondence, delta: float = 1e-9,
         budget: int = 3) -> dict:
    """Upper bound on the compact tuple distance from one correspondence.

    Both tuples are embedded in the space glued along C (or identified when
    C is an isometry), and the root, Prohorov, path and local-time terms are
    evaluated there.
    """
    X, Y = P1.space.space, P2.space.space
    ident = _identification(C, X, Y)
    if ident is not None:
        Z = X
        e1, e2 = np.arange(X.n), ident
    else:
        Z = GluedSpace(X, Y, C, delta).space
        e1, e2 = np.arange(X.n), X.n + np.arange(Y.n)
    root = float(Z.d[e1[P1.space.root], e2[P2.space.root]])
    mu1 = np.zeros(Z.n)
    mu2 = np.zeros(Z.n)
    np.add.at(mu1, e1, P1.space.weights)
    np.add.at(mu2, e2, P2.space.weights)
    proh = prohorov_distance(mu1, mu2, Z)
    j1 = j1prime_distance(P1.path, P2.path, Z, e1, e2, budget=budget)
    lt = d_hl(P1.local_times, P2.local_times, Z, e1, e2, C)
    value = max(root, proh, j1, lt)
    return {"value": value, "root": root, "prohorov": proh, "j1": j1, "local_times": lt}


def restrict_tuple(P: ProcessTuple, r: float):
    """Restriction to the open ball of radius r: the path is killed when it leaves."""
    keep = ball_indices(P.space, r)
    relabel = np.full(P.space.n, -1, dtype=int)
    relabel[keep] = np.arange(keep.size)
    root = int(relabel[P.space.root])
    space = RootedMeasuredSpace(P.space.space.subspace(keep), root, P.space.weights[keep])
    eta = exit_time(P.path, keep)
    path = kill(P.path, eta) if eta < P.path.kill else P.path
    if path.n_segments:
        path = KilledPath(path.times, relabel[path.states], path.kill, path.horizon)
    return ProcessTuple(space, path, P.local_times.subset(keep, relabel)), keep


def _restrict_correspondence(C: Correspondence, keep1, keep2, roots) -> Correspondence:
    r1 = np.full(C.nx, -1)
    r2 = np.full(C.ny, -1)
    r1[keep1] = np.arange(len(keep1))
    r2[keep2] = np.arange(len(keep2))
    a, b = r1[C.pairs[:, 0]], r2[C.pairs[:, 1]]
    pairs = [np.column_stack([a, b])[(a >= 0) & (b >= 0)]]
    # points whose partners all lie outside the other ball are matched to its root
    lonely1 = np.setdiff1d(np.arange(len(keep1)), pairs[0][:, 0])
    lonely2 = np.setdiff1d(np.arange(len(keep2)), pairs[0][:, 1])
    pairs.append(np.column_stack([lonely1, np.full(lonely1.size, roots[1])]))
    pairs.append(np.column_stack([np.full(lonely2.size, roots[0]), lonely2]))
    return Correspondence(np.vstack(pairs), len(keep1), len(keep2))


def d_d(P1: ProcessTuple, P2: ProcessTuple, C: Correspondence, delta: float = 1e-9,
        budget: int = 3) -> dict:
    """Integral of e^-r (1 ^ d_Dc of the radius-r restrictions) over r > 0.

    The restrictions only change when r passes an attained root distance, so
    the integrand is a step function and the integral is a finite sum.
    """
    radii = np.unique(np.concatenate([P1.space.d[P1.space.root], P2.space.d[P2.space.root]]))
    radii = radii[radii > 0]
    breaks = np.concatenate([[0.0], radii, [math.inf]])
    total = 0.0
    rows = []
    for lo, hi in zip(breaks[:-1], breaks[1:]):
        r = hi if math.isfinite(hi) else lo + 1.0
        Q1, k1 = restrict_tuple(P1, r)
        Q2, k2 = restrict_tuple(P2, r)
        Cr = _restrict_correspondence(C, k1, k2, (Q1.space.root, Q2.space.root))
        val = min(1.0, d_dc(Q1, Q2, Cr, delta, budget)["value"])
        weight = math.exp(-lo) - (math.exp(-hi) if math.isfinite(hi) else 0.0)
        total += weight * val
        rows.append({"from": float(lo), "to": float(hi), "integrand": val})
    return {"value": total, "intervals": rows}
