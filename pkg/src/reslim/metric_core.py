"""Finite rooted measured metric spaces and the primitive distances built on them.

Everything here works on dense distance matrices.  Spaces are immutable after
construction, so they can be shared freely between workers.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import maximum_flow

METRIC_TOL = 1e-9
# Full O(n^3) triangle checks are skipped above this size for trusted inputs.
TRIANGLE_CHECK_MAX_N = 400
EXACT_PROHOROV_MAX_N = 20


class MetricError(ValueError):
    """Raised when a matrix fails the metric axioms."""


def _check_triangle(d: np.ndarray, tol: float) -> None:
    n = d.shape[0]
    for k in range(n):
        # d[i, j] <= d[i, k] + d[k, j] for every i, j
        viol = d - (d[:, k][:, None] + d[k, :][None, :])
        if viol.max(initial=-np.inf) > tol:
            i, j = np.unravel_index(np.argmax(viol), viol.shape)
            raise MetricError(
                f"triangle inequality fails: d({i},{j}) > d({i},{k}) + d({k},{j})"
            )


@dataclass(frozen=True, eq=False)
class FiniteMetricSpace:
    """A finite metric space stored as a symmetric distance matrix.

    Set ``trusted=True`` when the matrix comes from a construction that is a
    metric by design (tree distances, glued spaces); the cubic triangle check
    is then skipped, but symmetry, the zero diagonal and positivity are still
    verified.
    """

    d: np.ndarray
    labels: tuple = ()
    trusted: bool = False

    def __post_init__(self):
        d = np.array(self.d, dtype=float)
        if d.ndim != 2 or d.shape[0] != d.shape[1]:
            raise MetricError("distance matrix must be square")
        n = d.shape[0]
        if n == 0:
            raise MetricError("a metric space needs at least one point")
        if not np.all(np.isfinite(d)):
            raise MetricError("distances must be finite")
        if np.abs(np.diag(d)).max() > METRIC_TOL:
            raise MetricError("diagonal must be zero")
        if np.abs(d - d.T).max() > METRIC_TOL:
            raise MetricError("distance matrix must be symmetric")
        d = 0.5 * (d + d.T)
        np.fill_diagonal(d, 0.0)
        off = d[~np.eye(n, dtype=bool)]
        if off.size and off.min() <= 0:
            raise MetricError("distinct points must be at positive distance")
        if not self.trusted and n <= TRIANGLE_CHECK_MAX_N:
            _check_triangle(d, METRIC_TOL)
        d.setflags(write=False)
        object.__setattr__(self, "d", d)
        labels = tuple(self.labels) if self.labels else tuple(range(n))
        if len(labels) != n:
            raise MetricError("one label per point is required")
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.d.shape[0]

    def diameter(self) -> float:
        return float(self.d.max())

    def subspace(self, idx: Sequence[int]) -> "FiniteMetricSpace":
        idx = np.asarray(idx, dtype=int)
        return FiniteMetricSpace(
            self.d[np.ix_(idx, idx)], tuple(self.labels[i] for i in idx), trusted=True
        )

    def scaled(self, factor: float) -> "FiniteMetricSpace":
        if factor <= 0:
            raise ValueError("scale factor must be positive")
        return FiniteMetricSpace(self.d * factor, self.labels, trusted=True)


@dataclass(frozen=True, eq=False)
class RootedMeasuredSpace:
    """A finite metric space together with a root and a fully supported measure."""

    space: FiniteMetricSpace
    root: int
    weights: np.ndarray = field(default=None)

    def __post_init__(self):
        w = np.ones(self.space.n) if self.weights is None else np.array(self.weights, float)
        if w.shape != (self.space.n,):
            raise ValueError("one weight per point is required")
        if np.any(w <= 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and strictly positive")
        if not 0 <= int(self.root) < self.space.n:
            raise ValueError("root index out of range")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "root", int(self.root))

    @property
    def n(self) -> int:
        return self.space.n

    @property
    def d(self) -> np.ndarray:
        return self.space.d

    def total_mass(self) -> float:
        return float(self.weights.sum())

    def to_json(self) -> dict:
        return {
            "points": list(self.space.labels),
            "distance_matrix": self.space.d.tolist(),
            "root": self.root,
            "weights": self.weights.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "RootedMeasuredSpace":
        for key in ("distance_matrix",):
            if key not in obj:
                raise ValueError(f"space JSON is missing '{key}'")
        d = np.asarray(obj["distance_matrix"], dtype=float)
        labels = tuple(obj.get("points") or range(d.shape[0]))
        space = FiniteMetricSpace(d, labels)
        return cls(space, int(obj.get("root", 0)), obj.get("weights"))


def load_space(path: str | Path) -> RootedMeasuredSpace:
    with open(path) as fh:
        return RootedMeasuredSpace.from_json(json.load(fh))


def save_space(space: RootedMeasuredSpace, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(space.to_json(), fh)


@dataclass(frozen=True, eq=False)
class Correspondence:
    """A relation between the points of two spaces covering both of them."""

    pairs: np.ndarray
    nx: int
    ny: int

    def __post_init__(self):
        p = np.unique(np.asarray(self.pairs, dtype=int).reshape(-1, 2), axis=0)
        if p.size == 0:
            raise ValueError("a correspondence needs at least one pair")
        if p[:, 0].min() < 0 or p[:, 0].max() >= self.nx:
            raise ValueError("left index out of range")
        if p[:, 1].min() < 0 or p[:, 1].max() >= self.ny:
            raise ValueError("right index out of range")
        if np.unique(p[:, 0]).size != self.nx or np.unique(p[:, 1]).size != self.ny:
            raise ValueError("invalid correspondence: some point has no partner")
        p.setflags(write=False)
        object.__setattr__(self, "pairs", p)

    @classmethod
    def diagonal(cls, n: int) -> "Correspondence":
        idx = np.arange(n)
        return cls(np.column_stack([idx, idx]), n, n)

    @classmethod
    def full(cls, nx: int, ny: int) -> "Correspondence":
        a, b = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
        return cls(np.column_stack([a.ravel(), b.ravel()]), nx, ny)

    def transpose(self) -> "Correspondence":
        return Correspondence(self.pairs[:, ::-1], self.ny, self.nx)

    def __len__(self) -> int:
        return self.pairs.shape[0]


def _as_index_set(A: Iterable[int], n: int) -> np.ndarray:
    idx = np.unique(np.asarray(list(A), dtype=int))
    if idx.size == 0:
        raise ValueError("empty set has no Hausdorff distance")
    if idx.min() < 0 or idx.max() >= n:
        raise ValueError("subset index out of range")
    return idx


def hausdorff_distance(A: Iterable[int], B: Iterable[int], Z: FiniteMetricSpace) -> float:
    """Hausdorff distance between two nonempty point subsets of ``Z``."""
    a = _as_index_set(A, Z.n)
    b = _as_index_set(B, Z.n)
    block = Z.d[np.ix_(a, b)]
    return float(max(block.min(axis=1).max(), block.min(axis=0).max()))


def distortion(C: Correspondence, X: FiniteMetricSpace, Y: FiniteMetricSpace,
               chunk: int = 2048) -> float:
    """Largest discrepancy |d_X(x,x') - d_Y(y,y')| over pairs of related pairs."""
    if C.nx != X.n or C.ny != Y.n:
        raise ValueError("invalid correspondence for these spaces")
    a, b = C.pairs[:, 0], C.pairs[:, 1]
    worst = 0.0
    for start in range(0, a.size, chunk):
        sl = slice(start, start + chunk)
        diff = np.abs(X.d[np.ix_(a[sl], a)] - Y.d[np.ix_(b[sl], b)])
        worst = max(worst, float(diff.max()))
    return worst


def ball_indices(G: RootedMeasuredSpace, r: float) -> np.ndarray:
    """Indices of {x : d(root, x) < r} together with the root itself."""
    if r < 0:
        raise ValueError("radius must be nonnegative")
    keep = np.flatnonzero(G.d[G.root] < r)
    if G.root not in keep:
        keep = np.sort(np.append(keep, G.root))
    return keep


def restrict_to_ball(G: RootedMeasuredSpace, r: float) -> RootedMeasuredSpace:
    """Restriction to the open ball of radius ``r`` around the root.

    In a finite space the closure of the open ball is the open ball itself;
    the root is kept even when r = 0.
    """
    keep = ball_indices(G, r)
    root = int(np.flatnonzero(keep == G.root)[0])
    return RootedMeasuredSpace(G.space.subspace(keep), root, G.weights[keep])


# ---------------------------------------------------------------------------
# Prohorov distance
# ---------------------------------------------------------------------------

def _check_measures(mu1, mu2, n):
    mu1 = np.asarray(mu1, dtype=float)
    mu2 = np.asarray(mu2, dtype=float)
    if mu1.shape != (n,) or mu2.shape != (n,):
        raise ValueError("measures must have one entry per point")
    if np.any(mu1 < 0) or np.any(mu2 < 0):
        raise ValueError("measures must be nonnegative")
    return mu1, mu2


def _subset_sums(w: np.ndarray) -> np.ndarray:
    out = np.zeros(1)
    for x in w:
        out = np.concatenate([out, out + x])
    return out


def _subset_unions(masks: Sequence[int]) -> np.ndarray:
    out = np.zeros(1, dtype=np.int64)
    for m in masks:
        out = np.concatenate([out, out | np.int64(m)])
    return out


def _excess_by_enumeration(mu1, mu2, d, level, sums1, sums2):
    """max over all subsets A of mu_i(A) - mu_j(A^level), both orders."""
    n = d.shape[0]
    nb = [int(sum(1 << j for j in range(n) if d[i, j] <= level)) for i in range(n)]
    hull = _subset_unions(nb)
    return float(max((sums1 - sums2[hull]).max(), (sums2 - sums1[hull]).max()))


def _max_transport(mu1, mu2, d, level, scale):
    """Largest mass movable from mu1 to mu2 along pairs at distance <= level.

    Capacities are floored to integers after scaling, so the returned value is
    the value of a feasible transport and never exceeds the true optimum.
    """
    s = np.flatnonzero(mu1 > 0)
    t = np.flatnonzero(mu2 > 0)
    rows, cols = np.nonzero(d[np.ix_(s, t)] <= level)
    ns, nt = s.size, t.size
    src, sink = 0, ns + nt + 1
    cap1 = np.floor(mu1[s] * scale).astype(np.int64)
    cap2 = np.floor(mu2[t] * scale).astype(np.int64)
    big = int(max(cap1.sum(), cap2.sum(), 1))
    u = np.concatenate([np.zeros(ns, int), 1 + rows, 1 + ns + np.arange(nt)])
    v = np.concatenate([1 + np.arange(ns), 1 + ns + cols, np.full(nt, sink)])
    c = np.concatenate([cap1, np.full(rows.size, big), cap2])
    graph = sparse.csr_matrix((c.astype(np.int32), (u, v)), shape=(sink + 1, sink + 1))
    return maximum_flow(graph, src, sink, method="dinic").flow_value / scale


def prohorov_distance(mu1, mu2, Z: FiniteMetricSpace, method: str = "auto") -> float:
    """Prohorov distance between two finite measures on ``Z``.

    Neighbourhoods are open: A^eps = {z : d(z, A) < eps}.  For eps in
    (d_j, d_{j+1}] between consecutive attained distances, A^eps equals the
    closed d_j-neighbourhood, so the infimum is min_j max(d_j, excess_j) where
    excess_j is the worst one-sided mass deficit at level d_j.  The excess is
    nonincreasing in j, which makes the minimiser findable by bisection.

    ``method='enumerate'`` evaluates the excess over all 2^n subsets (n <= 20).
    ``method='flow'`` uses the max-flow/min-cut identity
    max_A [mu1(A) - mu2(A^level)] = mu1(Z) - maxflow, with integer-scaled
    capacities; the result is a certified upper bound within ~n * 2^-30 of the
    exact value.
    """
    mu1, mu2 = _check_measures(mu1, mu2, Z.n)
    if method == "auto":
        method = "enumerate" if Z.n <= EXACT_PROHOROV_MAX_N else "flow"
    if method == "enumerate":
        if Z.n > EXACT_PROHOROV_MAX_N:
            raise ValueError(f"enumeration is limited to n <= {EXACT_PROHOROV_MAX_N}")
        sums1, sums2 = _subset_sums(mu1), _subset_sums(mu2)
        levels = np.unique(np.concatenate([[0.0], Z.d.ravel()]))

        def excess(level):
            return _excess_by_enumeration(mu1, mu2, Z.d, level, sums1, sums2)
    elif method == "flow":
        m1, m2 = mu1.sum(), mu2.sum()
        top = max(m1, m2)
        if top == 0:
            return 0.0
        scale = float(2 ** 30) / top
        s, t = mu1 > 0, mu2 > 0
        levels = np.unique(np.concatenate([[0.0], Z.d[np.ix_(s, t)].ravel()]))

        def excess(level):
            return float(max(0.0, top - _max_transport(mu1, mu2, Z.d, level, scale)))
    else:
        raise ValueError(f"unknown method {method!r}")
    return _bisect_levels(levels, excess)


def _bisect_levels(levels: np.ndarray, excess) -> float:
    # smallest j with excess(levels[j]) <= levels[j]
    lo, hi = 0, levels.size
    cache: dict[int, float] = {}

    def ex(j):
        if j not in cache:
            cache[j] = excess(levels[j])
        return cache[j]

    while lo < hi:
        mid = (lo + hi) // 2
        if ex(mid) <= levels[mid]:
            hi = mid
        else:
            lo = mid + 1
    best = np.inf
    if lo < levels.size:
        best = float(levels[lo])
    if lo >= 1:
        best = min(best, ex(lo - 1))
    return float(best)


def prohorov_by_subsets(mu1, mu2, Z: FiniteMetricSpace, eps_grid) -> float:
    """Reference implementation: smallest eps on a grid that passes the defining test.

    Checks mu1(A) <= mu2(A^eps) + eps and the reverse for every subset A with
    the open neighbourhood.  Used as an oracle in tests.
    """
    mu1, mu2 = _check_measures(mu1, mu2, Z.n)
    n = Z.n
    for eps in sorted(eps_grid):
        ok = True
        for mask in range(1, 1 << n):
            A = [i for i in range(n) if mask >> i & 1]
            near = np.any(Z.d[A] < eps, axis=0)
            if mu1[A].sum() > mu2[near].sum() + eps + 1e-12:
                ok = False
                break
            if mu2[A].sum() > mu1[near].sum() + eps + 1e-12:
                ok = False
                break
        if ok:
            return float(eps)
    return float("inf")
