"""Plane trees, excursion-coded real trees, Galton-Watson and UST samplers.

Trees are stored as parent arrays.  Children of a node are ordered by node
index, which fixes the plane structure; every sampler here labels nodes in
depth-first (preorder) order, so that convention is the natural one.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
import json
from typing import Sequence

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import shortest_path

from .entropy import VolumeProfile
from .gh import GHPBound, ghp_upper_bound
from .metric_core import Correspondence, FiniteMetricSpace, RootedMeasuredSpace
from .resistance import ResistanceNetwork
from .streams import as_generator

ZERO_TOL = 1e-12


class TreeError(ValueError):
    pass


# ---------------------------------------------------------------------------
# plane trees
# ---------------------------------------------------------------------------

class PlaneTree:
    """Rooted ordered tree given by a parent array (the root has parent -1)."""

    def __init__(self, parent: Sequence[int]):
        parent = np.array(parent, dtype=np.int64).ravel()
        if parent.size == 0:
            raise TreeError("a tree needs at least one node")
        roots = np.flatnonzero(parent < 0)
        if roots.size != 1:
            raise TreeError(f"expected exactly one root, found {roots.size}")
        if parent.max() >= parent.size:
            raise TreeError("parent index out of range")
        self.parent = parent
        self.parent.setflags(write=False)
        self.root = int(roots[0])
        children: list[list[int]] = [[] for _ in range(parent.size)]
        for v in range(parent.size):
            if parent[v] >= 0:
                children[parent[v]].append(v)
        self.children = children
        depth = np.full(parent.size, -1, dtype=np.int64)
        depth[self.root] = 0
        order = [self.root]
        for u in order:
            for v in children[u]:
                depth[v] = depth[u] + 1
                order.append(v)
        if len(order) != parent.size:
            raise TreeError("parent array contains a cycle")
        self.depth = depth
        self.bfs_order = np.array(order)

    @property
    def n_nodes(self) -> int:
        return self.parent.size

    @property
    def n_edges(self) -> int:
        return self.parent.size - 1

    def edges(self) -> np.ndarray:
        kids = np.flatnonzero(self.parent >= 0)
        return np.column_stack([self.parent[kids], kids])

    def adjacency(self) -> sparse.csr_matrix:
        e = self.edges()
        n = self.n_nodes
        data = np.ones(2 * len(e))
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        return sparse.csr_matrix((data, (rows, cols)), shape=(n, n))

    def distance_matrix(self) -> np.ndarray:
        """Graph distances by breadth-first search from every node."""
        if self.n_nodes == 1:
            return np.zeros((1, 1))
        return shortest_path(self.adjacency(), method="D", unweighted=True, directed=False)

    def preorder_parent(self) -> np.ndarray:
        """Parent array after relabelling nodes in depth-first order.

        Two plane trees are isomorphic exactly when these arrays agree.
        """
        order = []
        stack = [self.root]
        while stack:
            u = stack.pop()
            order.append(u)
            stack.extend(reversed(self.children[u]))
        label = np.empty(self.n_nodes, dtype=np.int64)
        label[order] = np.arange(self.n_nodes)
        out = np.full(self.n_nodes, -1, dtype=np.int64)
        for u in order:
            if self.parent[u] >= 0:
                out[label[u]] = label[self.parent[u]]
        return out

    def isomorphic(self, other: "PlaneTree") -> bool:
        return self.n_nodes == other.n_nodes and bool(
            np.array_equal(self.preorder_parent(), other.preorder_parent()))

    def to_json(self) -> dict:
        return {"parent": self.parent.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "PlaneTree":
        if "parent" not in obj:
            raise TreeError("tree JSON is missing 'parent'")
        return cls(obj["parent"])

    def rooted_space(self, distance_scale: float = 1.0, mass: float = 1.0) -> RootedMeasuredSpace:
        """The rooted measured space (tree, a d, root, b counting measure)."""
        d = self.distance_matrix() * distance_scale
        return RootedMeasuredSpace(FiniteMetricSpace(d, trusted=True), self.root,
                                   np.full(self.n_nodes, float(mass)))


def load_tree(path: str | Path) -> PlaneTree:
    return PlaneTree.from_json(json.loads(Path(path).read_text()))


def save_tree(tree: PlaneTree, path: str | Path) -> None:
    Path(path).write_text(json.dumps(tree.to_json()))


def star_tree(leaves: int) -> PlaneTree:
    return PlaneTree([-1] + [0] * leaves)


def path_tree(n_nodes: int) -> PlaneTree:
    return PlaneTree(np.arange(n_nodes) - 1)


def contour_walk(tree: PlaneTree) -> np.ndarray:
    """The depth-first walk f(0..2n): the node occupied at each integer time."""
    walk = [tree.root]
    next_child = [0] * tree.n_nodes
    u = tree.root
    for _ in range(2 * tree.n_edges):
        kids = tree.children[u]
        if next_child[u] < len(kids):
            v = kids[next_child[u]]
            next_child[u] += 1
        else:
            v = int(tree.parent[u])
        walk.append(v)
        u = v
    return np.array(walk, dtype=np.int64)


def contour_and_height(tree: PlaneTree):
    """Contour function on [0, 2n] (unit grid) and height function in preorder."""
    walk = contour_walk(tree)
    contour = tree.depth[walk].astype(float)
    first_visit = np.unique(walk, return_index=True)[1]
    preorder = walk[np.sort(first_visit)]
    return ExcursionFunction(contour, 1.0), tree.depth[preorder].astype(float)


def tree_from_contour(values) -> PlaneTree:
    """Decode a plane tree from a contour sequence with +-1 steps."""
    c = np.asarray(values.values if isinstance(values, ExcursionFunction) else values, float)
    steps = np.diff(c)
    if c[0] != 0 or c[-1] != 0 or np.any(c < 0) or not np.all(np.abs(steps) == 1):
        raise TreeError("contour must start and end at 0 with steps of +-1")
    parent = [-1]
    u = 0
    for s in steps:
        if s > 0:
            parent.append(u)
            u = len(parent) - 1
        else:
            u = parent[u]
    return PlaneTree(parent)


# ---------------------------------------------------------------------------
# excursions and the real trees they code
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ExcursionFunction:
    """Nonnegative function on the grid 0, h, 2h, ... vanishing at both ends."""

    values: np.ndarray
    step: float = 1.0

    def __post_init__(self):
        v = np.array(self.values, dtype=float).ravel()
        if v.size == 0 or not np.all(np.isfinite(v)):
            raise ValueError("excursion needs finite samples")
        if self.step <= 0:
            raise ValueError("grid step must be positive")
        scale = max(1.0, float(np.abs(v).max()))
        if abs(v[0]) > ZERO_TOL * scale:
            raise ValueError("excursion must start at 0")
        if abs(v[-1]) > ZERO_TOL * scale:
            raise ValueError("excursion must return to 0 at the end of the grid")
        if v.min() < -ZERO_TOL * scale:
            raise ValueError("excursion must be nonnegative")
        v = np.maximum(v, 0.0)
        v[0] = v[-1] = 0.0
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "step", float(self.step))

    @property
    def size(self) -> int:
        return self.values.size

    @property
    def times(self) -> np.ndarray:
        return self.step * np.arange(self.size)

    @property
    def support_end(self) -> float:
        """sigma^f for the piecewise-linear interpolant."""
        pos = np.flatnonzero(self.values > 0)
        return 0.0 if pos.size == 0 else float((pos[-1] + 1) * self.step)

    def modulus(self) -> float:
        """Largest change over one grid step."""
        return float(np.abs(np.diff(self.values)).max()) if self.size > 1 else 0.0

    def padded(self, size: int) -> np.ndarray:
        if size < self.size:
            raise ValueError("cannot pad to a shorter grid")
        return np.concatenate([self.values, np.zeros(size - self.size)])

    def scaled(self, height: float, speed: float) -> "ExcursionFunction":
        """The excursion t -> height * f(speed * t) on the correspondingly stretched grid."""
        if height <= 0 or speed <= 0:
            raise ValueError("scaling factors must be positive")
        return ExcursionFunction(height * self.values, self.step / speed)

    def refined(self, factor: int) -> "ExcursionFunction":
        """Linear interpolation onto a grid ``factor`` times finer."""
        factor = int(factor)
        if factor < 1:
            raise ValueError("refinement factor must be at least 1")
        fine = np.linspace(0, self.size - 1, (self.size - 1) * factor + 1)
        return ExcursionFunction(np.interp(fine, np.arange(self.size), self.values),
                                 self.step / factor)


def excursion_pseudometric(values) -> np.ndarray:
    """f(s) + f(t) - 2 min f on [s, t] for all pairs of grid times."""
    f = np.asarray(values, float)
    M = f.size
    D = np.empty((M, M))
    for i in range(M):
        running_min = np.minimum.accumulate(f[i:])
        row = f[i] + f[i:] - 2.0 * running_min
        D[i, i:] = row
        D[i:, i] = row
    return D


@dataclass(frozen=True, eq=False)
class CodedRealTree:
    """Grid discretization of the real tree coded by an excursion.

    ``class_of[k]`` is the point of ``space`` that grid time k is glued to.
    Each grid time before the end of the support carries mass
    ``mass_scale * step``, so the total mass is the support length.
    """

    space: RootedMeasuredSpace
    class_of: np.ndarray
    excursion: ExcursionFunction
    distance_scale: float = 1.0
    mass_scale: float = 1.0


def code_real_tree(f: ExcursionFunction, distance_scale: float = 1.0,
                   mass_scale: float = 1.0) -> CodedRealTree:
    if not isinstance(f, ExcursionFunction):
        f = ExcursionFunction(f)
    sigma = f.support_end
    if sigma == 0:
        raise ValueError("excursion is identically zero, so its tree carries no mass")
    D = excursion_pseudometric(f.values)
    tol = ZERO_TOL * max(1.0, float(f.values.max()))
    zero = D <= tol
    rep = zero.argmax(axis=1)                 # smallest grid time in the same class
    reps, class_of = np.unique(rep, return_inverse=True)
    alive = f.times < sigma - 0.5 * f.step    # left endpoints of the support intervals
    mass = np.bincount(class_of[alive], minlength=reps.size) * f.step * mass_scale
    d = D[np.ix_(reps, reps)] * distance_scale
    space = FiniteMetricSpace(d, tuple(int(r) for r in reps), trusted=True)
    G = RootedMeasuredSpace(space, int(class_of[0]), mass)
    return CodedRealTree(G, class_of, f, distance_scale, mass_scale)


# ---------------------------------------------------------------------------
# GHP comparison bounds
# ---------------------------------------------------------------------------

@dataclass
class TreeBoundReport:
    bound: GHPBound
    claimed_bound: float
    slack: float

    @property
    def holds(self) -> bool:
        return self.bound.bound <= self.claimed_bound + self.slack + 1e-12

    def as_dict(self) -> dict:
        out = self.bound.as_dict()
        out.update(claimed_bound=self.claimed_bound, slack=self.slack, holds=self.holds)
        return out


def deeper_node(tree: PlaneTree, walk: np.ndarray, times: np.ndarray) -> np.ndarray:
    """The continuous walk: at time t, whichever of f(floor t), f(ceil t) is deeper."""
    lo = walk[np.floor(times).astype(int)]
    hi = walk[np.ceil(times).astype(int)]
    return np.where(tree.depth[hi] >= tree.depth[lo], hi, lo)


def ghp_tree_bounds(tree: PlaneTree, a: float, b: float, refine: int = 2,
                    deltas: Sequence[float] = (1e-9,), method: str = "auto") -> TreeBoundReport:
    """Compare the scaled discrete tree with the real tree coded by its contour.

    The contour is sampled on a grid of step 1/refine.  The correspondence
    pairs each grid time t with the deeper walk endpoint at t and with the
    class of t in the coded tree.  Replacing the continuum tree by its grid
    discretization costs at most a/refine in GHP distance, which is reported
    as slack.
    """
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    if tree.n_edges == 0:
        raise ValueError("the contour of a single node codes an empty measure")
    contour, _ = contour_and_height(tree)
    fine = contour.refined(refine)
    real = code_real_tree(fine, distance_scale=a, mass_scale=b / 2)
    walk = contour_walk(tree)
    nodes = deeper_node(tree, walk, fine.times)
    C = Correspondence(np.column_stack([nodes, real.class_of]), tree.n_nodes, real.space.n)
    discrete = tree.rooted_space(a, b)
    bound = ghp_upper_bound(discrete, real.space, C, deltas, method)
    return TreeBoundReport(bound, 1.5 * a + b, a / refine)


def ghp_excursion_bounds(f: ExcursionFunction, g: ExcursionFunction,
                         deltas: Sequence[float] = (1e-9,), method: str = "auto") -> TreeBoundReport:
    """Compare the trees coded by two excursions sampled on a common grid.

    Grid times are paired with themselves.  Each grid tree is within twice
    the one-step modulus of the tree coded by the interpolant, and that
    discretization error is reported as slack.
    """
    if not math.isclose(f.step, g.step, rel_tol=1e-12):
        raise ValueError("excursions must share a grid step")
    M = max(f.size, g.size)
    F = ExcursionFunction(f.padded(M), f.step)
    G = ExcursionFunction(g.padded(M), g.step)
    TF, TG = code_real_tree(F), code_real_tree(G)
    C = Correspondence(np.column_stack([TF.class_of, TG.class_of]), TF.space.n, TG.space.n)
    bound = ghp_upper_bound(TF.space, TG.space, C, deltas, method)
    claimed = 6 * float(np.abs(F.values - G.values).max()) + abs(F.support_end - G.support_end)
    return TreeBoundReport(bound, claimed, 2 * (F.modulus() + G.modulus()))


# ---------------------------------------------------------------------------
# Galton-Watson trees conditioned on their size
# ---------------------------------------------------------------------------

def geometric_offspring(ratio: float = 0.5, tail: float = 1e-18) -> np.ndarray:
    """P(k) = (1 - q) q^k truncated where the remaining tail is below ``tail``."""
    kmax = int(math.ceil(math.log(tail) / math.log(ratio)))
    p = (1 - ratio) * ratio ** np.arange(kmax + 1)
    return p / p.sum()


def offspring_variance(p) -> float:
    p = np.asarray(p, float)
    k = np.arange(p.size)
    mean = float(k @ p)
    return float((k - mean) ** 2 @ p)


def check_offspring(p) -> np.ndarray:
    p = np.asarray(p, float)
    if p.ndim != 1 or np.any(p < 0) or not math.isclose(p.sum(), 1.0, abs_tol=1e-9):
        raise ValueError("offspring law must be a probability vector")
    if p[0] <= 0:
        raise ValueError("offspring law needs p(0) > 0")
    mean = float(np.arange(p.size) @ p)
    if abs(mean - 1.0) > 1e-9:
        raise ValueError(f"offspring law must be critical (mean 1), got mean {mean}")
    return p / p.sum()


def tree_from_offspring(counts: Sequence[int]) -> PlaneTree:
    """Decode a plane tree from child counts listed in depth-first order."""
    counts = np.asarray(counts, dtype=np.int64)
    parent = np.full(counts.size, -1, dtype=np.int64)
    remaining = counts.copy()
    stack = [0]
    for v in range(1, counts.size):
        while remaining[stack[-1]] == 0:
            stack.pop()
        u = stack[-1]
        parent[v] = u
        remaining[u] -= 1
        stack.append(v)
    return PlaneTree(parent)


def cycle_lemma_rotation(counts: np.ndarray) -> np.ndarray:
    """Rotate child counts summing to len-1 so that the walk first hits -1 at the end."""
    walk = np.cumsum(counts - 1)
    start = int(np.argmin(walk)) + 1        # first time the minimum is attained
    return np.roll(counts, -start)


def gw_tree_conditioned(offspring, n: int, rng=None, max_attempts: int = 100_000,
                        batch: int = 256) -> PlaneTree:
    """Galton-Watson tree conditioned to have n + 1 nodes.

    Child counts are drawn i.i.d. and accepted when they sum to n; the cycle
    lemma then picks the unique rotation that is a Lukasiewicz path, which
    is decoded in depth-first order.
    """
    p = check_offspring(offspring)
    if n < 0:
        raise ValueError("n must be nonnegative")
    rng = as_generator(rng)
    if n == 0:
        return PlaneTree([-1])
    attempts = 0
    while attempts < max_attempts:
        draws = rng.choice(p.size, size=(batch, n + 1), p=p)
        hit = np.flatnonzero(draws.sum(axis=1) == n)
        if hit.size:
            return tree_from_offspring(cycle_lemma_rotation(draws[hit[0]]))
        attempts += batch
    raise ValueError(f"no child-count sequence summing to {n} after {max_attempts} attempts")


def uniform_dyck_path(half_length: int, rng=None) -> np.ndarray:
    """Uniform Dyck path with 2 * half_length steps, as a contour sequence."""
    rng = as_generator(rng)
    steps = np.array([1] * half_length + [-1] * (half_length + 1))
    rng.shuffle(steps)
    steps = np.roll(steps, -(int(np.argmin(np.cumsum(steps))) + 1))[:-1]
    return np.concatenate([[0], np.cumsum(steps)])


# ---------------------------------------------------------------------------
# Brownian excursion
# ---------------------------------------------------------------------------

def brownian_excursions(grid_points: int, size: int, rng=None) -> np.ndarray:
    """``size`` normalized excursions on [0, 1], one per row.

    A Brownian bridge is sampled on the grid and rotated at its minimum
    (the discrete Vervaat transform).
    """
    if grid_points < 2:
        raise ValueError("need at least two grid points")
    rng = as_generator(rng)
    M = grid_points - 1
    h = 1.0 / M
    incr = rng.standard_normal((size, M)) * math.sqrt(h)
    B = np.concatenate([np.zeros((size, 1)), np.cumsum(incr, axis=1)], axis=1)
    bridge = B - np.linspace(0, 1, M + 1)[None, :] * B[:, -1:]
    start = bridge[:, :M].argmin(axis=1)
    idx = (start[:, None] + np.arange(M + 1)[None, :]) % M
    rows = np.arange(size)[:, None]
    W = bridge[rows, idx] - bridge[np.arange(size), start][:, None]
    W[:, 0] = W[:, -1] = 0.0
    return np.maximum(W, 0.0)


def brownian_excursion(grid_points: int, rng=None) -> ExcursionFunction:
    W = brownian_excursions(grid_points, 1, rng)[0]
    return ExcursionFunction(W, 1.0 / (grid_points - 1))


# ---------------------------------------------------------------------------
# volume profiles
# ---------------------------------------------------------------------------

def ball_counts(D: np.ndarray) -> np.ndarray:
    """counts[x, u] = number of nodes within integer distance u of x."""
    D = np.asarray(D).astype(np.int64)
    diam = int(D.max())
    counts = np.zeros((D.shape[0], diam + 1), dtype=np.int64)
    for x in range(D.shape[0]):
        counts[x] = np.cumsum(np.bincount(D[x], minlength=diam + 1))
    return counts


def tree_volume_profile(tree: PlaneTree, D: np.ndarray | None = None) -> VolumeProfile:
    """v(u) = smallest number of nodes in a closed ball of radius u, u = 0..diameter."""
    D = tree.distance_matrix() if D is None else D
    counts = ball_counts(D)
    return VolumeProfile(np.arange(counts.shape[1], dtype=float), counts.min(axis=0).astype(float))


def distinct_nodes_in_window(tree: PlaneTree, m1: int, m2: int, walk=None) -> np.ndarray:
    """Times in [m1, m1 + 2 m2] at which the walk sits at m2 distinct nodes.

    From the lowest contour time m3 in the window, every down-step time t
    before m3 sits at a node the reversed walk meets for the first time, and
    every up-step after m3 enters a node (the one at time t + 1) that the
    walk has never visited before.
    """
    walk = contour_walk(tree) if walk is None else walk
    C = tree.depth[walk]
    end = m1 + 2 * m2
    if m1 < 0 or m2 < 0 or end > 2 * tree.n_edges:
        raise ValueError("window must lie inside [0, 2n]")
    window = np.arange(m1, end + 1)
    m3 = int(window[np.argmin(C[window])])
    down = [t for t in range(m1, m3) if C[t] > C[t + 1]]
    up = [t + 1 for t in range(m3, end) if C[t] < C[t + 1]]
    times = np.array(sorted(down, reverse=True) + up, dtype=np.int64)[:m2]
    if times.size < m2 or np.unique(walk[times]).size != m2:
        raise AssertionError("construction failed to produce distinct nodes")
    return times


def gw_scaling(n: int, variance: float) -> float:
    """B_n = sigma * sqrt(n / 2) for a finite-variance offspring law."""
    return math.sqrt(variance) * math.sqrt(n / 2.0)


def volume_constant(tree: PlaneTree, gamma: float, scale: float, r_grid: Sequence[float],
                    D: np.ndarray | None = None) -> float:
    """Largest C with v(scale * r) / n >= min(C r^(1/gamma), 1) on the grid.

    Here n is the number of edges and ``scale`` is n / B_n.
    """
    if not 0 < gamma:
        raise ValueError("gamma must be positive")
    D = tree.distance_matrix() if D is None else D
    n = tree.n_edges
    v = tree_volume_profile(tree, D)
    best = math.inf
    for r in r_grid:
        frac = v.value_at(scale * r) / n
        if frac < 1:
            best = min(best, frac / r ** (1 / gamma))
    return best


def volume_check_gw(trees: Sequence[PlaneTree], gamma: float, constant: float,
                    r_grid: Sequence[float], variance: float, target: float = 0.9) -> dict:
    """Fraction of trees meeting the volume lower bound with the given constant."""
    consts = []
    for t in trees:
        scale = t.n_edges / gw_scaling(t.n_edges, variance)
        consts.append(volume_constant(t, gamma, scale, r_grid))
    consts = np.array(consts)
    frac = float(np.mean(consts >= constant))
    return {"fraction": frac, "target": target, "holds": frac >= target,
            "empirical_constants": consts.tolist(),
            "best_constant_at_target": float(np.quantile(consts, 1 - target))}


def ust_volume_statistic(tree: PlaneTree, r_grid: Sequence[float], power: float = 4.0) -> float:
    """min over r of inf_x mu(D(x, sqrt(n) r)) / n / r^power for a spanning tree on n nodes."""
    D = tree.distance_matrix()
    n = tree.n_nodes
    v = tree_volume_profile(tree, D)
    vals = [v.value_at(math.sqrt(n) * r) / n / r ** power for r in r_grid]
    return float(min(vals))


# ---------------------------------------------------------------------------
# uniform spanning trees
# ---------------------------------------------------------------------------

def wilson_ust(net: ResistanceNetwork, rng=None, root: int = 0) -> PlaneTree:
    """Spanning tree by loop-erased random walks (uniform for unit conductances).

    Walk steps are chosen proportionally to conductance, so on a weighted
    graph the tree has probability proportional to its conductance product.
    """
    rng = as_generator(rng)
    c = net.conductance
    n = net.n
    cum = [np.cumsum(c.data[c.indptr[i]:c.indptr[i + 1]]) for i in range(n)]
    nbrs = net.neighbours
    in_tree = np.zeros(n, dtype=bool)
    in_tree[root] = True
    nxt = np.full(n, -1, dtype=np.int64)
    buf = rng.random(4096)
    pos = 0
    for start in range(n):
        u = start
        while not in_tree[u]:
            if pos == buf.size:
                buf, pos = rng.random(4096), 0
            k = int(np.searchsorted(cum[u], buf[pos] * cum[u][-1], side="right"))
            pos += 1
            nxt[u] = nbrs[u][min(k, nbrs[u].size - 1)]
            u = nxt[u]
        u = start
        while not in_tree[u]:
            in_tree[u] = True
            u = nxt[u]
    nxt[root] = -1
    return PlaneTree(nxt)


def edge_set(tree: PlaneTree) -> frozenset:
    return frozenset(tuple(sorted(map(int, e))) for e in tree.edges())


# ---------------------------------------------------------------------------
# coupling a uniform plane tree with a Brownian excursion
# ---------------------------------------------------------------------------

def embedded_walk(values: np.ndarray, level: float):
    """Successive crossings of the lattice level * Z by a piecewise-linear path.

    ``values`` are samples on the uniform grid of [0, 1].  Returns the lattice
    indices visited and the interpolated crossing times; the first entry is
    (0, 0.0).
    """
    w = np.asarray(values, float)
    M = w.size - 1
    dt = 1.0 / M
    levels, times = [0], [0.0]
    cur = 0
    for i in range(1, M + 1):
        while True:
            up, down = (cur + 1) * level, (cur - 1) * level
            if w[i] >= up:
                target, new = up, cur + 1
            elif w[i] <= down:
                target, new = down, cur - 1
            else:
                break
            prev = w[i - 1]
            frac = 0.0 if w[i] == prev else min(1.0, max(0.0, (target - prev) / (w[i] - prev)))
            t = max((i - 1 + frac) * dt, times[-1])
            levels.append(new)
            times.append(t)
            cur = new
    return np.array(levels), np.array(times)


def excursion_tree_coupling(n: int, rng=None, fine_points: int = 2 ** 16 + 1,
                            crt_points: int = 4097, deltas: Sequence[float] = (1e-9,)) -> dict:
    """GHP bound between a rescaled uniform plane tree and a CRT discretization.

    One Brownian excursion W drives both objects.  Its crossings of the
    lattice h Z with h = (2n)^(-1/2) form a planted Dyck path; dropping the
    first and last steps gives the contour of a uniform plane tree with a
    random number N ~ n of edges.  The CRT side is the tree coded by 2W on a
    coarser grid.  Grid times are paired with the tree node whose edge the
    walk is crossing at that moment, and every node is also paired with the
    grid time nearest to its first visit.  Distances in the plane tree are
    scaled by 2h and its nodes carry mass 1/N.
    """
    rng = as_generator(rng)
    fine = brownian_excursions(fine_points, 1, rng)[0]
    h = 1.0 / math.sqrt(2 * n)
    levels, times = embedded_walk(fine, h)
    contour = levels[1:-1] - 1
    step_times = times[1:-1]
    if contour.size < 3:
        raise ValueError("excursion too small for the requested lattice; increase n")
    tree = tree_from_contour(contour)
    N = tree.n_edges
    walk = contour_walk(tree)
    sub = (fine_points - 1) // (crt_points - 1)
    if sub * (crt_points - 1) != fine_points - 1:
        raise ValueError("CRT grid must divide the fine grid")
    W = ExcursionFunction(fine[::sub], 1.0 / (crt_points - 1))
    crt = code_real_tree(ExcursionFunction(2 * W.values, W.step))
    grid_t = W.times
    j = np.searchsorted(step_times, grid_t, side="right") - 1
    inside = (j >= 0) & (j < step_times.size - 1)
    jj = np.clip(j, 0, step_times.size - 2)
    lo, hi = walk[jj], walk[jj + 1]
    node = np.where(tree.depth[hi] >= tree.depth[lo], hi, lo)
    node = np.where(inside, node, tree.root)
    first = np.unique(walk, return_index=True)[1]
    nearest = np.clip(np.rint(step_times[first] / W.step).astype(int), 0, W.size - 1)
    pairs = np.vstack([np.column_stack([node, crt.class_of]),
                       np.column_stack([np.arange(tree.n_nodes), crt.class_of[nearest]])])
    C = Correspondence(pairs, tree.n_nodes, crt.space.n)
    a = 2 * h
    discrete = tree.rooted_space(a, 1.0 / N)
    bound = ghp_upper_bound(discrete, crt.space, C, deltas, method="transport")
    return {"n": n, "edges": N, "lattice": h, "distance_scale": a, "tree": tree,
            "bound": bound}
