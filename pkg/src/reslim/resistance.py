"""Finite resistance networks.

A network is a connected weighted graph with conductances c(x, y) and a
strictly positive vertex measure mu.  Its energy is
E(f, f) = 1/2 sum_{x,y} c(x,y) (f(x) - f(y))^2 = f^T L f with L the graph
Laplacian, and the associated random walk jumps from x at total rate
sum_y c(x,y) / mu(x).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.linalg as sla
from scipy import sparse
from scipy.sparse.csgraph import connected_components, shortest_path
from scipy.sparse.linalg import cg

from .metric_core import FiniteMetricSpace, MetricError

DENSE_SOLVE_MAX_N = 2000
CG_RTOL = 1e-10


@dataclass(frozen=True, eq=False)
class ResistanceNetwork:
    """Symmetric conductances on a connected vertex set with measure ``mu``."""

    conductance: sparse.csr_matrix
    mu: np.ndarray = field(default=None)

    def __post_init__(self):
        c = sparse.csr_matrix(self.conductance, dtype=float)
        n = c.shape[0]
        if c.shape != (n, n) or n == 0:
            raise ValueError("conductance matrix must be square and nonempty")
        if c.nnz and c.data.min() < 0:
            raise ValueError("conductances must be nonnegative")
        if abs(c - c.T).max() > 1e-12 * max(1.0, abs(c).max()):
            raise ValueError("conductances must be symmetric")
        if c.diagonal().any():
            raise ValueError("self-loops are not allowed")
        c.eliminate_zeros()
        ncomp, _ = connected_components(c, directed=False)
        if ncomp != 1:
            raise ValueError("network must be connected")
        mu = np.ones(n) if self.mu is None else np.array(self.mu, dtype=float)
        if mu.shape != (n,) or np.any(mu <= 0) or not np.all(np.isfinite(mu)):
            raise ValueError("mu must be strictly positive with one entry per vertex")
        mu.setflags(write=False)
        object.__setattr__(self, "conductance", c)
        object.__setattr__(self, "mu", mu)

    @property
    def n(self) -> int:
        return self.conductance.shape[0]

    @property
    def total_mass(self) -> float:
        return float(self.mu.sum())

    @cached_property
    def degree(self) -> np.ndarray:
        return np.asarray(self.conductance.sum(axis=1)).ravel()

    @cached_property
    def laplacian(self) -> sparse.csr_matrix:
        return sparse.diags(self.degree) - self.conductance

    @cached_property
    def edges(self) -> np.ndarray:
        upper = sparse.triu(self.conductance, k=1).tocoo()
        return np.column_stack([upper.row, upper.col, upper.data])

    @property
    def is_tree(self) -> bool:
        return self.edges.shape[0] == self.n - 1

    @cached_property
    def resistance_matrix(self) -> np.ndarray:
        """All effective resistances (dense)."""
        if self.is_tree:
            return tree_resistance_matrix(self)
        return grounded_resistance_matrix(self)

    @cached_property
    def neighbours(self) -> list[np.ndarray]:
        c = self.conductance
        return [c.indices[c.indptr[i]:c.indptr[i + 1]] for i in range(self.n)]

    def to_json(self) -> dict:
        return {"edges": [[int(u), int(v), float(w)] for u, v, w in self.edges],
                "mu": self.mu.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "ResistanceNetwork":
        if "edges" not in obj:
            raise ValueError("network JSON is missing 'edges'")
        mu = obj.get("mu")
        n = len(mu) if mu is not None else 1 + max(max(int(u), int(v)) for u, v, _ in obj["edges"])
        return from_edges(n, obj["edges"], mu)


def from_edges(n: int, edges, mu=None) -> ResistanceNetwork:
    """Build a network from (u, v, conductance) triples; repeated edges add up."""
    e = np.asarray(edges, dtype=float).reshape(-1, 3)
    u, v, w = e[:, 0].astype(int), e[:, 1].astype(int), e[:, 2]
    if np.any(u == v):
        raise ValueError("self-loops are not allowed")
    c = sparse.coo_matrix((np.concatenate([w, w]), (np.concatenate([u, v]),
                           np.concatenate([v, u]))), shape=(n, n)).tocsr()
    return ResistanceNetwork(c, mu)


def load_network(path: str | Path) -> ResistanceNetwork:
    with open(path) as fh:
        return ResistanceNetwork.from_json(json.load(fh))


def save_network(net: ResistanceNetwork, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(net.to_json(), fh)


# ---------------------------------------------------------------------------
# graph builders
# ---------------------------------------------------------------------------

def path_network(n: int, conductance: float = 1.0, mu=None) -> ResistanceNetwork:
    return from_edges(n, [(i, i + 1, conductance) for i in range(n - 1)], mu)


def complete_network(n: int, conductance: float = 1.0, mu=None) -> ResistanceNetwork:
    return from_edges(n, [(i, j, conductance) for i in range(n) for j in range(i + 1, n)], mu)


def tree_network(parent, conductance=None, mu=None) -> ResistanceNetwork:
    """Network on a rooted tree given by its parent array (root has parent -1)."""
    parent = np.asarray(parent, dtype=int)
    kids = np.flatnonzero(parent >= 0)
    c = np.ones(kids.size) if conductance is None else np.asarray(conductance, float)[kids]
    return from_edges(parent.size, np.column_stack([parent[kids], kids, c]), mu)


def torus_network(side: int, dim: int, mu=None) -> ResistanceNetwork:
    """Unit-conductance nearest-neighbour graph on the discrete torus Z_side^dim."""
    if side < 3:
        raise ValueError("torus side must be at least 3 to avoid multi-edges")
    n = side ** dim
    idx = np.arange(n).reshape((side,) * dim)
    edges = []
    for axis in range(dim):
        nxt = np.roll(idx, -1, axis=axis)
        edges.append(np.column_stack([idx.ravel(), nxt.ravel(), np.ones(n)]))
    return from_edges(n, np.vstack(edges), mu)


def random_network(n: int, rng: np.random.Generator, extra_edge_prob: float = 0.3,
                   conductance_range=(0.2, 5.0), mu_range=(0.2, 3.0)) -> ResistanceNetwork:
    """A random connected network: a random recursive tree plus extra edges."""
    edges = {}
    lo, hi = conductance_range
    for v in range(1, n):
        u = int(rng.integers(v))
        edges[(u, v)] = rng.uniform(lo, hi)
    for u in range(n):
        for v in range(u + 1, n):
            if (u, v) not in edges and rng.random() < extra_edge_prob:
                edges[(u, v)] = rng.uniform(lo, hi)
    mu = rng.uniform(*mu_range, size=n)
    return from_edges(n, [(u, v, c) for (u, v), c in edges.items()], mu)


def random_tree_network(n: int, rng: np.random.Generator, resistance_range=(0.05, 1.0),
                        mu=None) -> ResistanceNetwork:
    """Random recursive tree whose edge resistances are uniform on a range."""
    parent = np.full(n, -1)
    for v in range(1, n):
        parent[v] = rng.integers(v)
    res = rng.uniform(*resistance_range, size=n)
    return tree_network(parent, 1.0 / res, mu)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def _solve_spd(A, b):
    """Solve A x = b for symmetric positive definite A (dense or sparse)."""
    if A.shape[0] <= DENSE_SOLVE_MAX_N:
        dense = A.toarray() if sparse.issparse(A) else np.asarray(A)
        return sla.solve(dense, b, assume_a="pos")
    A = sparse.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    if b.ndim == 1:
        x, info = cg(A, b, rtol=CG_RTOL, maxiter=20 * A.shape[0])
        if info != 0:
            raise RuntimeError("conjugate gradient did not converge")
        return x
    return np.column_stack([_solve_spd(A, b[:, j]) for j in range(b.shape[1])])


def effective_resistance(net: ResistanceNetwork, x: int, y: int, method: str = "auto") -> float:
    """Effective resistance between ``x`` and ``y``.

    The default solve grounds ``y`` (v(y) = 0) and injects a unit current at
    ``x``; then R(x, y) = v(x).  Trees use the series law along the path.
    """
    if x == y:
        return 0.0
    if method == "auto":
        method = "tree" if net.is_tree else "solve"
    if method == "tree":
        return float(tree_resistance_matrix(net, sources=[x])[0, y])
    if method != "solve":
        raise ValueError(f"unknown method {method!r}")
    keep = np.flatnonzero(np.arange(net.n) != y)
    L = net.laplacian[keep][:, keep]
    b = np.zeros(keep.size)
    xi = int(np.searchsorted(keep, x))
    b[xi] = 1.0
    return float(_solve_spd(L, b)[xi])


def grounded_resistance_matrix(net: ResistanceNetwork) -> np.ndarray:
    """Dense resistance matrix from the inverse of the Laplacian grounded at 0."""
    n = net.n
    G = np.zeros((n, n))
    if n > 1:
        L = net.laplacian.toarray()[1:, 1:]
        G[1:, 1:] = sla.inv(L)
    g = np.diag(G)
    R = g[:, None] + g[None, :] - 2 * G
    R = 0.5 * (R + R.T)
    np.fill_diagonal(R, 0.0)
    return np.maximum(R, 0.0)


def pinv_resistance_matrix(net: ResistanceNetwork) -> np.ndarray:
    """Resistance matrix from the Moore-Penrose pseudo-inverse (reference route)."""
    Lp = np.linalg.pinv(net.laplacian.toarray())
    g = np.diag(Lp)
    R = g[:, None] + g[None, :] - 2 * Lp
    np.fill_diagonal(R, 0.0)
    return R


def tree_resistance_matrix(net: ResistanceNetwork, sources=None) -> np.ndarray:
    """Series-law resistances on a tree: sums of 1/c along the unique path."""
    if not net.is_tree:
        raise ValueError("network is not a tree")
    c = net.conductance.copy()
    c.data = 1.0 / c.data
    return shortest_path(c, method="D", directed=False, indices=sources)


def resistance_space(net: ResistanceNetwork) -> FiniteMetricSpace:
    return FiniteMetricSpace(net.resistance_matrix, trusted=net.n > 200)


# ---------------------------------------------------------------------------
# potentials and the Gaussian metric
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PotentialMatrix:
    """Density u_alpha(x, y) of the resolvent with respect to mu."""

    alpha: float
    u: np.ndarray

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        u = np.array(self.u, dtype=float)
        u.setflags(write=False)
        object.__setattr__(self, "u", u)


def potential_density(net: ResistanceNetwork, alpha: float = 1.0) -> PotentialMatrix:
    """u_alpha = (L + alpha diag(mu))^-1, i.e. E_alpha(u_alpha(x, .), f) = f(x)."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    A = net.laplacian + alpha * sparse.diags(net.mu)
    if net.n <= DENSE_SOLVE_MAX_N:
        U = sla.inv(A.toarray())
    else:
        U = _solve_spd(A, np.eye(net.n))
    U = 0.5 * (U + U.T)
    return PotentialMatrix(alpha, U)


def energy_alpha(net: ResistanceNetwork, alpha: float, f: np.ndarray, g: np.ndarray) -> float:
    """E_alpha(f, g) = 1/2 sum c(x,y)(f(x)-f(y))(g(x)-g(y)) + alpha sum f g mu."""
    e = net.edges
    u, v, c = e[:, 0].astype(int), e[:, 1].astype(int), e[:, 2]
    return float(np.sum(c * (f[u] - f[v]) * (g[u] - g[v])) + alpha * np.sum(f * g * net.mu))


def potential_inequality_violations(U: PotentialMatrix, R: np.ndarray, tol: float = 1e-10) -> int:
    """Count triples with (u(x,y) - u(x,z))^2 > u(x,x) R(y,z)."""
    u = U.u
    n = u.shape[0]
    count = 0
    for x in range(n):
        lhs = (u[x][:, None] - u[x][None, :]) ** 2
        rhs = u[x, x] * R
        count += int(np.sum(lhs > rhs + tol * (1 + rhs)))
    return count


def gaussian_distance_matrix(cov: np.ndarray) -> np.ndarray:
    """d_G(x,y) = sqrt(cov(x,x) + cov(y,y) - 2 cov(x,y))."""
    cov = np.asarray(cov, dtype=float)
    g = np.diag(cov)
    sq = g[:, None] + g[None, :] - 2 * cov
    # (e_x - e_y)^T cov (e_x - e_y) >= 2 lambda_min, so a covariance admitted
    # with eigenvalues down to -1e-9 may give squared distances down to -2e-9
    if sq.min() < -2e-9 - 1e-12:
        raise MetricError("negative squared Gaussian distance")
    sq = np.maximum(sq, 0.0)
    np.fill_diagonal(sq, 0.0)
    return np.sqrt(sq)


def gaussian_metric(U: PotentialMatrix) -> FiniteMetricSpace:
    """The intrinsic metric of the Gaussian field with covariance u_1."""
    if U.alpha != 1.0:
        raise ValueError("the Gaussian metric uses the 1-potential")
    d = gaussian_distance_matrix(U.u)
    return FiniteMetricSpace(d, trusted=d.shape[0] > 200)


def quarter_power_violations(U: PotentialMatrix, R: np.ndarray, tol: float = 1e-12) -> int:
    """Count pairs with d_G(x,y) > 2 max_z u_1(z,z)^(1/4) R(x,y)^(1/4)."""
    d = gaussian_distance_matrix(U.u)
    c = np.max(np.diag(U.u)) ** 0.25
    return int(np.sum(d > 2 * c * np.maximum(R, 0.0) ** 0.25 + tol))


def local_time_pair_constant(U: PotentialMatrix) -> float:
    """c_K = (min_x u_1(x,x))^(-1/4), the constant in the pairwise local-time tail."""
    return float(np.min(np.diag(U.u)) ** -0.25)


# ---------------------------------------------------------------------------
# balls and hitting times
# ---------------------------------------------------------------------------

def resistance_to_set(net: ResistanceNetwork, x: int, target) -> float:
    """R(x, A): effective resistance from ``x`` to the set ``A`` shorted together."""
    target = np.unique(np.asarray(list(target), dtype=int))
    if target.size == 0:
        return math.inf
    if x in target:
        return 0.0
    free = np.setdiff1d(np.arange(net.n), target)
    L = net.laplacian[free][:, free]
    b = np.zeros(free.size)
    xi = int(np.searchsorted(free, x))
    b[xi] = 1.0
    return float(_solve_spd(L, b)[xi])


def ball_complement_resistance(net: ResistanceNetwork, root: int, r: float) -> float:
    """R(root, B(root, r)^c) with the open resistance ball; +inf if the complement is empty."""
    R = net.resistance_matrix[root]
    return resistance_to_set(net, root, np.flatnonzero(R >= r))


def mean_hitting_times(net: ResistanceNetwork, target: int) -> np.ndarray:
    """E_z[time to reach ``target``] for every z, by first-step analysis.

    h(target) = 0 and for z != target:
    h(z) = mu(z)/deg(z) + sum_w c(z,w)/deg(z) h(w),
    which is L h = mu on the free vertices.
    """
    free = np.flatnonzero(np.arange(net.n) != target)
    h = np.zeros(net.n)
    if free.size:
        L = net.laplacian[free][:, free]
        h[free] = _solve_spd(L, net.mu[free])
    return h


def hitting_statistics(net: ResistanceNetwork, x: int, y: int) -> dict:
    """Laplace transform E_x exp(-sigma_y) and the commute time between x and y."""
    if x == y:
        raise ValueError("x and y must differ")
    U = potential_density(net, 1.0)
    laplace = U.u[x, y] / U.u[y, y]
    commute = mean_hitting_times(net, y)[x] + mean_hitting_times(net, x)[y]
    R = effective_resistance(net, x, y)
    target = R * net.total_mass
    if abs(commute - target) > 1e-8 * max(1.0, target):
        raise AssertionError(f"commute time {commute} differs from R*mu(F) = {target}")
    return {"laplace": float(laplace), "commute": float(commute), "resistance": R}
