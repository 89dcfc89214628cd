"""Covering numbers, summability of entropy tails, Dudley integrals and
volume-to-entropy bounds for finite metric spaces."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .metric_core import FiniteMetricSpace, RootedMeasuredSpace, ball_indices

EXACT_COVER_MAX_N = 25
TAIL_RELATIVE_CUTOFF = 1e-16


# ---------------------------------------------------------------------------
# covering numbers
# ---------------------------------------------------------------------------

def _ball_masks(d: np.ndarray, eps: float) -> list[int]:
    n = d.shape[0]
    weights = 1 << np.arange(n, dtype=object)
    return [int((weights[d[i] <= eps]).sum()) for i in range(n)]


def _popcount(x: int) -> int:
    return bin(x).count("1")


def _greedy_cover(balls: list[int], universe: int) -> list[int]:
    chosen, left = [], universe
    while left:
        i = max(range(len(balls)), key=lambda j: _popcount(balls[j] & left))
        chosen.append(i)
        left &= ~balls[i]
    return chosen


def _exact_cover_size(balls: list[int], n: int) -> int:
    universe = (1 << n) - 1
    # dominance pruning: drop balls contained in another ball
    uniq = sorted(set(balls), key=_popcount, reverse=True)
    kept: list[int] = []
    for b in uniq:
        if not any((b | k) == k for k in kept):
            kept.append(b)
    best = [len(_greedy_cover(kept, universe))]
    containing = [[b for b in kept if b >> e & 1] for e in range(n)]

    def search(left: int, depth: int) -> None:
        if left == 0:
            best[0] = min(best[0], depth)
            return
        biggest = max(_popcount(b & left) for b in kept)
        if depth + -(-_popcount(left) // biggest) >= best[0]:
            return
        # branch on the uncovered element with the fewest covering balls
        elems = [e for e in range(n) if left >> e & 1]
        e = min(elems, key=lambda x: len(containing[x]))
        for b in sorted(containing[e], key=lambda b: -_popcount(b & left)):
            search(left & ~b, depth + 1)

    search(universe, 0)
    return best[0]


def covering_upper_bound(S: FiniteMetricSpace, eps: float) -> int:
    """Size of an eps-net built by farthest-point insertion."""
    d = S.d
    centers = [0]
    dist = d[0].copy()
    while dist.max() > eps:
        nxt = int(np.argmax(dist))
        centers.append(nxt)
        dist = np.minimum(dist, d[nxt])
    return len(centers)


def packing_lower_bound(S: FiniteMetricSpace, eps: float) -> int:
    """Size of a greedy set of points pairwise more than 2*eps apart.

    Two such points cannot share a closed eps-ball, so this bounds the
    covering number from below.
    """
    d = S.d
    order = np.argsort(-d[0], kind="stable")
    chosen: list[int] = []
    for i in order:
        if not chosen or np.all(d[i, chosen] > 2 * eps):
            chosen.append(int(i))
    return len(chosen)


def covering_number(S: FiniteMetricSpace, eps: float, mode: str = "exact"):
    """Minimal number of closed eps-balls needed to cover ``S``.

    ``mode='exact'`` returns an int (n <= 25); ``mode='bounds'`` returns a
    (lower, upper) pair from packing and farthest-point constructions.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if mode == "bounds":
        return packing_lower_bound(S, eps), covering_upper_bound(S, eps)
    if mode != "exact":
        raise ValueError(f"unknown mode {mode!r}")
    if S.n > EXACT_COVER_MAX_N:
        raise ValueError(
            f"exact covering is limited to n <= {EXACT_COVER_MAX_N}; use mode='bounds'"
        )
    if eps >= S.diameter():
        return 1
    return _exact_cover_size(_ball_masks(S.d, eps), S.n)


def covering_number_brute_force(S: FiniteMetricSpace, eps: float) -> int:
    """Reference answer by trying centre sets in order of size."""
    from itertools import combinations

    near = S.d <= eps
    for size in range(1, S.n + 1):
        for centers in combinations(range(S.n), size):
            if near[list(centers)].any(axis=0).all():
                return size
    return S.n


def covering_value(S: FiniteMetricSpace, eps: float, mode: str = "auto") -> int:
    """A single covering count: exact when affordable, else the upper bound."""
    if mode == "auto":
        mode = "exact" if S.n <= EXACT_COVER_MAX_N else "upper"
    if mode == "exact":
        return covering_number(S, eps, "exact")
    if mode == "upper":
        return covering_upper_bound(S, eps)
    if mode == "lower":
        return packing_lower_bound(S, eps)
    raise ValueError(f"unknown mode {mode!r}")


# ---------------------------------------------------------------------------
# dyadic profiles and tail sums
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EntropyProfile:
    """Covering numbers at the dyadic scales 2^-k for k = 0..k_max.

    Beyond ``k_max`` every point needs its own ball, so N_k = n.
    """

    k: np.ndarray
    eps: np.ndarray
    N: np.ndarray
    n_points: int
    mode: str

    @property
    def k_max(self) -> int:
        return int(self.k[-1])

    def at(self, k: int) -> int:
        if k < 0:
            raise ValueError("scale index must be nonnegative")
        if k > self.k_max:
            return self.n_points
        return int(self.N[k])


def saturation_index(S: FiniteMetricSpace) -> int:
    """Smallest k with 2^-k below the smallest positive distance."""
    if S.n == 1:
        return 0
    dmin = S.d[~np.eye(S.n, dtype=bool)].min()
    return max(0, int(math.floor(-math.log2(dmin))) + 1)


def entropy_profile(S: FiniteMetricSpace, mode: str = "auto") -> EntropyProfile:
    kmax = saturation_index(S)
    ks = np.arange(kmax + 1)
    eps = 2.0 ** -ks
    N = np.array([covering_value(S, e, mode) for e in eps], dtype=int)
    # covering counts are monotone in the scale; enforce it for bound modes
    N = np.maximum.accumulate(N)
    N[-1] = S.n
    return EntropyProfile(ks, eps, N, S.n, mode)


def _check_alpha(alpha: float) -> None:
    if not 0 < alpha < 0.5:
        raise ValueError("alpha must lie in (0, 1/2)")


def entropy_tail_terms(profile: EntropyProfile, alpha: float, m: int,
                       weight: Callable[[int], float] | None = None):
    """Terms N_k^2 * weight(k) for k >= m until they are negligible.

    ``weight`` defaults to exp(-2^(alpha k)).  Summation stops once k is past
    the saturation index and the term drops below 1e-16 of the partial sum.
    """
    if weight is None:
        def weight(k):
            return math.exp(-(2.0 ** (alpha * k)))
    terms = []
    total = 0.0
    k = m
    while True:
        term = profile.at(k) ** 2 * weight(k)
        terms.append((k, term))
        total += term
        if k >= profile.k_max and (term == 0.0 or term < TAIL_RELATIVE_CUTOFF * total):
            break
        k += 1
        if k > m + 100000:
            raise RuntimeError("tail sum did not converge")
    return terms


def entropy_tail_sum(S: FiniteMetricSpace | EntropyProfile, alpha: float, m: int,
                     mode: str = "auto") -> float:
    """Sum over k >= m of N(S, 2^-k)^2 exp(-2^(alpha k))."""
    _check_alpha(alpha)
    profile = S if isinstance(S, EntropyProfile) else entropy_profile(S, mode)
    return float(math.fsum(t for _, t in entropy_tail_terms(profile, alpha, m)))


def dudley_integral(S: FiniteMetricSpace, q: float = 0.25, mode: str = "auto") -> float:
    """Integral over (0, 1] of sqrt(log N_{d^q}(S, r)) dr.

    N_{d^q}(S, r) = N_d(S, r^(1/q)) is a right-continuous step function that
    only changes at r = D^q for attained distances D, so the integral is a
    finite sum.
    """
    if not 0 < q <= 1:
        raise ValueError("q must lie in (0, 1]")
    if S.n == 1:
        return 0.0
    dist = np.unique(S.d[~np.eye(S.n, dtype=bool)])
    breaks = dist ** q
    total = 0.0
    # on (0, first break) every point is its own ball
    left = 0.0
    value = math.sqrt(math.log(S.n))
    for D, b in zip(dist, breaks):
        right = min(b, 1.0)
        if right > left:
            total += (right - left) * value
        left = max(left, right)
        if left >= 1.0:
            return total
        value = math.sqrt(math.log(covering_value(S, float(D), mode)))
    total += (1.0 - left) * value
    return total


# ---------------------------------------------------------------------------
# volume profiles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VolumeProfile:
    """Smallest closed-ball mass v(u) over a set of centres, on a radius grid."""

    radii: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.radii, float)
        v = np.asarray(self.values, float)
        if r.shape != v.shape or r.ndim != 1:
            raise ValueError("radii and values must be 1-d arrays of equal length")
        if np.any(np.diff(r) <= 0):
            raise ValueError("radii must be strictly increasing")
        object.__setattr__(self, "radii", r)
        object.__setattr__(self, "values", v)

    def value_at(self, u: float) -> float:
        """v at the nearest grid radius not exceeding ``u``."""
        i = int(np.searchsorted(self.radii, u, side="right")) - 1
        if i < 0:
            raise ValueError(f"radius {u} is below the profile grid")
        return float(self.values[i])


def volume_profile(S: FiniteMetricSpace, weights, radii: Sequence[float],
                   centers: Sequence[int] | None = None) -> VolumeProfile:
    """v(u) = min over centres x of mu(D(x, u)), with balls taken in all of S."""
    w = np.asarray(weights, float)
    idx = np.arange(S.n) if centers is None else np.asarray(centers, int)
    radii = np.asarray(radii, float)
    rows = S.d[idx]
    vals = np.array([(w[None, :] * (rows <= u)).sum(axis=1).min() for u in radii])
    return VolumeProfile(radii, vals)


def entropy_bound_from_volume(total_mass: float, v: VolumeProfile, u: float) -> float:
    """Upper bound mu(S^(r)) / v(u/4) on the u-covering number of S^(r')."""
    if u <= 0:
        raise ValueError("u must be positive")
    return float(total_mass / v.value_at(u / 4.0))


def lemma_volume_check(G: RootedMeasuredSpace, r: float, r_inner: float, u: float,
                       radii_grid: Sequence[float] | None = None) -> dict:
    """Compare the covering number of the inner ball with the volume bound.

    Uses v(s) = inf over x in the outer ball of mu(D(x, s)), measured in the
    whole space, and the outer-ball mass mu(S^(r)).
    """
    if not (0 <= r_inner < r and 0 < u < r - r_inner):
        raise ValueError("need r' < r and 0 < u < r - r'")
    outer = ball_indices(G, r)
    inner = ball_indices(G, r_inner)
    grid = np.asarray(radii_grid if radii_grid is not None else [u / 4.0], float)
    v = volume_profile(G.space, G.weights, grid, centers=outer)
    bound = entropy_bound_from_volume(float(G.weights[outer].sum()), v, u)
    sub = G.space.subspace(inner)
    cover = covering_number(sub, u, "exact") if sub.n <= EXACT_COVER_MAX_N else \
        covering_upper_bound(sub, u)
    return {"covering": int(cover), "bound": bound, "holds": cover <= bound + 1e-12}


@dataclass
class ConditionReport:
    rows: list
    pass_rate: float
    vanishing: list


def check_condition_iv(sequence, alpha_k: float, v_k: Callable[[float], float],
                       r_k: float, c_prime: float, n_u: int = 32) -> ConditionReport:
    """Evaluate the scaled volume condition along a sequence of finite spaces.

    ``sequence`` holds tuples (G, a_n, b_n, c_nk) with G a RootedMeasuredSpace
    in its unscaled metric.  For u on a log grid in (1/c_nk, c'), the check is
    inf over x in B(root, a_n r_k) of mu(D(x, a_n u)) / b_n >= v_k(u).  The
    report also lists b_n^2 exp(-c_nk^alpha_k), which should vanish.
    """
    rows = []
    vanishing = []
    for G, a_n, b_n, c_nk in sequence:
        lo = 1.0 / c_nk
        if lo >= c_prime:
            us = np.array([])
        else:
            us = np.geomspace(lo * (1 + 1e-9), c_prime, n_u)
        centers = ball_indices(G, a_n * r_k)
        ok = True
        worst = math.inf
        for u in us:
            mass = (G.weights[None, :] * (G.d[centers] <= a_n * u)).sum(axis=1).min() / b_n
            ratio = mass / v_k(u)
            worst = min(worst, ratio)
            ok &= mass >= v_k(u)
        rows.append({"a_n": a_n, "b_n": b_n, "c_nk": c_nk, "holds": bool(ok),
                     "worst_ratio": worst})
        vanishing.append(b_n ** 2 * math.exp(-(c_nk ** alpha_k)))
    rate = float(np.mean([r["holds"] for r in rows])) if rows else 1.0
    return ConditionReport(rows, rate, vanishing)
