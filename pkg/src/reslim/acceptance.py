"""Acceptance criteria A1-A10 as callable checks shared by the CLI and the test suite.

Every check takes a seed and returns a :class:`CriterionResult` holding a
pass flag, a summary dictionary for results.json and per-replica rows for
data.csv.  All randomness comes from :func:`reslim.streams.stream`.
"""
from __future__ import annotations

import math
import time
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chisquare

from .entropy import (covering_number, covering_number_brute_force,
                      entropy_profile, entropy_tail_sum, lemma_volume_check)
from .gaussian import GaussianSpec, gaussian_equicontinuity_check, gaussian_moduli
from .gh import entropy_convergence_check
from .metric_core import FiniteMetricSpace, RootedMeasuredSpace
from .paths import TimeChange, j1prime_distance, lambda_dag_norm
from .process import (constant_path, equicontinuity_check, local_time_moduli, local_times, sample_hitting_times,
                      simulate_walk, time_integral)
from .resistance import (complete_network, from_edges, hitting_statistics,
                         pinv_resistance_matrix, potential_density,
                         potential_inequality_violations, quarter_power_violations,
                         random_network, random_tree_network, resistance_space, torus_network)
from .streams import stream
from .trees import (brownian_excursion, edge_set, excursion_tree_coupling, geometric_offspring,
                    ghp_excursion_bounds, ghp_tree_bounds, gw_tree_conditioned, ExcursionFunction,
                    ust_volume_statistic, wilson_ust)


@dataclass
class CriterionResult:
    id: str
    passed: bool
    summary: dict
    rows: list = field(default_factory=list)
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{self.id} {status} ({self.seconds:.1f}s) {short_summary(self.summary)}"


def short_summary(summary: dict, limit: int = 6) -> str:
    parts = []
    for k, v in summary.items():
        if isinstance(v, (bool, int, str)) or v is None:
            parts.append(f"{k}={v}")
        elif isinstance(v, float):
            parts.append(f"{k}={v:.4g}")
        if len(parts) == limit:
            break
    return " ".join(parts)


def _random_space(n: int, rng) -> FiniteMetricSpace:
    """Shortest-path metric of a random weighted complete graph (always a metric)."""
    from scipy.sparse.csgraph import shortest_path

    w = rng.uniform(0.1, 1.0, size=(n, n))
    w = np.triu(w, 1)
    w = w + w.T
    return FiniteMetricSpace(shortest_path(w, directed=False), trusted=True)


# ---------------------------------------------------------------------------
# A1 occupation density
# ---------------------------------------------------------------------------

def criterion_a1(seed: int = 0) -> CriterionResult:
    worst = 0.0
    rows = []
    for i in range(100):
        rng = stream("A1", seed, i)
        net = random_network(int(rng.integers(2, 13)), rng)
        path = simulate_walk(net, int(rng.integers(net.n)), 5.0, rng)
        field_ = local_times(path, net)
        for j in range(10):
            f = rng.normal(size=net.n)
            t = float(rng.uniform(0, 5.0))
            direct = time_integral(path, f, t)
            via_local = float(np.sum(f * field_.at(t) * net.mu))
            err = abs(direct - via_local)
            worst = max(worst, err)
            rows.append({"network": i, "function": j, "t": t, "error": err})
    return CriterionResult("A1", worst < 1e-9, {"max_error": worst, "tolerance": 1e-9}, rows)


# ---------------------------------------------------------------------------
# A2 potential identities
# ---------------------------------------------------------------------------

def criterion_a2(seed: int = 0) -> CriterionResult:
    two = from_edges(2, [(0, 1, 1.0)], [1.0, 1.0])
    u1 = potential_density(two, 1.0).u
    u_err = float(np.abs(u1 - np.array([[2 / 3, 1 / 3], [1 / 3, 2 / 3]])).max())

    rng = stream("A2", seed, 0)
    net = random_network(6, rng)
    x, y = 0, net.n - 1
    hits = sample_hitting_times(net, x, [y], 100_000, rng)
    samples = np.exp(-hits)
    mc = float(samples.mean())
    se = float(samples.std(ddof=1) / math.sqrt(samples.size))
    exact = hitting_statistics(net, x, y)["laplace"]
    laplace_ok = abs(mc - exact) <= 3 * se

    rows = []
    worst = 0.0
    for i in range(200):
        r = stream("A2-commute", seed, i)
        g = random_network(int(r.integers(2, 13)), r)
        a, b = r.choice(g.n, size=2, replace=False)
        try:
            stats = hitting_statistics(g, int(a), int(b))
        except AssertionError:
            stats = None
        oracle = pinv_resistance_matrix(g)[a, b] * g.total_mass
        err = math.inf if stats is None else abs(stats["commute"] - oracle) / max(1.0, oracle)
        worst = max(worst, err)
        rows.append({"network": i, "commute_error": err})
    ok = u_err < 1e-12 and laplace_ok and worst < 1e-8
    return CriterionResult("A2", ok, {
        "u1_error": u_err, "laplace_mc": mc, "laplace_exact": exact, "laplace_se": se,
        "laplace_within_3se": laplace_ok, "commute_max_rel_error": worst}, rows)


# ---------------------------------------------------------------------------
# A3 potential inequality and d_G versus R^(1/4)
# ---------------------------------------------------------------------------

def criterion_a3(seed: int = 0) -> CriterionResult:
    rows = []
    total = 0
    for i in range(200):
        rng = stream("A3", seed, i)
        net = random_network(int(rng.integers(2, 13)), rng)
        U = potential_density(net, 1.0)
        R = net.resistance_matrix
        v1 = potential_inequality_violations(U, R)
        v2 = quarter_power_violations(U, R)
        total += v1 + v2
        rows.append({"network": i, "n": net.n, "inequality_violations": v1,
                     "quarter_power_violations": v2})
    return CriterionResult("A3", total == 0, {"violations": total, "networks": 200}, rows)


# ---------------------------------------------------------------------------
# A4 covering numbers
# ---------------------------------------------------------------------------

def _convergence_sequences():
    ns = [2, 4, 8, 16, 32, 64]
    line = lambda pts: FiniteMetricSpace(np.abs(np.subtract.outer(pts, pts)), trusted=True)  # noqa: E731
    two_point = ([line(np.array([0.0, 1.0 + 1.0 / n])) for n in ns], line(np.array([0.0, 1.0])),
                 [0.5, 1.0, 1.5])
    collapsing = ([line(np.array([0.0, 1.0 / n, 1.0, 2.0])) for n in ns],
                  line(np.array([0.0, 1.0, 2.0])), [0.25, 0.5, 1.0, 1.5])

    def triangle(side):
        d = np.full((3, 3), side)
        np.fill_diagonal(d, 0.0)
        return FiniteMetricSpace(d, trusted=True)

    triangles = ([triangle(1.0 + (-1) ** n / n) for n in ns], triangle(1.0), [0.5, 1.0, 2.0])
    return {"two_point": two_point, "collapsing": collapsing, "triangle": triangles}


def criterion_a4(seed: int = 0) -> CriterionResult:
    rows = []
    mismatches = 0
    for i in range(300):
        rng = stream("A4-cover", seed, i)
        S = _random_space(int(rng.integers(2, 11)), rng)
        offdiag = S.d[~np.eye(S.n, dtype=bool)]
        for eps in rng.uniform(offdiag.min() * 0.5, offdiag.max(), size=5):
            a, b = covering_number(S, float(eps)), covering_number_brute_force(S, float(eps))
            mismatches += a != b
            rows.append({"part": "cover", "space": i, "eps": float(eps), "exact": a, "brute": b})

    violations, checked = 0, 0
    for i in range(500):
        rng = stream("A4-lemma", seed, i)
        net = random_tree_network(int(rng.integers(3, 21)), rng)
        G = RootedMeasuredSpace(resistance_space(net), 0, rng.uniform(0.1, 2.0, net.n))
        diam = G.space.diameter()
        for r in (0.5 * diam, diam, 1.5 * diam):
            for frac in (0.0, 0.5):
                r_inner = frac * r
                for u in (0.2, 0.5, 0.9):
                    res = lemma_volume_check(G, r, r_inner, u * (r - r_inner))
                    checked += 1
                    violations += not res["holds"]
        rows.append({"part": "lemma", "tree": i, "n": net.n, "violations_so_far": violations})

    seq_ok = {}
    for name, (spaces, limit, eps_grid) in _convergence_sequences().items():
        rep = entropy_convergence_check(spaces, limit, eps_grid)
        gh = rep["gh"]
        converges = gh[-1] < gh[0] and gh[-1] <= 1.0 / 64 + 1e-12
        seq_ok[name] = bool(rep["holds"] and converges)
        rows.append({"part": "sequence", "name": name, "holds": rep["holds"],
                     "gh_last": gh[-1]})
    ok = mismatches == 0 and violations == 0 and all(seq_ok.values())
    return CriterionResult("A4", ok, {"cover_mismatches": int(mismatches),
                                      "lemma_checks": checked, "lemma_violations": violations,
                                      "sequences_ok": all(seq_ok.values()), **{
                                          f"sequence_{k}": v for k, v in seq_ok.items()}}, rows)


# ---------------------------------------------------------------------------
# A5 GHP bounds for trees
# ---------------------------------------------------------------------------

def criterion_a5(seed: int = 0) -> CriterionResult:
    p = geometric_offspring()
    rows = []
    failures = 0
    for i in range(100):
        rng = stream("A5-gw", seed, i)
        n = int(rng.integers(5, 121))
        tree = gw_tree_conditioned(p, n, rng)
        for a, b in ((1.0, 1.0), (n ** -0.5, 1.0 / n)):
            rep = ghp_tree_bounds(tree, a, b)
            failures += not rep.holds
            rows.append({"part": "tree", "index": i, "n": n, "a": a, "b": b,
                         "bound": rep.bound.bound, "claimed_bound": rep.claimed_bound,
                         "slack": rep.slack, "holds": rep.holds})
    for i in range(50):
        rng = stream("A5-excursion", seed, i)
        f = brownian_excursion(129, rng)
        if i % 2:
            g = ExcursionFunction(brownian_excursion(97, rng).values * math.sqrt(96 / 128),
                                  f.step)
        else:
            bump = 0.05 * np.sin(np.pi * f.times / f.support_end) ** 2
            g = ExcursionFunction(np.abs(f.values + rng.normal() * bump), f.step)
        rep = ghp_excursion_bounds(f, g)
        failures += not rep.holds
        rows.append({"part": "excursion", "index": i, "bound": rep.bound.bound,
                     "claimed_bound": rep.claimed_bound, "slack": rep.slack, "holds": rep.holds})
    return CriterionResult("A5", failures == 0, {"failures": failures, "trees": 100,
                                                 "excursion_pairs": 50}, rows)


# ---------------------------------------------------------------------------
# A6 conditioned Galton-Watson sampler
# ---------------------------------------------------------------------------

def criterion_a6(seed: int = 0) -> CriterionResult:
    p = geometric_offspring()
    rng = stream("A6", seed, 0)
    counts = Counter()
    sizes_ok = True
    for _ in range(10_000):
        t = gw_tree_conditioned(p, 2, rng)
        sizes_ok &= t.n_nodes == 3
        counts["path" if t.depth.max() == 2 else "cherry"] += 1
    observed = [counts["path"], counts["cherry"]]
    pval = float(chisquare(observed).pvalue)
    return CriterionResult("A6", bool(sizes_ok and pval > 0.01), {
        "path": observed[0], "cherry": observed[1], "p_value": pval, "sizes_ok": bool(sizes_ok)},
        [{"shape": k, "count": v} for k, v in counts.items()])


# ---------------------------------------------------------------------------
# A7 equicontinuity bounds
# ---------------------------------------------------------------------------

def a7_trees(seed: int = 0):
    return [random_tree_network(n, stream("A7-tree", seed, n)) for n in (8, 9, 10)]


def criterion_a7(seed: int = 0, replicas: int = 10_000) -> CriterionResult:
    levels = [1, 2, 3]
    rows = []
    ok = True
    for t_idx, net in enumerate(a7_trees(seed)):
        R = FiniteMetricSpace(net.resistance_matrix, trusted=True)
        prof = entropy_profile(R)
        mods = local_time_moduli(net, 1.0, levels, replicas, seed, experiment=f"A7-walk-{t_idx}")
        spec = GaussianSpec(potential_density(net, 1.0).u)
        gprof = entropy_profile(spec.space)
        gmods = gaussian_moduli(spec, levels, replicas, seed, experiment=f"A7-field-{t_idx}")
        for alpha in (0.3, 0.4):
            for j, n in enumerate(levels):
                pr = equicontinuity_check(net, 1.0, alpha, n, replicas, moduli=mods[:, j],
                                          profile=prof)
                gr = gaussian_equicontinuity_check(spec, alpha, n, replicas,
                                                   moduli=gmods[:, j], profile=gprof)
                ok &= pr["holds"] and gr["holds"]
                rows.append({"tree": t_idx, "vertices": net.n, "alpha": alpha, "n": n,
                             "process_freq": pr["lhs_freq"], "process_rhs": pr["rhs_bound"],
                             "process_holds": pr["holds"], "gaussian_freq": gr["freq"],
                             "gaussian_rhs": gr["rhs"], "gaussian_holds": gr["holds"]})
    informative = sum((r["process_rhs"] < 1) + (r["gaussian_rhs"] < 1) for r in rows)
    return CriterionResult("A7", bool(ok), {"checks": len(rows) * 2, "replicas": replicas,
                                            "all_hold": bool(ok),
                                            "checks_with_rhs_below_one": int(informative)}, rows)


# ---------------------------------------------------------------------------
# A8 Skorokhod-type distance
# ---------------------------------------------------------------------------

def criterion_a8(seed: int = 0) -> CriterionResult:
    net = random_network(5, stream("A8", seed, 0))
    Z = resistance_space(net)
    X = simulate_walk(net, 0, 3.0, stream("A8", seed, 1))
    self_dist = j1prime_distance(X, X, Z)

    pair = FiniteMetricSpace(np.array([[0.0, 0.1], [0.1, 0.0]]))
    const = j1prime_distance(constant_path(0), constant_path(1), pair)

    rng = stream("A8-lambda", seed, 2)
    applicable, failures = 0, 0
    for _ in range(1000):
        k = int(rng.integers(1, 8))
        widths = rng.uniform(0.05, 1.0, size=k)
        spread = rng.uniform(0.0, 0.4)
        slopes = np.exp(rng.uniform(-spread, spread, size=k))
        knots = np.concatenate([[0.0], np.cumsum(widths)])
        values = np.concatenate([[0.0], np.cumsum(widths * slopes)])
        lam = TimeChange(knots, values)
        t = float(rng.uniform(0.1, 3.0))
        norm = lambda_dag_norm(lam, t)
        if norm >= 1.0:
            continue
        eps = float(rng.uniform(norm, 1.0)) if norm > 0 else float(rng.uniform(1e-6, 1.0))
        if eps <= norm:
            continue
        applicable += 1
        failures += not lam.max_displacement(t) < eps
    ok = self_dist == 0.0 and abs(const - 0.2) <= 1e-9 and failures == 0 and applicable > 0
    return CriterionResult("A8", ok, {"self_distance": self_dist, "constant_paths": const,
                                      "lemma_cases": applicable, "lemma_failures": failures})


# ---------------------------------------------------------------------------
# A9 flagship trend
# ---------------------------------------------------------------------------

A9_NS = (50, 200, 800)
A9_ALPHA = 0.25
A9_EPS = 0.1
A9_M = tuple(range(0, 41, 4))


def tail_statistics(spaces, alpha: float = A9_ALPHA, eps: float = A9_EPS, ms=A9_M):
    """P over the sample of sum_{k>=m} N_k^2 exp(-2^(alpha k)) >= eps, for each m.

    Covering numbers come from the farthest-point upper bound.
    """
    profiles = [entropy_profile(S, mode="upper") for S in spaces]
    return [float(np.mean([entropy_tail_sum(pr, alpha, m) >= eps for pr in profiles]))
            for m in ms]


def criterion_a9(seed: int = 0, ns=A9_NS, seeds: int = 30) -> CriterionResult:
    rows = []
    medians = []
    tails = {}
    for n in ns:
        bounds, spaces = [], []
        for s in range(seeds):
            out = excursion_tree_coupling(n, stream("A9", seed, n * 1000 + s))
            bounds.append(out["bound"].bound)
            spaces.append(out["tree"].rooted_space(out["distance_scale"]).space)
            rows.append({"n": n, "replica": s, "edges": out["edges"],
                         "ghp_bound": out["bound"].bound})
        medians.append(float(np.median(bounds)))
        tails[n] = tail_statistics(spaces)
    decreasing = all(b < a for a, b in zip(medians, medians[1:]))
    monotone = all(all(b <= a for a, b in zip(t, t[1:])) for t in tails.values())
    summary = {"decreasing": decreasing, "tail_nonincreasing": monotone,
               "medians": dict(zip(map(str, ns), medians)),
               "tail_m": list(A9_M), "tail_statistic": {str(k): v for k, v in tails.items()}}
    return CriterionResult("A9", decreasing and monotone, summary, rows)


# ---------------------------------------------------------------------------
# A10 uniform spanning trees
# ---------------------------------------------------------------------------

def criterion_a10(seed: int = 0) -> CriterionResult:
    tri = complete_network(3)
    rng = stream("A10-triangle", seed, 0)
    counts = Counter(edge_set(wilson_ust(tri, rng)) for _ in range(30_000))
    observed = [counts.get(frozenset(e), 0) for e in
                (((0, 1), (0, 2)), ((0, 1), (1, 2)), ((0, 2), (1, 2)))]
    pval = float(chisquare(observed).pvalue)
    uniform_ok = sum(observed) == 30_000 and pval > 0.01

    torus = torus_network(8, 3)
    graph_edges = {tuple(sorted(map(int, e[:2]))) for e in torus.edges}
    rows = []
    invariants_ok = True
    r_grid = [0.05, 0.1, 0.2, 0.4]
    for i in range(5):
        tree = wilson_ust(torus, stream("A10-torus", seed, i))
        es = edge_set(tree)
        good = tree.n_nodes == 512 and len(es) == 511 and es <= graph_edges
        invariants_ok &= good
        rows.append({"sample": i, "edges": len(es), "invariants": good,
                     "volume_statistic": ust_volume_statistic(tree, r_grid)})
    return CriterionResult("A10", bool(uniform_ok and invariants_ok), {
        "triangle_counts": observed, "p_value": pval, "invariants_ok": bool(invariants_ok),
        "volume_statistic_median": float(np.median([r["volume_statistic"] for r in rows]))}, rows)


CRITERIA = {
    "A1": criterion_a1, "A2": criterion_a2, "A3": criterion_a3, "A4": criterion_a4,
    "A5": criterion_a5, "A6": criterion_a6, "A7": criterion_a7, "A8": criterion_a8,
    "A9": criterion_a9, "A10": criterion_a10,
}


def run_criterion(cid: str, seed: int = 0, **kwargs) -> CriterionResult:
    key = cid.upper()
    if key not in CRITERIA:
        raise KeyError(f"unknown criterion {cid!r}; choose from {', '.join(CRITERIA)}")
    t0 = time.perf_counter()
    res = CRITERIA[key](seed, **kwargs)
    res.seconds = time.perf_counter() - t0
    return res
