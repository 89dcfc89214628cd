import math
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reslim.entropy import (check_condition_iv, covering_number, covering_number_brute_force,
                            covering_upper_bound, dudley_integral, entropy_profile,
                            entropy_tail_sum, lemma_volume_check, packing_lower_bound,
                            volume_profile)
from reslim.metric_core import FiniteMetricSpace, RootedMeasuredSpace
from reslim.trees import geometric_offspring, gw_tree_conditioned

from conftest import line_space


def random_space(rng, n):
    pts = rng.uniform(size=(n, 2))
    return FiniteMetricSpace(np.linalg.norm(pts[:, None] - pts[None], axis=-1))


def test_covering_examples(path4):
    single = line_space([0])
    assert covering_number(single, 0.3) == 1
    assert covering_number(path4, 1.0) == 2
    assert covering_number_brute_force(path4, 1.0) == 2
    assert covering_number(path4, 3.0) == 1
    assert covering_number(path4, 0.5) == 4


def test_covering_rejects_bad_input(path4):
    with pytest.raises(ValueError):
        covering_number(path4, 0)
    big = line_space(range(30))
    with pytest.raises(ValueError, match="bounds"):
        covering_number(big, 1.0)
    lo, hi = covering_number(big, 1.0, "bounds")
    assert lo <= 10 <= hi


def test_exact_cover_matches_brute_force(rng):
    for _ in range(60):
        S = random_space(rng, int(rng.integers(1, 10)))
        for eps in rng.uniform(0.01, 1.0, size=3):
            exact = covering_number(S, eps)
            assert exact == covering_number_brute_force(S, eps)
            assert packing_lower_bound(S, eps) <= exact <= covering_upper_bound(S, eps)


def test_tail_sum_single_point_against_direct_summation():
    S = line_space([0])
    oracle = math.fsum(math.exp(-(2.0 ** (k / 4))) for k in range(1, 201))
    assert entropy_tail_sum(S, 0.25, 1) == pytest.approx(oracle, abs=1e-12)


def test_tail_sum_beyond_saturation():
    S = line_space([0, 1, 3])
    prof = entropy_profile(S)
    m = prof.k_max + 2
    oracle = 9 * math.fsum(math.exp(-(2.0 ** (0.3 * k))) for k in range(m, m + 400))
    assert entropy_tail_sum(S, 0.3, m) == pytest.approx(oracle, rel=1e-12)
    assert math.isfinite(entropy_tail_sum(S, 0.05, 0))


def test_profile_is_monotone_and_saturates(rng):
    S = random_space(rng, 12)
    prof = entropy_profile(S)
    assert np.all(np.diff(prof.N) >= 0)
    assert prof.at(prof.k_max + 5) == 12
    assert prof.N[0] == covering_number(S, 1.0)


def test_dudley_examples():
    assert dudley_integral(line_space([0]), 0.25) == 0
    assert dudley_integral(line_space([0, 1]), 1.0) == pytest.approx(math.sqrt(math.log(2)))


def test_dudley_against_riemann_sum():
    S = line_space([0, 0.05, 0.3, 0.7])
    q = 0.25
    mids = (np.arange(400_000) + 0.5) / 400_000
    vals = []
    cache = {}
    for r in mids:
        eps = r ** (1 / q)
        key = np.searchsorted(np.unique(S.d), eps, side="right")
        if key not in cache:
            cache[key] = math.sqrt(math.log(covering_number(S, eps)))
        vals.append(cache[key])
    assert dudley_integral(S, q) == pytest.approx(float(np.mean(vals)), abs=1e-6)


def test_lemma_volume_check_path_example():
    # the open ball of radius 9.5 around 0 is the whole path {0..9}
    G = RootedMeasuredSpace(line_space(range(10)), 0)
    v = volume_profile(G.space, G.weights, [1.0])
    assert v.value_at(1.0) == 2
    res = lemma_volume_check(G, 9.5, 5, 4)
    assert res["bound"] == pytest.approx(5.0)
    inner = G.space.subspace(range(5))
    assert res["covering"] == covering_number_brute_force(inner, 4) <= 5
    assert res["holds"]


def test_lemma_volume_check_single_point():
    G = RootedMeasuredSpace(line_space([0]), 0, [3.0])
    res = lemma_volume_check(G, 1.0, 0.0, 0.5)
    assert res["bound"] >= 1 and res["holds"]


def test_lemma_volume_check_preconditions():
    G = RootedMeasuredSpace(line_space(range(4)), 0)
    with pytest.raises(ValueError):
        lemma_volume_check(G, 2, 1, 1)


def test_condition_iv_constant_sequence():
    G = RootedMeasuredSpace(line_space([0]), 0)
    rep = check_condition_iv([(G, 1.0, 1.0, 10.0)] * 4, 0.4, lambda u: 1.0, 1.0, 2.0)
    assert rep.pass_rate == 1.0


def test_condition_iv_vanishing_sequence():
    # b_n = n, c = (log n)^3, alpha = 0.4: b_n^2 exp(-c^alpha) = exp(2L - L^1.2) with L = log n,
    # which peaks near L = (5/3)^5 and only becomes small for astronomically large n
    ns = [10.0 ** e for e in (1, 3, 6, 10, 20, 30, 40)]
    G = RootedMeasuredSpace(line_space([0]), 0)
    rep = check_condition_iv([(G, 1.0, n, math.log(n) ** 3) for n in ns], 0.4,
                             lambda u: 1e-9, 1.0, 0.5)
    direct = [math.exp(2 * math.log(n) - math.log(n) ** 1.2) for n in ns]
    assert rep.vanishing == pytest.approx(direct, rel=1e-9)
    assert rep.vanishing[2] > 1.0
    assert np.all(np.diff(rep.vanishing[2:]) < 0)
    assert rep.vanishing[-1] < 1e-6


def test_condition_iv_gw_trees_with_calibrated_constant():
    p = geometric_offspring()
    r_k, c_prime = 1.0, 1.0

    def rows(n, seeds, offset):
        out = []
        for s in seeds:
            t = gw_tree_conditioned(p, n, np.random.default_rng(offset + s))
            G = t.rooted_space()
            out.append((G, math.sqrt(n), float(n), float(n) ** 0.5))
        return out

    # calibrate C on 200 separate seeds as the smallest worst ratio for v(u) = u^4 ^ 1
    shape = lambda u: min(u ** 4, 1.0)  # noqa: E731
    for n in (100, 400):
        cal = check_condition_iv(rows(n, range(200), 10_000), 0.4, shape, r_k, c_prime)
        C = float(min(r["worst_ratio"] for r in cal.rows))
        rep = check_condition_iv(rows(n, range(50), 20_000), 0.4,
                                 lambda u: C * shape(u), r_k, c_prime)
        assert rep.pass_rate >= 0.9


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 8), st.integers(0, 2 ** 31), st.floats(0.05, 1.5))
def test_covering_is_monotone_in_eps(n, seed, eps):
    S = random_space(np.random.default_rng(seed), n)
    assert covering_number(S, eps) >= covering_number(S, eps * 1.5)
    assert 1 <= covering_number(S, eps) <= n


def test_brute_force_is_minimal_cover(path4):
    # no single centre covers the path at radius 1
    assert not any(np.all(path4.d[c] <= 1) for c in range(4))
    assert any(np.all(path4.d[list(c)].min(axis=0) <= 1) for c in combinations(range(4), 2))
