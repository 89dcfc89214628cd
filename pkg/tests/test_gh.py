from itertools import product

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reslim.gh import (GluedSpace, entropy_convergence_check, gh_distance, ghp_upper_bound,
                       hcov_distance, hpr_distance, is_continuity_point, optimal_correspondence,
                       search_correspondence)
from reslim.metric_core import Correspondence, FiniteMetricSpace, RootedMeasuredSpace, distortion

from conftest import line_space


def random_space(rng, n):
    pts = rng.uniform(size=(n, 2))
    return FiniteMetricSpace(np.linalg.norm(pts[:, None] - pts[None], axis=-1))


def gh_by_enumeration(X, Y):
    """Half the least distortion over every relation that covers both spaces."""
    cells = list(product(range(X.n), range(Y.n)))
    best = np.inf
    for mask in range(1, 1 << len(cells)):
        pairs = [cells[i] for i in range(len(cells)) if mask >> i & 1]
        if {p[0] for p in pairs} != set(range(X.n)) or {p[1] for p in pairs} != set(range(Y.n)):
            continue
        best = min(best, distortion(Correspondence(np.array(pairs), X.n, Y.n), X, Y))
    return best / 2


def test_gh_examples():
    X = line_space([0, 1, 3])
    assert gh_distance(X, X) == 0
    assert gh_distance(line_space([0, 1]), line_space([0])) == pytest.approx(0.5)


def test_gh_matches_enumeration(rng):
    for _ in range(15):
        X = random_space(rng, int(rng.integers(1, 4)))
        Y = random_space(rng, int(rng.integers(1, 4)))
        assert gh_distance(X, Y) == pytest.approx(gh_by_enumeration(X, Y), abs=1e-12)
        assert gh_distance(X, Y) == pytest.approx(gh_distance(Y, X), abs=1e-12)


def test_search_is_an_upper_bound(rng):
    for _ in range(5):
        X, Y = random_space(rng, 5), random_space(rng, 6)
        val, R = search_correspondence(X, Y, budget=2000)
        assert 0.5 * val >= gh_distance(X, Y) - 1e-12
        C = Correspondence(np.argwhere(R), X.n, Y.n)
        assert distortion(C, X, Y) == pytest.approx(val)


def test_optimal_correspondence_attains_value(rng):
    X, Y = random_space(rng, 4), random_space(rng, 3)
    C = optimal_correspondence(X, Y)
    assert distortion(C, X, Y) / 2 == pytest.approx(gh_distance(X, Y))


def test_glued_space_restricts_to_parts(rng):
    X, Y = random_space(rng, 4), random_space(rng, 3)
    C = optimal_correspondence(X, Y)
    Z = GluedSpace(X, Y, C, 1e-6)
    assert np.allclose(Z.space.d[:4, :4], X.d)
    assert np.allclose(Z.space.d[4:, 4:], Y.d)
    FiniteMetricSpace(Z.space.d)  # full triangle check


def test_ghp_examples():
    X = RootedMeasuredSpace(line_space([0, 1, 2]), 0, [1, 2, 3])
    b = ghp_upper_bound(X, X, Correspondence.diagonal(3), deltas=(1e-12,))
    assert b.bound <= 1e-12
    one, two = (RootedMeasuredSpace(line_space([0]), 0, [m]) for m in (1.0, 2.0))
    assert ghp_upper_bound(one, two, Correspondence.full(1, 1)).bound == pytest.approx(1.0)


def test_ghp_modes_are_both_upper_bounds_of_gh(rng):
    for _ in range(5):
        X, Y = random_space(rng, 4), random_space(rng, 5)
        GX = RootedMeasuredSpace(X, 0, np.full(4, 0.25))
        GY = RootedMeasuredSpace(Y, 0, np.full(5, 0.2))
        C = optimal_correspondence(X, Y)
        gh = gh_distance(X, Y)
        for method in ("glue", "transport"):
            b = ghp_upper_bound(GX, GY, C, method=method)
            assert b.bound >= gh - 1e-9
            assert b.hausdorff >= gh - 1e-9


def test_ghp_prefers_smallest_delta_on_ties():
    X = RootedMeasuredSpace(line_space([0, 1]), 0)
    b = ghp_upper_bound(X, X, Correspondence.diagonal(2), deltas=(1e-3, 1e-6))
    assert b.delta == 1e-6


def test_entropy_convergence_examples():
    spaces = [line_space([0, 1 + 1 / n]) for n in (2, 4, 8, 16, 32)]
    limit = line_space([0, 1])
    rep = entropy_convergence_check(spaces, limit, [0.9, 1.0])
    r09, r1 = rep["rows"]
    assert r09["continuity"] and r09["N_seq"][-1] == 2 == r09["N_limit"]
    assert not r1["continuity"]
    assert r1["N_limit"] == 1 < r1["liminf"] == 2
    assert rep["holds"]
    const = entropy_convergence_check([limit] * 3, limit, [0.3, 0.9, 1.0, 2.0])
    assert all(r["N_seq"][-1] == r["N_limit"] for r in const["rows"])
    assert is_continuity_point(limit, 0.9) and not is_continuity_point(limit, 1.0)


def test_hcov_examples():
    d1 = np.zeros((1, 1))
    assert hcov_distance(d1, [[1.0]], d1, [[2.0]], Correspondence.diagonal(1)) == pytest.approx(1.0)
    cov = np.array([[2.0, 0.5], [0.5, 1.0]])
    d = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert hcov_distance(d, cov, d, cov, Correspondence.diagonal(2), deltas=(1e-12,)) <= 1e-12
    with pytest.raises(ValueError):
        hcov_distance(d, np.array([[1.0, 2.0], [2.0, 1.0]]), d, cov, Correspondence.diagonal(2))


def test_hpr_examples():
    d = np.array([[0.0, 1.0], [1.0, 0.0]])
    C = Correspondence.diagonal(2)
    assert hpr_distance(d, [0.0, 1.0], d, [0.5, 1.5], C, deltas=(1e-12,)) == pytest.approx(0.5)
    assert hpr_distance(d, [0.0, 1.0], d, [1.0, 0.0], mode="exact") == pytest.approx(0.0)


def _random_instance(rng):
    pts = rng.uniform(size=(3, 2))
    d = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
    A = rng.normal(size=(3, 3))
    return d, A @ A.T / 3


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_hcov_exact_is_symmetric_and_triangular(seed):
    rng = np.random.default_rng(seed)
    (d1, c1), (d2, c2), (d3, c3) = (_random_instance(rng) for _ in range(3))
    h12 = hcov_distance(d1, c1, d2, c2, mode="exact")
    assert h12 == pytest.approx(hcov_distance(d2, c2, d1, c1, mode="exact"), abs=1e-12)
    h13 = hcov_distance(d1, c1, d3, c3, mode="exact")
    h32 = hcov_distance(d3, c3, d2, c2, mode="exact")
    assert h12 <= h13 + h32 + 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(0, 2 ** 31))
def test_gh_symmetric_and_bounded(nx, ny, seed):
    rng = np.random.default_rng(seed)
    X, Y = random_space(rng, nx), random_space(rng, ny)
    g = gh_distance(X, Y)
    assert g == pytest.approx(gh_distance(Y, X), abs=1e-12)
    assert g <= 0.5 * max(X.diameter(), Y.diameter()) + 1e-12
    assert g >= 0.5 * abs(X.diameter() - Y.diameter()) - 1e-12
