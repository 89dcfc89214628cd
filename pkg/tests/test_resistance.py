import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reslim.process import sample_hitting_times
from reslim.resistance import (ball_complement_resistance, complete_network, effective_resistance,
                               energy_alpha, from_edges, gaussian_metric,
                               grounded_resistance_matrix, hitting_statistics, load_network,
                               path_network, pinv_resistance_matrix, potential_density,
                               potential_inequality_violations, quarter_power_violations,
                               random_network, random_tree_network, resistance_to_set,
                               save_network, torus_network)

TWO = from_edges(2, [(0, 1, 1.0)], [1.0, 1.0])


def test_series_and_triangle():
    assert effective_resistance(path_network(3), 0, 0) == 0
    assert effective_resistance(path_network(3), 0, 2) == pytest.approx(2.0)
    tri = complete_network(3)
    R = pinv_resistance_matrix(tri)
    for x in range(3):
        for y in range(3):
            if x != y:
                assert effective_resistance(tri, x, y) == pytest.approx(2 / 3)
                assert R[x, y] == pytest.approx(2 / 3)


def test_three_routes_agree(rng):
    for _ in range(20):
        net = random_network(int(rng.integers(2, 15)), rng)
        R1 = net.resistance_matrix
        assert np.allclose(R1, pinv_resistance_matrix(net), atol=1e-10)
        assert np.allclose(R1, grounded_resistance_matrix(net), atol=1e-10)
        x, y = rng.choice(net.n, 2, replace=False)
        assert effective_resistance(net, x, y, "solve") == pytest.approx(R1[x, y], rel=1e-9)


def test_tree_series_law(rng):
    net = random_tree_network(12, rng)
    assert net.is_tree
    for x, y in [(0, 5), (3, 11), (7, 2)]:
        assert effective_resistance(net, x, y, "tree") == pytest.approx(
            effective_resistance(net, x, y, "solve"), rel=1e-9)


def test_two_point_potential():
    U = potential_density(TWO, 1.0).u
    assert np.abs(U - np.array([[2 / 3, 1 / 3], [1 / 3, 2 / 3]])).max() < 1e-12
    d = gaussian_metric(potential_density(TWO, 1.0)).d
    assert d[0, 1] == pytest.approx(math.sqrt(2 / 3), abs=1e-12)
    assert d[0, 0] == 0


def test_potential_reproduces_energy(rng):
    net = random_network(7, rng)
    for alpha in (0.5, 1.0, 3.0):
        U = potential_density(net, alpha).u
        assert np.allclose(U, U.T)
        f = rng.normal(size=net.n)
        for x in range(net.n):
            assert energy_alpha(net, alpha, U[x], f) == pytest.approx(f[x], abs=1e-10)


def test_potential_inequality_and_quarter_power(rng):
    for _ in range(30):
        net = random_network(int(rng.integers(2, 10)), rng)
        U = potential_density(net, 1.0)
        R = net.resistance_matrix
        assert potential_inequality_violations(U, R) == 0
        assert quarter_power_violations(U, R) == 0


def test_ball_complement_resistance_examples(rng):
    p = path_network(3)
    assert ball_complement_resistance(p, 0, 1.5) == pytest.approx(2.0)
    assert math.isinf(ball_complement_resistance(p, 0, 10))
    net = random_network(8, rng)
    rs = np.linspace(0.01, net.resistance_matrix[0].max(), 15)
    vals = [ball_complement_resistance(net, 0, r) for r in rs]
    assert all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))
    assert resistance_to_set(net, 0, [0]) == 0


def test_hitting_statistics_two_point():
    stats = hitting_statistics(TWO, 0, 1)
    assert stats["laplace"] == pytest.approx(0.5)
    assert stats["commute"] == pytest.approx(2.0)
    hits = sample_hitting_times(TWO, 0, [1], 100_000, np.random.default_rng(3))
    samples = np.exp(-hits)
    se = samples.std() / math.sqrt(samples.size)
    assert abs(samples.mean() - 0.5) < 3 * se


def test_hitting_statistics_triangle():
    stats = hitting_statistics(complete_network(3), 0, 2)
    assert stats["commute"] == pytest.approx(2.0)


def test_network_json_roundtrip(tmp_path, rng):
    net = random_network(6, rng)
    save_network(net, tmp_path / "n.json")
    back = load_network(tmp_path / "n.json")
    assert np.allclose(back.resistance_matrix, net.resistance_matrix)
    assert np.allclose(back.mu, net.mu)


def test_network_validation():
    with pytest.raises(ValueError):
        from_edges(3, [(0, 1, 1.0)])  # disconnected
    with pytest.raises(ValueError):
        from_edges(2, [(0, 1, -1.0)])


def test_torus_is_regular():
    t = torus_network(4, 3)
    assert t.n == 64 and np.all(t.degree == 6)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 9), st.integers(0, 2 ** 31))
def test_resistance_is_a_metric(n, seed):
    net = random_network(n, np.random.default_rng(seed))
    R = net.resistance_matrix
    assert np.allclose(R, R.T)
    assert np.all(R[~np.eye(n, dtype=bool)] > 0)
    # R(x, z) <= R(x, y) + R(y, z), indexed [x, y, z]
    assert np.all(R[:, None, :] <= R[:, :, None] + R[None, :, :] + 1e-10)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 9), st.integers(0, 2 ** 31))
def test_commute_identity_property(n, seed):
    rng = np.random.default_rng(seed)
    net = random_network(n, rng)
    x, y = rng.choice(n, 2, replace=False)
    stats = hitting_statistics(net, int(x), int(y))
    assert stats["commute"] == pytest.approx(pinv_resistance_matrix(net)[x, y] * net.total_mass,
                                             rel=1e-8)
