import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reslim.metric_core import Correspondence, FiniteMetricSpace, RootedMeasuredSpace
from reslim.paths import (GridFunction, LocalTimeGraph, ProcessTuple, TimeChange, a_epsilon,
                          d_d, d_dc, d_hl, d_uniform, j1prime_distance, kill, lambda_dag_norm,
                          local_time_graph)
from reslim.process import KilledPath, constant_path, local_times, simulate_walk
from reslim.resistance import random_network, resistance_space

from conftest import line_space

PAIR = FiniteMetricSpace(np.array([[0.0, 0.1], [0.1, 0.0]]))


def test_kill_examples():
    X = KilledPath(np.array([0.0, 1.0, 2.0]), np.array([0, 1, 2]), horizon=5.0)
    assert kill(X, 0.0).n_segments == 0 and kill(X, 0.0).kill == 0
    assert kill(X, math.inf) is X
    mid = kill(X, 1.5)
    assert list(mid.states) == [0, 1] and mid.kill == 1.5
    assert mid.state_at(1.6) == -1


def test_time_change_norm_examples():
    assert lambda_dag_norm(TimeChange.identity(), 1.0) == 0
    assert lambda_dag_norm(TimeChange.linear(2.0), 1.0) == pytest.approx(2 * math.log(2))
    with pytest.raises(ValueError):
        TimeChange(np.array([0.0, 1.0]), np.array([0.0, -1.0]))


def test_lemma_b1_on_random_time_changes(rng):
    checked = 0
    for _ in range(300):
        k = int(rng.integers(1, 6))
        widths = rng.uniform(0.05, 1.0, k)
        slopes = np.exp(rng.uniform(-0.3, 0.3, k))
        lam = TimeChange(np.concatenate([[0], np.cumsum(widths)]),
                         np.concatenate([[0], np.cumsum(widths * slopes)]))
        t = float(rng.uniform(0.1, 3))
        norm = lambda_dag_norm(lam, t)
        if norm >= 1:
            continue
        eps = float(rng.uniform(norm, 1))
        if norm < eps:
            checked += 1
            assert lam.max_displacement(t) < eps
    assert checked > 50


def test_a_epsilon_constant_paths():
    X, Y = constant_path(0), constant_path(1)
    for eps in (0.05, 0.2, 0.4):
        assert a_epsilon(X, Y, eps, PAIR) == pytest.approx(0.1)


def test_a_epsilon_identical_and_killed():
    X = constant_path(0)
    assert a_epsilon(X, X, 0.2, PAIR) == 0
    Y = kill(X, 1.0)   # dies well before 1/eps - eps
    # matching the death times forces a steep time change
    assert a_epsilon(X, Y, 0.2, PAIR) >= 2 * 5 * math.log(5)
    assert j1prime_distance(X, Y, PAIR) == 0.5


def test_j1_examples(rng):
    net = random_network(5, rng)
    Z = resistance_space(net)
    X = simulate_walk(net, 0, 3.0, rng)
    assert j1prime_distance(X, X, Z) == 0
    c = j1prime_distance(constant_path(0), constant_path(1), PAIR)
    assert c == pytest.approx(0.2, abs=1e-9)
    assert j1prime_distance(constant_path(1), constant_path(0), PAIR) == pytest.approx(c)


def test_j1_time_scaled_path():
    # Y runs X at speed 1.05; both are killed at the end of their jumps
    Z = line_space([0, 1])
    X = KilledPath(np.array([0.0, 1.0]), np.array([0, 1]), kill=2.0)
    Y = KilledPath(np.array([0.0, 1.05]), np.array([0, 1]), kill=2.1)
    v = j1prime_distance(X, Y, Z)
    assert 0 < v < 0.5


def test_d_uniform_examples():
    f = GridFunction(np.zeros(41), 0.25, frozen_after=True)
    assert d_uniform(f, f) == (0.0, 0.0)
    assert d_uniform(f, GridFunction(np.full(41, 2.0), 0.25, True)).lower == pytest.approx(1.0)
    assert d_uniform(f, GridFunction(np.full(41, 0.5), 0.25, True)).lower == pytest.approx(0.5)
    open_tail = d_uniform(GridFunction(np.zeros(41), 0.25), GridFunction(np.full(41, 0.5), 0.25))
    assert open_tail.lower <= 0.5 <= open_tail.upper
    assert open_tail.upper - open_tail.lower == pytest.approx(0.5 * 2 ** -10)


def _graph(curves, step=0.5, frozen=True):
    c = np.asarray(curves, float)
    return LocalTimeGraph(np.arange(c.shape[0]), c, step, frozen)


def test_d_hl_examples():
    Z = line_space([0, 1])
    L = _graph([[0, 1, 2], [0, 0.5, 0.5]])
    assert d_hl(L, L, Z, C=Correspondence.diagonal(2)) == 0
    shifted = _graph([[0.5, 1.5, 2.5], [0.5, 1.0, 1.0]])
    assert d_hl(L, shifted, Z, C=Correspondence.diagonal(2)) == pytest.approx(0.5)
    empty = LocalTimeGraph(np.array([], int), np.zeros((0, 3)), 0.5, True)
    assert math.isinf(d_hl(L, empty, Z))
    assert d_hl(empty, empty, Z) == 0


def _tuple(net, path, step=0.25, T=4.0, shift=0.0):
    field = local_times(path, net)
    G = RootedMeasuredSpace(resistance_space(net), 0, net.mu)
    L = local_time_graph(field, T, step)
    if shift:
        L = LocalTimeGraph(L.vertices, L.curves + shift, L.step, L.frozen_after)
    return ProcessTuple(G, path, L)


def test_d_dc_examples(rng):
    net = random_network(4, rng)
    path = kill(simulate_walk(net, 0, 5.0, rng), 4.0)
    P = _tuple(net, path)
    same = d_dc(P, P, Correspondence.diagonal(4))
    assert same["value"] == 0
    Q = _tuple(net, path, shift=0.5)
    res = d_dc(P, Q, Correspondence.diagonal(4))
    assert res["local_times"] == pytest.approx(0.5)
    assert res["value"] >= max(res["root"], res["prohorov"], res["j1"], res["local_times"])


def test_d_d_examples(rng):
    net = random_network(4, rng)
    path = kill(simulate_walk(net, 0, 5.0, rng), 4.0)
    P = _tuple(net, path)
    assert d_d(P, P, Correspondence.diagonal(4))["value"] == 0
    worse = d_d(P, _tuple(net, path, shift=0.5), Correspondence.diagonal(4))["value"]
    worst = d_d(P, _tuple(net, path, shift=0.8), Correspondence.diagonal(4))["value"]
    assert 0 < worse <= worst <= 1


def test_d_d_differences_beyond_radius():
    # two tuples that agree on the ball of radius 5 around the root
    far = FiniteMetricSpace(np.array([[0.0, 5.0], [5.0, 0.0]]))
    G1 = RootedMeasuredSpace(far, 0, [1.0, 1.0])
    G2 = RootedMeasuredSpace(far, 0, [1.0, 3.0])
    path = constant_path(0, kill=3.0)
    L = LocalTimeGraph(np.arange(2), np.array([[0.0, 1.0, 2.0, 3.0], [0.0] * 4]), 1.0, True)
    res = d_d(ProcessTuple(G1, path, L), ProcessTuple(G2, path, L), Correspondence.diagonal(2))
    assert res["value"] <= math.exp(-5.0) + 1e-12


@settings(max_examples=20, deadline=None)
@given(st.floats(0.0, 0.4), st.floats(0.0, 0.4))
def test_j1_constant_paths_property(p, q):
    Z = line_space([0.0, 0.05 + p, 0.1 + p + q])
    d01 = Z.d[0, 1]
    v = j1prime_distance(constant_path(0), constant_path(1), Z)
    # a_eps = d(0, 1) for every eps, so the infimum is min(1/2, 2 d(0, 1))
    assert v == pytest.approx(min(0.5, 2 * d01), abs=1e-9)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_d_uniform_symmetric_and_bounded(seed):
    rng = np.random.default_rng(seed)
    f = GridFunction(rng.normal(size=30), 0.5, True)
    g = GridFunction(rng.normal(size=30), 0.5, True)
    a, b = d_uniform(f, g), d_uniform(g, f)
    assert a == b
    assert 0 <= a.lower <= a.upper <= 1
