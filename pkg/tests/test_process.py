import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reslim.entropy import entropy_profile
from reslim.metric_core import FiniteMetricSpace
from reslim.process import (KilledPath, chaining_rhs, close_pairs, constant_path,
                            equicontinuity_check, exit_bound, exit_time, hitting_time,
                            jump_tables, kernel_local_time, local_time_modulus,
                            local_time_threshold_constant, local_times, pairwise_tail_check,
                            return_time, sample_hitting_times, simulate_walk, time_integral,
                            trace_path, trace_process, trace_vertices)
from reslim.resistance import (ball_complement_resistance, from_edges, path_network,
                               random_network, random_tree_network)
from reslim.streams import stream

TWO = from_edges(2, [(0, 1, 1.0)], [1.0, 1.0])


def test_path_starts_at_start(rng):
    net = random_network(6, rng)
    for s in range(6):
        assert simulate_walk(net, s, 1.0, rng).state_at(0.0) == s


def test_two_point_holding_times_and_occupation():
    path = simulate_walk(TWO, 0, 100_000.0, np.random.default_rng(1))
    holds = np.diff(path.times)
    se = holds.std() / math.sqrt(holds.size)
    assert holds.size > 50_000
    assert abs(holds.mean() - 1.0) < 3 * se
    L = local_times(path, TWO).at(100_000.0)
    frac = L * TWO.mu / 100_000.0
    assert np.allclose(frac, 0.5, atol=0.01)


def test_occupation_density_examples(rng):
    path = simulate_walk(TWO, 0, 6.0, rng)
    field = local_times(path, TWO)
    assert np.all(field.at(0.0) == 0)
    assert float(np.sum(field.at(4.0) * TWO.mu)) == pytest.approx(4.0, abs=1e-12)
    f = rng.normal(size=2)
    assert abs(time_integral(path, f, 5.0) - np.sum(f * field.at(5.0) * TWO.mu)) < 1e-9


def test_local_times_beyond_horizon_raise(rng):
    field = local_times(simulate_walk(TWO, 0, 1.0, rng), TWO)
    with pytest.raises(ValueError):
        field.at(2.0)


def test_kernel_local_time_collapses_for_small_delta(rng):
    net = random_network(6, rng)
    path = simulate_walk(net, 0, 3.0, rng)
    field = local_times(path, net)
    dmin = net.resistance_matrix[~np.eye(6, dtype=bool)].min()
    ts = np.linspace(0, 3.0, 7)
    for x in range(6):
        assert np.allclose(kernel_local_time(path, net, dmin, x, ts, field), field(x, ts))
        assert kernel_local_time(path, net, 0.3, x, 0.0, field) == 0


def test_kernel_error_bounded_by_modulus():
    net = random_tree_network(10, np.random.default_rng(4))
    R = net.resistance_matrix
    for i in range(5):
        path = simulate_walk(net, 0, 2.0, stream("kernel", 0, i))
        field = local_times(path, net)
        ts = field.event_times(2.0)
        for delta in (0.1, 0.3, 0.6, 1.2):
            mod = local_time_modulus(field, close_pairs(R, delta), 2.0)
            for x in range(net.n):
                err = np.abs(kernel_local_time(path, net, delta, x, ts, field) - field(x, ts))
                assert err.max() <= mod + 1e-12


def test_trace_identity_and_collapse(rng):
    net = random_network(5, rng)
    path = simulate_walk(net, 0, 4.0, rng)
    tr, _, verts = trace_process(path, net, 100.0)
    assert len(verts) == 5
    assert np.array_equal(tr.times, path.times) and np.array_equal(tr.states, path.states)

    p2 = simulate_walk(TWO, 0, 10.0, rng)
    tr2 = trace_path(p2, [0])
    occ = local_times(p2, TWO).occupation(0, 10.0)
    assert tr2.n_segments == 1 and tr2.states[0] == 0
    assert tr2.end == pytest.approx(float(occ))


def test_trace_coincides_before_exit():
    net = random_tree_network(10, np.random.default_rng(8))
    verts = trace_vertices(net, 0.8)
    for i in range(50):
        path = simulate_walk(net, 0, 3.0, stream("trace", 0, i))
        eta = exit_time(path, verts)
        tr = trace_path(path, verts)
        t_check = min(eta, 3.0)
        keep = path.times < t_check
        assert np.array_equal(tr.times[:keep.sum()], path.times[keep])
        assert np.array_equal(tr.states[:keep.sum()], path.states[keep])


def test_exit_and_hitting_conventions():
    path = KilledPath(np.array([0.0, 1.0, 2.5]), np.array([0, 1, 0]), horizon=4.0)
    assert math.isinf(exit_time(path, [0, 1]))
    assert exit_time(path, [0]) == 1.0
    assert hitting_time(path, [0]) == 0.0
    assert hitting_time(path, [1]) == 1.0
    assert return_time(path) == 2.5
    killed = KilledPath(np.array([0.0]), np.array([0]), kill=2.0)
    assert exit_time(killed, [0]) == 2.0


def test_sample_hitting_times_start_inside():
    assert np.all(sample_hitting_times(TWO, 0, [0], 10) == 0)


def test_exit_bound_holds_empirically():
    net = random_tree_network(12, np.random.default_rng(2), mu=np.ones(12))
    Rrow = net.resistance_matrix[0]
    tab = jump_tables(net)
    for r in np.quantile(Rrow[1:], [0.4, 0.8]):
        Rc = ball_complement_resistance(net, 0, r)
        if not math.isfinite(Rc):
            continue
        outside = np.flatnonzero(Rrow >= r)
        hits = sample_hitting_times(net, 0, outside, 4000, stream("exit", 0, int(r * 1e6)),
                                    cap=2.0)
        for t in (0.1, 0.5, 2.0):
            freq = float(np.mean(hits <= t))
            for delta in (0.25 * Rc, 0.5 * Rc):
                assert freq <= exit_bound(net, 0, r, delta, t) + 3 * math.sqrt(0.25 / 4000)
    assert tab.rate.size == 12


def test_path_jsonl_roundtrip():
    p = KilledPath(np.array([0.0, 0.5]), np.array([2, 1]), kill=1.25)
    q = KilledPath.from_jsonl(p.to_jsonl())
    assert np.array_equal(q.times, p.times) and q.kill == 1.25
    with pytest.raises(ValueError):
        KilledPath(np.array([0.0, 0.0]), np.array([0, 1]))
    with pytest.raises(ValueError):
        KilledPath(np.array([0.5]), np.array([0]))
    assert constant_path(3, kill=0).n_segments == 0


def test_chaining_rhs_trivial_cases():
    S = FiniteMetricSpace(np.array([[0.0]]))
    thr, prob = chaining_rhs(S, 1, lambda u: u, lambda u: 0.0)
    assert prob == 0.0 and thr > 0


def test_rhs_matches_direct_summation():
    net = path_network(4)
    R = FiniteMetricSpace(net.resistance_matrix)
    prof = entropy_profile(R)
    alpha, n, T = 0.3, 2, 1.0
    direct = math.fsum((k + 1) ** 2 * prof.at(k) ** 2 * 2 * math.exp(T)
                       * math.exp(-(2.0 ** (3 - k)) ** -alpha) for k in range(n, 400))
    res = equicontinuity_check(net, T, alpha, n, 10, profile=prof)
    assert res["rhs_bound"] == pytest.approx(direct, rel=1e-12)
    beta = 0.5 - alpha
    geom = math.fsum(2 * 2 * math.sqrt(2) * (2.0 ** (3 - k)) ** beta for k in range(n, 2000))
    assert local_time_threshold_constant(alpha) * 2.0 ** (-beta * n) == pytest.approx(geom)


def test_no_close_pairs_gives_zero_frequency(rng):
    net = random_network(5, rng)
    res = equicontinuity_check(net, 1.0, 0.3, 40, 20)
    assert res["lhs_freq"] == 0.0


def test_equicontinuity_on_ten_vertex_tree():
    net = random_tree_network(10, np.random.default_rng(10))
    res = equicontinuity_check(net, 1.0, 0.3, 2, 10_000, seed=1)
    assert res["holds"]


def test_pairwise_tail_check(rng):
    net = random_network(5, rng)
    rows = pairwise_tail_check(net, 0, 1, 1.0, [0.05, 0.2, 0.5], 500)
    assert all(r["holds"] for r in rows)


def test_walks_are_reproducible():
    net = random_network(5, np.random.default_rng(0))
    a = simulate_walk(net, 0, 5.0, stream("rep", 3, 1))
    b = simulate_walk(net, 0, 5.0, stream("rep", 3, 1))
    assert np.array_equal(a.times, b.times) and np.array_equal(a.states, b.states)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 8), st.integers(0, 2 ** 31), st.floats(0.1, 5.0))
def test_occupation_identity_property(n, seed, t):
    rng = np.random.default_rng(seed)
    net = random_network(n, rng)
    path = simulate_walk(net, 0, 5.0, rng)
    f = rng.normal(size=n)
    assert abs(time_integral(path, f, t) - np.sum(f * local_times(path, net).at(t) * net.mu)) < 1e-9


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 8), st.integers(0, 2 ** 31))
def test_local_times_nondecreasing(n, seed):
    rng = np.random.default_rng(seed)
    net = random_network(n, rng)
    field = local_times(simulate_walk(net, 0, 3.0, rng), net)
    curves = field.curves(np.linspace(0, 3.0, 50))
    assert np.all(np.diff(curves, axis=1) >= -1e-12)
