"""The continuous-time random walk of a resistance network, its local times,
trace processes and the chaining bounds for local-time moduli."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .entropy import EntropyProfile, entropy_profile
from .metric_core import FiniteMetricSpace
from .resistance import ResistanceNetwork, potential_density, local_time_pair_constant
from .streams import as_generator, stream

DEAD = -1  # state code for the cemetery point


@dataclass(frozen=True, eq=False)
class KilledPath:
    """A right-continuous step path with a kill time.

    Segment i occupies [times[i], times[i+1]) in state states[i]; the last
    segment runs until ``min(kill, horizon)``.  From ``kill`` on the path sits
    in the cemetery.  ``horizon`` marks the end of the observed window for
    simulated paths that were never killed.
    """

    times: np.ndarray
    states: np.ndarray
    kill: float = math.inf
    horizon: float = math.inf

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        s = np.asarray(self.states, dtype=int)
        if t.ndim != 1 or t.shape != s.shape:
            raise ValueError("times and states must be 1-d arrays of equal length")
        if self.kill < 0 or self.horizon < 0:
            raise ValueError("kill time and horizon must be nonnegative")
        end = min(self.kill, self.horizon)
        if t.size:
            if t[0] != 0.0:
                raise ValueError("paths start at time 0")
            if np.any(np.diff(t) <= 0):
                raise ValueError("jump times must be strictly increasing")
            if t[-1] >= end:
                raise ValueError("jump times must precede the kill time and horizon")
            if np.any(s < 0):
                raise ValueError("states before the kill time must be vertices")
        elif self.kill > 0:
            raise ValueError("an empty ledger describes a path killed at time 0")
        t.setflags(write=False)
        s.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "states", s)
        object.__setattr__(self, "kill", float(self.kill))
        # a killed path is known everywhere, so the horizon only matters before the kill
        object.__setattr__(self, "horizon",
                           math.inf if self.kill <= self.horizon else float(self.horizon))

    @property
    def end(self) -> float:
        """End of the known alive part: min(kill, horizon)."""
        return min(self.kill, self.horizon)

    @property
    def n_segments(self) -> int:
        return self.times.size

    def segment_ends(self) -> np.ndarray:
        return np.append(self.times[1:], self.end)

    def state_at(self, s: float) -> int:
        if s >= self.kill:
            return DEAD
        if s >= self.horizon:
            raise ValueError(f"time {s} is beyond the observed horizon {self.horizon}")
        return int(self.states[np.searchsorted(self.times, s, side="right") - 1])

    def visited(self) -> np.ndarray:
        return np.unique(self.states)

    def to_jsonl(self) -> str:
        lines = [json.dumps({"t": float(t), "state": int(s)}) for t, s in zip(self.times, self.states)]
        if math.isfinite(self.kill):
            lines.append(json.dumps({"kill": self.kill}))
        if math.isfinite(self.horizon):
            lines.append(json.dumps({"horizon": self.horizon}))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "KilledPath":
        times, states = [], []
        kill, horizon = math.inf, math.inf
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            if "kill" in rec:
                kill = float(rec["kill"])
            elif "horizon" in rec:
                horizon = float(rec["horizon"])
            elif "t" in rec and "state" in rec:
                times.append(float(rec["t"]))
                states.append(int(rec["state"]))
            else:
                raise ValueError(f"line {lineno}: expected t/state, kill or horizon")
        return cls(np.array(times), np.array(states, dtype=int), kill, horizon)


def constant_path(state: int, kill: float = math.inf, horizon: float = math.inf) -> KilledPath:
    if kill == 0:
        return KilledPath(np.array([]), np.array([], dtype=int), 0.0)
    return KilledPath(np.array([0.0]), np.array([state]), kill, horizon)


def merge_repeats(times, states):
    """Drop jumps that do not change the state."""
    times = np.asarray(times, float)
    states = np.asarray(states, int)
    if times.size == 0:
        return times, states
    keep = np.ones(times.size, dtype=bool)
    keep[1:] = states[1:] != states[:-1]
    return times[keep], states[keep]


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class _JumpTables:
    rate: np.ndarray
    nbr: np.ndarray       # n x maxdeg, padded with -1
    cum: np.ndarray       # n x maxdeg cumulative jump probabilities, padded with 2


def jump_tables(net: ResistanceNetwork) -> _JumpTables:
    c = net.conductance
    deg = net.degree
    maxdeg = int(np.diff(c.indptr).max())
    nbr = np.full((net.n, maxdeg), -1, dtype=int)
    cum = np.full((net.n, maxdeg), 2.0)
    for i in range(net.n):
        lo, hi = c.indptr[i], c.indptr[i + 1]
        k = hi - lo
        nbr[i, :k] = c.indices[lo:hi]
        cum[i, :k] = np.cumsum(c.data[lo:hi]) / deg[i]
        cum[i, k - 1] = 1.0
    return _JumpTables(deg / net.mu, nbr, cum)


def simulate_walk(net: ResistanceNetwork, start: int, horizon: float, rng=None,
                  tables: _JumpTables | None = None) -> KilledPath:
    """Run the walk from ``start`` on [0, horizon).

    At x the walk waits an exponential time with rate sum_y c(x,y)/mu(x) and
    then jumps to y with probability proportional to c(x,y).  Finite networks
    never explode, so the kill time is +inf and the ledger stops at ``horizon``.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    if not 0 <= start < net.n:
        raise ValueError("start vertex out of range")
    rng = as_generator(rng)
    tab = tables or jump_tables(net)
    times = [0.0]
    states = [int(start)]
    t, x = 0.0, int(start)
    block = 256
    while True:
        waits = rng.standard_exponential(block)
        picks = rng.random(block)
        for w, u in zip(waits, picks):
            t += w / tab.rate[x]
            if t >= horizon:
                return KilledPath(np.array(times), np.array(states), math.inf, horizon)
            row = tab.cum[x]
            x = int(tab.nbr[x, np.searchsorted(row, u, side="right")])
            times.append(t)
            states.append(x)


def sample_hitting_times(net: ResistanceNetwork, start: int, target: Iterable[int], size: int,
                         rng=None, cap: float = math.inf) -> np.ndarray:
    """Independent samples of sigma_A = inf{t > 0 : X_t in A} from ``start``.

    Walkers are advanced together.  Samples larger than ``cap`` are returned
    as +inf (the walker is stopped once it passes the cap).
    """
    rng = as_generator(rng)
    tab = jump_tables(net)
    in_target = np.zeros(net.n, dtype=bool)
    in_target[list(target)] = True
    out = np.full(size, math.inf)
    if in_target[start]:
        out[:] = 0.0
        return out
    state = np.full(size, start, dtype=int)
    clock = np.zeros(size)
    alive = np.arange(size)
    while alive.size:
        st = state[alive]
        clock[alive] += rng.standard_exponential(alive.size) / tab.rate[st]
        u = rng.random(alive.size)
        col = (tab.cum[st] <= u[:, None]).sum(axis=1)
        nxt = tab.nbr[st, col]
        state[alive] = nxt
        hit = in_target[nxt]
        out[alive[hit]] = clock[alive[hit]]
        over = clock[alive] > cap
        alive = alive[~hit & ~over]
    out[out > cap] = math.inf
    return out


# ---------------------------------------------------------------------------
# local times
# ---------------------------------------------------------------------------

class LocalTimeField:
    """Occupation ledger normalised by mu: L(x, t) = time at x during [0, t] / mu(x)."""

    def __init__(self, path: KilledPath, mu: np.ndarray):
        mu = np.asarray(mu, dtype=float)
        if path.n_segments and path.states.max() >= mu.size:
            raise ValueError("path visits a state outside the network")
        self.path = path
        self.mu = mu
        self.n = mu.size
        starts = path.times
        ends = path.segment_ends()
        self._starts: list[np.ndarray] = []
        self._ends: list[np.ndarray] = []
        self._cum: list[np.ndarray] = []
        order = np.argsort(path.states, kind="stable")
        bounds = np.searchsorted(path.states[order], np.arange(self.n + 1))
        for x in range(self.n):
            idx = order[bounds[x]:bounds[x + 1]]
            s, e = starts[idx], ends[idx]
            self._starts.append(s)
            self._ends.append(e)
            self._cum.append(np.concatenate([[0.0], np.cumsum(e - s)]))

    @property
    def end(self) -> float:
        return self.path.end

    def _check_time(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < 0):
            raise ValueError("time must be nonnegative")
        if np.any(t > self.path.horizon):
            raise ValueError("time beyond the observed horizon")
        return t

    def occupation(self, x: int, t) -> np.ndarray:
        t = self._check_time(t)
        s, e, cum = self._starts[x], self._ends[x], self._cum[x]
        if s.size == 0:
            return np.zeros_like(t)
        p = np.searchsorted(s, t, side="right")
        last = np.maximum(p - 1, 0)
        partial = np.clip(np.minimum(t, e[last]) - s[last], 0.0, None)
        return np.where(p > 0, cum[last] + partial, 0.0)

    def __call__(self, x: int, t):
        return self.occupation(x, t) / self.mu[x]

    def at(self, t: float) -> np.ndarray:
        """The whole field x -> L(x, t)."""
        return np.array([self.occupation(x, t) for x in range(self.n)]) / self.mu

    def curves(self, grid: Sequence[float], vertices: Sequence[int] | None = None) -> np.ndarray:
        """Matrix of L(x, t) with one row per vertex and one column per grid time."""
        grid = np.asarray(grid, dtype=float)
        vs = range(self.n) if vertices is None else vertices
        return np.array([self(x, grid) for x in vs])

    def event_times(self, T: float) -> np.ndarray:
        """Jump times up to T together with T: L is linear in between."""
        t = self.path.times
        return np.append(t[t < T], min(T, self.path.horizon))


def local_times(path: KilledPath, net: ResistanceNetwork) -> LocalTimeField:
    return LocalTimeField(path, net.mu)


def time_integral(path: KilledPath, f: np.ndarray, t: float) -> float:
    """Direct ledger scan of the integral of f(X_s) over [0, t]."""
    if t > path.horizon:
        raise ValueError("time beyond the observed horizon")
    starts = path.times
    ends = np.minimum(path.segment_ends(), t)
    lengths = np.clip(ends - starts, 0.0, None)
    return float(np.sum(np.asarray(f)[path.states] * lengths))


def kernel_local_time(path: KilledPath, net: ResistanceNetwork, delta: float, x: int, t,
                      field: LocalTimeField | None = None, R: np.ndarray | None = None):
    """g_delta(x, t): occupation smoothed by f_delta(x, y) = max(0, delta - R(x, y)).

    The normaliser sum_y f_delta(x, y) mu(y) is positive because
    f_delta(x, x) = delta.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    field = field or local_times(path, net)
    R = net.resistance_matrix if R is None else R
    w = np.maximum(0.0, delta - R[x])
    num = sum(w[y] * field.occupation(y, t) for y in np.flatnonzero(w))
    return num / float(np.sum(w * net.mu))


# ---------------------------------------------------------------------------
# exit and hitting times
# ---------------------------------------------------------------------------

def exit_time(path: KilledPath, subset: Iterable[int]) -> float:
    """eta_A = inf{t >= 0 : X(t) not in A}; the cemetery is outside every A.

    A simulated path that stays in A for its whole observed window reports
    +inf (no exit observed).
    """
    subset = set(int(a) for a in subset)
    for t, s in zip(path.times, path.states):
        if s not in subset:
            return float(t)
    return path.kill


def hitting_time(path: KilledPath, subset: Iterable[int]) -> float:
    """sigma_A = inf{t > 0 : X(t) in A}.

    Step paths hold their initial state for a positive time, so a path that
    starts inside A has sigma_A = 0.
    """
    subset = set(int(a) for a in subset)
    for t, s in zip(path.times, path.states):
        if s in subset:
            return float(t)
    return math.inf


def return_time(path: KilledPath) -> float:
    """First time after the first jump at which the path is back at its start."""
    if path.n_segments < 2:
        return math.inf
    back = np.flatnonzero(path.states[1:] == path.states[0])
    return float(path.times[1 + back[0]]) if back.size else math.inf


# ---------------------------------------------------------------------------
# trace process
# ---------------------------------------------------------------------------

def trace_vertices(net: ResistanceNetwork, r: float, root: int = 0) -> np.ndarray:
    """F^(r): the open resistance ball of radius r around the root (root included)."""
    R = net.resistance_matrix[root]
    keep = np.flatnonzero(R < r)
    return np.union1d(keep, [root])


def trace_path(path: KilledPath, vertices: Iterable[int]) -> KilledPath:
    """Time-change ``path`` by the inverse of its occupation clock on ``vertices``.

    Time spent outside the set is cut out and the remaining segments are
    glued together; consecutive segments in the same state are merged.
    """
    vertices = [int(v) for v in vertices]
    inside = np.zeros(max(int(path.states.max(initial=0)), max(vertices, default=0)) + 1, bool)
    inside[vertices] = True
    starts = path.times
    ends = path.segment_ends()
    keep = inside[path.states]
    lengths = (ends - starts)[keep]
    states = path.states[keep]
    new_times = np.concatenate([[0.0], np.cumsum(lengths)])
    total = new_times[-1]
    times, states = merge_repeats(new_times[:-1], states)
    # the clock A(t) maps the original end point to the accumulated total
    kill = total if math.isfinite(path.kill) else math.inf
    horizon = total if math.isfinite(path.horizon) else math.inf
    if times.size == 0:
        return KilledPath(np.array([]), np.array([], dtype=int), 0.0)
    return KilledPath(times, states, kill, horizon)


def trace_process(path: KilledPath, net: ResistanceNetwork, r: float, root: int = 0):
    """Trace of the walk on F^(r); returns the traced path, its local times and F^(r)."""
    if r <= 0:
        raise ValueError("radius must be positive")
    verts = trace_vertices(net, r, root)
    tr = trace_path(path, verts)
    return tr, LocalTimeField(tr, net.mu), verts


# ---------------------------------------------------------------------------
# chaining bounds
# ---------------------------------------------------------------------------

def chaining_rhs(space: FiniteMetricSpace | EntropyProfile, n: int, r_fn: Callable[[float], float],
                 q_fn: Callable[[float], float], k_cap: int = 5000) -> tuple[float, float]:
    """The two sides of the dyadic chaining bound.

    Returns (2 sum_{k>=n} r(2^(3-k)), sum_{k>=n} (k+1)^2 N(F, 2^-k)^2 q(2^(3-k))).
    Both series are summed until k is past the saturation index of the
    covering profile and the new terms fall below 1e-16 of the partial sums,
    or until ``k_cap``.
    """
    profile = space if isinstance(space, EntropyProfile) else entropy_profile(space)
    thr, prob = [], []
    k = n
    while True:
        u = 2.0 ** (3 - k)
        a = 2.0 * r_fn(u)
        b = (k + 1) ** 2 * profile.at(k) ** 2 * q_fn(u)
        thr.append(a)
        prob.append(b)
        done_a = a == 0 or a < 1e-16 * math.fsum(thr)
        done_b = b == 0 or b < 1e-16 * math.fsum(prob)
        if k >= profile.k_max and done_a and done_b:
            break
        k += 1
        if k - n > k_cap:
            break
    return float(math.fsum(thr)), float(math.fsum(prob))


def local_time_threshold_constant(alpha: float) -> float:
    """c_alpha for the compact-case local-time modulus bound.

    The pairwise tail P(sup_t |L_t(x) - L_t(y)| > 2 delta)
    <= 2 e^T exp(-delta / sqrt(2 mu(F) R)) with delta = sqrt(2 mu(F)) R^(1/2 - alpha)
    gives r(u) = 2 sqrt(2 mu(F)) u^(1/2 - alpha) and q(u) = 2 e^T exp(-u^-alpha).
    Summing 2 r(2^(3-k)) over k >= n is a geometric series:
    sqrt(mu(F)) * 4 sqrt(2) 2^(3 beta) / (1 - 2^-beta) * 2^(-beta n), beta = 1/2 - alpha.
    """
    if not 0 < alpha < 0.5:
        raise ValueError("alpha must lie in (0, 1/2)")
    beta = 0.5 - alpha
    return 4.0 * math.sqrt(2.0) * 2.0 ** (3 * beta) / (1.0 - 2.0 ** (-beta))


def local_time_modulus(field: LocalTimeField, pairs: np.ndarray, T: float) -> float:
    """max over the given vertex pairs of sup_{t <= T} |L_t(x) - L_t(y)|.

    Both curves are piecewise linear with kinks at jump times, so the sup is
    attained on the jump times up to T.  No pairs gives 0.
    """
    if len(pairs) == 0:
        return 0.0
    ts = field.event_times(T)
    verts = np.unique(pairs)
    vals = {int(v): field(int(v), ts) for v in verts}
    return float(max(np.max(np.abs(vals[int(x)] - vals[int(y)])) for x, y in pairs))


def close_pairs(R: np.ndarray, radius: float) -> np.ndarray:
    """Unordered pairs x < y with R(x, y) < radius."""
    i, j = np.nonzero(np.triu(R < radius, k=1))
    return np.column_stack([i, j])


def local_time_moduli(net: ResistanceNetwork, T: float, levels: Sequence[int], replicas: int,
                      seed: int = 0, start: int = 0, experiment: str = "equicontinuity") -> np.ndarray:
    """Per replica and per level n, the modulus over pairs with R < 2^(1-n)."""
    R = net.resistance_matrix
    tab = jump_tables(net)
    pair_sets = [close_pairs(R, 2.0 ** (1 - n)) for n in levels]
    out = np.zeros((replicas, len(levels)))
    for i in range(replicas):
        path = simulate_walk(net, start, T, stream(experiment, seed, i), tables=tab)
        field = local_times(path, net)
        for j, pairs in enumerate(pair_sets):
            out[i, j] = local_time_modulus(field, pairs, T)
    return out


def equicontinuity_check(net: ResistanceNetwork, T: float, alpha: float, n: int, replicas: int,
                         seed: int = 0, moduli: np.ndarray | None = None,
                         profile: EntropyProfile | None = None) -> dict:
    """Monte Carlo check of the compact-case local-time modulus bound at level n."""
    c_alpha = local_time_threshold_constant(alpha)
    threshold = c_alpha * math.sqrt(net.total_mass) * 2.0 ** (-(0.5 - alpha) * n)
    if moduli is None:
        moduli = local_time_moduli(net, T, [n], replicas, seed)[:, 0]
    freq = float(np.mean(moduli > threshold))
    profile = profile or entropy_profile(FiniteMetricSpace(net.resistance_matrix, trusted=True))
    _, rhs = chaining_rhs(profile, n, lambda u: 0.0,
                          lambda u: 2.0 * math.exp(T) * math.exp(-u ** -alpha))
    se = math.sqrt(max(freq * (1 - freq), 1.0 / len(moduli)) / len(moduli))
    return {"lhs_freq": freq, "rhs_bound": rhs, "threshold": threshold, "c_alpha": c_alpha,
            "stderr": se, "holds": freq <= rhs + 3 * se}


def pairwise_tail_check(net: ResistanceNetwork, x: int, y: int, T: float, deltas: Sequence[float],
                        replicas: int, seed: int = 0, start: int = 0) -> list[dict]:
    """Empirical P(sup_{t<=T}|L_t(x)-L_t(y)| > 2 delta) against
    2 e^T exp(-delta / (c_K R(x,y)^(1/4))) with c_K = (min u_1(z,z))^(-1/4)."""
    R = net.resistance_matrix[x, y]
    cK = local_time_pair_constant(potential_density(net, 1.0))
    tab = jump_tables(net)
    mods = np.empty(replicas)
    pair = np.array([[x, y]])
    for i in range(replicas):
        path = simulate_walk(net, start, T, stream("pairwise-tail", seed, i), tables=tab)
        mods[i] = local_time_modulus(local_times(path, net), pair, T)
    rows = []
    for d in deltas:
        freq = float(np.mean(mods > 2 * d))
        bound = 2 * math.exp(T) * math.exp(-d / (cK * R ** 0.25))
        se = math.sqrt(max(freq * (1 - freq), 1.0 / replicas) / replicas)
        rows.append({"delta": d, "freq": freq, "bound": bound, "holds": freq <= bound + 3 * se})
    return rows


def exit_bound(net: ResistanceNetwork, root: int, r: float, delta: float, t: float) -> float:
    """Upper bound on P_root(sigma_{B(root,r)^c} <= t) for delta in (0, R(root, B^c)).

    4 delta / R(root, B^c) + 4 t / (mu(B(root, delta)) (R(root, B^c) - delta)),
    with B(root, delta) the open resistance ball.
    """
    from .resistance import ball_complement_resistance

    Rc = ball_complement_resistance(net, root, r)
    if not 0 < delta < Rc:
        raise ValueError("delta must lie in (0, R(root, B^c))")
    if math.isinf(Rc):
        return 0.0
    inner = net.mu[net.resistance_matrix[root] < delta].sum()
    return 4 * delta / Rc + 4 * t / (inner * (Rc - delta))
