"""Drifted nearest-neighbour walk on the cylinder, discrete and continuous time.

A step is encoded by one uniform r in [0, 1):

    r <  2d/(2d+2)                     lateral move number floor(r (2d+2))
    r <  2d/(2d+2) + (1+delta)/(2d+2)  up
    otherwise                          down

Lateral move m changes coordinate m // 2 by +1 (m even) or -1 (m odd), which
is the neighbour order of :func:`cyldisc.lattice.neighbors`.  Every engine in
the package (numpy, numba) uses this same encoding, so a stream of uniforms
pins down a path independently of which engine consumed it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .lattice import CylinderGeom

INF = math.inf


def replica_rng(master_seed: int, replica: int) -> np.random.Generator:
    """Counter-based stream keyed by (master seed, replica index)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(master_seed), int(replica)])))


@dataclass(frozen=True)
class DriftParams:
    delta: float
    alpha: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.delta < 1.0:
            raise ValueError(f"delta must lie in [0, 1), got {self.delta}")

    @property
    def p_up(self) -> float:
        """Conditional probability of +1 given a vertical move."""
        return (1.0 + self.delta) / 2.0


def drift_from_alpha(N: int, d: int, alpha: float) -> DriftParams:
    """delta = N^{-d alpha}, evaluated as the float power N ** (-(d*alpha))."""
    if alpha <= 0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    if N < 2 or d < 1:
        raise ValueError("need N >= 2 and d >= 1")
    return DriftParams(float(N) ** (-(d * alpha)), alpha)


def as_drift(drift) -> DriftParams:
    if isinstance(drift, DriftParams):
        return drift
    return DriftParams(float(drift))


def thresholds(d: int, delta: float) -> tuple:
    """(p_lateral, p_lateral + p_up) for the uniform encoding."""
    p_lat = 2 * d / (2 * d + 2)
    return p_lat, p_lat + (1.0 + delta) / (2 * d + 2)


def decode_moves(u: np.ndarray, d: int, delta: float) -> np.ndarray:
    """Map uniforms to move codes 0..2d+1 (2d is up, 2d+1 is down)."""
    p_lat, p_up = thresholds(d, delta)
    codes = np.where(u < p_lat, np.floor(u * (2 * d + 2)), np.where(u < p_up, 2 * d, 2 * d + 1))
    return np.minimum(codes.astype(np.int64), 2 * d + 1)


def move_vectors(d: int) -> np.ndarray:
    """Row m is the displacement of move code m."""
    v = np.zeros((2 * d + 2, d + 1), dtype=np.int64)
    for m in range(2 * d + 2):
        v[m, m // 2] = 1 if m % 2 == 0 else -1
    return v


def step(state, drift, rng, geom: CylinderGeom):
    """One step of the drifted walk from ``state``."""
    delta = as_drift(drift).delta
    code = int(decode_moves(np.array([rng.random()]), geom.d, delta)[0])
    y = list(state)
    i = code // 2
    y[i] += 1 if code % 2 == 0 else -1
    if i < geom.d:
        y[i] %= geom.N
    return tuple(y)


@dataclass
class Trajectory:
    geom: CylinderGeom
    steps: np.ndarray          # (n+1, d+1) int64, torus coordinates reduced
    seed: object = None

    @property
    def length(self) -> int:
        """Number of steps n (the path is X_0..X_n)."""
        return self.steps.shape[0] - 1

    def site(self, n: int) -> tuple:
        return tuple(int(c) for c in self.steps[n])

    @cached_property
    def visited(self) -> frozenset:
        return frozenset(map(tuple, self.steps.tolist()))

    def prefix_visited(self, n: int) -> frozenset:
        return frozenset(map(tuple, self.steps[: n + 1].tolist()))

    @property
    def z_extent(self) -> tuple:
        z = self.steps[:, -1]
        return int(z.min()), int(z.max())

    def prefix(self, n: int) -> "Trajectory":
        return Trajectory(self.geom, self.steps[: n + 1].copy(), self.seed)


def path_from_codes(geom: CylinderGeom, codes: np.ndarray, start) -> np.ndarray:
    steps = np.empty((len(codes) + 1, geom.d + 1), dtype=np.int64)
    steps[0] = start
    if len(codes):
        steps[1:] = np.cumsum(move_vectors(geom.d)[codes], axis=0) + np.asarray(start)
        steps[1:, :-1] %= geom.N
    return steps


def simulate_walk(geom: CylinderGeom, drift, n_steps: int, rng, start=None, seed=None) -> Trajectory:
    """n_steps steps from ``start``; consumes exactly n_steps uniforms."""
    if start is None:
        start = (0,) * (geom.d + 1)
    delta = as_drift(drift).delta
    codes = decode_moves(rng.random(n_steps), geom.d, delta)
    return Trajectory(geom, path_from_codes(geom, codes, geom.wrap(start)), seed)


def walk_from_uniforms(geom: CylinderGeom, delta: float, uniforms: np.ndarray, start=None) -> Trajectory:
    if start is None:
        start = (0,) * (geom.d + 1)
    return Trajectory(geom, path_from_codes(geom, decode_moves(uniforms, geom.d, delta), geom.wrap(start)))


# --------------------------------------------------------------- excursions

@dataclass
class ExcursionSchedule:
    inner: object
    outer: object
    returns: list = field(default_factory=list)
    departures: list = field(default_factory=list)
    exhausted: bool = False

    def check(self):
        seq = []
        for n, r in enumerate(self.returns):
            seq.append(r)
            if n < len(self.departures):
                seq.append(self.departures[n])
        for a, b in zip(seq, seq[1:]):
            if not a < b:
                raise AssertionError(f"schedule not strictly increasing: {seq}")
        return True


def run_excursions(geom: CylinderGeom, drift, inner, outer, k: int, start, rng,
                   budget: int = 10 ** 7, chunk: int = 4096):
    """Walk until the k-th departure from ``outer`` after a return to ``inner``.

    The returned schedule holds R_1 <= D_1 < R_2 < D_2 < ... as step indices;
    ``exhausted`` is set when the step budget ran out first.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    delta = as_drift(drift).delta
    start = geom.wrap(start)
    blocks = [np.asarray(start, dtype=np.int64)[None, :]]
    in_a = [inner.contains_array(blocks[0])]
    in_b = [outer.contains_array(blocks[0])]
    if in_a[0][0] and not in_b[0][0]:
        raise ValueError("inner region must be contained in outer region")
    sched = ExcursionSchedule(inner, outer)
    looking_for_return = True
    pos = 0          # global index of next site to scan
    offset = 0       # global index of first site of current block
    total = 1
    cur = start
    blk = 0
    while True:
        a, b = in_a[blk], in_b[blk]
        while pos - offset < len(a):
            loc = pos - offset
            if looking_for_return:
                hit = np.flatnonzero(a[loc:])
                if hit.size == 0:
                    pos = offset + len(a)
                    break
                pos += int(hit[0])
                sched.returns.append(pos)
                looking_for_return = False
            else:
                hit = np.flatnonzero(~b[loc:])
                if hit.size == 0:
                    pos = offset + len(a)
                    break
                pos += int(hit[0])
                sched.departures.append(pos)
                looking_for_return = True
                if len(sched.departures) == k:
                    steps = np.concatenate(blocks)[: pos + 1]
                    return Trajectory(geom, steps), sched
        if total - 1 >= budget:
            sched.exhausted = True
            steps = np.concatenate(blocks)[: budget + 1]
            return Trajectory(geom, steps), sched
        m = min(chunk, budget - (total - 1))
        codes = decode_moves(rng.random(m), geom.d, delta)
        new = path_from_codes(geom, codes, cur)[1:]
        cur = tuple(int(c) for c in new[-1])
        offset += len(blocks[blk])
        blocks.append(new)
        in_a.append(inner.contains_array(new))
        in_b.append(outer.contains_array(new))
        total += m
        blk += 1


# ------------------------------------------------------ continuous embedding

def exp_gaps(rng, rate: float, size: int) -> np.ndarray:
    """Exponential(rate) variables by inverse CDF."""
    return -np.log1p(-rng.random(size)) / rate


def poisson_times(rng, rate: float, horizon: float) -> np.ndarray:
    """Jump times of a rate-``rate`` Poisson process on [0, horizon]."""
    mean = rate * horizon
    parts = []
    t = 0.0
    while True:
        m = int(mean + 6.0 * math.sqrt(mean) + 16)
        ts = t + np.cumsum(exp_gaps(rng, rate, m))
        parts.append(ts)
        if ts[-1] > horizon:
            break
        t = float(ts[-1])
        mean = rate * (horizon - t)
    allt = np.concatenate(parts)
    return allt[: np.searchsorted(allt, horizon, side="right")]


@dataclass
class ContinuousEmbedding:
    """Independent torus walk (rate 1) and vertical walk (rate 1/d).

    Times are 64-bit floats.  Positions are right-continuous: the value at a
    jump time already includes that jump.
    """
    geom: CylinderGeom
    delta: float
    start: tuple
    horizon: float
    y_times: np.ndarray
    y_moves: np.ndarray        # lateral move codes 0..2d-1
    z_times: np.ndarray
    z_steps: np.ndarray        # +1 / -1

    @cached_property
    def y_path(self) -> np.ndarray:
        """Torus position after each torus jump, row 0 is the start."""
        d, N = self.geom.d, self.geom.N
        out = np.empty((len(self.y_moves) + 1, d), dtype=np.int64)
        out[0] = self.start[:-1]
        if len(self.y_moves):
            out[1:] = (np.cumsum(move_vectors(d)[self.y_moves][:, :d], axis=0) + out[0]) % N
        return out

    @cached_property
    def z_path(self) -> np.ndarray:
        out = np.empty(len(self.z_steps) + 1, dtype=np.int64)
        out[0] = self.start[-1]
        out[1:] = out[0] + np.cumsum(self.z_steps)
        return out

    @cached_property
    def x_times(self) -> np.ndarray:
        return np.sort(np.concatenate([self.y_times, self.z_times]), kind="stable")

    def count_y(self, t: float) -> int:
        return int(np.searchsorted(self.y_times, t, side="right"))

    def count_z(self, t: float) -> int:
        return int(np.searchsorted(self.z_times, t, side="right"))

    def count_x(self, t: float) -> int:
        return self.count_y(t) + self.count_z(t)

    def position(self, t: float) -> tuple:
        u = self.y_path[self.count_y(t)]
        z = self.z_path[self.count_z(t)]
        return tuple(int(c) for c in u) + (int(z),)

    def skeleton(self) -> Trajectory:
        """The discrete walk X read off at the merged jump times."""
        d = self.geom.d
        codes = np.concatenate([self.y_moves, np.where(self.z_steps > 0, 2 * d, 2 * d + 1)])
        times = np.concatenate([self.y_times, self.z_times])
        order = np.argsort(times, kind="stable")
        return Trajectory(self.geom, path_from_codes(self.geom, codes[order], self.start))


def simulate_embedding(geom: CylinderGeom, drift, horizon: float, start, rng):
    """Continuous-time walk on [0, horizon]; returns (embedding, skeleton)."""
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    delta = as_drift(drift).delta
    d = geom.d
    yt = poisson_times(rng, 1.0, horizon)
    ym = np.minimum((rng.random(len(yt)) * (2 * d)).astype(np.int64), 2 * d - 1)
    zt = poisson_times(rng, 1.0 / d, horizon)
    zs = np.where(rng.random(len(zt)) < (1.0 + delta) / 2.0, 1, -1).astype(np.int64)
    emb = ContinuousEmbedding(geom, delta, geom.wrap(start), float(horizon), yt, ym, zt, zs)
    return emb, emb.skeleton()


@dataclass
class VisitChainSample:
    stop_times: list           # S_0, S_1, ...; INF when the stage did not finish in budget
    values: list               # V_n torus points, one per finite stop time
    y_counts: list             # number of torus jumps by S_n, one per finite stop time

    @property
    def finite(self) -> int:
        return len(self.values)


def visit_chain(emb: ContinuousEmbedding, k: int) -> VisitChainSample:
    """S_0 = 0, S_n = (first torus jump after S_{n-1}) + (vertical return time to 0)."""
    if emb.start[-1] != 0:
        raise ValueError("the embedding must start on the slice z = 0")
    zeros = emb.z_times[np.flatnonzero(emb.z_path[1:] == 0)]
    times = [0.0]
    vals = [tuple(int(c) for c in emb.start[:-1])]
    counts = [0]
    s = 0.0
    for _ in range(k):
        j = int(np.searchsorted(emb.y_times, s, side="right"))
        if j >= len(emb.y_times):
            times.append(INF)
            break
        jt = float(emb.y_times[j])
        if emb.z_path[emb.count_z(jt)] == 0:
            s = jt
        else:
            q = int(np.searchsorted(zeros, jt, side="right"))
            if q >= len(zeros):
                times.append(INF)
                break
            s = float(zeros[q])
        times.append(s)
        c = emb.count_y(s)
        counts.append(c)
        vals.append(tuple(int(x) for x in emb.y_path[c]))
    return VisitChainSample(times, vals, counts)


def hitting_time_1d(rng, target: int, p_up: float, rate: float, budget: float) -> float:
    """Time for a rate-``rate`` +-1 walk from 0 to reach ``target``; INF past budget."""
    if target == 0:
        return 0.0
    pos, t = 0, 0.0
    m = 64
    while True:
        st = np.where(rng.random(m) < p_up, 1, -1)
        path = pos + np.cumsum(st)
        ts = t + np.cumsum(exp_gaps(rng, rate, m))
        hit = np.flatnonzero(path == target)
        if hit.size:
            th = float(ts[hit[0]])
            return th if th <= budget else INF
        if ts[-1] > budget:
            return INF
        pos, t = int(path[-1]), float(ts[-1])
        m = min(2 * m, 1 << 16)


def sample_S_decomposition(drift, n: int, rng, d: int = 1, horizon: float = INF) -> float:
    """One draw from the law of S_n via sigma_1 + ... + sigma_n plus vertical hitting times.

    Each stage uses an Exp(1) holding time sigma, an independent vertical
    displacement accumulated over sigma, and an independent vertical walk that
    must travel back by that displacement.  Totals beyond ``horizon`` are INF,
    which matches the truncation used by :func:`visit_chain`.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    delta = as_drift(drift).delta
    p_up = (1.0 + delta) / 2.0
    rate = 1.0 / d
    total = 0.0
    for _ in range(n):
        sigma = float(exp_gaps(rng, 1.0, 1)[0])
        jumps = int(rng.poisson(sigma * rate))
        ups = int(rng.binomial(jumps, p_up)) if jumps else 0
        zhat = 2 * ups - jumps
        total += sigma
        if total > horizon:
            return INF
        h = hitting_time_1d(rng, -zhat, p_up, rate, horizon - total)
        if h == INF:
            return INF
        total += h
    return total
