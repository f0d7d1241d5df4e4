"""Experiment configuration, replica fan-out and persisted run records."""
from __future__ import annotations

import hashlib
import itertools
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .. import __version__
from ..connectivity import kappa_disconnects, simulate_tdisc
from ..lattice import BoxAlpha, CylinderGeom, Slab
from ..walk import drift_from_alpha, run_excursions
from .fitting import fit_exponent

WORKERS_ENV = "CYLDISC_WORKERS"
KINDS = ("tdisc", "excursion", "cover", "spectral", "green", "geom", "exponents")
CSV_HEADER = ("kind", "N", "replica", "seed", "value", "censored", "steps", "aux")


def worker_count() -> int:
    v = os.environ.get(WORKERS_ENV)
    if v:
        n = int(v)
        if n < 1:
            raise ValueError(f"{WORKERS_ENV} must be a positive integer")
        return n
    return os.cpu_count() or 1


def stream(seed: int, N: int, replica: int) -> np.random.Generator:
    """Per-replica generator keyed by (seed, N, replica)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(N),
                                                                         int(replica)])))


@dataclass
class ExperimentConfig:
    kind: str = "tdisc"
    d: int = 3
    Ns: tuple = (4, 6, 8)
    alpha: float = 2.0
    beta: float = 0.5
    replicas: int = 100
    budget_steps: int = 10 ** 8
    seed: int = 1
    xi: float = 1.0                 # rate exponent reported for excursion events
    gamma_prime: float = 0.5        # box side L = floor(N^gamma') for excursion counts
    start_z: int = 0                # excursion runs start at (0, ..., 0, start_z)
    out: str = "out"
    fmt: str = "csv"
    svg: bool = False

    def __post_init__(self):
        self.Ns = tuple(int(n) for n in self.Ns)
        if self.kind not in KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}")
        if self.d < 1 or any(n < 2 for n in self.Ns):
            raise ValueError("need d >= 1 and every N >= 2")
        if self.replicas < 1 or self.budget_steps < 1:
            raise ValueError("replicas and budget_steps must be positive")
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError("alpha and beta must be positive")

    # flat key=value text; floats use repr so the round trip is exact
    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "Ns":
                v = ",".join(str(n) for n in v)
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        return cls(**parse_flat(text))

    def fingerprint(self) -> str:
        return hashlib.sha256((__version__ + "\n" + self.to_text()).encode()).hexdigest()[:16]


def parse_flat(text: str) -> dict:
    """Parse a flat key=value file into typed ExperimentConfig fields ('#' starts a comment)."""
    types = {f.name: f.type for f in fields(ExperimentConfig)}
    out = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"expected key=value, got {raw!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        k = k.replace("-", "_")
        if k == "n":
            k = "Ns"
        if k not in types:
            raise ValueError(f"unknown config key {k!r}")
        t = types[k]
        if k == "Ns":
            out[k] = tuple(int(x) for x in v.split(",") if x.strip())
        elif t == "int":
            out[k] = int(float(v)) if "e" in v.lower() else int(v)
        elif t == "float":
            out[k] = float(v)
        elif t == "bool":
            out[k] = v.lower() in ("1", "true", "yes", "on")
        else:
            out[k] = v
    return out


@dataclass
class RunRecord:
    config: ExperimentConfig
    rows: list                      # tuples in CSV_HEADER order
    summary: dict = field(default_factory=dict)
    fingerprint: str = ""

    def values(self, N: int) -> tuple:
        """(values, censored flags) for one N, in replica order."""
        sel = [r for r in self.rows if r[1] == N]
        return (np.array([r[4] for r in sel], dtype=float),
                np.array([r[5] for r in sel], dtype=bool))


# ----------------------------------------------------------------- statistics

def censored_median(values, censored) -> tuple:
    """Median with censored entries read as +inf; returns (median or None, median_censored)."""
    v = np.where(np.asarray(censored, dtype=bool), np.inf, np.asarray(values, dtype=float))
    if v.size == 0:
        return None, False
    s = np.sort(v)
    n = len(s)
    mid = s[(n - 1) // 2: n // 2 + 1]
    if np.any(np.isinf(mid)):
        return None, True
    return float(mid.mean()), False


def binomial_summary(events, n: int, xi: float, N: int, conf: float = 0.95) -> dict:
    k = int(np.sum(events))
    out = {"n": n, "events": k}
    if n == 0:
        return out
    p = k / n
    out["frequency"] = p
    out["se"] = math.sqrt(max(p * (1 - p), 0.0) / n)
    if k == 0:
        out["upper_bound"] = 1.0 - (1.0 - conf) ** (1.0 / n)
        out["rate"] = None
        out["rate_lower_bound"] = -math.log(out["upper_bound"]) / N ** xi
    else:
        out["rate"] = -math.log(p) / N ** xi
    return out


# ------------------------------------------------------------------ Tdisc runs

def _tdisc_replica(args):
    d, N, alpha, budget, seed, r = args
    geom = CylinderGeom(d, N)
    delta = drift_from_alpha(N, d, alpha).delta
    out = simulate_tdisc(geom, delta, stream(seed, N, r), budget)
    cens = out.T is None
    return ("tdisc", N, r, f"{seed}:{N}:{r}", out.steps if cens else out.T, int(cens),
            out.steps, out.checks)


def _fan_out(func, jobs, workers: int | None = None):
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(jobs) < 2:
        return [func(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(func, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


def summarize_tdisc(config: ExperimentConfig, rows) -> dict:
    per = {}
    meds = {}
    for N in config.Ns:
        sel = [r for r in rows if r[1] == N]
        vals = np.array([r[4] for r in sel], dtype=float)
        cen = np.array([r[5] for r in sel], dtype=bool)
        med, med_c = censored_median(vals, cen)
        fin = vals[~cen]
        per[str(N)] = {"n": len(sel), "censored": int(cen.sum()), "median": med,
                       "median_censored": med_c,
                       "mean_log_finite": float(np.mean(np.log(fin))) if fin.size else None,
                       "a_N": float(N ** config.d * math.log(N) ** 2)}
        if med is not None:
            meds[N] = np.where(cen, np.inf, vals)
    summary = {"per_N": per}
    if len(meds) >= 3 and all(np.isfinite(v).all() for v in meds.values()):
        if config.alpha > 1:
            fit = fit_exponent(meds, "loglog", rng=np.random.default_rng(config.seed))
        else:
            fit = fit_exponent(meds, "power", power=config.d * (1 - config.alpha),
                               rng=np.random.default_rng(config.seed))
        summary["fit"] = asdict(fit)
    return summary


def estimate_Tdisc(config: ExperimentConfig, workers: int | None = None) -> RunRecord:
    """Exact disconnection times per replica; budget hits are kept as censored rows."""
    jobs = [(config.d, N, config.alpha, config.budget_steps, config.seed, r)
            for N in config.Ns for r in range(config.replicas)]
    rows = _fan_out(_tdisc_replica, jobs, workers)
    rows.sort(key=lambda r: (r[1], r[2]))
    return RunRecord(config, rows, summarize_tdisc(config, rows), config.fingerprint())


# ---------------------------------------------------------- excursion events

def excursion_scales(N: int, d: int, alpha: float, beta: float) -> tuple:
    """(r, k): slabs S_{2r}, S_{4r} with r = [N^{d alpha ^ 1}] and k = [N^beta] excursions."""
    e = min(d * alpha, 1.0)
    r = int(round(N ** e)) if abs(N ** e - round(N ** e)) < 1e-9 else int(math.floor(N ** e))
    k = int(round(N ** beta)) if abs(N ** beta - round(N ** beta)) < 1e-9 else int(math.floor(N ** beta))
    return r, max(k, 1)


def count_returns(in_inner: np.ndarray, in_outer: np.ndarray) -> int:
    """Number of returns to the inner set, each after leaving the outer set (first entry counts)."""
    pos = 0
    n = 0
    looking = True
    L = len(in_inner)
    while pos < L:
        if looking:
            hit = np.flatnonzero(in_inner[pos:])
            if hit.size == 0:
                break
            n += 1
            pos += int(hit[0])
        else:
            hit = np.flatnonzero(~in_outer[pos:])
            if hit.size == 0:
                break
            pos += int(hit[0])
        looking = not looking
    return n


def _cube_masks(steps: np.ndarray, N: int, L: int):
    """Membership in C_0(L) and in its L-neighbourhood."""
    t = steps[:, :-1] % N
    z = steps[:, -1]
    inner = np.all(t < L, axis=1) & (z >= 0) & (z < L)
    if 3 * L >= N:
        tor = np.ones(len(steps), dtype=bool)
    else:
        tor = np.all((t + L) % N < 3 * L, axis=1)
    outer = tor & (z >= -L) & (z < 2 * L)
    return inner, outer


def _excursion_replica(args):
    d, N, alpha, beta, gamma_p, start_z, budget, seed, r = args
    geom = CylinderGeom(d, N)
    rr, k = excursion_scales(N, d, alpha, beta)
    if abs(start_z) > 2 * rr:
        raise ValueError(f"start height {start_z} lies outside S_{2 * rr}")
    box = BoxAlpha(geom, alpha)
    traj, sched = run_excursions(geom, 0.0, Slab(geom, 2 * rr), Slab(geom, 4 * rr), k,
                                 (0,) * d + (start_z,), stream(seed, N, r), budget=budget)
    B = box.members()
    K = traj.visited & B
    res = kappa_disconnects(K, B, 1.0 / 3.0, geom)
    L = max(1, int(math.floor(N ** gamma_p + 1e-9)))
    inner, outer = _cube_masks(traj.steps, N, L)
    returns = count_returns(inner, outer)
    cens = bool(sched.exhausted and not res)
    return ("excursion", N, r, f"{seed}:{N}:{r}", int(bool(res)), int(cens), traj.length, returns)


def estimate_excursion_event(config: ExperimentConfig, workers: int | None = None) -> RunRecord:
    """Frequency of {the walk 1/3-disconnects B(alpha) before the [N^beta]-th departure}.

    The walk is unbiased and starts at height ``start_z`` above the origin.  ``aux`` holds the number
    of returns to C_0(L) separated by exits from its L-neighbourhood.
    """
    jobs = [(config.d, N, config.alpha, config.beta, config.gamma_prime, config.start_z,
             config.budget_steps, config.seed, r) for N in config.Ns for r in range(config.replicas)]
    rows = _fan_out(_excursion_replica, jobs, workers)
    rows.sort(key=lambda r: (r[1], r[2]))
    return RunRecord(config, rows, summarize_excursion(config, rows), config.fingerprint())


def summarize_excursion(config: ExperimentConfig, rows) -> dict:
    per = {}
    for N in config.Ns:
        sel = [r for r in rows if r[1] == N]
        ok = [r for r in sel if not r[5]]
        s = binomial_summary([r[4] for r in ok], len(ok), config.xi, N)
        s["censored"] = len(sel) - len(ok)
        counts = np.array([r[7] for r in sel], dtype=np.int64)
        s["returns_mean"] = float(counts.mean()) if counts.size else None
        s["returns_hist"] = {str(int(v)): int(c) for v, c in zip(*np.unique(counts, return_counts=True))}
        s["r"], s["k"] = excursion_scales(N, config.d, config.alpha, config.beta)
        per[str(N)] = s
    return {"per_N": per}


def excursion_event_exact(N: int, d: int, alpha: float, start=None) -> float:
    """P^0[X[0, D_1] 1/3-disconnects B(alpha)] from a start inside S_{2r}.

    Exact for a single excursion: the walk is a Markov chain on
    (position in S_{4r}) x (visited subset of B(alpha)); the subsets only grow,
    so one sparse solve per subset, largest subsets first.
    """
    geom = CylinderGeom(d, N)
    r, _ = excursion_scales(N, d, alpha, 1e-9)
    box = BoxAlpha(geom, alpha)
    B = sorted(box.members())
    m = len(B)
    if m > 14:
        raise ValueError(f"|B(alpha)| = {m} is too large for subset enumeration")
    bidx = {x: i for i, x in enumerate(B)}
    disc = np.zeros(1 << m, dtype=bool)
    for S in range(1 << m):
        K = {B[i] for i in range(m) if S >> i & 1}
        disc[S] = bool(kappa_disconnects(K, B, 1.0 / 3.0, geom)) if K else False
    zs = range(-4 * r, 4 * r + 1)
    tor = list(itertools.product(range(N), repeat=d))
    sites = [u + (z,) for z in zs for u in tor]
    pidx = {x: i for i, x in enumerate(sites)}
    P = len(sites)
    moves = []
    for i in range(d + 1):
        for s in (1, -1):
            v = [0] * (d + 1)
            v[i] = s
            moves.append(v)
    q = 1.0 / len(moves)
    succ = []
    for x in sites:
        row = []
        for v in moves:
            y = geom.wrap(tuple(a + b for a, b in zip(x, v)))
            row.append(y)
        succ.append(row)
    V = np.zeros((1 << m, P))
    order = sorted(range(1 << m), key=lambda S: -bin(S).count("1"))
    for S in order:
        rows, cols, vals = [], [], []
        b = np.zeros(P)
        for i, x in enumerate(sites):
            rows.append(i)
            cols.append(i)
            vals.append(1.0)
            for y in succ[i]:
                if abs(y[-1]) > 4 * r:
                    b[i] += q * disc[S]
                    continue
                j = bidx.get(y)
                if j is not None and not S >> j & 1:
                    b[i] += q * V[S | 1 << j, pidx[y]]
                else:
                    rows.append(i)
                    cols.append(pidx[y])
                    vals.append(-q)
        A = sp.csc_matrix((vals, (rows, cols)), shape=(P, P))
        V[S] = spsolve(A, b)
    x0 = geom.wrap((0,) * (d + 1) if start is None else start)
    S0 = 1 << bidx[x0] if x0 in bidx else 0
    return float(V[S0, pidx[x0]])
