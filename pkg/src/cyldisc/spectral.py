"""Spectra of the torus walk and of the slice-visit chain, hitting and cover times."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy import sparse
from scipy.sparse.csgraph import connected_components

from .lattice import CylinderGeom
from .walk import INF, as_drift, poisson_times, ContinuousEmbedding, visit_chain

DENSE_CAP = 4000


@dataclass
class Spectrum:
    eigenvalues: np.ndarray        # sorted decreasing

    def __post_init__(self):
        self.eigenvalues = np.sort(np.asarray(self.eigenvalues, dtype=float))[::-1]

    def __len__(self):
        return len(self.eigenvalues)


@dataclass
class ChainAnalysis:
    u: float
    max_hit: float
    size: int
    slack: float                   # 2u - max_hit
    holds: bool
    hit_symmetric: bool
    symmetric: str                 # "certified", "necessary-only" or "violated"
    reversible: bool
    irreducible: bool
    problems: list = field(default_factory=list)


def torus_modes(N: int, d: int) -> np.ndarray:
    """All wave vectors k in {0..N-1}^d, row-major."""
    return np.array(list(itertools.product(range(N), repeat=d)), dtype=np.int64).reshape(-1, d)


def torus_mode_eigenvalues(N: int, d: int) -> np.ndarray:
    """(1/d) sum_i cos(2 pi k_i / N), in the order of :func:`torus_modes`."""
    k = torus_modes(N, d)
    return np.cos(2.0 * np.pi * k / N).sum(axis=1) / d


def torus_transition_matrix(N: int, d: int) -> np.ndarray:
    """Simple random walk on the torus; for N = 2 the two moves along an axis coincide."""
    geom = CylinderGeom(d, N)
    Nd = N ** d
    P = np.zeros((Nd, Nd))
    for a, u in enumerate(itertools.product(range(N), repeat=d)):
        for i in range(d):
            for s in (1, -1):
                v = list(u)
                v[i] = (v[i] + s) % N
                P[a, geom.torus_index(v)] += 1.0 / (2 * d)
    return P


def torus_translations(N: int, d: int) -> list:
    """Translation maps as index permutations (a transitive automorphism family)."""
    geom = CylinderGeom(d, N)
    pts = list(itertools.product(range(N), repeat=d))
    maps = []
    for t in pts:
        maps.append(np.array([geom.torus_index([a + b for a, b in zip(u, t)]) for u in pts]))
    return maps


def torus_spectrum(N: int, d: int, validate: bool = False) -> Spectrum:
    if N < 2 or d < 1:
        raise ValueError("need N >= 2 and d >= 1")
    if N ** d > 10 ** 6:
        raise ValueError(f"N^d = {N ** d} exceeds 10^6")
    spec = Spectrum(torus_mode_eigenvalues(N, d))
    if validate and N ** d <= 400:
        dense = np.sort(np.linalg.eigvalsh(torus_transition_matrix(N, d)))[::-1]
        err = float(np.max(np.abs(dense - spec.eigenvalues)))
        if err > 1e-10:
            raise AssertionError(f"closed form disagrees with dense eigenvalues by {err}")
    return spec


def dense_spectrum(P: np.ndarray) -> Spectrum:
    P = np.asarray(P, dtype=float)
    if np.allclose(P, P.T, atol=1e-13):
        return Spectrum(np.linalg.eigvalsh(P))
    ev = np.linalg.eigvals(P)
    if np.max(np.abs(ev.imag)) > 1e-9:
        raise ValueError("complex spectrum; chain is not reversible")
    return Spectrum(ev.real)


def u_of_spectrum(spec: Spectrum, tol: float = 1e-12) -> float:
    """sum over m >= 2 of 1 / (1 - lambda_m)."""
    ev = np.asarray(spec.eigenvalues)
    if abs(ev[0] - 1.0) > tol:
        raise ValueError("top eigenvalue is not 1")
    if len(ev) > 1 and ev[1] > 1.0 - tol:
        raise ValueError("eigenvalue 1 is repeated: reducible chain")
    return float(np.sum(1.0 / (1.0 - ev[1:])))


def cover_tail_bound(u: float, G_size: int, n: int) -> float:
    """|G| exp(-[n / (4 e u)])."""
    return G_size * math.exp(-math.floor(n / (4.0 * math.e * u)))


def stationary(P: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eig(P.T)
    i = int(np.argmin(np.abs(w - 1.0)))
    pi = np.abs(v[:, i].real)
    return pi / pi.sum()


def hitting_times(P: np.ndarray) -> np.ndarray:
    """H[g, g'] = E_g[H_{g'}] from the fundamental matrix (first hitting, H_g(g) = 0)."""
    n = P.shape[0]
    pi = stationary(P)
    Z = np.linalg.inv(np.eye(n) - P + np.outer(np.ones(n), pi))
    return (np.diag(Z)[None, :] - Z) / pi[None, :]


def hitting_times_direct(P: np.ndarray) -> np.ndarray:
    """Same quantity by one absorbing linear solve per target (reference)."""
    n = P.shape[0]
    H = np.zeros((n, n))
    for t in range(n):
        keep = np.array([i for i in range(n) if i != t])
        A = np.eye(n - 1) - P[np.ix_(keep, keep)]
        H[keep, t] = np.linalg.solve(A, np.ones(n - 1))
    return H


def _check_maps(P, maps):
    n = P.shape[0]
    orbit = set()
    for g in maps:
        g = np.asarray(g)
        if sorted(g.tolist()) != list(range(n)):
            return False
        if not np.allclose(P[np.ix_(g, g)], P, atol=1e-14):
            return False
        orbit.add(int(g[0]))
    return len(orbit) == n


def eigentime_maxhit_check(P, automorphisms=None, tol: float = 1e-9) -> ChainAnalysis:
    """Max expected hitting time against 2u for a symmetric reversible chain.

    The hypotheses are checked rather than assumed: irreducibility via strong
    components, reversibility via detailed balance, and transitivity either
    from an explicit family of automorphisms (``automorphisms``, index maps)
    or, without one, only through the necessary condition that all rows and
    all columns are rearrangements of each other.
    """
    P = np.asarray(P, dtype=float)
    n = P.shape[0]
    if n > DENSE_CAP:
        raise ValueError(f"state space {n} exceeds dense cap {DENSE_CAP}")
    problems = []
    if not np.allclose(P.sum(axis=1), 1.0, atol=1e-12):
        problems.append("rows do not sum to one")
    ncomp, _ = connected_components(sparse.csr_matrix(P > 0), directed=True, connection="strong")
    irreducible = ncomp == 1
    if not irreducible:
        problems.append("not irreducible")
    pi = stationary(P)
    flow = pi[:, None] * P
    reversible = bool(np.allclose(flow, flow.T, atol=1e-12))
    if not reversible:
        problems.append("not reversible")
    rows_ok = all(np.allclose(np.sort(P[i]), np.sort(P[0]), atol=1e-14) for i in range(n))
    cols_ok = all(np.allclose(np.sort(P[:, i]), np.sort(P[:, 0]), atol=1e-14) for i in range(n))
    if not (rows_ok and cols_ok):
        sym = "violated"
        problems.append("not symmetric: rows or columns differ")
    elif automorphisms is not None:
        sym = "certified" if _check_maps(P, automorphisms) else "violated"
        if sym == "violated":
            problems.append("supplied maps are not a transitive automorphism family")
    else:
        sym = "necessary-only"
    u = u_of_spectrum(dense_spectrum(P))
    H = hitting_times(P)
    max_hit = float(H.max())
    hit_sym = bool(np.allclose(H, H.T, rtol=1e-9, atol=1e-9))
    if not hit_sym:
        problems.append("hitting times not symmetric")
    return ChainAnalysis(u, max_hit, n, 2 * u - max_hit, max_hit <= 2 * u + tol, hit_sym,
                         sym, reversible, irreducible, problems)


def two_state_flip() -> np.ndarray:
    return np.array([[0.0, 1.0], [1.0, 0.0]])


def cycle_chain(n: int, lazy: float = 0.0) -> np.ndarray:
    P = np.zeros((n, n))
    for i in range(n):
        P[i, (i + 1) % n] += (1 - lazy) / 2
        P[i, (i - 1) % n] += (1 - lazy) / 2
        P[i, i] += lazy
    return P


def hypercube_chain(k: int) -> np.ndarray:
    """Walk on {0,1}^k flipping a uniformly chosen bit."""
    n = 1 << k
    P = np.zeros((n, n))
    for i in range(n):
        for b in range(k):
            P[i, i ^ (1 << b)] += 1.0 / k
    return P


def hypercube_translations(k: int) -> list:
    return [np.arange(1 << k) ^ t for t in range(1 << k)]


def u_ratio_table(Ns, d: int) -> dict:
    """u(Y)/N^d per N (and u(Y)/(N^2 log N) for d = 2), recorded, not asserted."""
    out = {}
    for N in Ns:
        u = u_of_spectrum(torus_spectrum(N, d))
        row = {"u": u, "u_over_Nd": u / N ** d}
        if d == 2:
            row["u_over_N2logN"] = u / (N ** 2 * math.log(N))
        out[N] = row
    return out


# ------------------------------------------------------------- cover times

@njit(cache=True)
def _cover_scan(nbt, seen, u, left, unif):
    """Walk over ``unif``; returns (index of the covering step or -1, position, unseen count)."""
    deg = nbt.shape[1]
    for k in range(unif.shape[0]):
        m = int(unif[k] * deg)
        if m >= deg:
            m = deg - 1
        u = nbt[u, m]
        if not seen[u]:
            seen[u] = True
            left -= 1
            if left == 0:
                return k, u, 0
    return -1, u, left


def torus_cover_time(N: int, d: int, rng, budget: int = 10 ** 8) -> int:
    """Steps for the torus walk from 0 to visit every point (-1 past budget)."""
    from .connectivity import torus_neighbor_table
    nbt = torus_neighbor_table(N, d)
    Nd = N ** d
    seen = np.zeros(Nd, dtype=np.bool_)
    seen[0] = True
    left, u, used = Nd - 1, 0, 0
    if left == 0:
        return 0
    chunk = 16 * Nd
    while used < budget:
        unif = rng.random(min(chunk, budget - used))
        k, u, left = _cover_scan(nbt, seen, u, left, unif)
        if k >= 0:
            return used + k + 1
        used += len(unif)
    return -1


def cover_time_samples(N: int, d: int, replicas: int, master_seed: int, budget: int = 10 ** 8):
    from .walk import replica_rng
    return np.array([torus_cover_time(N, d, replica_rng(master_seed, i), budget)
                     for i in range(replicas)], dtype=np.int64)


def cover_tail_check(N: int, d: int, replicas: int, master_seed: int, grid=None, sigmas=3.0):
    """Empirical P[C >= n] against the bound on a grid of n."""
    u = u_of_spectrum(torus_spectrum(N, d))
    G = N ** d
    C = cover_time_samples(N, d, replicas, master_seed)
    if grid is None:
        hi = int(np.quantile(C, 0.999)) + 1
        grid = np.unique(np.linspace(1, hi, 20).astype(int))
    rows = []
    for n in grid:
        p = float(np.mean(C >= n))
        se = math.sqrt(max(p * (1 - p), 0.0) / replicas)
        b = cover_tail_bound(u, G, int(n))
        rows.append({"n": int(n), "tail": p, "se": se, "bound": b,
                     "holds": p <= b + sigmas * se})
    return {"u": u, "G": G, "rows": rows, "holds": all(r["holds"] for r in rows),
            "censored": int(np.sum(C < 0))}


# -------------------------------------------------------- the visit chain

def _embedding(geom, delta, horizon, rng):
    d = geom.d
    yt = poisson_times(rng, 1.0, horizon)
    ym = np.minimum((rng.random(len(yt)) * (2 * d)).astype(np.int64), 2 * d - 1)
    zt = poisson_times(rng, 1.0 / d, horizon)
    zs = np.where(rng.random(len(zt)) < (1.0 + delta) / 2.0, 1, -1).astype(np.int64)
    return ContinuousEmbedding(geom, delta, (0,) * (d + 1), float(horizon), yt, ym, zt, zs)


@dataclass
class FirstVisitSample:
    """V_1 displacement and torus-jump count for every replica with S_1 <= horizon."""
    N: int
    d: int
    delta: float
    horizon: float
    replicas: int
    displacements: np.ndarray      # (finite, d)
    y_counts: np.ndarray           # (finite,)
    truncated_heights: np.ndarray  # vertical position at the horizon for truncated runs

    @property
    def finite(self) -> int:
        return len(self.y_counts)

    def escape_mass(self) -> float:
        """Estimated P[horizon < S_1 < inf]: each truncated run returns with the
        one-dimensional return probability from its height at the horizon."""
        if len(self.truncated_heights) == 0:
            return 0.0
        h = self.truncated_heights
        if self.delta == 0:
            ret = np.ones(len(h))
        else:
            q = (1.0 - self.delta) / (1.0 + self.delta)
            ret = np.where(h <= 0, 1.0, q ** np.maximum(h, 0))
        return float(ret.sum() / self.replicas)


def sample_first_visits(N: int, d: int, delta: float, replicas: int, rng,
                        horizon: float = 500.0) -> FirstVisitSample:
    geom = CylinderGeom(d, N)
    delta = as_drift(delta).delta
    disp = []
    cnt = []
    trunc = []
    for _ in range(replicas):
        emb = _embedding(geom, delta, horizon, rng)
        vc = visit_chain(emb, 1)
        if vc.stop_times[1] == INF:
            trunc.append(int(emb.z_path[-1]))
            continue
        disp.append(vc.values[1])
        cnt.append(vc.y_counts[1])
    return FirstVisitSample(N, d, delta, horizon, replicas,
                            np.array(disp, dtype=np.int64).reshape(-1, d),
                            np.array(cnt, dtype=np.int64), np.array(trunc, dtype=np.int64))


@dataclass
class EstimatedPV:
    N: int
    d: int
    matrix: np.ndarray             # circulant estimate, rows sum to one
    law: np.ndarray                # displacement law q(v), row-major over the torus
    mode_values: np.ndarray        # Fourier means per mode k (torus_modes order)
    mode_se: np.ndarray
    finite: int
    replicas: int
    truncated_fraction: float
    bias_bound: float
    displacements: np.ndarray = None

    def spectrum(self) -> Spectrum:
        """Eigenvalues of the symmetrised estimate (exactly the Fourier means)."""
        return Spectrum(self.mode_values)


def _mode_samples(N, d, disp):
    k = torus_modes(N, d)
    return np.cos(2.0 * np.pi * (disp @ k.T) / N)          # (finite, modes)


def estimate_pV(N: int, d: int, delta: float, replicas: int, rng, horizon: float = 500.0,
                sample: FirstVisitSample | None = None) -> EstimatedPV:
    """Empirical transition law of V given the first visit happens (by the horizon).

    The chain is translation invariant, so every row is a shift of the law of
    V_1 - V_0 from the origin.  The eigenvalues of the symmetrised circulant
    estimate are the means of cos(2 pi <k, V_1> / N) over the samples.
    """
    if N ** d > 10 ** 4:
        raise ValueError("N^d must be <= 10^4")
    if sample is None:
        sample = sample_first_visits(N, d, delta, replicas, rng, horizon)
    if sample.finite < 100:
        raise ValueError(f"only {sample.finite} finite first visits; raise the horizon or lower delta")
    geom = CylinderGeom(d, N)
    Nd = N ** d
    idx = np.zeros(sample.finite, dtype=np.int64)
    for i in range(d):
        idx = idx * N + sample.displacements[:, i]
    law = np.bincount(idx, minlength=Nd).astype(float)
    law /= law.sum()
    pts = list(itertools.product(range(N), repeat=d))
    M = np.zeros((Nd, Nd))
    for a, u in enumerate(pts):
        for b, v in enumerate(pts):
            M[a, geom.torus_index([x + y for x, y in zip(u, v)])] = law[b]
    M /= M.sum(axis=1, keepdims=True)
    cs = _mode_samples(N, d, sample.displacements)
    vals = cs.mean(axis=0)
    se = cs.std(axis=0) / math.sqrt(sample.finite)
    tf = 1.0 - sample.finite / sample.replicas
    fin = sample.finite / sample.replicas
    bias = 2.0 * sample.escape_mass() / fin
    return EstimatedPV(N, d, M, law, vals, se, sample.finite, sample.replicas, tf, bias,
                       sample.displacements)


@dataclass
class VisitSpectrumReport:
    lam_Y: np.ndarray              # group eigenvalue of the torus walk
    multiplicity: np.ndarray
    pv_values: np.ndarray          # group means of the sorted estimated spectrum
    target: np.ndarray             # E[lambda^{N^Y} | S_1 finite]
    residual: np.ndarray
    se: np.ndarray                 # combined standard error
    within: np.ndarray             # |residual| <= sigmas * se (residual 0 counts)
    bound_ok: np.ndarray           # 1/(1 - lambda(V)) <= (d+1)/d + sigmas se where lambda(Y) <= 0
    m1_residual: float


def visit_spectrum_residual(N: int, d: int, delta: float, replicas: int, rng,
                            horizon: float = 500.0, rng_target=None,
                            sigmas: float = 3.0) -> VisitSpectrumReport:
    """Pair the estimated spectrum of V with E[lambda_m(Y)^{N^Y_{S_1}} | S_1 finite].

    The two sides come from independent samples (``rng`` for the transition
    estimate, ``rng_target`` for the moments; a spawned child of ``rng`` when
    not given).  Both are sorted in decreasing order and compared group by
    group, a group being the modes sharing one torus eigenvalue.
    """
    if rng_target is None:
        rng_target = np.random.Generator(np.random.Philox(rng.integers(0, 2 ** 63)))
    pv = estimate_pV(N, d, delta, replicas, rng, horizon)
    tgt = sample_first_visits(N, d, delta, replicas, rng_target, horizon)
    if tgt.finite < 100:
        raise ValueError("too few finite samples for the moment estimate")
    lamY = torus_mode_eigenvalues(N, d)
    groups = np.unique(np.round(lamY, 12))[::-1]
    # moments for each distinct torus eigenvalue
    counts = tgt.y_counts.astype(float)
    tvals, tse = [], []
    for lam in groups:
        x = np.power(lam, counts)
        tvals.append(x.mean())
        tse.append(x.std() / math.sqrt(tgt.finite))
    tvals = np.array(tvals)
    tse = np.array(tse)
    mult = np.array([int(np.sum(np.isclose(lamY, g, atol=1e-12))) for g in groups])
    # decreasing order of the target, expanded by multiplicity
    order = np.argsort(-tvals, kind="stable")
    pv_sorted = np.sort(pv.mode_values)[::-1]
    pos = 0
    res, se, pvv, lam_out, mult_out, tv_out = [], [], [], [], [], []
    mode_groups = [np.flatnonzero(np.isclose(lamY, g, atol=1e-12)) for g in groups]
    for gi in order:
        m = mult[gi]
        block = pv_sorted[pos:pos + m]
        pos += m
        mean_pv = float(block.mean())
        # sample-level standard error of the group-averaged Fourier mean
        k = torus_modes(N, d)[mode_groups[gi]]
        g = np.cos(2.0 * np.pi * (pv.displacements @ k.T) / N).mean(axis=1)
        se_pv = float(g.std() / math.sqrt(pv.finite))
        r = mean_pv - tvals[gi]
        res.append(r)
        se.append(math.hypot(se_pv, tse[gi]))
        pvv.append(mean_pv)
        lam_out.append(groups[gi])
        mult_out.append(m)
        tv_out.append(tvals[gi])
    res = np.array(res)
    se = np.array(se)
    within = (np.abs(res) <= sigmas * se) | (res == 0)
    lam_out = np.array(lam_out)
    pvv = np.array(pvv)
    bound_ok = np.ones(len(lam_out), dtype=bool)
    for j, lam in enumerate(lam_out):
        if lam <= 0:
            # 1/(1 - x) <= (d+1)/d  <=>  x <= 1/(d+1); allow sigmas standard errors
            bound_ok[j] = pvv[j] <= 1.0 / (d + 1) + sigmas * se[j]
    m1 = float(res[np.flatnonzero(np.isclose(lam_out, 1.0))[0]])
    return VisitSpectrumReport(lam_out, np.array(mult_out), pvv, np.array(tv_out), res, se,
                               within, bound_ok, m1)


def markov_chi2(N: int, d: int, delta: float, replicas: int, rng, horizon: float = 500.0):
    """Chi-square test that V_2 - V_1 is independent of V_1 - V_0 (Markov property check)."""
    from scipy.stats import chi2_contingency
    geom = CylinderGeom(d, N)
    a, b = [], []
    for _ in range(replicas):
        emb = _embedding(geom, delta, horizon, rng)
        vc = visit_chain(emb, 2)
        if len(vc.values) < 3:
            continue
        v0, v1, v2 = (np.array(v) for v in vc.values[:3])
        a.append(geom.torus_index((v1 - v0) % N))
        b.append(geom.torus_index((v2 - v1) % N))
    Nd = N ** d
    table = np.zeros((Nd, Nd))
    np.add.at(table, (np.array(a), np.array(b)), 1)
    table = table[table.sum(axis=1) > 0][:, table.sum(axis=0) > 0]
    stat, p, dof, _ = chi2_contingency(table)
    return {"statistic": float(stat), "p_value": float(p), "dof": int(dof), "samples": len(a)}
