"""Green functions of the unbiased walk killed outside a finite set.

g^B(x, x') is the expected number of visits to x' before the walk started at
x leaves B, i.e. the (x, x') entry of (I - P_B)^{-1}, with P_B the one-step
kernel restricted to B.  Exact mode solves the sparse system; small domains
use a direct LU factorisation, larger ones conjugate gradients (I - P_B is
symmetric positive definite) with the residual checked after the solve.
Slabs T^d x [-a, a] also have a separate Fourier solver: each torus wave
vector reduces the problem to a tridiagonal system in z.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spl
from numba import njit

from .connectivity import torus_neighbor_table
from .lattice import CylinderGeom, neighbors, slab_members

EXACT_CAP = 150_000
DIRECT_CAP = 4000
RESIDUAL_TOL = 1e-12


@dataclass
class KilledDomain:
    geom: CylinderGeom
    sites: frozenset
    a: int | None = None                      # slab half-height containing B
    _order: list = field(default=None, repr=False)
    _index: dict = field(default=None, repr=False)
    _A: object = field(default=None, repr=False)
    _lu: object = field(default=None, repr=False)
    _cols: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.sites = frozenset(self.sites)
        if self.a is not None and any(abs(x[-1]) > self.a for x in self.sites):
            raise ValueError("B is not inside the slab S_a")
        self._order = sorted(self.sites)
        self._index = {x: i for i, x in enumerate(self._order)}

    @classmethod
    def slab(cls, geom: CylinderGeom, a: int) -> "KilledDomain":
        return cls(geom, slab_members(geom, a), a)

    @property
    def size(self) -> int:
        return len(self._order)

    def contains(self, x) -> bool:
        return tuple(x) in self._index

    @property
    def matrix(self):
        """I - P_B as a sparse CSC matrix."""
        if self._A is None:
            if self.size > EXACT_CAP:
                raise ValueError(f"|B| = {self.size} exceeds the exact-solve cap {EXACT_CAP}")
            self._A = kernel_matrix(self.geom, self._order, self._index)
        return self._A

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        A = self.matrix
        if self.size <= DIRECT_CAP:
            if self._lu is None:
                self._lu = spl.splu(A)
            x = self._lu.solve(rhs)
        else:
            x, info = spl.cg(A, rhs, rtol=1e-15, atol=0.0, maxiter=20 * self.size)
            if info < 0:
                raise RuntimeError("conjugate gradient breakdown")
        res = float(np.max(np.abs(A @ x - rhs))) if rhs.size else 0.0
        if res > RESIDUAL_TOL * max(1.0, float(np.max(np.abs(rhs)))):
            raise RuntimeError(f"linear solve residual {res:.3g} above tolerance")
        return x

    def column(self, x_prime) -> np.ndarray:
        """g(., x') on the sites of B (in sorted order)."""
        x_prime = tuple(x_prime)
        if x_prime not in self._cols:
            e = np.zeros(self.size)
            e[self._index[x_prime]] = 1.0
            self._cols[x_prime] = self.solve(e)
        return self._cols[x_prime]

    def residual(self, x_prime) -> float:
        """max |g - delta - P_B g| over B for the column of x'."""
        g = self.column(x_prime)
        e = np.zeros(self.size)
        e[self._index[tuple(x_prime)]] = 1.0
        return float(np.max(np.abs(self.matrix @ g - e)))


def kernel_matrix(geom: CylinderGeom, order, index) -> sp.csc_matrix:
    p = 1.0 / (2 * geom.d + 2)
    rows, cols = [], []
    for i, x in enumerate(order):
        for y in neighbors(x, geom):
            j = index.get(y)
            if j is not None:
                rows.append(i)
                cols.append(j)
    n = len(order)
    P = sp.csr_matrix((np.full(len(rows), p), (rows, cols)), shape=(n, n))
    return (sp.identity(n, format="csr") - P).tocsc()


def green_exact(domain: KilledDomain, x, x_prime) -> float:
    x, x_prime = domain.geom.wrap(x), domain.geom.wrap(x_prime)
    if not domain.contains(x) or not domain.contains(x_prime):
        return 0.0
    return float(domain.column(x_prime)[domain._index[x]])


def slab_green_fourier(geom: CylinderGeom, a: int, z0: int = 0) -> np.ndarray:
    """g^{S_a}((0, z0), (u, z)) for every u and z, as an array [u_1, ..., u_d, z + a]."""
    N, d = geom.N, geom.d
    Z = 2 * a + 1
    ks = np.array(list(itertools.product(range(N), repeat=d))).reshape(-1, d)
    lat = 2.0 * np.cos(2.0 * np.pi * ks / N).sum(axis=1) / (2 * d + 2)
    off = 1.0 / (2 * d + 2)
    e = np.zeros(Z)
    e[z0 + a] = 1.0
    G = np.empty((len(ks), Z))
    band = np.zeros((3, Z))
    band[0, 1:] = -off
    band[2, :-1] = -off
    from scipy.linalg import solve_banded
    for j, l in enumerate(lat):
        band[1, :] = 1.0 - l
        G[j] = solve_banded((1, 1), band, e)
    g = np.fft.ifftn(G.reshape(*(N,) * d, Z), axes=tuple(range(d))).real
    return g


# ------------------------------------------------------------- Monte Carlo

@njit(cache=True)
def _killed_visits(inB, Nd, zmin, zspan, nbt, u, z, target, unif, count):
    """Continue a killed walk over ``unif``; returns (alive, u, z, count)."""
    deg = nbt.shape[1]
    p_lat = deg / (deg + 2.0)
    p_up = (deg + 1.0) / (deg + 2.0)
    for k in range(unif.shape[0]):
        r = unif[k]
        if r < p_lat:
            m = int(r * (deg + 2))
            if m >= deg:
                m = deg - 1
            u = nbt[u, m]
        elif r < p_up:
            z += 1
        else:
            z -= 1
        zi = z - zmin
        if zi < 0 or zi >= zspan:
            return False, u, z, count
        idx = zi * Nd + u
        if not inB[idx]:
            return False, u, z, count
        if idx == target:
            count += 1
    return True, u, z, count


def green_mc(domain: KilledDomain, x, x_prime, replicas: int, rng, chunk: int = 512):
    """Visit-count estimator of g(x, x'); returns (mean, standard error)."""
    geom = domain.geom
    x, x_prime = geom.wrap(x), geom.wrap(x_prime)
    if not domain.contains(x) or not domain.contains(x_prime):
        return 0.0, 0.0
    N, d = geom.N, geom.d
    Nd = N ** d
    zs = [s[-1] for s in domain.sites]
    zmin, zmax = min(zs), max(zs)
    zspan = zmax - zmin + 1
    inB = np.zeros(zspan * Nd, dtype=np.bool_)
    for s in domain.sites:
        inB[(s[-1] - zmin) * Nd + geom.torus_index(s[:-1])] = True
    nbt = torus_neighbor_table(N, d)
    target = (x_prime[-1] - zmin) * Nd + geom.torus_index(x_prime[:-1])
    u0, z0 = geom.torus_index(x[:-1]), x[-1]
    counts = np.empty(replicas)
    for i in range(replicas):
        c = 1 if x == x_prime else 0
        u, z, alive = u0, z0, True
        while alive:
            alive, u, z, c = _killed_visits(inB, Nd, zmin, zspan, nbt, u, z, target,
                                            rng.random(chunk), c)
        counts[i] = c
    return float(counts.mean()), float(counts.std(ddof=1) / math.sqrt(replicas)) if replicas > 1 else math.inf


# ------------------------------------------------------ hitting estimates

def hitting_probability(A, domain: KilledDomain, x) -> float:
    """P_x[H_A < H_{B^c}] by solving the harmonic problem on B minus A."""
    geom = domain.geom
    A = {geom.wrap(y) for y in A}
    x = geom.wrap(x)
    if x in A:
        return 1.0
    if not domain.contains(x):
        return 0.0
    free = [y for y in domain._order if y not in A]
    idx = {y: i for i, y in enumerate(free)}
    p = 1.0 / (2 * geom.d + 2)
    rows, cols, b = [], [], np.zeros(len(free))
    for i, y in enumerate(free):
        for w in neighbors(y, geom):
            if w in A:
                b[i] += p
            else:
                j = idx.get(w)
                if j is not None:
                    rows.append(i)
                    cols.append(j)
    n = len(free)
    M = (sp.identity(n, format="csr") - sp.csr_matrix((np.full(len(rows), p), (rows, cols)),
                                                        shape=(n, n))).tocsc()
    if n <= DIRECT_CAP:
        h = spl.spsolve(M, b)
    else:
        h, _ = spl.cg(M, b, rtol=1e-15, atol=0.0, maxiter=20 * n)
    res = float(np.max(np.abs(M @ h - b))) if n else 0.0
    if res > RESIDUAL_TOL:
        raise RuntimeError(f"harmonic solve residual {res:.3g}")
    return float(h[idx[x]])


def hitting_bound_sides(A, domain: KilledDomain, x, check: bool = True):
    """(P_x[H_A < H_{B^c}], sum_{y in A} g(x,y) / min_{y in A} sum_{y' in A} g(y,y')).

    Uses g(x, y) = g(y, x) so that only the |A| columns indexed by A are solved.
    """
    geom = domain.geom
    A = sorted({geom.wrap(y) for y in A})
    if not A:
        raise ValueError("A must be nonempty")
    if any(not domain.contains(y) for y in A):
        raise ValueError("A must lie inside B")
    x = geom.wrap(x)
    cols = {y: domain.column(y) for y in A}
    num = math.fsum(green_exact(domain, x, y) for y in A)
    den = min(math.fsum(cols[yp][domain._index[y]] for yp in A) for y in A)
    lhs = hitting_probability(A, domain, x)
    rhs = num / den
    if check and lhs > rhs * (1 + 1e-10) + 1e-14:
        raise AssertionError(f"hitting bound violated: {lhs} > {rhs}")
    return lhs, rhs


# ----------------------------------------------------------------- decay

@dataclass
class DecayProfile:
    d: int
    N: int
    a: int
    radii: np.ndarray
    values: np.ndarray              # g^{S_a}(0, r e_1)
    near_slope: float
    near_intercept: float
    far_rate: float
    lower_ratio_min: float          # min over the near field of g * r^{d-1}
    near_range: tuple
    diagnostic: str = ""


def decay_profile(a: int, d: int, N: int | None = None, near=None,
                  verify: bool = False) -> DecayProfile:
    """Log-log slope of g^{S_a}(0, x') along a torus axis in the near field.

    ``near`` is the (r_min, r_max) fitting window; default [1, max(2, a//2)].
    The far field is [a//2, min(a, N//2)], where the log-linear decay rate is
    fitted.
    """
    N = N if N is not None else 2 * a
    geom = CylinderGeom(d, N)
    g = slab_green_fourier(geom, a)
    rmax = min(a, N // 2)
    radii = np.arange(0, rmax + 1)
    vals = np.array([g[(r,) + (0,) * (d - 1) + (a,)] for r in radii])
    lo, hi = near if near is not None else (1, max(2, a // 2))
    diag = ""
    if hi - lo < 2:
        diag = "near field has fewer than three radii"
    sel = (radii >= lo) & (radii <= hi)
    slope, icpt = np.polyfit(np.log(radii[sel]), np.log(vals[sel]), 1)
    far = (radii >= max(1, a // 2)) & (radii <= rmax)
    rate = -np.polyfit(radii[far], np.log(vals[far]), 1)[0] if far.sum() >= 2 else math.nan
    ratio = float(np.min(vals[sel] * radii[sel].astype(float) ** (d - 1)))
    if verify:
        # the sparse solve on the slab must reproduce the Fourier values
        dom = KilledDomain.slab(geom, a)
        col = dom.column((0,) * (d + 1))
        for r, v in zip(radii, vals):
            w = col[dom._index[(int(r) % N,) + (0,) * (d - 1) + (0,)]]
            if abs(w - v) > 1e-10:
                raise AssertionError(f"Fourier and sparse Green functions differ at r={r}")
    return DecayProfile(d, N, a, radii, vals, float(slope), float(icpt), float(rate), ratio,
                        (lo, hi), diag)
