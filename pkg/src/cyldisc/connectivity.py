"""Exact disconnection tests for the cylinder and kappa-disconnection of boxes.

Window reduction
----------------
Let K be finite with heights in [zmin, zmax].  Every site outside the window
W = T^d x [zmin-1, zmax+1] is vacant, and the two outermost slices of W are
vacant and laterally connected.  A vacant path that leaves W below must come
back through the slice zmin-1, so it can be replaced by a path inside that
slice; the same holds above.  Hence K separates the two ends of the cylinder
iff the slice zmin-1 and the slice zmax+1 lie in different components of
W minus K.  All decisions below are made on W.

First disconnection time
------------------------
K_n = X[0, n] only grows, so "K_n disconnects" is monotone in n.  Given the
first-visit index of every site and a time n at which K_n disconnects, we
re-insert the visited sites as vacant in decreasing order of first visit and
merge components with union-find.  The first re-insertion that joins bottom
and top undoes the disconnection, and the first-visit index of that site is
the least disconnecting n.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .lattice import CylinderGeom, neighbors
from .walk import Trajectory, thresholds


@dataclass
class DisconnectionCertificate:
    verdict: bool
    window: tuple | None
    witness: object = None       # list of sites (connecting path) or dict of labels


def _window_graph_bfs(K, geom: CylinderGeom):
    zs = [x[-1] for x in K]
    lo, hi = min(zs) - 1, max(zs) + 1
    N, d = geom.N, geom.d
    import itertools
    bottom = [u + (lo,) for u in itertools.product(range(N), repeat=d)]
    parent = {x: None for x in bottom}
    q = deque(bottom)
    while q:
        x = q.popleft()
        if x[-1] == hi:
            path = [x]
            while parent[path[-1]] is not None:
                path.append(parent[path[-1]])
            return (lo, hi), path[::-1], len(parent)
        for y in neighbors(x, geom):
            if y in parent or y in K or not lo <= y[-1] <= hi:
                continue
            parent[y] = x
            q.append(y)
    return (lo, hi), None, len(parent)


def disconnects_cylinder(K, geom: CylinderGeom) -> DisconnectionCertificate:
    """Does K separate the two ends of the cylinder?  Plain BFS on the window."""
    K = K if isinstance(K, (set, frozenset)) else set(map(tuple, K))
    if not K:
        return DisconnectionCertificate(False, None, [])
    window, path, reached = _window_graph_bfs(K, geom)
    if path is not None:
        return DisconnectionCertificate(False, window, path)
    return DisconnectionCertificate(True, window, {"bottom_component_size": reached,
                                                   "top_reached": False})


def naive_disconnection_time(traj: Trajectory):
    """Least n with X[0, n] disconnecting, by BFS on every prefix (reference oracle)."""
    K = set()
    for n in range(traj.length + 1):
        x = traj.site(n)
        if x in K:
            continue
        K.add(x)
        if disconnects_cylinder(K, traj.geom).verdict:
            return n
    return None


# ------------------------------------------------------------ numba kernels

def torus_neighbor_table(N: int, d: int) -> np.ndarray:
    """nbt[u, m] = torus index after lateral move m (row-major indices)."""
    Nd = N ** d
    coords = np.array(np.unravel_index(np.arange(Nd), (N,) * d)).T.reshape(Nd, d)
    t = np.empty((Nd, 2 * d), dtype=np.int64)
    for i in range(d):
        for s, m in ((1, 2 * i), (-1, 2 * i + 1)):
            c = coords.copy()
            c[:, i] = (c[:, i] + s) % N
            t[:, m] = np.ravel_multi_index(tuple(c.T), (N,) * d)
    return t


@njit(nogil=True, cache=True)
def _advance(fv, zbase, zspan, Nd, nbt, u, z, n, zlo, zhi, unif, p_lat, p_up, nlat):
    """Advance the walk over ``unif``; stop early when the first-visit array needs room."""
    for k in range(unif.shape[0]):
        r = unif[k]
        if r < p_lat:
            m = int(r * (nlat + 2))
            if m >= nlat:
                m = nlat - 1
            u = nbt[u, m]
        elif r < p_up:
            z += 1
        else:
            z -= 1
        n += 1
        if z < zlo:
            zlo = z
        if z > zhi:
            zhi = z
        zi = z - zbase
        if zi < 1 or zi >= zspan - 1:
            return k + 1, u, z, n, zlo, zhi, True
        idx = zi * Nd + u
        if fv[idx] < 0:
            fv[idx] = n
    return unif.shape[0], u, z, n, zlo, zhi, False


@njit(nogil=True, cache=True)
def _window_disconnected(sub, Nd, R, n, nbt):
    """BFS from row 0 over rows 0..R-1 of ``sub``; sites with 0 <= fv <= n are blocked."""
    W = R * Nd
    seen = np.zeros(W, dtype=np.bool_)
    stack = np.empty(W, dtype=np.int64)
    sp = 0
    for u in range(Nd):
        seen[u] = True
        stack[sp] = u
        sp += 1
    deg = nbt.shape[1]
    while sp > 0:
        sp -= 1
        loc = stack[sp]
        row = loc // Nd
        u = loc - row * Nd
        if row == R - 1:
            return False
        for m in range(deg + 2):
            if m < deg:
                nl = row * Nd + nbt[u, m]
            elif m == deg:
                nl = loc + Nd
            else:
                if row == 0:
                    continue
                nl = loc - Nd
            if seen[nl]:
                continue
            f = sub[nl]
            if f < 0 or f > n:
                seen[nl] = True
                stack[sp] = nl
                sp += 1
    return True


@njit(nogil=True, cache=True)
def _find(parent, a):
    root = a
    while parent[root] != root:
        root = parent[root]
    while parent[a] != root:
        nxt = parent[a]
        parent[a] = root
        a = nxt
    return root


@njit(nogil=True, cache=True)
def _union(parent, rank, a, b):
    ra = _find(parent, a)
    rb = _find(parent, b)
    if ra == rb:
        return
    if rank[ra] < rank[rb]:
        ra, rb = rb, ra
    parent[rb] = ra
    if rank[ra] == rank[rb]:
        rank[ra] += 1


@njit(nogil=True, cache=True)
def _first_disconnection(sub, Nd, R, n, nbt):
    """Least first-visit index t <= n with K_t disconnecting, or -1 if K_n does not."""
    W = R * Nd
    parent = np.arange(W)
    rank = np.zeros(W, dtype=np.int64)
    vacant = np.empty(W, dtype=np.bool_)
    for i in range(W):
        vacant[i] = sub[i] < 0 or sub[i] > n
    deg = nbt.shape[1]
    for loc in range(W):
        if not vacant[loc]:
            continue
        row = loc // Nd
        u = loc - row * Nd
        for m in range(0, deg, 2):
            nl = row * Nd + nbt[u, m]
            if vacant[nl]:
                _union(parent, rank, loc, nl)
        if row < R - 1 and vacant[loc + Nd]:
            _union(parent, rank, loc, loc + Nd)
    top = (R - 1) * Nd
    if _find(parent, 0) == _find(parent, top):
        return -1
    cnt = 0
    for i in range(W):
        if not vacant[i]:
            cnt += 1
    locs = np.empty(cnt, dtype=np.int64)
    keys = np.empty(cnt, dtype=np.int64)
    j = 0
    for i in range(W):
        if not vacant[i]:
            locs[j] = i
            keys[j] = sub[i]
            j += 1
    order = np.argsort(-keys)
    for jj in range(cnt):
        loc = locs[order[jj]]
        vacant[loc] = True
        row = loc // Nd
        u = loc - row * Nd
        for m in range(deg):
            nl = row * Nd + nbt[u, m]
            if vacant[nl]:
                _union(parent, rank, loc, nl)
        if row < R - 1 and vacant[loc + Nd]:
            _union(parent, rank, loc, loc + Nd)
        if row > 0 and vacant[loc - Nd]:
            _union(parent, rank, loc, loc - Nd)
        if _find(parent, 0) == _find(parent, top):
            return sub[loc]
    return 0


def first_visit_window(traj: Trajectory):
    """First-visit indices laid out as rows zmin-1..zmax+1 of the torus."""
    geom = traj.geom
    N, d = geom.N, geom.d
    st = traj.steps
    tor = np.zeros(len(st), dtype=np.int64)
    for i in range(d):
        tor = tor * N + st[:, i]
    zmin, zmax = traj.z_extent
    rows = zmax - zmin + 3
    Nd = N ** d
    loc = (st[:, -1] - (zmin - 1)) * Nd + tor
    sub = np.full(rows * Nd, -1, dtype=np.int64)
    _, first = np.unique(loc, return_index=True)
    sub[loc[first]] = first
    return sub, rows


def disconnection_time(traj: Trajectory):
    """Least n with X[0, n] disconnecting the cylinder, or None ("not yet")."""
    geom = traj.geom
    sub, rows = first_visit_window(traj)
    t = _first_disconnection(sub, geom.N ** geom.d, rows, traj.length,
                             torus_neighbor_table(geom.N, geom.d))
    return None if t < 0 else int(t)


@dataclass
class TdiscOutcome:
    T: int | None              # None when censored
    steps: int                 # steps simulated
    z_extent: tuple
    checks: int


def simulate_tdisc(geom: CylinderGeom, delta: float, rng, budget: int,
                   growth: float = 1.25, chunk: int = 1 << 20) -> TdiscOutcome:
    """Run the walk from the origin until it disconnects (exact T) or the budget ends.

    Uniforms are consumed in order from ``rng.random``, one per step, so the
    path equals :func:`cyldisc.walk.simulate_walk` on the same stream.
    Disconnection is tested at a geometric schedule of check points and the
    exact time is then recovered by reverse-time union-find.
    """
    N, d = geom.N, geom.d
    Nd = N ** d
    nbt = torus_neighbor_table(N, d)
    p_lat, p_up = thresholds(d, delta)
    zspan = 64
    zbase = -zspan // 2
    fv = np.full(zspan * Nd, -1, dtype=np.int64)
    u = z = n = zlo = zhi = 0
    fv[(z - zbase) * Nd + u] = 0
    next_check = max(Nd, 1)
    checks = 0
    while n < budget:
        target = min(next_check, budget)
        while n < target:
            unif = rng.random(min(target - n, chunk))
            pos = 0
            while pos < unif.shape[0]:
                k, u, z, n, zlo, zhi, grow = _advance(fv, zbase, zspan, Nd, nbt, u, z, n,
                                                      zlo, zhi, unif[pos:], p_lat, p_up, 2 * d)
                pos += k
                if grow:
                    # double the array, keeping the old rows in the middle
                    new_base = zbase - zspan // 2
                    new = np.full(2 * zspan * Nd, -1, dtype=np.int64)
                    off = (zbase - new_base) * Nd
                    new[off:off + zspan * Nd] = fv
                    fv, zbase, zspan = new, new_base, 2 * zspan
                    idx = (z - zbase) * Nd + u
                    if fv[idx] < 0:
                        fv[idx] = n
        if n >= next_check or n >= budget:
            checks += 1
            r0 = zlo - 1 - zbase
            R = zhi - zlo + 3
            sub = fv[r0 * Nd:(r0 + R) * Nd]
            if _window_disconnected(sub, Nd, R, n, nbt):
                t = int(_first_disconnection(sub, Nd, R, n, nbt))
                return TdiscOutcome(t, n, (zlo, zhi), checks)
            next_check = int(math.ceil(next_check * growth)) + 1
    return TdiscOutcome(None, n, (zlo, zhi), checks)


# --------------------------------------------------------- kappa-disconnection

@dataclass
class KDisconnectionWitness:
    I: frozenset
    kappa: float
    mode: str = "component-dp"        # or "augmented-exact"
    complete: bool = True

    def validate(self, K, B, geom: CylinderGeom) -> bool:
        return check_kappa_witness(self.I, K, B, self.kappa, geom)


@dataclass
class KappaResult:
    witness: KDisconnectionWitness | None
    mode: str
    complete: bool
    components: int = 0

    def __bool__(self):
        return self.witness is not None


def volume_window(size: int, kappa: float) -> tuple:
    lo = math.ceil(kappa * size - 1e-9)
    hi = math.floor((1.0 - kappa) * size + 1e-9)
    return lo, hi


def check_kappa_witness(I, K, B, kappa: float, geom: CylinderGeom) -> bool:
    """Direct check of kappa|B| <= |I| <= (1-kappa)|B| and boundary of I in B inside K."""
    from .lattice import relative_boundary
    I = frozenset(I)
    B = frozenset(B)
    if not I <= B:
        return False
    lo, hi = volume_window(len(B), kappa)
    if not lo <= len(I) <= hi:
        return False
    K = K if isinstance(K, (set, frozenset)) else set(K)
    return relative_boundary(I, B, geom) <= K


def components(sites, geom: CylinderGeom) -> list:
    """Connected components of the induced subgraph, ordered by least site."""
    sites = set(sites)
    seen = set()
    comps = []
    for s in sorted(sites):
        if s in seen:
            continue
        comp = [s]
        seen.add(s)
        q = deque([s])
        while q:
            x = q.popleft()
            for y in neighbors(x, geom):
                if y in sites and y not in seen:
                    seen.add(y)
                    comp.append(y)
                    q.append(y)
        comps.append(frozenset(comp))
    return comps


def _lex_least_subset(sizes, lo, hi):
    """Lexicographically least 0/1 vector (first entry most significant) with sum in [lo, hi]."""
    m = len(sizes)
    reach = [0] * (m + 1)
    reach[m] = 1
    for i in range(m - 1, -1, -1):
        reach[i] = reach[i + 1] | (reach[i + 1] << sizes[i])
    window = ((1 << (hi + 1)) - 1) ^ ((1 << lo) - 1) if hi >= lo else 0
    if not reach[0] & window:
        return None
    chosen = []
    s = 0
    for i in range(m):
        if (reach[i + 1] << s) & window:
            continue
        chosen.append(i)
        s += sizes[i]
    return chosen


def kappa_disconnects(K, B, kappa: float, geom: CylinderGeom, max_components: int = 20) -> KappaResult:
    """Exact search for I in B with the volume window and boundary inside K.

    Components of B minus K are either fully inside or fully outside I.  A site
    of K may join I only when every component adjacent to it is inside I.  So
    for a set S of components the reachable volumes form the interval
    [|S|, |S| + #admissible K-sites].  First a subset-sum pass over component
    sizes (no K-sites); if that fails, all S are enumerated when the component
    count is at most ``max_components``.  Beyond that the answer is the
    subset-sum verdict only and ``complete`` is False.
    """
    if not 0 < kappa < 0.5:
        raise ValueError("kappa must lie in (0, 1/2)")
    Bset = frozenset(B.members() if hasattr(B, "members") else B)
    if not Bset:
        raise ValueError("B is empty")
    if len(components(Bset, geom)) != 1:
        raise ValueError("B must be connected")
    Kset = K if isinstance(K, (set, frozenset)) else set(map(tuple, K))
    KB = sorted(Bset & Kset)
    comps = components(Bset - Kset, geom)
    sizes = [len(c) for c in comps]
    lo, hi = volume_window(len(Bset), kappa)
    chosen = _lex_least_subset(sizes, lo, hi)
    if chosen is not None:
        I = frozenset().union(*[comps[i] for i in chosen])
        return KappaResult(KDisconnectionWitness(I, kappa, "component-dp"), "component-dp",
                           True, len(comps))
    if len(comps) > max_components:
        return KappaResult(None, "component-union decision only", False, len(comps))
    if not KB:
        return KappaResult(None, "augmented-exact", True, len(comps))
    label = {}
    for i, c in enumerate(comps):
        for x in c:
            label[x] = i
    m = len(comps)
    # bit (m-1-i) encodes component i so that integer order is lexicographic order
    adj = np.zeros(len(KB), dtype=np.int64)
    for j, k in enumerate(KB):
        a = 0
        for y in neighbors(k, geom):
            if y in label:
                a |= 1 << (m - 1 - label[y])
        adj[j] = a
    masks = np.arange(1 << m, dtype=np.int64)
    vol = np.zeros(1 << m, dtype=np.int64)
    for i, s in enumerate(sizes):
        vol += ((masks >> (m - 1 - i)) & 1) * s
    extra = np.zeros(1 << m, dtype=np.int64)
    for a in adj:
        extra += (masks & a) == a
    ok = (vol <= hi) & (vol + extra >= lo)
    idx = np.flatnonzero(ok)
    if idx.size == 0:
        return KappaResult(None, "augmented-exact", True, m)
    S = int(idx[0])
    I = set()
    for i in range(m):
        if (S >> (m - 1 - i)) & 1:
            I |= comps[i]
    need = max(0, lo - len(I))
    for j, k in enumerate(KB):
        if need == 0:
            break
        if (S & int(adj[j])) == int(adj[j]):
            I.add(k)
            need -= 1
    return KappaResult(KDisconnectionWitness(frozenset(I), kappa, "augmented-exact"),
                       "augmented-exact", True, m)


# ------------------------------------------------------------ stopping scans

@dataclass
class Target:
    kind: str                 # "hit", "cover" or "kappa"
    region: object
    kappa: float = 1.0 / 3.0
    members: frozenset = field(default=None, repr=False)


def first_visits(traj: Trajectory) -> dict:
    out = {}
    for n, row in enumerate(traj.steps.tolist()):
        t = tuple(row)
        if t not in out:
            out[t] = n
    return out


def stopping_scan(traj: Trajectory, targets) -> list:
    """First index per target (None when it never happens on this trajectory)."""
    fv = first_visits(traj)
    geom = traj.geom
    out = []
    for tg in targets:
        members = tg.members if tg.members is not None else None
        if tg.kind == "hit":
            cand = [n for x, n in fv.items() if tg.region.contains(x)]
            out.append(min(cand) if cand else None)
        elif tg.kind == "cover":
            members = members or tg.region.members()
            times = [fv.get(x) for x in members]
            out.append(None if any(t is None for t in times) else max(times))
        elif tg.kind == "kappa":
            members = members or tg.region.members()
            times = sorted({fv[x] for x in members if x in fv})

            def holds(t):
                K = {x for x in members if fv.get(x, t + 1) <= t}
                return bool(kappa_disconnects(K, members, tg.kappa, geom))

            if not times or not holds(times[-1]):
                out.append(None)
                continue
            lo, hi = 0, len(times) - 1
            while lo < hi:
                mid = (lo + hi) // 2
                if holds(times[mid]):
                    hi = mid
                else:
                    lo = mid + 1
            out.append(times[lo])
        else:
            raise ValueError(f"unknown target kind {tg.kind!r}")
    return out
