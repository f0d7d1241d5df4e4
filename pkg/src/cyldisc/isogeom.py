"""Isoperimetric checks on lattice sets and the constructive surface extractions.

Finite boxes are handled as dense boolean arrays in an unwrapped frame: a
``BoxHost`` fixes an origin (unwrapped coordinates) and a side length per
axis.  Every torus side of a host is shorter than N, so adjacency inside the
host is plain array adjacency and no wrap-around has to be considered.  The
l-sublattice is taken in the unwrapped frame coordinates; when l divides N
this is the same as the image of lZ^{d+1} on the cylinder.

Counting conventions: for a cube C_x(l) = x + [0, l-1]^{d+1} the count
``W[x] = |C_x(l) & I|`` is read off a (d+1)-dimensional prefix sum, and
projections pi_i drop axis i-1 (i is 1-based, i = d+1 is the height).
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .connectivity import (check_kappa_witness, disconnects_cylinder, kappa_disconnects,
                           torus_neighbor_table)
from .lattice import BoxAlpha, CylinderGeom, floor_quarter, project, relative_boundary

C4 = 0.9 ** (1.0 / 3.0)          # c4^3 = (1 + 4/5) / 2
C5 = 0.875 ** (1.0 / 3.0)        # c5^3 = (1 + 3/4) / 2
CERT_SCHEMA = "cyldisc.surface-certificate/1"


# ------------------------------------------------------------ array helpers

def window_sums(arr: np.ndarray, l: int) -> np.ndarray:
    """S[x] = sum of arr over x + [0, l-1]^k, for every x whose cube fits."""
    out = np.asarray(arr, dtype=np.int64)
    for ax in range(out.ndim):
        c = np.cumsum(out, axis=ax)
        shape = list(c.shape)
        shape[ax] = 1
        c = np.concatenate([np.zeros(shape, dtype=np.int64), c], axis=ax)
        n = c.shape[ax]
        out = np.take(c, np.arange(l, n), axis=ax) - np.take(c, np.arange(0, n - l), axis=ax)
    return out


def directional_boundary(A: np.ndarray, axis: int) -> np.ndarray:
    """Box-relative boundary of A along one axis: sites outside A with an axis neighbour in A."""
    A = np.asarray(A, dtype=bool)
    nb = np.zeros_like(A)
    lo = [slice(None)] * A.ndim
    hi = [slice(None)] * A.ndim
    lo[axis] = slice(0, -1)
    hi[axis] = slice(1, None)
    nb[tuple(lo)] |= A[tuple(hi)]
    nb[tuple(hi)] |= A[tuple(lo)]
    return nb & ~A


def boundary_projection_sizes(A: np.ndarray) -> list:
    """|pi_i(boundary_i(A))| for i = 1..ndim, A a boolean array over a box."""
    A = np.asarray(A, dtype=bool)
    return [int(directional_boundary(A, ax).any(axis=ax).sum()) for ax in range(A.ndim)]


def projection_sizes(A: np.ndarray) -> list:
    A = np.asarray(A, dtype=bool)
    return [int(A.any(axis=ax).sum()) for ax in range(A.ndim)]


def _argmax_low(values) -> int:
    """Index of the maximum, lowest index on ties."""
    best = 0
    for i, v in enumerate(values):
        if v > values[best]:
            best = i
    return best


# ------------------------------------------------------------ Loomis-Whitney

def loomis_whitney_best(A) -> tuple:
    """(i0, bound_holds, ratio) with i0 (1-based) maximising |pi_i(A)|.

    The bound is |A| <= |pi_i0(A)|^{(d+1)/d}; ratio is the left side over the
    right side.  Sets are taken as subsets of Z^{d+1} (no wrap).
    """
    A = set(map(tuple, A))
    if not A:
        return 1, True, 0.0
    k = len(next(iter(A)))
    if k < 2:
        raise ValueError("sites need at least two coordinates")
    d = k - 1
    sizes = [len(project(i, A)) for i in range(1, k + 1)]
    i0 = _argmax_low(sizes)
    p = sizes[i0]
    holds = len(A) ** d <= p ** (d + 1)          # exact integer form
    return i0 + 1, bool(holds), len(A) / p ** ((d + 1) / d)


def loomis_whitney_array(A: np.ndarray) -> tuple:
    """Array version of loomis_whitney_best for a boolean array over a box."""
    A = np.asarray(A, dtype=bool)
    n = int(A.sum())
    if n == 0:
        return 1, True, 0.0
    d = A.ndim - 1
    sizes = projection_sizes(A)
    i0 = _argmax_low(sizes)
    p = sizes[i0]
    return i0 + 1, bool(n ** d <= p ** (d + 1)), n / p ** ((d + 1) / d)


@njit(cache=True)
def _popcount(x):
    c = 0
    while x:
        x &= x - 1
        c += 1
    return c


@njit(cache=True)
def _lw_scan(proj_bit, k_max, d):
    """Gosper enumeration of all subsets of size 1..k_max; returns (count, violations, tight, worst)."""
    npts = proj_bit.shape[0]
    nproj = proj_bit.shape[1]
    count = 0
    bad = 0
    tight = 0
    worst = 0.0
    for k in range(1, k_max + 1):
        s = (np.int64(1) << k) - 1
        limit = np.int64(1) << npts
        while s < limit:
            best = 0
            for j in range(nproj):
                m = np.int64(0)
                t = s
                while t:
                    low = t & -t
                    idx = 0
                    while (low >> idx) != 1:
                        idx += 1
                    m |= np.int64(1) << proj_bit[idx, j]
                    t ^= low
                c = _popcount(m)
                if c > best:
                    best = c
            lhs = k ** d
            rhs = best ** (d + 1)
            if lhs > rhs:
                bad += 1
            elif lhs == rhs:
                tight += 1
            r = k / best ** ((d + 1) / d)
            if r > worst:
                worst = r
            count += 1
            c0 = s & -s
            r0 = s + c0
            s = (((r0 ^ s) >> 2) // c0) | r0
    return count, bad, tight, worst


@dataclass
class LWExhaustive:
    side: int
    d: int
    max_size: int
    subsets: int
    violations: int
    equality_cases: int
    worst_ratio: float


def loomis_whitney_exhaustive(side: int = 3, d: int = 2, max_size: int = 9) -> LWExhaustive:
    """Check the bound on every subset of [0, side-1]^{d+1} with at most max_size sites."""
    pts = list(itertools.product(range(side), repeat=d + 1))
    if len(pts) > 62:
        raise ValueError("box too large for 64-bit subset masks")
    proj_bit = np.zeros((len(pts), d + 1), dtype=np.int64)
    for a, x in enumerate(pts):
        for j in range(d + 1):
            rest = x[:j] + x[j + 1:]
            idx = 0
            for c in rest:
                idx = idx * side + c
            proj_bit[a, j] = idx
    n, bad, tight, worst = _lw_scan(proj_bit, max_size, d)
    return LWExhaustive(side, d, max_size, int(n), int(bad), int(tight), float(worst))


# ---------------------------------------------------- directional boundaries

def dp_boundary_best(A, box, kappa: float, geom: CylinderGeom | None = None) -> tuple:
    """(i1, |pi_i1(boundary_{box,i1}(A))|, ratio to |A|^{d/(d+1)}).

    ``box`` is a Region or a finite site set containing A, and A may fill at
    most (1 - kappa) of it.  The ratio is recorded rather than compared with a
    fixed constant; a non-empty proper subset of a connected box always has a
    non-empty directional boundary, which is asserted.
    """
    if geom is None:
        geom = getattr(box, "geom", None)
    if geom is None:
        raise ValueError("a geometry is needed when box is a plain set")
    Bset = frozenset(box.members() if hasattr(box, "members") else box)
    A = frozenset(map(tuple, A))
    if not A <= Bset:
        raise ValueError("A must be contained in the box")
    if len(A) > (1.0 - kappa) * len(Bset) + 1e-9:
        raise ValueError(f"|A| = {len(A)} exceeds (1 - kappa)|box| = {(1 - kappa) * len(Bset):.6g}")
    d = geom.d
    if not A:
        return 1, 0, 0.0
    sizes = []
    for i in range(1, d + 2):
        sizes.append(len(project(i, relative_boundary(A, Bset, geom, direction=i))))
    i1 = _argmax_low(sizes)
    if sizes[i1] <= 0:
        raise AssertionError("non-empty proper subset with empty directional boundary")
    return i1 + 1, sizes[i1], sizes[i1] / len(A) ** (d / (d + 1))


def dp_boundary_array(A: np.ndarray, kappa: float | None = None) -> tuple:
    """Array version of dp_boundary_best on the whole array box."""
    A = np.asarray(A, dtype=bool)
    n = int(A.sum())
    if kappa is not None and n > (1.0 - kappa) * A.size + 1e-9:
        raise ValueError("|A| exceeds (1 - kappa)|box|")
    if n == 0:
        return 1, 0, 0.0
    sizes = boundary_projection_sizes(A)
    i1 = _argmax_low(sizes)
    d = A.ndim - 1
    return i1 + 1, sizes[i1], sizes[i1] / n ** (d / (d + 1))


def random_boundary_ratios(samples: int, rng, side: int = 6, d: int = 2, kappa: float = 0.25):
    """dp ratios for random subsets of [0, side-1]^{d+1} obeying the volume cap."""
    cap = (1.0 - kappa) * side ** (d + 1)
    out = []
    while len(out) < samples:
        p = rng.random()
        A = rng.random((side,) * (d + 1)) < p
        n = int(A.sum())
        if n == 0 or n > cap:
            continue
        out.append(dp_boundary_array(A)[2])
    return np.array(out)


# ------------------------------------------------------------- host boxes

@dataclass
class BoxHost:
    """A box of the cylinder in an unwrapped frame: origin + [0, shape-1]."""
    geom: CylinderGeom
    origin: tuple
    shape: tuple
    kind: str = "box"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.origin = tuple(int(c) for c in self.origin)
        self.shape = tuple(int(s) for s in self.shape)
        if len(self.origin) != self.geom.d + 1 or len(self.shape) != self.geom.d + 1:
            raise ValueError("origin and shape need d+1 entries")
        if any(s >= self.geom.N for s in self.shape[:-1]):
            raise ValueError("torus sides of a host box must be shorter than N")

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def local(self, x):
        """Array index of site x, or None if x is outside the box."""
        N = self.geom.N
        out = []
        for i, (c, o, s) in enumerate(zip(x, self.origin, self.shape)):
            off = (c - o) % N if i < self.geom.d else c - o
            if not 0 <= off < s:
                return None
            out.append(int(off))
        return tuple(out)

    def frame(self, idx) -> tuple:
        return tuple(o + int(i) for o, i in zip(self.origin, idx))

    def site(self, idx) -> tuple:
        return self.geom.wrap(self.frame(idx))

    def to_array(self, S, strict: bool = True) -> np.ndarray:
        arr = np.zeros(self.shape, dtype=bool)
        for x in S:
            j = self.local(x)
            if j is None:
                if strict:
                    raise ValueError(f"site {x} lies outside the host box")
                continue
            arr[j] = True
        return arr

    def members(self) -> frozenset:
        return frozenset(self.site(j) for j in itertools.product(*map(range, self.shape)))

    def interior_bounds(self, l: int) -> list:
        """Per axis, the index range [lo, hi] of the l-interior of the box."""
        return [(l, s - 1 - l) for s in self.shape]

    def in_interior(self, x, l: int) -> bool:
        j = self.local(x)
        if j is None:
            return False
        return all(lo <= a <= hi for a, (lo, hi) in zip(j, self.interior_bounds(l)))

    def grid_axes(self, l: int, margin: int) -> list:
        """Per axis, indices in [margin, shape-1-margin] whose frame coordinate is a multiple of l."""
        out = []
        for o, s in zip(self.origin, self.shape):
            idx = [a for a in range(margin, s - margin) if (o + a) % l == 0]
            out.append(np.array(idx, dtype=np.int64))
        return out

    def describe(self) -> dict:
        return {"kind": self.kind, "d": self.geom.d, "N": self.geom.N,
                "origin": list(self.origin), "shape": list(self.shape), "params": dict(self.params)}

    @classmethod
    def from_description(cls, desc: dict) -> "BoxHost":
        return cls(CylinderGeom(desc["d"], desc["N"]), tuple(desc["origin"]), tuple(desc["shape"]),
                   desc["kind"], dict(desc.get("params", {})))


def cube_host(geom: CylinderGeom, base, L: int) -> BoxHost:
    return BoxHost(geom, geom.wrap(base), (L,) * (geom.d + 1), "cube", {"L": L})


def ball_host(geom: CylinderGeom) -> BoxHost:
    r = floor_quarter(geom.N)
    return BoxHost(geom, (-r,) * (geom.d + 1), (2 * r + 1,) * (geom.d + 1), "ball", {"r": r})


def box_alpha_host(geom: CylinderGeom, alpha: float) -> BoxHost:
    r = floor_quarter(geom.N)
    h = BoxAlpha(geom, alpha).half_height
    return BoxHost(geom, (-r,) * geom.d + (-h,), (2 * r + 1,) * geom.d + (2 * h + 1,),
                   "box_alpha", {"alpha": alpha, "half_height": h})


# ------------------------------------------------------------------ subgrids

@dataclass
class SubgridSpec:
    kind: str                 # "B_L", "C_l", "H_l" or "B_l"
    side: int
    members: frozenset
    host: BoxHost
    margin: int

    def check(self) -> list:
        """Problems with sublattice membership and containment in the host interior."""
        problems = []
        for x in self.members:
            j = self.host.local(x)
            if j is None:
                problems.append(f"{x} outside host")
                continue
            if any(c % self.side for c in self.host.frame(j)):
                problems.append(f"{x} off the {self.side}-sublattice")
            if self.margin and not self.host.in_interior(x, self.margin):
                problems.append(f"{x} outside the {self.margin}-interior")
        return problems


def subgrid(host: BoxHost, side: int, margin: int, kind: str) -> SubgridSpec:
    axes = host.grid_axes(side, margin)
    pts = frozenset(host.site(j) for j in itertools.product(*axes))
    return SubgridSpec(kind, side, pts, host, margin)


def subgrid_BL(geom: CylinderGeom, L: int) -> SubgridSpec:
    """Points of B_inf(0, [N/4])^{(-L)} on the L-sublattice."""
    return subgrid(ball_host(geom), L, L, "B_L")


def subgrid_Cl(host: BoxHost, l: int) -> SubgridSpec:
    """Points of C(L)^{(-l)} on the l-sublattice."""
    return subgrid(host, l, l, "C_l")


def subgrid_Bl(host: BoxHost, l: int) -> SubgridSpec:
    """Points of B(alpha)^{(-l)} on the l-sublattice."""
    return subgrid(host, l, l, "B_l")


def subgrid_Hl(geom: CylinderGeom, l: int) -> SubgridSpec:
    """The l-sublattice over [-N/4, N/4]^d x Z, materialised inside B_inf(0, [N/4])."""
    return subgrid(ball_host(geom), l, 0, "H_l")


def thickness_formula(N: int, d: int, alpha: float, l: int, rounding: str = "floor") -> int:
    """Vertical extent of the B_l subgrid: 2 l * round((h - l) / l) with h = [N^{d alpha}/4].

    The z-coordinates of B_l are the multiples of l in [-(h - l), h - l], so
    the extent is 2 l floor((h - l)/l).  ``rounding='ceil'`` gives the
    variant with a ceiling, which agrees whenever l divides h.
    """
    h = BoxAlpha(CylinderGeom(d, N), alpha).half_height
    q = (h - l) / l
    k = math.floor(q) if rounding == "floor" else math.ceil(q)
    return 2 * l * k


def thickness_scan(N: int, d: int, alpha: float, l: int):
    """sup |v - v'| over the B_l subgrid by direct scan; None when the subgrid is empty."""
    host = box_alpha_host(CylinderGeom(d, N), alpha)
    zs = host.grid_axes(l, l)[-1]
    if any(len(a) == 0 for a in host.grid_axes(l, l)):
        return None
    return int(zs.max() - zs.min())


# --------------------------------------------------------- cell location

@dataclass
class CellResult:
    x_star: tuple | None
    t_value: float | None
    witness: frozenset | None
    valid: bool
    max_vertical_jump: float
    jump_constant: float           # max jump times N^{d alpha ^ 1}
    t_bottom: float
    t_top: float
    diagnostic: str = ""


def _top_component(K, geom: CylinderGeom):
    """Boolean array (rows zlo..zhi, torus index) of the component of the window containing the top row."""
    zs = [x[-1] for x in K]
    zlo, zhi = min(zs) - 1, max(zs) + 1
    Nd = geom.torus_size
    R = zhi - zlo + 1
    vac = np.ones((R, Nd), dtype=bool)
    for x in K:
        vac[x[-1] - zlo, geom.torus_index(x[:-1])] = False
    nid = np.arange(R * Nd).reshape(R, Nd)
    src, dst = [], []
    src.append(nid[:-1].ravel())
    dst.append(nid[1:].ravel())
    nbt = torus_neighbor_table(geom.N, geom.d)
    for col in range(nbt.shape[1]):
        src.append(nid.ravel())
        dst.append(nid[:, nbt[:, col]].ravel())
    src = np.concatenate(src)
    dst = np.concatenate(dst)
    flat = vac.ravel()
    keep = flat[src] & flat[dst]
    g = coo_matrix((np.ones(int(keep.sum())), (src[keep], dst[keep])), shape=(R * Nd, R * Nd))
    _, lab = connected_components(g, directed=False)
    top = (lab.reshape(R, Nd) == lab[nid[-1, 0]]) & vac
    return top, zlo, zhi


def locate_cut_cell(K, alpha: float, kappa: float, geom: CylinderGeom) -> CellResult:
    """Find x_* with |t(x_*) - 1/2| <= 1/2 - kappa, t(x) = |Top & (x + B(alpha))| / |B(alpha)|.

    Top is the vacant component of the top end.  Vertical lines are scanned
    in torus order, heights increasing; the witness Top & (x_* + B(alpha)) is
    validated directly.
    """
    K = set(map(tuple, K))
    if not K or not disconnects_cylinder(K, geom).verdict:
        raise ValueError("K does not disconnect the cylinder")
    if not 0 < kappa < 0.5:
        raise ValueError("kappa must lie in (0, 1/2)")
    d, N = geom.d, geom.N
    r = floor_quarter(N)
    h = BoxAlpha(geom, alpha).half_height
    top, zlo, zhi = _top_component(K, geom)
    pad = 2 * h + 1
    R = top.shape[0] + 2 * pad
    ext = np.zeros((R,) + (N,) * d, dtype=np.int64)
    ext[pad:pad + top.shape[0]] = top.reshape((top.shape[0],) + (N,) * d)
    ext[pad + top.shape[0]:] = 1
    z0 = zlo - pad
    wrapped = np.pad(ext, [(0, 0)] + [(r, r)] * d, mode="wrap")
    # sum over [z - h, z + h] x prod [u - r, u + r]
    sums = wrapped
    for ax in range(d + 1):
        w = 2 * h + 1 if ax == 0 else 2 * r + 1
        c = np.cumsum(sums, axis=ax)
        shape = list(c.shape)
        shape[ax] = 1
        c = np.concatenate([np.zeros(shape, dtype=np.int64), c], axis=ax)
        n = c.shape[ax]
        sums = np.take(c, np.arange(w, n), axis=ax) - np.take(c, np.arange(0, n - w), axis=ax)
    vol = (2 * r + 1) ** d * (2 * h + 1)
    t = sums.reshape(sums.shape[0], -1) / vol          # row k is the center height z0 + h + k
    zc0 = z0 + h
    jump = float(np.abs(np.diff(t, axis=0)).max()) if t.shape[0] > 1 else 0.0
    scale = min(float(N) ** (d * alpha), float(N))
    t_bottom, t_top = float(t[0].max()), float(t[-1].min())
    ok = np.abs(t - 0.5) <= 0.5 - kappa + 1e-12
    for ui in range(t.shape[1]):
        rows = np.flatnonzero(ok[:, ui])
        if rows.size == 0:
            continue
        k = int(rows[0])
        u = geom.torus_point(ui)
        x = u + (zc0 + k,)
        I, box = _box_alpha_split(x, top, zlo, zhi, geom, r, h)
        valid = check_kappa_witness(I, K, box, kappa, geom)
        return CellResult(x, float(t[k, ui]), I, bool(valid), jump, jump * scale,
                          t_bottom, t_top)
    return CellResult(None, None, None, False, jump, jump * scale, t_bottom, t_top,
                      "no qualifying cell: the box is too flat for this kappa at this N")


def _box_alpha_split(x, top, zlo, zhi, geom, r, h):
    N, d = geom.N, geom.d
    box = set()
    I = set()
    for off in itertools.product(range(-r, r + 1), repeat=d):
        u = tuple((a + b) % N for a, b in zip(x[:-1], off))
        ui = geom.torus_index(u)
        for dz in range(-h, h + 1):
            z = x[-1] + dz
            s = u + (z,)
            box.add(s)
            if z > zhi or (z >= zlo and top[z - zlo, ui]):
                I.add(s)
    return frozenset(I), frozenset(box)


# ------------------------------------------------------- cut propagation

@dataclass
class PropagationResult:
    x_star: tuple | None
    fraction: float | None
    valid: bool
    x1: tuple | None
    x2: tuple | None
    path_length: int
    max_jump: float
    jump_constant: float           # max jump times L
    witness_mode: str
    subgrid_size: int
    diagnostic: str = ""


def _witness(K, members, kappa, geom, I):
    if I is not None:
        return frozenset(I), "supplied"
    res = kappa_disconnects(K, members, kappa, geom)
    if not res:
        raise ValueError(f"K does not {kappa:.4g}-disconnect the host ({res.mode})")
    return res.witness.I, res.witness.mode


def propagate_cut(K, L: int, geom: CylinderGeom, I=None) -> PropagationResult:
    """Move from the 1/3-disconnected ball to an L-cube that K 1/4-disconnects.

    x1 is the first subgrid point whose cube holds at most 3/4 of I, x2 the
    first holding at least 1/4; the axis-ordered unit path from x1 to x2 is
    walked and the first cube holding at least 1/4 is returned.
    """
    host = ball_host(geom)
    K = set(map(tuple, K))
    if any(host.local(x) is None for x in K):
        raise ValueError("K must lie in B_inf(0, [N/4])")
    I, mode = _witness(K, host.members(), 1.0 / 3.0, geom, I)
    Iarr = host.to_array(I)
    W = window_sums(Iarr, L)
    vol = L ** (geom.d + 1)
    frac = W / vol
    axes = host.grid_axes(L, L)
    grid = list(itertools.product(*axes))
    x1 = next((g for g in grid if frac[g] <= 0.75), None)
    x2 = next((g for g in grid if frac[g] >= 0.25), None)
    if x1 is None or x2 is None:
        return PropagationResult(None, None, False, None, None, 0, 0.0, 0.0, mode, len(grid),
                                 "no subgrid cube on one side of the density window")
    path = [x1]
    cur = list(x1)
    for ax in range(geom.d + 1):
        step = 1 if x2[ax] > cur[ax] else -1
        while cur[ax] != x2[ax]:
            cur[ax] += step
            path.append(tuple(cur))
    vals = np.array([frac[p] for p in path])
    jump = float(np.abs(np.diff(vals)).max()) if len(vals) > 1 else 0.0
    k = int(np.flatnonzero(vals >= 0.25)[0])
    y = path[k]
    x_star = host.site(y)
    cube = frozenset(host.site(tuple(a + b for a, b in zip(y, o)))
                     for o in itertools.product(range(L), repeat=geom.d + 1))
    J = frozenset(I) & cube
    valid = check_kappa_witness(J, K, cube, 0.25, geom)
    return PropagationResult(x_star, float(vals[k]), bool(valid), host.site(x1), host.site(x2),
                             len(path) - 1, jump, jump * L, mode, len(grid))


# -------------------------------------------------------- surface certificates

@dataclass
class SurfaceCertificate:
    host: BoxHost
    l: int
    base_points: list
    pi_star: int
    pi_star_star: int
    per_cube_counts: dict
    constants: dict
    case: int
    witness_mode: str
    scale: float                   # the reference size (L/l)^d or (N/l)^d N^{d alpha - 1}
    diagnostics: dict = field(default_factory=dict)

    # -------------------------------------------------------- validation
    def validate(self, K, exact: bool = True) -> list:
        """Re-check the certificate from scratch; returns the list of problems (empty if valid)."""
        problems = []
        host, l, d = self.host, self.l, self.host.geom.d
        if not self.base_points:
            problems.append("empty base set")
        Karr = host.to_array(set(map(tuple, K)), strict=False)
        seen_proj = set()
        for x in self.base_points:
            x = tuple(x)
            if not host.in_interior(x, l):
                problems.append(f"{x} not in the l-interior of the host")
                continue
            f = host.frame(host.local(x))
            rest = f[:self.pi_star - 1] + f[self.pi_star:]
            if any(c % l for c in rest):
                problems.append(f"pi_*({x}) off the l-sublattice")
            seen_proj.add(rest)
            j = host.local(x)
            sub = Karr[tuple(slice(a, a + l) for a in j)]
            cnt = int(sub.any(axis=self.pi_star_star - 1).sum())
            stored = self.per_cube_counts.get(x)
            if stored is None:
                problems.append(f"{x} has no stored count")
            elif exact and cnt != stored:
                problems.append(f"count at {x}: stored {stored}, recomputed {cnt}")
            if cnt < self.constants["c_double_prime"] * l ** d - 1e-9:
                problems.append(f"count at {x} below the recorded threshold")
        pts = np.array([host.frame(host.local(tuple(x))) for x in self.base_points
                        if host.local(tuple(x)) is not None], dtype=np.int64)
        if len(pts) > 1:
            for a in range(len(pts)):
                dist = np.abs(pts[a + 1:] - pts[a]).max(axis=1)
                if np.any(dist < l):
                    problems.append("base points closer than l")
                    break
        c1 = len(seen_proj) / self.scale
        if abs(c1 - self.constants["c_prime"]) > 1e-12:
            problems.append("recorded c' does not match the base set")
        if not self.constants["c_prime"] > 0 or not self.constants["c_double_prime"] > 0:
            problems.append("non-positive recorded constant")
        return problems

    # ------------------------------------------------------- serialisation
    def to_dict(self) -> dict:
        return {
            "schema": CERT_SCHEMA,
            "host": self.host.describe(),
            "l": self.l,
            "case": self.case,
            "pi_star": self.pi_star,
            "pi_star_star": self.pi_star_star,
            "witness_mode": self.witness_mode,
            "scale": self.scale,
            "constants": dict(self.constants),
            "base_points": [[list(x), int(self.per_cube_counts[x])] for x in self.base_points],
            "diagnostics": self.diagnostics,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SurfaceCertificate":
        obj = json.loads(text)
        if obj.get("schema") != CERT_SCHEMA:
            raise ValueError(f"unknown certificate schema {obj.get('schema')!r}")
        pts = [tuple(p) for p, _ in obj["base_points"]]
        counts = {tuple(p): int(c) for p, c in obj["base_points"]}
        return cls(BoxHost.from_description(obj["host"]), int(obj["l"]), pts, int(obj["pi_star"]),
                   int(obj["pi_star_star"]), counts, dict(obj["constants"]), int(obj["case"]),
                   obj["witness_mode"], float(obj["scale"]), obj.get("diagnostics", {}))


def _segment_scan(W, axes, bnd, A_grid, axis, thr):
    """For each w in pi_axis(bnd) pick x' and walk toward the neighbour in A until W > thr.

    Returns the chosen cube anchors (array indices), the count at each, and
    the number of points where the positive direction was unavailable.
    """
    picked = []
    flips = 0
    moved = np.moveaxis(bnd, axis, 0)
    A_moved = np.moveaxis(A_grid, axis, 0)
    n = moved.shape[0]
    other = [a for k, a in enumerate(axes) if k != axis]
    for w in itertools.product(*[range(len(a)) for a in other]):
        col = moved[(slice(None),) + w]
        hits = np.flatnonzero(col)
        if hits.size == 0:
            continue
        g = int(hits[0])
        acol = A_moved[(slice(None),) + w]
        if g + 1 < n and acol[g + 1]:
            s = 1
        else:
            s = -1
            flips += 1
        gidx = list(w)
        gidx.insert(axis, g)
        base = [int(axes[k][gidx[k]]) for k in range(len(axes))]
        for j in range(1, 10 ** 9):
            pt = list(base)
            pt[axis] += s * j
            if W[tuple(pt)] > thr:
                picked.append(tuple(pt))
                break
    return picked, flips


def _finish_certificate(host, l, Iarr, Karr, W, E1, pi_star, case, mode, scale, diag):
    """Per-cube projection choice, majority filter and the certificate."""
    d = host.geom.d
    jx = []
    for x in E1:
        sub = Iarr[tuple(slice(a, a + l) for a in x)]
        jx.append(_argmax_low(boundary_projection_sizes(sub)) + 1)
    tally = [jx.count(j) for j in range(1, d + 2)]
    pss = _argmax_low(tally) + 1 if E1 else 1
    E = [x for x, j in zip(E1, jx) if j == pss]
    counts = {}
    inclusion_ok = True
    for x in E:
        sl = tuple(slice(a, a + l) for a in x)
        ksub = Karr[sl]
        bsub = directional_boundary(Iarr[sl], pss - 1)
        inclusion_ok &= bool(np.all(ksub[bsub]))
        counts[host.site(x)] = int(ksub.any(axis=pss - 1).sum())
    pts = [host.site(x) for x in E]
    if case == 2 or pi_star is None:
        frames = np.array([x for x in E], dtype=np.int64).reshape(len(E), d + 1)
        psz = [len({tuple(np.delete(f, i)) for f in frames}) for i in range(d + 1)]
        pi_star = _argmax_low(psz) + 1 if E else 1
    proj = {tuple(np.delete(np.array(host.frame(x)), pi_star - 1)) for x in E}
    c2 = min(counts.values()) / l ** d if counts else 0.0
    diag = dict(diag)
    diag.update({"E_prime": len(E1), "E": len(E), "projection_tally": tally,
                 "boundary_inside_K": inclusion_ok,
                 "majority_ratio": (len(E) / len(E1)) if E1 else 0.0})
    shortfalls = []
    if not E:
        shortfalls.append("empty base set")
    diag["shortfalls"] = shortfalls
    return SurfaceCertificate(host, l, sorted(pts), int(pi_star), int(pss), counts,
                              {"c_prime": len(proj) / scale, "c_double_prime": c2},
                              case, mode, float(scale), diag)


def _extract(host, K, I, kappa, l, thr_frac, c_case, mode_I, scale, extra=None):
    d = host.geom.d
    Karr = host.to_array(K)
    Iarr = host.to_array(I)
    W = window_sums(Iarr, l)
    vol = l ** (d + 1)
    thr = thr_frac * vol
    axes = host.grid_axes(l, l)
    if any(len(a) == 0 for a in axes):
        raise ValueError("the l-subgrid of the host is empty; increase the host or decrease l")
    Wg = W[np.ix_(*axes)]
    A_grid = Wg > thr
    diag = {"grid_size": int(A_grid.size), "A_size": int(A_grid.sum()),
            "case_constant": c_case, "threshold": thr_frac}
    if extra is not None:
        axis, bnd, diag_extra = extra(A_grid, axes, W)
        diag.update(diag_extra)
    else:
        axis, bnd = None, None
    if A_grid.sum() <= c_case * A_grid.size:
        case = 1
        if axis is None:
            sizes = [int(directional_boundary(A_grid, ax).any(axis=ax).sum()) for ax in range(d + 1)]
            axis = _argmax_low(sizes)
            bnd = directional_boundary(A_grid, axis)
        E1, flips = _segment_scan(W, axes, bnd, A_grid, axis, thr)
        ratios = [float(W[x]) / vol for x in E1]
        upper = 1.0 / 7.0 if thr_frac == 1.0 / 8.0 else None
        diag.update({"boundary_projection": int(bnd.any(axis=axis).sum()),
                     "negative_direction_used": flips,
                     "window_max_fraction": max(ratios) if ratios else None,
                     "window_upper": upper,
                     "window_violations": (int(sum(r > upper + 1e-12 for r in ratios))
                                           if upper is not None else None),
                     "window_lower_ok": all(r > thr_frac for r in ratios)})
        pi_star = axis + 1
    else:
        case = 2
        sel = (Wg > thr) & (Wg <= c_case * vol)
        idx = np.argwhere(sel)
        E1 = [tuple(int(axes[k][g[k]]) for k in range(d + 1)) for g in idx]
        pi_star = None
    return _finish_certificate(host, l, Iarr, Karr, W, E1, pi_star, case, mode_I, scale, diag)


def extract_surface_cube(K, L: int, l: int, geom: CylinderGeom | None = None, base=None,
                         I=None) -> SurfaceCertificate:
    """Surface certificate for K inside C_base(L) that 1/4-disconnects it.

    Cubes of side l on the l-subgrid of C(L)^{(-l)} are marked when more than
    1/8 of them lies in I.  If at most c4 of the subgrid is marked, the
    largest directional boundary of the marked set is followed to cubes just
    above the 1/8 level; otherwise the cubes with density in (1/8, c4] are
    used.  Each cube picks the projection of its largest directional boundary
    and the majority projection (lowest index on ties) is kept.
    """
    if geom is None:
        geom = CylinderGeom(2 if K is None else len(next(iter(K))) - 1, 2 * L)
    base = (0,) * (geom.d + 1) if base is None else base
    host = cube_host(geom, base, L)
    K = set(map(tuple, K))
    if any(host.local(x) is None for x in K):
        raise ValueError("K must lie in C(L)")
    I, mode = _witness(K, host.members(), 0.25, geom, I)
    if not check_kappa_witness(I, K, host.members(), 0.25, geom):
        raise ValueError("supplied witness does not 1/4-disconnect C(L)")
    scale = (L / l) ** geom.d
    cert = _extract(host, K, I, 0.25, l, 1.0 / 8.0, C4, mode, scale)
    cert.diagnostics["L"] = L
    return cert


def extract_surface_flat_box(K, alpha: float, l: int, geom: CylinderGeom,
                             I=None) -> SurfaceCertificate:
    """Surface certificate for K inside a flat box B(alpha) (d alpha < 1) that 1/3-disconnects it.

    The marked cubes (density above 1/6) are stacked vertically with period
    M + l; the directional boundary of the stack inside B_inf(0, [N/4]) picks
    the direction, and the construction then runs on one copy.
    """
    d, N = geom.d, geom.N
    if not d * alpha < 1:
        raise ValueError("the stacked construction needs d * alpha < 1")
    host = box_alpha_host(geom, alpha)
    K = set(map(tuple, K))
    if any(host.local(x) is None for x in K):
        raise ValueError("K must lie in B(alpha)")
    I, mode = _witness(K, host.members(), 1.0 / 3.0, geom, I)
    if not check_kappa_witness(I, K, host.members(), 1.0 / 3.0, geom):
        raise ValueError("supplied witness does not 1/3-disconnect B(alpha)")
    M = thickness_formula(N, d, alpha, l)
    scale = (N / l) ** d * float(N) ** (d * alpha - 1)
    r = floor_quarter(N)

    def stacked(A_grid, axes, W):
        period = M + l
        gu = [c for c in range(-r, r + 1) if c % l == 0]
        gz = [z for z in range(-r, r + 1) if z % l == 0]
        upos = [{host.origin[ax] + int(a): k for k, a in enumerate(axes[ax])} for ax in range(d)]
        zvals = [host.origin[-1] + int(a) for a in axes[-1]]
        zpos = {v: k for k, v in enumerate(zvals)}
        # the marked set repeated vertically with period M + l, seen inside B_inf(0, [N/4])
        Ap = np.zeros((len(gu),) * d + (len(gz),), dtype=bool)
        for gi in itertools.product(*([range(len(gu))] * d + [range(len(gz))])):
            u = [gu[k] for k in gi[:-1]]
            if any(c not in upos[k] for k, c in enumerate(u)):
                continue
            zr = (gz[gi[-1]] - zvals[0]) % period + zvals[0]
            if zr in zpos:
                Ap[gi] = A_grid[tuple(upos[k][c] for k, c in enumerate(u)) + (zpos[zr],)]
        sizes = [int(directional_boundary(Ap, ax).any(axis=ax).sum()) for ax in range(d + 1)]
        i = _argmax_low(sizes)
        bnd_B = directional_boundary(A_grid, i)
        extra = {"M": M, "period": period, "stack_size": int(Ap.sum()),
                 "stack_grid": int(Ap.size), "stack_boundary_projection": sizes[i],
                 "stack_direction": i + 1}
        if i == d:
            # every u with a stack boundary point must carry a boundary point of one copy
            rhs = directional_boundary(Ap, d).any(axis=d)
            lhs = bnd_B.any(axis=d)
            ok = True
            for gi in zip(*np.nonzero(rhs)):
                u = [gu[k] for k in gi]
                if any(c not in upos[k] for k, c in enumerate(u)):
                    ok = False
                elif not lhs[tuple(upos[k][c] for k, c in enumerate(u))]:
                    ok = False
            extra["fiber_inclusion"] = ok
        return i, bnd_B, extra

    cert = _extract(host, K, I, 1.0 / 3.0, l, 1.0 / 6.0, C5, mode, scale, extra=stacked)
    cert.diagnostics["alpha"] = alpha
    return cert


def fiber_mixed(A_grid: np.ndarray, u) -> bool:
    """Is the vertical fiber of A_grid over u neither empty nor full?"""
    col = A_grid[tuple(u)]
    return bool(col.any() and not col.all())


# ------------------------------------------------------------ test surfaces

def plane_cut(geom: CylinderGeom, L: int, axis: int, level: int, base=None) -> set:
    """The full cross-section {x_axis = base_axis + level} of C_base(L)."""
    host = cube_host(geom, (0,) * (geom.d + 1) if base is None else base, L)
    out = set()
    for j in itertools.product(range(L), repeat=geom.d + 1):
        if j[axis] == level:
            out.add(host.site(j))
    return out


def random_separating_surface(host: BoxHost, rng, kappa: float = 0.25, noise: float = 0.02,
                               max_tilt: float = 0.35, axis: int | None = None) -> tuple:
    """A tilted, jittered graph surface in a host box plus sprinkled extra sites.

    Returns (K, I) with I the region under the surface and K containing its
    host-relative boundary, so K kappa-disconnects the host with witness I.
    """
    shape = host.shape
    k = len(shape)
    while True:
        ax = int(rng.integers(k)) if axis is None else axis
        rest = [s for j, s in enumerate(shape) if j != ax]
        slope = rng.uniform(-max_tilt, max_tilt, size=k - 1) * shape[ax] / max(max(rest), 1)
        level = rng.uniform(0.35, 0.65) * shape[ax]
        jitter = rng.integers(-1, 2, size=rest)
        grids = np.meshgrid(*[np.arange(s) - (s - 1) / 2 for s in rest], indexing="ij")
        hgt = level + sum(a * g for a, g in zip(slope, grids)) + jitter
        coords = np.arange(shape[ax]).reshape((shape[ax],) + (1,) * (k - 1))
        I = np.moveaxis(coords < hgt[None], 0, ax)
        n = int(I.sum())
        if kappa * I.size <= n <= (1 - kappa) * I.size:
            break
    Kb = np.zeros_like(I)
    for a in range(k):
        Kb |= directional_boundary(I, a)
    Kb |= (rng.random(I.shape) < noise) & ~I
    K = {host.site(tuple(j)) for j in np.argwhere(Kb)}
    Iset = {host.site(tuple(j)) for j in np.argwhere(I)}
    return K, Iset


def random_separating_set(geom: CylinderGeom, L: int, rng, base=None, **kw) -> tuple:
    """random_separating_surface on the cube C_base(L) with the 1/4 volume window."""
    host = cube_host(geom, (0,) * (geom.d + 1) if base is None else base, L)
    return random_separating_surface(host, rng, 0.25, **kw)
