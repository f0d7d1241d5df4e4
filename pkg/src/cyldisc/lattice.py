"""Geometry of the discrete cylinder (Z/NZ)^d x Z.

A site is a plain tuple of ints ``(u_1, ..., u_d, z)``: the first d entries
are torus coordinates reduced mod N and the last one is the unbounded height.
Finite site sets are Python sets/frozensets of such tuples; anything that has
to be deterministic iterates over ``sorted(...)``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

Site = tuple


@dataclass(frozen=True)
class CylinderGeom:
    d: int
    N: int

    def __post_init__(self):
        if self.d < 1:
            raise ValueError(f"d must be >= 1, got {self.d}")
        if self.N < 2:
            raise ValueError(f"N must be >= 2, got {self.N}")

    @property
    def torus_size(self) -> int:
        return self.N ** self.d

    def wrap(self, site) -> Site:
        N = self.N
        return tuple(int(c) % N for c in site[:-1]) + (int(site[-1]),)

    def is_valid(self, site) -> bool:
        if len(site) != self.d + 1:
            return False
        return all(0 <= c < self.N for c in site[:-1])

    def torus_index(self, u) -> int:
        """Row-major index of a torus point (first coordinate slowest)."""
        idx = 0
        for c in u:
            idx = idx * self.N + (int(c) % self.N)
        return idx

    def torus_point(self, idx: int) -> tuple:
        out = []
        for _ in range(self.d):
            idx, r = divmod(idx, self.N)
            out.append(r)
        return tuple(reversed(out))

    def coord_dist(self, a: int, b: int) -> int:
        """Wrapped distance between two torus coordinates."""
        t = abs(a - b) % self.N
        return min(t, self.N - t)

    def linf(self, x, y) -> int:
        m = abs(x[-1] - y[-1])
        for a, b in zip(x[:-1], y[:-1]):
            m = max(m, self.coord_dist(a, b))
        return m

    def l1(self, x, y) -> int:
        return abs(x[-1] - y[-1]) + sum(self.coord_dist(a, b) for a, b in zip(x[:-1], y[:-1]))

    def adjacent(self, x, y) -> bool:
        """Euclidean distance exactly one after wrapping."""
        return self.l1(x, y) == 1


def unit_moves(d: int) -> list:
    """The 2d+2 unit moves in the order +e_1, -e_1, ..., +e_{d+1}, -e_{d+1}."""
    moves = []
    for i in range(d + 1):
        for s in (1, -1):
            v = [0] * (d + 1)
            v[i] = s
            moves.append(tuple(v))
    return moves


def neighbors(site, geom: CylinderGeom) -> list:
    """All 2d+2 neighbours of ``site``.

    For N=2 the moves +e_i and -e_i land on the same site; the duplicates are
    kept (the list is a multiset of moves) so that counting them reproduces
    the transition probabilities.
    """
    N = geom.N
    out = []
    for i in range(geom.d):
        for s in (1, -1):
            y = list(site)
            y[i] = (y[i] + s) % N
            out.append(tuple(y))
    for s in (1, -1):
        out.append(tuple(site[:-1]) + (site[-1] + s,))
    return out


def neighbor_set(site, geom: CylinderGeom) -> set:
    return set(neighbors(site, geom))


# ---------------------------------------------------------------- regions

def floor_quarter(x: float) -> int:
    """[x/4], robust to x being an integer computed through a float power."""
    r = round(x)
    if abs(x - r) < 1e-9:
        return int(r) // 4
    return int(math.floor(x / 4.0))


@dataclass(frozen=True)
class Slab:
    """T^d_N x [-r, r]."""
    geom: CylinderGeom
    r: int

    finite = False

    def contains(self, x) -> bool:
        return -self.r <= x[-1] <= self.r

    def contains_array(self, pts: np.ndarray) -> np.ndarray:
        return np.abs(pts[:, -1]) <= self.r

    def members(self):
        raise ValueError("a slab is not enumerated through region_members; "
                         "use slab_members(geom, r)")


@dataclass(frozen=True)
class BallInf:
    """Closed l-infinity ball of radius r around ``center`` (wrapped metric)."""
    geom: CylinderGeom
    center: tuple
    r: int

    finite = True

    def contains(self, x) -> bool:
        return self.geom.linf(x, self.center) <= self.r

    def contains_array(self, pts: np.ndarray) -> np.ndarray:
        return _linf_array(self.geom, pts, self.center) <= self.r

    def members(self) -> frozenset:
        r = self.r
        return frozenset(self.geom.wrap(tuple(c + o for c, o in zip(self.center, off)))
                         for off in itertools.product(range(-r, r + 1), repeat=self.geom.d + 1))


@dataclass(frozen=True)
class Cube:
    """base + [0, l-1]^{d+1}."""
    geom: CylinderGeom
    base: tuple
    l: int

    finite = True

    def contains(self, x) -> bool:
        N = self.geom.N
        for a, b in zip(x[:-1], self.base[:-1]):
            if (a - b) % N >= self.l:
                return False
        return 0 <= x[-1] - self.base[-1] < self.l

    def contains_array(self, pts: np.ndarray) -> np.ndarray:
        N = self.geom.N
        b = np.asarray(self.base)
        ok = (pts[:, -1] - b[-1] >= 0) & (pts[:, -1] - b[-1] < self.l)
        if self.geom.d:
            ok &= np.all((pts[:, :-1] - b[:-1]) % N < self.l, axis=1)
        return ok

    def members(self) -> frozenset:
        return frozenset(self.geom.wrap(tuple(c + o for c, o in zip(self.base, off)))
                         for off in itertools.product(range(self.l), repeat=self.geom.d + 1))


@dataclass(frozen=True)
class BoxAlpha:
    """[-[N/4], [N/4]]^d x [-h, h] with h = [N^{(d alpha) ^ 1} / 4]."""
    geom: CylinderGeom
    alpha: float

    finite = True

    @property
    def half_width(self) -> int:
        return floor_quarter(self.geom.N)

    @property
    def half_height(self) -> int:
        e = min(self.geom.d * self.alpha, 1.0)
        if e == 1.0:
            return floor_quarter(self.geom.N)
        return floor_quarter(self.geom.N ** e)

    def contains(self, x) -> bool:
        w = self.half_width
        for c in x[:-1]:
            if self.geom.coord_dist(c, 0) > w:
                return False
        return abs(x[-1]) <= self.half_height

    def contains_array(self, pts: np.ndarray) -> np.ndarray:
        N = self.geom.N
        t = np.abs(pts[:, :-1]) % N
        t = np.minimum(t, N - t)
        return np.all(t <= self.half_width, axis=1) & (np.abs(pts[:, -1]) <= self.half_height)

    def members(self) -> frozenset:
        w, h = self.half_width, self.half_height
        g = self.geom
        rng = [range(-w, w + 1)] * g.d + [range(-h, h + 1)]
        return frozenset(g.wrap(p) for p in itertools.product(*rng))

    def expected_size(self) -> int:
        return (2 * self.half_width + 1) ** self.geom.d * (2 * self.half_height + 1)


@dataclass(frozen=True)
class Explicit:
    geom: CylinderGeom
    sites: frozenset

    finite = True

    def contains(self, x) -> bool:
        return tuple(x) in self.sites

    def contains_array(self, pts: np.ndarray) -> np.ndarray:
        return np.array([tuple(int(c) for c in p) in self.sites for p in pts], dtype=bool)

    def members(self) -> frozenset:
        return self.sites


def explicit(geom, sites: Iterable) -> Explicit:
    return Explicit(geom, frozenset(geom.wrap(s) for s in sites))


def region_members(region) -> frozenset:
    """Exact member set of a finite region; a slab raises ValueError."""
    if not getattr(region, "finite", False):
        raise ValueError(f"cannot enumerate infinite region {region!r}")
    return region.members()


def slab_members(geom: CylinderGeom, r: int) -> frozenset:
    """Sites of T^d_N x [-r, r]; finite, so it is allowed here explicitly."""
    tor = list(itertools.product(range(geom.N), repeat=geom.d))
    return frozenset(u + (z,) for z in range(-r, r + 1) for u in tor)


def _linf_array(geom, pts, center):
    pts = np.asarray(pts)
    c = np.asarray(center)
    dz = np.abs(pts[:, -1] - c[-1])
    if geom.d == 0:
        return dz
    t = np.abs(pts[:, :-1] - c[:-1]) % geom.N
    t = np.minimum(t, geom.N - t)
    return np.maximum(dz, t.max(axis=1))


# --------------------------------------------------------- set operations

def relative_boundary(A, B, geom: CylinderGeom, direction: int | None = None) -> set:
    """Sites of B \\ A adjacent to A; with ``direction`` i (1..d+1) only along e_i."""
    A = A if isinstance(A, (set, frozenset)) else set(A)
    out = set()
    if direction is None:
        for x in B:
            if x in A:
                continue
            for y in neighbors(x, geom):
                if y in A:
                    out.add(x)
                    break
        return out
    i = direction - 1
    if not 0 <= i <= geom.d:
        raise ValueError(f"direction must be in 1..{geom.d + 1}")
    for x in B:
        if x in A:
            continue
        for s in (1, -1):
            y = list(x)
            y[i] += s
            if i < geom.d:
                y[i] %= geom.N
            if tuple(y) in A:
                out.add(x)
                break
    return out


def _offsets(d: int, l: int):
    return list(itertools.product(range(-l, l + 1), repeat=d + 1))


def dilate(A, l: int, geom: CylinderGeom) -> set:
    """A^{(l)}: sites within l-infinity distance l of A."""
    offs = _offsets(geom.d, l)
    out = set()
    for x in A:
        for o in offs:
            out.add(geom.wrap(tuple(a + b for a, b in zip(x, o))))
    return out


def erode(A, l: int, geom: CylinderGeom) -> set:
    """A^{(-l)}: sites of A whose whole l-ball lies in A."""
    A = A if isinstance(A, (set, frozenset)) else set(A)
    offs = _offsets(geom.d, l)
    out = set()
    for x in A:
        if all(geom.wrap(tuple(a + b for a, b in zip(x, o))) in A for o in offs):
            out.add(x)
    return out


def dilate_erode(A, l: int, sign: str, geom: CylinderGeom) -> set:
    if l < 1:
        raise ValueError("l must be >= 1")
    if sign in ("+", 1, "plus"):
        return dilate(A, l, geom)
    if sign in ("-", -1, "minus"):
        return erode(A, l, geom)
    raise ValueError(f"sign must be '+' or '-', got {sign!r}")


def project(i, A) -> set:
    """Image of A under pi_i (drop coordinate i, 1-based) or pi_Z (i == 'Z')."""
    if i == "Z" or i == "z":
        return {x[-1] for x in A}
    k = int(i) - 1
    return {x[:k] + x[k + 1:] for x in A}


def diameter(A, geom: CylinderGeom) -> int:
    if not A:
        raise ValueError("diameter of an empty set")
    pts = np.array(sorted(A), dtype=np.int64)
    best = 0
    for p in pts:
        best = max(best, int(_linf_array(geom, pts, p).max()))
    return best
