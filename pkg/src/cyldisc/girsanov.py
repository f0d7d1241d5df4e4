"""Change of measure between the drifted walk and the unbiased walk.

Up to a fixed time n the law of the drifted path has density
prod_i (1 + delta * dz_i) with respect to the unbiased one, where dz_i is
the vertical increment of step i.  Weights are kept as logarithms.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .lattice import CylinderGeom
from .walk import decode_moves, move_vectors

ENUM_CAP = 10 ** 7


@dataclass(frozen=True)
class LogWeight:
    log_value: float
    up_steps: int
    down_steps: int

    @property
    def value(self) -> float:
        return math.exp(self.log_value)


def _log_weight(up: int, down: int, delta: float) -> float:
    out = 0.0
    if up:
        out += up * math.log1p(delta)
    if down:
        out += down * math.log1p(-delta)
    return out


def path_weight(path, delta: float) -> LogWeight:
    """Density of the drifted path law against the unbiased one along ``path``.

    ``path`` is a Trajectory or an (n+1, d+1) array of sites.  Lateral steps
    contribute a factor 1.
    """
    steps = path.steps if hasattr(path, "steps") else np.asarray(path)
    dz = np.diff(steps[:, -1])
    if np.any(np.abs(dz) > 1):
        raise ValueError("not a nearest-neighbour path")
    up = int(np.count_nonzero(dz == 1))
    down = int(np.count_nonzero(dz == -1))
    return LogWeight(_log_weight(up, down, delta), up, down)


def ext_pow(base: float, exponent: float) -> float:
    """base**exponent with (1-delta)^inf = 0 and (1+delta)^inf = inf."""
    if math.isinf(exponent):
        if exponent < 0:
            raise ValueError("negative infinite exponent")
        return 0.0 if base < 1 else (math.inf if base > 1 else 1.0)
    return base ** exponent


def displacement_factor(b: float, delta: float) -> float:
    """(1 - delta)^{b-} (1 + delta)^{b+}."""
    bm = max(-b, 0.0)
    bp = max(b, 0.0)
    lo = ext_pow(1.0 - delta, bm)
    hi = ext_pow(1.0 + delta, bp)
    if lo == 0.0 and math.isinf(hi):
        raise ValueError("b cannot be infinite in both directions")
    return lo * hi


# ------------------------------------------------------------ enumeration

def enumerate_codes(d: int, n: int) -> np.ndarray:
    """All (2d+2)^n move-code sequences as an (M, n) int8 array."""
    k = 2 * d + 2
    M = k ** n
    if M > ENUM_CAP:
        raise ValueError(f"(2d+2)^n = {M} paths exceeds the enumeration cap {ENUM_CAP}; "
                         "use the Monte Carlo estimators instead")
    idx = np.arange(M, dtype=np.int64)
    out = np.empty((M, n), dtype=np.int8)
    for j in range(n - 1, -1, -1):
        out[:, j] = idx % k
        idx //= k
    return out


def codes_to_paths(geom: CylinderGeom, codes: np.ndarray, start) -> np.ndarray:
    M, n = codes.shape
    mv = move_vectors(geom.d)
    paths = np.empty((M, n + 1, geom.d + 1), dtype=np.int64)
    paths[:, 0, :] = start
    if n:
        paths[:, 1:, :] = np.cumsum(mv[codes.astype(np.int64)], axis=1) + np.asarray(start)
        paths[:, 1:, :-1] %= geom.N
    return paths


def _path_probs(codes: np.ndarray, d: int, delta: float) -> np.ndarray:
    """Product of one-step probabilities (1 + delta*dz)/(2d+2), multiplied out directly."""
    p = np.full(2 * d + 2, 1.0 / (2 * d + 2))
    p[2 * d] = (1.0 + delta) / (2 * d + 2)
    p[2 * d + 1] = (1.0 - delta) / (2 * d + 2)
    return np.prod(p[codes.astype(np.int64)], axis=1)


def _log_weights(codes: np.ndarray, d: int, delta: float) -> np.ndarray:
    up = np.count_nonzero(codes == 2 * d, axis=1)
    down = np.count_nonzero(codes == 2 * d + 1, axis=1)
    return up * math.log1p(delta) + down * math.log1p(-delta)


def endpoint_event(n: int, y):
    y = np.asarray(y)

    def ev(paths):
        return np.all(paths[:, n, :] == y, axis=1)
    ev.__name__ = f"X_{n}={tuple(int(c) for c in y)}"
    return ev


def reweighted_probability(event, delta: float, N: int, d: int, n: int, start=None):
    """(P^delta[event], E^0[event * weight]) by summing over every path of length n.

    ``event`` maps an (M, n+1, d+1) array of paths to a boolean array.
    """
    geom = CylinderGeom(d, N)
    start = (0,) * (d + 1) if start is None else geom.wrap(start)
    codes = enumerate_codes(d, n)
    paths = codes_to_paths(geom, codes, start)
    mask = np.asarray(event(paths), dtype=bool)
    p_delta = math.fsum(_path_probs(codes[mask], d, delta))
    p0 = (1.0 / (2 * d + 2)) ** n
    w = np.exp(_log_weights(codes[mask], d, delta))
    e0 = math.fsum(p0 * w)
    return p_delta, e0


def max_identity_residual(N: int, d: int, n_max: int, deltas, start=None) -> float:
    """Largest |P^delta - E^0[1 w]| over all events {X_n = y}, n <= n_max."""
    geom = CylinderGeom(d, N)
    start = (0,) * (d + 1) if start is None else geom.wrap(start)
    worst = 0.0
    for n in range(0, n_max + 1):
        codes = enumerate_codes(d, n) if n else np.zeros((1, 0), dtype=np.int8)
        paths = codes_to_paths(geom, codes, start)
        ends = paths[:, -1, :]
        keys, inv = np.unique(ends, axis=0, return_inverse=True)
        inv = inv.ravel()
        for delta in deltas:
            pd = _path_probs(codes, d, delta)
            ew = (1.0 / (2 * d + 2)) ** n * np.exp(_log_weights(codes, d, delta))
            for j in range(len(keys)):
                sel = inv == j
                worst = max(worst, abs(math.fsum(pd[sel]) - math.fsum(ew[sel])))
    return worst


def endpoint_law_dp(N: int, d: int, n: int, delta: float, start=None) -> dict:
    """Law of X_n by forward propagation of the one-step kernel (independent oracle)."""
    geom = CylinderGeom(d, N)
    start = (0,) * (d + 1) if start is None else geom.wrap(start)
    mv = move_vectors(d)
    p = [1.0 / (2 * d + 2)] * (2 * d) + [(1 + delta) / (2 * d + 2), (1 - delta) / (2 * d + 2)]
    law = {start: 1.0}
    for _ in range(n):
        nxt = {}
        for x, q in law.items():
            for m in range(2 * d + 2):
                y = geom.wrap(tuple(a + b for a, b in zip(x, mv[m])))
                nxt[y] = nxt.get(y, 0.0) + q * p[m]
        law = nxt
    return law


# ------------------------------------------------ comparison bounds

@dataclass
class BoundReport:
    lower: float           # (1-delta)^{b-}(1+delta)^{b+} E^0[A, (1-delta^2)^{ceil(T/2)}]
    p_delta: float
    upper: float           # (1-delta)^{b'-}(1+delta)^{b'+} P^0[A]
    se_lower: float
    se_delta: float
    se_upper: float
    lower_holds: bool
    upper_holds: bool
    upper_vacuous: bool
    mode: str


def _check_comparison_event(T, disp, mask, b, b_prime):
    bad = mask & ((T < 0) | (disp < b) | (disp > b_prime))
    if np.any(bad):
        raise ValueError("the event contains paths with T infinite or displacement outside "
                         "[b, b']; the comparison bounds do not apply")


def drift_comparison_bounds(event, stopping_time, b: float, b_prime: float, delta: float,
                            geom: CylinderGeom, n_max: int, samples: int | None = None,
                            rng=None, start=None, sigmas: float = 3.0) -> BoundReport:
    """Evaluate both sides of the two comparison bounds.

    ``stopping_time(paths)`` returns T per path (-1 if T > n_max) and
    ``event(paths, T)`` the indicator of A.  With ``samples=None`` all paths of
    length n_max are enumerated; otherwise ``samples`` paths are drawn under
    each of the two laws and the inequalities are checked up to ``sigmas``
    standard errors.
    """
    d = geom.d
    start = (0,) * (d + 1) if start is None else geom.wrap(start)
    lo_f = displacement_factor(b, delta)
    hi_f = displacement_factor(b_prime, delta)

    def stats(paths):
        T = np.asarray(stopping_time(paths), dtype=np.int64)
        A = np.asarray(event(paths, T), dtype=bool)
        Tc = np.where(T < 0, 0, T)
        disp = paths[np.arange(len(paths)), Tc, -1] - start[-1]
        _check_comparison_event(T, disp, A, b, b_prime)
        return T, A

    if samples is None:
        codes = enumerate_codes(d, n_max)
        paths = codes_to_paths(geom, codes, start)
        T, A = stats(paths)
        p0 = (1.0 / (2 * d + 2)) ** n_max
        pd = _path_probs(codes, d, delta)
        damp = (1.0 - delta ** 2) ** np.ceil(np.where(T < 0, 0, T) / 2.0)
        e_low = math.fsum(p0 * damp[A])
        P0 = math.fsum(np.full(int(A.sum()), p0))
        Pd = math.fsum(pd[A])
        lower = lo_f * e_low
        upper = hi_f * P0 if P0 > 0 else 0.0
        se = (0.0, 0.0, 0.0)
        mode = "exact"
    else:
        if rng is None:
            raise ValueError("Monte Carlo mode needs an rng")
        paths0 = codes_to_paths(geom, decode_moves(rng.random((samples, n_max)), d, 0.0), start)
        pathsd = codes_to_paths(geom, decode_moves(rng.random((samples, n_max)), d, delta), start)
        T0, A0 = stats(paths0)
        Td, Ad = stats(pathsd)
        damp = np.where(A0, (1.0 - delta ** 2) ** np.ceil(np.where(T0 < 0, 0, T0) / 2.0), 0.0)
        e_low, P0, Pd = damp.mean(), A0.mean(), Ad.mean()
        lower = lo_f * e_low
        upper = hi_f * P0 if P0 > 0 else 0.0
        sq = math.sqrt(samples)
        se = (lo_f * damp.std() / sq, Ad.std() / sq,
              (hi_f * A0.std() / sq) if not math.isinf(hi_f) else math.inf)
        mode = "monte-carlo"
    vac = math.isinf(upper)
    tol_lo = sigmas * math.hypot(se[0], se[1]) + 1e-12
    lower_ok = lower <= Pd + tol_lo
    if vac:
        upper_ok = True
    else:
        upper_ok = Pd <= upper + sigmas * math.hypot(se[1], se[2]) + 1e-12
    return BoundReport(lower, Pd, upper, se[0], se[1], se[2], bool(lower_ok), bool(upper_ok),
                       vac, mode)


def importance_estimate(event, delta: float, geom: CylinderGeom, n: int, samples: int, rng,
                        start=None) -> tuple:
    """Mean and standard error of 1_A * weight under the unbiased walk."""
    d = geom.d
    start = (0,) * (d + 1) if start is None else geom.wrap(start)
    codes = decode_moves(rng.random((samples, n)), d, 0.0)
    paths = codes_to_paths(geom, codes, start)
    A = np.asarray(event(paths), dtype=bool)
    w = np.where(A, np.exp(_log_weights(codes, d, delta)), 0.0)
    return float(w.mean()), float(w.std() / math.sqrt(samples))
