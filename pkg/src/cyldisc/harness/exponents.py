"""Exponent functions for the disconnection time and the excursion estimate."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def alpha_star(d: int) -> float:
    return 1.0 / (d * (2.0 - 1.0 / (d - 1)))


def _check_d(d: int):
    if d < 3:
        raise ValueError(f"the exponent formulas need d >= 3, got {d}")


def phi_branches(alpha: float, d: int) -> tuple:
    """The three branch formulas evaluated at alpha (used for continuity checks)."""
    return (alpha,
            1.0 / d + alpha / (d - 1) - alpha,
            (1.0 - alpha) / (d - 1) ** 2)


def phi(alpha: float, d: int) -> float:
    """alpha below alpha_*, 1/d + alpha/(d-1) - alpha up to 1/d, (1-alpha)/(d-1)^2 above."""
    _check_d(d)
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    b = phi_branches(alpha, d)
    if alpha < alpha_star(d):
        return b[0]
    if alpha < 1.0 / d:
        return b[1]
    return b[2]


def excursion_rate(alpha: float, beta: float, d: int) -> float:
    """Excursion-estimate exponent: four branches in (alpha, beta)."""
    _check_d(d)
    if alpha <= 0 or beta <= 0:
        raise ValueError("alpha and beta must be positive")
    if alpha < 1.0 / d:
        top = d - 1 - d * alpha / (d - 1)
        return top if beta < top else 0.0
    kink = d - 1 - 1.0 / (d - 1)
    if beta < kink:
        return kink
    if beta < d - 1:
        return ((d - 1) ** 2 - 1) * (d - 1 - beta)
    return 0.0


def f_star(alpha: float, beta: float, d: int) -> float:
    if alpha <= 0 or beta <= 0:
        raise ValueError("alpha and beta must be positive")
    v = d - min(d * alpha, 1.0)
    return v if beta < v else 0.0


def g_alpha(alpha: float, beta: float, d: int) -> float:
    return min(beta - max(d * alpha - 1.0, 0.0), excursion_rate(alpha, beta, d))


def zeta(alpha: float, d: int) -> float:
    """sup over beta > 0 of g_alpha(beta), in closed form."""
    _check_d(d)
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if alpha < 1.0 / d:
        return d * (1.0 - 1.0 / d - alpha / (d - 1))
    if alpha < 1.0:
        return d * (1.0 - alpha - (1.0 - alpha) / (d - 1) ** 2)
    return 0.0


def beta_bar(alpha: float, d: int) -> float:
    """Maximiser of g_alpha for 1/d <= alpha < 1."""
    return d - 1 - (d - d * alpha) / (d - 1) ** 2


def _f_vec(alpha: float, beta: np.ndarray, d: int) -> np.ndarray:
    """excursion_rate over an array of beta values."""
    if alpha < 1.0 / d:
        top = d - 1 - d * alpha / (d - 1)
        return np.where(beta < top, top, 0.0)
    kink = d - 1 - 1.0 / (d - 1)
    return np.where(beta < kink, kink,
                    np.where(beta < d - 1, ((d - 1) ** 2 - 1) * (d - 1 - beta), 0.0))


def zeta_grid(alpha: float, d: int, points: int = 20001, rounds: int = 8) -> float:
    """sup of g_alpha by repeated grid maximisation, zooming in around the best point."""
    lo, hi = 1e-12, float(d) + 1.0
    shift = max(d * alpha - 1.0, 0.0)
    best = -np.inf
    for _ in range(rounds):
        bs = np.linspace(lo, hi, points)
        vals = np.minimum(bs - shift, _f_vec(alpha, bs, d))
        k = int(np.argmax(vals))
        best = max(best, float(vals[k]))
        step = bs[1] - bs[0]
        lo, hi = max(bs[k] - 2 * step, 1e-12), bs[k] + 2 * step
    return best


def band_identity_sides(alpha: float, d: int) -> tuple:
    lhs = d * (1.0 - alpha - phi(alpha, d))
    rhs = max(zeta(alpha, d), d * (1.0 - 2.0 * alpha) if alpha < 1.0 / d else 0.0)
    return lhs, rhs


def band_identity_check(d: int, grid=None) -> float:
    """Max |d(1 - alpha - phi) - (zeta v d(1 - 2 alpha) 1{alpha < 1/d})| over the grid.

    The default grid is alpha = k/1000, k = 1..999, without the branch points.
    """
    if grid is None:
        grid = np.arange(1, 1000) / 1000.0
    worst = 0.0
    for a in grid:
        a = float(a)
        if abs(a - alpha_star(d)) < 1e-12 or abs(a - 1.0 / d) < 1e-12:
            continue
        lhs, rhs = band_identity_sides(a, d)
        worst = max(worst, abs(lhs - rhs))
    return worst


def phi_continuity(d: int) -> float:
    """Largest jump of phi at its two branch points."""
    a1, a2 = alpha_star(d), 1.0 / d
    b1, b2 = phi_branches(a1, d), phi_branches(a2, d)
    return max(abs(b1[0] - b1[1]), abs(b2[1] - b2[2]))


def f_branch_gap(d: int) -> float:
    """Mismatch of the second and third branches of f at beta = d - 1 - 1/(d - 1)."""
    kink = d - 1 - 1.0 / (d - 1)
    return abs(kink - ((d - 1) ** 2 - 1) * (d - 1 - kink))


def continuity_grid(d: int, alphas, betas) -> list:
    """Grid points away from the discontinuity lines of f and f*."""
    out = []
    for a in alphas:
        for b in betas:
            lines = [d - 1 - d * a / (d - 1), d - 1 - 1.0 / (d - 1), d - 1,
                     d - min(d * a, 1.0)]
            if abs(a - 1.0 / d) < 1e-9 or any(abs(b - v) < 1e-9 for v in lines):
                continue
            out.append((float(a), float(b)))
    return out


def f_le_fstar_violations(d: int, alphas=None, betas=None) -> int:
    alphas = np.arange(1, 60) / 40.0 if alphas is None else alphas
    betas = np.arange(1, 4 * d) / 4.0 + 0.013 if betas is None else betas
    bad = 0
    for a, b in continuity_grid(d, alphas, betas):
        if excursion_rate(a, b, d) > f_star(a, b, d) + 1e-12:
            bad += 1
    return bad


@dataclass
class ExponentTable:
    d: int
    alphas: np.ndarray
    betas: np.ndarray
    phi: np.ndarray
    f: np.ndarray              # shape (len(alphas), len(betas))
    f_star: np.ndarray
    zeta: np.ndarray
    notes: dict = field(default_factory=dict)

    def band(self) -> tuple:
        """Lower and upper curves 1 - alpha - phi(alpha) and 1 - alpha."""
        return 1.0 - self.alphas - self.phi, 1.0 - self.alphas


def exponent_table(d: int, alphas=None, betas=None) -> ExponentTable:
    alphas = np.arange(1, 100) / 100.0 if alphas is None else np.asarray(alphas, dtype=float)
    betas = np.arange(1, 4 * d) / 4.0 if betas is None else np.asarray(betas, dtype=float)
    ph = np.array([phi(a, d) for a in alphas])
    f = np.array([[excursion_rate(a, b, d) for b in betas] for a in alphas])
    fs = np.array([[f_star(a, b, d) for b in betas] for a in alphas])
    z = np.array([zeta(a, d) for a in alphas])
    return ExponentTable(d, alphas, betas, ph, f, fs, z,
                         {"alpha_star": alpha_star(d), "phi_jump": phi_continuity(d),
                          "f_branch_gap": f_branch_gap(d)})
