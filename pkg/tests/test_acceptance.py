"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Tolerances live in ACCEPTANCE below.  Measured quantities (fitted slopes,
slacks, recorded constants) are collected into ``acceptance_report.json`` at
the repository root when the module finishes.
"""
import json
import math
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import ks_2samp

from cyldisc.connectivity import disconnection_time, naive_disconnection_time
from cyldisc.girsanov import max_identity_residual
from cyldisc.green import (decay_profile, green_exact, green_mc, hitting_bound_sides,
                           hitting_probability)
from cyldisc.harness import cli
from cyldisc.harness.exponents import (band_identity_check, f_le_fstar_violations, zeta,
                                       zeta_grid)
from cyldisc.harness.experiments import ExperimentConfig, estimate_Tdisc
from cyldisc.isogeom import (box_alpha_host, extract_surface_cube, extract_surface_flat_box,
                             loomis_whitney_array, loomis_whitney_exhaustive, plane_cut,
                             random_separating_set, random_separating_surface)
from cyldisc.lattice import CylinderGeom
from cyldisc.spectral import (cover_tail_check, eigentime_maxhit_check, torus_transition_matrix,
                              torus_translations, visit_spectrum_residual)
from cyldisc.walk import sample_S_decomposition, simulate_embedding, simulate_walk, visit_chain
from instances import random_domain, random_points

ACCEPTANCE = {
    "identity_tol": 1e-12,
    "identity_seconds": 10.0,
    "reverse_time_seconds": 30.0,
    # the desk-scale slope carries slowly varying corrections; +-0.8 around 2d
    # was set after pilot runs at N = 4..10
    "tdisc_slope_window": (5.2, 6.8),
    "tdisc_replicas": 200,
    "exp_regime_replicas": 200,
    "cover_replicas": 10 ** 4,
    "visit_spectrum_replicas": 10 ** 5,
    "ks_samples": 10 ** 4,
    "ks_max": 0.05,
    "lw_random": 10 ** 4,
    "geom_runs": 100,
    "green_sigmas": 3.0,
    "green_residual": 1e-10,
    "green_slope": (-2.0, 0.3),
    "zeta_gap": 1e-6,
}

REPORT = {"config": {k: list(v) if isinstance(v, tuple) else v for k, v in ACCEPTANCE.items()},
          "criteria": {}}


@pytest.fixture(scope="module", autouse=True)
def _write_report():
    yield
    path = Path(__file__).resolve().parents[1] / "acceptance_report.json"
    path.write_text(json.dumps(REPORT, indent=1, sort_keys=True, default=float))


@pytest.fixture
def verdict(capsys):
    def emit(num, name, ok, **detail):
        REPORT["criteria"][str(num)] = {"name": name, "pass": bool(ok), **detail}
        text = ", ".join(f"{k}={v}" for k, v in detail.items())
        with capsys.disabled():
            print(f"\n[criterion {num:2d}] {'PASS' if ok else 'FAIL'}  {name}: {text}")
        assert ok, f"criterion {num} failed: {text}"
    return emit


def test_c01_change_of_measure_identity(verdict):
    t = time.perf_counter()
    res = max_identity_residual(3, 1, 6, [0.1, 0.5, 0.9])
    dt = time.perf_counter() - t
    verdict(1, "exact change-of-measure identity", res <= ACCEPTANCE["identity_tol"]
            and dt < ACCEPTANCE["identity_seconds"], residual=res, seconds=round(dt, 3))


def test_c02_reverse_time_matches_naive(verdict):
    rng = np.random.default_rng(2)
    t = time.perf_counter()
    mismatches = 0
    for i in range(100):
        d, N = 1 + i % 2, 3 + (i // 2) % 2
        n = int(rng.integers(1, 201))
        delta = float(rng.choice([0.0, 0.05, 0.3]))
        tr = simulate_walk(CylinderGeom(d, N), delta, n, rng)
        mismatches += disconnection_time(tr) != naive_disconnection_time(tr)
    dt = time.perf_counter() - t
    verdict(2, "reverse-time disconnection time equals per-prefix BFS",
            mismatches == 0 and dt < ACCEPTANCE["reverse_time_seconds"],
            mismatches=mismatches, seconds=round(dt, 2))


def _tdisc(alpha, Ns, replicas, seed):
    cfg = ExperimentConfig(d=3, Ns=tuple(Ns), alpha=alpha, replicas=replicas, seed=seed)
    return estimate_Tdisc(cfg)


def test_c03_polynomial_regime_slope(verdict):
    rec = _tdisc(2.0, (4, 6, 8, 10), ACCEPTANCE["tdisc_replicas"], 3)
    per = rec.summary["per_N"]
    fit = rec.summary["fit"]
    lo, hi = ACCEPTANCE["tdisc_slope_window"]
    censored = sum(s["censored"] for s in per.values())
    verdict(3, "log median T vs log N slope at d=3, alpha=2",
            lo <= fit["slope"] <= hi and censored == 0,
            slope=round(fit["slope"], 3), ci=(round(fit["ci_low"], 3), round(fit["ci_high"], 3)),
            medians={N: s["median"] for N, s in per.items()}, censored=censored)


def test_c04_exponential_regime_direction(verdict):
    Ns = (3, 4, 5)
    slow = _tdisc(0.5, Ns, ACCEPTANCE["exp_regime_replicas"], 4)
    base = _tdisc(2.0, Ns, ACCEPTANCE["exp_regime_replicas"], 5)
    fit = slow.summary["fit"]
    m_slow = [slow.summary["per_N"][str(N)]["median"] for N in Ns]
    m_base = [base.summary["per_N"][str(N)]["median"] for N in Ns]
    ratios = [a / b for a, b in zip(m_slow, m_base)]
    # a polynomial gap would keep the ratio's log-log slope bounded; here the log ratio
    # must increase and accelerate in log N
    lr = np.log(ratios)
    ln = np.log(Ns)
    accel = (lr[2] - lr[1]) / (ln[2] - ln[1]) > (lr[1] - lr[0]) / (ln[1] - ln[0])
    ok = fit["coords"] == "power" and fit["slope"] > 0 and fit["ci_low"] > 0 \
        and all(a < b for a, b in zip(ratios, ratios[1:])) and accel
    verdict(4, "alpha=0.5 grows like exp(c N^1.5) and outpaces alpha=2", ok,
            slope=round(fit["slope"], 4), ci=(round(fit["ci_low"], 4), round(fit["ci_high"], 4)),
            medians=m_slow, baseline=m_base, ratios=[round(r, 2) for r in ratios])


def test_c05_cover_time_tail(verdict):
    out = cover_tail_check(5, 2, ACCEPTANCE["cover_replicas"], master_seed=5)
    worst = max(r["tail"] - r["bound"] - 3 * r["se"] for r in out["rows"])
    verdict(5, "cover-time tail below |G| exp(-[n/4eu]) + 3 se",
            out["holds"] and len(out["rows"]) == 20 and out["censored"] == 0,
            grid_points=len(out["rows"]), worst_excess=worst, u=out.get("u"))


def test_c06_eigentime_bound(verdict):
    violations, slacks = 0, {}
    for d in (1, 2):
        for N in range(3, 9):
            an = eigentime_maxhit_check(torus_transition_matrix(N, d), torus_translations(N, d))
            violations += not an.holds
            slacks[f"N{N}d{d}"] = round(an.slack, 6)
    verdict(6, "max hitting time <= 2u on torus chains", violations == 0,
            violations=violations, min_slack=min(slacks.values()), slack=slacks)


def test_c07_visit_chain_spectrum(verdict):
    rep = visit_spectrum_residual(3, 1, 0.0, ACCEPTANCE["visit_spectrum_replicas"],
                                  np.random.default_rng(7), horizon=500.0)
    verdict(7, "visit-chain spectrum vs E[lambda^(N^Y)]",
            bool(rep.within.all()) and rep.m1_residual == 0.0,
            residual=rep.residual.tolist(), se=rep.se.tolist(), m1_residual=rep.m1_residual)


def test_c08_visit_time_law(verdict):
    g = CylinderGeom(1, 3)
    rng = np.random.default_rng(8)
    H = 400.0
    a, b = [], []
    for _ in range(ACCEPTANCE["ks_samples"]):
        emb, _ = simulate_embedding(g, 0.0, H, (0, 0), rng)
        vc = visit_chain(emb, 2)
        a.append(vc.stop_times[2] if len(vc.stop_times) > 2 else math.inf)
        b.append(sample_S_decomposition(0.0, 2, rng, horizon=H))
    a = np.minimum(np.array(a), H + 1)
    b = np.minimum(np.array(b), H + 1)
    ks = ks_2samp(a, b).statistic
    verdict(8, "second relaxed visit time: chain vs decomposition", ks < ACCEPTANCE["ks_max"],
            ks=round(float(ks), 5), truncated=int((a > H).sum() + (b > H).sum()))


def test_c09_projection_inequality(verdict):
    ex = loomis_whitney_exhaustive(side=3, d=2, max_size=9)
    rng = np.random.default_rng(9)
    bad = 0
    for _ in range(ACCEPTANCE["lw_random"]):
        A = rng.random((6, 6, 6)) < rng.uniform(0.02, 0.9)
        bad += not loomis_whitney_array(A)[1]
    verdict(9, "volume bounded by largest projection", ex.violations == 0 and bad == 0,
            exhaustive_subsets=ex.subsets, exhaustive_violations=ex.violations,
            equality_cases=ex.equality_cases, random_violations=bad)


def test_c10_surface_certificates(verdict):
    L, l = 24, 4
    g = CylinderGeom(2, 2 * L)
    rng = np.random.default_rng(10)
    invalid, cp, cpp = 0, [], []
    for _ in range(ACCEPTANCE["geom_runs"]):
        K, I = random_separating_set(g, L, rng)
        c = extract_surface_cube(K, L, l, g, I=I)
        invalid += bool(c.validate(K))
        cp.append(c.constants["c_prime"])
        cpp.append(c.constants["c_double_prime"])
    plane_counts = set()
    for axis in range(3):
        K = plane_cut(g, L, axis, 11)
        c = extract_surface_cube(K, L, l, g)
        invalid += bool(c.validate(K))
        plane_counts |= set(c.per_cube_counts.values())
    flat = {}
    for N in (16, 32):
        gN = CylinderGeom(2, N)
        host = box_alpha_host(gN, 0.4)
        mins = []
        for _ in range(ACCEPTANCE["geom_runs"] // 4):
            K, I = random_separating_surface(host, rng, 1 / 3)
            c = extract_surface_flat_box(K, 0.4, 2, gN, I=I)
            invalid += bool(c.validate(K))
            mins.append((c.constants["c_prime"], c.constants["c_double_prime"]))
        flat[N] = [min(m[0] for m in mins), min(m[1] for m in mins)]
    ok = invalid == 0 and min(cp) > 0 and min(cpp) > 0 and plane_counts == {l ** 2} \
        and all(v[0] > 0 and v[1] > 0 for v in flat.values())
    verdict(10, "surface certificates re-validate", ok, invalid=invalid,
            min_c_prime=min(cp), min_c_double_prime=min(cpp), plane_counts=sorted(plane_counts),
            flat_box_minima=flat)


def test_c11_green_function(verdict):
    rng = np.random.default_rng(11)
    worst_res, mc_out, mc_z = 0.0, 0, []
    for _ in range(50):
        dom = random_domain(rng, d=2, N=4, a=2, keep=0.9)
        x, y = random_points(rng, dom, 2)
        worst_res = max(worst_res, dom.residual(y))
        exact = green_exact(dom, x, y)
        m, se = green_mc(dom, x, y, 2000, rng)
        z = abs(m - exact) / se if se > 0 else (0.0 if m == exact else math.inf)
        mc_z.append(z)
        mc_out += z > ACCEPTANCE["green_sigmas"]
    bound_bad, eq_gap = 0, 0.0
    for _ in range(100):
        dom = random_domain(rng, d=2, N=4, a=3, keep=0.9)
        A = set(random_points(rng, dom, int(rng.integers(1, 5))))
        x = random_points(rng, dom, 1)[0]
        lhs, rhs = hitting_bound_sides(A, dom, x)
        bound_bad += not (0 <= lhs <= rhs * (1 + 1e-10))
        bound_bad += hitting_probability(A, dom, x) != lhs
        y = random_points(rng, dom, 1)[0]
        lhs, rhs = hitting_bound_sides({y}, dom, x)
        eq_gap = max(eq_gap, abs(lhs - rhs))
    prof = decay_profile(8, 3, 16)
    target, tol = ACCEPTANCE["green_slope"]
    ok = worst_res <= ACCEPTANCE["green_residual"] and mc_out == 0 and bound_bad == 0 \
        and eq_gap <= 1e-10 and abs(prof.near_slope - target) <= tol
    verdict(11, "killed Green function checks", ok, residual=worst_res, mc_outside=mc_out,
            mc_max_z=round(max(mc_z), 3), bound_failures=bound_bad, singleton_gap=eq_gap,
            near_slope=round(prof.near_slope, 4))


def test_c12_exponent_algebra(verdict):
    res = {d: band_identity_check(d) for d in (3, 4, 5)}
    viol = {d: f_le_fstar_violations(d) for d in (3, 4, 5)}
    alphas = np.arange(1, 100) / 100.0
    gap = max(abs(zeta(a, 3) - zeta_grid(a, 3)) for a in alphas)
    ok = max(res.values()) <= ACCEPTANCE["identity_tol"] and sum(viol.values()) == 0 \
        and gap <= ACCEPTANCE["zeta_gap"]
    verdict(12, "exponent identities", ok, identity_residual=res, f_above_fstar=viol,
            zeta_gap=gap)


def test_c13_reproducible_csv(verdict, tmp_path, monkeypatch):
    argv = ["simulate", "--d", "2", "--n", "3", "--n", "4", "--n", "5", "--alpha", "1.5",
            "--replicas", "20", "--seed", "13"]
    monkeypatch.setenv("CYLDISC_WORKERS", "1")
    cli.main(argv + ["--out", str(tmp_path / "a")])
    monkeypatch.setenv("CYLDISC_WORKERS", "2")
    cli.main(argv + ["--out", str(tmp_path / "b")])
    a = (tmp_path / "a" / "runs.csv").read_bytes()
    b = (tmp_path / "b" / "runs.csv").read_bytes()
    verdict(13, "simulate rerun gives byte-identical CSV", a == b and len(a) > 0,
            bytes=len(a), rows=a.count(b"\n") - 1)
