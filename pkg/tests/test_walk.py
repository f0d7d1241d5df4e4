import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import chi2, ks_2samp

from cyldisc.lattice import CylinderGeom, Slab
from cyldisc.walk import (INF, DriftParams, decode_moves, drift_from_alpha, replica_rng,
                          run_excursions, sample_S_decomposition, simulate_embedding,
                          simulate_walk, step, visit_chain, walk_from_uniforms)


def test_drift_from_alpha_examples():
    assert drift_from_alpha(10, 3, 1.0).delta == pytest.approx(1e-3, rel=1e-15)
    assert drift_from_alpha(8, 3, 1 / 3).delta == pytest.approx(0.125, rel=1e-15)
    vals = [drift_from_alpha(6, 2, a).delta for a in (0.1, 0.5, 1, 2, 4)]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    with pytest.raises(ValueError):
        drift_from_alpha(6, 2, 0.0)
    with pytest.raises(ValueError):
        DriftParams(1.0)


def test_step_probabilities_chi_square():
    d, delta = 3, 0.3
    u = np.random.default_rng(11).random(10 ** 6)
    codes = decode_moves(u, d, delta)
    counts = np.bincount(codes, minlength=2 * d + 2)
    p = np.full(2 * d + 2, 1 / 8)
    p[6], p[7] = 1.3 / 8, 0.7 / 8
    assert p[6] == pytest.approx(0.1625)
    stat = float(((counts - 1e6 * p) ** 2 / (1e6 * p)).sum())
    assert stat < chi2.ppf(0.99, 2 * d + 1)


def test_step_single_move():
    g = CylinderGeom(2, 4)
    rng = np.random.default_rng(0)
    x = (0, 0, 0)
    for _ in range(200):
        y = step(x, 0.2, rng, g)
        assert g.adjacent(x, y)
        x = y


@given(st.integers(1, 3), st.integers(2, 6), st.floats(0, 0.95), st.integers(0, 2 ** 31))
@settings(max_examples=40, deadline=None)
def test_paths_are_nearest_neighbour(d, N, delta, seed):
    g = CylinderGeom(d, N)
    tr = simulate_walk(g, delta, 300, np.random.default_rng(seed))
    dz = np.diff(tr.steps[:, -1])
    assert set(np.unique(dz)) <= {-1, 0, 1}
    for a, b in zip(tr.steps[:-1], tr.steps[1:]):
        assert g.l1(tuple(a), tuple(b)) == 1 or N == 2
    assert tr.visited == frozenset(map(tuple, tr.steps.tolist()))
    lo, hi = tr.z_extent
    assert lo == tr.steps[:, -1].min() and hi == tr.steps[:, -1].max()


def test_same_uniforms_same_path():
    g = CylinderGeom(2, 5)
    u = replica_rng(3, 7).random(500)
    a = walk_from_uniforms(g, 0.1, u)
    b = simulate_walk(g, 0.1, 500, replica_rng(3, 7))
    assert np.array_equal(a.steps, b.steps)


def test_vertical_martingale_mean():
    d, delta, n, R = 2, 0.2, 200, 10 ** 4
    u = np.random.default_rng(5).random((R, n))
    codes = decode_moves(u, d, delta)
    z = np.count_nonzero(codes == 2 * d, axis=1) - np.count_nonzero(codes == 2 * d + 1, axis=1)
    m = z - n * delta / (d + 1)
    assert abs(m.mean()) <= 3 * m.std() / math.sqrt(R)
    lateral = np.count_nonzero(codes < 2 * d) / codes.size
    assert abs(lateral - 2 * d / (2 * d + 2)) < 5e-3


def test_excursions_start_inside():
    g = CylinderGeom(1, 3)
    tr, sch = run_excursions(g, 0.0, Slab(g, 1), Slab(g, 2), 3, (0, 0), np.random.default_rng(1))
    assert sch.returns[0] == 0
    assert len(sch.departures) == 3
    sch.check()
    for r, dd in zip(sch.returns, sch.departures):
        assert abs(tr.steps[dd, -1]) == 3
        assert abs(tr.steps[r, -1]) <= 1


def test_excursion_budget_marker():
    g = CylinderGeom(1, 3)
    tr, sch = run_excursions(g, 0.0, Slab(g, 1), Slab(g, 10 ** 6), 1, (0, 0),
                             np.random.default_rng(2), budget=100)
    assert sch.exhausted and tr.length == 100


def test_exit_time_law_matches_absorption():
    # z on [-2, 2] moves with probability 1/2 per step (d = 1); exit when |z| = 3
    Q = np.zeros((5, 5))
    for i in range(5):
        Q[i, i] = 0.5
        if i > 0:
            Q[i, i - 1] = 0.25
        if i < 4:
            Q[i, i + 1] = 0.25
    out = np.zeros(5)
    out[0] = out[4] = 0.25
    e = np.zeros(5)
    e[2] = 1.0
    law = []
    v = e
    for t in range(1, 200):
        law.append(float(v @ out))
        v = v @ Q
    law = np.array(law)
    g = CylinderGeom(1, 3)
    rng = np.random.default_rng(9)
    times = []
    for _ in range(4000):
        _, sch = run_excursions(g, 0.0, Slab(g, 1), Slab(g, 2), 1, (0, 0), rng)
        times.append(sch.departures[0] - sch.returns[0])
    times = np.array(times)
    mean_exact = float(np.sum(np.arange(1, 200) * law))
    assert abs(times.mean() - mean_exact) < 3 * times.std() / math.sqrt(len(times))
    # binned goodness of fit
    edges = [1, 4, 6, 8, 11, 15, 20, 30, 200]
    obs = np.histogram(times, bins=edges)[0]
    exp = np.array([law[a - 1:b - 1].sum() for a, b in zip(edges, edges[1:])]) * len(times)
    stat = float(((obs - exp) ** 2 / exp).sum())
    assert stat < chi2.ppf(0.999, len(obs) - 1)


def test_embedding_rates():
    d, T = 2, 2 * 10 ** 4
    g = CylinderGeom(d, 4)
    emb, sk = simulate_embedding(g, 0.0, T, (0, 0, 0), np.random.default_rng(4))
    ny, nz = len(emb.y_times), len(emb.z_times)
    assert abs(ny / T - 1) < 3 * math.sqrt(T) / T
    assert abs(nz / T - 1 / d) < 3 * math.sqrt(T / d) / T
    assert abs((ny + nz) / T - (d + 1) / d) < 3 * math.sqrt(T * (d + 1) / d) / T
    assert sk.length == ny + nz
    ups = np.count_nonzero(emb.z_steps > 0)
    assert abs(ups - nz / 2) < 3 * math.sqrt(nz) / 2


def test_skeleton_occupation_matches_direct_walk():
    g = CylinderGeom(1, 3)
    n = 40
    rng = np.random.default_rng(21)
    a, b = np.zeros((3, 7)), np.zeros((3, 7))
    for _ in range(3000):
        emb, sk = simulate_embedding(g, 0.0, 60.0, (0, 0), rng)
        if sk.length >= n:
            x = sk.steps[n]
            if abs(x[1]) <= 3:
                a[x[0], x[1] + 3] += 1
        y = simulate_walk(g, 0.0, n, rng).steps[n]
        if abs(y[1]) <= 3:
            b[y[0], y[1] + 3] += 1
    a, b = a.ravel(), b.ravel()
    keep = (a + b) > 0
    a, b = a[keep], b[keep]
    ka, kb = a.sum(), b.sum()
    tot = a + b
    exp_a = tot * ka / (ka + kb)
    exp_b = tot * kb / (ka + kb)
    stat = float(np.sum((a - exp_a) ** 2 / exp_a + (b - exp_b) ** 2 / exp_b))
    assert stat < chi2.ppf(0.999, len(a) - 1)


def test_visit_chain_basics():
    g = CylinderGeom(1, 3)
    emb, _ = simulate_embedding(g, 0.0, 2000.0, (2, 0), np.random.default_rng(3))
    vc = visit_chain(emb, 5)
    assert vc.values[0] == (2,)
    assert vc.stop_times[0] == 0.0
    fin = [t for t in vc.stop_times if t != INF]
    assert all(a < b for a, b in zip(fin, fin[1:]))
    assert len(vc.values) == len(fin)
    with pytest.raises(ValueError):
        emb2, _ = simulate_embedding(g, 0.0, 10.0, (0, 1), np.random.default_rng(3))
        visit_chain(emb2, 1)


def test_decomposition_trivial_cases():
    rng = np.random.default_rng(0)
    assert sample_S_decomposition(0.0, 0, rng) == 0.0
    fin = np.mean([sample_S_decomposition(0.95, 1, rng, horizon=200) < INF for _ in range(400)])
    fin0 = np.mean([sample_S_decomposition(0.0, 1, rng, horizon=200) < INF for _ in range(400)])
    assert fin < fin0


def test_visit_chain_law_matches_decomposition_n3():
    g = CylinderGeom(1, 3)
    rng = np.random.default_rng(17)
    H = 400.0
    a, b = [], []
    for _ in range(2000):
        emb, _ = simulate_embedding(g, 0.0, H, (0, 0), rng)
        vc = visit_chain(emb, 3)
        a.append(vc.stop_times[3] if len(vc.stop_times) > 3 else INF)
        b.append(sample_S_decomposition(0.0, 3, rng, horizon=H))
    a = np.minimum(np.array(a), H + 1)
    b = np.minimum(np.array(b), H + 1)
    assert ks_2samp(a, b).statistic < 0.06
