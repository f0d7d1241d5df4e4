import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cyldisc.girsanov import (displacement_factor, drift_comparison_bounds, endpoint_event,
                              endpoint_law_dp, enumerate_codes, ext_pow, importance_estimate,
                              max_identity_residual, path_weight, reweighted_probability)
from cyldisc.lattice import CylinderGeom
from cyldisc.walk import simulate_walk


def test_path_weight_examples():
    flat = np.array([[0, 0], [1, 0], [2, 0]])
    assert path_weight(flat, 0.4).value == 1.0
    up = np.array([[0, 0], [0, 1]])
    assert path_weight(up, 0.3).value == pytest.approx(1.3, rel=1e-15)
    k = 5
    zs = list(range(k + 1)) + list(range(k - 1, -1, -1))
    zig = np.array([[0, z] for z in zs])
    assert path_weight(zig, 0.3).value == pytest.approx((1 - 0.09) ** k, rel=1e-13)
    with pytest.raises(ValueError):
        path_weight(np.array([[0, 0], [0, 2]]), 0.3)


@given(st.integers(1, 3), st.floats(0, 0.95), st.integers(0, 2 ** 31))
@settings(max_examples=40, deadline=None)
def test_log_weight_decomposition(d, delta, seed):
    tr = simulate_walk(CylinderGeom(d, 5), delta, 150, np.random.default_rng(seed))
    w = path_weight(tr, delta)
    dz = np.diff(tr.steps[:, -1])
    assert w.up_steps == np.sum(dz == 1) and w.down_steps == np.sum(dz == -1)
    assert w.up_steps - w.down_steps == tr.steps[-1, -1] - tr.steps[0, -1]
    ref = w.up_steps * math.log(1 + delta) + w.down_steps * math.log(1 - delta)
    assert w.log_value == pytest.approx(ref, abs=1e-12)
    assert w.value > 0


def test_total_mass_and_zero_drift():
    for delta in (0.0, 0.3, 0.9):
        pd, e0 = reweighted_probability(lambda p: np.ones(len(p), bool), delta, 3, 1, 5)
        assert pd == pytest.approx(1.0, abs=1e-14) and e0 == pytest.approx(1.0, abs=1e-14)
    ev = endpoint_event(3, (1, 1))
    pd, e0 = reweighted_probability(ev, 0.0, 3, 1, 3)
    assert pd == e0


def test_height_event_identity():
    ev = lambda p: p[:, 4, -1] == 2
    pd, e0 = reweighted_probability(ev, 0.3, 3, 1, 4)
    assert abs(pd - e0) <= 1e-12 * pd
    law = endpoint_law_dp(3, 1, 4, 0.3)
    assert pd == pytest.approx(sum(v for k, v in law.items() if k[-1] == 2), abs=1e-14)


def test_identity_all_endpoint_events_small():
    assert max_identity_residual(3, 1, 4, [0.1, 0.5, 0.9]) <= 1e-12


def test_endpoint_law_sums_to_one():
    law = endpoint_law_dp(3, 2, 3, 0.4)
    assert math.fsum(law.values()) == pytest.approx(1.0, abs=1e-14)


def test_enumeration_cap():
    with pytest.raises(ValueError, match="Monte Carlo"):
        enumerate_codes(3, 9)


def test_extended_powers():
    assert ext_pow(0.5, math.inf) == 0.0
    assert ext_pow(1.5, math.inf) == math.inf
    assert displacement_factor(0, 0.4) == 1.0
    assert displacement_factor(-2, 0.5) == pytest.approx(0.25)
    assert displacement_factor(math.inf, 0.2) == math.inf


def _exit_time(a):
    def T(paths):
        hit = np.abs(paths[:, :, -1]) >= a
        first = np.argmax(hit, axis=1)
        return np.where(hit.any(axis=1), first, -1)
    return T


def test_comparison_exact_both_sides():
    g = CylinderGeom(1, 3)
    T = _exit_time(2)
    ev = lambda p, t: (t >= 0) & (p[np.arange(len(p)), np.maximum(t, 0), -1] == 2)
    rep = drift_comparison_bounds(ev, T, 2, 2, 0.3, g, n_max=8)
    assert rep.mode == "exact"
    assert rep.lower_holds and rep.upper_holds
    assert rep.lower <= rep.p_delta <= rep.upper


def test_comparison_zero_displacement_and_vacuous():
    g = CylinderGeom(1, 3)
    zero = lambda p: np.full(len(p), p.shape[1] - 1)
    ev = lambda p, t: p[:, -1, -1] == 0
    rep = drift_comparison_bounds(ev, zero, 0, 0, 0.4, g, n_max=6)
    assert rep.p_delta <= rep.upper + 1e-15 and rep.upper_holds
    ev2 = lambda p, t: p[:, -1, -1] >= 0
    rep2 = drift_comparison_bounds(ev2, zero, 0, math.inf, 0.4, g, n_max=6)
    assert rep2.upper_vacuous and math.isinf(rep2.upper)


def test_comparison_misuse_raises():
    g = CylinderGeom(1, 3)
    zero = lambda p: np.full(len(p), p.shape[1] - 1)
    ev = lambda p, t: np.ones(len(p), bool)
    with pytest.raises(ValueError):
        drift_comparison_bounds(ev, zero, 0, 0, 0.4, g, n_max=4)


def test_comparison_monte_carlo():
    g = CylinderGeom(1, 3)
    T = _exit_time(3)
    ev = lambda p, t: (t >= 0) & (p[np.arange(len(p)), np.maximum(t, 0), -1] == 3)
    rep = drift_comparison_bounds(ev, T, 3, 3, 0.2, g, n_max=40, samples=20000,
                                  rng=np.random.default_rng(1))
    assert rep.mode == "monte-carlo" and rep.lower_holds and rep.upper_holds


def test_importance_estimate_unbiased():
    g = CylinderGeom(1, 3)
    ev = lambda p: p[:, 6, -1] >= 2
    pd, _ = reweighted_probability(ev, 0.5, 3, 1, 6)
    m, se = importance_estimate(ev, 0.5, g, 6, 40000, np.random.default_rng(2))
    assert abs(m - pd) <= 3 * se
