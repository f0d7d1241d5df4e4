import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cyldisc.green import (KilledDomain, decay_profile, green_exact, green_mc,
                           hitting_bound_sides, hitting_probability, slab_green_fourier)
from cyldisc.lattice import CylinderGeom
from instances import random_domain, random_points


def test_outside_and_singleton():
    g = CylinderGeom(2, 4)
    dom = KilledDomain(g, {(0, 0, 0)}, 0)
    assert green_exact(dom, (0, 0, 0), (1, 0, 0)) == 0.0
    assert green_exact(dom, (0, 0, 0), (0, 0, 0)) == pytest.approx(1.0, abs=1e-15)
    assert green_mc(dom, (0, 0, 0), (1, 0, 0), 100, np.random.default_rng(0)) == (0.0, 0.0)
    with pytest.raises(ValueError):
        KilledDomain(g, {(0, 0, 5)}, 2)


@given(st.integers(0, 2 ** 31))
@settings(max_examples=25, deadline=None)
def test_symmetry_and_linear_relation(seed):
    rng = np.random.default_rng(seed)
    dom = random_domain(rng, d=2, N=4, a=2)
    x, y = random_points(rng, dom, 2)
    assert green_exact(dom, x, y) == pytest.approx(green_exact(dom, y, x), rel=1e-10, abs=1e-14)
    assert dom.residual(y) <= 1e-10
    assert green_exact(dom, x, x) >= 1.0


def test_fourier_matches_sparse():
    g = CylinderGeom(2, 6)
    dom = KilledDomain.slab(g, 3)
    F = slab_green_fourier(g, 3)
    for x in [(0, 0, 0), (1, 2, 1), (3, 3, -3), (5, 0, 2)]:
        assert green_exact(dom, x, (0, 0, 0)) == pytest.approx(F[x[0], x[1], x[2] + 3], abs=1e-12)


def test_monotone_in_domain():
    g = CylinderGeom(2, 5)
    vals = [green_exact(KilledDomain.slab(g, a), (0, 0, 0), (2, 1, 1)) for a in (1, 2, 3, 4)]
    assert all(a <= b + 1e-15 for a, b in zip(vals, vals[1:]))


def test_mc_agrees_and_scales():
    g = CylinderGeom(1, 4)
    dom = KilledDomain.slab(g, 2)
    exact = green_exact(dom, (0, 0), (1, 1))
    ses = []
    for R in (500, 2000, 8000, 32000):
        m, se = green_mc(dom, (0, 0), (1, 1), R, np.random.default_rng(R))
        assert abs(m - exact) <= 3.5 * se
        ses.append(se)
    for a, b in zip(ses, ses[1:]):
        assert 1.6 < a / b < 2.5


def test_hitting_bound_cases():
    rng = np.random.default_rng(12)
    dom = random_domain(rng, d=2, N=5, a=3, keep=1.0)
    A = {(0, 0, 0), (1, 0, 0)}
    lhs, rhs = hitting_bound_sides(A, dom, (0, 0, 0))
    assert lhs == 1.0 and rhs >= 1.0
    y = (2, 2, 1)
    x = (0, 0, -1)
    lhs, rhs = hitting_bound_sides({y}, dom, x)
    ratio = green_exact(dom, x, y) / green_exact(dom, y, y)
    assert lhs == pytest.approx(ratio, abs=1e-10) and rhs == pytest.approx(ratio, abs=1e-12)
    with pytest.raises(ValueError):
        hitting_bound_sides(set(), dom, x)


@given(st.integers(0, 2 ** 31))
@settings(max_examples=20, deadline=None)
def test_hitting_bound_random(seed):
    rng = np.random.default_rng(seed)
    dom = random_domain(rng, d=2, N=4, a=3, keep=0.9)
    A = set(random_points(rng, dom, 3))
    x = random_points(rng, dom, 1)[0]
    lhs, rhs = hitting_bound_sides(A, dom, x)
    assert 0 <= lhs <= rhs * (1 + 1e-10)
    assert hitting_probability(A, dom, x) == lhs


def test_decay_profile_d3():
    prof = decay_profile(8, 3, 16)
    assert abs(prof.near_slope - (1 - 3)) <= 0.3
    assert prof.far_rate > 0 and prof.lower_ratio_min > 0
    assert prof.values[0] >= 1.0


def test_decay_profile_verify_small():
    prof = decay_profile(3, 2, 6, verify=True)
    assert prof.values[0] >= 1.0
