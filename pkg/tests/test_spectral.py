import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cyldisc.spectral import (Spectrum, cover_tail_bound, cover_tail_check, cycle_chain,
                              dense_spectrum, eigentime_maxhit_check, estimate_pV, hitting_times,
                              hitting_times_direct, hypercube_chain, hypercube_translations,
                              markov_chi2, visit_spectrum_residual, torus_cover_time, torus_spectrum,
                              torus_transition_matrix, torus_translations, two_state_flip,
                              u_of_spectrum, u_ratio_table)


def test_small_spectra():
    assert np.allclose(torus_spectrum(2, 1, validate=True).eigenvalues, [1, -1])
    assert np.allclose(torus_spectrum(3, 1, validate=True).eigenvalues, [1, -0.5, -0.5])
    assert torus_spectrum(5, 2).eigenvalues[0] == 1.0
    with pytest.raises(ValueError):
        torus_spectrum(1001, 2)


@given(st.integers(1, 2), st.integers(2, 20))
@settings(max_examples=30, deadline=None)
def test_closed_form_matches_dense(d, N):
    if N ** d > 400:
        return
    dense = dense_spectrum(torus_transition_matrix(N, d)).eigenvalues
    assert np.max(np.abs(dense - torus_spectrum(N, d).eigenvalues)) <= 1e-10


def test_u_values():
    assert u_of_spectrum(Spectrum([1.0, -1.0])) == 0.5
    assert u_of_spectrum(torus_spectrum(3, 1)) == pytest.approx(4 / 3, rel=1e-14)
    with pytest.raises(ValueError):
        u_of_spectrum(Spectrum([1.0, 1.0, 0.0]))


def test_u_ratio_recorded():
    tab = u_ratio_table(range(4, 13), 3)
    ratios = [r["u_over_Nd"] for r in tab.values()]
    # bounded in N: the recorded ratio stays within a factor 2 over the range
    assert min(ratios) > 0 and max(ratios) / min(ratios) < 2.0


def test_cover_tail_bound_values():
    assert cover_tail_bound(4 / 3, 9, 100) == pytest.approx(9 * math.exp(-6), rel=1e-14)
    assert cover_tail_bound(2.0, 9, 10) == 9.0
    vals = [cover_tail_bound(2.0, 9, n) for n in range(0, 400, 7)]
    assert all(a >= b for a, b in zip(vals, vals[1:]))


def test_eigentime_examples():
    an = eigentime_maxhit_check(two_state_flip(), [np.array([0, 1]), np.array([1, 0])])
    assert an.max_hit == pytest.approx(1.0) and an.u == 0.5 and an.holds
    assert an.slack == pytest.approx(0.0, abs=1e-12)
    an3 = eigentime_maxhit_check(torus_transition_matrix(3, 1), torus_translations(3, 1))
    assert an3.max_hit == pytest.approx(2.0) and 2 * an3.u == pytest.approx(8 / 3)
    assert an3.symmetric == "certified" and an3.hit_symmetric
    an5 = eigentime_maxhit_check(torus_transition_matrix(5, 2), torus_translations(5, 2))
    assert an5.holds and not an5.problems


def test_eigentime_other_chains():
    for P in (cycle_chain(7), cycle_chain(6, lazy=0.3), hypercube_chain(4)):
        an = eigentime_maxhit_check(P)
        assert an.holds and an.reversible and an.irreducible
    an = eigentime_maxhit_check(hypercube_chain(3), hypercube_translations(3))
    assert an.symmetric == "certified" and an.holds


def test_eigentime_reports_violations():
    P = np.array([[0.5, 0.5, 0.0], [0.25, 0.5, 0.25], [0.0, 0.5, 0.5]])
    an = eigentime_maxhit_check(P)
    assert an.symmetric == "violated"
    bad_maps = [np.array([0, 1, 2])]
    an2 = eigentime_maxhit_check(cycle_chain(3), bad_maps)
    assert an2.symmetric == "violated"


def test_hitting_time_methods_agree():
    P = torus_transition_matrix(4, 2)
    assert np.allclose(hitting_times(P), hitting_times_direct(P), atol=1e-9)


def test_cover_time_small():
    rng = np.random.default_rng(0)
    assert torus_cover_time(2, 1, rng) == 1
    c = torus_cover_time(3, 2, rng)
    assert c >= 8


def test_cover_tail_small():
    out = cover_tail_check(3, 2, 2000, master_seed=1)
    assert out["holds"] and out["censored"] == 0
    assert len(out["rows"]) == 20


def test_estimate_pV_rows():
    est = estimate_pV(2, 1, 0.0, 4000, np.random.default_rng(3), horizon=300.0)
    assert np.allclose(est.matrix.sum(axis=1), 1.0)
    # symmetric under the torus flip (both rows are shifts of one law)
    assert np.allclose(est.matrix, est.matrix.T)
    with pytest.raises(ValueError):
        estimate_pV(3, 1, 0.999, 200, np.random.default_rng(0), horizon=5.0)


def test_visit_spectrum_small():
    rep = visit_spectrum_residual(3, 1, 0.0, 20000, np.random.default_rng(8), horizon=300.0)
    assert rep.m1_residual == 0.0
    assert rep.within.all() and rep.bound_ok.all()
    lam = rep.lam_Y
    for j in np.flatnonzero((lam > 0) & (lam < 1)):
        assert rep.target[j] <= lam[j] + 1e-15


def test_markov_property_of_visit_chain():
    out = markov_chi2(3, 1, 0.0, 3000, np.random.default_rng(4), horizon=300.0)
    assert out["p_value"] > 1e-3
