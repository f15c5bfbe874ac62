import math

import numpy as np
import pytest
from scipy.stats import binom

from mgw.decomposition import (
    DecompositionTables,
    LagrangeEngine,
    LatticeError,
    Pmf,
    build_tables,
    conv_power,
    conv_trunc,
    no_mark_probability,
    reduced_law,
    thin,
)
from mgw.laws import MarkedLaw, MarkFunction, OffspringLaw, binary_law, tilt
from oracles import forest_prob_by_enumeration, mark_count_series


@pytest.fixture(scope="module")
def half():
    return build_tables(binary_law(0.6, 0.5), 400)


@pytest.fixture(scope="module")
def full():
    return build_tables(binary_law(0.6, 1.0), 400)


# ------------------------------------------------------------ helpers
def test_conv_helpers():
    a = np.array([0.5, 0.5])
    assert np.allclose(conv_power(a, 3, 5), [1 / 8, 3 / 8, 3 / 8, 1 / 8, 0, 0])
    assert np.allclose(conv_trunc(a, a, 1), [0.25, 0.5])
    assert np.allclose(conv_power(a, 0, 2), [1, 0, 0])


def test_thin_matches_binomial_mixture():
    c = np.array([0.1, 0.2, 0.3, 0.0, 0.4])
    got = thin(c, 0.3, 4)
    want = sum(c[j] * np.pad(binom.pmf(np.arange(j + 1), j, 0.3), (0, 4 - j)) for j in range(5))
    assert np.allclose(got, want, atol=1e-15)
    assert np.allclose(thin(c, 1.0, 4), c)
    assert np.allclose(thin(c, 0.0, 2), [1.0, 0.0, 0.0])


def test_lagrange_engine_catalan():
    # kappa = s (1 + kappa)^2 has [s^n] kappa = Catalan(n)
    G = np.array([1.0, 2.0, 1.0])
    out = LagrangeEngine(G, 10).apply(np.eye(1, 10, 0)[0])
    catalan = [math.comb(2 * n, n) // (n + 1) for n in range(1, 11)]
    assert np.allclose(out[1:11], catalan)


def test_pmf_basics():
    p = Pmf.from_weights([0.25, 0.0, 0.5])
    assert p.tail_mass == pytest.approx(0.25)
    assert p[5 - 10] == 0.0
    with pytest.raises(IndexError):
        p[3]
    assert p.support_gcd() == 2
    assert p.upto == 2


# --------------------------------------------------------- skeleton pieces
def test_no_mark_probability_binary(half):
    expected = (1 - math.sqrt(1 - 4 * 0.2 * 0.3)) / 0.4
    assert half.h0 == pytest.approx(expected, abs=1e-14)
    assert half.h0 == pytest.approx(0.3205505282, abs=1e-10)
    assert no_mark_probability(binary_law(0.6, 1.0)) == 0.0


def test_reduced_law():
    r = reduced_law(binary_law(0.6, 0.5))
    assert r.p0 == pytest.approx(0.8)
    assert r.prob(2) == pytest.approx(0.2)
    assert r.mean == pytest.approx(0.4)


@pytest.mark.parametrize("q", [0.5, 0.2])
def test_means_match_closed_forms(q):
    t = build_tables(binary_law(0.6, q), 1500)
    closed = t.closed_form_means()
    assert t.pmf_L.mean() == pytest.approx(closed["L"], abs=1e-8)
    assert t.pmf_N.mean() == pytest.approx(closed["N"], abs=1e-8)
    assert t.pmf_Z1.mean() == pytest.approx(closed["Z1"], abs=1e-8)
    assert t.pmf_Z0.mean() == pytest.approx(closed["Z0"], abs=1e-8)


def test_means_binary_half(half):
    closed = half.closed_form_means()
    assert closed["L"] == pytest.approx(4 / 3)
    assert closed["N"] == pytest.approx(5 / 6)
    assert closed["Z1"] == pytest.approx(2 / 3)
    assert closed["Z0"] == pytest.approx(2 / 3)


def test_pmfs_are_normalized():
    t = build_tables(binary_law(0.6, 0.5), 1500)
    for pmf in (t.pmf_L, t.pmf_N, t.pmf_Z1, t.pmf_Z0, t.mark_count_pmf):
        assert math.fsum(pmf.weights) + pmf.tail_mass == pytest.approx(1.0, abs=1e-12)
        assert pmf.tail_mass < 1e-12
        assert np.all(pmf.weights >= 0)


def test_N_is_binomial_thinning_of_L(half):
    keep = half.b / (half.a + half.b)
    L = half.pmf_L.weights
    want = thin(L, keep, 60)
    assert np.allclose(half.pmf_N.weights[:61], want, atol=1e-14)


def test_Z0_pmf_formula(half):
    # Z0 = sum of N over the children of an unmarked node
    pu = half.law.arrays(2)[1]
    N = half.pmf_N.weights
    want = (pu[0] * np.eye(1, 41, 0)[0] + pu[2] * conv_trunc(N, N, 40)) / pu.sum()
    assert np.allclose(half.pmf_Z0.weights[:41], want, atol=1e-14)


def test_Z1_pmf_formula(half):
    pm = half.law.arrays(2)[0]
    N = half.pmf_N.weights
    want = (pm[0] * np.eye(1, 41, 0)[0] + pm[2] * conv_trunc(N, N, 40)) / pm.sum()
    assert np.allclose(half.pmf_Z1.weights[:41], want, atol=1e-14)


def test_all_marked_law_is_degenerate(full):
    assert full.pmf_N[1] == pytest.approx(1.0)
    assert full.pmf_Z0.degenerate
    assert full.pmf_X0.degenerate
    assert full.period == 2


# ----------------------------------------------------------- mark counts
def test_mark_count_matches_total_progeny_when_all_marked(full):
    law = binary_law(0.6, 1.0)
    for n in range(1, 12):
        want = forest_prob_by_enumeration(law, 1, n)
        assert full.prob_mark_count(n) == pytest.approx(want, abs=1e-14)
    assert full.prob_mark_count(3) == pytest.approx(0.144)


def test_forest_mark_count_matches_enumeration(full):
    law = binary_law(0.6, 1.0)
    for n in range(1, 10):
        for j in range(1, n + 1):
            want = forest_prob_by_enumeration(law, j, n)
            assert full.prob_mark_count_forest(j, n) == pytest.approx(want, abs=1e-14)


@pytest.mark.parametrize(
    "law",
    [
        binary_law(0.6, 0.5),
        binary_law(0.5, 0.5),
        MarkedLaw(OffspringLaw.finite([0.5, 0.2, 0.2, 0.1]), MarkFunction((0.1, 0.5, 0.3, 0.8), 0.8)),
    ],
)
def test_mark_count_matches_series_oracle(law):
    t = build_tables(law, 200)
    series = mark_count_series(law, 40)
    for n in range(41):
        assert t.prob_mark_count(n) == pytest.approx(series[n], rel=1e-10, abs=1e-15)
    assert np.allclose(t.mark_count_pmf.weights[:41], series, rtol=1e-10, atol=1e-15)


def test_tilting_rescales_mark_count_probabilities(half):
    law = half.law
    for theta in (1.05, 1.2, 0.9):
        tl = tilt(law, theta)
        tt = build_tables(tl, 200)
        c = tl.c
        for n in (1, 2, 5, 20, 100):
            assert tt.prob_mark_count(n) == pytest.approx(c**n / theta * half.prob_mark_count(n), rel=1e-10)


def test_dwass_identity_small(half, full):
    for tables in (half, full):
        for n in range(1, 9):
            for j in range(1, n + 1):
                lhs, rhs = tables.dwass_check(j, n)
                assert lhs == pytest.approx(rhs, abs=1e-12)
    with pytest.raises(ValueError):
        half.dwass_check(3, 2)


def test_forest_probability_relation(half):
    # P_j(M = n) also equals the j-fold convolution of the one-tree law
    one = half.mark_count_pmf.weights
    for j in (2, 3):
        conv = conv_power(one, j, 60)
        for n in (1, 7, 30, 60):
            assert half.prob_mark_count_forest(j, n) == pytest.approx(conv[n], rel=1e-10)


def test_lattice_errors(full):
    assert full.prob_mark_count(4) == 0.0
    with pytest.raises(LatticeError):
        full.require_lattice(4)
    assert full.require_lattice(5) > 0


def test_range_checks(half):
    with pytest.raises(ValueError):
        half.prob_mark_count(401)
    with pytest.raises(ValueError):
        half.prob_mark_count_forest(0, 3)
    with pytest.raises(ValueError):
        half.walk_pmf(-1)
    assert half.prob_mark_count_forest(3, 0) == pytest.approx(half.h0**3)


def test_power_law_tables_are_consistent():
    law = MarkedLaw(OffspringLaw.power_law(3, 0.5), MarkFunction.constant(0.3))
    t = DecompositionTables(law, 600)
    series = t.mark_count_pmf.weights
    for n in (1, 10, 100, 600):
        assert t.prob_mark_count(n) == pytest.approx(series[n], rel=1e-9)
    closed = t.closed_form_means()
    assert t.pmf_Z1.mean() == pytest.approx(closed["Z1"], rel=1e-3)
    assert t.period == 1
